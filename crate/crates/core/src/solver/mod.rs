//! Training. Two paths share the ε-insensitive risk:
//!
//! * [`train_joint`]: full-batch subgradient descent on the data loss plus the
//!   class-geometry objective and the weight-orthogonality penalty, with every
//!   Θ_i projected back to unit Frobenius norm after each step.
//! * [`solve_dual`]: the ε-SVR dual over the lifted features for fixed gates,
//!   one independent problem per semantic dimension, solved by SMO.

mod dual;
mod joint;

pub use dual::{
    dual_objective, dual_predict, solve_dual, solve_dual_dimension, DimensionSolution, DualModel,
    DualSolution,
};
pub use joint::{train_joint, train_joint_traced, training_log_csv, JointOutcome, TrainingLogRow};

use crate::data::{Dataset, SemanticSpace};
use crate::error::{check_dim, Error, Result};
use crate::indicators::IndicatorEncoder;
use crate::model::{IndicatorVector, InputSpace};
use crate::numerics::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Error penalty (box bound of the dual).
    pub c: f64,
    pub epsilon: f64,
    pub lambda_geo: f64,
    pub lambda_orth: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dual_tolerance: f64,
    /// Cap on SMO work per dimension, in units of N pair updates.
    pub dual_max_passes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.1,
            lambda_geo: 0.1,
            lambda_orth: 1.0,
            learning_rate: 1e-2,
            epochs: 300,
            seed: 0,
            dual_tolerance: 1e-6,
            dual_max_passes: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("solver config: {m}")));
        let finite_nonneg = [
            ("epsilon", self.epsilon),
            ("lambda_geo", self.lambda_geo),
            ("lambda_orth", self.lambda_orth),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let positive = [
            ("c", self.c),
            ("learning_rate", self.learning_rate),
            ("dual_tolerance", self.dual_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.dual_max_passes == 0 {
            return bad("dual_max_passes must be at least 1".into());
        }
        Ok(())
    }
}

/// `Σ_dims max(0, |pred − target| − ε)`.
pub fn primal_epsilon_loss(pred: &[f64], target: &[f64], epsilon: f64) -> Result<f64> {
    check_dim("target length", pred.len(), target.len())?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| ((p - t).abs() - epsilon).max(0.0))
        .sum())
}

/// `(1 + x_l·x_j) · Σ_i ξ_i(x_l) ξ_i(x_j)`: the inner product of the two lifts.
pub fn transformation_kernel(
    x_l: &[f64],
    gates_l: &IndicatorVector,
    x_j: &[f64],
    gates_j: &IndicatorVector,
) -> Result<f64> {
    check_dim("kernel input", x_l.len(), x_j.len())?;
    let overlap = gates_l.overlap(gates_j)?;
    if overlap == 0 {
        return Ok(0.0);
    }
    Ok((1.0 + dot(x_l, x_j)) * overlap as f64)
}

/// Features in the space the networks consume.
pub fn model_inputs(enc: &IndicatorEncoder, space: InputSpace, x: &Matrix) -> Result<Matrix> {
    match space {
        InputSpace::Raw => Ok(x.clone()),
        InputSpace::Embedding => enc.embed_rows(x),
    }
}

/// Training samples with regression targets and frozen gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedSamples {
    inputs: Matrix,
    targets: Matrix,
    labels: Vec<usize>,
    gates: Vec<IndicatorVector>,
    class_count: usize,
}

impl GatedSamples {
    pub fn new(
        inputs: Matrix,
        targets: Matrix,
        labels: Vec<usize>,
        gates: Vec<IndicatorVector>,
        class_count: usize,
    ) -> Result<Self> {
        let n = inputs.rows();
        check_dim("target rows", n, targets.rows())?;
        check_dim("label count", n, labels.len())?;
        check_dim("gate count", n, gates.len())?;
        if let Some(first) = gates.first() {
            for g in &gates {
                check_dim("gate vector length", first.len(), g.len())?;
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::ClassOutOfRange {
                class: l,
                class_count,
            });
        }
        Ok(Self {
            inputs,
            targets,
            labels,
            gates,
            class_count,
        })
    }

    /// Targets are the descriptor rows of each label; gates come from the
    /// encoder applied to the raw features.
    pub fn from_dataset(
        ds: &Dataset,
        space: &SemanticSpace,
        enc: &IndicatorEncoder,
        k_active: usize,
        input_space: InputSpace,
    ) -> Result<Self> {
        check_dim("descriptor count", ds.class_count(), space.class_count())?;
        let gates = (0..ds.len())
            .map(|i| enc.compute_indicators(ds.sample(i), k_active))
            .collect::<Result<Vec<_>>>()?;
        let targets = Matrix::from_fn(ds.len(), space.dim(), |r, c| space.descriptor(ds.labels()[r])[c]);
        Self::new(
            model_inputs(enc, input_space, ds.features())?,
            targets,
            ds.labels().to_vec(),
            gates,
            ds.class_count(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn gates(&self) -> &[IndicatorVector] {
        &self.gates
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.inputs.select_rows(indices)?,
            self.targets.select_rows(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.gates[i].clone()).collect(),
            self.class_count,
        )
    }

    /// Inputs and labels as a dataset (for the geometry objective).
    pub fn as_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.inputs.clone(), self.labels.clone(), self.class_count)
    }
}

/// N×N matrix of [`transformation_kernel`] values.
pub fn kernel_matrix(samples: &GatedSamples) -> Result<Matrix> {
    let n = samples.len();
    let mut k = Matrix::zeros(n.max(1), n.max(1));
    for i in 0..n {
        for j in i..n {
            let v = transformation_kernel(
                samples.inputs.row(i),
                &samples.gates[i],
                samples.inputs.row(j),
                &samples.gates[j],
            )?;
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    Ok(k)
}
