//! The class-geometry objective
//! `J = Σ_i [ Σ_v ‖Θ_iᵀX_v‖* − ‖Θ_iᵀX‖* ]`, the pairwise weight-orthogonality
//! penalty, and numerical checks of the nuclear-norm concatenation facts the
//! objective relies on: `‖[M,N]‖* ≤ ‖M‖* + ‖N‖*`, with equality when M and N
//! are column-wise orthogonal, so J is never negative and vanishes once the
//! mapped classes are mutually orthogonal.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Activation, BaseLinearNetwork, CompositeModel};
use crate::numerics::{nuclear_norm, subgradient_from, svd, Matrix};

/// Tolerances for the certification checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryTolerances {
    /// Largest J accepted as a global minimum.
    pub objective: f64,
    /// Largest `Σ‖parts‖* − ‖whole‖*` accepted as equality.
    pub gap: f64,
    /// Largest cross-product entry accepted as column orthogonality.
    pub orthogonality: f64,
    /// Slack for the subadditivity inequality.
    pub subadditivity: f64,
}

impl Default for GeometryTolerances {
    fn default() -> Self {
        Self {
            objective: 1e-6,
            gap: 1e-8,
            orthogonality: 1e-9,
            subadditivity: 1e-9,
        }
    }
}

impl GeometryTolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("objective", self.objective),
            ("gap", self.gap),
            ("orthogonality", self.orthogonality),
            ("subadditivity", self.subadditivity),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} tolerance must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

// Singular values below this fraction of the largest are treated as zero when
// forming subgradients.
const SUBGRADIENT_REL_TOL: f64 = 1e-10;

/// Per-class column blocks `X_v` (d×N_v) and the full `X` (d×N).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBlocks {
    pub classes: Vec<usize>,
    pub blocks: Vec<Matrix>,
    pub all: Matrix,
}

impl ClassBlocks {
    /// Blocks for every class present in `ds`, ascending by class id.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let classes = ds.present_classes();
        let blocks = classes
            .iter()
            .map(|&c| ds.class_submatrix(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes,
            blocks,
            all: ds.column_matrix(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub classes: Vec<usize>,
    /// `[i][j]` = ‖Θ_iᵀ X_{classes[j]}‖*.
    pub per_network_per_class_nuclear: Vec<Vec<f64>>,
    pub per_network_full_nuclear: Vec<f64>,
    pub objective: f64,
    pub pairwise_weight_inner: Matrix,
    pub weight_norms: Vec<f64>,
    pub orthogonality_penalty: f64,
}

impl GeometryReport {
    /// `network,class,nuclear` rows (class `all` for the full matrix) followed
    /// by `summary,<name>,<value>` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("network,class,nuclear\n");
        for (i, row) in self.per_network_per_class_nuclear.iter().enumerate() {
            for (c, v) in self.classes.iter().zip(row) {
                let _ = writeln!(out, "{i},{c},{v}");
            }
            let _ = writeln!(out, "{i},all,{}", self.per_network_full_nuclear[i]);
        }
        let max_dev = self
            .weight_norms
            .iter()
            .map(|n| (n - 1.0).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(out, "summary,objective,{}", self.objective);
        let _ = writeln!(out, "summary,orthogonality_penalty,{}", self.orthogonality_penalty);
        let _ = writeln!(out, "summary,max_weight_norm_deviation,{max_dev}");
        out
    }
}

/// Builds the full report for `m` on the classes present in `ds`.
pub fn geometry_objective(m: &CompositeModel, ds: &Dataset) -> Result<GeometryReport> {
    let blocks = ClassBlocks::from_dataset(ds)?;
    let k = m.k();
    let mut per_class = Vec::with_capacity(k);
    let mut full = Vec::with_capacity(k);
    let mut objective = 0.0;
    for net in m.networks() {
        let w = &net.weight;
        let row = blocks
            .blocks
            .iter()
            .map(|x| nuclear_norm(&w.t_matmul(x)?))
            .collect::<Result<Vec<_>>>()?;
        let whole = nuclear_norm(&w.t_matmul(&blocks.all)?)?;
        objective += row.iter().sum::<f64>() - whole;
        per_class.push(row);
        full.push(whole);
    }
    let mut inner = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = m.networks()[i].weight.frobenius_inner(&m.networks()[j].weight)?;
            inner.set(i, j, v);
            inner.set(j, i, v);
        }
    }
    Ok(GeometryReport {
        classes: blocks.classes,
        per_network_per_class_nuclear: per_class,
        per_network_full_nuclear: full,
        objective,
        weight_norms: m.networks().iter().map(|n| n.weight.frobenius_norm()).collect(),
        orthogonality_penalty: orthogonality_penalty(m),
        pairwise_weight_inner: inner,
    })
}

fn nuclear_and_subgradient(a: &Matrix) -> Result<(f64, Matrix)> {
    let dec = svd(a)?;
    let top = dec.singular_values.first().copied().unwrap_or(0.0);
    let tol = (SUBGRADIENT_REL_TOL * top).max(f64::MIN_POSITIVE);
    Ok((dec.singular_values.iter().sum(), subgradient_from(&dec, tol)))
}

/// J for a list of weights together with a subgradient with respect to each
/// weight: `Σ_v X_v G_vᵀ − X G_allᵀ`, where `G` is the nuclear-norm
/// subgradient at the mapped block.
pub fn geometry_gradient(weights: &[&Matrix], blocks: &ClassBlocks) -> Result<(f64, Vec<Matrix>)> {
    let mut objective = 0.0;
    let mut grads = Vec::with_capacity(weights.len());
    for w in weights {
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for x in &blocks.blocks {
            let (n, sub) = nuclear_and_subgradient(&w.t_matmul(x)?)?;
            objective += n;
            g.add_scaled(1.0, &x.matmul(&sub.transpose())?)?;
        }
        let (n, sub) = nuclear_and_subgradient(&w.t_matmul(&blocks.all)?)?;
        objective -= n;
        g.add_scaled(-1.0, &blocks.all.matmul(&sub.transpose())?)?;
        grads.push(g);
    }
    Ok((objective, grads))
}

/// `Σ_{i<j} ⟨Θ_i, Θ_j⟩²` with the Frobenius inner product.
pub fn orthogonality_penalty(m: &CompositeModel) -> f64 {
    let weights: Vec<&Matrix> = m.networks().iter().map(|n| &n.weight).collect();
    orthogonality_penalty_of(&weights).0
}

/// Penalty and its gradient `2 Σ_{j≠i} ⟨Θ_i,Θ_j⟩ Θ_j` for each weight.
pub fn orthogonality_penalty_of(weights: &[&Matrix]) -> (f64, Vec<Matrix>) {
    let k = weights.len();
    let mut grads: Vec<Matrix> = weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
    let mut penalty = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let ip: f64 = weights[i]
                .as_slice()
                .iter()
                .zip(weights[j].as_slice())
                .map(|(a, b)| a * b)
                .sum();
            if ip == 0.0 {
                continue;
            }
            penalty += ip * ip;
            grads[i].add_scaled(2.0 * ip, weights[j]).expect("weights share a shape");
            grads[j].add_scaled(2.0 * ip, weights[i]).expect("weights share a shape");
        }
    }
    (penalty, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcatCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `‖[M,N]‖*` with `‖M‖* + ‖N‖*`.
pub fn check_concat_subadditivity(m: &Matrix, n: &Matrix) -> Result<ConcatCheck> {
    let lhs = nuclear_norm(&Matrix::hconcat(&[m, n])?)?;
    let rhs = nuclear_norm(m)? + nuclear_norm(n)?;
    Ok(ConcatCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + GeometryTolerances::default().subadditivity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualityCheck {
    /// `Σ‖part‖* − ‖concatenation‖*`.
    pub gap: f64,
    pub column_orthogonal: bool,
    /// Largest |entry| over all cross products `B_iᵀB_j`, i ≠ j.
    pub max_cross: f64,
}

impl EqualityCheck {
    /// Orthogonal parts must concatenate without loss.
    pub fn consistent(&self, gap_tol: f64) -> bool {
        !self.column_orthogonal || self.gap.abs() <= gap_tol
    }
}

pub fn check_orthogonal_equality(m: &Matrix, n: &Matrix) -> Result<EqualityCheck> {
    check_multi_block_equality(&[m, n])
}

/// Equality check for any number of blocks with equal row counts.
pub fn check_multi_block_equality(blocks: &[&Matrix]) -> Result<EqualityCheck> {
    if blocks.len() < 2 {
        return Err(Error::InvalidInput("need at least two blocks".into()));
    }
    let whole = nuclear_norm(&Matrix::hconcat(blocks)?)?;
    let mut parts = 0.0;
    for b in blocks {
        parts += nuclear_norm(b)?;
    }
    let mut max_cross = 0.0_f64;
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            max_cross = max_cross.max(blocks[i].t_matmul(blocks[j])?.max_abs());
        }
    }
    Ok(EqualityCheck {
        gap: parts - whole,
        column_orthogonal: max_cross <= GeometryTolerances::default().orthogonality,
        max_cross,
    })
}

/// Orthonormal basis (as columns) of the orthogonal complement of the column
/// space of `m`, or `None` when the columns already span the whole space.
pub fn column_space_complement(m: &Matrix) -> Result<Option<Matrix>> {
    let rows = m.rows();
    let dec = svd(m)?;
    let top = dec.singular_values.first().copied().unwrap_or(0.0);
    let rank = dec
        .singular_values
        .iter()
        .filter(|s| **s > crate::numerics::DEFAULT_RANK_TOL * top)
        .count();
    if rank >= rows {
        return Ok(None);
    }
    let mut basis: Vec<Vec<f64>> = (0..rank).map(|k| dec.left_vectors.column(k)).collect();
    let mut complement = Vec::new();
    for e in 0..rows {
        let mut v = vec![0.0; rows];
        v[e] = 1.0;
        // two rounds of Gram-Schmidt for stability
        for _ in 0..2 {
            for b in &basis {
                let p = crate::numerics::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= p * bi);
            }
        }
        let n = crate::numerics::norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v.clone());
            complement.push(v);
            if complement.len() == rows - rank {
                break;
            }
        }
    }
    Ok(Some(Matrix::from_fn(rows, complement.len(), |r, c| complement[c][r])))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certification {
    /// Mapped classes are column-orthogonal and J is at its floor.
    Certified,
    /// The orthogonality premise fails (or fewer than two classes), so the
    /// global-minimum statement says nothing.
    NotApplicable(String),
    /// Premise holds yet J is above tolerance: a genuine contradiction.
    Violated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMinimumCheck {
    pub objective: f64,
    /// Largest |entry| of `(Θ_iᵀX_v)ᵀ(Θ_iᵀX_w)` over networks and class pairs.
    pub max_cross_product: f64,
    pub status: Certification,
}

impl GlobalMinimumCheck {
    pub fn certified(&self) -> bool {
        self.status == Certification::Certified
    }
}

pub fn verify_global_minimum(ds: &Dataset, m: &CompositeModel) -> Result<GlobalMinimumCheck> {
    verify_global_minimum_with(ds, m, &GeometryTolerances::default())
}

pub fn verify_global_minimum_with(
    ds: &Dataset,
    m: &CompositeModel,
    tol: &GeometryTolerances,
) -> Result<GlobalMinimumCheck> {
    tol.validate()?;
    let report = geometry_objective(m, ds)?;
    let blocks = ClassBlocks::from_dataset(ds)?;
    if blocks.classes.len() < 2 {
        return Ok(GlobalMinimumCheck {
            objective: report.objective,
            max_cross_product: 0.0,
            status: Certification::NotApplicable("fewer than two classes".into()),
        });
    }
    let mut max_cross = 0.0_f64;
    for net in m.networks() {
        let mapped = blocks
            .blocks
            .iter()
            .map(|x| net.weight.t_matmul(x))
            .collect::<Result<Vec<_>>>()?;
        for v in 0..mapped.len() {
            for w in v + 1..mapped.len() {
                max_cross = max_cross.max(mapped[v].t_matmul(&mapped[w])?.max_abs());
            }
        }
    }
    let status = if max_cross > tol.orthogonality {
        Certification::NotApplicable(format!(
            "mapped classes are not column-orthogonal (max cross product {max_cross:e})"
        ))
    } else if report.objective <= tol.objective {
        Certification::Certified
    } else {
        Certification::Violated
    };
    Ok(GlobalMinimumCheck {
        objective: report.objective,
        max_cross_product: max_cross,
        status,
    })
}

/// A model whose networks project onto unions of whole class subspaces:
/// class j (in ascending order of the classes present) goes to network
/// `j mod k`, which stacks that class's left singular vectors as columns.
/// Networks with no class keep zero weights.
pub fn subspace_aligned_model(ds: &Dataset, k: usize, s: usize) -> Result<CompositeModel> {
    if k == 0 || s == 0 {
        return Err(Error::InvalidInput("k and s must be positive".into()));
    }
    let d = ds.dim();
    let mut columns: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for (j, class) in ds.present_classes().into_iter().enumerate() {
        let dec = svd(&ds.class_submatrix(class)?)?;
        let top = dec.singular_values[0];
        for (c, sv) in dec.singular_values.iter().enumerate() {
            if *sv > crate::numerics::DEFAULT_RANK_TOL * top {
                columns[j % k].push(dec.left_vectors.column(c));
            }
        }
    }
    let mut networks = Vec::with_capacity(k);
    for cols in &columns {
        if cols.len() > s {
            return Err(Error::InvalidInput(format!(
                "a network needs {} columns for its classes but s = {s}; raise k",
                cols.len()
            )));
        }
        let weight = Matrix::from_fn(d, s, |r, c| cols.get(c).map_or(0.0, |v| v[r]));
        let mut net = BaseLinearNetwork::new(weight, vec![0.0; s])?;
        net.normalize();
        networks.push(net);
    }
    CompositeModel::new(networks, vec![0.0; s], Activation::Identity, k)
}
