//! Synthetic class-subspace data.
//!
//! Class `v` draws samples `B_v · z + σ · g` where `B_v` is a d×r orthonormal
//! basis, `z = m_v + ½·g'` scatters around a class-specific center `m_v` of
//! norm 2, and `g`, `g'` are standard normal. In orthogonal mode the `B_v`
//! are disjoint column blocks of one random orthonormal frame, so classes
//! occupy mutually orthogonal subspaces; otherwise every class shares the
//! first block.

use super::{Dataset, SemanticSpace, ZslSplits};
use crate::error::{Error, Result};
use crate::numerics::{orthonormalize_columns, Matrix};
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub subspace_rank: usize,
    pub semantic_dim: usize,
    pub noise_sigma: f64,
    pub orthogonal: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seen_classes: 8,
            unseen_classes: 4,
            samples_per_class: 20,
            feature_dim: 48,
            subspace_rank: 2,
            semantic_dim: 16,
            noise_sigma: 0.0,
            orthogonal: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn class_count(&self) -> usize {
        self.seen_classes + self.unseen_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation("synth config", None, msg));
        if self.seen_classes == 0 || self.unseen_classes == 0 {
            return bad("need at least one seen and one unseen class".into());
        }
        if self.samples_per_class < 2 {
            return bad("samples_per_class must be at least 2 to fill train and test_seen".into());
        }
        if self.feature_dim == 0 || self.semantic_dim == 0 {
            return bad("feature_dim and semantic_dim must be positive".into());
        }
        if self.subspace_rank == 0 || self.subspace_rank > self.feature_dim {
            return bad(format!(
                "subspace_rank must be in 1..={}, got {}",
                self.feature_dim, self.subspace_rank
            ));
        }
        if self.orthogonal && self.class_count() * self.subspace_rank > self.feature_dim {
            return bad(format!(
                "orthogonal mode needs (seen + unseen) * rank <= feature_dim, got {} * {} > {}",
                self.class_count(),
                self.subspace_rank,
                self.feature_dim
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Training samples per seen class (80%, rounded down); the rest go to test_seen.
    pub fn train_per_class(&self) -> usize {
        self.samples_per_class * 4 / 5
    }
}

/// Generates the splits. Classes `0..seen_classes` are seen, the rest unseen.
/// Deterministic for a given config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<ZslSplits> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let r = cfg.subspace_rank;
    let classes = cfg.class_count();

    let mut frame_rng = CounterRng::new(cfg.seed, "synth/frame");
    let gaussian = Matrix::from_fn(d, d, |_, _| frame_rng.gaussian());
    let frame = orthonormalize_columns(&gaussian)?;
    let basis = |class: usize| -> Vec<usize> {
        let block = if cfg.orthogonal { class } else { 0 };
        (block * r..(block + 1) * r).collect()
    };

    let mut mean_rng = CounterRng::new(cfg.seed, "synth/centers");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let g: Vec<f64> = (0..r).map(|_| mean_rng.gaussian()).collect();
            let n = crate::numerics::norm(&g).max(f64::MIN_POSITIVE);
            g.iter().map(|x| 2.0 * x / n).collect()
        })
        .collect();

    let mut desc_rng = CounterRng::new(cfg.seed, "synth/descriptors");
    let mut desc_rows = Vec::with_capacity(classes);
    for _ in 0..classes {
        let g: Vec<f64> = (0..cfg.semantic_dim).map(|_| desc_rng.gaussian()).collect();
        let n = crate::numerics::norm(&g);
        desc_rows.push(g.iter().map(|x| x / n).collect::<Vec<f64>>());
    }
    let mask = (0..classes).map(|c| c < cfg.seen_classes).collect();
    let space = SemanticSpace::new(Matrix::from_rows(&desc_rows)?, mask)?;

    let mut sample_rng = CounterRng::new(cfg.seed, "synth/samples");
    let n_train = cfg.train_per_class();
    let mut splits: [(Vec<Vec<f64>>, Vec<usize>); 3] = Default::default();
    for class in 0..classes {
        let cols = basis(class);
        for j in 0..cfg.samples_per_class {
            let z: Vec<f64> = centers[class].iter().map(|m| m + 0.5 * sample_rng.gaussian()).collect();
            let mut x = vec![0.0; d];
            for (zk, &col) in z.iter().zip(&cols) {
                for (row, xi) in x.iter_mut().enumerate() {
                    *xi += frame.get(row, col) * zk;
                }
            }
            for xi in x.iter_mut() {
                *xi += cfg.noise_sigma * sample_rng.gaussian();
            }
            let target = if class >= cfg.seen_classes {
                2
            } else if j < n_train {
                0
            } else {
                1
            };
            splits[target].0.push(x);
            splits[target].1.push(class);
        }
    }

    let [train, test_seen, test_unseen] =
        splits.map(|(rows, labels)| Matrix::from_rows(&rows).and_then(|x| Dataset::new(x, labels, classes)));
    Ok(ZslSplits {
        train: train?,
        test_seen: test_seen?,
        test_unseen: test_unseen?,
        space,
    })
}
