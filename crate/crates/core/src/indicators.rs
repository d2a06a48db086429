//! Tied-weight linear encoder and variance-ranked top-k gates.
//!
//! The encoder maps `x ↦ E = Wx` (h×d weights) and reconstructs with `WᵀE`.
//! Gates split `E` into K equal blocks, score each block by its mean squared
//! deviation from the mean of the whole embedding, and switch on the
//! `k_active` highest-scoring blocks.

use std::path::Path;

use crate::data::{load_matrix, save_matrix};
use crate::error::{check_dim, Error, Result};
use crate::kv::{self, KeyValues};
use crate::model::{corrupt, IndicatorVector};
use crate::numerics::Matrix;
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Training stops once an epoch improves the loss by less than
    /// `tolerance × initial loss`.
    pub tolerance: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 0,
            tolerance: 1e-12,
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("encoder config: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

/// Default latent width: four embedding entries per block.
pub fn default_latent_dim(blocks: usize) -> usize {
    4 * blocks
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorEncoder {
    weight: Matrix,
    blocks: usize,
    k_active: usize,
}

impl IndicatorEncoder {
    pub fn new(weight: Matrix, blocks: usize, k_active: usize) -> Result<Self> {
        let h = weight.rows();
        if blocks == 0 || h % blocks != 0 {
            return Err(Error::InvalidInput(format!(
                "latent dimension {h} is not divisible by K = {blocks}"
            )));
        }
        if k_active == 0 || k_active > blocks {
            return Err(Error::InvalidInput(format!(
                "k_active must be in 1..={blocks}, got {k_active}"
            )));
        }
        Ok(Self {
            weight,
            blocks,
            k_active,
        })
    }

    /// Untrained encoder with N(0, 1/d) weights.
    pub fn random(h: usize, d: usize, blocks: usize, k_active: usize, seed: u64) -> Result<Self> {
        if h == 0 || d == 0 {
            return Err(Error::InvalidInput("encoder shape must be nonempty".into()));
        }
        let mut rng = CounterRng::new(seed, "encoder/init");
        let scale = 1.0 / (d as f64).sqrt();
        Self::new(Matrix::from_fn(h, d, |_, _| rng.gaussian() * scale), blocks, k_active)
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn k_active(&self) -> usize {
        self.k_active
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("encoder input", self.input_dim(), x.len())?;
        self.weight.matvec(x)
    }

    /// Embeds every row of `x` (N×d → N×h).
    pub fn embed_rows(&self, x: &Matrix) -> Result<Matrix> {
        check_dim("encoder input", self.input_dim(), x.cols())?;
        x.matmul(&self.weight.transpose())
    }

    pub fn compute_indicators(&self, x: &[f64], k_active: usize) -> Result<IndicatorVector> {
        gates_from_embedding(&self.embed(x)?, self.blocks, k_active)
    }

    /// Gates with the encoder's own `k_active`.
    pub fn indicators(&self, x: &[f64]) -> Result<IndicatorVector> {
        self.compute_indicators(x, self.k_active)
    }

    /// Mean squared reconstruction error `‖x − WᵀWx‖²` over the rows of `x`.
    pub fn reconstruction_loss(&self, x: &Matrix) -> Result<f64> {
        let residual = self.residual(x)?;
        Ok(residual.as_slice().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
    }

    /// `X − XWᵀW` for row-sample `X`.
    pub fn residual(&self, x: &Matrix) -> Result<Matrix> {
        let e = self.embed_rows(x)?;
        x.sub(&e.matmul(&self.weight)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_matrix(&self.weight, &dir.join("encoder.pmx1"))?;
        let meta = kv::render(&[
            ("h", self.latent_dim().to_string()),
            ("d", self.input_dim().to_string()),
            ("K", self.blocks.to_string()),
            ("k_active", self.k_active.to_string()),
        ]);
        let path = dir.join("meta");
        std::fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let meta = KeyValues::read(&meta_path).map_err(|e| corrupt(&meta_path, e))?;
        let field = |k: &str| meta.require_parsed::<usize>(k).map_err(|e| corrupt(&meta_path, e));
        let (h, blocks, k_active) = (field("h")?, field("K")?, field("k_active")?);
        let wpath = dir.join("encoder.pmx1");
        let weight = load_matrix(&wpath)?;
        if weight.rows() != h {
            return Err(corrupt(&wpath, format!("expected {h} rows, found {}", weight.rows())));
        }
        if let Some(d) = meta.parse_value::<usize>("d").map_err(|e| corrupt(&meta_path, e))? {
            if weight.cols() != d {
                return Err(corrupt(&wpath, format!("expected {d} columns, found {}", weight.cols())));
            }
        }
        Self::new(weight, blocks, k_active).map_err(|e| corrupt(&meta_path, e))
    }
}

/// Top-`k_active` gates from an embedding split into `blocks` equal parts.
/// Block score is the mean of `(e − μ)²` over the block, with μ the mean of the
/// whole embedding; ties go to the lower block index.
pub fn gates_from_embedding(e: &[f64], blocks: usize, k_active: usize) -> Result<IndicatorVector> {
    if blocks == 0 || e.len() % blocks != 0 {
        return Err(Error::InvalidInput(format!(
            "embedding length {} is not divisible by K = {blocks}",
            e.len()
        )));
    }
    if k_active == 0 || k_active > blocks {
        return Err(Error::InvalidInput(format!(
            "k_active must be in 1..={blocks}, got {k_active}"
        )));
    }
    let mu = e.iter().sum::<f64>() / e.len() as f64;
    let width = e.len() / blocks;
    let scores: Vec<f64> = e
        .chunks_exact(width)
        .map(|b| b.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / width as f64)
        .collect();
    let mut order: Vec<usize> = (0..blocks).collect();
    // stable sort keeps lower indices first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(IndicatorVector::from_active(blocks, &order[..k_active]))
}

pub fn compute_indicators(enc: &IndicatorEncoder, x: &[f64], k_active: usize) -> Result<IndicatorVector> {
    enc.compute_indicators(x, k_active)
}

/// Loss history of one training run; `losses[0]` is the initial loss and
/// each later entry the accepted loss after an epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderTrace {
    pub losses: Vec<f64>,
    pub rejected_epochs: usize,
    pub final_learning_rate: f64,
}

pub fn train_encoder(
    x: &Matrix,
    h: usize,
    blocks: usize,
    k_active: usize,
    cfg: &EncoderTrainConfig,
) -> Result<IndicatorEncoder> {
    train_encoder_traced(x, h, blocks, k_active, cfg).map(|(enc, _)| enc)
}

/// Mini-batch gradient descent on `(1/B)‖X_b − X_b WᵀW‖²`. An epoch whose
/// full-data loss exceeds the previous one is rolled back and the learning
/// rate halved, so the accepted loss sequence never increases.
pub fn train_encoder_traced(
    x: &Matrix,
    h: usize,
    blocks: usize,
    k_active: usize,
    cfg: &EncoderTrainConfig,
) -> Result<(IndicatorEncoder, EncoderTrace)> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if h > d {
        log::warn!("latent dimension {h} exceeds input dimension {d}; the encoder can learn the identity");
    }
    let mut enc = IndicatorEncoder::random(h, d, blocks, k_active, cfg.seed)?;
    let mut loss = enc.reconstruction_loss(x)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { stage: "encoder training" });
    }
    let initial = loss;
    let mut lr = cfg.learning_rate;
    let mut trace = EncoderTrace {
        losses: vec![loss],
        ..Default::default()
    };
    let mut rng = CounterRng::new(cfg.seed, "encoder/batches");
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.min(n);

    for epoch in 0..cfg.epochs {
        let snapshot = enc.weight.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk)?;
            let grad = tied_gradient(&enc.weight, &xb)?;
            enc.weight.add_scaled(-lr, &grad)?;
        }
        let next = if enc.weight.is_finite() {
            enc.reconstruction_loss(x)?
        } else {
            f64::NAN
        };
        if !next.is_finite() {
            return Err(Error::Divergence { stage: "encoder training" });
        }
        if next > loss {
            enc.weight = snapshot;
            lr *= 0.5;
            trace.rejected_epochs += 1;
            log::debug!("encoder epoch {epoch}: loss rose, learning rate now {lr}");
            if lr < cfg.learning_rate * 1e-12 {
                break;
            }
            continue;
        }
        let improvement = loss - next;
        loss = next;
        trace.losses.push(loss);
        if improvement < cfg.tolerance * initial {
            break;
        }
    }
    trace.final_learning_rate = lr;
    log::info!("encoder trained: loss {initial:.6e} -> {loss:.6e}");
    Ok((enc, trace))
}

/// Gradient of `(1/B)‖X − XWᵀW‖²` with respect to W (rows of X are samples):
/// `−(2/B)(EᵀR + (RWᵀ)ᵀX)` with `E = XWᵀ`, `R = X − EW`.
fn tied_gradient(w: &Matrix, xb: &Matrix) -> Result<Matrix> {
    let e = xb.matmul(&w.transpose())?;
    let r = xb.sub(&e.matmul(w)?)?;
    let mut g = e.t_matmul(&r)?;
    let rw = r.matmul(&w.transpose())?;
    g.add_scaled(1.0, &rw.t_matmul(xb)?)?;
    g.scale_in_place(-2.0 / xb.rows() as f64);
    Ok(g)
}
