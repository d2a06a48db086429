use std::fmt::Write as _;

use super::{primal_epsilon_loss, GatedSamples, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{geometry_gradient, orthogonality_penalty_of, ClassBlocks};
use crate::model::CompositeModel;
use crate::numerics::Matrix;
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLogRow {
    pub epoch: usize,
    /// Mean ε-insensitive loss over the fitting samples.
    pub primal_loss: f64,
    pub geometry: f64,
    pub orth_penalty: f64,
    pub total: f64,
    /// Held-out loss plus both regularizers; drives model selection.
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub model: CompositeModel,
    pub log: Vec<TrainingLogRow>,
    pub best_epoch: usize,
}

impl JointOutcome {
    pub fn initial_geometry(&self) -> f64 {
        self.log[0].geometry
    }

    pub fn best_geometry(&self) -> f64 {
        self.log[self.best_epoch].geometry
    }
}

/// `epoch,primal_loss,J,orth_penalty,total`, one row per logged epoch.
pub fn training_log_csv(rows: &[TrainingLogRow]) -> String {
    let mut out = String::from("epoch,primal_loss,J,orth_penalty,total\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.primal_loss, r.geometry, r.orth_penalty, r.total
        );
    }
    out
}

pub fn train_joint(samples: &GatedSamples, init: &CompositeModel, cfg: &SolverConfig) -> Result<CompositeModel> {
    train_joint_traced(samples, init, cfg).map(|o| o.model)
}

struct Split {
    fit: GatedSamples,
    holdout: Option<GatedSamples>,
}

fn holdout_split(samples: &GatedSamples, seed: u64) -> Result<Split> {
    let n = samples.len();
    let n_hold = n / 10;
    if n_hold == 0 {
        return Ok(Split {
            fit: samples.clone(),
            holdout: None,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    CounterRng::new(seed, "joint/holdout").shuffle(&mut order);
    let (fit, hold) = order.split_at_mut(n - n_hold);
    fit.sort_unstable();
    hold.sort_unstable();
    Ok(Split {
        fit: samples.subset(fit)?,
        holdout: Some(samples.subset(hold)?),
    })
}

fn mean_data_loss(model: &CompositeModel, samples: &GatedSamples, epsilon: f64) -> Result<f64> {
    let mut total = 0.0;
    for l in 0..samples.len() {
        let pred = model.forward(samples.inputs().row(l), &samples.gates()[l])?;
        total += primal_epsilon_loss(&pred, samples.targets().row(l), epsilon)?;
    }
    Ok(total / samples.len() as f64)
}

struct Gradients {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    global: Vec<f64>,
}

/// Mean ε-insensitive loss and its subgradient with respect to every parameter.
fn data_loss_and_gradient(model: &CompositeModel, samples: &GatedSamples, epsilon: f64) -> Result<(f64, Gradients)> {
    let (d, s) = (model.input_dim(), model.output_dim());
    let k = model.k();
    let act = model.activation();
    let mut grads = Gradients {
        weights: (0..k).map(|_| Matrix::zeros(d, s)).collect(),
        biases: vec![vec![0.0; s]; k],
        global: vec![0.0; s],
    };
    let inv_n = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut pre = vec![vec![0.0; s]; k];
    let mut g = vec![0.0; s];
    for l in 0..samples.len() {
        let x = samples.inputs().row(l);
        let gates = &samples.gates()[l];
        let target = samples.targets().row(l);
        let mut pred = model.global_bias().to_vec();
        for i in gates.active_indices() {
            let net = &model.networks()[i];
            pre[i].copy_from_slice(&net.bias);
            for (r, xr) in x.iter().enumerate() {
                for (p, w) in pre[i].iter_mut().zip(net.weight.row(r)) {
                    *p += w * xr;
                }
            }
            for (o, p) in pred.iter_mut().zip(&pre[i]) {
                *o += act.apply(*p);
            }
        }
        let mut any = false;
        for dim in 0..s {
            let r = pred[dim] - target[dim];
            let excess = r.abs() - epsilon;
            if excess > 0.0 {
                loss += excess;
                g[dim] = r.signum() * inv_n;
                any = true;
            } else {
                g[dim] = 0.0;
            }
        }
        if !any {
            continue;
        }
        for (gg, v) in grads.global.iter_mut().zip(&g) {
            *gg += v;
        }
        for i in gates.active_indices() {
            let local: Vec<f64> = g.iter().zip(&pre[i]).map(|(v, p)| v * act.derivative(*p)).collect();
            for (gb, v) in grads.biases[i].iter_mut().zip(&local) {
                *gb += v;
            }
            let gw = &mut grads.weights[i];
            for (r, xr) in x.iter().enumerate() {
                if *xr == 0.0 {
                    continue;
                }
                for (w, v) in gw.row_mut(r).iter_mut().zip(&local) {
                    *w += xr * v;
                }
            }
        }
    }
    Ok((loss * inv_n, grads))
}

/// Full-batch subgradient descent on
/// `mean ε-loss + λ_geo·J + λ_orth·Σ_{i<j}⟨Θ_i,Θ_j⟩²` with unit-Frobenius
/// projection of every Θ_i after each step. A seeded tenth of the samples is
/// held out; the returned model is the iterate with the lowest held-out loss
/// plus regularizers (the training loss when fewer than ten samples exist).
pub fn train_joint_traced(samples: &GatedSamples, init: &CompositeModel, cfg: &SolverConfig) -> Result<JointOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("joint training needs at least one sample".into()));
    }
    check_dim("model input", init.input_dim(), samples.input_dim())?;
    check_dim("model output", init.output_dim(), samples.output_dim())?;
    check_dim("gate vector length", init.k(), samples.gates()[0].len())?;

    let split = holdout_split(samples, cfg.seed)?;
    // J is logged even when it carries no weight
    let blocks = ClassBlocks::from_dataset(&split.fit.as_dataset()?)?;

    let mut model = init.clone();
    for net in model.networks_mut() {
        net.normalize();
    }
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, usize, CompositeModel)> = None;

    for epoch in 0..=cfg.epochs {
        let (data_loss, mut grads) = data_loss_and_gradient(&model, &split.fit, cfg.epsilon)?;
        let weights: Vec<&Matrix> = model.networks().iter().map(|n| &n.weight).collect();
        let (geometry, geo_grads) = geometry_gradient(&weights, &blocks)?;
        let (orth, orth_grads) = orthogonality_penalty_of(&weights);
        let regularizer = cfg.lambda_geo * geometry + cfg.lambda_orth * orth;
        let total = data_loss + regularizer;
        if !total.is_finite() {
            return Err(Error::Divergence { stage: "joint training" });
        }
        let held = match &split.holdout {
            Some(h) => mean_data_loss(&model, h, cfg.epsilon)?,
            None => data_loss,
        };
        let validation = held + regularizer;
        log.push(TrainingLogRow {
            epoch,
            primal_loss: data_loss,
            geometry,
            orth_penalty: orth,
            total,
            validation,
        });
        if best.as_ref().map_or(true, |(v, _, _)| validation < *v) {
            best = Some((validation, epoch, model.clone()));
        }
        if epoch == cfg.epochs {
            break;
        }

        for (i, gw) in grads.weights.iter_mut().enumerate() {
            if cfg.lambda_geo > 0.0 {
                gw.add_scaled(cfg.lambda_geo, &geo_grads[i])?;
            }
            if cfg.lambda_orth > 0.0 {
                gw.add_scaled(cfg.lambda_orth, &orth_grads[i])?;
            }
        }
        let lr = cfg.learning_rate;
        for (i, net) in model.networks_mut().iter_mut().enumerate() {
            net.weight.add_scaled(-lr, &grads.weights[i])?;
            for (b, g) in net.bias.iter_mut().zip(&grads.biases[i]) {
                *b -= lr * g;
            }
            net.normalize();
        }
        for (b, g) in model.global_bias_mut().iter_mut().zip(&grads.global) {
            *b -= lr * g;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch is evaluated");
    log::info!(
        "joint training: best epoch {best_epoch}, J {:.4e} -> {:.4e}",
        log[0].geometry,
        log[best_epoch].geometry
    );
    Ok(JointOutcome { model, log, best_epoch })
}
