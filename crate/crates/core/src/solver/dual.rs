//! ε-SVR dual over the lifted features, per semantic dimension:
//!
//! maximize `Σ β_l y_l − ε Σ (α_l + α*_l) − ½ Σ_l Σ_j β_l β_j T_lj`
//! with `β = α − α*`, `0 ≤ α, α* ≤ C` and `Σ β_l = 0`.
//!
//! Solved as the equivalent 2N-variable minimization with SMO: the working
//! pair is the maximal violating `i` plus the second-order best `j`.

use std::path::Path;

use super::{kernel_matrix, transformation_kernel, GatedSamples, SolverConfig};
use crate::data::{load_matrix, save_matrix};
use crate::error::{check_dim, Error, Result};
use crate::kv::{self, KeyValues};
use crate::model::{corrupt, load_row, IndicatorVector, InputSpace, SemanticPredictor};
use crate::numerics::Matrix;

const TAU: f64 = 1e-12;

/// Solution of one scalar problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal KKT violation.
    pub violation: f64,
}

/// Dual objective value (the quantity being maximized).
pub fn dual_objective(kernel: &Matrix, targets: &[f64], alpha: &[f64], alpha_star: &[f64], epsilon: f64) -> f64 {
    let n = targets.len();
    let beta: Vec<f64> = alpha.iter().zip(alpha_star).map(|(a, s)| a - s).collect();
    let mut quad = 0.0;
    for l in 0..n {
        if beta[l] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += beta[l] * beta[j] * kernel.get(l, j);
        }
    }
    let linear: f64 = beta.iter().zip(targets).map(|(b, y)| b * y).sum();
    let tube: f64 = alpha.iter().zip(alpha_star).map(|(a, s)| a + s).sum();
    linear - epsilon * tube - 0.5 * quad
}

/// SMO on one dimension. `max_iter` caps the number of pair updates.
pub fn solve_dual_dimension(
    kernel: &Matrix,
    targets: &[f64],
    c: f64,
    epsilon: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<DimensionSolution> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::InvalidInput("dual solve needs at least one training point".into()));
    }
    check_dim("kernel size", n, kernel.rows())?;
    let m = 2 * n;
    // variable t < n is α_t (sign +1), t >= n is α*_{t-n} (sign -1)
    let y = |t: usize| if t < n { 1.0 } else { -1.0 };
    let point = |t: usize| if t < n { t } else { t - n };
    let q = |t: usize, s: usize| y(t) * y(s) * kernel.get(point(t), point(s));
    let qd: Vec<f64> = (0..m).map(|t| kernel.get(point(t), point(t))).collect();

    let mut a = vec![0.0; m];
    // gradient of ½aᵀQa + pᵀa at a = 0
    let mut g: Vec<f64> = (0..m)
        .map(|t| if t < n { epsilon - targets[t] } else { epsilon + targets[t - n] })
        .collect();

    let mut iterations = 0;
    let mut violation;
    loop {
        // i: maximal violator in the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            let up = if y(t) > 0.0 { a[t] < c } else { a[t] > 0.0 };
            if up && -y(t) * g[t] >= gmax {
                gmax = -y(t) * g[t];
                i_sel = Some(t);
            }
        }
        // j: second-order choice in the "low" set
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_decrease = f64::INFINITY;
        for t in 0..m {
            let low = if y(t) > 0.0 { a[t] > 0.0 } else { a[t] < c };
            if !low {
                continue;
            }
            let yg = y(t) * g[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            let Some(i) = i_sel else { continue };
            let grad_diff = gmax + yg;
            if grad_diff > 0.0 {
                let mut quad = qd[i] + qd[t] - 2.0 * y(i) * y(t) * q(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let decrease = -grad_diff * grad_diff / quad;
                if decrease <= best_decrease {
                    best_decrease = decrease;
                    j_sel = Some(t);
                }
            }
        }
        violation = (gmax + gmax2).max(0.0);
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if gmax + gmax2 <= tolerance || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (a[i], a[j]);
        if y(i) != y(j) {
            let mut quad = qd[i] + qd[j] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for t in 0..m {
            g[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    let converged = violation <= tolerance;

    // bias: average over free variables, else midpoint of the KKT interval
    let (mut upper, mut lower) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_count) = (0.0, 0usize);
    for t in 0..m {
        let yg = y(t) * g[t];
        if a[t] >= c {
            if y(t) < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if a[t] <= 0.0 {
            if y(t) > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free_sum += yg;
            free_count += 1;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        0.5 * (upper + lower)
    };

    // a point never sits on both sides of the tube: keep β, drop the overlap
    let mut alpha = Vec::with_capacity(n);
    let mut alpha_star = Vec::with_capacity(n);
    for l in 0..n {
        let beta = a[l] - a[l + n];
        alpha.push(beta.max(0.0));
        alpha_star.push((-beta).max(0.0));
    }
    Ok(DimensionSolution {
        alpha,
        alpha_star,
        bias: -rho,
        iterations,
        converged,
        violation,
    })
}

/// Multipliers for every training point and semantic dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// N×s.
    pub alpha: Matrix,
    /// N×s.
    pub alpha_star: Matrix,
    pub bias: Vec<f64>,
    /// Per dimension: points with `α + α* > 0`.
    pub support_indices: Vec<Vec<usize>>,
    pub converged: bool,
    pub iterations: Vec<usize>,
    pub objective: Vec<f64>,
}

impl DualSolution {
    pub fn beta(&self, point: usize, dim: usize) -> f64 {
        self.alpha.get(point, dim) - self.alpha_star.get(point, dim)
    }

    /// Human-readable descriptions of every violated feasibility condition.
    pub fn feasibility_violations(&self, c: f64, tolerance: f64) -> Vec<String> {
        let mut out = Vec::new();
        let (n, s) = self.alpha.shape();
        for dim in 0..s {
            let mut sum = 0.0;
            for l in 0..n {
                let (a, b) = (self.alpha.get(l, dim), self.alpha_star.get(l, dim));
                if !(0.0..=c).contains(&a) || !(0.0..=c).contains(&b) {
                    out.push(format!("dim {dim}, point {l}: multiplier outside [0, {c}]"));
                }
                if a.min(b) > tolerance {
                    out.push(format!("dim {dim}, point {l}: both multipliers positive"));
                }
                sum += a - b;
            }
            if sum.abs() > tolerance {
                out.push(format!("dim {dim}: Σ(α − α*) = {sum:e}"));
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_matrix(&self.alpha, &dir.join("alpha.pmx1"))?;
        save_matrix(&self.alpha_star, &dir.join("alpha_star.pmx1"))?;
        save_matrix(&Matrix::row_vector(&self.bias)?, &dir.join("bias.pmx1"))?;
        let iters: Vec<String> = self.iterations.iter().map(|i| i.to_string()).collect();
        let meta = kv::render(&[
            ("N", self.alpha.rows().to_string()),
            ("s", self.alpha.cols().to_string()),
            ("converged", self.converged.to_string()),
            ("iterations", iters.join(",")),
        ]);
        let path = dir.join("meta");
        std::fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let meta = KeyValues::read(&meta_path).map_err(|e| corrupt(&meta_path, e))?;
        let n: usize = meta.require_parsed("N").map_err(|e| corrupt(&meta_path, e))?;
        let s: usize = meta.require_parsed("s").map_err(|e| corrupt(&meta_path, e))?;
        let converged: bool = meta.require_parsed("converged").map_err(|e| corrupt(&meta_path, e))?;
        let iterations = meta
            .require("iterations")
            .map_err(|e| corrupt(&meta_path, e))?
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| corrupt(&meta_path, e)))
            .collect::<Result<Vec<_>>>()?;
        let load = |name: &str| -> Result<Matrix> {
            let p = dir.join(name);
            let m = load_matrix(&p)?;
            if m.shape() != (n, s) {
                return Err(corrupt(&p, format!("expected {n}x{s}, found {:?}", m.shape())));
            }
            Ok(m)
        };
        let alpha = load("alpha.pmx1")?;
        let alpha_star = load("alpha_star.pmx1")?;
        let bias = load_row(&dir.join("bias.pmx1"), s)?;
        let support_indices = (0..s)
            .map(|dim| {
                (0..n)
                    .filter(|&l| alpha.get(l, dim) + alpha_star.get(l, dim) > 0.0)
                    .collect()
            })
            .collect();
        Ok(Self {
            alpha,
            alpha_star,
            bias,
            support_indices,
            converged,
            iterations,
            objective: Vec::new(),
        })
    }
}

/// Solves every semantic dimension of `samples` independently.
pub fn solve_dual(samples: &GatedSamples, cfg: &SolverConfig) -> Result<DualSolution> {
    cfg.validate()?;
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidInput("dual solve needs at least one training point".into()));
    }
    let s = samples.output_dim();
    let kernel = kernel_matrix(samples)?;
    let max_iter = cfg.dual_max_passes.saturating_mul(n);
    let mut alpha = Matrix::zeros(n, s);
    let mut alpha_star = Matrix::zeros(n, s);
    let mut bias = Vec::with_capacity(s);
    let mut support = Vec::with_capacity(s);
    let mut iterations = Vec::with_capacity(s);
    let mut objective = Vec::with_capacity(s);
    let mut converged = true;
    for dim in 0..s {
        let targets = samples.targets().column(dim);
        let sol = solve_dual_dimension(&kernel, &targets, cfg.c, cfg.epsilon, cfg.dual_tolerance, max_iter)?;
        if !sol.converged {
            log::warn!(
                "dual dimension {dim} stopped after {} updates with KKT violation {:e}",
                sol.iterations,
                sol.violation
            );
        }
        converged &= sol.converged;
        for l in 0..n {
            alpha.set(l, dim, sol.alpha[l]);
            alpha_star.set(l, dim, sol.alpha_star[l]);
        }
        support.push((0..n).filter(|&l| sol.alpha[l] + sol.alpha_star[l] > 0.0).collect());
        objective.push(dual_objective(&kernel, &targets, &sol.alpha, &sol.alpha_star, cfg.epsilon));
        bias.push(sol.bias);
        iterations.push(sol.iterations);
    }
    Ok(DualSolution {
        alpha,
        alpha_star,
        bias,
        support_indices: support,
        converged,
        iterations,
        objective,
    })
}

/// `Σ_l (α_l − α*_l) T(x, x_l) + bias` per dimension, over support points only.
pub fn dual_predict(
    sol: &DualSolution,
    train: &GatedSamples,
    x: &[f64],
    gates: &IndicatorVector,
) -> Result<Vec<f64>> {
    check_dim("dual solution rows", train.len(), sol.alpha.rows())?;
    check_dim("dual solution columns", train.output_dim(), sol.alpha.cols())?;
    let mut kernel_cache: Vec<Option<f64>> = vec![None; train.len()];
    let mut out = sol.bias.clone();
    for (dim, support) in sol.support_indices.iter().enumerate() {
        for &l in support {
            let k = match kernel_cache[l] {
                Some(v) => v,
                None => {
                    let v = transformation_kernel(x, gates, train.inputs().row(l), &train.gates()[l])?;
                    kernel_cache[l] = Some(v);
                    v
                }
            };
            out[dim] += sol.beta(l, dim) * k;
        }
    }
    Ok(out)
}

/// A dual solution bundled with its training set so it can predict.
#[derive(Debug, Clone)]
pub struct DualModel {
    pub solution: DualSolution,
    pub train: GatedSamples,
    pub input_space: InputSpace,
    pub k_active: usize,
}

impl SemanticPredictor for DualModel {
    fn input_space(&self) -> InputSpace {
        self.input_space
    }

    fn k_active(&self) -> usize {
        self.k_active
    }

    fn predict_semantic(&self, input: &[f64], gates: &IndicatorVector) -> Result<Vec<f64>> {
        dual_predict(&self.solution, &self.train, input, gates)
    }
}
