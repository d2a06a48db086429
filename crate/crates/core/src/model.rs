//! The composite predictor `f(x) = Σ_i act(Θ_iᵀx + b_i)·ξ_i(x) + b`, its
//! lifted regression form, and cosine-similarity class prediction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{load_matrix, save_matrix, SemanticSpace};
use crate::error::{check_dim, Error, Result};
use crate::kv::{self, KeyValues};
use crate::numerics::{dot, norm, Matrix};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Rectifier,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Rectifier => v.max(0.0),
        }
    }

    /// Derivative at `v` (the rectifier uses 0 at the kink).
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Rectifier => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Rectifier => "rectifier",
        })
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(Activation::Identity),
            "rectifier" | "relu" => Ok(Activation::Rectifier),
            other => Err(format!("unknown activation `{other}` (identity|rectifier)")),
        }
    }
}

/// What the base networks consume: raw features or the encoder embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputSpace {
    #[default]
    Raw,
    Embedding,
}

impl fmt::Display for InputSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputSpace::Raw => "raw",
            InputSpace::Embedding => "embedding",
        })
    }
}

impl FromStr for InputSpace {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(InputSpace::Raw),
            "embedding" => Ok(InputSpace::Embedding),
            other => Err(format!("unknown input space `{other}` (raw|embedding)")),
        }
    }
}

/// One affine map `x ↦ Θᵀx + b` with Θ of shape d×s.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLinearNetwork {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl BaseLinearNetwork {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dim("network bias length", weight.cols(), bias.len())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("network bias has non-finite entries".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Rescales Θ to unit Frobenius norm (no-op for the zero matrix).
    pub fn normalize(&mut self) {
        let n = self.weight.frobenius_norm();
        if n > 0.0 {
            self.weight.scale_in_place(1.0 / n);
        }
    }
}

/// Binary gates selecting which base networks fire for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndicatorVector {
    gates: Vec<bool>,
}

impl IndicatorVector {
    pub fn new(gates: Vec<bool>) -> Self {
        Self { gates }
    }

    pub fn all(k: usize) -> Self {
        Self::new(vec![true; k])
    }

    pub fn none(k: usize) -> Self {
        Self::new(vec![false; k])
    }

    /// Gates set at the listed positions.
    pub fn from_active(k: usize, active: &[usize]) -> Self {
        let mut g = vec![false; k];
        for &i in active {
            g[i] = true;
        }
        Self::new(g)
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    #[inline]
    pub fn is_active(&self, i: usize) -> bool {
        self.gates[i]
    }

    pub fn active_count(&self) -> usize {
        self.gates.iter().filter(|g| **g).count()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.gates.iter().enumerate().filter(|(_, g)| **g).map(|(i, _)| i)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.gates
    }

    /// Number of positions active in both vectors.
    pub fn overlap(&self, other: &IndicatorVector) -> Result<usize> {
        check_dim("gate vector length", self.len(), other.len())?;
        Ok(self.gates.iter().zip(&other.gates).filter(|(a, b)| **a && **b).count())
    }
}

/// The lift `Φ(x) = [ξ₁, ξ₁xᵀ, …, ξ_K, ξ_K xᵀ]`, length K(d+1).
pub fn lift_features(x: &[f64], gates: &IndicatorVector) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; gates.len() * (d + 1)];
    for i in gates.active_indices() {
        let block = &mut out[i * (d + 1)..(i + 1) * (d + 1)];
        block[0] = 1.0;
        block[1..].copy_from_slice(x);
    }
    out
}

/// Multiply-add count of one forward pass; grows with the number of active
/// networks, not with K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardCost {
    pub multiply_adds: usize,
    pub networks_evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    UnseenOnly,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeModel {
    networks: Vec<BaseLinearNetwork>,
    global_bias: Vec<f64>,
    activation: Activation,
    k_active: usize,
    input_space: InputSpace,
}

impl CompositeModel {
    pub fn new(
        networks: Vec<BaseLinearNetwork>,
        global_bias: Vec<f64>,
        activation: Activation,
        k_active: usize,
    ) -> Result<Self> {
        let first = networks
            .first()
            .ok_or_else(|| Error::InvalidInput("a composite model needs at least one network".into()))?;
        let (d, s) = first.weight.shape();
        for n in &networks {
            check_dim("network input dimension", d, n.input_dim())?;
            check_dim("network output dimension", s, n.output_dim())?;
        }
        check_dim("global bias length", s, global_bias.len())?;
        if k_active == 0 || k_active > networks.len() {
            return Err(Error::InvalidInput(format!(
                "k_active must be in 1..={}, got {k_active}",
                networks.len()
            )));
        }
        Ok(Self {
            networks,
            global_bias,
            activation,
            k_active,
            input_space: InputSpace::Raw,
        })
    }

    /// K networks with Θ_i drawn as N(0, 1/d) entries and rescaled to unit
    /// Frobenius norm, zero network biases, and the given global bias.
    pub fn random_init(
        k: usize,
        input_dim: usize,
        global_bias: Vec<f64>,
        k_active: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || input_dim == 0 || global_bias.is_empty() {
            return Err(Error::InvalidInput("model shape must be nonempty".into()));
        }
        let s = global_bias.len();
        let mut rng = CounterRng::new(seed, "model/theta");
        let scale = 1.0 / (input_dim as f64).sqrt();
        let networks = (0..k)
            .map(|_| {
                let w = Matrix::from_fn(input_dim, s, |_, _| rng.gaussian() * scale);
                let mut net = BaseLinearNetwork::new(w, vec![0.0; s])?;
                net.normalize();
                Ok(net)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(networks, global_bias, activation, k_active)
    }

    pub fn with_input_space(mut self, space: InputSpace) -> Self {
        self.input_space = space;
        self
    }

    pub fn with_k_active(mut self, k_active: usize) -> Result<Self> {
        if k_active == 0 || k_active > self.networks.len() {
            return Err(Error::InvalidInput(format!(
                "k_active must be in 1..={}, got {k_active}",
                self.networks.len()
            )));
        }
        self.k_active = k_active;
        Ok(self)
    }

    pub fn networks(&self) -> &[BaseLinearNetwork] {
        &self.networks
    }

    pub(crate) fn networks_mut(&mut self) -> &mut [BaseLinearNetwork] {
        &mut self.networks
    }

    pub fn global_bias(&self) -> &[f64] {
        &self.global_bias
    }

    pub(crate) fn global_bias_mut(&mut self) -> &mut [f64] {
        &mut self.global_bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_space(&self) -> InputSpace {
        self.input_space
    }

    pub fn k(&self) -> usize {
        self.networks.len()
    }

    pub fn k_active(&self) -> usize {
        self.k_active
    }

    pub fn input_dim(&self) -> usize {
        self.networks[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.global_bias.len()
    }

    /// `Θ = [b₁, Θ₁ᵀ, …, b_K, Θ_Kᵀ]ᵀ`, shape K(d+1)×s, matching [`lift_features`].
    pub fn stacked_parameters(&self) -> Matrix {
        let d = self.input_dim();
        let s = self.output_dim();
        let mut out = Matrix::zeros(self.k() * (d + 1), s);
        for (i, net) in self.networks.iter().enumerate() {
            out.row_mut(i * (d + 1)).copy_from_slice(&net.bias);
            for r in 0..d {
                out.row_mut(i * (d + 1) + 1 + r).copy_from_slice(net.weight.row(r));
            }
        }
        out
    }

    fn check_inputs(&self, x: &[f64], gates: &IndicatorVector) -> Result<()> {
        check_dim("model input", self.input_dim(), x.len())?;
        check_dim("gate vector length", self.k(), gates.len())
    }

    /// Evaluates the gated sum. Any gate pattern of length K is accepted; the
    /// all-zero pattern returns the global bias.
    pub fn forward(&self, x: &[f64], gates: &IndicatorVector) -> Result<Vec<f64>> {
        self.forward_counted(x, gates).map(|(y, _)| y)
    }

    pub fn forward_counted(&self, x: &[f64], gates: &IndicatorVector) -> Result<(Vec<f64>, ForwardCost)> {
        self.check_inputs(x, gates)?;
        let s = self.output_dim();
        let mut out = self.global_bias.clone();
        let mut cost = ForwardCost {
            multiply_adds: s,
            networks_evaluated: 0,
        };
        let mut pre = vec![0.0; s];
        for i in gates.active_indices() {
            let net = &self.networks[i];
            pre.copy_from_slice(&net.bias);
            for (r, xr) in x.iter().enumerate() {
                for (p, w) in pre.iter_mut().zip(net.weight.row(r)) {
                    *p += w * xr;
                }
            }
            for (o, p) in out.iter_mut().zip(&pre) {
                *o += self.activation.apply(*p);
            }
            cost.multiply_adds += x.len() * s + 2 * s;
            cost.networks_evaluated += 1;
        }
        Ok((out, cost))
    }

    /// Class whose descriptor has the highest cosine similarity with the
    /// forward output, among in-scope classes; ties go to the lowest id.
    pub fn predict_class(
        &self,
        x: &[f64],
        gates: &IndicatorVector,
        space: &SemanticSpace,
        scope: Scope,
    ) -> Result<usize> {
        let y = self.forward(x, gates)?;
        nearest_class(&y, space, scope)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = kv::render(&[
            ("K", self.k().to_string()),
            ("d", self.input_dim().to_string()),
            ("s", self.output_dim().to_string()),
            ("k_active", self.k_active.to_string()),
            ("activation", self.activation.to_string()),
            ("input_space", self.input_space.to_string()),
        ]);
        let meta_path = dir.join("meta");
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        for (i, net) in self.networks.iter().enumerate() {
            save_matrix(&net.weight, &dir.join(format!("theta_{i}.pmx1")))?;
            save_matrix(&Matrix::row_vector(&net.bias)?, &dir.join(format!("bias_{i}.pmx1")))?;
        }
        save_matrix(&Matrix::row_vector(&self.global_bias)?, &dir.join("global_bias.pmx1"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let meta = KeyValues::read(&meta_path).map_err(|e| corrupt(&meta_path, e))?;
        let field = |k: &str| meta.require_parsed::<usize>(k).map_err(|e| corrupt(&meta_path, e));
        let (k, d, s, k_active) = (field("K")?, field("d")?, field("s")?, field("k_active")?);
        let activation = meta
            .require_parsed::<Activation>("activation")
            .map_err(|e| corrupt(&meta_path, e))?;
        let input_space = meta
            .parse_value::<InputSpace>("input_space")
            .map_err(|e| corrupt(&meta_path, e))?
            .unwrap_or_default();

        let mut networks = Vec::with_capacity(k);
        for i in 0..k {
            let wpath = dir.join(format!("theta_{i}.pmx1"));
            let weight = load_matrix(&wpath)?;
            if weight.shape() != (d, s) {
                return Err(corrupt(&wpath, format!("expected {d}x{s}, found {:?}", weight.shape())));
            }
            let bpath = dir.join(format!("bias_{i}.pmx1"));
            let bias = load_row(&bpath, s)?;
            networks.push(BaseLinearNetwork::new(weight, bias)?);
        }
        let global_bias = load_row(&dir.join("global_bias.pmx1"), s)?;
        Self::new(networks, global_bias, activation, k_active)
            .map(|m| m.with_input_space(input_space))
            .map_err(|e| corrupt(&meta_path, e))
    }
}

pub(crate) fn load_row(path: &Path, len: usize) -> Result<Vec<f64>> {
    let m = load_matrix(path)?;
    if m.shape() != (1, len) {
        return Err(corrupt(path, format!("expected 1x{len}, found {:?}", m.shape())));
    }
    Ok(m.into_vec())
}

pub(crate) fn corrupt(path: &Path, e: impl fmt::Display) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: 0,
        message: e.to_string(),
    }
}

/// Anything that maps a (model-space) input and its gates to a semantic vector.
pub trait SemanticPredictor {
    fn input_space(&self) -> InputSpace;
    fn k_active(&self) -> usize;
    fn predict_semantic(&self, input: &[f64], gates: &IndicatorVector) -> Result<Vec<f64>>;
}

impl SemanticPredictor for CompositeModel {
    fn input_space(&self) -> InputSpace {
        self.input_space
    }

    fn k_active(&self) -> usize {
        self.k_active
    }

    fn predict_semantic(&self, input: &[f64], gates: &IndicatorVector) -> Result<Vec<f64>> {
        self.forward(input, gates)
    }
}

/// Cosine-similarity argmax over the descriptors in `scope`.
pub fn nearest_class(prediction: &[f64], space: &SemanticSpace, scope: Scope) -> Result<usize> {
    check_dim("prediction length", space.dim(), prediction.len())?;
    let pn = norm(prediction);
    if pn == 0.0 || !pn.is_finite() {
        return Err(Error::DegeneratePrediction);
    }
    let mut best: Option<(usize, f64)> = None;
    for c in 0..space.class_count() {
        if scope == Scope::UnseenOnly && space.is_seen(c) {
            continue;
        }
        let a = space.descriptor(c);
        let sim = dot(prediction, a) / (pn * norm(a));
        if best.map_or(true, |(_, b)| sim > b) {
            best = Some((c, sim));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::validation("semantic space", None, "no classes in the requested scope"))
}

/// Free-function form of [`CompositeModel::predict_class`].
pub fn predict_class(
    model: &CompositeModel,
    x: &[f64],
    gates: &IndicatorVector,
    space: &SemanticSpace,
    scope: Scope,
) -> Result<usize> {
    model.predict_class(x, gates, space, scope)
}
