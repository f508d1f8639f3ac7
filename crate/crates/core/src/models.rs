//! Small testbed networks with hand-written backpropagation.
//!
//! Both models are column-batched: inputs are `d₀ × B`, every weight acts on
//! the left (`H = W X`), and the loss is `(1/2B) Σ (f − y)²` on a scalar output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::rng::SeededRng;
use crate::scaling::{Dim, DimName, ManifestLayer, ModelManifest, Role};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache has no targets; backward needs a forward pass with targets")]
    MissingTargets,
    #[error("invalid architecture: {0}")]
    Arch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `h_ℓ = W_ℓ x_{ℓ−1}`, `x_ℓ = φ(h_ℓ)`, scalar readout.
    Mlp,
    /// Embedding, `depth` residual blocks `x_ℓ = x_{ℓ−1} + m·φ(W_ℓ x_{ℓ−1})`, readout.
    ResMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub kind: ModelKind,
    pub width: usize,
    /// Number of weight matrices (MLP) or residual blocks (residual MLP).
    pub depth: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_input_dim() -> usize {
    1
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl ArchConfig {
    pub fn mlp(width: usize, depth: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            width,
            depth,
            input_dim: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn res_mlp(width: usize, depth: usize) -> Self {
        Self {
            kind: ModelKind::ResMlp,
            ..Self::mlp(width, depth)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.input_dim == 0 {
            return Err(ModelError::Arch(
                "width and input_dim must be positive".into(),
            ));
        }
        match self.kind {
            ModelKind::Mlp if self.depth < 2 => Err(ModelError::Arch(
                "an MLP needs at least 2 weight matrices".into(),
            )),
            ModelKind::ResMlp if self.depth == 0 => Err(ModelError::Arch(
                "a residual MLP needs at least 1 block".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Layer list in forward order.
    pub fn manifest(&self) -> ModelManifest {
        let w = Dim::Symbolic(DimName::Width);
        let fixed = Dim::Fixed;
        let layer = |name: String, role, d_in, d_out, in_residual| ManifestLayer {
            name,
            role,
            d_in,
            d_out,
            in_residual,
            zero_init: in_residual,
        };
        let mut layers = Vec::new();
        match self.kind {
            ModelKind::Mlp => {
                layers.push(layer(
                    "input".into(),
                    Role::Hidden,
                    fixed(self.input_dim),
                    w,
                    false,
                ));
                for i in 1..self.depth - 1 {
                    layers.push(layer(format!("hidden_{i}"), Role::Hidden, w, w, false));
                }
            }
            ModelKind::ResMlp => {
                layers.push(layer(
                    "embed".into(),
                    Role::Embedding,
                    fixed(self.input_dim),
                    w,
                    false,
                ));
                for i in 1..=self.depth {
                    layers.push(layer(format!("block_{i}"), Role::Hidden, w, w, true));
                }
            }
        }
        layers.push(layer("readout".into(), Role::Readout, w, fixed(1), false));
        ModelManifest {
            width: self.width,
            depth: self.depth,
            layers,
        }
    }
}

/// Inputs `d₀ × B` and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub seed: u64,
}

/// Everything forward computes, kept for backward and for feature probes.
#[derive(Debug, Clone)]
pub struct Cache {
    pub inputs: Matrix,
    /// `pre[i]` is weight `i` applied to its input (the layer's `h`).
    pub pre: Vec<Matrix>,
    /// `post[i]` is the representation after layer `i` (for the readout, the output).
    pub post: Vec<Matrix>,
    pub targets: Option<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: ArchConfig,
    pub names: Vec<String>,
    pub weights: Vec<Matrix>,
    /// Residual branch multiplier (residual MLP only).
    pub residual_mult: f64,
}

impl Model {
    /// Gaussian init with per-layer standard deviations in manifest order.
    pub fn init(
        arch: &ArchConfig,
        sigmas: &[f64],
        residual_mult: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        let manifest = arch.manifest();
        if sigmas.len() != manifest.layers.len() {
            return Err(ModelError::Shape(format!(
                "{} init scales for {} layers",
                sigmas.len(),
                manifest.layers.len()
            )));
        }
        let mut rng = SeededRng::derived(seed, 0x1417);
        let mut weights = Vec::new();
        let mut names = Vec::new();
        for (layer, &sigma) in manifest.layers.iter().zip(sigmas) {
            let d_in = resolve(layer.d_in, arch.width);
            let d_out = resolve(layer.d_out, arch.width);
            let w = if sigma == 0.0 {
                Matrix::zeros(d_out, d_in)
            } else {
                Matrix::from_fn(d_out, d_in, |_, _| sigma * rng.normal())
            };
            weights.push(w);
            names.push(layer.name.clone());
        }
        Ok(Self {
            arch: arch.clone(),
            names,
            weights,
            residual_mult,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(
        &self,
        inputs: &Matrix,
        targets: Option<&[f64]>,
    ) -> Result<(f64, Cache), ModelError> {
        if inputs.rows() != self.arch.input_dim {
            return Err(ModelError::Shape(format!(
                "inputs have {} rows, model expects {}",
                inputs.rows(),
                self.arch.input_dim
            )));
        }
        let b = inputs.cols();
        if let Some(t) = targets {
            if t.len() != b {
                return Err(ModelError::Shape(format!(
                    "{} targets for batch of {b}",
                    t.len()
                )));
            }
        }
        let act = self.arch.activation;
        let n = self.weights.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Matrix> = Vec::with_capacity(n);
        for (i, w) in self.weights.iter().enumerate() {
            let x = if i == 0 { inputs } else { &post[i - 1] };
            let h = w.matmul(x)?;
            let out = match self.arch.kind {
                _ if i == n - 1 => h.clone(),
                ModelKind::Mlp => h.map(|v| act.apply(v)),
                ModelKind::ResMlp if i == 0 => h.clone(),
                ModelKind::ResMlp => {
                    let mut next = x.clone();
                    next.axpby(1.0, self.residual_mult, &h.map(|v| act.apply(v)))?;
                    next
                }
            };
            pre.push(h);
            post.push(out);
        }
        let loss = match targets {
            Some(t) => {
                let f = post[n - 1].row(0);
                f.iter().zip(t).map(|(a, y)| (a - y).powi(2)).sum::<f64>() / (2.0 * b as f64)
            }
            None => 0.0,
        };
        Ok((
            loss,
            Cache {
                inputs: inputs.clone(),
                pre,
                post,
                targets: targets.map(<[f64]>::to_vec),
            },
        ))
    }

    /// Gradients of the loss with respect to every weight, in layer order.
    pub fn backward(&self, cache: &Cache) -> Result<Vec<Matrix>, ModelError> {
        let targets = cache.targets.as_ref().ok_or(ModelError::MissingTargets)?;
        let n = self.weights.len();
        if cache.pre.len() != n {
            return Err(ModelError::Shape(
                "cache does not belong to this model".into(),
            ));
        }
        let b = cache.inputs.cols() as f64;
        let act = self.arch.activation;
        let f = cache.output();
        let mut grad_out = Matrix::from_vec(
            1,
            f.cols(),
            f.row(0)
                .iter()
                .zip(targets)
                .map(|(a, y)| (a - y) / b)
                .collect(),
        )?;
        let mut grads = vec![Matrix::zeros(1, 1); n];
        // `grad_out` is dL/d(post[i]) on entry to iteration i.
        for i in (0..n).rev() {
            let x_prev = if i == 0 {
                &cache.inputs
            } else {
                &cache.post[i - 1]
            };
            let delta = match self.arch.kind {
                _ if i == n - 1 => grad_out.clone(),
                ModelKind::Mlp => grad_out.zip_map(&cache.pre[i], |g, h| g * act.derivative(h))?,
                ModelKind::ResMlp if i == 0 => grad_out.clone(),
                ModelKind::ResMlp => {
                    let m = self.residual_mult;
                    grad_out.zip_map(&cache.pre[i], |g, h| m * g * act.derivative(h))?
                }
            };
            grads[i] = delta.matmul_t(x_prev)?;
            if i > 0 {
                let mut back = self.weights[i].t_matmul(&delta)?;
                if self.arch.kind == ModelKind::ResMlp && i != n - 1 {
                    back.axpby(1.0, 1.0, &grad_out)?;
                }
                grad_out = back;
            }
        }
        Ok(grads)
    }
}

fn resolve(d: Dim, width: usize) -> usize {
    match d {
        Dim::Fixed(v) => v,
        Dim::Symbolic(DimName::Width) => width,
    }
}

/// `√(Σ Δh² / (d·P))` over the `d × P` pre-activations of `layer`.
pub fn coord_probe(before: &Cache, after: &Cache, layer: usize) -> Result<f64, ModelError> {
    let a = before
        .pre
        .get(layer)
        .ok_or_else(|| ModelError::Shape(format!("no layer {layer} in cache")))?;
    let b = after
        .pre
        .get(layer)
        .ok_or_else(|| ModelError::Shape(format!("no layer {layer} in cache")))?;
    Ok(b.sub(a)?.rms())
}

/// Fixed random tanh network producing regression targets.
#[derive(Debug, Clone)]
pub struct Teacher {
    weights: Vec<Matrix>,
}

pub const TEACHER_WIDTH: usize = 16;

impl Teacher {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derived(seed, 0x7eac);
        let dims = [input_dim, TEACHER_WIDTH, TEACHER_WIDTH, 1];
        let weights = dims
            .windows(2)
            .map(|d| {
                let s = 1.5 / (d[0] as f64).sqrt();
                Matrix::from_fn(d[1], d[0], |_, _| s * rng.normal())
            })
            .collect();
        Self { weights }
    }

    pub fn eval(&self, inputs: &Matrix) -> Result<Vec<f64>, ModelError> {
        let mut x = inputs.clone();
        for (i, w) in self.weights.iter().enumerate() {
            x = w.matmul(&x)?;
            if i + 1 < self.weights.len() {
                x = x.map(f64::tanh);
            }
        }
        Ok(x.row(0).to_vec())
    }
}

/// Standard-normal inputs with teacher targets; deterministic in `seed`.
pub fn synth_batch(
    seed: u64,
    batch: usize,
    teacher: &Teacher,
    input_dim: usize,
) -> Result<Batch, ModelError> {
    let mut rng = SeededRng::derived(seed, 0xba7c);
    let inputs = Matrix::from_fn(input_dim, batch, |_, _| rng.normal());
    let targets = teacher.eval(&inputs)?;
    Ok(Batch {
        inputs,
        targets,
        seed,
    })
}

/// Fixed evenly spaced probe inputs in `[-2, 2]` (first input coordinate; the
/// others follow a fixed pseudo-random pattern).
pub fn probe_inputs(input_dim: usize, count: usize) -> Matrix {
    let mut rng = SeededRng::derived(0, 0x9a0be);
    Matrix::from_fn(input_dim, count, |r, c| {
        if r == 0 {
            if count == 1 {
                1.0
            } else {
                -2.0 + 4.0 * c as f64 / (count - 1) as f64
            }
        } else {
            rng.normal()
        }
    })
}
