//! The neural field: a plain MLP with sine (or softplus) activations, and
//! exact jets of its output with respect to the input point.

pub(crate) mod checkpoint;
pub(crate) mod engine;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Jet, JetOrder, ScalarField};
use crate::geometry::NormalizationTransform;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Points per parallel work unit in batch evaluation.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `sin(omega0 * z)` on every hidden layer.
    Sine { omega0: f64 },
    /// `log(1 + exp(beta * z)) / beta`.
    Softplus { beta: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Sine { omega0: 30.0 }
    }
}

impl Activation {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Sine { .. } => 0,
            Activation::Softplus { .. } => 1,
        }
    }

    pub(crate) fn parameter(self) -> f64 {
        match self {
            Activation::Sine { omega0 } => omega0,
            Activation::Softplus { beta } => beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 3,
            hidden_layers: 4,
            width: 256,
            activation: Activation::default(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArchitecture(m));
        if !(self.input_dim == 2 || self.input_dim == 3) {
            return bad(format!("input_dim must be 2 or 3, got {}", self.input_dim));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return bad("need at least one hidden layer of positive width".into());
        }
        let p = self.activation.parameter();
        if !(p > 0.0 && p.is_finite()) {
            return bad(format!("activation parameter must be positive, got {p}"));
        }
        Ok(())
    }

    pub(crate) fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut offset = 0;
        let mut fan_in = self.input_dim;
        for l in 0..=self.hidden_layers {
            let fan_out = if l == self.hidden_layers { 1 } else { self.width };
            shapes.push(LayerShape {
                fan_in,
                fan_out,
                w_off: offset,
                b_off: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
            fan_in = fan_out;
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .last()
            .map(|s| s.b_off + s.fan_out)
            .unwrap_or(0)
    }
}

/// Placement of one linear layer inside the flat parameter vector:
/// row-major weights (`fan_out x fan_in`) followed by biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineNetwork {
    pub(crate) arch: Architecture,
    pub(crate) layers: Vec<LayerShape>,
    pub(crate) params: Vec<f64>,
    pub(crate) transform: NormalizationTransform,
}

impl SineNetwork {
    /// Random initialization, deterministic in `seed`.
    ///
    /// Sine: first layer `U(-1/fan_in, 1/fan_in)`, later layers
    /// `U(-sqrt(6/fan_in)/omega0, +)`, biases `U(-1/sqrt(fan_in), +)`.
    /// Softplus: weights `U(-sqrt(6/fan_in), +)`, biases zero.
    ///
    /// Sine biases must not start at zero: every layer would then be odd in
    /// its input, and for point-symmetric data the loss is even in the
    /// biases, so they would never move and the field would stay odd.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_shapes();
        let mut params = vec![0.0; arch.parameter_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, s) in layers.iter().enumerate() {
            let fan_in = s.fan_in as f64;
            let bound = match arch.activation {
                Activation::Sine { .. } if l == 0 => 1.0 / fan_in,
                Activation::Sine { omega0 } => (6.0 / fan_in).sqrt() / omega0,
                Activation::Softplus { .. } => (6.0 / fan_in).sqrt(),
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut params[s.w_off..s.w_off + s.fan_in * s.fan_out] {
                *w = dist.sample(&mut rng);
            }
            if let Activation::Sine { .. } = arch.activation {
                let bb = 1.0 / fan_in.sqrt();
                let bias = Uniform::new_inclusive(-bb, bb).expect("finite bound");
                for b in &mut params[s.b_off..s.b_off + s.fan_out] {
                    *b = bias.sample(&mut rng);
                }
            }
        }
        Ok(SineNetwork {
            arch,
            layers,
            params,
            transform: NormalizationTransform::identity(arch.input_dim),
        })
    }

    /// Wraps explicit parameters laid out as per-layer weights then biases.
    pub fn from_parameters(arch: Architecture, params: Vec<f64>, transform: NormalizationTransform) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} parameters, got {}",
                arch.parameter_count(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index: i,
            });
        }
        if transform.dim() != arch.input_dim {
            return Err(Error::InvalidArchitecture("transform dimension mismatch".into()));
        }
        Ok(SineNetwork {
            layers: arch.layer_shapes(),
            arch,
            params,
            transform,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.layers[l];
        (
            &self.params[s.w_off..s.w_off + s.fan_in * s.fan_out],
            &self.params[s.b_off..s.b_off + s.fan_out],
        )
    }

    pub fn transform(&self) -> &NormalizationTransform {
        &self.transform
    }

    pub fn set_transform(&mut self, transform: NormalizationTransform) -> Result<()> {
        if transform.dim() != self.arch.input_dim {
            return Err(Error::InvalidArgument("transform dimension mismatch".into()));
        }
        self.transform = transform;
        Ok(())
    }

    fn check_inputs(&self, xs: &[f64]) -> Result<()> {
        let d = self.arch.input_dim;
        if xs.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "input length {} is not a multiple of {d}",
                xs.len()
            )));
        }
        if let Some(i) = xs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "query coordinate",
                index: i / d,
            });
        }
        Ok(())
    }

    /// Value, gradient and Hessian at one normalized-space point.
    pub fn forward_jet(&self, x: &[f64]) -> Result<Jet> {
        if x.len() != self.arch.input_dim {
            return Err(Error::InvalidArgument(format!(
                "expected a {}-vector, got {} values",
                self.arch.input_dim,
                x.len()
            )));
        }
        self.check_inputs(x)?;
        Ok(engine::forward(self, x, JetOrder::Hessian, false).jet(self.arch.input_dim, 0))
    }

    /// Pointwise jets for flat inputs, split into parallel chunks and
    /// returned in input order.
    pub fn forward_batch(&self, xs: &[f64], order: JetOrder) -> Result<Vec<Jet>> {
        self.check_inputs(xs)?;
        let d = self.arch.input_dim;
        let chunks: Vec<Vec<Jet>> = xs
            .par_chunks(CHUNK * d)
            .map(|c| engine::forward(self, c, order, false).jets(d))
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Field values only.
    pub fn values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(xs)?;
        let d = self.arch.input_dim;
        let chunks: Vec<Vec<f64>> = xs
            .par_chunks(CHUNK * d)
            .map(|c| engine::forward(self, c, JetOrder::Value, false).out)
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }
}

impl ScalarField for SineNetwork {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        self.forward_jet(x)
    }

    fn jets(&self, xs: &[f64], order: JetOrder) -> Result<Vec<Jet>> {
        self.forward_batch(xs, order)
    }
}
