//! Loss terms, their pointwise derivatives with respect to the jet, and the
//! annealing factor applied to the regularizer.
//!
//! Every term is an arithmetic mean over its sample set. Absolute values use
//! `sign(0) = 0` as subgradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Jet, JetOrder, ScalarField};
use crate::sampler::SampleBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Mean `|det H|` over the near-surface queries.
    SingularHessian,
    /// Mean `0.5 |grad f|^2` over surface and far points.
    Dirichlet,
    /// Mean squared Frobenius norm of H over surface and far points.
    HessianL2,
    /// Mean elementwise L1 norm of H over surface and far points.
    HessianL1,
    /// Mean `|trace H|` (or its square) over surface and far points.
    Laplacian,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EikonalMode {
    /// `max(0, sigma_min - |grad f|)` on the input points.
    RelaxedOnP,
    /// `| |grad f| - 1 |` on the input points.
    ExactOnP,
    /// `| |grad f| - 1 |` on input and far points.
    ExactOnAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neumann {
    Off,
    On(f64),
}

/// Smoothness energies available as regularizer ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothEnergy {
    Dirichlet,
    HessianL2,
    HessianL1,
    Laplacian,
    LaplacianSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_manifold: f64,
    pub lambda_non_manifold: f64,
    pub lambda_eikonal_relax: f64,
    /// Weight of the regularizer slot, whatever its kind.
    pub lambda_singular_hessian: f64,
    pub alpha: f64,
    pub sigma_min: f64,
    pub regularizer: Regularizer,
    pub eikonal_mode: EikonalMode,
    pub neumann: Neumann,
    /// Square the trace instead of taking its absolute value.
    pub laplacian_squared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_manifold: 7000.0,
            lambda_non_manifold: 600.0,
            lambda_eikonal_relax: 50.0,
            lambda_singular_hessian: 3.0,
            alpha: 100.0,
            sigma_min: 0.8,
            regularizer: Regularizer::SingularHessian,
            eikonal_mode: EikonalMode::RelaxedOnP,
            neumann: Neumann::Off,
            laplacian_squared: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_manifold", self.lambda_manifold),
            ("lambda_non_manifold", self.lambda_non_manifold),
            ("lambda_eikonal_relax", self.lambda_eikonal_relax),
            ("lambda_singular_hessian", self.lambda_singular_hessian),
            ("neumann", self.neumann_weight()),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= 1.0) {
            return Err(Error::Config(format!("sigma_min must lie in (0, 1], got {}", self.sigma_min)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn neumann_weight(&self) -> f64 {
        match self.neumann {
            Neumann::Off => 0.0,
            Neumann::On(w) => w,
        }
    }

    pub fn smooth_energy(&self) -> Option<SmoothEnergy> {
        match self.regularizer {
            Regularizer::Dirichlet => Some(SmoothEnergy::Dirichlet),
            Regularizer::HessianL2 => Some(SmoothEnergy::HessianL2),
            Regularizer::HessianL1 => Some(SmoothEnergy::HessianL1),
            Regularizer::Laplacian if self.laplacian_squared => Some(SmoothEnergy::LaplacianSquared),
            Regularizer::Laplacian => Some(SmoothEnergy::Laplacian),
            Regularizer::SingularHessian | Regularizer::None => None,
        }
    }

    /// Jet orders needed on the (surface, far, near) sets; `None` skips a set.
    pub fn required_orders(&self) -> (JetOrder, JetOrder, Option<JetOrder>) {
        let mut surface = JetOrder::Gradient;
        let mut far = JetOrder::Value;
        if self.eikonal_mode == EikonalMode::ExactOnAll {
            far = JetOrder::Gradient;
        }
        match self.smooth_energy() {
            Some(SmoothEnergy::Dirichlet) => far = far.max(JetOrder::Gradient),
            Some(_) => {
                surface = JetOrder::Hessian;
                far = JetOrder::Hessian;
            }
            None => {}
        }
        let near = (self.regularizer == Regularizer::SingularHessian).then_some(JetOrder::Hessian);
        (surface, far, near)
    }
}

/// Piecewise schedule for the regularizer weight: 1 on the plateau, linear
/// down to `mid_value` at the end of the ramp, then down to `final_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub plateau_frac: f64,
    pub ramp_end_frac: f64,
    pub mid_value: f64,
    pub final_value: f64,
    pub final_leg: FinalLeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalLeg {
    Linear,
    LogLinear,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            plateau_frac: 0.2,
            ramp_end_frac: 0.4,
            mid_value: 0.0003,
            final_value: 0.00003,
            final_leg: FinalLeg::Linear,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let ScheduleConfig {
            plateau_frac: p,
            ramp_end_frac: r,
            mid_value: m,
            final_value: f,
            ..
        } = *self;
        if !(0.0 <= p && p <= r && r <= 1.0) {
            return Err(Error::Config(format!(
                "schedule knots must satisfy 0 <= plateau_frac <= ramp_end_frac <= 1, got {p}, {r}"
            )));
        }
        if !(0.0 < f && f <= m && m <= 1.0) {
            return Err(Error::Config(format!(
                "schedule values must satisfy 0 < final_value <= mid_value <= 1, got {m}, {f}"
            )));
        }
        Ok(())
    }

    pub fn for_iters(&self, total_iters: usize) -> AnnealSchedule {
        AnnealSchedule {
            total_iters,
            shape: self.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    pub total_iters: usize,
    pub shape: ScheduleConfig,
}

/// `(1 - s) a + s b`, exact at both ends.
fn lerp(a: f64, b: f64, s: f64) -> f64 {
    (1.0 - s) * a + s * b
}

/// Annealing factor at `iter` in `[0, total_iters]`.
pub fn tau(schedule: &AnnealSchedule, iter: usize) -> Result<f64> {
    let t = schedule.total_iters;
    if t == 0 || iter > t {
        return Err(Error::InvalidArgument(format!("iteration {iter} outside [0, {t}]")));
    }
    let s = &schedule.shape;
    let x = iter as f64 / t as f64;
    if x < s.plateau_frac {
        return Ok(1.0);
    }
    if x < s.ramp_end_frac {
        let u = (x - s.plateau_frac) / (s.ramp_end_frac - s.plateau_frac);
        return Ok(lerp(1.0, s.mid_value, u));
    }
    if s.ramp_end_frac >= 1.0 {
        return Ok(s.mid_value);
    }
    let u = ((x - s.ramp_end_frac) / (1.0 - s.ramp_end_frac)).clamp(0.0, 1.0);
    Ok(match s.final_leg {
        FinalLeg::Linear => lerp(s.mid_value, s.final_value, u),
        FinalLeg::LogLinear if u == 0.0 => s.mid_value,
        FinalLeg::LogLinear if u == 1.0 => s.final_value,
        FinalLeg::LogLinear => lerp(s.mid_value.ln(), s.final_value.ln(), u).exp(),
    })
}

/// Mean values of every term, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub manifold: f64,
    pub non_manifold: f64,
    pub eikonal: f64,
    pub regularizer: f64,
    pub neumann: Option<f64>,
}

/// Weighted sum; only the regularizer slot is scaled by `tau`.
pub fn total_loss(terms: &LossTerms, config: &LossConfig, tau: f64) -> f64 {
    let mut total = config.lambda_manifold * terms.manifold
        + config.lambda_non_manifold * terms.non_manifold
        + config.lambda_eikonal_relax * terms.eikonal
        + config.lambda_singular_hessian * tau * terms.regularizer;
    if let (Neumann::On(w), Some(n)) = (config.neumann, terms.neumann) {
        total += w * n;
    }
    total
}

/// Derivative of a pointwise loss with respect to the jet entries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cotangent {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl Cotangent {
    pub(crate) fn add_scaled(&mut self, o: &Cotangent, k: f64) {
        self.value += k * o.value;
        for i in 0..3 {
            self.grad[i] += k * o.grad[i];
            for j in 0..3 {
                self.hess[i][j] += k * o.hess[i][j];
            }
        }
    }
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pointwise kernels: each returns the loss contribution at one jet and its cotangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Kernel {
    Manifold,
    NonManifold { alpha: f64 },
    EikonalRelaxed { sigma_min: f64 },
    EikonalExact,
    SingularHessian,
    Smooth(SmoothEnergy),
    Neumann,
}

impl Kernel {
    pub(crate) fn eval(self, j: &Jet, normal: Option<&[f64]>) -> (f64, Cotangent) {
        let d = j.dim;
        let mut c = Cotangent::default();
        let v = match self {
            Kernel::Manifold => {
                c.value = sign(j.value);
                j.value.abs()
            }
            Kernel::NonManifold { alpha } => {
                let e = (-alpha * j.value.abs()).exp();
                c.value = -alpha * sign(j.value) * e;
                e
            }
            Kernel::EikonalRelaxed { sigma_min } => {
                let g = j.grad_norm();
                if g < sigma_min {
                    if g > 0.0 {
                        for i in 0..d {
                            c.grad[i] = -j.grad[i] / g;
                        }
                    }
                    sigma_min - g
                } else {
                    0.0
                }
            }
            Kernel::EikonalExact => {
                let g = j.grad_norm();
                if g > 0.0 {
                    let s = sign(g - 1.0);
                    for i in 0..d {
                        c.grad[i] = s * j.grad[i] / g;
                    }
                }
                (g - 1.0).abs()
            }
            Kernel::SingularHessian => {
                let (det, ddet) = crate::graddiff::det_and_derivative(&j.hess, d);
                let s = sign(det);
                for a in 0..d {
                    for b in 0..d {
                        c.hess[a][b] = s * ddet[a][b];
                    }
                }
                det.abs()
            }
            Kernel::Smooth(kind) => match kind {
                SmoothEnergy::Dirichlet => {
                    c.grad[..d].copy_from_slice(&j.grad[..d]);
                    0.5 * j.grad().iter().map(|g| g * g).sum::<f64>()
                }
                SmoothEnergy::HessianL2 => {
                    let mut s = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            s += j.hess[a][b] * j.hess[a][b];
                            c.hess[a][b] = 2.0 * j.hess[a][b];
                        }
                    }
                    s
                }
                SmoothEnergy::HessianL1 => {
                    let mut s = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            s += j.hess[a][b].abs();
                            c.hess[a][b] = sign(j.hess[a][b]);
                        }
                    }
                    s
                }
                SmoothEnergy::Laplacian => {
                    let tr = j.hess_trace();
                    for a in 0..d {
                        c.hess[a][a] = sign(tr);
                    }
                    tr.abs()
                }
                SmoothEnergy::LaplacianSquared => {
                    let tr = j.hess_trace();
                    for a in 0..d {
                        c.hess[a][a] = 2.0 * tr;
                    }
                    tr * tr
                }
            },
            Kernel::Neumann => {
                let n = normal.expect("neumann kernel needs normals");
                let mut dot = 0.0;
                for i in 0..d {
                    dot += j.grad[i] * n[i];
                    c.grad[i] = -n[i];
                }
                1.0 - dot
            }
        };
        (v, c)
    }
}

fn mean_of(jets: &[Jet], what: &'static str, f: impl Fn(&Jet) -> f64) -> Result<f64> {
    if jets.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(jets.iter().map(f).sum::<f64>() / jets.len() as f64)
}

/// Mean `|f|` over the input points.
pub fn manifold_loss(jets: &[Jet]) -> Result<f64> {
    mean_of(jets, "manifold set", |j| Kernel::Manifold.eval(j, None).0)
}

/// Mean `exp(-alpha |f|)` over the far queries.
pub fn non_manifold_loss(jets: &[Jet], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    mean_of(jets, "non-manifold set", |j| {
        Kernel::NonManifold { alpha }.eval(j, None).0
    })
}

/// Gradient-norm term over whatever domain the caller passes for `mode`.
pub fn eikonal_loss(jets: &[Jet], mode: EikonalMode, sigma_min: f64) -> Result<f64> {
    let k = match mode {
        EikonalMode::RelaxedOnP => Kernel::EikonalRelaxed { sigma_min },
        _ => Kernel::EikonalExact,
    };
    mean_of(jets, "eikonal set", |j| k.eval(j, None).0)
}

/// Mean `|det H|` over the near-surface queries.
pub fn singular_hessian_loss(jets: &[Jet]) -> Result<f64> {
    mean_of(jets, "near-surface set", |j| Kernel::SingularHessian.eval(j, None).0)
}

pub fn smooth_energy_loss(jets: &[Jet], kind: SmoothEnergy) -> Result<f64> {
    mean_of(jets, "smooth-energy set", |j| Kernel::Smooth(kind).eval(j, None).0)
}

/// Mean `1 - <grad f, n>` over the input points.
pub fn neumann_loss(jets: &[Jet], normals: Option<&[f64]>) -> Result<f64> {
    let normals = normals.ok_or(Error::MissingNormals)?;
    if jets.is_empty() {
        return Err(Error::Empty("neumann set"));
    }
    let d = jets[0].dim;
    if normals.len() != jets.len() * d {
        return Err(Error::NormalCountMismatch {
            points: jets.len(),
            normals: normals.len() / d,
        });
    }
    Ok(jets
        .iter()
        .zip(normals.chunks_exact(d))
        .map(|(j, n)| Kernel::Neumann.eval(j, Some(n)).0)
        .sum::<f64>()
        / jets.len() as f64)
}

/// Evaluates every active term on `batch` directly from field jets.
pub fn evaluate(field: &dyn ScalarField, batch: &SampleBatch, config: &LossConfig) -> Result<LossTerms> {
    let (so, fo, no) = config.required_orders();
    let surface = field.jets(&batch.surface_points, so)?;
    let far = field.jets(&batch.far_points, fo)?;
    let both = || surface.iter().chain(&far).copied().collect::<Vec<_>>();
    let eikonal = match config.eikonal_mode {
        EikonalMode::ExactOnAll => eikonal_loss(&both(), config.eikonal_mode, config.sigma_min)?,
        mode => eikonal_loss(&surface, mode, config.sigma_min)?,
    };
    let regularizer = match (config.smooth_energy(), no) {
        (Some(kind), _) => smooth_energy_loss(&both(), kind)?,
        (None, Some(order)) => singular_hessian_loss(&field.jets(&batch.near_points, order)?)?,
        (None, None) => 0.0,
    };
    let neumann = match config.neumann {
        Neumann::Off => None,
        Neumann::On(_) => Some(neumann_loss(&surface, batch.surface_normals.as_deref())?),
    };
    Ok(LossTerms {
        manifold: manifold_loss(&surface)?,
        non_manifold: non_manifold_loss(&far, config.alpha)?,
        eikonal,
        regularizer,
        neumann,
    })
}
