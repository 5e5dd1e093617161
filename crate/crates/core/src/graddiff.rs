//! Parameter gradients of the training loss.
//!
//! Each sample set is pushed through the network at the jet order its terms
//! need, the per-point loss derivatives with respect to value, gradient and
//! Hessian are seeded on the output rows, and one reverse pass over the
//! jet-augmented forward computation accumulates the parameter gradient.
//! Work is split into chunks of [`CHUNK`] points; chunk results are combined
//! sequentially in chunk order so the result does not depend on the thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::JetOrder;
use crate::losses::{total_loss, Cotangent, EikonalMode, Kernel, LossConfig, LossTerms, Neumann, Regularizer};
use crate::sampler::SampleBatch;
use crate::sinenet::engine::{self, hess_pairs};
use crate::sinenet::{LayerShape, SineNetwork, CHUNK};

/// Determinant of the leading `dim x dim` block and its derivative with
/// respect to every entry (the cofactor matrix, i.e. the transposed adjugate).
pub fn det_and_derivative(h: &[[f64; 3]; 3], dim: usize) -> (f64, [[f64; 3]; 3]) {
    let mut c = [[0.0; 3]; 3];
    match dim {
        1 => {
            c[0][0] = 1.0;
            (h[0][0], c)
        }
        2 => {
            c[0][0] = h[1][1];
            c[0][1] = -h[1][0];
            c[1][0] = -h[0][1];
            c[1][1] = h[0][0];
            (h[0][0] * h[1][1] - h[0][1] * h[1][0], c)
        }
        3 => {
            c[0][0] = h[1][1] * h[2][2] - h[1][2] * h[2][1];
            c[0][1] = h[1][2] * h[2][0] - h[1][0] * h[2][2];
            c[0][2] = h[1][0] * h[2][1] - h[1][1] * h[2][0];
            c[1][0] = h[0][2] * h[2][1] - h[0][1] * h[2][2];
            c[1][1] = h[0][0] * h[2][2] - h[0][2] * h[2][0];
            c[1][2] = h[0][1] * h[2][0] - h[0][0] * h[2][1];
            c[2][0] = h[0][1] * h[1][2] - h[0][2] * h[1][1];
            c[2][1] = h[0][2] * h[1][0] - h[0][0] * h[1][2];
            c[2][2] = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let det = h[0][0] * c[0][0] + h[0][1] * c[0][1] + h[0][2] * c[0][2];
            (det, c)
        }
        _ => (1.0, c),
    }
}

/// Gradient of a scalar with respect to every network parameter, in the
/// network's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    layers: Vec<LayerShape>,
    values: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(net: &SineNetwork) -> Self {
        ParamGradient {
            layers: net.layers().to_vec(),
            values: vec![0.0; net.params().len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight and bias gradient of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.layers[l];
        (
            &self.values[s.w_off..s.w_off + s.fan_in * s.fan_out],
            &self.values[s.b_off..s.b_off + s.fan_out],
        )
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub gradient: ParamGradient,
    pub terms: LossTerms,
}

const MANIFOLD: usize = 0;
const NON_MANIFOLD: usize = 1;
const EIKONAL: usize = 2;
const REGULARIZER: usize = 3;
const NEUMANN: usize = 4;
const TERM_NAMES: [&str; 5] = ["manifold", "non_manifold", "eikonal", "regularizer", "neumann"];

#[derive(Clone, Copy)]
struct Contribution {
    term: usize,
    kernel: Kernel,
    /// Scale of the term mean, `1 / |domain|`.
    inv_n: f64,
    /// Weight of the term in the total loss.
    weight: f64,
}

struct SetPlan<'a> {
    points: &'a [f64],
    normals: Option<&'a [f64]>,
    order: JetOrder,
    contributions: Vec<Contribution>,
}

fn plan<'a>(batch: &'a SampleBatch, config: &LossConfig, tau: f64) -> Result<Vec<SetPlan<'a>>> {
    let d = batch.dim;
    let ns = batch.surface_points.len() / d;
    let nf = batch.far_points.len() / d;
    let nn = batch.near_points.len() / d;
    if ns == 0 {
        return Err(Error::Empty("surface points"));
    }
    if nf == 0 {
        return Err(Error::Empty("far points"));
    }
    let (so, fo, no) = config.required_orders();
    let mut surface = vec![Contribution {
        term: MANIFOLD,
        kernel: Kernel::Manifold,
        inv_n: 1.0 / ns as f64,
        weight: config.lambda_manifold,
    }];
    let mut far = vec![Contribution {
        term: NON_MANIFOLD,
        kernel: Kernel::NonManifold { alpha: config.alpha },
        inv_n: 1.0 / nf as f64,
        weight: config.lambda_non_manifold,
    }];
    let mut near = Vec::new();

    let eik = |kernel, inv_n| Contribution {
        term: EIKONAL,
        kernel,
        inv_n,
        weight: config.lambda_eikonal_relax,
    };
    match config.eikonal_mode {
        EikonalMode::RelaxedOnP => surface.push(eik(
            Kernel::EikonalRelaxed {
                sigma_min: config.sigma_min,
            },
            1.0 / ns as f64,
        )),
        EikonalMode::ExactOnP => surface.push(eik(Kernel::EikonalExact, 1.0 / ns as f64)),
        EikonalMode::ExactOnAll => {
            let inv = 1.0 / (ns + nf) as f64;
            surface.push(eik(Kernel::EikonalExact, inv));
            far.push(eik(Kernel::EikonalExact, inv));
        }
    }

    let reg_weight = config.lambda_singular_hessian * tau;
    if let Some(kind) = config.smooth_energy() {
        let c = Contribution {
            term: REGULARIZER,
            kernel: Kernel::Smooth(kind),
            inv_n: 1.0 / (ns + nf) as f64,
            weight: reg_weight,
        };
        surface.push(c);
        far.push(c);
    } else if config.regularizer == Regularizer::SingularHessian {
        if nn == 0 {
            return Err(Error::Empty("near-surface points"));
        }
        near.push(Contribution {
            term: REGULARIZER,
            kernel: Kernel::SingularHessian,
            inv_n: 1.0 / nn as f64,
            weight: reg_weight,
        });
    }

    if let Neumann::On(w) = config.neumann {
        if batch.surface_normals.is_none() {
            return Err(Error::MissingNormals);
        }
        surface.push(Contribution {
            term: NEUMANN,
            kernel: Kernel::Neumann,
            inv_n: 1.0 / ns as f64,
            weight: w,
        });
    }

    let mut plans = vec![
        SetPlan {
            points: &batch.surface_points,
            normals: batch.surface_normals.as_deref(),
            order: so,
            contributions: surface,
        },
        SetPlan {
            points: &batch.far_points,
            normals: None,
            order: fo,
            contributions: far,
        },
    ];
    if let Some(order) = no {
        plans.push(SetPlan {
            points: &batch.near_points,
            normals: None,
            order,
            contributions: near,
        });
    }
    Ok(plans)
}

struct ChunkResult {
    sums: [f64; 5],
    grad: Vec<f64>,
}

fn run_chunk(net: &SineNetwork, set: &SetPlan, start: usize, end: usize) -> ChunkResult {
    let d = net.architecture().input_dim;
    let pairs = hess_pairs(d);
    let xs = &set.points[start * d..end * d];
    let tape = engine::forward(net, xs, set.order, true);
    let c = tape.c;
    let mut seed = vec![0.0; tape.n * c];
    let mut sums = [0.0; 5];
    for p in 0..tape.n {
        let jet = tape.jet(d, p);
        let normal = set.normals.map(|n| &n[(start + p) * d..(start + p + 1) * d]);
        let mut cot = Cotangent::default();
        for k in &set.contributions {
            let (v, dv) = k.kernel.eval(&jet, normal);
            sums[k.term] += v * k.inv_n;
            cot.add_scaled(&dv, k.weight * k.inv_n);
        }
        let rows = &mut seed[p * c..(p + 1) * c];
        rows[0] = cot.value;
        if set.order >= JetOrder::Gradient {
            rows[1..1 + d].copy_from_slice(&cot.grad[..d]);
        }
        if set.order == JetOrder::Hessian {
            for (k, &(a, b)) in pairs.iter().enumerate() {
                rows[1 + d + k] = if a == b {
                    cot.hess[a][a]
                } else {
                    cot.hess[a][b] + cot.hess[b][a]
                };
            }
        }
    }
    let mut grad = vec![0.0; net.params().len()];
    engine::backward(net, &tape, &seed, &mut grad);
    ChunkResult { sums, grad }
}

fn term_values(sums: &[f64; 5], config: &LossConfig) -> LossTerms {
    LossTerms {
        manifold: sums[MANIFOLD],
        non_manifold: sums[NON_MANIFOLD],
        eikonal: sums[EIKONAL],
        regularizer: sums[REGULARIZER],
        neumann: matches!(config.neumann, Neumann::On(_)).then_some(sums[NEUMANN]),
    }
}

/// Total loss on `batch`, its per-term breakdown and its exact parameter
/// gradient. `tau` scales the regularizer weight.
pub fn loss_and_grad(net: &SineNetwork, batch: &SampleBatch, config: &LossConfig, tau: f64) -> Result<LossAndGrad> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
    }
    let d = net.architecture().input_dim;
    if batch.dim != d {
        return Err(Error::InvalidArgument(format!(
            "batch dimension {} does not match network input dimension {d}",
            batch.dim
        )));
    }
    let plans = plan(batch, config, tau)?;
    for set in &plans {
        if let Some(i) = set.points.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "sample coordinate",
                index: i / d,
            });
        }
    }

    let tasks: Vec<(usize, usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(s, set)| {
            let n = set.points.len() / d;
            (0..n).step_by(CHUNK).map(move |a| (s, a, (a + CHUNK).min(n)))
        })
        .collect();

    // Bounded waves keep at most one tape per thread alive.
    let wave = rayon::current_num_threads().max(1);
    let mut sums = [0.0; 5];
    let mut grad = ParamGradient::zeros(net);
    for group in tasks.chunks(wave) {
        let results: Vec<ChunkResult> = group
            .par_iter()
            .map(|&(s, a, b)| run_chunk(net, &plans[s], a, b))
            .collect();
        for r in results {
            for t in 0..5 {
                sums[t] += r.sums[t];
            }
            grad.values.iter_mut().zip(&r.grad).for_each(|(g, x)| *g += x);
        }
    }

    let terms = term_values(&sums, config);
    for (t, v) in sums.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: TERM_NAMES[t],
                iteration: None,
            });
        }
    }
    let loss = total_loss(&terms, config, tau);
    if !grad.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: diagnose(net, batch, config, tau),
            iteration: None,
        });
    }
    Ok(LossAndGrad {
        loss,
        gradient: grad,
        terms,
    })
}

/// Finds the first term whose gradient alone is non-finite.
fn diagnose(net: &SineNetwork, batch: &SampleBatch, config: &LossConfig, tau: f64) -> &'static str {
    let only = |t: usize| {
        let mut c = config.clone();
        c.lambda_manifold = if t == MANIFOLD { c.lambda_manifold } else { 0.0 };
        c.lambda_non_manifold = if t == NON_MANIFOLD { c.lambda_non_manifold } else { 0.0 };
        c.lambda_eikonal_relax = if t == EIKONAL { c.lambda_eikonal_relax } else { 0.0 };
        c.lambda_singular_hessian = if t == REGULARIZER { c.lambda_singular_hessian } else { 0.0 };
        if t != NEUMANN && matches!(c.neumann, Neumann::On(_)) {
            c.neumann = Neumann::On(0.0);
        }
        c
    };
    for t in 0..5 {
        match loss_and_grad(net, batch, &only(t), tau) {
            Err(Error::NonFiniteLoss { .. }) => return TERM_NAMES[t],
            _ => continue,
        }
    }
    "unknown"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses;
    use crate::sinenet::{Activation, Architecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let v = rng.random_range(-2.0..2.0);
                h[a][b] = v;
                h[b][a] = v;
            }
        }
        h
    }

    #[test]
    fn det_examples() {
        let diag = |a, b, c| [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]];
        let (det, dd) = det_and_derivative(&diag(1.0, 2.0, 3.0), 3);
        assert_eq!(det, 6.0);
        assert_eq!(dd, diag(6.0, 3.0, 2.0));
        let (det, dd) = det_and_derivative(&diag(1.0, 2.0, 0.0), 3);
        assert_eq!(det, 0.0);
        assert_eq!(dd, diag(0.0, 0.0, 2.0));
        let (det, dd) = det_and_derivative(&diag(4.0, 5.0, 9.0), 2);
        assert_eq!(det, 20.0);
        assert_eq!(dd, diag(5.0, 4.0, 0.0));
    }

    #[test]
    fn det_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [2, 3] {
            for _ in 0..50 {
                let h = sym(&mut rng);
                let (_, dd) = det_and_derivative(&h, dim);
                for a in 0..dim {
                    for b in 0..dim {
                        let e = 1e-6;
                        let (mut p, mut m) = (h, h);
                        p[a][b] += e;
                        m[a][b] -= e;
                        let fd = (det_and_derivative(&p, dim).0 - det_and_derivative(&m, dim).0) / (2.0 * e);
                        assert!((fd - dd[a][b]).abs() <= 1e-8 * dd[a][b].abs().max(1.0), "{fd} {}", dd[a][b]);
                    }
                }
            }
        }
    }

    fn small_net(d: usize, seed: u64) -> SineNetwork {
        let arch = Architecture {
            input_dim: d,
            hidden_layers: 2,
            width: 16,
            activation: Activation::Sine { omega0: 30.0 },
        };
        SineNetwork::init(arch, seed).unwrap()
    }

    fn random_batch(d: usize, n: usize, seed: u64) -> SampleBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = |r: f64| (0..n * d).map(|_| rng.random_range(-r..r)).collect::<Vec<f64>>();
        let surface = pts(0.8);
        let near = pts(0.9);
        let far = pts(1.0);
        let mut normals = pts(1.0);
        for v in normals.chunks_exact_mut(d) {
            let l = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= l);
        }
        SampleBatch::from_sets(d, surface, Some(normals), near, far).unwrap()
    }

    fn eval_loss(net: &SineNetwork, batch: &SampleBatch, config: &LossConfig, tau: f64) -> f64 {
        total_loss(&losses::evaluate(net, batch, config).unwrap(), config, tau)
    }

    fn single_term_configs() -> Vec<(&'static str, LossConfig)> {
        let zero = LossConfig {
            lambda_manifold: 0.0,
            lambda_non_manifold: 0.0,
            lambda_eikonal_relax: 0.0,
            lambda_singular_hessian: 0.0,
            alpha: 5.0,
            // large enough that some sampled gradients fall below it
            sigma_min: 1.0,
            ..Default::default()
        };
        let mut out = vec![
            ("manifold", LossConfig { lambda_manifold: 1.0, ..zero.clone() }),
            ("non_manifold", LossConfig { lambda_non_manifold: 1.0, ..zero.clone() }),
            ("eikonal_relaxed", LossConfig { lambda_eikonal_relax: 1.0, ..zero.clone() }),
            (
                "eikonal_exact_all",
                LossConfig {
                    lambda_eikonal_relax: 1.0,
                    eikonal_mode: EikonalMode::ExactOnAll,
                    ..zero.clone()
                },
            ),
            ("singular_hessian", LossConfig { lambda_singular_hessian: 1.0, ..zero.clone() }),
            ("neumann", LossConfig { neumann: Neumann::On(1.0), ..zero.clone() }),
            ("total", LossConfig { neumann: Neumann::On(10.0), ..Default::default() }),
        ];
        for (name, reg, sq) in [
            ("dirichlet", Regularizer::Dirichlet, false),
            ("hessian_l2", Regularizer::HessianL2, false),
            ("hessian_l1", Regularizer::HessianL1, false),
            ("laplacian", Regularizer::Laplacian, false),
            ("laplacian_sq", Regularizer::Laplacian, true),
        ] {
            out.push((
                name,
                LossConfig {
                    lambda_singular_hessian: 1.0,
                    regularizer: reg,
                    laplacian_squared: sq,
                    ..zero.clone()
                },
            ));
        }
        out
    }

    fn check_fd(d: usize, seed: u64) {
        let net = small_net(d, seed);
        let batch = random_batch(d, 20, seed + 100);
        let tau = 0.5;
        for (name, config) in single_term_configs() {
            let lg = loss_and_grad(&net, &batch, &config, tau).unwrap();
            let direct = eval_loss(&net, &batch, &config, tau);
            assert!((lg.loss - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{name}: {} vs {direct}", lg.loss);
            let g = lg.gradient.as_slice();
            let mut kinks = 0;
            for i in 0..g.len() {
                let fd = |e: f64| {
                    let mut p = net.clone();
                    p.params_mut()[i] += e;
                    let mut m = net.clone();
                    m.params_mut()[i] -= e;
                    (eval_loss(&p, &batch, &config, tau) - eval_loss(&m, &batch, &config, tau)) / (2.0 * e)
                };
                // Richardson step removes the h^2 error, which is large for omega0 = 30.
                // A stencil straddling a kink of |.| shows up as a gross mismatch
                // between the two steps; those coordinates fall back to a tiny step.
                let (d1, d2) = (fd(1e-5), fd(5e-6));
                let fd = if (d1 - d2).abs() > 1e-3 * d1.abs().max(d2.abs()).max(1e-6) {
                    kinks += 1;
                    fd(1e-8)
                } else {
                    (4.0 * d2 - d1) / 3.0
                };
                let err = (fd - g[i]).abs();
                if err > 1e-8 {
                    let rel = err / fd.abs().max(g[i].abs());
                    assert!(rel < 1e-5, "{name} d={d} param {i}: analytic {} fd {fd}", g[i]);
                }
            }
            assert!(kinks * 20 < g.len(), "{name}: {kinks} kinked coordinates");
        }
    }

    #[test]
    fn gradients_match_finite_differences_2d() {
        check_fd(2, 1);
    }

    #[test]
    fn gradients_match_finite_differences_3d() {
        check_fd(3, 2);
    }

    #[test]
    fn output_bias_gradient_of_value() {
        let net = small_net(3, 5);
        let x = vec![0.1, 0.2, -0.3];
        let f = net.forward_jet(&x).unwrap().value;
        let config = LossConfig {
            lambda_manifold: 1.0,
            lambda_non_manifold: 0.0,
            lambda_eikonal_relax: 0.0,
            lambda_singular_hessian: 0.0,
            regularizer: Regularizer::None,
            ..Default::default()
        };
        let batch = SampleBatch::from_sets(3, x.clone(), None, vec![], x).unwrap();
        let lg = loss_and_grad(&net, &batch, &config, 1.0).unwrap();
        let last = net.layers().len() - 1;
        assert_eq!(lg.gradient.layer(last).1, &[f.signum()]);
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let net = small_net(3, 6);
        let b = random_batch(3, 30, 7);
        let dup = |v: &Vec<f64>| [v.clone(), v.clone()].concat();
        let b2 = SampleBatch::from_sets(
            3,
            dup(&b.surface_points),
            b.surface_normals.as_ref().map(dup),
            dup(&b.near_points),
            dup(&b.far_points),
        )
        .unwrap();
        let c = LossConfig::default();
        let x = loss_and_grad(&net, &b, &c, 0.3).unwrap();
        let y = loss_and_grad(&net, &b2, &c, 0.3).unwrap();
        assert!((x.loss - y.loss).abs() <= 1e-12 * x.loss.abs());
        for (a, b) in x.gradient.as_slice().iter().zip(y.gradient.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn breakdown_sums_to_total_and_is_deterministic() {
        let net = small_net(2, 8);
        let b = random_batch(2, 3000, 9);
        let c = LossConfig::default();
        let x = loss_and_grad(&net, &b, &c, 0.7).unwrap();
        assert_eq!(x.loss, total_loss(&x.terms, &c, 0.7));
        let y = loss_and_grad(&net, &b, &c, 0.7).unwrap();
        assert_eq!(x, y);
        let direct = losses::evaluate(&net, &b, &c).unwrap();
        assert!((direct.regularizer - x.terms.regularizer).abs() <= 1e-12 * direct.regularizer.max(1e-300));
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = small_net(3, 1);
        let b = random_batch(3, 5, 1);
        let c = LossConfig::default();
        assert!(loss_and_grad(&net, &b, &c, 0.0).is_err());
        let no_near = SampleBatch::from_sets(3, b.surface_points.clone(), None, vec![], b.far_points.clone()).unwrap();
        assert!(matches!(loss_and_grad(&net, &no_near, &c, 1.0), Err(Error::Empty(_))));
        let neu = LossConfig {
            neumann: Neumann::On(1.0),
            ..Default::default()
        };
        let b = SampleBatch::from_sets(3, b.surface_points.clone(), None, b.near_points.clone(), b.far_points.clone()).unwrap();
        assert!(matches!(loss_and_grad(&net, &b, &neu, 1.0), Err(Error::MissingNormals)));
    }
}
