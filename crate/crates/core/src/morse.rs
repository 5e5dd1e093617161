//! Critical points of a field inside the thin shell `|f| < delta`, their
//! Morse classification, and jet statistics over the shell.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{evaluate_grid, BoxDomain, GridQuantity};
use crate::error::{Error, Result};
use crate::field::{Jet, JetOrder, ScalarField};
use crate::geometry::{PointCloud, ScalarGrid};
use crate::sampler::compute_sigmas;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorseConfig {
    /// Nodes per axis of the seed grid.
    pub resolution: usize,
    /// Shell half-width.
    pub delta: f64,
    pub gradient_tolerance: f64,
    pub max_newton_steps: usize,
    pub dedup_radius: f64,
    /// Eigenvalues below this magnitude mark a degenerate point.
    pub degenerate_threshold: f64,
}

impl Default for MorseConfig {
    fn default() -> Self {
        MorseConfig {
            resolution: 64,
            delta: 0.05,
            gradient_tolerance: 1e-8,
            max_newton_steps: 50,
            dedup_radius: 1e-4,
            degenerate_threshold: 1e-6,
        }
    }
}

const TIKHONOV: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Minimum,
    /// One negative eigenvalue (the only saddle type in 2D).
    Saddle1,
    /// Two negative eigenvalues (3D only).
    Saddle2,
    Maximum,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub position: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub kind: CriticalKind,
}

impl CriticalPoint {
    /// Number of negative eigenvalues, or `None` for degenerate points.
    pub fn index(&self) -> Option<usize> {
        (self.kind != CriticalKind::Degenerate).then(|| self.eigenvalues.iter().filter(|&&l| l < 0.0).count())
    }
}

fn hessian_matrix(j: &Jet) -> DMatrix<f64> {
    let d = j.dim;
    DMatrix::from_fn(d, d, |a, b| 0.5 * (j.hess[a][b] + j.hess[b][a]))
}

/// Sorted Hessian eigenvalues and the resulting kind.
pub fn classify(j: &Jet, degenerate_threshold: f64) -> (Vec<f64>, CriticalKind) {
    let d = j.dim;
    let mut eig: Vec<f64> = SymmetricEigen::new(hessian_matrix(j)).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    if eig.iter().any(|l| l.abs() < degenerate_threshold) {
        return (eig, CriticalKind::Degenerate);
    }
    let neg = eig.iter().filter(|&&l| l < 0.0).count();
    let kind = match neg {
        0 => CriticalKind::Minimum,
        n if n == d => CriticalKind::Maximum,
        1 => CriticalKind::Saddle1,
        _ => CriticalKind::Saddle2,
    };
    (eig, kind)
}

/// One Newton update `-(H + mu I)^-1 grad f`; the shift is only applied
/// when the plain system cannot be solved.
pub fn newton_step(j: &Jet) -> Option<Vec<f64>> {
    let d = j.dim;
    let h = hessian_matrix(j);
    let g = DVector::from_iterator(d, j.grad().iter().map(|v| -v));
    let solve = |m: DMatrix<f64>| m.lu().solve(&g).filter(|s| s.iter().all(|v| v.is_finite()));
    solve(h.clone())
        .or_else(|| solve(h + DMatrix::identity(d, d) * TIKHONOV))
        .map(|s| s.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    /// Retained points in seed order, degenerate ones included.
    pub points: Vec<CriticalPoint>,
    pub seeds: usize,
    pub non_converged: usize,
}

fn local_minima(grid: &ScalarGrid) -> Vec<Vec<usize>> {
    let dims = grid.dims().to_vec();
    let d = dims.len();
    let total: usize = dims.iter().product();
    let mut out = Vec::new();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|c| (0..d).map(|a| (c / 3usize.pow(a as u32) % 3) as i64 - 1).collect())
        .filter(|o: &Vec<i64>| o.iter().any(|&x| x != 0))
        .collect();
    let mut idx = vec![0usize; d];
    for flat in 0..total {
        let mut r = flat;
        for a in (0..d).rev() {
            idx[a] = r % dims[a];
            r /= dims[a];
        }
        let v = grid.values()[flat];
        let is_min = offsets.iter().all(|o| {
            let mut nb = vec![0usize; d];
            for a in 0..d {
                let x = idx[a] as i64 + o[a];
                if x < 0 || x >= dims[a] as i64 {
                    return true;
                }
                nb[a] = x as usize;
            }
            v <= grid.get(&nb)
        });
        if is_min {
            out.push(idx.clone());
        }
    }
    out
}

fn inside(domain: &BoxDomain, x: &[f64]) -> bool {
    x.iter().zip(domain.min.iter().zip(&domain.max)).all(|(v, (lo, hi))| lo <= v && v <= hi)
}

fn refine(field: &dyn ScalarField, start: Vec<f64>, domain: &BoxDomain, max_step: f64, config: &MorseConfig) -> Option<Vec<f64>> {
    let mut x = start;
    for _ in 0..config.max_newton_steps {
        let j = field.jet(&x).ok()?;
        if j.grad_norm() < config.gradient_tolerance {
            return Some(x);
        }
        let mut s = newton_step(&j)?;
        let len = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > max_step {
            s.iter_mut().for_each(|v| *v *= max_step / len);
        }
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        if !inside(domain, &x) {
            return None;
        }
    }
    let j = field.jet(&x).ok()?;
    (j.grad_norm() < config.gradient_tolerance).then_some(x)
}

/// Newton refinement from the local minima of `|grad f|` on a seed grid,
/// followed by deduplication, the shell filter and classification.
pub fn find_critical_points(field: &dyn ScalarField, domain: &BoxDomain, config: &MorseConfig) -> Result<CriticalSearch> {
    if config.resolution < 8 {
        return Err(Error::InvalidArgument(format!("seed grid resolution must be at least 8, got {}", config.resolution)));
    }
    if !(config.delta > 0.0) {
        return Err(Error::InvalidArgument(format!("shell half-width must be positive, got {}", config.delta)));
    }
    let grid = evaluate_grid(field, config.resolution, domain, &[GridQuantity::GradNorm])?
        .pop()
        .expect("one grid");
    let seeds = local_minima(&grid);
    let max_step = 4.0 * grid.spacing().iter().cloned().fold(0.0, f64::max);
    let refined: Vec<Option<Vec<f64>>> = seeds
        .par_iter()
        .map(|s| refine(field, grid.node_position(s), domain, max_step, config))
        .collect();
    let non_converged = refined.iter().filter(|r| r.is_none()).count();

    let r2 = config.dedup_radius * config.dedup_radius;
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for x in refined.into_iter().flatten() {
        if kept.iter().all(|k| crate::spatial::dist2(k, &x) > r2) {
            kept.push(x);
        }
    }
    let mut points = Vec::new();
    for x in kept {
        let j = field.jet(&x)?;
        if j.value.abs() >= config.delta {
            continue;
        }
        let (eigenvalues, kind) = classify(&j, config.degenerate_threshold);
        points.push(CriticalPoint {
            position: x,
            value: j.value,
            grad_norm: j.grad_norm(),
            eigenvalues,
            kind,
        });
    }
    Ok(CriticalSearch {
        points,
        seeds: seeds.len(),
        non_converged,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShellStats {
    pub samples: usize,
    pub acceptance_rate: f64,
    pub mean_abs_det: f64,
    pub max_abs_det: f64,
    pub mean_abs_trace: f64,
    pub max_abs_trace: f64,
    pub mean_grad_norm: f64,
    pub max_grad_norm: f64,
}

impl ShellStats {
    pub fn from_jets(jets: &[Jet]) -> Self {
        let n = jets.len().max(1) as f64;
        let mut s = ShellStats {
            samples: jets.len(),
            ..Default::default()
        };
        for j in jets {
            let (det, tr, g) = (j.hess_det().abs(), j.hess_trace().abs(), j.grad_norm());
            s.mean_abs_det += det / n;
            s.mean_abs_trace += tr / n;
            s.mean_grad_norm += g / n;
            s.max_abs_det = s.max_abs_det.max(det);
            s.max_abs_trace = s.max_abs_trace.max(tr);
            s.max_grad_norm = s.max_grad_norm.max(g);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseReport {
    pub dim: usize,
    pub minima: usize,
    pub saddle1: usize,
    /// Always 0 in 2D.
    pub saddle2: usize,
    pub maxima: usize,
    /// Excluded from the alternating sum.
    pub degenerate: usize,
    pub euler_characteristic: i64,
    pub delta: f64,
    pub seeds: usize,
    pub non_converged: usize,
    pub shell: Option<ShellStats>,
    pub points: Vec<CriticalPoint>,
}

/// Counts by kind and the alternating sum of counts by Morse index.
pub fn census(dim: usize, points: &[CriticalPoint]) -> MorseReport {
    let count = |k| points.iter().filter(|p| p.kind == k).count();
    let euler = points
        .iter()
        .filter_map(|p| p.index())
        .map(|i| if i % 2 == 0 { 1i64 } else { -1 })
        .sum();
    MorseReport {
        dim,
        minima: count(CriticalKind::Minimum),
        saddle1: count(CriticalKind::Saddle1),
        saddle2: count(CriticalKind::Saddle2),
        maxima: count(CriticalKind::Maximum),
        degenerate: count(CriticalKind::Degenerate),
        euler_characteristic: euler,
        delta: 0.0,
        seeds: 0,
        non_converged: 0,
        shell: None,
        points: points.to_vec(),
    }
}

/// Jet statistics over `n` points with `|f| < delta`, drawn as Gaussian
/// perturbations of the (normalized) cloud points.
pub fn shell_statistics<R: Rng + ?Sized>(
    field: &dyn ScalarField,
    cloud: &PointCloud,
    delta: f64,
    n: usize,
    rng: &mut R,
) -> Result<ShellStats> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("shell half-width must be positive, got {delta}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one shell sample".into()));
    }
    let d = cloud.dim();
    let sigmas = compute_sigmas(cloud, crate::sampler::DEFAULT_K.min(cloud.len().saturating_sub(1)).max(1))?;
    let cap = 1000 * n;
    let batch = n.clamp(256, 8192);
    let mut accepted: Vec<Jet> = Vec::with_capacity(n);
    let mut attempted = 0;
    while accepted.len() < n && attempted < cap {
        let mut pts = Vec::with_capacity(batch * d);
        for _ in 0..batch {
            let i = rng.random_range(0..cloud.len());
            for &c in cloud.point(i) {
                let z: f64 = StandardNormal.sample(rng);
                pts.push(c + sigmas[i] * z);
            }
        }
        attempted += batch;
        let jets = field.jets(&pts, JetOrder::Hessian)?;
        accepted.extend(jets.into_iter().filter(|j| j.value.abs() < delta).take(n - accepted.len()));
    }
    if accepted.len() < n {
        return Err(Error::SamplingFailure {
            accepted: accepted.len(),
            attempted,
        });
    }
    let mut s = ShellStats::from_jets(&accepted);
    s.acceptance_rate = accepted.len() as f64 / attempted as f64;
    Ok(s)
}

/// Full analysis: critical points in the domain and, when a cloud is
/// given, shell statistics around it.
pub fn analyze<R: Rng + ?Sized>(
    field: &dyn ScalarField,
    domain: &BoxDomain,
    config: &MorseConfig,
    cloud: Option<&PointCloud>,
    shell_samples: usize,
    rng: &mut R,
) -> Result<MorseReport> {
    let search = find_critical_points(field, domain, config)?;
    let mut report = census(field.dim(), &search.points);
    report.delta = config.delta;
    report.seeds = search.seeds;
    report.non_converged = search.non_converged;
    if let Some(c) = cloud {
        report.shell = Some(shell_statistics(field, c, config.delta, shell_samples, rng)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wide(delta: f64) -> MorseConfig {
        MorseConfig {
            resolution: 16,
            delta,
            ..Default::default()
        }
    }

    #[test]
    fn paraboloid_has_one_minimum() {
        let f = AnalyticField::Paraboloid { dim: 3 };
        let s = find_critical_points(&f, &BoxDomain::cube(3), &wide(1.0)).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].kind, CriticalKind::Minimum);
        assert!(s.points[0].position.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(census(3, &s.points).euler_characteristic, 1);
    }

    #[test]
    fn saddle_at_origin() {
        let s = find_critical_points(&AnalyticField::Saddle, &BoxDomain::new(vec![-1.0, -0.9], vec![1.1, 1.0]).unwrap(), &wide(1.0)).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].kind, CriticalKind::Saddle1);
        assert_eq!(s.points[0].eigenvalues, vec![-2.0, 2.0]);
    }

    #[test]
    fn shell_filter_drops_far_points() {
        let f = AnalyticField::Paraboloid { dim: 2 };
        let domain = BoxDomain::new(vec![-0.5, -0.5], vec![0.7, 0.7]).unwrap();
        let shifted = AnalyticField::Affine { a: vec![0.0, 0.0], b: 1.0 };
        assert_eq!(find_critical_points(&f, &domain, &wide(0.05)).unwrap().points.len(), 1);
        // constant field: every point is critical but degenerate, and |f| = 1 is outside the shell
        assert!(find_critical_points(&shifted, &domain, &wide(0.05)).unwrap().points.is_empty());
    }

    /// Counts cells of a dense grid whose corners bracket a sign change of
    /// both gradient components, classified by the Hessian at the cell center.
    fn brute_force_counts(lo: f64, hi: f64, n: usize) -> (usize, usize, usize) {
        let h = (hi - lo) / n as f64;
        let g = |x: f64, y: f64| (x.cos() * y.sin(), x.sin() * y.cos());
        let (mut mins, mut saddles, mut maxs) = (0, 0, 0);
        for i in 0..n {
            for j in 0..n {
                let (x0, y0) = (lo + i as f64 * h, lo + j as f64 * h);
                let c = [g(x0, y0), g(x0 + h, y0), g(x0, y0 + h), g(x0 + h, y0 + h)];
                let brackets = |k: usize| {
                    let v: Vec<f64> = c.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect();
                    v.iter().any(|&a| a <= 0.0) && v.iter().any(|&a| a > 0.0)
                };
                if !(brackets(0) && brackets(1)) {
                    continue;
                }
                let (xc, yc) = (x0 + h / 2.0, y0 + h / 2.0);
                let j = AnalyticField::SinProduct.jet(&[xc, yc]).unwrap();
                if j.grad_norm() > 2.0 * h {
                    continue;
                }
                let (hxx, hxy, hyy) = (j.hess[0][0], j.hess[0][1], j.hess[1][1]);
                let det = hxx * hyy - hxy * hxy;
                if det < 0.0 {
                    saddles += 1;
                } else if hxx > 0.0 {
                    mins += 1;
                } else {
                    maxs += 1;
                }
            }
        }
        (mins, saddles, maxs)
    }

    #[test]
    fn sin_product_census_matches_brute_force() {
        let (lo, hi) = (-PI - 0.1, PI + 0.1);
        let domain = BoxDomain::new(vec![lo; 2], vec![hi; 2]).unwrap();
        let config = MorseConfig {
            resolution: 64,
            delta: 2.0,
            ..Default::default()
        };
        let s = find_critical_points(&AnalyticField::SinProduct, &domain, &config).unwrap();
        let r = census(2, &s.points);
        // odd grid size keeps critical points off cell boundaries
        let (mins, saddles, maxs) = brute_force_counts(lo, hi, 1001);
        assert_eq!((r.minima, r.saddle1, r.maxima), (mins, saddles, maxs));
        assert_eq!((mins, saddles, maxs), (2, 9, 2));
        assert_eq!(r.euler_characteristic, r.minima as i64 - r.saddle1 as i64 + r.maxima as i64);
        assert_eq!(r.euler_characteristic, -5);
        for p in &s.points {
            assert!(p.grad_norm < 1e-8);
            let step = newton_step(&AnalyticField::SinProduct.jet(&p.position).unwrap()).unwrap();
            assert!(step.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        }
    }

    #[test]
    fn census_examples() {
        let pt = |kind, eig: Vec<f64>| CriticalPoint {
            position: vec![0.0; 3],
            value: 0.0,
            grad_norm: 0.0,
            eigenvalues: eig,
            kind,
        };
        let min = pt(CriticalKind::Minimum, vec![1.0, 1.0, 1.0]);
        let s1 = pt(CriticalKind::Saddle1, vec![-1.0, 1.0, 1.0]);
        let s2 = pt(CriticalKind::Saddle2, vec![-1.0, -1.0, 1.0]);
        let max = pt(CriticalKind::Maximum, vec![-1.0, -1.0, -1.0]);
        let deg = pt(CriticalKind::Degenerate, vec![0.0, 1.0, 1.0]);
        assert_eq!(census(3, &[min.clone()]).euler_characteristic, 1);
        assert_eq!(census(3, &[min.clone(), s1.clone()]).euler_characteristic, 0);
        let r = census(3, &[min, s1, s2, max, deg]);
        assert_eq!(r.euler_characteristic, 1 - 1 + 1 - 1);
        assert_eq!(r.degenerate, 1);
        let e = census(3, &[]);
        assert_eq!((e.minima, e.saddle1, e.saddle2, e.maxima, e.euler_characteristic), (0, 0, 0, 0, 0));
    }

    #[test]
    fn classification_thresholds() {
        let mut j = Jet::constant(3, 0.0);
        j.hess = [[1.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 1e-7]];
        assert_eq!(classify(&j, 1e-6).1, CriticalKind::Degenerate);
        j.hess[2][2] = -3.0;
        let (eig, kind) = classify(&j, 1e-6);
        assert_eq!(kind, CriticalKind::Saddle2);
        assert_eq!(eig, vec![-3.0, -2.0, 1.0]);
    }

    #[test]
    fn sphere_shell_statistics() {
        let s = AnalyticField::Sphere { center: [0.0; 3], radius: 0.6 };
        let cloud = PointCloud::new(3, s.surface_samples(500).unwrap(), None).unwrap();
        let st = shell_statistics(&s, &cloud, 0.05, 2000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(st.samples, 2000);
        assert!(st.mean_abs_det < 1e-12);
        assert!((st.mean_grad_norm - 1.0).abs() < 1e-12);
        let a = AnalyticField::Affine { a: vec![0.3, -0.4, 0.5], b: 0.0 };
        let plane = PointCloud::new(3, vec![0.0, 0.0, 0.0, 0.4, 0.3, 0.0, -0.5, 0.0, 0.3], None).unwrap();
        let st = shell_statistics(&a, &plane, 0.05, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((st.max_abs_det, st.max_abs_trace), (0.0, 0.0));
        let off = AnalyticField::Affine { a: vec![0.0, 0.0, 0.0], b: 5.0 };
        let err = shell_statistics(&off, &plane, 0.05, 10, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::SamplingFailure { accepted: 0, .. })));
    }
}
