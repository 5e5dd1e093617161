//! Per-iteration sample sets: a subset of the input points, one Gaussian
//! draw around each of them, and uniform draws in the normalized cube.

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::KdTree;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 15_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    /// Indices into the input cloud, in draw order.
    pub surface_indices: Vec<usize>,
    pub surface_points: Vec<f64>,
    /// Unit normals of the selected points, when the cloud has them.
    pub surface_normals: Option<Vec<f64>>,
    /// `q_i = p_i + sigma_i z`, aligned with `surface_indices`.
    pub near_points: Vec<f64>,
    pub far_points: Vec<f64>,
    /// Sigma of each selected point.
    pub sigma: Vec<f64>,
}

impl SampleBatch {
    pub fn surface_len(&self) -> usize {
        self.surface_indices.len()
    }

    pub fn far_len(&self) -> usize {
        self.far_points.len() / self.dim
    }

    /// Builds a batch from explicit point sets (mostly for tests and tools).
    pub fn from_sets(dim: usize, surface: Vec<f64>, normals: Option<Vec<f64>>, near: Vec<f64>, far: Vec<f64>) -> Result<Self> {
        if ![&surface, &near, &far].iter().all(|s| s.len() % dim == 0) {
            return Err(Error::InvalidArgument(format!("point sets must hold multiples of {dim} coordinates")));
        }
        if let Some(n) = &normals {
            if n.len() != surface.len() {
                return Err(Error::NormalCountMismatch {
                    points: surface.len() / dim,
                    normals: n.len() / dim,
                });
            }
        }
        let n = surface.len() / dim;
        Ok(SampleBatch {
            dim,
            surface_indices: (0..n).collect(),
            surface_points: surface,
            surface_normals: normals,
            sigma: vec![0.0; near.len() / dim],
            near_points: near,
            far_points: far,
        })
    }
}

/// Distance from each point to its `k`-th nearest neighbor, self excluded.
pub fn compute_sigmas(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::KTooLarge { k, available: n.saturating_sub(1) });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let k = if k >= n {
        log::warn!("cloud has {n} points, clamping k from {k} to {}", n - 1);
        n - 1
    } else {
        k
    };
    let tree = KdTree::build(cloud.dim(), cloud.coords())?;
    (0..n)
        .into_par_iter()
        .map(|i| Ok(tree.knn_of(i, k)?[k - 1].1))
        .collect()
}

pub fn draw_batch<R: Rng + ?Sized>(cloud: &PointCloud, sigmas: &[f64], batch_size: usize, rng: &mut R) -> Result<SampleBatch> {
    let (n, d) = (cloud.len(), cloud.dim());
    if sigmas.len() != n {
        return Err(Error::InvalidArgument(format!("{} sigmas for {n} points", sigmas.len())));
    }
    if batch_size == 0 || n == 0 {
        return Err(Error::Empty("sample batch"));
    }
    let indices: Vec<usize> = if n <= batch_size {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, batch_size).into_vec()
    };
    let mut surface = Vec::with_capacity(indices.len() * d);
    let mut near = Vec::with_capacity(indices.len() * d);
    let mut sigma = Vec::with_capacity(indices.len());
    for &i in &indices {
        let p = cloud.point(i);
        surface.extend_from_slice(p);
        let s = sigmas[i];
        sigma.push(s);
        for &c in p {
            let z: f64 = StandardNormal.sample(rng);
            near.push(c + s * z);
        }
    }
    let normals = cloud.normals().map(|_| {
        indices.iter().flat_map(|&i| cloud.normal(i).unwrap().to_vec()).collect()
    });
    let far = (0..batch_size * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(SampleBatch {
        dim: d,
        surface_indices: indices,
        surface_points: surface,
        surface_normals: normals,
        near_points: near,
        far_points: far,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        PointCloud::new(d, c, None).unwrap()
    }

    #[test]
    fn collinear_and_grid_sigmas() {
        let line = PointCloud::new(2, (0..10).flat_map(|i| [i as f64, 0.0]).collect(), None).unwrap();
        let s = compute_sigmas(&line, 1).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let h = 0.25;
        let grid = PointCloud::new(
            2,
            (0..6).flat_map(|i| (0..6).flat_map(move |j| [i as f64 * h, j as f64 * h])).collect(),
            None,
        )
        .unwrap();
        assert!(compute_sigmas(&grid, 1).unwrap().iter().all(|v| (v - h).abs() < 1e-15));
    }

    #[test]
    fn sigmas_match_brute_force() {
        let c = random_cloud(500, 3, 2);
        let s = compute_sigmas(&c, 50).unwrap();
        for i in 0..500 {
            let mut d: Vec<f64> = (0..500)
                .filter(|&j| j != i)
                .map(|j| crate::spatial::dist2(c.point(i), c.point(j)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            assert_eq!(s[i], d[49]);
        }
    }

    #[test]
    fn k_is_clamped_for_small_clouds() {
        let c = random_cloud(5, 2, 3);
        let s = compute_sigmas(&c, 50).unwrap();
        assert_eq!(s, compute_sigmas(&c, 4).unwrap());
        assert!(compute_sigmas(&random_cloud(1, 2, 3), 1).is_err());
    }

    #[test]
    fn size_rule_and_bounds() {
        let c = random_cloud(100, 3, 4);
        let s = compute_sigmas(&c, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = draw_batch(&c, &s, 15_000, &mut rng).unwrap();
        assert_eq!(b.surface_len(), 100);
        assert_eq!(b.near_points.len(), 300);
        assert_eq!(b.far_len(), 15_000);
        assert!(b.far_points.iter().all(|v| (-1.0..=1.0).contains(v)));
        let b = draw_batch(&c, &s, 30, &mut rng).unwrap();
        assert_eq!(b.surface_len(), 30);
        let mut idx = b.surface_indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 30);
    }

    #[test]
    fn zero_sigma_is_exact_and_seed_is_deterministic() {
        let c = random_cloud(20, 2, 5);
        let zero = vec![0.0; 20];
        let b = draw_batch(&c, &zero, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.near_points, b.surface_points);
        let s = compute_sigmas(&c, 3).unwrap();
        let x = draw_batch(&c, &s, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let y = draw_batch(&c, &s, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn gaussian_offsets_are_centered_and_scale_linearly() {
        let c = PointCloud::new(3, vec![0.1, -0.2, 0.3, 0.5, 0.5, 0.5], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 50_000;
        let sig = [0.01, 0.04];
        let mut mean = [0.0; 3];
        let mut len = [0.0; 2];
        for _ in 0..draws {
            let b = draw_batch(&c, &sig, 2, &mut rng).unwrap();
            for p in 0..2 {
                let mut r2 = 0.0;
                for a in 0..3 {
                    let z = (b.near_points[3 * p + a] - b.surface_points[3 * p + a]) / sig[p];
                    mean[a] += z;
                    r2 += z * z;
                }
                len[p] += r2.sqrt() * sig[p];
            }
        }
        let total = (2 * draws) as f64;
        assert!(mean.iter().all(|m| (m / total).abs() < 0.02));
        // E|z| for a 3D standard normal is 2 sqrt(2/pi)
        let chi = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        for p in 0..2 {
            let m = len[p] / draws as f64;
            let sd = sig[p] * (3.0 - chi * chi).sqrt() / (draws as f64).sqrt();
            assert!((m - chi * sig[p]).abs() < 3.0 * sd, "{m}");
        }
    }
}
