//! Surface comparison: Chamfer-L1, F-score and normal consistency between
//! point samples of a reference and a reconstruction.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NormalizationTransform, PointCloud, Polyline2D, TriangleMesh};
use crate::spatial::KdTree;

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_FSCORE_THRESHOLD: f64 = 0.005;

/// Area-weighted uniform samples on `mesh`, each carrying its triangle's normal.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let areas: Vec<f64> = (0..mesh.triangles().len()).map(|t| mesh.triangle_area(t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::Empty("mesh with positive area"))?;
    let mut coords = Vec::with_capacity(3 * n);
    let mut normals = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let t = pick.sample(rng);
        let [a, b, c] = mesh.triangles()[t].map(|i| mesh.vertices()[i]);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        for k in 0..3 {
            coords.push(wa * a[k] + wb * b[k] + wc * c[k]);
        }
        normals.extend(mesh.face_normal(t));
    }
    PointCloud::new(3, coords, Some(normals))
}

/// Length-weighted uniform samples on a planar polyline with segment normals.
pub fn sample_polyline<R: Rng + ?Sized>(poly: &Polyline2D, n: usize, rng: &mut R) -> Result<PointCloud> {
    let lengths: Vec<f64> = (0..poly.segments().len()).map(|s| poly.segment_length(s)).collect();
    let pick = WeightedIndex::new(&lengths).map_err(|_| Error::Empty("polyline with positive length"))?;
    let mut coords = Vec::with_capacity(2 * n);
    let mut normals = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let s = pick.sample(rng);
        let [a, b] = poly.segments()[s].map(|i| poly.vertices()[i]);
        let u: f64 = rng.random();
        coords.extend([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
        let l = lengths[s];
        normals.extend([(b[1] - a[1]) / l, (a[0] - b[0]) / l]);
    }
    PointCloud::new(2, coords, Some(normals))
}

/// Maps both sets by the transform that centers the reference bounding box
/// and scales its longest axis to unit length.
pub fn rescale_pair(gt: &PointCloud, pred: &PointCloud) -> Result<(PointCloud, PointCloud, NormalizationTransform)> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if gt.dim() != pred.dim() {
        return Err(Error::InvalidArgument("point sets differ in dimension".into()));
    }
    let t = NormalizationTransform::fit_box(gt.dim(), gt.coords(), 1.0)?;
    let map = |c: &PointCloud| PointCloud::new(c.dim(), t.apply_all(c.coords()), c.normals().map(<[f64]>::to_vec));
    Ok((map(gt)?, map(pred)?, t))
}

/// Nearest neighbor in `to` of every point of `from`, as (index, distance).
fn nearest_all(from: &PointCloud, to: &PointCloud) -> Result<Vec<(usize, f64)>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if from.dim() != to.dim() {
        return Err(Error::InvalidArgument("point sets differ in dimension".into()));
    }
    let tree = KdTree::build(to.dim(), to.coords())?;
    Ok(from.coords().par_chunks(from.dim()).map(|p| tree.nearest(p)).collect())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Symmetric mean closest-point distance (unscaled).
pub fn chamfer_l1(p1: &PointCloud, p2: &PointCloud) -> Result<f64> {
    let a = nearest_all(p1, p2)?;
    let b = nearest_all(p2, p1)?;
    Ok(0.5 * mean(a.iter().map(|x| x.1), a.len()) + 0.5 * mean(b.iter().map(|x| x.1), b.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Percentages of reference points within `t` of the prediction (recall),
/// of predicted points within `t` of the reference (precision), and their
/// harmonic mean.
pub fn f_score(gt: &PointCloud, pred: &PointCloud, t: f64) -> Result<FScore> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    let to_pred = nearest_all(gt, pred)?;
    let to_gt = nearest_all(pred, gt)?;
    let recall = 100.0 * to_pred.iter().filter(|x| x.1 < t).count() as f64 / to_pred.len() as f64;
    let precision = 100.0 * to_gt.iter().filter(|x| x.1 < t).count() as f64 / to_gt.len() as f64;
    let fscore = if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    Ok(FScore {
        fscore,
        precision,
        recall,
    })
}

/// Symmetric mean dot product between each normal and the normal of its
/// closest point on the other side, as a percentage. `absolute` takes |dot|.
pub fn normal_consistency(p1: &PointCloud, p2: &PointCloud, absolute: bool) -> Result<f64> {
    let (n1, n2) = match (p1.normals(), p2.normals()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::MissingNormals),
    };
    let d = p1.dim();
    let dot = |a: &[f64], b: &[f64]| {
        let v: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let one_side = |from: &PointCloud, nf: &[f64], to: &PointCloud, nt: &[f64]| -> Result<f64> {
        let nn = nearest_all(from, to)?;
        Ok(mean(
            nn.iter().enumerate().map(|(i, &(j, _))| dot(&nf[i * d..(i + 1) * d], &nt[j * d..(j + 1) * d])),
            nn.len(),
        ))
    };
    Ok(100.0 * 0.5 * (one_side(p1, n1, p2, n2)? + one_side(p2, n2, p1, n1)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Points drawn from each mesh.
    pub samples: usize,
    pub fscore_threshold: f64,
    /// Use |n1 . n2| instead of the signed dot product.
    pub absolute_normals: bool,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            samples: DEFAULT_SAMPLES,
            fscore_threshold: DEFAULT_FSCORE_THRESHOLD,
            absolute_normals: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Chamfer-L1 times 1000.
    pub chamfer: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    /// Percentage; absent when either side lacks normals.
    pub normal_consistency: Option<f64>,
    pub gt_points: usize,
    pub pred_points: usize,
    pub threshold: f64,
    pub absolute_normals: bool,
}

impl MetricsReport {
    pub fn summary(&self) -> String {
        let nc = self
            .normal_consistency
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!(
            "chamfer-L1 x1e3 {:.4}  F-score {:.2} (P {:.2}, R {:.2}) @ {}  NC {nc}",
            self.chamfer, self.fscore, self.precision, self.recall, self.threshold
        )
    }
}

/// Rescales both sets by the reference box and computes every metric.
pub fn evaluate(gt: &PointCloud, pred: &PointCloud, config: &MetricsConfig) -> Result<MetricsReport> {
    let (g, p, _) = rescale_pair(gt, pred)?;
    let f = f_score(&g, &p, config.fscore_threshold)?;
    let nc = if g.has_normals() && p.has_normals() {
        Some(normal_consistency(&g, &p, config.absolute_normals)?)
    } else {
        None
    };
    Ok(MetricsReport {
        chamfer: 1e3 * chamfer_l1(&g, &p)?,
        fscore: f.fscore,
        precision: f.precision,
        recall: f.recall,
        normal_consistency: nc,
        gt_points: g.len(),
        pred_points: p.len(),
        threshold: config.fscore_threshold,
        absolute_normals: config.absolute_normals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::dist2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(d: usize, c: Vec<f64>) -> PointCloud {
        PointCloud::new(d, c, None).unwrap()
    }

    fn random(n: usize, seed: u64, normals: bool) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nm = normals.then(|| (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        PointCloud::new(3, c, nm).unwrap()
    }

    #[test]
    fn single_triangle_samples() {
        let m = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let s = sample_surface(&m, 2000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for i in 0..s.len() {
            let p = s.point(i);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-15 && p[2] == 0.0);
            assert_eq!(s.normal(i).unwrap(), &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn area_weighting() {
        // areas 1 and 3, plus a zero-area sliver
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [12.0, 0.0, 0.0],
                [10.0, 3.0, 0.0],
                [20.0, 0.0, 0.0],
                [21.0, 0.0, 0.0],
                [22.0, 0.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5], [6, 7, 8]],
        )
        .unwrap();
        let s = sample_surface(&m, 100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let second = s.points().filter(|p| p[0] >= 10.0 && p[0] < 15.0).count();
        let sliver = s.points().filter(|p| p[0] >= 15.0).count();
        assert!((second as f64 / 1e5 - 0.75).abs() < 0.015);
        assert_eq!(sliver, 0);
        assert!(sample_surface(&TriangleMesh::default(), 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn rescale_examples() {
        let gt = cloud(3, vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let (g, p, t) = rescale_pair(&gt, &gt).unwrap();
        assert_eq!(t.scale(), 0.5);
        assert_eq!(g.point(1), &[0.5, 0.5, 0.5]);
        assert_eq!(g, p);
        let back = t.invert_all(g.coords());
        assert!(back.iter().zip(gt.coords()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(rescale_pair(&cloud(3, vec![1.0; 6]), &gt).is_err());
    }

    #[test]
    fn chamfer_examples_and_brute_force() {
        let a = random(500, 1, false);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        let o = cloud(3, vec![0.0; 3]);
        let x = cloud(3, vec![1.0, 0.0, 0.0]);
        assert_eq!(chamfer_l1(&o, &x).unwrap(), 1.0);
        let b = random(500, 2, false);
        let brute = |p: &PointCloud, q: &PointCloud| {
            p.points()
                .map(|u| q.points().map(|v| dist2(u, v)).fold(f64::INFINITY, f64::min).sqrt())
                .sum::<f64>()
                / p.len() as f64
        };
        let expect = 0.5 * brute(&a, &b) + 0.5 * brute(&b, &a);
        assert!((chamfer_l1(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert_eq!(chamfer_l1(&a, &b).unwrap(), chamfer_l1(&b, &a).unwrap());
        assert!(chamfer_l1(&a, &cloud(3, vec![])).is_err());
    }

    #[test]
    fn fscore_examples() {
        let a = cloud(3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = cloud(3, vec![0.001, 0.0, 0.0, 1.001, 0.0, 0.0]);
        assert_eq!(f_score(&a, &b, 0.005).unwrap().fscore, 100.0);
        let far = cloud(3, vec![5.0, 5.0, 5.0]);
        assert_eq!(f_score(&a, &far, 0.005).unwrap().fscore, 0.0);
        // every prediction is near the reference, half the reference is covered
        let half = cloud(3, vec![0.0, 0.0, 0.0]);
        let f = f_score(&a, &half, 0.005).unwrap();
        assert_eq!((f.precision, f.recall), (100.0, 50.0));
        assert!((f.fscore - 66.666_666_666_666_67).abs() < 1e-9);
        let g = f_score(&half, &a, 0.005).unwrap();
        assert_eq!((g.precision, g.recall), (f.recall, f.precision));
        assert!(f_score(&a, &b, 0.0).is_err());
    }

    #[test]
    fn normal_consistency_examples() {
        let a = random(300, 3, true);
        assert!((normal_consistency(&a, &a, false).unwrap() - 100.0).abs() < 1e-12);
        let flipped = PointCloud::new(3, a.coords().to_vec(), Some(a.normals().unwrap().iter().map(|v| -v).collect())).unwrap();
        assert!((normal_consistency(&a, &flipped, false).unwrap() + 100.0).abs() < 1e-12);
        assert!((normal_consistency(&a, &flipped, true).unwrap() - 100.0).abs() < 1e-12);
        let b = random(300, 4, true);
        let side = |p: &PointCloud, q: &PointCloud| {
            (0..p.len())
                .map(|i| {
                    let j = (0..q.len())
                        .min_by(|&x, &y| dist2(p.point(i), q.point(x)).total_cmp(&dist2(p.point(i), q.point(y))))
                        .unwrap();
                    p.normal(i).unwrap().iter().zip(q.normal(j).unwrap()).map(|(u, v)| u * v).sum::<f64>()
                })
                .sum::<f64>()
                / p.len() as f64
        };
        let expect = 50.0 * (side(&a, &b) + side(&b, &a));
        assert!((normal_consistency(&a, &b, false).unwrap() - expect).abs() < 1e-9);
        assert!(matches!(normal_consistency(&a, &random(3, 5, false), false), Err(Error::MissingNormals)));
    }

    #[test]
    fn rigid_motion_invariance() {
        let a = random(400, 6, true);
        let b = random(400, 7, true);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let move_it = |p: &PointCloud| {
            let r = |v: &[f64], shift: f64| vec![c * v[0] - s * v[1] + shift, s * v[0] + c * v[1] + 2.0 * shift, v[2] - shift];
            let coords: Vec<f64> = p.points().flat_map(|v| r(v, 0.7)).collect();
            let normals: Vec<f64> = p.normals().unwrap().chunks(3).flat_map(|v| r(v, 0.0)).collect();
            PointCloud::new(3, coords, Some(normals)).unwrap()
        };
        let (ma, mb) = (move_it(&a), move_it(&b));
        assert!((chamfer_l1(&a, &b).unwrap() - chamfer_l1(&ma, &mb).unwrap()).abs() < 1e-9);
        assert!((normal_consistency(&a, &b, false).unwrap() - normal_consistency(&ma, &mb, false).unwrap()).abs() < 1e-9);
        assert_eq!(f_score(&a, &b, 0.1).unwrap(), f_score(&ma, &mb, 0.1).unwrap());
    }

    #[test]
    fn report_on_identical_sets() {
        let a = random(200, 8, true);
        let r = evaluate(&a, &a, &MetricsConfig::default()).unwrap();
        assert_eq!(r.chamfer, 0.0);
        assert_eq!(r.fscore, 100.0);
        assert!((r.normal_consistency.unwrap() - 100.0).abs() < 1e-12);
        assert!(r.summary().contains("F-score 100.00"));
    }
}
