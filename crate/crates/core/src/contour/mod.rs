//! Zero-level-set extraction on uniform grids: marching squares in 2D,
//! marching cubes in 3D.
//!
//! A node is inside when its value is strictly below the iso level. Edge
//! vertices are shared through a key on the grid edge (lower node, axis);
//! a vertex that lands exactly on a node is keyed by the node instead, and
//! the degenerate segments or triangles this produces are dropped.

mod tables;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{JetOrder, ScalarField};
use crate::geometry::{Polyline2D, ScalarGrid, TriangleMesh};
use crate::sinenet::SineNetwork;
use tables::TRI_TABLE;

pub const DEFAULT_RESOLUTION: usize = 256;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoxDomain {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || !(2..=3).contains(&min.len()) {
            return Err(Error::InvalidArgument("box corners must both be 2- or 3-vectors".into()));
        }
        if min.iter().zip(&max).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::DegenerateBounds);
        }
        Ok(BoxDomain { min, max })
    }

    /// `[-1, 1]^dim`.
    pub fn cube(dim: usize) -> Self {
        BoxDomain {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }
}

/// Per-node quantities that can be sampled on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridQuantity {
    Value,
    GradNorm,
    HessDet,
    HessTrace,
}

impl GridQuantity {
    pub fn name(self) -> &'static str {
        match self {
            GridQuantity::Value => "value",
            GridQuantity::GradNorm => "gradnorm",
            GridQuantity::HessDet => "det",
            GridQuantity::HessTrace => "trace",
        }
    }

    fn order(self) -> JetOrder {
        match self {
            GridQuantity::Value => JetOrder::Value,
            GridQuantity::GradNorm => JetOrder::Gradient,
            GridQuantity::HessDet | GridQuantity::HessTrace => JetOrder::Hessian,
        }
    }
}

/// Samples `quantities` at the `resolution^d` nodes of a uniform grid over
/// `domain`, one grid per quantity. Slabs along the first axis are
/// evaluated in order.
pub fn evaluate_grid(
    field: &dyn ScalarField,
    resolution: usize,
    domain: &BoxDomain,
    quantities: &[GridQuantity],
) -> Result<Vec<ScalarGrid>> {
    let d = domain.dim();
    if field.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "field is {}-dimensional, domain is {d}-dimensional",
            field.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution must be at least 2, got {resolution}")));
    }
    let order = quantities.iter().map(|q| q.order()).max().unwrap_or(JetOrder::Value);
    let spacing: Vec<f64> = (0..d)
        .map(|a| (domain.max[a] - domain.min[a]) / (resolution - 1) as f64)
        .collect();
    let coord = |a: usize, i: usize| {
        if i == resolution - 1 {
            domain.max[a]
        } else {
            domain.min[a] + i as f64 * spacing[a]
        }
    };
    let slab = resolution.pow(d as u32 - 1);
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(slab * resolution); quantities.len()];
    let mut pts = Vec::with_capacity(slab * d);
    for i in 0..resolution {
        pts.clear();
        let x0 = coord(0, i);
        for r in 0..slab {
            pts.push(x0);
            if d == 2 {
                pts.push(coord(1, r));
            } else {
                pts.push(coord(1, r / resolution));
                pts.push(coord(2, r % resolution));
            }
        }
        let jets = field.jets(&pts, order)?;
        for (q, out) in quantities.iter().zip(values.iter_mut()) {
            out.extend(jets.iter().map(|j| match q {
                GridQuantity::Value => j.value,
                GridQuantity::GradNorm => j.grad_norm(),
                GridQuantity::HessDet => j.hess_det(),
                GridQuantity::HessTrace => j.hess_trace(),
            }));
        }
    }
    values
        .into_iter()
        .map(|v| ScalarGrid::new(vec![resolution; d], domain.min.clone(), spacing.clone(), v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum VertexKey {
    Node(usize),
    Edge(usize, usize),
}

/// Vertex on the grid edge from node `a` to its neighbor `b` along `axis`.
fn edge_vertex(grid: &ScalarGrid, a: usize, b: usize, axis: usize, iso: f64) -> (VertexKey, f64) {
    let (va, vb) = (grid.values()[a], grid.values()[b]);
    let t = (iso - va) / (vb - va);
    if t <= 0.0 {
        (VertexKey::Node(a), 0.0)
    } else if t >= 1.0 {
        (VertexKey::Node(b), 1.0)
    } else {
        (VertexKey::Edge(a, axis), t)
    }
}

fn node_coords(grid: &ScalarGrid, flat: usize) -> Vec<usize> {
    let dims = grid.dims();
    let mut idx = vec![0; dims.len()];
    let mut r = flat;
    for a in (0..dims.len()).rev() {
        idx[a] = r % dims[a];
        r /= dims[a];
    }
    idx
}

fn position(grid: &ScalarGrid, key: VertexKey, t: f64, out: &mut [f64]) {
    match key {
        VertexKey::Node(n) => out.copy_from_slice(&grid.node_position(&node_coords(grid, n))),
        VertexKey::Edge(a, axis) => {
            let p = grid.node_position(&node_coords(grid, a));
            out.copy_from_slice(&p);
            out[axis] = p[axis] + t * grid.spacing()[axis];
        }
    }
}

/// Assigns indices to keys in first-seen order.
struct VertexPool<const D: usize> {
    index: HashMap<VertexKey, usize>,
    vertices: Vec<[f64; D]>,
}

impl<const D: usize> VertexPool<D> {
    fn new() -> Self {
        VertexPool {
            index: HashMap::new(),
            vertices: Vec::new(),
        }
    }

    fn get(&mut self, grid: &ScalarGrid, key: VertexKey, t: f64) -> usize {
        *self.index.entry(key).or_insert_with(|| {
            let mut p = [0.0; D];
            position(grid, key, t, &mut p);
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }
}

/// Segment endpoints plus the cell's average gradient, used for orientation.
type Seg = ([(VertexKey, f64); 2], [f64; 2]);

fn square_cell(grid: &ScalarGrid, i: usize, j: usize, iso: f64, out: &mut Vec<Seg>) {
    let ny = grid.dims()[1];
    let n = |a: usize, b: usize| a * ny + b;
    let corners = [n(i, j), n(i + 1, j), n(i + 1, j + 1), n(i, j + 1)];
    let v = corners.map(|c| grid.values()[c]);
    let case = (0..4).fold(0, |m, k| m | (usize::from(v[k] < iso) << k));
    if case == 0 || case == 15 {
        return;
    }
    // edge k joins corner k and k + 1; its lower node and axis:
    let edge = |k: usize| match k {
        0 => edge_vertex(grid, corners[0], corners[1], 0, iso),
        1 => edge_vertex(grid, corners[1], corners[2], 1, iso),
        2 => edge_vertex(grid, corners[3], corners[2], 0, iso),
        _ => edge_vertex(grid, corners[0], corners[3], 1, iso),
    };
    let g = [(v[1] + v[2] - v[0] - v[3]) / 2.0, (v[2] + v[3] - v[0] - v[1]) / 2.0];
    // a segment cutting off corner k runs between edges k - 1 and k
    let cut = |k: usize| ([edge((k + 3) % 4), edge(k)], g);
    match case {
        5 | 10 => {
            let center_inside = v.iter().sum::<f64>() / 4.0 < iso;
            let isolate = if (case == 5) == center_inside { [1, 3] } else { [0, 2] };
            out.extend(isolate.map(cut));
        }
        _ => match case.count_ones() {
            1 => out.push(cut(case.trailing_zeros() as usize)),
            3 => out.push(cut((!case & 15).trailing_zeros() as usize)),
            _ => {
                // two adjacent corners inside: the segment crosses the two other edges
                let mut crossing = (0..4).filter(|&k| ((case >> k) & 1) != ((case >> ((k + 1) % 4)) & 1));
                let (e0, e1) = (crossing.next().unwrap(), crossing.next().unwrap());
                out.push(([edge(e0), edge(e1)], g));
            }
        },
    }
}

/// Segments where the bilinear interpolant crosses `iso`. Saddle cells are
/// resolved by the sign of the cell-center average. Each segment `[a, b]`
/// has the increasing side of the field on its right, so `(dy, -dx)` is an
/// outward normal.
pub fn marching_squares(grid: &ScalarGrid, iso: f64) -> Result<Polyline2D> {
    if grid.dim() != 2 {
        return Err(Error::InvalidArgument("marching squares needs a 2D grid".into()));
    }
    let [nx, ny] = [grid.dims()[0], grid.dims()[1]];
    let rows: Vec<Vec<Seg>> = (0..nx - 1)
        .into_par_iter()
        .map(|i| {
            let mut segs = Vec::new();
            for j in 0..ny - 1 {
                square_cell(grid, i, j, iso, &mut segs);
            }
            segs
        })
        .collect();
    let mut pool = VertexPool::<2>::new();
    let mut segments = Vec::new();
    for (seg, g) in rows.iter().flatten() {
        let a = pool.get(grid, seg[0].0, seg[0].1);
        let b = pool.get(grid, seg[1].0, seg[1].1);
        if a != b {
            let (pa, pb) = (pool.vertices[a], pool.vertices[b]);
            let n = [pb[1] - pa[1], pa[0] - pb[0]];
            segments.push(if n[0] * g[0] + n[1] * g[1] >= 0.0 { [a, b] } else { [b, a] });
        }
    }
    let (vertices, segments) = collapse_short(pool.vertices, segments);
    Polyline2D::new(vertices, segments)
}

/// Merges endpoints of segments shorter than the polyline tolerance; such
/// segments only arise when a contour passes within rounding of a node.
fn collapse_short(vertices: Vec<[f64; 2]>, segments: Vec<[usize; 2]>) -> (Vec<[f64; 2]>, Vec<[usize; 2]>) {
    let len = |s: &[usize; 2]| {
        let (a, b) = (vertices[s[0]], vertices[s[1]]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    };
    if segments.iter().all(|s| len(s) >= 1e-12) {
        return (vertices, segments);
    }
    let mut parent: Vec<usize> = (0..vertices.len()).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for s in segments.iter().filter(|s| len(s) < 1e-12) {
        let (a, b) = (root(&mut parent, s[0]), root(&mut parent, s[1]));
        parent[a.max(b)] = a.min(b);
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for v in 0..vertices.len() {
        let r = root(&mut parent, v);
        if remap[r] == usize::MAX {
            remap[r] = kept.len();
            kept.push(vertices[r]);
        }
        remap[v] = remap[r];
    }
    let segs = segments
        .into_iter()
        .map(|s| [remap[s[0]], remap[s[1]]])
        .filter(|s| s[0] != s[1])
        .collect();
    (kept, segs)
}

/// Corner offsets of the cube, classic ordering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edges as (lower corner, upper corner, axis).
const EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (1, 2, 1),
    (3, 2, 0),
    (0, 3, 1),
    (4, 5, 0),
    (5, 6, 1),
    (7, 6, 0),
    (4, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

type Tri = [(VertexKey, f64); 3];

fn cube_cell(grid: &ScalarGrid, i: usize, j: usize, k: usize, iso: f64, out: &mut Vec<Tri>) {
    let [_, ny, nz] = [grid.dims()[0], grid.dims()[1], grid.dims()[2]];
    let node = |c: [usize; 3]| ((i + c[0]) * ny + j + c[1]) * nz + k + c[2];
    let corners = CORNERS.map(node);
    let case = (0..8).fold(0, |m, c| m | (usize::from(grid.values()[corners[c]] < iso) << c));
    let row = &TRI_TABLE[case];
    for t in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
        // table winding faces the inside; reverse it so normals point outward
        let tri = [t[0], t[2], t[1]].map(|e| {
            let (a, b, axis) = EDGES[e as usize];
            edge_vertex(grid, corners[a], corners[b], axis, iso)
        });
        out.push(tri);
    }
}

/// Triangles of the classic 256-case table with linear edge interpolation.
/// Normals point towards increasing field values.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    if grid.dim() != 3 {
        return Err(Error::InvalidArgument("marching cubes needs a 3D grid".into()));
    }
    let [nx, ny, nz] = [grid.dims()[0], grid.dims()[1], grid.dims()[2]];
    let slabs: Vec<Vec<Tri>> = (0..nx - 1)
        .into_par_iter()
        .map(|i| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for k in 0..nz - 1 {
                    cube_cell(grid, i, j, k, iso, &mut tris);
                }
            }
            tris
        })
        .collect();
    let mut pool = VertexPool::<3>::new();
    let mut triangles = Vec::new();
    for t in slabs.iter().flatten() {
        let idx = t.map(|(key, s)| pool.get(grid, key, s));
        if idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2] {
            triangles.push(idx);
        }
    }
    TriangleMesh::new(pool.vertices, triangles)
}

/// Extracted zero set of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Contour {
    Curve(Polyline2D),
    Surface(TriangleMesh),
}

impl Contour {
    pub fn is_empty(&self) -> bool {
        match self {
            Contour::Curve(p) => p.is_empty(),
            Contour::Surface(m) => m.is_empty(),
        }
    }
}

/// Evaluates `net` on the normalized cube and extracts its `iso` level set,
/// optionally mapped back to world units through the stored transform.
pub fn extract(net: &SineNetwork, resolution: usize, iso: f64, world_units: bool) -> Result<Contour> {
    let d = net.architecture().input_dim;
    let grid = evaluate_grid(net, resolution, &BoxDomain::cube(d), &[GridQuantity::Value])?
        .pop()
        .expect("one grid");
    Ok(match d {
        2 => {
            let mut p = marching_squares(&grid, iso)?;
            if world_units {
                p.to_world(net.transform());
            }
            Contour::Curve(p)
        }
        _ => {
            let mut m = marching_cubes(&grid, iso)?;
            if world_units {
                m.to_world(net.transform());
            }
            Contour::Surface(m)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticField;

    fn grid_of(f: &AnalyticField, res: usize) -> ScalarGrid {
        evaluate_grid(f, res, &BoxDomain::cube(f.dim()), &[GridQuantity::Value]).unwrap().pop().unwrap()
    }

    fn interp_value(grid: &ScalarGrid, p: &[f64]) -> f64 {
        // multilinear interpolation restricted to the edge holding p
        let d = grid.dim();
        let mut lo = vec![0; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let u = (p[a] - grid.origin()[a]) / grid.spacing()[a];
            let i = (u.floor() as usize).min(grid.dims()[a] - 2);
            lo[a] = i;
            frac[a] = u - i as f64;
        }
        let mut v = 0.0;
        for corner in 0..(1 << d) {
            let mut w = 1.0;
            let mut idx = lo.clone();
            for a in 0..d {
                if (corner >> a) & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                v += w * grid.get(&idx);
            }
        }
        v
    }

    #[test]
    fn grid_matches_pointwise_evaluation() {
        let f = AnalyticField::SinProduct;
        let g = evaluate_grid(&f, 17, &BoxDomain::cube(2), &[GridQuantity::Value, GridQuantity::HessDet]).unwrap();
        for i in 0..17 {
            for j in 0..17 {
                let p = g[0].node_position(&[i, j]);
                let jet = f.jet(&p).unwrap();
                assert_eq!(g[0].get(&[i, j]), jet.value);
                assert_eq!(g[1].get(&[i, j]), jet.hess_det());
            }
        }
        assert_eq!(g[0].node_position(&[16, 16]), vec![1.0, 1.0]);
        assert!(evaluate_grid(&f, 1, &BoxDomain::cube(2), &[GridQuantity::Value]).is_err());
    }

    #[test]
    fn squares_on_linear_field() {
        for res in [2, 3, 10, 33] {
            let f = AnalyticField::Affine { a: vec![1.0, 0.0], b: 0.0 };
            let p = marching_squares(&grid_of(&f, res), 0.0).unwrap();
            assert!(!p.is_empty());
            assert!(p.vertices().iter().all(|v| v[0].abs() < 1e-12));
            assert_eq!(p.connected_components(), 1);
        }
        let pos = AnalyticField::Affine { a: vec![0.0, 0.0], b: 1.0 };
        assert!(marching_squares(&grid_of(&pos, 8), 0.0).unwrap().is_empty());
    }

    #[test]
    fn squares_on_circle() {
        let c = AnalyticField::Circle { center: [0.0; 2], radius: 0.5 };
        let g = grid_of(&c, 256);
        let p = marching_squares(&g, 0.0).unwrap();
        assert_eq!(p.connected_components(), 1);
        assert!(p.is_closed());
        for s in p.segments() {
            let [a, b] = s.map(|i| p.vertices()[i]);
            let n = [b[1] - a[1], a[0] - b[0]];
            assert!(n[0] * (a[0] + b[0]) + n[1] * (a[1] + b[1]) > 0.0);
        }
        let h = g.spacing()[0];
        for v in p.vertices() {
            assert!((v[0].hypot(v[1]) - 0.5).abs() < 2.0 * h);
            assert!(interp_value(&g, v).abs() < 1e-12);
        }
    }

    #[test]
    fn squares_saddle_uses_center() {
        // corners 0 and 2 inside with a positive center: two separate cuts around them
        let g = ScalarGrid::new(vec![2, 2], vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 3.0, 3.0, -1.0]).unwrap();
        let p = marching_squares(&g, 0.0).unwrap();
        assert_eq!(p.segments().len(), 2);
        assert_eq!(p.connected_components(), 2);
        let g = ScalarGrid::new(vec![2, 2], vec![0.0, 0.0], vec![1.0, 1.0], vec![-3.0, 1.0, 1.0, -3.0]).unwrap();
        let p = marching_squares(&g, 0.0).unwrap();
        assert_eq!(p.segments().len(), 2);
        // the two cuts now isolate the outside corners (1,0) and (0,1)
        let near_10 = p.vertices().iter().filter(|v| v[0] > 0.5 && v[1] < 0.5).count();
        assert_eq!(near_10, 2);
    }

    #[test]
    fn node_hits_do_not_break_topology() {
        // f = x with nodes exactly on x = 0 (odd resolution)
        let f = AnalyticField::Affine { a: vec![1.0, 0.0, 0.0], b: 0.0 };
        let m = marching_cubes(&grid_of(&f, 5), 0.0).unwrap();
        assert!(!m.is_empty());
        assert!(m.vertices().iter().all(|v| v[0].abs() < 1e-12));
    }

    #[test]
    fn cubes_on_sphere() {
        let s = AnalyticField::Sphere { center: [0.0; 3], radius: 0.5 };
        let g = grid_of(&s, 64);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(m.is_closed());
        assert_eq!(m.euler_characteristic(), 2);
        assert_eq!(m.connected_components(), 1);
        for v in m.vertices() {
            assert!(interp_value(&g, v).abs() < 1e-12);
        }
        // outward orientation: positive enclosed volume
        let vol: f64 = m
            .triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| m.vertices()[i]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum();
        assert!((vol - 4.0 / 3.0 * std::f64::consts::PI * 0.125).abs() < 0.01, "{vol}");
    }

    #[test]
    fn sphere_error_is_second_order() {
        let s = AnalyticField::Sphere { center: [0.0; 3], radius: 0.5 };
        let err = |res| {
            let m = marching_cubes(&grid_of(&s, res), 0.0).unwrap();
            m.vertices()
                .iter()
                .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 0.5).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((2.0..8.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn cubes_plane_and_empty() {
        let f = AnalyticField::Affine { a: vec![0.0, 0.0, 1.0], b: 0.05 };
        let g = grid_of(&f, 6);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert_eq!(m.triangles().len(), 2 * 5 * 5);
        assert!(m.vertices().iter().all(|v| (v[2] + 0.05).abs() < 1e-12));
        for t in 0..m.triangles().len() {
            assert!(m.face_normal(t)[2] > 0.99);
        }
        let neg = AnalyticField::Affine { a: vec![0.0, 0.0, 0.0], b: -1.0 };
        assert!(marching_cubes(&grid_of(&neg, 6), 0.0).unwrap().is_empty());
        let m2 = marching_cubes(&g, 0.0).unwrap();
        assert_eq!(m, m2);
    }
}
