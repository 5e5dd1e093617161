//! Geometric containers, the normalization transform, and file I/O.
//!
//! Coordinates are stored flat (`dim` values per point) so the same
//! containers serve planar and volumetric inputs.

mod grid_io;
mod obj;
mod ply;
mod xyz;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid_io::{load_grid, save_grid};
pub use obj::{load_obj_mesh, load_obj_polyline, obj_has_only_lines, save_obj_mesh, save_obj_polyline};
pub use ply::{load_ply, save_ply_mesh, save_ply_points, PlyData};
pub use xyz::{load_xyz, save_xyz};

/// Normals shorter than this in an input file make the whole cloud unoriented.
pub const DEGENERATE_NORMAL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointFormat {
    Xyz,
    Ply,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("xyz") | Some("txt") | Some("pts") => Some(PointFormat::Xyz),
            Some("ply") => Some(PointFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("obj") => Some(MeshFormat::Obj),
            Some("ply") => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

pub fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn load_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    match format {
        PointFormat::Xyz => load_xyz(path),
        PointFormat::Ply => load_ply(path)?.into_point_cloud(),
    }
}

/// PLY output is binary little-endian.
pub fn save_point_cloud(cloud: &PointCloud, path: &Path, format: PointFormat) -> Result<()> {
    match format {
        PointFormat::Xyz => save_xyz(cloud, path),
        PointFormat::Ply => save_ply_points(cloud, path, true),
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    match format {
        MeshFormat::Obj => load_obj_mesh(path),
        MeshFormat::Ply => load_ply(path)?.into_mesh(),
    }
}

/// OBJ indices are 1-based; PLY output is binary little-endian.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    match format {
        MeshFormat::Obj => save_obj_mesh(mesh, path),
        MeshFormat::Ply => save_ply_mesh(mesh, path, true),
    }
}

/// Input samples in world units, optionally with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    normals: Option<Vec<f64>>,
}

impl PointCloud {
    /// Builds a cloud from flat coordinates. Normals are renormalized; if any
    /// is degenerate the cloud is treated as unoriented.
    pub fn new(dim: usize, coords: Vec<f64>, normals: Option<Vec<f64>>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if coords.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "coordinate count {} is not a multiple of {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "coordinate",
                index: i / dim,
            });
        }
        let n = coords.len() / dim;
        let normals = match normals {
            None => None,
            Some(mut nrm) => {
                if nrm.len() != coords.len() {
                    return Err(Error::NormalCountMismatch {
                        points: n,
                        normals: nrm.len() / dim,
                    });
                }
                if let Some(i) = nrm.iter().position(|c| !c.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "normal",
                        index: i / dim,
                    });
                }
                let mut degenerate = false;
                for v in nrm.chunks_exact_mut(dim) {
                    let len = norm(v);
                    if len < DEGENERATE_NORMAL {
                        degenerate = true;
                        break;
                    }
                    v.iter_mut().for_each(|c| *c /= len);
                }
                if degenerate {
                    log::warn!("degenerate normal in input; treating cloud as unoriented");
                    None
                } else {
                    Some(nrm)
                }
            }
        };
        Ok(PointCloud {
            dim,
            coords,
            normals,
        })
    }

    pub fn from_points(dim: usize, points: &[impl AsRef<[f64]>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "point has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        PointCloud::new(dim, coords, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn normals(&self) -> Option<&[f64]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normal(&self, i: usize) -> Option<&[f64]> {
        self.normals
            .as_ref()
            .map(|n| &n[i * self.dim..(i + 1) * self.dim])
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    /// Drops the z coordinate. Normals lose their z component and are
    /// renormalized (or dropped when that leaves them degenerate).
    pub fn to_planar(&self) -> Result<PointCloud> {
        match self.dim {
            2 => Ok(self.clone()),
            _ => {
                let coords = self
                    .points()
                    .flat_map(|p| [p[0], p[1]])
                    .collect::<Vec<_>>();
                let normals = self
                    .normals
                    .as_ref()
                    .map(|n| n.chunks_exact(3).flat_map(|v| [v[0], v[1]]).collect());
                PointCloud::new(2, coords, normals)
            }
        }
    }

    /// Axis-aligned bounds as (min, max) per axis.
    pub fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        bounds(self.dim, &self.coords)
    }
}

pub(crate) fn bounds(dim: usize, coords: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    if coords.is_empty() {
        return None;
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks_exact(dim) {
        for a in 0..dim {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Isotropic map `x -> (x - center) * scale` from world to normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    center: Vec<f64>,
    scale: f64,
}

impl NormalizationTransform {
    pub fn new(center: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "transform center",
                index: 0,
            });
        }
        Ok(NormalizationTransform { center, scale })
    }

    pub fn identity(dim: usize) -> Self {
        NormalizationTransform {
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Maps the bounding box of `coords` so its longest axis spans exactly [-1, 1].
    pub fn fit_unit_cube(dim: usize, coords: &[f64]) -> Result<Self> {
        Self::fit_box(dim, coords, 2.0)
    }

    /// Centers the bounding box and scales its longest axis to length `target_extent`.
    pub(crate) fn fit_box(dim: usize, coords: &[f64], target_extent: f64) -> Result<Self> {
        let (lo, hi) = bounds(dim, coords).ok_or(Error::Empty("point set"))?;
        let extent = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| h - l)
            .fold(0.0_f64, f64::max);
        if extent <= 0.0 {
            return Err(Error::DegenerateBounds);
        }
        let center = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        Ok(NormalizationTransform {
            center,
            scale: target_extent / extent,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = (xi - c) * self.scale;
        }
    }

    pub fn invert(&self, y: &[f64], out: &mut [f64]) {
        for ((o, yi), c) in out.iter_mut().zip(y).zip(&self.center) {
            *o = yi / self.scale + c;
        }
    }

    pub fn apply_all(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; coords.len()];
        for (o, x) in out.chunks_exact_mut(d).zip(coords.chunks_exact(d)) {
            self.apply(x, o);
        }
        out
    }

    pub fn invert_all(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; coords.len()];
        for (o, y) in out.chunks_exact_mut(d).zip(coords.chunks_exact(d)) {
            self.invert(y, o);
        }
        out
    }
}

/// Centers the cloud and scales it isotropically so the longest bounding-box
/// axis spans exactly [-1, 1]. Normals are unchanged.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let transform = NormalizationTransform::fit_unit_cube(cloud.dim, &cloud.coords)?;
    let normalized = PointCloud {
        dim: cloud.dim,
        coords: transform.apply_all(&cloud.coords),
        normals: cloud.normals.clone(),
    };
    Ok((normalized, transform))
}

/// Triangle soup with shared vertices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} references a vertex beyond {n}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidArgument(format!("triangle {t} repeats a vertex")));
            }
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite {
                what: "vertex",
                index: i,
            });
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn map_vertices(&mut self, mut f: impl FnMut(&mut [f64; 3])) {
        self.vertices.iter_mut().for_each(|v| f(v));
    }

    /// Maps normalized-space vertices back to world units.
    pub fn to_world(&mut self, transform: &NormalizationTransform) {
        let mut out = [0.0; 3];
        self.map_vertices(|v| {
            transform.invert(&v[..], &mut out);
            *v = out;
        });
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let n = self.raw_normal(t);
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Unit face normal, or zero for a degenerate triangle.
    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let n = self.raw_normal(t);
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len > 0.0 {
            [n[0] / len, n[1] / len, n[2] / len]
        } else {
            [0.0; 3]
        }
    }

    fn raw_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    /// V - E + F, counting each undirected edge once.
    pub fn euler_characteristic(&self) -> i64 {
        let edges = self.edge_use_counts();
        self.used_vertex_count() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    fn used_vertex_count(&self) -> usize {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        used.into_iter().filter(|&u| u).count()
    }

    fn edge_use_counts(&self) -> std::collections::HashMap<(usize, usize), u32> {
        let mut edges = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Number of edge-connected triangle components.
    pub fn connected_components(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        for t in &self.triangles {
            uf.union(t[0], t[1]);
            uf.union(t[1], t[2]);
        }
        let mut roots = std::collections::BTreeSet::new();
        for t in &self.triangles {
            roots.insert(uf.find(t[0]));
        }
        roots.len()
    }
}

/// Planar contour as indexed segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Polyline2D {
    vertices: Vec<[f64; 2]>,
    segments: Vec<[usize; 2]>,
}

impl Polyline2D {
    pub fn new(vertices: Vec<[f64; 2]>, segments: Vec<[usize; 2]>) -> Result<Self> {
        let n = vertices.len();
        for (s, seg) in segments.iter().enumerate() {
            if seg[0] >= n || seg[1] >= n {
                return Err(Error::InvalidArgument(format!(
                    "segment {s} references a vertex beyond {n}"
                )));
            }
            let (a, b) = (vertices[seg[0]], vertices[seg[1]]);
            if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= 1e-12 {
                return Err(Error::InvalidArgument(format!("segment {s} has zero length")));
            }
        }
        Ok(Polyline2D { vertices, segments })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn segments(&self) -> &[[usize; 2]] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_length(&self, s: usize) -> f64 {
        let [a, b] = self.segments[s].map(|i| self.vertices[i]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    pub fn to_world(&mut self, transform: &NormalizationTransform) {
        let mut out = [0.0; 2];
        for v in &mut self.vertices {
            transform.invert(&v[..], &mut out);
            *v = out;
        }
    }

    /// Number of connected pieces of the contour.
    pub fn connected_components(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        for s in &self.segments {
            uf.union(s[0], s[1]);
        }
        let mut roots = std::collections::BTreeSet::new();
        for s in &self.segments {
            roots.insert(uf.find(s[0]));
        }
        roots.len()
    }

    /// True when every vertex used by a segment has exactly two incident segments.
    pub fn is_closed(&self) -> bool {
        let mut degree = vec![0u32; self.vertices.len()];
        for s in &self.segments {
            degree[s[0]] += 1;
            degree[s[1]] += 1;
        }
        !self.segments.is_empty() && degree.iter().all(|&d| d == 0 || d == 2)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Dense samples on a uniform node lattice, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    dims: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() != origin.len() || dims.len() != spacing.len() {
            return Err(Error::InvalidArgument(
                "grid dims, origin and spacing must have the same length".into(),
            ));
        }
        if let Some(s) = spacing.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {s}")));
        }
        let count: usize = dims.iter().product();
        if count != values.len() {
            return Err(Error::InvalidArgument(format!(
                "grid dims {dims:?} need {count} values, got {}",
                values.len()
            )));
        }
        Ok(ScalarGrid {
            dims,
            origin,
            spacing,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn node_position(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(self.origin.iter().zip(&self.spacing))
            .map(|(&i, (o, s))| o + i as f64 * s)
            .collect()
    }
}
