//! Wavefront OBJ: `v` and `f` records for meshes, `v` and `l` for contours.

use std::fmt::Write as _;
use std::path::Path;

use super::{Polyline2D, TriangleMesh};
use crate::error::{Error, Location, Result};

pub fn save_obj_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(32 * (mesh.vertices().len() + mesh.triangles().len()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Planar contours as `v x y 0` plus `l a b` line records.
pub fn save_obj_polyline(poly: &Polyline2D, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in poly.vertices() {
        let _ = writeln!(out, "v {} {} 0", v[0], v[1]);
    }
    for s in poly.segments() {
        let _ = writeln!(out, "l {} {}", s[0] + 1, s[1] + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_obj_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Reads `v`/`l` records, dropping z. Multi-vertex `l` records become
/// consecutive segments.
pub fn load_obj_polyline(path: &Path) -> Result<Polyline2D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text, path)?;
    let vertices = records.vertices.iter().map(|v| [v[0], v[1]]).collect();
    let segments = records
        .lines
        .iter()
        .flat_map(|l| l.windows(2).map(|w| [w[0], w[1]]))
        .filter(|s| s[0] != s[1])
        .collect();
    Polyline2D::new(vertices, segments)
}

/// Whether the file holds `l` records but no faces.
pub fn obj_has_only_lines(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text, path)?;
    Ok(records.faces.is_empty() && !records.lines.is_empty())
}

#[derive(Default)]
struct Records {
    vertices: Vec<[f64; 3]>,
    faces: Vec<Vec<usize>>,
    lines: Vec<Vec<usize>>,
}

fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let r = parse_records(text, path)?;
    let mut tris = Vec::new();
    for idx in &r.faces {
        for k in 1..idx.len().saturating_sub(1) {
            let t = [idx[0], idx[k], idx[k + 1]];
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                tris.push(t);
            }
        }
    }
    TriangleMesh::new(r.vertices, tris)
}

fn parse_records(text: &str, path: &Path) -> Result<Records> {
    let mut r = Records::default();
    let vertices = &mut r.vertices;
    for (lineno, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(lineno + 1),
            message,
        };
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: `{t}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if c.len() != 3 || c.iter().any(|x| !x.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some(kind @ ("f" | "l")) => {
                let n = vertices.len() as i64;
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| err(format!("bad {kind} index `{t}`")))?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(err(format!("{kind} index `{t}` out of range")));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if kind == "f" {
                    r.faces.push(idx);
                } else {
                    r.lines.push(idx);
                }
            }
            _ => {}
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_triangle_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.obj");
        let mesh =
            TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        save_obj_mesh(&mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert!(text.lines().any(|l| l == "f 1 2 3"));
        assert_eq!(load_obj_mesh(&path).unwrap(), mesh);
    }

    #[test]
    fn empty_mesh_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.obj");
        save_obj_mesh(&TriangleMesh::default(), &path).unwrap();
        assert!(load_obj_mesh(&path).unwrap().is_empty());
    }

    #[test]
    fn parses_slashes_negative_indices_and_quads() {
        let m = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -1\n",
            Path::new("q.obj"),
        )
        .unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3], [0, 1, 3]]);
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("bad.obj")).is_err());
    }

    #[test]
    fn polyline_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.obj");
        let p = Polyline2D::new(vec![[0.0, 0.0], [1.0, 0.5]], vec![[0, 1]]).unwrap();
        save_obj_polyline(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "v 0 0 0\nv 1 0.5 0\nl 1 2\n");
        assert_eq!(load_obj_polyline(&path).unwrap(), p);
        assert!(obj_has_only_lines(&path).unwrap());
    }
}
