//! Whitespace-separated ASCII points: `x y z` or `x y z nx ny nz` per line.

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Location, Result};

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub(crate) fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut coords = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(lineno + 1),
            message,
        };
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("not a number: `{tok}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(err(format!("expected 3 or 6 columns, found {}", values.len())));
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(err(format!("column count changed from {c} to {}", values.len())))
            }
            _ => {}
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(err(format!("non-finite value in column {}", i + 1)));
        }
        coords.extend_from_slice(&values[..3]);
        if values.len() == 6 {
            normals.extend_from_slice(&values[3..]);
        }
    }
    let normals = (columns == Some(6)).then_some(normals);
    PointCloud::new(3, coords, normals)
}

/// Writes one point per line; planar clouds get a zero z column.
pub fn save_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..cloud.len() {
        let p = lift(cloud.point(i));
        match cloud.normal(i) {
            Some(n) => {
                let n = lift(n);
                let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]);
            }
            None => {
                let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn lift(p: &[f64]) -> [f64; 3] {
    [p[0], p[1], p.get(2).copied().unwrap_or(0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PointCloud> {
        parse_xyz(s, Path::new("test.xyz"))
    }

    #[test]
    fn two_points_without_normals() {
        let c = parse("0 0 0\n1 0 0").unwrap();
        assert_eq!(c.len(), 2);
        assert!(!c.has_normals());
        assert_eq!(c.point(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn point_with_normal() {
        let c = parse("# comment\n0 0 0 0 0 1\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.normal(0).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("0 0 0\n1 0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { location: Location::Line(2), .. }), "{e}");
        let e = parse("0 0 0\n1 x 0\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
        let e = parse("0 0 inf\n").unwrap_err();
        assert!(matches!(e, Error::Parse { location: Location::Line(1), .. }));
        let e = parse("0 0 0\n0 0 0 0 0 1\n").unwrap_err();
        assert!(e.to_string().contains("column count"));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = PointCloud::new(3, vec![0.125, -3.5, 1e-7, 2.0, 3.0, 4.0], Some(vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]))
            .unwrap();
        save_xyz(&c, &path).unwrap();
        assert_eq!(load_xyz(&path).unwrap(), c);
    }
}
