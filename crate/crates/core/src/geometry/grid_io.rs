//! Grid dump: a short text header followed by raw little-endian f32 values,
//! last axis fastest.
//!
//! ```text
//! NSHGRID 1
//! dims 2 2
//! origin -1 -1
//! spacing 2 2
//! end
//! <product(dims) * 4 bytes>
//! ```

use std::path::Path;

use super::ScalarGrid;
use crate::error::{Error, Location, Result};

const MAGIC: &str = "NSHGRID 1";

fn join(v: &[impl ToString]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn save_grid(grid: &ScalarGrid, path: &Path) -> Result<()> {
    if grid.values().len() != grid.dims().iter().product::<usize>() {
        return Err(Error::InvalidArgument("grid dims do not match value count".into()));
    }
    let mut out = format!(
        "{MAGIC}\ndims {}\norigin {}\nspacing {}\nend\n",
        join(grid.dims()),
        join(grid.origin()),
        join(grid.spacing())
    )
    .into_bytes();
    out.reserve(grid.values().len() * 4);
    for v in grid.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<ScalarGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Line(line),
        message: message.to_string(),
    };
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(lines.len() + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| err(lines.len() + 1, "header is not UTF-8"))?;
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(err(1, "missing grid magic"));
    }
    let field = |key: &str| -> Result<Vec<&str>> {
        let (lineno, line) = lines
            .iter()
            .enumerate()
            .find(|(_, l)| l.split_whitespace().next() == Some(key))
            .ok_or_else(|| err(lines.len() + 1, &format!("missing `{key}` line")))?;
        let toks: Vec<&str> = line.split_whitespace().skip(1).collect();
        if toks.is_empty() {
            return Err(err(lineno + 1, &format!("empty `{key}` line")));
        }
        Ok(toks)
    };
    let parse_all = |key: &str| -> Result<Vec<f64>> {
        field(key)?
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| err(0, &format!("bad `{key}` value `{t}`"))))
            .collect()
    };
    let dims = field("dims")?
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| err(2, &format!("bad dims value `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let origin = parse_all("origin")?;
    let spacing = parse_all("spacing")?;
    let count: usize = dims.iter().product();
    let payload = &bytes[pos..];
    if payload.len() != count * 4 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: Location::Byte(pos as u64),
            message: format!("expected {} payload bytes, found {}", count * 4, payload.len()),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    ScalarGrid::new(dims, origin, spacing, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_payload_size_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let g = ScalarGrid::new(vec![2, 2], vec![-1.0, -1.0], vec![2.0, 2.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        save_grid(&g, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = String::from_utf8_lossy(&bytes).find("end\n").unwrap() + 4;
        assert_eq!(bytes.len() - header_len, 16);
        assert_eq!(load_grid(&path).unwrap(), g);
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let g = ScalarGrid::new(vec![2, 3, 4], vec![0.5, -1.0, 0.0], vec![0.1, 0.2, 0.3], vals.clone()).unwrap();
        save_grid(&g, &path).unwrap();
        let back = load_grid(&path).unwrap();
        for (a, b) in back.values().iter().zip(&vals) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.dims(), g.dims());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        std::fs::write(&path, b"NSHGRID 1\ndims 2\norigin 0\nspacing 1\nend\n\0\0\0\0").unwrap();
        assert!(load_grid(&path).is_err());
    }
}
