//! PLY 1.0 reader and writer (ascii and binary_little_endian).
//!
//! Vertices are written as float32 `x y z [nx ny nz]`, faces as
//! `property list uchar int vertex_indices`. The reader accepts any scalar
//! property types and skips elements it does not know.

use std::io::Write;
use std::path::Path;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Vertex positions, optional normals, and polygon index lists from a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    pub faces: Vec<Vec<usize>>,
}

impl PlyData {
    pub fn into_point_cloud(self) -> Result<PointCloud> {
        let coords = self.vertices.iter().flatten().copied().collect();
        let normals = self.normals.map(|n| n.iter().flatten().copied().collect());
        PointCloud::new(3, coords, normals)
    }

    /// Fan-triangulates polygons; polygons with repeated corners are skipped.
    pub fn into_mesh(self) -> Result<TriangleMesh> {
        let mut tris = Vec::new();
        for f in &self.faces {
            for k in 1..f.len().saturating_sub(1) {
                let t = [f[0], f[k], f[k + 1]];
                if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                    tris.push(t);
                }
            }
        }
        TriangleMesh::new(self.vertices, tris)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    encoding: Encoding,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        let location = match self.encoding {
            Encoding::Ascii => Location::Line(self.line),
            Encoding::BinaryLe => Location::Byte(self.pos as u64),
        };
        Error::Parse {
            path: self.path.to_path_buf(),
            location,
            message: message.into(),
        }
    }

    fn header_line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("unterminated header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header is not UTF-8"))?;
        self.pos += end + 1;
        self.line += 1;
        Ok(line.trim_end_matches('\r').trim())
    }

    fn ascii_token(&mut self) -> Result<&'a str> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(self.err("unexpected end of file")),
                Some(b'\n') => {
                    self.line += 1;
                    self.pos += 1;
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err("token is not UTF-8"))
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            Encoding::Ascii => {
                let tok = self.ascii_token()?;
                tok.parse::<f64>()
                    .map_err(|_| self.err(format!("not a number: `{tok}`")))
            }
            Encoding::BinaryLe => {
                let n = ty.size();
                let b = self
                    .bytes
                    .get(self.pos..self.pos + n)
                    .ok_or_else(|| self.err("unexpected end of binary data"))?;
                let v = match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                    Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
                };
                self.pos += n;
                Ok(v)
            }
        }
    }
}

pub fn load_ply(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

pub(crate) fn parse_ply(bytes: &[u8], path: &Path) -> Result<PlyData> {
    let mut cur = Cursor {
        path,
        bytes,
        pos: 0,
        line: 0,
        encoding: Encoding::Ascii,
    };
    if cur.header_line()? != "ply" {
        return Err(cur.err("missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = cur.header_line()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                encoding = Some(match toks.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => return Err(cur.err(format!("unsupported format `{other}`"))),
                    None => return Err(cur.err("format line without a value")),
                });
            }
            Some("element") => {
                let name = toks.next().ok_or_else(|| cur.err("element without a name"))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| cur.err("element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let toks: Vec<&str> = toks.collect();
                let prop = match toks.as_slice() {
                    ["list", c, i, name] => Property::List(
                        name.to_string(),
                        Scalar::parse(c).ok_or_else(|| cur.err(format!("unknown type `{c}`")))?,
                        Scalar::parse(i).ok_or_else(|| cur.err(format!("unknown type `{i}`")))?,
                    ),
                    [ty, name] => Property::Scalar(
                        name.to_string(),
                        Scalar::parse(ty).ok_or_else(|| cur.err(format!("unknown type `{ty}`")))?,
                    ),
                    _ => return Err(cur.err(format!("malformed property line `{line}`"))),
                };
                elements
                    .last_mut()
                    .ok_or_else(|| cur.err("property before any element"))?
                    .props
                    .push(prop);
            }
            Some(other) => return Err(cur.err(format!("unknown header keyword `{other}`"))),
        }
    }
    cur.encoding = encoding.ok_or_else(|| cur.err("missing format line"))?;
    // body starts on the line after end_header
    cur.line += 1;

    let mut data = PlyData::default();
    for el in &elements {
        match el.name.as_str() {
            "vertex" => read_vertices(&mut cur, el, &mut data)?,
            "face" => read_faces(&mut cur, el, &mut data)?,
            _ => {
                for _ in 0..el.count {
                    read_row(&mut cur, el, |_, _| Ok(()), |_, _| Ok(()))?;
                }
            }
        }
    }
    if let Some(n) = data.faces.iter().flatten().find(|&&i| i >= data.vertices.len()) {
        return Err(cur.err(format!("face index {n} out of range")));
    }
    Ok(data)
}

fn read_row(
    cur: &mut Cursor<'_>,
    el: &Element,
    mut on_scalar: impl FnMut(usize, f64) -> Result<()>,
    mut on_list: impl FnMut(usize, Vec<f64>) -> Result<()>,
) -> Result<()> {
    for (k, p) in el.props.iter().enumerate() {
        match p {
            Property::Scalar(_, ty) => {
                let v = cur.read(*ty)?;
                on_scalar(k, v)?;
            }
            Property::List(_, cty, ity) => {
                let n = cur.read(*cty)?;
                if !(n >= 0.0 && n.fract() == 0.0) {
                    return Err(cur.err(format!("invalid list length {n}")));
                }
                let items = (0..n as usize).map(|_| cur.read(*ity)).collect::<Result<Vec<_>>>()?;
                on_list(k, items)?;
            }
        }
    }
    Ok(())
}

fn read_vertices(cur: &mut Cursor<'_>, el: &Element, data: &mut PlyData) -> Result<()> {
    let find = |name: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
    };
    let pos = ["x", "y", "z"].map(find);
    let nrm = ["nx", "ny", "nz"].map(find);
    if pos.iter().any(Option::is_none) {
        return Err(cur.err("vertex element lacks x, y, z"));
    }
    let has_normals = nrm.iter().all(Option::is_some);
    let mut normals = Vec::new();
    for _ in 0..el.count {
        let mut row = vec![0.0; el.props.len()];
        read_row(
            cur,
            el,
            |k, v| {
                row[k] = v;
                Ok(())
            },
            |_, _| Ok(()),
        )?;
        let p = pos.map(|k| row[k.unwrap()]);
        if p.iter().any(|c| !c.is_finite()) {
            return Err(cur.err("non-finite vertex coordinate"));
        }
        data.vertices.push(p);
        if has_normals {
            normals.push(nrm.map(|k| row[k.unwrap()]));
        }
    }
    if has_normals {
        data.normals = Some(normals);
    }
    Ok(())
}

fn read_faces(cur: &mut Cursor<'_>, el: &Element, data: &mut PlyData) -> Result<()> {
    let list = el.props.iter().position(|p| {
        matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index")
    });
    let Some(list) = list else {
        return Err(cur.err("face element lacks vertex_indices"));
    };
    for _ in 0..el.count {
        let mut face = None;
        read_row(cur, el, |_, _| Ok(()), |k, items| {
            if k == list {
                face = Some(items);
            }
            Ok(())
        })?;
        let face = face.unwrap_or_default();
        if face.iter().any(|&i| i < 0.0 || i.fract() != 0.0) {
            return Err(cur.err("negative or fractional face index"));
        }
        data.faces.push(face.into_iter().map(|i| i as usize).collect());
    }
    Ok(())
}

fn header(out: &mut Vec<u8>, binary: bool, vertices: usize, normals: bool, faces: Option<usize>) {
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let mut h = format!("ply\nformat {format} 1.0\nelement vertex {vertices}\n");
    h.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals {
        h.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if let Some(f) = faces {
        h.push_str(&format!("element face {f}\nproperty list uchar int vertex_indices\n"));
    }
    h.push_str("end_header\n");
    out.extend_from_slice(h.as_bytes());
}

fn push_f32s(out: &mut Vec<u8>, binary: bool, vals: &[f64]) {
    if binary {
        for v in vals {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    } else {
        let line = vals
            .iter()
            .map(|v| (*v as f32).to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes a point cloud (planar clouds get z = 0).
pub fn save_ply_points(cloud: &PointCloud, path: &Path, binary: bool) -> Result<()> {
    let mut out = Vec::new();
    header(&mut out, binary, cloud.len(), cloud.has_normals(), None);
    for i in 0..cloud.len() {
        let mut row = super::xyz::lift(cloud.point(i)).to_vec();
        if let Some(n) = cloud.normal(i) {
            row.extend(super::xyz::lift(n));
        }
        push_f32s(&mut out, binary, &row);
    }
    write_file(path, &out)
}

pub fn save_ply_mesh(mesh: &TriangleMesh, path: &Path, binary: bool) -> Result<()> {
    let mut out = Vec::new();
    header(&mut out, binary, mesh.vertices().len(), false, Some(mesh.triangles().len()));
    for v in mesh.vertices() {
        push_f32s(&mut out, binary, v);
    }
    for t in mesh.triangles() {
        if binary {
            out.push(3);
            for &i in t {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        } else {
            out.extend_from_slice(format!("3 {} {} {}\n", t[0], t[1], t[2]).as_bytes());
        }
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_faces_and_extra_element() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nelement face 1\nproperty list uchar uint vertex_index\nelement edge 1\nproperty int a\nproperty int b\nend_header\n0 0 0 255\n1 0 0 0\n0 1 0 7\n3 0 1 2\n0 1\n";
        let d = parse_ply(text.as_bytes(), Path::new("t.ply")).unwrap();
        assert_eq!(d.vertices.len(), 3);
        assert_eq!(d.faces, vec![vec![0, 1, 2]]);
        assert!(d.normals.is_none());
    }

    #[test]
    fn reports_location() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 q 0\n";
        let e = parse_ply(text.as_bytes(), Path::new("t.ply")).unwrap_err();
        assert!(matches!(e, Error::Parse { location: Location::Line(9), .. }), "{e}");

        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bin.extend_from_slice(&[0u8; 16]);
        let e = parse_ply(&bin, Path::new("t.ply")).unwrap_err();
        assert!(matches!(e, Error::Parse { location: Location::Byte(_), .. }), "{e}");
    }

    #[test]
    fn rejects_out_of_range_faces() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(parse_ply(text.as_bytes(), Path::new("t.ply")).is_err());
    }

    #[test]
    fn point_round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(
            3,
            vec![0.1, 0.2, 0.3, -1.5, 2.25, 1e3],
            Some(vec![0.0, 0.6, 0.8, 1.0, 0.0, 0.0]),
        )
        .unwrap();
        for binary in [false, true] {
            let path = dir.path().join(format!("p{binary}.ply"));
            save_ply_points(&cloud, &path, binary).unwrap();
            let back = load_ply(&path).unwrap().into_point_cloud().unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in back.coords().iter().zip(cloud.coords()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
            for (a, b) in back.normals().unwrap().iter().zip(cloud.normals().unwrap()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mesh_round_trip_and_empty_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.25, 0.375, 1.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let path = dir.path().join("m.ply");
        save_ply_mesh(&mesh, &path, true).unwrap();
        assert_eq!(load_ply(&path).unwrap().into_mesh().unwrap(), mesh);

        let empty = TriangleMesh::default();
        save_ply_mesh(&empty, &path, true).unwrap();
        let back = load_ply(&path).unwrap().into_mesh().unwrap();
        assert!(back.is_empty() && back.vertices().is_empty());
    }
}
