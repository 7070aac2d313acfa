//! Point and mesh file formats.
//!
//! * XYZ text: one point per line, `x y z` or `x y z nx ny nz`; blank lines
//!   and `#` comments are skipped.
//! * PLY, `ascii 1.0` or `binary_little_endian 1.0`. The `vertex` element
//!   supplies `x y z` and optionally `nx ny nz` and `quality`; a `face`
//!   element with a `vertex_indices` (or `vertex_index`) list supplies
//!   triangles. Other elements and properties are skipped.
//! * OBJ: `v x y z` and `f a b c` lines (1-based, `a/t/n` forms accepted,
//!   polygons fan-triangulated). Everything else is ignored.
//!
//! Text writers print floats in shortest round-trip form, so files reload
//! bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::meshing::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Raw contents of a point or mesh file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Geometry {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub triangles: Vec<[usize; 3]>,
    pub scalars: Option<Vec<f64>>,
}

impl Geometry {
    pub fn into_mesh(self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.points,
            triangles: self.triangles,
            scalars: self.scalars,
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads a file by extension: `.ply`, `.obj`, anything else as XYZ text.
pub fn read_geometry(path: impl AsRef<Path>) -> Result<Geometry> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "ply" => parse_ply(path, &bytes),
        "obj" => parse_obj(path, text(path, &bytes)?),
        _ => parse_xyz(path, text(path, &bytes)?),
    }
}

fn text<'a>(path: &Path, bytes: &'a [u8]) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| parse_err(path, 0, format!("not UTF-8 text: {e}")))
}

pub fn parse_xyz(path: &Path, text: &str) -> Result<Geometry> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("not a number: {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 3 && vals.len() != 6 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 or 6 values, found {}", vals.len()),
            ));
        }
        if *columns.get_or_insert(vals.len()) != vals.len() {
            return Err(parse_err(path, line_no, "mixed 3- and 6-column lines"));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite value"));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        if vals.len() == 6 {
            normals.push(Vec3::new(vals[3], vals[4], vals[5]));
        }
    }
    Ok(Geometry {
        points,
        normals: (columns == Some(6)).then_some(normals),
        ..Default::default()
    })
}

pub fn write_xyz(path: impl AsRef<Path>, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(points.len() * 64);
    for (i, p) in points.iter().enumerate() {
        write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
        if let Some(ns) = normals {
            let n = ns[i];
            write!(out, " {:?} {:?} {:?}", n.x, n.y, n.z).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_obj(path: &Path, text: &str) -> Result<Geometry> {
    let mut points = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(path, line_no, e.to_string()))?;
                if vals.len() != 3 {
                    return Err(parse_err(path, line_no, "vertex needs three coordinates"));
                }
                points.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                let idx = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap();
                        let k: i64 = head
                            .parse()
                            .map_err(|_| parse_err(path, line_no, format!("bad index {t:?}")))?;
                        let n = points.len() as i64;
                        let k = if k < 0 { n + k } else { k - 1 };
                        if k < 0 || k >= n {
                            return Err(parse_err(
                                path,
                                line_no,
                                format!("index {t} out of range"),
                            ));
                        }
                        Ok(k as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        "face needs at least three vertices",
                    ));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(Geometry {
        points,
        triangles,
        ..Default::default()
    })
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(mesh.vertices.len() * 60 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a mesh (or, with no triangles, a point set) as PLY. The scalar
/// channel becomes a per-vertex `quality` property.
pub fn write_ply(path: impl AsRef<Path>, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let scalars = mesh.scalars.as_deref();
    let mut header = String::from("ply\n");
    header += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    writeln!(header, "element vertex {}", mesh.vertices.len()).unwrap();
    header += "property double x\nproperty double y\nproperty double z\n";
    if scalars.is_some() {
        header += "property double quality\n";
    }
    writeln!(header, "element face {}", mesh.triangles.len()).unwrap();
    header += "property list uchar int vertex_indices\nend_header\n";

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for (i, v) in mesh.vertices.iter().enumerate() {
                write!(body, "{:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
                if let Some(s) = scalars {
                    write!(body, " {:?}", s[i]).unwrap();
                }
                body.push('\n');
            }
            for t in &mesh.triangles {
                writeln!(body, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for c in v.to_array() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(s) = scalars {
                    out.extend_from_slice(&s[i].to_le_bytes());
                }
            }
            for t in &mesh.triangles {
                out.push(3);
                for &k in t {
                    let k = i32::try_from(k).expect("vertex index fits in a PLY int");
                    out.extend_from_slice(&k.to_le_bytes());
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parsed values of one element instance: scalars in property order, lists
/// collected separately.
struct Record {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Geometry> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| parse_err(path, 1, "missing end_header"))?;
    let mut body_start = header_end + b"end_header".len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) != Some(&b'\n') {
        return Err(parse_err(path, 1, "end_header must end its line"));
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| parse_err(path, 1, "header is not text"))?;

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 0;
    for (i, line) in header.lines().enumerate() {
        header_lines = i + 1;
        let line_no = i + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] if i == 0 => {}
            _ if i == 0 => return Err(parse_err(path, 1, "missing ply magic")),
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(
                            path,
                            line_no,
                            format!("unsupported format {other}"),
                        ))
                    }
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (c, t) = Scalar::parse(ct)
                    .zip(Scalar::parse(it))
                    .ok_or_else(|| parse_err(path, line_no, "unknown list type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), c, t));
            }
            ["property", ty, name] => {
                let t = Scalar::parse(ty)
                    .ok_or_else(|| parse_err(path, line_no, format!("unknown type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), t));
            }
            _ => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unrecognized header line {line:?}"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(path, 2, "missing format line"))?;
    let body = &bytes[body_start..];

    let mut geometry = Geometry::default();
    let mut reader = BodyReader {
        path,
        body,
        pos: 0,
        line: header_lines + 2,
        current: 0,
        format,
        tokens: Vec::new(),
    };
    for el in &elements {
        let scalar_index = |name: &str| {
            el.props
                .iter()
                .filter(|p| matches!(p, Property::Scalar(..)))
                .position(|p| p.name() == name)
        };
        let list_index = |names: &[&str]| {
            el.props
                .iter()
                .filter(|p| matches!(p, Property::List(..)))
                .position(|p| names.contains(&p.name()))
        };
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = [scalar_index("x"), scalar_index("y"), scalar_index("z")];
        let nxyz = [scalar_index("nx"), scalar_index("ny"), scalar_index("nz")];
        let quality = scalar_index("quality");
        let face_list = list_index(&["vertex_indices", "vertex_index"]);
        if is_vertex && xyz.iter().any(|i| i.is_none()) {
            return Err(parse_err(path, 1, "vertex element lacks x/y/z"));
        }
        let has_normals = nxyz.iter().all(|i| i.is_some());
        let mut normals = Vec::new();
        let mut scalars = Vec::new();
        for _ in 0..el.count {
            let rec = reader.record(el)?;
            if is_vertex {
                let at = |i: Option<usize>| rec.scalars[i.unwrap()];
                let p = Vec3::new(at(xyz[0]), at(xyz[1]), at(xyz[2]));
                if !p.is_finite() {
                    return Err(parse_err(path, reader.current, "non-finite vertex"));
                }
                geometry.points.push(p);
                if has_normals {
                    normals.push(Vec3::new(at(nxyz[0]), at(nxyz[1]), at(nxyz[2])));
                }
                if let Some(q) = quality {
                    scalars.push(rec.scalars[q]);
                }
            } else if is_face {
                if let Some(li) = face_list {
                    let idx = &rec.lists[li];
                    let n = geometry.points.len();
                    let idx = idx
                        .iter()
                        .map(|&v| {
                            if v < 0.0 || v as usize >= n {
                                Err(parse_err(
                                    path,
                                    reader.current,
                                    format!("face index {v} out of range"),
                                ))
                            } else {
                                Ok(v as usize)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if idx.len() < 3 {
                        return Err(parse_err(
                            path,
                            reader.current,
                            "face needs at least three vertices",
                        ));
                    }
                    for k in 1..idx.len() - 1 {
                        geometry.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
            }
        }
        if is_vertex {
            geometry.normals = has_normals.then_some(normals);
            geometry.scalars = quality.map(|_| scalars);
        }
    }
    Ok(geometry)
}

struct BodyReader<'a> {
    path: &'a Path,
    body: &'a [u8],
    pos: usize,
    /// Next unread text line.
    line: usize,
    /// Line of the record being parsed.
    current: usize,
    format: PlyFormat,
    tokens: Vec<f64>,
}

impl BodyReader<'_> {
    fn record(&mut self, el: &Element) -> Result<Record> {
        let mut rec = Record {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        match self.format {
            PlyFormat::Ascii => {
                self.next_line()?;
                let mut toks = std::mem::take(&mut self.tokens).into_iter();
                let mut next = |what: &str| {
                    toks.next().ok_or_else(|| {
                        parse_err(self.path, self.current, format!("missing {what}"))
                    })
                };
                for p in &el.props {
                    match p {
                        Property::Scalar(name, _) => rec.scalars.push(next(name)?),
                        Property::List(name, _, _) => {
                            let n = next(name)?;
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(parse_err(self.path, self.current, "bad list length"));
                            }
                            let items =
                                (0..n as usize).map(|_| next(name)).collect::<Result<_>>()?;
                            rec.lists.push(items);
                        }
                    }
                }
                if toks.next().is_some() {
                    return Err(parse_err(self.path, self.current, "extra values on line"));
                }
            }
            PlyFormat::BinaryLittleEndian => {
                for p in &el.props {
                    match p {
                        Property::Scalar(_, t) => rec.scalars.push(self.binary(*t)?),
                        Property::List(_, ct, it) => {
                            let n = self.binary(*ct)?;
                            let items = (0..n as usize)
                                .map(|_| self.binary(*it))
                                .collect::<Result<_>>()?;
                            rec.lists.push(items);
                        }
                    }
                }
            }
        }
        Ok(rec)
    }

    fn next_line(&mut self) -> Result<()> {
        loop {
            if self.pos >= self.body.len() {
                return Err(parse_err(self.path, self.line, "unexpected end of file"));
            }
            let end = self.body[self.pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(self.body.len(), |k| self.pos + k);
            let line = std::str::from_utf8(&self.body[self.pos..end])
                .map_err(|_| parse_err(self.path, self.line, "not text"))?;
            self.current = self.line;
            self.pos = end + 1;
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.tokens = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        parse_err(self.path, self.current, format!("not a number: {t:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            return Ok(());
        }
    }

    fn binary(&mut self, t: Scalar) -> Result<f64> {
        let n = t.size();
        let b = self.body.get(self.pos..self.pos + n).ok_or_else(|| {
            parse_err(
                self.path,
                0,
                format!("binary body truncated at byte {}", self.pos),
            )
        })?;
        self.pos += n;
        Ok(t.read_le(b))
    }
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
