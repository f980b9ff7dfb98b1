use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::PointCloud;
use crate::error::{Error, Result};

/// On-disk point formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Ply,
    Xyz,
    /// KITTI velodyne scans: little-endian `f32` x, y, z, intensity records.
    KittiBin,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::Ply),
            "xyz" | "txt" => Some(Self::Xyz),
            "bin" => Some(Self::KittiBin),
            _ => None,
        }
    }
}

impl std::str::FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" => Ok(Self::Ply),
            "xyz" => Ok(Self::Xyz),
            "kitti-bin" | "kitti" | "bin" => Ok(Self::KittiBin),
            other => Err(Error::InvalidArgument(format!("unknown point format {other:?}"))),
        }
    }
}

pub fn load_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud<f64>> {
    let bytes = fs::read(path)?;
    let points = match format {
        PointFormat::Ply => parse_ply(&bytes)?,
        PointFormat::Xyz => parse_xyz(&bytes)?,
        PointFormat::KittiBin => parse_kitti(&bytes)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    PointCloud::new(points)
}

/// PLY is written as binary little-endian doubles, `.xyz` as text.
pub fn save_point_cloud(path: &Path, pc: &PointCloud<f64>, format: PointFormat) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match format {
        PointFormat::Ply => {
            write!(
                w,
                "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
                 property double x\nproperty double y\nproperty double z\nend_header\n",
                pc.count()
            )?;
            for p in pc.points() {
                for &c in p {
                    w.write_f64::<LittleEndian>(c)?;
                }
            }
        }
        PointFormat::Xyz => {
            for p in pc.points() {
                writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
            }
        }
        PointFormat::KittiBin => {
            for p in pc.points() {
                for &c in p {
                    w.write_f32::<LittleEndian>(c as f32)?;
                }
                w.write_f32::<LittleEndian>(0.0)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_kitti(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(parse_err(
            bytes.len() - bytes.len() % 16,
            "trailing bytes after the last 16-byte record",
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|r| {
            [
                LittleEndian::read_f32(&r[0..4]) as f64,
                LittleEndian::read_f32(&r[4..8]) as f64,
                LittleEndian::read_f32(&r[8..12]) as f64,
            ]
        })
        .collect())
}

fn parse_xyz(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| parse_err(e.valid_up_to(), "invalid utf-8"))?;
    let mut points = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty());
        let mut p = [0.0; 3];
        for c in p.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| parse_err(start, "expected three coordinates"))?;
            *c = field
                .parse()
                .map_err(|_| parse_err(start, format!("bad number {field:?}")))?;
        }
        points.push(p);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy)]
enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => LittleEndian::read_i16(b) as f64,
            Self::U16 => LittleEndian::read_u16(b) as f64,
            Self::I32 => LittleEndian::read_i32(b) as f64,
            Self::U32 => LittleEndian::read_u32(b) as f64,
            Self::F32 => LittleEndian::read_f32(b) as f64,
            Self::F64 => LittleEndian::read_f64(b),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, kind: ScalarKind },
    List,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(start, "unterminated header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| parse_err(start, "non-ascii header"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(parse_err(0, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                binary = Some(match tok.next() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => {
                        return Err(parse_err(at, format!("unsupported ply format {other:?}")))
                    }
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(at, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(at, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(at, "property before element"))?;
                match tok.next() {
                    Some("list") => el.props.push(Property::List),
                    Some(ty) => {
                        let kind = ScalarKind::parse(ty)
                            .ok_or_else(|| parse_err(at, format!("unknown property type {ty}")))?;
                        let name = tok.next().ok_or_else(|| parse_err(at, "property without name"))?;
                        el.props.push(Property::Scalar {
                            name: name.to_string(),
                            kind,
                        });
                    }
                    None => return Err(parse_err(at, "empty property line")),
                }
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(at, format!("unexpected header keyword {other}"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(0, "missing format line"))?;

    let vertex_idx = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(pos, "no vertex element"))?;
    let vertex = &elements[vertex_idx];
    let slot = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
            .ok_or_else(|| parse_err(pos, format!("vertex has no {axis} property")))
    };
    let axes = [slot("x")?, slot("y")?, slot("z")?];

    if binary {
        // elements preceding the vertex block must be fixed-size to be skippable
        for el in &elements[..vertex_idx] {
            let mut size = 0;
            for p in &el.props {
                match p {
                    Property::Scalar { kind, .. } => size += kind.size(),
                    Property::List => {
                        return Err(parse_err(pos, "list element before vertex block"))
                    }
                }
            }
            pos += size * el.count;
        }
        let mut layout = Vec::new();
        let mut stride = 0;
        for p in &vertex.props {
            match p {
                Property::Scalar { kind, .. } => {
                    layout.push((stride, *kind));
                    stride += kind.size();
                }
                Property::List => return Err(parse_err(pos, "list property in vertex element")),
            }
        }
        let need = stride * vertex.count;
        if bytes.len() < pos + need {
            return Err(parse_err(
                bytes.len(),
                format!("vertex data truncated: need {need} bytes from offset {pos}"),
            ));
        }
        let mut points = Vec::with_capacity(vertex.count);
        for i in 0..vertex.count {
            let rec = &bytes[pos + i * stride..];
            let mut p = [0.0; 3];
            for (a, &s) in axes.iter().enumerate() {
                let (off, kind) = layout[s];
                p[a] = kind.read_le(&rec[off..off + kind.size()]);
            }
            points.push(p);
        }
        Ok(points)
    } else {
        let text_start = pos;
        let text = std::str::from_utf8(&bytes[text_start..])
            .map_err(|e| parse_err(text_start + e.valid_up_to(), "invalid utf-8 in body"))?;
        let mut lines = text.split_inclusive('\n');
        let mut offset = text_start;
        let mut take_line = |offset: &mut usize| -> Result<(usize, &str)> {
            loop {
                let line = lines
                    .next()
                    .ok_or_else(|| parse_err(*offset, "unexpected end of ascii body"))?;
                let at = *offset;
                *offset += line.len();
                if !line.trim().is_empty() {
                    return Ok((at, line));
                }
            }
        };
        for el in &elements[..vertex_idx] {
            for _ in 0..el.count {
                take_line(&mut offset)?;
            }
        }
        let mut points = Vec::with_capacity(vertex.count);
        for _ in 0..vertex.count {
            let (at, line) = take_line(&mut offset)?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < vertex.props.len() {
                return Err(parse_err(at, "too few vertex fields"));
            }
            let mut p = [0.0; 3];
            for (a, &s) in axes.iter().enumerate() {
                p[a] = fields[s]
                    .parse()
                    .map_err(|_| parse_err(at, format!("bad number {:?}", fields[s])))?;
            }
            points.push(p);
        }
        Ok(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(bytes: &[u8], ext: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(bytes).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn ascii_ply_three_vertices() {
        let ply = "ply\nformat ascii 1.0\ncomment x\nelement vertex 3\nproperty float x\n\
                   property float y\nproperty float z\nproperty uchar red\nelement face 0\n\
                   property list uchar int vertex_indices\nend_header\n0 0 0 1\n1 2 3 4\n-1 0.5 2 5\n";
        let path = write_tmp(ply.as_bytes(), ".ply");
        let pc = load_point_cloud(&path, PointFormat::Ply).unwrap();
        assert_eq!(pc.count(), 3);
        assert_eq!(pc.points()[2], [-1.0, 0.5, 2.0]);
    }

    #[test]
    fn binary_ply_float32_and_roundtrip() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n\
                      property float y\nproperty float z\nend_header\n"
            .to_vec();
        for v in [1.5f32, 2.0, 3.0, -4.0, 5.0, 6.25] {
            b.write_f32::<LittleEndian>(v).unwrap();
        }
        let path = write_tmp(&b, ".ply");
        let pc = load_point_cloud(&path, PointFormat::Ply).unwrap();
        assert_eq!(pc.points(), &[[1.5, 2.0, 3.0], [-4.0, 5.0, 6.25]]);

        let out = tempfile::Builder::new().suffix(".ply").tempfile().unwrap().into_temp_path();
        save_point_cloud(&out, &pc, PointFormat::Ply).unwrap();
        assert_eq!(load_point_cloud(&out, PointFormat::Ply).unwrap(), pc);
    }

    #[test]
    fn truncated_binary_ply_names_offset() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\n\
                      property double y\nproperty double z\nend_header\n"
            .to_vec();
        b.extend_from_slice(&[0u8; 20]);
        let path = write_tmp(&b, ".ply");
        match load_point_cloud(&path, PointFormat::Ply) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, b.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_text() {
        let path = write_tmp(b"0 0 0\n1 1 1", ".xyz");
        let pc = load_point_cloud(&path, PointFormat::Xyz).unwrap();
        assert_eq!(pc.count(), 2);
        let bad = write_tmp(b"0 0 0\n1 x 1\n", ".xyz");
        match load_point_cloud(&bad, PointFormat::Xyz) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kitti_record_drops_intensity() {
        let mut b = Vec::new();
        for v in [1.25f32, -2.5, 3.75, 0.9] {
            b.write_f32::<LittleEndian>(v).unwrap();
        }
        assert_eq!(b.len(), 16);
        let path = write_tmp(&b, ".bin");
        let pc = load_point_cloud(&path, PointFormat::KittiBin).unwrap();
        assert_eq!(pc.points(), &[[1.25, -2.5, 3.75]]);
        let bad = write_tmp(&b[..10], ".bin");
        assert!(matches!(
            load_point_cloud(&bad, PointFormat::KittiBin),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let path = write_tmp(b"", ".xyz");
        assert!(matches!(
            load_point_cloud(&path, PointFormat::Xyz),
            Err(Error::EmptyInput)
        ));
    }
}
