//! Minimal PLY support: one `vertex` element of scalar properties, in ASCII
//! or binary little-endian form.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return Err(Error::format(format!("unsupported PLY property type `{s}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
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
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Parsed vertex table, values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyTable {
    pub comments: Vec<String>,
    pub properties: Vec<(String, ScalarType)>,
    pub rows: usize,
    /// Row-major `rows × properties`.
    pub values: Vec<f64>,
}

impl PlyTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.properties.len() + col]
    }
}

/// Parses a PLY file from `bytes`; returns the table and the number of
/// bytes consumed (binary payloads may be followed by other data).
pub fn read_ply(bytes: &[u8]) -> Result<(PlyTable, usize)> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("PLY header is truncated"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format("PLY header is not valid text"))?
            .trim_end_matches('\r')
            .to_string();
        *pos += end + 1;
        Ok(line)
    };
    if next_line(&mut pos)? != "ply" {
        return Err(Error::format("missing PLY magic"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut properties = Vec::new();
    let mut rows = None;
    let mut in_vertex = false;
    loop {
        if pos > 1 << 20 {
            return Err(Error::format("PLY header too long"));
        }
        let line = next_line(&mut pos)?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("format") => {
                format = Some(match (it.next(), it.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLe,
                    (f, _) => return Err(Error::format(format!("unsupported PLY format {f:?}"))),
                })
            }
            Some("comment") | Some("obj_info") => comments.push(line.split_once(' ').map_or("", |x| x.1).to_string()),
            Some("element") => {
                let name = it.next().unwrap_or("");
                let count: usize = it
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format("bad PLY element count"))?;
                if name == "vertex" {
                    if rows.is_some() {
                        return Err(Error::format("duplicate vertex element"));
                    }
                    rows = Some(count);
                    in_vertex = true;
                } else if rows.is_none() {
                    return Err(Error::format(format!("element `{name}` before vertex is not supported")));
                } else {
                    // Trailing elements (faces etc.) are ignored.
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = it.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::format("list properties on vertices are not supported"));
                }
                let ty = ScalarType::parse(ty)?;
                let name = it.next().ok_or_else(|| Error::format("unnamed PLY property"))?;
                properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::format(format!("unexpected PLY header line `{other}`"))),
            None => {}
        }
    }
    let format = format.ok_or_else(|| Error::format("PLY format line missing"))?;
    let rows = rows.ok_or_else(|| Error::format("PLY has no vertex element"))?;
    if properties.is_empty() {
        return Err(Error::format("PLY vertex element has no properties"));
    }
    let ncol = properties.len();
    let total = rows
        .checked_mul(ncol)
        .ok_or_else(|| Error::format("PLY vertex count overflows"))?;
    let mut values = Vec::new();
    match format {
        PlyFormat::BinaryLe => {
            let stride: usize = properties.iter().map(|(_, t)| t.size()).sum();
            let need = rows
                .checked_mul(stride)
                .ok_or_else(|| Error::format("PLY vertex count overflows"))?;
            if bytes.len() - pos < need {
                return Err(Error::format(format!(
                    "PLY payload truncated: {} of {need} bytes",
                    bytes.len() - pos
                )));
            }
            values.reserve(total);
            for r in 0..rows {
                let mut off = pos + r * stride;
                for (_, t) in &properties {
                    values.push(t.read_le(&bytes[off..off + t.size()]));
                    off += t.size();
                }
            }
            pos += need;
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| Error::format("ASCII PLY body is not text"))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::format(format!("PLY body ends at vertex {r} of {rows}")))?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < ncol {
                    return Err(Error::format(format!("vertex {r} has {} of {ncol} values", fields.len())));
                }
                for f in &fields[..ncol] {
                    values.push(
                        f.parse::<f64>()
                            .map_err(|_| Error::format(format!("vertex {r}: bad number `{f}`")))?,
                    );
                }
            }
            pos = bytes.len();
        }
    }
    Ok((
        PlyTable {
            comments,
            properties,
            rows,
            values,
        },
        pos,
    ))
}

/// Writes a binary little-endian vertex table where every property has type `ty`.
pub fn write_ply<W: Write>(
    w: &mut W,
    comments: &[String],
    names: &[String],
    ty: ScalarType,
    rows: usize,
    values: &[f64],
) -> Result<()> {
    assert_eq!(values.len(), rows * names.len());
    assert!(matches!(ty, ScalarType::F32 | ScalarType::F64));
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {rows}\n"));
    for n in names {
        header.push_str(&format!("property {} {n}\n", ty.name()));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * ty.size());
    for &v in values {
        match ty {
            ScalarType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            _ => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}
