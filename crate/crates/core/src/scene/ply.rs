//! Binary little-endian PLY in the 3DGS field convention.
//!
//! Stored fields are pre-activation: `opacity` is a logit, `scale_*` are
//! natural logs, `rot_*` is a (w, x, y, z) quaternion that may be
//! unnormalized. `f_rest_*` is channel-major: all red coefficients of
//! bands 1.. first, then green, then blue.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use super::sh::{coefficient_count, degree_for_len};
use super::{Gaussian, Scene, MIN_SCALE};
use crate::error::{Error, Result};

/// How stored opacity/scale values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// `opacity = logistic(raw)`, `scale = exp(raw)`.
    #[default]
    Apply,
    /// Values are already activated.
    PreActivated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    stride: usize,
    properties: Vec<Property>,
}

impl Header {
    fn field(&self, name: &str) -> Result<&Property> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Format(format!("missing required vertex property `{name}`")))
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(Error::Format("missing `ply` magic".into()));
    }
    let mut format_seen = false;
    let mut in_vertex = false;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut stride = 0;
    loop {
        let l = next_line(reader)?;
        let mut tok = l.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(Error::Format(format!(
                        "unsupported format line `{l}` (need binary_little_endian)"
                    )));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().unwrap_or_default();
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line `{l}`")))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::Format("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::Format(format!(
                            "element `{name}` precedes vertex data"
                        )));
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                let ty = tok.next().unwrap_or_default();
                if ty == "list" {
                    if in_vertex {
                        return Err(Error::Format("list properties on vertices are not supported".into()));
                    }
                    continue;
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type in `{l}`")))?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::Format(format!("bad property line `{l}`")))?;
                if in_vertex {
                    properties.push(Property {
                        name: name.to_string(),
                        ty,
                        offset: stride,
                    });
                    stride += ty.size();
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::Format(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(Error::Format("missing format line".into()));
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    Ok(Header {
        vertex_count,
        stride,
        properties,
    })
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene> {
    load_ply_with(path, Activation::Apply)
}

pub fn load_ply_with(path: impl AsRef<Path>, activation: Activation) -> Result<Scene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = read_header(&mut reader)?;

    let pos: Vec<&Property> = ["x", "y", "z"].iter().map(|n| header.field(n)).collect::<Result<_>>()?;
    let dc: Vec<&Property> = ["f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|n| header.field(n))
        .collect::<Result<_>>()?;
    let opacity = header.field("opacity")?;
    let scale: Vec<&Property> = ["scale_0", "scale_1", "scale_2"]
        .iter()
        .map(|n| header.field(n))
        .collect::<Result<_>>()?;
    let rot: Vec<&Property> = ["rot_0", "rot_1", "rot_2", "rot_3"]
        .iter()
        .map(|n| header.field(n))
        .collect::<Result<_>>()?;

    let rest_count = header
        .properties
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    if rest_count % 3 != 0 {
        return Err(Error::Format(format!("{rest_count} f_rest fields is not a multiple of 3")));
    }
    let degree = degree_for_len(rest_count / 3 + 1)
        .ok_or_else(|| Error::Format(format!("{rest_count} f_rest fields matches no SH degree <= 3")))?;
    let rest: Vec<&Property> = (0..rest_count)
        .map(|i| header.field(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let per_channel = coefficient_count(degree) - 1;

    let mut record = vec![0u8; header.stride];
    let mut gaussians = Vec::with_capacity(header.vertex_count);
    for index in 0..header.vertex_count {
        reader
            .read_exact(&mut record)
            .map_err(|e| Error::Data {
                record: index,
                message: format!("truncated vertex data: {e}"),
            })?;
        let get = |p: &Property| p.ty.read(&record[p.offset..]);
        let data_err = |message: String| Error::Data { record: index, message };

        let all = pos
            .iter()
            .chain(&dc)
            .chain(std::iter::once(&opacity))
            .chain(&scale)
            .chain(&rot)
            .chain(&rest);
        for p in all {
            if !get(p).is_finite() {
                return Err(data_err(format!("non-finite value in `{}`", p.name)));
            }
        }

        let mean = Point3::new(get(pos[0]), get(pos[1]), get(pos[2]));
        let raw_scale = Vector3::new(get(scale[0]), get(scale[1]), get(scale[2]));
        let (scale_v, opacity_v) = match activation {
            Activation::Apply => (raw_scale.map(f64::exp), logistic(get(opacity))),
            Activation::PreActivated => (raw_scale, get(opacity)),
        };
        let q = Quaternion::new(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3]));
        if !(q.norm() > 0.0) {
            return Err(data_err("zero-length rotation quaternion".into()));
        }
        // Already unit to float32 precision: keep the stored values so a
        // save/load cycle is bit-exact.
        let rotation = if (q.norm_squared() - 1.0).abs() <= UNIT_QUATERNION_SLACK {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };

        let mut sh = Vec::with_capacity(per_channel + 1);
        sh.push([get(dc[0]), get(dc[1]), get(dc[2])]);
        for j in 0..per_channel {
            sh.push([
                get(rest[j]),
                get(rest[per_channel + j]),
                get(rest[2 * per_channel + j]),
            ]);
        }

        if scale_v.iter().any(|&s| !(s >= MIN_SCALE)) {
            return Err(Error::Degenerate(format!(
                "record {index}: scale {:?} below {MIN_SCALE:e}",
                scale_v.as_slice()
            )));
        }
        if !(opacity_v > 0.0 && opacity_v <= 1.0) {
            return Err(data_err(format!("opacity {opacity_v} outside (0, 1]")));
        }
        gaussians.push(Gaussian {
            mean,
            rotation,
            scale: scale_v,
            opacity: opacity_v,
            sh,
        });
    }
    Ok(Scene::new(gaussians))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const UNIT_QUATERNION_SLACK: f64 = 8.0 * f32::EPSILON as f64;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Writes float32 fields with the inverse activations applied.
///
/// All Gaussians must share one SH degree.
pub fn save_ply(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let degree = scene.sh_degree();
    if let Some((i, _)) = scene
        .gaussians
        .iter()
        .enumerate()
        .find(|(_, g)| g.sh.len() != coefficient_count(degree))
    {
        return Err(Error::Shape(format!(
            "gaussian {i} has a different SH degree than the scene ({degree})"
        )));
    }
    let per_channel = coefficient_count(degree) - 1;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for i in 0..3 * per_channel {
        header.push_str(&format!("property float f_rest_{i}\n"));
    }
    for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");

    let mut body = Vec::with_capacity(scene.len() * 4 * (14 + 3 * per_channel));
    for g in &scene.gaussians {
        let mut put = |v: f64| body.extend_from_slice(&(v as f32).to_le_bytes());
        put(g.mean.x);
        put(g.mean.y);
        put(g.mean.z);
        for ch in 0..3 {
            put(g.sh[0][ch]);
        }
        for ch in 0..3 {
            for j in 0..per_channel {
                put(g.sh[j + 1][ch]);
            }
        }
        put(logit(g.opacity));
        for s in g.scale.iter() {
            put(s.ln());
        }
        let q = g.rotation.quaternion();
        put(q.w);
        put(q.i);
        put(q.j);
        put(q.k);
    }
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
