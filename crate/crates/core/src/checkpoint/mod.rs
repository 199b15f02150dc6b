//! Checkpoints: the cloud as a binary PLY vertex table, followed in the same
//! file by a network section.
//!
//! Network section layout: the 8-byte magic `TSPLNET1`, a little-endian
//! `u64` manifest length, the JSON manifest, then every network tensor in
//! manifest order as little-endian floats of the manifest's dtype.
//!
//! Values are written as `float` when every one of them is exactly
//! representable in `f32`, otherwise as `double`, so loading always restores
//! the saved bits.

pub mod ply;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::net::{ModulationNet, NetConfig};
use ply::{read_ply, write_ply, ScalarType};

pub const NET_MAGIC: &[u8; 8] = b"TSPLNET1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_TAG: &str = "thermosplat";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub net: ModulationNet,
    /// Free-form configuration echo stored alongside the parameters.
    pub config: Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    net: NetConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    config: Value,
}

fn fits_f32(vals: impl IntoIterator<Item = f64>) -> bool {
    vals.into_iter().all(|v| (v as f32) as f64 == v)
}

/// PLY property names; SH follows the common `f_dc_*` / `f_rest_*`
/// convention with the rest coefficients grouped per color channel.
pub fn property_names(sh_degree: usize, feature_dim: usize) -> Vec<String> {
    let mut n: Vec<String> = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    n.push("opacity".into());
    n.push("thermal_opacity_offset".into());
    n.extend((0..3).map(|c| format!("f_dc_{c}")));
    let rest = 3 * ((sh_degree + 1) * (sh_degree + 1) - 1);
    n.extend((0..rest).map(|k| format!("f_rest_{k}")));
    n.extend((0..feature_dim).map(|k| format!("feat_{k}")));
    n
}

fn cloud_rows(cloud: &GaussianCloud) -> Vec<f64> {
    let nc = cloud.sh_coeff_count();
    let mut out = Vec::with_capacity(cloud.len() * property_names(cloud.sh_degree, cloud.feature_dim).len());
    for i in 0..cloud.len() {
        out.extend_from_slice(&cloud.positions[3 * i..3 * i + 3]);
        out.extend_from_slice(&cloud.log_scales[3 * i..3 * i + 3]);
        out.extend_from_slice(&cloud.rotations[4 * i..4 * i + 4]);
        out.push(cloud.opacity_logits[i]);
        out.push(cloud.thermal_opacity_offsets[i]);
        let sh = cloud.sh(i);
        out.extend_from_slice(&sh[..3]);
        for c in 0..3 {
            for k in 1..nc {
                out.push(sh[3 * k + c]);
            }
        }
        out.extend_from_slice(cloud.feature(i));
    }
    out
}

fn rows_to_cloud(vals: &[f64], n: usize, sh_degree: usize, feature_dim: usize) -> GaussianCloud {
    let mut c = GaussianCloud::zeros(n, sh_degree, feature_dim);
    let nc = c.sh_coeff_count();
    let stride = vals.len() / n.max(1);
    for i in 0..n {
        let r = &vals[i * stride..(i + 1) * stride];
        c.positions[3 * i..3 * i + 3].copy_from_slice(&r[0..3]);
        c.log_scales[3 * i..3 * i + 3].copy_from_slice(&r[3..6]);
        c.rotations[4 * i..4 * i + 4].copy_from_slice(&r[6..10]);
        c.opacity_logits[i] = r[10];
        c.thermal_opacity_offsets[i] = r[11];
        let w = 3 * nc;
        let sh = &mut c.sh_coeffs[w * i..w * (i + 1)];
        sh[..3].copy_from_slice(&r[12..15]);
        let mut off = 15;
        for ch in 0..3 {
            for k in 1..nc {
                sh[3 * k + ch] = r[off];
                off += 1;
            }
        }
        c.features[feature_dim * i..feature_dim * (i + 1)].copy_from_slice(&r[off..off + feature_dim]);
    }
    c
}

pub fn encode(cloud: &GaussianCloud, net: &ModulationNet, config: &Value) -> Result<Vec<u8>> {
    cloud.validate()?;
    net.validate()?;
    if net.feature_dim() != cloud.feature_dim {
        return Err(Error::shape(format!(
            "network expects d={} but the cloud has d={}",
            net.feature_dim(),
            cloud.feature_dim
        )));
    }
    let rows = cloud_rows(cloud);
    let tensors = net.tensors();
    let single = fits_f32(rows.iter().copied()) && fits_f32(tensors.iter().flat_map(|t| t.data.iter().copied()));
    let ty = if single { ScalarType::F32 } else { ScalarType::F64 };
    let mut buf = Vec::new();
    let comments = vec![
        format!("{HEADER_TAG} {FORMAT_VERSION}"),
        format!("sh_degree {}", cloud.sh_degree),
        format!("feature_dim {}", cloud.feature_dim),
    ];
    write_ply(
        &mut buf,
        &comments,
        &property_names(cloud.sh_degree, cloud.feature_dim),
        ty,
        cloud.len(),
        &rows,
    )?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype: if single { "f32" } else { "f64" }.into(),
        net: net.config(),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.to_vec(),
            })
            .collect(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    buf.extend_from_slice(NET_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &tensors {
        for &v in t.data.iter() {
            if single {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

fn header_value(comments: &[String], key: &str) -> Result<usize> {
    comments
        .iter()
        .find_map(|c| c.strip_prefix(key).map(str::trim))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(format!("checkpoint header lacks `{key}`")))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let (table, used) = read_ply(bytes)?;
    let version = header_value(&table.comments, HEADER_TAG)?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let sh_degree = header_value(&table.comments, "sh_degree")?;
    let feature_dim = header_value(&table.comments, "feature_dim")?;
    if sh_degree > 3 || feature_dim == 0 || feature_dim > 4096 {
        return Err(Error::format(format!("bad header: sh_degree {sh_degree}, feature_dim {feature_dim}")));
    }
    let names = property_names(sh_degree, feature_dim);
    if table.properties.len() != names.len() || table.properties.iter().zip(&names).any(|((a, _), b)| a != b) {
        return Err(Error::format("vertex properties do not match the checkpoint layout"));
    }
    let cloud = rows_to_cloud(&table.values, table.rows, sh_degree, feature_dim);

    let rest = &bytes[used..];
    if rest.len() < 16 || &rest[..8] != NET_MAGIC {
        return Err(Error::format("network section missing or has a bad magic"));
    }
    let mlen = u64::from_le_bytes(rest[8..16].try_into().unwrap());
    let rest = &rest[16..];
    if mlen > rest.len() as u64 {
        return Err(Error::format("network manifest is truncated"));
    }
    let (mjson, payload) = rest.split_at(mlen as usize);
    let manifest: Manifest =
        serde_json::from_slice(mjson).map_err(|e| Error::format(format!("bad network manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported network version {}", manifest.version)));
    }
    let width = match manifest.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        d => return Err(Error::format(format!("unknown dtype `{d}`"))),
    };
    if manifest.net.feature_dim != feature_dim {
        return Err(Error::format(format!(
            "network was saved for d={} but the cloud has d={feature_dim}",
            manifest.net.feature_dim
        )));
    }
    manifest
        .net
        .validate()
        .map_err(|e| Error::format(format!("bad network config: {e}")))?;
    // Size check before allocating anything from the manifest.
    let mut total: u64 = 0;
    for t in &manifest.tensors {
        let n = t.shape.iter().try_fold(1u64, |a, &s| a.checked_mul(s as u64));
        total = n
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| Error::format("tensor shape overflows"))?;
    }
    if total.checked_mul(width as u64) != Some(payload.len() as u64) {
        return Err(Error::format(format!(
            "network payload has {} bytes, manifest needs {} values",
            payload.len(),
            total
        )));
    }
    if manifest.net.param_count() != Some(total as usize) {
        return Err(Error::format("network config does not match the declared tensor sizes"));
    }
    let mut net = ModulationNet::new(&manifest.net, &mut ChaCha8Rng::seed_from_u64(0))?;
    {
        let layout = net.tensors();
        if layout.len() != manifest.tensors.len()
            || layout
                .iter()
                .zip(&manifest.tensors)
                .any(|(a, b)| a.name != b.name || a.shape.as_slice() != b.shape.as_slice())
        {
            return Err(Error::format("network tensors do not match the declared architecture"));
        }
    }
    let mut off = 0;
    for t in net.tensors_mut() {
        for v in t.iter_mut() {
            let b = &payload[off..off + width];
            *v = if width == 4 {
                f32::from_le_bytes(b.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(b.try_into().unwrap())
            };
            off += width;
        }
    }
    cloud
        .validate()
        .map_err(|e| Error::format(format!("checkpoint cloud is invalid: {e}")))?;
    Ok(Checkpoint {
        cloud,
        net,
        config: manifest.config,
    })
}

pub fn checkpoint_save(path: &Path, cloud: &GaussianCloud, net: &ModulationNet, config: &Value) -> Result<()> {
    let bytes = encode(cloud, net, config)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

/// Loads a checkpoint and requires it to match the configured feature size.
pub fn checkpoint_load_for(path: &Path, feature_dim: usize) -> Result<Checkpoint> {
    let ck = checkpoint_load(path)?;
    if ck.cloud.feature_dim != feature_dim {
        return Err(Error::format(format!(
            "feature dimension mismatch: checkpoint has d={} but the configuration asks for d={feature_dim}",
            ck.cloud.feature_dim
        )));
    }
    Ok(ck)
}
