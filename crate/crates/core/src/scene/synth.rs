//! Synthetic RGB/thermal scenes rendered by the engine itself, so the ground
//! truth is exactly representable.
//!
//! The ground-truth network decodes a constant implicit color
//! `k = sigmoid(IMPLICIT_LOGIT)`, and each Gaussian's SH color is its feature
//! color minus `k`. Its thermal branch is fitted to reproduce the blended
//! thermal feature channel. With both choices in place the feature-level
//! targets agree with the rendered images up to the fit error and the `k·T`
//! residue on uncovered pixels.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{transforms_json, MultiModalFrame, RgbtDataset};
use super::imageio::{write_png, BitDepth};
use crate::checkpoint::checkpoint_save;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::loss::THERMAL_FEATURE_CHANNEL;
use crate::model::{sh::SH_C0, sigmoid, Camera, GaussianCloud};
use crate::net::{ModulationNet, NetConfig, NetOptions};
use crate::par;
use crate::pipeline::{render_frame, RenderConfig};
use crate::train::adam::{adam_update, AdamHyper, Moments};

/// Logit of the constant implicit color of the ground-truth network.
pub const IMPLICIT_LOGIT: f64 = -6.0;
pub const RING_RADIUS: f64 = 2.0;
/// Focal length in units of the image size.
pub const FOCAL_FACTOR: f64 = 1.1;
pub const BOX_HALF: f64 = 0.5;

const FIT_SAMPLES: usize = 1024;
const FIT_STEPS: u64 = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Random colored Gaussians; a subset carries a thermal opacity offset.
    #[default]
    Standard,
    /// Small textured Gaussians hidden from the thermal pass plus large,
    /// nearly transparent blobs that only the thermal pass sees.
    Decoupling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_gaussians: usize,
    pub n_cameras: usize,
    pub image_size: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub kind: SynthKind,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_gaussians: 50,
            n_cameras: 24,
            image_size: 64,
            seed: 0,
            feature_dim: 8,
            kind: SynthKind::Standard,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub cloud: GaussianCloud,
    pub net: ModulationNet,
    pub render: RenderConfig,
    pub dataset: RgbtDataset,
}

/// Smooth scalar field over the box, with values in about `[0.15, 0.85]`.
fn thermal_field(p: &Vector3<f64>) -> f64 {
    0.5 + 0.25 * (2.2 * p.x + 0.7).sin() * (1.8 * p.y - 0.4).cos() + 0.1 * (1.5 * p.z).sin()
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

fn sample_cloud(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let n = spec.n_gaussians;
    let d = spec.feature_dim;
    let k = sigmoid(IMPLICIT_LOGIT);
    let mut c = GaussianCloud::new(n, 0, d);
    let latent = Normal::new(0.0, 0.3).unwrap();
    let n_blobs = match spec.kind {
        SynthKind::Standard => 0,
        SynthKind::Decoupling => (n / 5).max(1).min(n),
    };
    for i in 0..n {
        let blob = i >= n - n_blobs;
        let half = if blob { 0.7 * BOX_HALF } else { BOX_HALF };
        let p = Vector3::from_fn(|_, _| rng.random_range(-half..half));
        c.positions[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        let (lo, hi): (f64, f64) = match (spec.kind, blob) {
            (SynthKind::Standard, _) => (0.06, 0.16),
            (SynthKind::Decoupling, false) => (0.03, 0.07),
            (SynthKind::Decoupling, true) => (0.2, 0.3),
        };
        for a in 0..3 {
            c.log_scales[3 * i + a] = rng.random_range(lo.ln()..hi.ln());
        }
        c.rotations[4 * i..4 * i + 4].copy_from_slice(&random_quat(rng));
        let color: [f64; 3] = match spec.kind {
            SynthKind::Standard => std::array::from_fn(|_| rng.random_range(0.1..0.9)),
            SynthKind::Decoupling if blob => [0.5; 3],
            SynthKind::Decoupling => std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        };
        let (logit, offset, thermal) = match (spec.kind, blob) {
            (SynthKind::Standard, _) => {
                let l = rng.random_range(0.5..3.0);
                let off = if rng.random_bool(0.3) {
                    rng.random_range(1.0..2.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                } else {
                    0.0
                };
                (l, off, thermal_field(&p))
            }
            (SynthKind::Decoupling, false) => (rng.random_range(1.0..3.0), -9.0, rng.random_range(0.0..1.0)),
            (SynthKind::Decoupling, true) => (-4.5, 6.5, thermal_field(&p)),
        };
        c.opacity_logits[i] = logit;
        c.thermal_opacity_offsets[i] = offset;
        for ch in 0..3 {
            c.sh_coeffs[3 * i + ch] = (color[ch] - k - 0.5) / SH_C0;
        }
        let f = &mut c.features[d * i..d * (i + 1)];
        f[..3].copy_from_slice(&color);
        f[THERMAL_FEATURE_CHANNEL] = thermal;
        for v in f[THERMAL_FEATURE_CHANNEL + 1..].iter_mut() {
            *v = latent.sample(rng);
        }
    }
    c
}

/// Cameras on a ring of radius [`RING_RADIUS`] around the origin with a
/// varying elevation.
pub fn ring_cameras(n: usize, size: usize) -> Result<Vec<Camera>> {
    (0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vector3::new(
                RING_RADIUS * th.cos(),
                0.8 * (2.0 * th + 0.3).sin(),
                RING_RADIUS * th.sin(),
            );
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), FOCAL_FACTOR * size as f64, size, size)
        })
        .collect()
}

/// Fits the thermal branch so the decoded thermal value tracks the thermal
/// feature channel on the given samples.
fn fit_thermal_branch(net: &mut ModulationNet, samples: &Image) -> Result<f64> {
    let hp = AdamHyper {
        lr: 1e-2,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-15,
    };
    let mut moments: Vec<Moments> = net.tensors().iter().map(|t| Moments::zeros(t.data.len())).collect();
    let target = samples.channels(THERMAL_FEATURE_CHANNEL..THERMAL_FEATURE_CHANNEL + 1);
    let m = samples.pixel_count() as f64;
    let mut loss = f64::INFINITY;
    for t in 1..=FIT_STEPS {
        let trace = net.forward(samples, Some(samples), NetOptions::default())?;
        let mut d = trace.c_thermal.clone();
        loss = 0.0;
        for (g, y) in d.data.iter_mut().zip(&target.data) {
            let r = *g - y;
            loss += r * r / m;
            *g = 2.0 * r / m;
        }
        let d_impl = Image::zeros_like(&trace.c_impl);
        let back = net.backward(&trace, &d_impl, &d)?;
        let grads: Vec<Vec<f64>> = back.grads.tensors().into_iter().map(|t| t.data.to_vec()).collect();
        let lr = hp.lr * 0.01f64.powf(t as f64 / FIT_STEPS as f64);
        for ((p, g), mo) in net.tensors_mut().into_iter().zip(&grads).zip(&mut moments) {
            adam_update(p, g, mo, &AdamHyper { lr, ..hp }, t)?;
        }
    }
    Ok(loss)
}

/// Samples a ground-truth scene and renders every camera.
pub fn synth_scene(spec: &SynthSpec) -> Result<SynthScene> {
    if spec.n_gaussians == 0 || spec.n_cameras == 0 || spec.image_size == 0 {
        return Err(Error::Config("synthetic scene needs Gaussians, cameras and pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cloud = sample_cloud(spec, &mut rng);
    cloud.quantize_f32();
    let mut net = ModulationNet::new(&NetConfig::with_feature_dim(spec.feature_dim), &mut rng)?;
    {
        let last = net.rgb_decoder.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(IMPLICIT_LOGIT);
    }
    let cameras = ring_cameras(spec.n_cameras, spec.image_size)?;
    let render = RenderConfig::default();

    // Thermal feature samples from every view, including empty pixels.
    let feats = par::map(&cameras, |cam| {
        render_frame(&cloud, &net, cam, &render).map(|o| o.thermal_features().clone())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let total: usize = feats.iter().map(|f| f.pixel_count()).sum();
    let stride = (total / FIT_SAMPLES).max(1);
    let d = spec.feature_dim;
    let mut data = Vec::with_capacity(FIT_SAMPLES * d);
    let mut k = 0usize;
    for f in &feats {
        for p in 0..f.pixel_count() {
            if k % stride == 0 {
                data.extend_from_slice(f.pixel(p));
            }
            k += 1;
        }
    }
    let samples = Image::from_vec(data.len() / d, 1, d, data)?;
    fit_thermal_branch(&mut net, &samples)?;
    net.quantize_f32();

    let frames = par::map_range(cameras.len(), |i| {
        let out = render_frame(&cloud, &net, &cameras[i], &render)?;
        Ok(MultiModalFrame {
            name: format!("{i:04}"),
            camera: cameras[i].clone(),
            rgb_path: PathBuf::from(format!("rgb/{i:04}.png")),
            thermal_path: PathBuf::from(format!("thermal/{i:04}.png")),
            rgb: out.c_rgb,
            thermal: out.c_thermal,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let name = match spec.kind {
        SynthKind::Standard => "synthetic",
        SynthKind::Decoupling => "synthetic-decoupling",
    };
    let dataset = RgbtDataset::new(name, frames, Some([[-BOX_HALF; 3], [BOX_HALF; 3]]));
    Ok(SynthScene {
        spec: *spec,
        cloud,
        net,
        render,
        dataset,
    })
}

/// File names written by [`write_synth`].
pub const GT_CHECKPOINT: &str = "gt.ply";

/// Writes `transforms.json`, 16-bit PNG images and the ground-truth
/// checkpoint under `dir`. Returns the checkpoint path.
pub fn write_synth(scene: &SynthScene, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("rgb"))?;
    std::fs::create_dir_all(dir.join("thermal"))?;
    let mut ds = scene.dataset.clone();
    for f in &mut ds.frames {
        f.rgb_path = dir.join(&f.rgb_path);
        f.thermal_path = dir.join(&f.thermal_path);
    }
    let results = par::map(&ds.frames, |f| -> Result<()> {
        write_png(&f.rgb_path, &f.rgb, BitDepth::Sixteen)?;
        write_png(&f.thermal_path, &f.thermal, BitDepth::Sixteen)
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    let doc = transforms_json(&ds, dir);
    std::fs::write(dir.join("transforms.json"), serde_json::to_string_pretty(&doc)?)?;
    let ckpt = dir.join(GT_CHECKPOINT);
    let echo = serde_json::json!({ "synth": scene.spec });
    checkpoint_save(&ckpt, &scene.cloud, &scene.net, &echo)?;
    Ok(ckpt)
}
