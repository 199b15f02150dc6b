use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Parameter tensors of a [`GaussianCloud`], in a fixed canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CloudParam {
    Positions,
    LogScales,
    Rotations,
    OpacityLogits,
    ThermalOffsets,
    ShCoeffs,
    Features,
}

impl CloudParam {
    pub const ALL: [CloudParam; 7] = [
        CloudParam::Positions,
        CloudParam::LogScales,
        CloudParam::Rotations,
        CloudParam::OpacityLogits,
        CloudParam::ThermalOffsets,
        CloudParam::ShCoeffs,
        CloudParam::Features,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CloudParam::Positions => "positions",
            CloudParam::LogScales => "log_scales",
            CloudParam::Rotations => "rotations",
            CloudParam::OpacityLogits => "opacity_logits",
            CloudParam::ThermalOffsets => "thermal_opacity_offsets",
            CloudParam::ShCoeffs => "sh_coeffs",
            CloudParam::Features => "features",
        }
    }
}

/// All per-primitive learnable parameters, stored as flat row-major tensors.
///
/// Opacities are kept as logits and the thermal offset lives in the same
/// logit space. SH coefficients are laid out `[gaussian][coefficient][rgb]`
/// and rotations as `(w, x, y, z)` quaternions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub sh_degree: usize,
    pub feature_dim: usize,
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub thermal_opacity_offsets: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    pub features: Vec<f64>,
}

impl GaussianCloud {
    /// `n` Gaussians with every parameter zero except identity rotations.
    pub fn new(n: usize, sh_degree: usize, feature_dim: usize) -> Self {
        let mut c = Self::zeros(n, sh_degree, feature_dim);
        for i in 0..n {
            c.rotations[4 * i] = 1.0;
        }
        c
    }

    /// Same shape as `new` but every entry zero; used for gradient buffers.
    pub fn zeros(n: usize, sh_degree: usize, feature_dim: usize) -> Self {
        let nc = (sh_degree + 1) * (sh_degree + 1);
        GaussianCloud {
            sh_degree,
            feature_dim,
            positions: vec![0.0; 3 * n],
            log_scales: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            opacity_logits: vec![0.0; n],
            thermal_opacity_offsets: vec![0.0; n],
            sh_coeffs: vec![0.0; nc * 3 * n],
            features: vec![0.0; feature_dim * n],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.len(), self.sh_degree, self.feature_dim)
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sh_coeff_count(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    /// Values per Gaussian for each parameter tensor.
    pub fn row_width(&self, p: CloudParam) -> usize {
        match p {
            CloudParam::Positions | CloudParam::LogScales => 3,
            CloudParam::Rotations => 4,
            CloudParam::OpacityLogits | CloudParam::ThermalOffsets => 1,
            CloudParam::ShCoeffs => 3 * self.sh_coeff_count(),
            CloudParam::Features => self.feature_dim,
        }
    }

    pub fn tensor(&self, p: CloudParam) -> &[f64] {
        match p {
            CloudParam::Positions => &self.positions,
            CloudParam::LogScales => &self.log_scales,
            CloudParam::Rotations => &self.rotations,
            CloudParam::OpacityLogits => &self.opacity_logits,
            CloudParam::ThermalOffsets => &self.thermal_opacity_offsets,
            CloudParam::ShCoeffs => &self.sh_coeffs,
            CloudParam::Features => &self.features,
        }
    }

    pub fn tensor_mut(&mut self, p: CloudParam) -> &mut Vec<f64> {
        match p {
            CloudParam::Positions => &mut self.positions,
            CloudParam::LogScales => &mut self.log_scales,
            CloudParam::Rotations => &mut self.rotations,
            CloudParam::OpacityLogits => &mut self.opacity_logits,
            CloudParam::ThermalOffsets => &mut self.thermal_opacity_offsets,
            CloudParam::ShCoeffs => &mut self.sh_coeffs,
            CloudParam::Features => &mut self.features,
        }
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    pub fn log_scale(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3])
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    pub fn sh(&self, i: usize) -> &[f64] {
        let w = 3 * self.sh_coeff_count();
        &self.sh_coeffs[w * i..w * (i + 1)]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[self.feature_dim * i..self.feature_dim * (i + 1)]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for p in CloudParam::ALL {
            let want = n * self.row_width(p);
            if self.tensor(p).len() != want {
                return Err(Error::shape(format!(
                    "{} has {} values, expected {want}",
                    p.name(),
                    self.tensor(p).len()
                )));
            }
            if self.tensor(p).iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{} contains non-finite values", p.name())));
            }
        }
        if self.sh_degree > 3 {
            return Err(Error::Config(format!("SH degree {} > 3", self.sh_degree)));
        }
        for i in 0..n {
            let q = self.rotation(i);
            if q.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(Error::Data(format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|v| *v /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for p in CloudParam::ALL {
            for v in self.tensor_mut(p).iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Keeps the Gaussians for which `keep[i]` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        for p in CloudParam::ALL {
            let w = self.row_width(p);
            retain_rows(self.tensor_mut(p), w, keep);
        }
    }

    /// Copies the given rows into a new cloud, in order.
    pub fn select(&self, rows: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud::zeros(rows.len(), self.sh_degree, self.feature_dim);
        for p in CloudParam::ALL {
            let w = self.row_width(p);
            let src = self.tensor(p);
            let dst = out.tensor_mut(p);
            for (k, &r) in rows.iter().enumerate() {
                dst[k * w..(k + 1) * w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        out
    }

    /// Rotates and translates the whole cloud: `x -> q x + t`. View-dependent
    /// color is left in the original frame, so only geometry is moved.
    pub fn transform_rigid(&mut self, q: &UnitQuaternion<f64>, t: &Vector3<f64>) {
        for i in 0..self.len() {
            let p = q * self.position(i) + t;
            self.positions[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
            let r = self.rotation(i);
            let qi = Quaternion::new(r[0], r[1], r[2], r[3]);
            let qo = q.quaternion() * qi;
            self.rotations[4 * i..4 * i + 4].copy_from_slice(&[qo.w, qo.i, qo.j, qo.k]);
        }
    }

    pub fn add_scaled(&mut self, other: &GaussianCloud, s: f64) {
        for p in CloudParam::ALL {
            let src = other.tensor(p).to_vec();
            for (a, b) in self.tensor_mut(p).iter_mut().zip(src) {
                *a += s * b;
            }
        }
    }
}

pub(crate) fn retain_rows(v: &mut Vec<f64>, width: usize, keep: &[bool]) {
    let mut w = 0;
    for (r, &k) in keep.iter().enumerate() {
        if k {
            if w != r {
                v.copy_within(r * width..(r + 1) * width, w * width);
            }
            w += 1;
        }
    }
    v.truncate(w * width);
}
