//! Training objective and evaluation metrics.

mod ironbow;
mod ssim;

pub use ironbow::{ironbow_forward, ironbow_inverse, IronbowLut, IRONBOW_CONTROL_POINTS, LUT_LEVELS};
pub use ssim::{ssim, SsimConfig, WindowKind, SSIM_C1, SSIM_C2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;

/// Reported PSNR for a perfect reconstruction.
pub const PSNR_CAP: f64 = 100.0;

/// Feature channel supervised by thermal intensity.
pub const THERMAL_FEATURE_CHANNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub eta: f64,
    pub lambda_rf: f64,
    pub lambda_sm: f64,
    /// Whether `A_f[:3]` is supervised by the RGB target.
    pub feature_rgb: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 0.2,
            eta: 0.5,
            lambda_rf: 1.0,
            lambda_sm: 0.3,
            feature_rgb: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.lambda_s)
            && [self.eta, self.lambda_rf, self.lambda_sm]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss weights {self:?}")))
        }
    }
}

/// Scalar loss with its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: Image,
}

pub fn l1_loss(pred: &Image, gt: &Image) -> Result<LossValue> {
    pred.check_same_shape(gt, "l1")?;
    let n = pred.data.len().max(1) as f64;
    let mut grad = Image::zeros_like(pred);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(LossValue { value: sum / n, grad })
}

/// `(1 − λs)·ℓ1 + λs·(1 − SSIM)`. SSIM is skipped entirely when `λs = 0`.
pub fn rec_loss(pred: &Image, gt: &Image, lambda_s: f64, ssim_cfg: &SsimConfig) -> Result<LossValue> {
    let mut out = l1_loss(pred, gt)?;
    out.value *= 1.0 - lambda_s;
    out.grad.scale(1.0 - lambda_s);
    if lambda_s > 0.0 {
        let (s, mut g) = ssim(pred, gt, ssim_cfg)?;
        out.value += lambda_s * (1.0 - s);
        g.scale(-lambda_s);
        out.grad.add_assign(&g);
    }
    Ok(out)
}

/// Anisotropic total variation: mean |∂x C| over `H×(W−1)` plus mean |∂y C|
/// over `(H−1)×W`, averaged over channels.
pub fn smooth_loss(c: &Image) -> LossValue {
    let (w, h, k) = (c.width, c.height, c.channels);
    let mut grad = Image::zeros_like(c);
    let mut value = 0.0;
    let sgn = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    if w > 1 {
        let nx = (h * (w - 1) * k) as f64;
        for y in 0..h {
            for x in 0..w - 1 {
                for ch in 0..k {
                    let d = c.get(x + 1, y, ch) - c.get(x, y, ch);
                    value += d.abs() / nx;
                    let g = sgn(d) / nx;
                    grad.data[c.index(x + 1, y, ch)] += g;
                    grad.data[c.index(x, y, ch)] -= g;
                }
            }
        }
    }
    if h > 1 {
        let ny = ((h - 1) * w * k) as f64;
        for y in 0..h - 1 {
            for x in 0..w {
                for ch in 0..k {
                    let d = c.get(x, y + 1, ch) - c.get(x, y, ch);
                    value += d.abs() / ny;
                    let g = sgn(d) / ny;
                    grad.data[c.index(x, y + 1, ch)] += g;
                    grad.data[c.index(x, y, ch)] -= g;
                }
            }
        }
    }
    LossValue { value, grad }
}

/// Feature-level loss and its split.
#[derive(Clone, Debug)]
pub struct FeatureLoss {
    pub value: f64,
    pub rgb_term: f64,
    pub thermal_term: f64,
    pub d_a_f: Image,
    pub d_a_ft: Image,
}

/// `L(clamp(A_f[:3]), I_rgb) + η·L(A_f(t)[3], I_th)` with `L` the
/// reconstruction composite. Channels beyond 3 get no gradient.
pub fn feature_rec_loss(
    a_f: &Image,
    a_ft: &Image,
    i_rgb: &Image,
    i_th: &Image,
    weights: &LossWeights,
    ssim_cfg: &SsimConfig,
) -> Result<FeatureLoss> {
    for a in [a_f, a_ft] {
        if a.channels <= THERMAL_FEATURE_CHANNEL {
            return Err(Error::FeatureDimTooSmall(a.channels));
        }
    }
    a_f.check_same_shape(a_ft, "feature maps")?;
    let mut d_a_f = Image::zeros_like(a_f);
    let mut d_a_ft = Image::zeros_like(a_ft);
    let mut rgb_term = 0.0;
    if weights.feature_rgb {
        let raw = a_f.channels(0..3);
        let clamped = raw.map(|v| v.clamp(0.0, 1.0));
        let mut l = rec_loss(&clamped, i_rgb, weights.lambda_s, ssim_cfg)?;
        for (g, v) in l.grad.data.iter_mut().zip(&raw.data) {
            if !(0.0..=1.0).contains(v) {
                *g = 0.0;
            }
        }
        d_a_f.add_into_channels(0, &l.grad);
        rgb_term = l.value;
    }
    let mut thermal_term = 0.0;
    if weights.eta > 0.0 {
        let slice = a_ft.channels(THERMAL_FEATURE_CHANNEL..THERMAL_FEATURE_CHANNEL + 1);
        let mut l = rec_loss(&slice, i_th, weights.lambda_s, ssim_cfg)?;
        l.grad.scale(weights.eta);
        d_a_ft.add_into_channels(THERMAL_FEATURE_CHANNEL, &l.grad);
        thermal_term = weights.eta * l.value;
    }
    Ok(FeatureLoss {
        value: rgb_term + thermal_term,
        rgb_term,
        thermal_term,
        d_a_f,
        d_a_ft,
    })
}

/// Everything the objective reads from one render.
pub struct LossInputs<'a> {
    pub c_rgb: &'a Image,
    pub c_thermal: &'a Image,
    pub a_f: &'a Image,
    /// `None` when the thermal pass shares the base feature map.
    pub a_ft: Option<&'a Image>,
    pub gt_rgb: &'a Image,
    pub gt_thermal: &'a Image,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub total: f64,
    pub rec_rgb: f64,
    pub rec_thermal: f64,
    pub feature: f64,
    pub smooth: f64,
    pub d_c_rgb: Image,
    pub d_c_thermal: Image,
    pub d_a_f: Image,
    /// Absent when `a_ft` was absent; its share is folded into `d_a_f`.
    pub d_a_ft: Option<Image>,
}

/// `L_rec^rgb + L_rec^th + λ_rf·L_feat + λ_sm·L_smooth`. Terms with zero weight
/// are not evaluated.
pub fn total_loss(inp: &LossInputs<'_>, weights: &LossWeights, ssim_cfg: &SsimConfig) -> Result<TotalLoss> {
    weights.validate()?;
    let rgb = rec_loss(inp.c_rgb, inp.gt_rgb, weights.lambda_s, ssim_cfg)?;
    let th = rec_loss(inp.c_thermal, inp.gt_thermal, weights.lambda_s, ssim_cfg)?;
    let mut d_c_thermal = th.grad;
    let a_ft = inp.a_ft.unwrap_or(inp.a_f);
    let (mut feature, mut d_a_f, mut d_a_ft) = (0.0, Image::zeros_like(inp.a_f), Image::zeros_like(a_ft));
    if weights.lambda_rf > 0.0 && (weights.feature_rgb || weights.eta > 0.0) {
        let f = feature_rec_loss(inp.a_f, a_ft, inp.gt_rgb, inp.gt_thermal, weights, ssim_cfg)?;
        feature = f.value;
        d_a_f = f.d_a_f;
        d_a_ft = f.d_a_ft;
        d_a_f.scale(weights.lambda_rf);
        d_a_ft.scale(weights.lambda_rf);
    }
    let mut smooth = 0.0;
    if weights.lambda_sm > 0.0 {
        let mut s = smooth_loss(inp.c_thermal);
        smooth = s.value;
        s.grad.scale(weights.lambda_sm);
        d_c_thermal.add_assign(&s.grad);
    }
    let d_a_ft = match inp.a_ft {
        Some(_) => Some(d_a_ft),
        None => {
            d_a_f.add_assign(&d_a_ft);
            None
        }
    };
    Ok(TotalLoss {
        total: rgb.value + th.value + weights.lambda_rf * feature + weights.lambda_sm * smooth,
        rec_rgb: rgb.value,
        rec_thermal: th.value,
        feature,
        smooth,
        d_c_rgb: rgb.grad,
        d_c_thermal,
        d_a_f,
        d_a_ft,
    })
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same_shape(gt, "mse")?;
    let n = pred.data.len().max(1) as f64;
    Ok(pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

#[cfg(test)]
mod tests;
