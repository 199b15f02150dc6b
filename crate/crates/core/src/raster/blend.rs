//! Per-pixel front-to-back compositing and its reverse.

use crate::model::Projected2DGaussian;

/// Opacity cap applied to each splat's per-pixel alpha.
pub const ALPHA_CAP: f64 = 0.99;
/// Splats whose per-pixel alpha is below this are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Blending stops before a splat would push transmittance below this.
pub const T_MIN: f64 = 1e-4;

/// How a splat took part in blending a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatEvent {
    Skipped,
    Capped,
    Blended,
}

/// Per-pixel alpha of one splat: `min(opacity · G(pixel), 0.99)` together with
/// `G` and the event classification.
#[inline]
pub fn splat_alpha(conic: [f64; 3], mean2d: [f64; 2], opacity: f64, pixel: [f64; 2]) -> (f64, f64, SplatEvent) {
    let dx = pixel[0] - mean2d[0];
    let dy = pixel[1] - mean2d[1];
    let power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    if power > 0.0 {
        return (0.0, 0.0, SplatEvent::Skipped);
    }
    let g = power.exp();
    let raw = opacity * g;
    if raw < ALPHA_SKIP {
        (0.0, g, SplatEvent::Skipped)
    } else if raw > ALPHA_CAP {
        (ALPHA_CAP, g, SplatEvent::Capped)
    } else {
        (raw, g, SplatEvent::Blended)
    }
}

/// One splat as seen by a single pixel.
#[derive(Clone, Copy, Debug)]
pub struct PixelSplat<'a> {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub attr: &'a [f64],
}

impl<'a> PixelSplat<'a> {
    pub fn from_projected(p: &Projected2DGaussian, opacity: f64, attr: &'a [f64]) -> Self {
        Self {
            mean2d: p.mean2d,
            conic: p.conic,
            opacity,
            attr,
        }
    }
}

/// Composites depth-sorted splats at `pixel` into `out` (which must start at
/// zero) and returns the final transmittance.
pub fn blend_forward(splats: &[PixelSplat<'_>], pixel: [f64; 2], out: &mut [f64]) -> f64 {
    let mut t = 1.0;
    for s in splats {
        let (a, _, ev) = splat_alpha(s.conic, s.mean2d, s.opacity, pixel);
        if ev == SplatEvent::Skipped {
            continue;
        }
        let next = t * (1.0 - a);
        if next < T_MIN {
            break;
        }
        for (o, v) in out.iter_mut().zip(s.attr) {
            *o += v * a * t;
        }
        t = next;
    }
    t
}

/// Cached state of one processed splat for the backward replay.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ReplayEntry {
    pub slot: usize,
    pub alpha: f64,
    pub g: f64,
    pub t: f64,
    pub capped: bool,
}

/// Gradients of one splat at one pixel. `d_conic` uses the symmetric triple
/// layout where the off-diagonal entry counts twice in the quadratic form.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub d_opacity: f64,
    pub d_mean: [f64; 2],
    pub d_conic: [f64; 3],
}

/// Reverse of the per-pixel composite. `entries` are the splats actually
/// blended (front to back) with their cached alphas and transmittances and
/// `final_t` is the terminal transmittance. Attribute gradients are reported
/// through `on_attr(slot, channel, value)`, geometry and opacity gradients
/// through `on_splat`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn blend_backward<'a>(
    entries: &[ReplayEntry],
    final_t: f64,
    pixel: [f64; 2],
    upstream: &[f64],
    background: &[f64],
    splat_of: impl Fn(usize) -> PixelSplat<'a>,
    mut on_attr: impl FnMut(usize, usize, f64),
    mut on_splat: impl FnMut(usize, SplatGrad),
) {
    let k = upstream.len();
    let mut acc: Vec<f64> = (0..k).map(|c| final_t * background.get(c).copied().unwrap_or(0.0)).collect();
    for e in entries.iter().rev() {
        let PixelSplat {
            mean2d: mean,
            conic,
            opacity,
            attr,
        } = splat_of(e.slot);
        let w = e.alpha * e.t;
        let mut d_alpha = 0.0;
        for c in 0..k {
            on_attr(e.slot, c, upstream[c] * w);
            d_alpha += upstream[c] * (attr[c] * e.t - acc[c] / (1.0 - e.alpha));
        }
        for c in 0..k {
            acc[c] += attr[c] * w;
        }
        if e.capped {
            continue;
        }
        let mut g = SplatGrad {
            d_opacity: d_alpha * e.g,
            ..Default::default()
        };
        let d_power = d_alpha * opacity * e.g;
        let dx = pixel[0] - mean[0];
        let dy = pixel[1] - mean[1];
        g.d_conic = [
            -0.5 * dx * dx * d_power,
            -dx * dy * d_power,
            -0.5 * dy * dy * d_power,
        ];
        let d_dx = (-conic[0] * dx - conic[1] * dy) * d_power;
        let d_dy = (-conic[2] * dy - conic[1] * dx) * d_power;
        g.d_mean = [-d_dx, -d_dy];
        on_splat(e.slot, g);
    }
}
