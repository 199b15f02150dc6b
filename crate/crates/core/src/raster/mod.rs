//! Tile-based, depth-ordered alpha blending of arbitrary `K`-channel
//! per-Gaussian attributes, with an exact reverse pass.
//!
//! Projection, binning and sorting live in a [`RasterGeometry`] that can be
//! shared by several passes which differ only in opacities and attributes.

mod bin;
mod blend;
pub mod oracle;

use std::sync::Arc;

pub use bin::{pixel_footprint, tile_bin, TileBins};
pub use blend::{blend_forward, splat_alpha, PixelSplat, SplatEvent, ALPHA_CAP, ALPHA_SKIP, T_MIN};

use blend::{blend_backward, ReplayEntry};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::Projected2DGaussian;
use crate::par;

pub const DEFAULT_TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Upper bound on `H·W·K` for a single pass.
    pub max_values: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            max_values: 1 << 28,
        }
    }
}

/// Blended attributes plus per-pixel coverage diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Image,
    /// Accumulated opacity, `1 − final transmittance`.
    pub alpha: Vec<f64>,
    /// Number of splats blended into each pixel.
    pub contrib_count: Vec<u32>,
}

/// Projected splats together with their tile assignment.
#[derive(Clone, Debug)]
pub struct RasterGeometry {
    pub projected: Vec<Option<Projected2DGaussian>>,
    pub bins: TileBins,
}

impl RasterGeometry {
    pub fn new(
        projected: Vec<Option<Projected2DGaussian>>,
        width: usize,
        height: usize,
        tile_size: usize,
    ) -> Self {
        let bins = tile_bin(&projected, width, height, tile_size);
        Self { projected, bins }
    }

    pub fn len(&self) -> usize {
        self.projected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projected.is_empty()
    }

    pub fn width(&self) -> usize {
        self.bins.width
    }

    pub fn height(&self) -> usize {
        self.bins.height
    }
}

/// Everything the reverse pass needs to replay a forward pass.
#[derive(Clone, Debug)]
pub struct RasterAux {
    pub geometry: Arc<RasterGeometry>,
    pub opacities: Vec<f64>,
    pub attrs: Vec<f64>,
    pub channels: usize,
    pub background: Vec<f64>,
    pub final_t: Vec<f64>,
    /// Tile-list entries examined per pixel before termination.
    pub processed: Vec<u32>,
    signature: Vec<u64>,
}

impl RasterAux {
    /// Hash of which splats were skipped, capped or cut off at every pixel.
    /// Two passes with equal signatures blend through the same smooth branch.
    pub fn blend_signature(&self) -> u64 {
        self.signature
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, &s| (h ^ s).wrapping_mul(0x0100_0000_01b3))
    }
}

/// Gradients of a rasterization pass with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrads {
    pub d_attrs: Vec<f64>,
    pub d_opacities: Vec<f64>,
    pub d_mean2d: Vec<[f64; 2]>,
    /// Symmetric triple `(xx, xy, yy)`; `xy` drives both off-diagonals.
    pub d_cov2d: Vec<[f64; 3]>,
}

struct TileOut {
    values: Vec<f64>,
    final_t: Vec<f64>,
    processed: Vec<u32>,
    contrib: Vec<u32>,
    signature: Vec<u64>,
}

fn event_code(ev: SplatEvent) -> u64 {
    match ev {
        SplatEvent::Skipped => 1,
        SplatEvent::Capped => 2,
        SplatEvent::Blended => 3,
    }
}

#[inline]
fn pixel_center(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

fn validate_inputs(
    geom: &RasterGeometry,
    opacities: &[f64],
    attrs: &[f64],
    channels: usize,
    background: &[f64],
    config: &RasterConfig,
) -> Result<()> {
    let n = geom.len();
    if opacities.len() != n || attrs.len() != n * channels {
        return Err(Error::shape(format!(
            "rasterize: {n} splats but {} opacities and {} attribute values for K={channels}",
            opacities.len(),
            attrs.len()
        )));
    }
    if !background.is_empty() && background.len() != channels {
        return Err(Error::shape(format!(
            "background has {} channels, attributes have {channels}",
            background.len()
        )));
    }
    let values = geom.width() * geom.height() * channels;
    if values > config.max_values {
        return Err(Error::ImageTooLarge {
            width: geom.width(),
            height: geom.height(),
            channels,
            budget: config.max_values,
        });
    }
    Ok(())
}

/// Blends `attrs` (`N×channels`) with per-splat `opacities` over the shared
/// geometry. An empty `background` means black.
pub fn rasterize(
    geom: &Arc<RasterGeometry>,
    opacities: &[f64],
    attrs: &[f64],
    channels: usize,
    background: &[f64],
    config: &RasterConfig,
) -> Result<(FeatureMap, RasterAux)> {
    validate_inputs(geom, opacities, attrs, channels, background, config)?;
    let bins = &geom.bins;
    let (w, h) = (bins.width, bins.height);

    let tiles = par::map_range(bins.tile_count(), |t| {
        let (x0, y0, x1, y1) = bins.tile_rect(t);
        let list = &bins.lists[t];
        let npix = (x1 - x0) * (y1 - y0);
        let mut out = TileOut {
            values: vec![0.0; npix * channels],
            final_t: vec![1.0; npix],
            processed: vec![0; npix],
            contrib: vec![0; npix],
            signature: vec![0; npix],
        };
        let mut p = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let pixel = pixel_center(x, y);
                let acc = &mut out.values[p * channels..(p + 1) * channels];
                let mut t_cur = 1.0;
                let mut sig = 0u64;
                let mut processed = list.len();
                let mut contrib = 0;
                for (slot, &gi) in list.iter().enumerate() {
                    let gi = gi as usize;
                    let s = geom.projected[gi].as_ref().unwrap();
                    let (a, _, ev) = splat_alpha(s.conic, s.mean2d, opacities[gi], pixel);
                    if ev != SplatEvent::Blended {
                        sig = sig.wrapping_mul(31).wrapping_add(event_code(ev) * (slot as u64 + 1));
                    }
                    if ev == SplatEvent::Skipped {
                        continue;
                    }
                    let next = t_cur * (1.0 - a);
                    if next < T_MIN {
                        processed = slot;
                        break;
                    }
                    let attr = &attrs[gi * channels..(gi + 1) * channels];
                    for (o, v) in acc.iter_mut().zip(attr) {
                        *o += v * a * t_cur;
                    }
                    t_cur = next;
                    contrib += 1;
                }
                if !background.is_empty() {
                    for (o, b) in acc.iter_mut().zip(background) {
                        *o += t_cur * b;
                    }
                }
                sig = sig.wrapping_mul(1_000_003).wrapping_add(processed as u64);
                out.final_t[p] = t_cur;
                out.processed[p] = processed as u32;
                out.contrib[p] = contrib;
                out.signature[p] = sig;
                p += 1;
            }
        }
        out
    });

    let mut data = Image::zeros(w, h, channels);
    let mut final_t = vec![1.0; w * h];
    let mut processed = vec![0; w * h];
    let mut contrib = vec![0; w * h];
    let mut signature = vec![0; w * h];
    for (t, out) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = bins.tile_rect(t);
        let mut p = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let gp = y * w + x;
                data.pixel_mut(gp)
                    .copy_from_slice(&out.values[p * channels..(p + 1) * channels]);
                final_t[gp] = out.final_t[p];
                processed[gp] = out.processed[p];
                contrib[gp] = out.contrib[p];
                signature[gp] = out.signature[p];
                p += 1;
            }
        }
    }
    let fmap = FeatureMap {
        data,
        alpha: final_t.iter().map(|t| 1.0 - t).collect(),
        contrib_count: contrib,
    };
    let aux = RasterAux {
        geometry: Arc::clone(geom),
        opacities: opacities.to_vec(),
        attrs: attrs.to_vec(),
        channels,
        background: background.to_vec(),
        final_t,
        processed,
        signature,
    };
    Ok((fmap, aux))
}

struct TileGrads {
    d_attrs: Vec<f64>,
    d_opacity: Vec<f64>,
    d_mean: Vec<[f64; 2]>,
    d_conic: Vec<[f64; 3]>,
}

/// Exact reverse of [`rasterize`] given `∂L/∂data`. The 0.99 cap and the
/// 1/255 skip act as stop-gradients where active.
pub fn rasterize_backward(aux: &RasterAux, d_out: &Image) -> Result<RasterGrads> {
    let geom = &aux.geometry;
    let bins = &geom.bins;
    let k = aux.channels;
    if d_out.width != bins.width || d_out.height != bins.height || d_out.channels != k {
        return Err(Error::StaleAux(format!(
            "aux is {}x{}x{k}, gradient is {}x{}x{}",
            bins.height, bins.width, d_out.height, d_out.width, d_out.channels
        )));
    }
    let n = geom.len();
    if aux.opacities.len() != n || aux.attrs.len() != n * k {
        return Err(Error::StaleAux("aux parameters do not match its geometry".into()));
    }
    let w = bins.width;

    let partials = par::map_range(bins.tile_count(), |t| {
        let (x0, y0, x1, y1) = bins.tile_rect(t);
        let list = &bins.lists[t];
        let mut g = TileGrads {
            d_attrs: vec![0.0; list.len() * k],
            d_opacity: vec![0.0; list.len()],
            d_mean: vec![[0.0; 2]; list.len()],
            d_conic: vec![[0.0; 3]; list.len()],
        };
        let splat_of = |slot: usize| {
            let gi = list[slot] as usize;
            PixelSplat::from_projected(
                geom.projected[gi].as_ref().unwrap(),
                aux.opacities[gi],
                &aux.attrs[gi * k..(gi + 1) * k],
            )
        };
        let mut entries = Vec::with_capacity(list.len());
        for y in y0..y1 {
            for x in x0..x1 {
                let gp = y * w + x;
                let upstream = d_out.pixel(gp);
                if upstream.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let pixel = pixel_center(x, y);
                entries.clear();
                let mut t_cur = 1.0;
                for slot in 0..aux.processed[gp] as usize {
                    let s = splat_of(slot);
                    let (a, gv, ev) = splat_alpha(s.conic, s.mean2d, s.opacity, pixel);
                    if ev == SplatEvent::Skipped {
                        continue;
                    }
                    entries.push(ReplayEntry {
                        slot,
                        alpha: a,
                        g: gv,
                        t: t_cur,
                        capped: ev == SplatEvent::Capped,
                    });
                    t_cur *= 1.0 - a;
                }
                blend_backward(
                    &entries,
                    aux.final_t[gp],
                    pixel,
                    upstream,
                    &aux.background,
                    splat_of,
                    |slot, c, v| g.d_attrs[slot * k + c] += v,
                    |slot, sg| {
                        g.d_opacity[slot] += sg.d_opacity;
                        for i in 0..2 {
                            g.d_mean[slot][i] += sg.d_mean[i];
                        }
                        for i in 0..3 {
                            g.d_conic[slot][i] += sg.d_conic[i];
                        }
                    },
                );
            }
        }
        g
    });

    let mut out = RasterGrads {
        d_attrs: vec![0.0; n * k],
        d_opacities: vec![0.0; n],
        d_mean2d: vec![[0.0; 2]; n],
        d_cov2d: vec![[0.0; 3]; n],
    };
    let mut d_conic = vec![[0.0; 3]; n];
    for (t, g) in partials.into_iter().enumerate() {
        for (slot, &gi) in bins.lists[t].iter().enumerate() {
            let gi = gi as usize;
            for c in 0..k {
                out.d_attrs[gi * k + c] += g.d_attrs[slot * k + c];
            }
            out.d_opacities[gi] += g.d_opacity[slot];
            for i in 0..2 {
                out.d_mean2d[gi][i] += g.d_mean[slot][i];
            }
            for i in 0..3 {
                d_conic[gi][i] += g.d_conic[slot][i];
            }
        }
    }
    for (gi, p) in geom.projected.iter().enumerate() {
        if let Some(p) = p {
            out.d_cov2d[gi] = conic_to_cov_grad(&p.conic, &d_conic[gi]);
        }
    }
    Ok(out)
}

/// `∂L/∂cov` from `∂L/∂conic` (both symmetric triples) via `d(Σ⁻¹) = −Σ⁻¹ dΣ Σ⁻¹`.
fn conic_to_cov_grad(conic: &[f64; 3], d_conic: &[f64; 3]) -> [f64; 3] {
    let [a, b, c] = *conic;
    let (ga, gb, gc) = (d_conic[0], 0.5 * d_conic[1], d_conic[2]);
    // K G K with K = [[a, b], [b, c]], G = [[ga, gb], [gb, gc]].
    let kg00 = a * ga + b * gb;
    let kg01 = a * gb + b * gc;
    let kg10 = b * ga + c * gb;
    let kg11 = b * gb + c * gc;
    let m00 = kg00 * a + kg01 * b;
    let m01 = kg00 * b + kg01 * c;
    let m10 = kg10 * a + kg11 * b;
    let m11 = kg10 * b + kg11 * c;
    [-m00, -(m01 + m10), -m11]
}

#[cfg(test)]
mod tests;
