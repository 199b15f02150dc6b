//! Dense `H×W×C` image buffer used for rendered images, feature maps and
//! gradient maps alike.

use std::ops::Range;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "buffer of {} values cannot hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros_like(other: &Image) -> Self {
        Self::zeros(other.width, other.height, other.channels)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Copies channels `range` into a new image.
    pub fn channels(&self, range: Range<usize>) -> Image {
        assert!(range.end <= self.channels, "channel range out of bounds");
        let k = range.len();
        let mut out = Image::zeros(self.width, self.height, k);
        for p in 0..self.pixel_count() {
            out.pixel_mut(p).copy_from_slice(&self.pixel(p)[range.clone()]);
        }
        out
    }

    /// Adds `src` into channels starting at `offset`.
    pub fn add_into_channels(&mut self, offset: usize, src: &Image) {
        assert!(offset + src.channels <= self.channels);
        assert_eq!(self.pixel_count(), src.pixel_count());
        for p in 0..self.pixel_count() {
            let dst = &mut self.pixel_mut(p)[offset..offset + src.channels];
            for (d, s) in dst.iter_mut().zip(src.pixel(p)) {
                *d += s;
            }
        }
    }

    /// Concatenates images channel-wise.
    pub fn concat_channels(parts: &[&Image]) -> Result<Image> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot concatenate zero images"))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::shape("concatenated images differ in extent"));
        }
        let k: usize = parts.iter().map(|p| p.channels).sum();
        let mut out = Image::zeros(w, h, k);
        for p in 0..w * h {
            let mut off = 0;
            for part in parts {
                out.pixel_mut(p)[off..off + part.channels].copy_from_slice(part.pixel(p));
                off += part.channels;
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Image) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
