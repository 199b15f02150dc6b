//! Pixel-wise fully connected layers with SiLU between them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::sigmoid;
use crate::par::{self, PIXEL_CHUNK};

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Affine map `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform(−k, k) weights and biases with `k = 1/√fan_in`.
    pub fn init_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-k..k)).collect(),
            bias: (0..out_dim).map(|_| rng.random_range(-k..k)).collect(),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `∂L/∂W`, `∂L/∂b` into `grad` and writes `∂L/∂x` into `dx`.
    #[inline]
    pub(crate) fn backward_row(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }

    /// Applies the layer to every pixel of `x`.
    pub fn forward(&self, x: &Image) -> Result<Image> {
        if x.channels != self.in_dim {
            return Err(Error::shape(format!(
                "linear layer expects {} input channels, got {}",
                self.in_dim, x.channels
            )));
        }
        let mut out = Image::zeros(x.width, x.height, self.out_dim);
        let (cin, cout) = (self.in_dim, self.out_dim);
        par::for_each_chunk_mut(&mut out.data, PIXEL_CHUNK * cout, |c, chunk| {
            let r0 = c * PIXEL_CHUNK;
            for (r, y) in chunk.chunks_mut(cout).enumerate() {
                let p = r0 + r;
                self.apply(&x.data[p * cin..(p + 1) * cin], y);
            }
        });
        Ok(out)
    }

    /// Reverse of [`Linear::forward`] given the forward input `x`.
    pub fn backward(&self, x: &Image, dy: &Image) -> Result<(Linear, Image)> {
        if x.channels != self.in_dim
            || dy.channels != self.out_dim
            || x.width != dy.width
            || x.height != dy.height
        {
            return Err(Error::StaleTrace(format!(
                "linear {}→{} on input {}x{}x{}, gradient {}x{}x{}",
                self.in_dim, self.out_dim, x.height, x.width, x.channels, dy.height, dy.width, dy.channels
            )));
        }
        let p = x.pixel_count();
        let (cin, cout) = (self.in_dim, self.out_dim);
        let partials = par::map_range(p.div_ceil(PIXEL_CHUNK), |c| {
            let r0 = c * PIXEL_CHUNK;
            let r1 = (r0 + PIXEL_CHUNK).min(p);
            let mut g = Linear::zeros(cin, cout);
            let mut dx = vec![0.0; (r1 - r0) * cin];
            for r in r0..r1 {
                self.backward_row(
                    &x.data[r * cin..(r + 1) * cin],
                    &dy.data[r * cout..(r + 1) * cout],
                    &mut g,
                    &mut dx[(r - r0) * cin..(r - r0 + 1) * cin],
                );
            }
            (g, dx)
        });
        let mut grad = Linear::zeros(cin, cout);
        let mut dx = Vec::with_capacity(p * cin);
        for (g, d) in partials {
            grad.add_assign(&g);
            dx.extend_from_slice(&d);
        }
        Ok((grad, Image::from_vec(x.width, x.height, cin, dx)?))
    }

    pub(crate) fn add_assign(&mut self, other: &Linear) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Stack of [`Linear`] layers with SiLU after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
struct ChunkTrace {
    rows: usize,
    /// Input of each layer, `rows × in_dim`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer, `rows × out_dim`.
    pre: Vec<Vec<f64>>,
}

/// Cached activations of one [`Mlp::forward`] call.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    width: usize,
    height: usize,
    dims: Vec<usize>,
    chunks: Vec<ChunkTrace>,
}

impl Mlp {
    /// Builds layers for the dimension chain `dims[0] → dims[1] → …`.
    pub fn init_uniform(dims: &[usize], rng: &mut impl Rng) -> Self {
        Self {
            layers: dims.windows(2).map(|d| Linear::init_uniform(d[0], d[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|d| Linear::zeros(d[0], d[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        if let Some(l) = self.layers.last() {
            d.push(l.out_dim);
        }
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Evaluates a single input vector.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.apply(&cur, &mut next);
            if li + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = silu(*v));
            }
            cur = next;
        }
        cur
    }

    fn forward_rows(&self, x: &[f64], rows: usize) -> ChunkTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; rows * layer.out_dim];
            for r in 0..rows {
                layer.apply(
                    &cur[r * layer.in_dim..(r + 1) * layer.in_dim],
                    &mut z[r * layer.out_dim..(r + 1) * layer.out_dim],
                );
            }
            let next = if li + 1 < self.layers.len() {
                z.iter().map(|&v| silu(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        ChunkTrace { rows, inputs, pre }
    }

    /// Applies the MLP independently to every pixel of `x`.
    pub fn forward(&self, x: &Image) -> Result<(Image, MlpTrace)> {
        if x.channels != self.in_dim() {
            return Err(Error::shape(format!(
                "MLP expects {} input channels, got {}",
                self.in_dim(),
                x.channels
            )));
        }
        let p = x.pixel_count();
        let cin = x.channels;
        let nchunks = p.div_ceil(PIXEL_CHUNK);
        let chunks = par::map_range(nchunks, |c| {
            let r0 = c * PIXEL_CHUNK;
            let r1 = (r0 + PIXEL_CHUNK).min(p);
            self.forward_rows(&x.data[r0 * cin..r1 * cin], r1 - r0)
        });
        let out_dim = self.out_dim();
        let mut data = Vec::with_capacity(p * out_dim);
        for ch in &chunks {
            data.extend_from_slice(ch.pre.last().unwrap());
        }
        let out = Image::from_vec(x.width, x.height, out_dim, data)?;
        Ok((
            out,
            MlpTrace {
                width: x.width,
                height: x.height,
                dims: self.dims(),
                chunks,
            },
        ))
    }

    /// Reverse of [`Mlp::forward`]: returns parameter gradients (same shape as
    /// `self`) and `∂L/∂x`.
    pub fn backward(&self, trace: &MlpTrace, d_out: &Image) -> Result<(Mlp, Image)> {
        if trace.dims != self.dims()
            || d_out.width != trace.width
            || d_out.height != trace.height
            || d_out.channels != self.out_dim()
        {
            return Err(Error::StaleTrace(format!(
                "trace {:?} on {}x{}, gradient {}x{}x{}",
                trace.dims, trace.height, trace.width, d_out.height, d_out.width, d_out.channels
            )));
        }
        let out_dim = self.out_dim();
        let in_dim = self.in_dim();
        let partials = par::map(&trace.chunks.iter().enumerate().collect::<Vec<_>>(), |&(c, ch)| {
            let r0 = c * PIXEL_CHUNK;
            let mut grads = self.zeros_like();
            let mut d_in = vec![0.0; ch.rows * in_dim];
            let mut dz_next: Vec<f64> = d_out.data[r0 * out_dim..(r0 + ch.rows) * out_dim].to_vec();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let x = &ch.inputs[li];
                let mut dx = vec![0.0; ch.rows * layer.in_dim];
                for r in 0..ch.rows {
                    layer.backward_row(
                        &x[r * layer.in_dim..(r + 1) * layer.in_dim],
                        &dz_next[r * layer.out_dim..(r + 1) * layer.out_dim],
                        &mut grads.layers[li],
                        &mut dx[r * layer.in_dim..(r + 1) * layer.in_dim],
                    );
                }
                if li > 0 {
                    // Through the SiLU that produced this layer's input.
                    let z = &ch.pre[li - 1];
                    for (d, &zv) in dx.iter_mut().zip(z) {
                        *d *= silu_grad(zv);
                    }
                    dz_next = dx;
                } else {
                    d_in = dx;
                }
            }
            (grads, d_in)
        });
        let mut grads = self.zeros_like();
        let mut d_in = Vec::with_capacity(trace.width * trace.height * in_dim);
        for (g, d) in partials {
            grads.add_assign(&g);
            d_in.extend_from_slice(&d);
        }
        Ok((grads, Image::from_vec(trace.width, trace.height, in_dim, d_in)?))
    }

    pub(crate) fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}
