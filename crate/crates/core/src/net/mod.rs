//! Pixel-wise modulation network: shared encoder, thermal prior head, FiLM
//! generator and the two sigmoid decoders, with cached-activation backward.

mod mlp;

pub use mlp::{silu, silu_grad, Linear, Mlp, MlpTrace};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::sigmoid;

/// Layer widths. Hidden lists exclude the input and output sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub feature_dim: usize,
    pub shared_hidden: Vec<usize>,
    pub h_dim: usize,
    pub thermal_hidden: Vec<usize>,
    pub h_th_dim: usize,
    pub rgb_hidden: Vec<usize>,
    pub thermal_out_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            shared_hidden: vec![32],
            h_dim: 32,
            thermal_hidden: vec![],
            h_th_dim: 16,
            rgb_hidden: vec![32],
            thermal_out_hidden: vec![16],
        }
    }
}

fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl NetConfig {
    pub fn with_feature_dim(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.feature_dim, self.h_dim, self.h_th_dim];
        if all.contains(&0)
            || self
                .shared_hidden
                .iter()
                .chain(&self.thermal_hidden)
                .chain(&self.rgb_hidden)
                .chain(&self.thermal_out_hidden)
                .any(|&w| w == 0)
        {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Number of learnable values, or `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let stacks = [
            chain(self.feature_dim, &self.shared_hidden, self.h_dim),
            chain(self.h_dim, &self.thermal_hidden, self.h_th_dim),
            vec![self.h_th_dim, self.h_dim.checked_mul(2)?],
            chain(self.h_dim, &self.rgb_hidden, 3),
            chain(self.h_th_dim, &self.thermal_out_hidden, 1),
        ];
        let mut total = 0usize;
        for dims in &stacks {
            for w in dims.windows(2) {
                let layer = w[0].checked_mul(w[1])?.checked_add(w[1])?;
                total = total.checked_add(layer)?;
            }
        }
        Some(total)
    }
}

/// Which latent feeds the FiLM generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmSource {
    /// `Φ_th(Φ_shared(A_f(t)))`, the same latent that is decoded to thermal.
    #[default]
    ThermalPass,
    /// `Φ_th(Φ_shared(A_f))`; thermal decoding still reads the thermal pass.
    BasePass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetOptions {
    pub film: bool,
    pub film_source: FilmSource,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            film: true,
            film_source: FilmSource::ThermalPass,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationNet {
    pub shared: Mlp,
    pub thermal_head: Mlp,
    /// `2h × h_th`; the first `h` outputs are γ, the rest β.
    pub film_linear: Linear,
    pub rgb_decoder: Mlp,
    pub thermal_decoder: Mlp,
}

/// Named parameter tensor view.
pub struct NetTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn sigmoid_image(x: &Image) -> Image {
    x.map(sigmoid)
}

fn sigmoid_backward(out: &Image, d_out: &Image) -> Image {
    let mut d = d_out.clone();
    for (g, &s) in d.data.iter_mut().zip(&out.data) {
        *g *= s * (1.0 - s);
    }
    d
}

impl ModulationNet {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut film_linear = Linear::zeros(cfg.h_th_dim, 2 * cfg.h_dim);
        film_linear.bias[..cfg.h_dim].iter_mut().for_each(|b| *b = 1.0);
        Ok(Self {
            shared: Mlp::init_uniform(&chain(cfg.feature_dim, &cfg.shared_hidden, cfg.h_dim), rng),
            thermal_head: Mlp::init_uniform(&chain(cfg.h_dim, &cfg.thermal_hidden, cfg.h_th_dim), rng),
            film_linear,
            rgb_decoder: Mlp::init_uniform(&chain(cfg.h_dim, &cfg.rgb_hidden, 3), rng),
            thermal_decoder: Mlp::init_uniform(&chain(cfg.h_th_dim, &cfg.thermal_out_hidden, 1), rng),
        })
    }

    /// Same architecture, all parameters zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            shared: self.shared.zeros_like(),
            thermal_head: self.thermal_head.zeros_like(),
            film_linear: Linear::zeros(self.film_linear.in_dim, self.film_linear.out_dim),
            rgb_decoder: self.rgb_decoder.zeros_like(),
            thermal_decoder: self.thermal_decoder.zeros_like(),
        }
    }

    pub fn config(&self) -> NetConfig {
        let inner = |m: &Mlp| {
            let d = m.dims();
            d[1..d.len() - 1].to_vec()
        };
        NetConfig {
            feature_dim: self.shared.in_dim(),
            shared_hidden: inner(&self.shared),
            h_dim: self.h_dim(),
            thermal_hidden: inner(&self.thermal_head),
            h_th_dim: self.h_th_dim(),
            rgb_hidden: inner(&self.rgb_decoder),
            thermal_out_hidden: inner(&self.thermal_decoder),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.shared.in_dim()
    }

    pub fn h_dim(&self) -> usize {
        self.shared.out_dim()
    }

    pub fn h_th_dim(&self) -> usize {
        self.thermal_head.out_dim()
    }

    /// Checks that the layer dimensions chain as the forward pass expects.
    pub fn validate(&self) -> Result<()> {
        let (h, t) = (self.h_dim(), self.h_th_dim());
        let mlps = [
            ("shared", &self.shared),
            ("thermal_head", &self.thermal_head),
            ("rgb_decoder", &self.rgb_decoder),
            ("thermal_decoder", &self.thermal_decoder),
        ];
        for (name, m) in mlps {
            if m.layers.is_empty() {
                return Err(Error::shape(format!("{name} has no layers")));
            }
            for w in m.layers.windows(2) {
                if w[0].out_dim != w[1].in_dim {
                    return Err(Error::shape(format!("{name} layers do not chain")));
                }
            }
            for l in &m.layers {
                if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                    return Err(Error::shape(format!("{name} layer storage has the wrong size")));
                }
            }
        }
        let ok = self.thermal_head.in_dim() == h
            && self.rgb_decoder.in_dim() == h
            && self.rgb_decoder.out_dim() == 3
            && self.thermal_decoder.in_dim() == t
            && self.thermal_decoder.out_dim() == 1
            && self.film_linear.in_dim == t
            && self.film_linear.out_dim == 2 * h
            && self.film_linear.weight.len() == 2 * h * t
            && self.film_linear.bias.len() == 2 * h;
        if !ok {
            return Err(Error::shape("modulation network dimensions do not chain"));
        }
        if !self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite())) {
            return Err(Error::Data("non-finite network weight".into()));
        }
        Ok(())
    }

    /// All parameters in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<NetTensor<'_>> {
        let mut out = Vec::new();
        for (name, m) in self.named_mlps() {
            for (i, l) in m.layers.iter().enumerate() {
                push_linear(&mut out, &format!("{name}.{i}"), l);
            }
        }
        push_linear(&mut out, "film_linear", &self.film_linear);
        out
    }

    fn named_mlps(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("shared", &self.shared),
            ("thermal_head", &self.thermal_head),
            ("rgb_decoder", &self.rgb_decoder),
            ("thermal_decoder", &self.thermal_decoder),
        ]
    }

    /// Mutable parameter slices in the same order as [`ModulationNet::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for m in [
            &mut self.shared,
            &mut self.thermal_head,
            &mut self.rgb_decoder,
            &mut self.thermal_decoder,
        ] {
            for l in &mut m.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.film_linear.weight);
        out.push(&mut self.film_linear.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModulationNet) {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
    }

    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// `h = Φ_shared(A)`.
    pub fn shared_encode(&self, a: &Image) -> Result<(Image, MlpTrace)> {
        self.shared.forward(a)
    }

    /// `h_th = Φ_th(h)`.
    pub fn thermal_prior(&self, h: &Image) -> Result<(Image, MlpTrace)> {
        self.thermal_head.forward(h)
    }

    /// `(γ, β)` from the FiLM linear map; no output nonlinearity.
    pub fn film_params(&self, h_th: &Image) -> Result<(Image, Image)> {
        let gb = self.film_linear.forward(h_th)?;
        let h = self.h_dim();
        Ok((gb.channels(0..h), gb.channels(h..2 * h)))
    }

    /// `sigmoid(Φ_rgb(h_mod))`.
    pub fn decode_rgb(&self, h_mod: &Image) -> Result<(Image, MlpTrace)> {
        let (z, tr) = self.rgb_decoder.forward(h_mod)?;
        Ok((sigmoid_image(&z), tr))
    }

    /// `sigmoid(Φ_th_out(h_th))`.
    pub fn decode_thermal(&self, h_th: &Image) -> Result<(Image, MlpTrace)> {
        let (z, tr) = self.thermal_decoder.forward(h_th)?;
        Ok((sigmoid_image(&z), tr))
    }

    /// Full forward. `a_ft = None` means the thermal pass shares `a_f`.
    pub fn forward(&self, a_f: &Image, a_ft: Option<&Image>, opts: NetOptions) -> Result<ModulationTrace> {
        if let Some(t) = a_ft {
            if !t.same_shape(a_f) {
                return Err(Error::shape("thermal feature map shape differs from base"));
            }
        }
        let (h, shared_base) = self.shared_encode(a_f)?;
        let (h_t, shared_th) = match a_ft {
            Some(t) => {
                let (ht, tr) = self.shared_encode(t)?;
                (Some(ht), Some(tr))
            }
            None => (None, None),
        };
        let (h_th, head_th) = self.thermal_prior(h_t.as_ref().unwrap_or(&h))?;
        let (film_src, head_base) = match (opts.film, opts.film_source) {
            (true, FilmSource::BasePass) if a_ft.is_some() => {
                let (src, tr) = self.thermal_prior(&h)?;
                (Some(src), Some(tr))
            }
            (true, _) => (Some(h_th.clone()), None),
            (false, _) => (None, None),
        };
        let (gamma, beta, h_mod) = match &film_src {
            Some(src) => {
                let (g, b) = self.film_params(src)?;
                let m = film_modulate(&h, &g, &b)?;
                (Some(g), Some(b), m)
            }
            None => (None, None, h.clone()),
        };
        let (c_impl, rgb_tr) = self.decode_rgb(&h_mod)?;
        let (c_thermal, th_tr) = self.decode_thermal(&h_th)?;
        Ok(ModulationTrace {
            h,
            h_th,
            gamma,
            beta,
            h_mod,
            c_impl,
            c_thermal,
            film_src,
            shared_base,
            shared_th,
            head_th,
            head_base,
            rgb_tr,
            th_tr,
        })
    }

    /// Exact reverse of [`ModulationNet::forward`].
    pub fn backward(&self, trace: &ModulationTrace, d_c_impl: &Image, d_c_thermal: &Image) -> Result<NetBackward> {
        if !d_c_impl.same_shape(&trace.c_impl) || !d_c_thermal.same_shape(&trace.c_thermal) {
            return Err(Error::StaleTrace("upstream gradient shape differs from forward outputs".into()));
        }
        let mut grads = self.zeros_like();

        let (g, d_h_th_dec) = self
            .thermal_decoder
            .backward(&trace.th_tr, &sigmoid_backward(&trace.c_thermal, d_c_thermal))?;
        grads.thermal_decoder = g;
        let (g, d_h_mod) = self
            .rgb_decoder
            .backward(&trace.rgb_tr, &sigmoid_backward(&trace.c_impl, d_c_impl))?;
        grads.rgb_decoder = g;

        let (mut d_h, d_film_src) = match (&trace.gamma, &trace.film_src) {
            (Some(gamma), Some(src)) => {
                let (d_h, d_gamma, d_beta) = film_modulate_backward(&trace.h, gamma, &d_h_mod)?;
                let d_gb = Image::concat_channels(&[&d_gamma, &d_beta])?;
                let (g, d_src) = self.film_linear.backward(src, &d_gb)?;
                grads.film_linear = g;
                (d_h, Some(d_src))
            }
            _ => (d_h_mod, None),
        };

        let mut d_h_th_film = None;
        let mut d_h_th = d_h_th_dec;
        if let Some(d_src) = d_film_src {
            match &trace.head_base {
                Some(base_tr) => {
                    let (g, d_hb) = self.thermal_head.backward(base_tr, &d_src)?;
                    grads.thermal_head.add_assign(&g);
                    d_h.add_assign(&d_hb);
                }
                None => d_h_th.add_assign(&d_src),
            }
            d_h_th_film = Some(d_src);
        }
        let (g, d_ht) = self.thermal_head.backward(&trace.head_th, &d_h_th)?;
        grads.thermal_head.add_assign(&g);

        let (d_a_f, d_a_ft) = match &trace.shared_th {
            Some(th_tr) => {
                let (g1, d_a_f) = self.shared.backward(&trace.shared_base, &d_h)?;
                let (g2, d_a_ft) = self.shared.backward(th_tr, &d_ht)?;
                grads.shared = g1;
                grads.shared.add_assign(&g2);
                (d_a_f, Some(d_a_ft))
            }
            None => {
                d_h.add_assign(&d_ht);
                let (g, d_a_f) = self.shared.backward(&trace.shared_base, &d_h)?;
                grads.shared = g;
                (d_a_f, None)
            }
        };
        Ok(NetBackward {
            grads,
            d_a_f,
            d_a_ft,
            d_h_th,
            d_h_th_film,
        })
    }
}

fn push_linear<'a>(out: &mut Vec<NetTensor<'a>>, prefix: &str, l: &'a Linear) {
    out.push(NetTensor {
        name: format!("{prefix}.weight"),
        shape: vec![l.out_dim, l.in_dim],
        data: &l.weight,
    });
    out.push(NetTensor {
        name: format!("{prefix}.bias"),
        shape: vec![l.out_dim],
        data: &l.bias,
    });
}

/// `h_mod = γ ⊙ h + β`.
pub fn film_modulate(h: &Image, gamma: &Image, beta: &Image) -> Result<Image> {
    h.check_same_shape(gamma, "film gamma")?;
    h.check_same_shape(beta, "film beta")?;
    let mut out = h.clone();
    for ((o, g), b) in out.data.iter_mut().zip(&gamma.data).zip(&beta.data) {
        *o = g * *o + b;
    }
    Ok(out)
}

/// Returns `(∂L/∂h, ∂L/∂γ, ∂L/∂β)`.
pub fn film_modulate_backward(h: &Image, gamma: &Image, d_out: &Image) -> Result<(Image, Image, Image)> {
    h.check_same_shape(gamma, "film gamma")?;
    h.check_same_shape(d_out, "film upstream")?;
    let mut d_h = d_out.clone();
    let mut d_gamma = d_out.clone();
    for i in 0..d_out.data.len() {
        d_h.data[i] *= gamma.data[i];
        d_gamma.data[i] *= h.data[i];
    }
    Ok((d_h, d_gamma, d_out.clone()))
}

/// Cached activations of one [`ModulationNet::forward`].
#[derive(Clone, Debug)]
pub struct ModulationTrace {
    pub h: Image,
    pub h_th: Image,
    pub gamma: Option<Image>,
    pub beta: Option<Image>,
    pub h_mod: Image,
    pub c_impl: Image,
    pub c_thermal: Image,
    film_src: Option<Image>,
    shared_base: MlpTrace,
    shared_th: Option<MlpTrace>,
    head_th: MlpTrace,
    head_base: Option<MlpTrace>,
    rgb_tr: MlpTrace,
    th_tr: MlpTrace,
}

/// Output of [`ModulationNet::backward`].
#[derive(Clone, Debug)]
pub struct NetBackward {
    pub grads: ModulationNet,
    pub d_a_f: Image,
    /// `None` when the forward shared one feature map for both branches.
    pub d_a_ft: Option<Image>,
    /// Total gradient reaching the decoded thermal latent.
    pub d_h_th: Image,
    /// The FiLM path's share of `d_h_th` (or of the base latent's FiLM source).
    pub d_h_th_film: Option<Image>,
}

#[cfg(test)]
mod tests;
