//! Bias-corrected Adam with one moment pair per parameter tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CloudParam, GaussianCloud};
use crate::net::ModulationNet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One Adam update of `param` at step `t ≥ 1`.
pub fn adam_update(param: &mut [f64], grad: &[f64], mom: &mut Moments, hp: &AdamHyper, t: u64) -> Result<()> {
    if grad.len() != param.len() || mom.m.len() != param.len() || mom.v.len() != param.len() {
        return Err(Error::shape(format!(
            "adam: param {} grad {} moments {}/{}",
            param.len(),
            grad.len(),
            mom.m.len(),
            mom.v.len()
        )));
    }
    let t = t.max(1) as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        mom.m[i] = hp.beta1 * mom.m[i] + (1.0 - hp.beta1) * g;
        mom.v[i] = hp.beta2 * mom.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = mom.m[i] / c1;
        let v_hat = mom.v[i] / c2;
        param[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Moments for every cloud tensor (in [`CloudParam::ALL`] order) and every
/// network tensor (in [`ModulationNet::tensors`] order).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub cloud: Vec<Moments>,
    pub net: Vec<Moments>,
}

impl AdamState {
    pub fn new(cloud: &GaussianCloud, net: &ModulationNet) -> Self {
        Self {
            step: 0,
            cloud: CloudParam::ALL
                .iter()
                .map(|&p| Moments::zeros(cloud.tensor(p).len()))
                .collect(),
            net: net.tensors().iter().map(|t| Moments::zeros(t.data.len())).collect(),
        }
    }

    /// Drops the moment rows of removed Gaussians.
    pub fn retain_rows(&mut self, cloud: &GaussianCloud, keep: &[bool]) {
        for (k, &p) in CloudParam::ALL.iter().enumerate() {
            let w = cloud.row_width(p);
            crate::model::retain_rows(&mut self.cloud[k].m, w, keep);
            crate::model::retain_rows(&mut self.cloud[k].v, w, keep);
        }
    }
}

/// Learning rate for each parameter group at the current step.
pub trait GroupRates {
    fn cloud_hyper(&self, p: CloudParam) -> AdamHyper;
    fn net_hyper(&self) -> AdamHyper;
}

/// Advances every tensor by one Adam step, then renormalizes quaternions.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    net: &mut ModulationNet,
    d_cloud: &GaussianCloud,
    d_net: &ModulationNet,
    state: &mut AdamState,
    rates: &impl GroupRates,
) -> Result<()> {
    if state.cloud.len() != CloudParam::ALL.len() || state.net.len() != net.tensors().len() {
        return Err(Error::shape("adam state does not match the parameter set"));
    }
    state.step += 1;
    let t = state.step;
    for (k, &p) in CloudParam::ALL.iter().enumerate() {
        let hp = rates.cloud_hyper(p);
        adam_update(cloud.tensor_mut(p), d_cloud.tensor(p), &mut state.cloud[k], &hp, t)?;
    }
    let hp = rates.net_hyper();
    let grads: Vec<Vec<f64>> = d_net.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    if grads.len() != state.net.len() {
        return Err(Error::shape("network gradient has a different layout"));
    }
    for ((param, g), mom) in net.tensors_mut().into_iter().zip(&grads).zip(&mut state.net) {
        adam_update(param, g, mom, &hp, t)?;
    }
    cloud.normalize_rotations();
    Ok(())
}
