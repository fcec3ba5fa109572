//! Cross-style normalization: per-channel feature statistics, instance
//! normalization, statistic swapping between feature-map pairs, and the
//! gated activation policy.
//!
//! Channel std uses the stabilizer inside the root, `sigma = sqrt(var +
//! eps^2)`, so it is bounded below by eps and constant channels stay
//! well-defined.

mod backbone;
mod cml;

pub use backbone::{toy_backbone_forward, BackboneOutput, LayerTrace, PairLoss, NUM_LAYERS};
pub use cml::{cml_loss, finite_diff_check, gram, CmlResult, GRAD_EPS};

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Dense C x H x W activation tensor (channel-major values).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::validation("feature map dims must be >= 1"));
        }
        if values.len() != channels * height * width {
            return Err(Error::validation(format!(
                "value count {} != {}x{}x{}",
                values.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("value[{bad}] is not finite")));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    /// Promotes an RGB raster to a 3-channel feature map.
    pub fn from_raster(raster: &crate::dataset::ImageRaster) -> Self {
        FeatureMap {
            channels: 3,
            height: raster.height as usize,
            width: raster.width as usize,
            values: raster.pixels.iter().map(|&p| f64::from(p)).collect(),
        }
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.spatial_len();
        &self.values[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.spatial_len();
        &mut self.values[c * hw..(c + 1) * hw]
    }
}

/// Per-channel mean and stabilized standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Affine parameters of instance normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNormParams {
    pub gamma_affine: Vec<f64>,
    pub beta_affine: Vec<f64>,
}

impl InstanceNormParams {
    /// gamma = 1, beta = 0 for every channel.
    pub fn identity(channels: usize) -> Self {
        InstanceNormParams {
            gamma_affine: vec![1.0; channels],
            beta_affine: vec![0.0; channels],
        }
    }
}

/// Gated activation policy for CSN sites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsnPolicy {
    pub probability: f64,
    pub max_active: usize,
    pub epsilon: f64,
}

impl Default for CsnPolicy {
    fn default() -> Self {
        CsnPolicy {
            probability: 0.1,
            max_active: 2,
            epsilon: 1e-5,
        }
    }
}

impl CsnPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if !(0.0..=1.0).contains(&self.probability) {
            violations.push(format!(
                "csn.probability = {} outside [0, 1]",
                self.probability
            ));
        }
        if self.max_active < 1 {
            violations.push("csn.max_active must be >= 1".to_string());
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            violations.push(format!("csn.epsilon = {} must be > 0", self.epsilon));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

/// Per-channel mean over H*W and `sigma = sqrt(population variance + eps^2)`.
pub fn channel_stats(map: &FeatureMap, eps: f64) -> ChannelStats {
    let hw = map.spatial_len() as f64;
    let mut mu = Vec::with_capacity(map.channels);
    let mut sigma = Vec::with_capacity(map.channels);
    for c in 0..map.channels {
        let plane = map.channel(c);
        let m = plane.iter().sum::<f64>() / hw;
        let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw;
        mu.push(m);
        sigma.push((var + eps * eps).sqrt());
    }
    ChannelStats { mu, sigma }
}

/// Per-channel `gamma * (F - mu) / sigma + beta`.
pub fn instance_norm(map: &FeatureMap, params: &InstanceNormParams, eps: f64) -> Result<FeatureMap> {
    if params.gamma_affine.len() != map.channels || params.beta_affine.len() != map.channels {
        return Err(Error::validation(format!(
            "affine parameter length != {} channels",
            map.channels
        )));
    }
    let stats = channel_stats(map, eps);
    let mut out = map.clone();
    for c in 0..map.channels {
        let (mu, sigma) = (stats.mu[c], stats.sigma[c]);
        let (g, b) = (params.gamma_affine[c], params.beta_affine[c]);
        for v in out.channel_mut(c) {
            *v = g * (*v - mu) / sigma + b;
        }
    }
    Ok(out)
}

/// Exchanges channel statistics between two maps:
/// `swapped_a = sigma_b * (a - mu_a) / sigma_a + mu_b` and symmetrically.
/// Channel counts must match; spatial sizes may differ.
pub fn cross_style_swap(
    map_a: &FeatureMap,
    map_b: &FeatureMap,
    eps: f64,
) -> Result<(FeatureMap, FeatureMap)> {
    if map_a.channels != map_b.channels {
        return Err(Error::validation(format!(
            "channel count mismatch: {} vs {}",
            map_a.channels, map_b.channels
        )));
    }
    let sa = channel_stats(map_a, eps);
    let sb = channel_stats(map_b, eps);
    let mut out_a = map_a.clone();
    let mut out_b = map_b.clone();
    for c in 0..map_a.channels {
        let scale_ab = sb.sigma[c] / sa.sigma[c];
        for v in out_a.channel_mut(c) {
            *v = (*v - sa.mu[c]) * scale_ab + sb.mu[c];
        }
        let scale_ba = sa.sigma[c] / sb.sigma[c];
        for v in out_b.channel_mut(c) {
            *v = (*v - sb.mu[c]) * scale_ba + sa.mu[c];
        }
    }
    Ok((out_a, out_b))
}

/// Draws a Bernoulli(p) gate per layer; when more than `max_active` fire,
/// only the earliest-indexed `max_active` stay active.
pub fn sample_active_layers(policy: &CsnPolicy, n_layers: usize, rng_seed: u64) -> Vec<bool> {
    let mut rng = DetRng::new(rng_seed);
    let mut mask: Vec<bool> = (0..n_layers)
        .map(|_| rng.next_unit() < policy.probability)
        .collect();
    let mut active = 0usize;
    for gate in mask.iter_mut() {
        if *gate {
            active += 1;
            if active > policy.max_active {
                *gate = false;
            }
        }
    }
    mask
}
