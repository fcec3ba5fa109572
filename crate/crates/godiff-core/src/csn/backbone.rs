//! Toy backbone harness: a fixed 4-layer convolutional feature extractor
//! with CSN sites between layers.
//!
//! Each layer is a seeded 3x3 convolution (stride 2, zero padding 1)
//! followed by half-wave rectification. At every active CSN site the batch
//! is paired by a seeded fixed-point-free pairing, statistics are swapped
//! within each pair, and the covariance matching loss is computed on the
//! post-swap maps. No training happens here; gradient correctness is
//! established by finite differences.

use super::{cml_loss, cross_style_swap, sample_active_layers, CsnPolicy, FeatureMap};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::{derive_seed, DetRng};

pub const NUM_LAYERS: usize = 4;
const LAYER_CHANNELS: [usize; NUM_LAYERS] = [8, 8, 8, 8];

struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    /// [out][in][3][3] flattened
    weights: Vec<f64>,
}

impl ConvLayer {
    fn seeded(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = DetRng::new(seed);
        let fan_in = (in_channels * 9) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let weights = (0..out_channels * in_channels * 9)
            .map(|_| rng.next_gaussian() * scale)
            .collect();
        ConvLayer {
            in_channels,
            out_channels,
            weights,
        }
    }

    /// 3x3 convolution, stride 2, zero padding 1, then ReLU.
    fn forward(&self, input: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(input.channels, self.in_channels);
        let (h, w) = (input.height, input.width);
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = FeatureMap::zeros(self.out_channels, oh, ow);
        for co in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..self.in_channels {
                        let plane = input.channel(ci);
                        let wbase = (co * self.in_channels + ci) * 9;
                        for ky in 0..3usize {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.weights[wbase + ky * 3 + kx]
                                    * plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out.values[co * oh * ow + oy * ow + ox] = acc.max(0.0);
                }
            }
        }
        out
    }
}

/// One swapped pair and its loss at an active site.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub first: usize,
    pub second: usize,
    pub loss: f64,
}

/// What happened at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub active: bool,
    pub pair_losses: Vec<PairLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub active_mask: Vec<bool>,
    pub layers: Vec<LayerTrace>,
    /// final-layer features per batch item (post-swap where applied)
    pub features: Vec<FeatureMap>,
    /// summed loss over all active sites; absent when no site fired
    pub total_cml: Option<f64>,
}

/// Runs the batch through the extractor with CSN sites gated by `policy`.
///
/// All randomness derives from the two seeds, so outputs are identical
/// across runs and thread counts. The batch size must be even (pairing).
pub fn toy_backbone_forward(
    batch: &[FeatureMap],
    weights_seed: u64,
    policy: &CsnPolicy,
    pairing_seed: u64,
) -> Result<BackboneOutput> {
    policy.validate()?;
    if batch.len() < 2 || !batch.len().is_multiple_of(2) {
        return Err(Error::validation(format!(
            "batch size {} must be even and >= 2",
            batch.len()
        )));
    }
    let channels = batch[0].channels;
    if batch.iter().any(|m| m.channels != channels) {
        return Err(Error::validation("batch items must share channel count"));
    }

    let layers: Vec<ConvLayer> = (0..NUM_LAYERS)
        .map(|l| {
            let in_c = if l == 0 { channels } else { LAYER_CHANNELS[l - 1] };
            ConvLayer::seeded(in_c, LAYER_CHANNELS[l], derive_seed(weights_seed, "conv", &[l as u64]))
        })
        .collect();

    let active_mask = sample_active_layers(
        policy,
        NUM_LAYERS,
        derive_seed(pairing_seed, "csn-gate", &[]),
    );

    let mut current: Vec<FeatureMap> = batch.to_vec();
    let mut traces = Vec::with_capacity(NUM_LAYERS);
    let mut total = 0.0f64;
    let mut any_active = false;

    for (l, layer) in layers.iter().enumerate() {
        current = parallel::map_indexed(&current, |_, m| layer.forward(m));

        let mut trace = LayerTrace {
            active: active_mask[l],
            pair_losses: Vec::new(),
        };
        if active_mask[l] {
            any_active = true;
            let mut order: Vec<usize> = (0..current.len()).collect();
            DetRng::new(derive_seed(pairing_seed, "csn-pair", &[l as u64])).shuffle(&mut order);
            for pair in order.chunks_exact(2) {
                let (i, j) = (pair[0], pair[1]);
                let (si, sj) = cross_style_swap(&current[i], &current[j], policy.epsilon)?;
                let loss = cml_loss(&si, &sj)?.loss;
                current[i] = si;
                current[j] = sj;
                trace.pair_losses.push(PairLoss {
                    first: i,
                    second: j,
                    loss,
                });
                total += loss;
            }
        }
        traces.push(trace);
    }

    Ok(BackboneOutput {
        active_mask,
        layers: traces,
        features: current,
        total_cml: if any_active { Some(total) } else { None },
    })
}
