//! Covariance matching loss: Frobenius distance between the Gram matrices
//! of two flattened feature maps, with analytic gradients and a
//! finite-difference verification oracle.

use super::FeatureMap;
use crate::error::{Error, Result};

/// Below this loss the gradient is defined as zero (subgradient at the
/// nonsmooth point of the norm).
pub const GRAD_EPS: f64 = 1e-12;

/// Gram matrix of the flattened map: with rows of `flat` indexed by spatial
/// position and columns by channel, returns `flat^T * flat` as a row-major
/// C x C matrix. Symmetric positive semidefinite by construction.
pub fn gram(map: &FeatureMap) -> Vec<f64> {
    let c = map.channels;
    let hw = map.spatial_len();
    let mut g = vec![0.0f64; c * c];
    for i in 0..c {
        let pi = map.channel(i);
        for j in i..c {
            let pj = map.channel(j);
            let mut sum = 0.0;
            for s in 0..hw {
                sum += pi[s] * pj[s];
            }
            g[i * c + j] = sum;
            g[j * c + i] = sum;
        }
    }
    g
}

/// Loss value and gradients with respect to both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CmlResult {
    pub loss: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Frobenius norm of `gram(a) - gram(b)` with analytic gradients
/// `2 * flat * D / loss` (negated for `b`); both gradients are zero below
/// [`GRAD_EPS`].
pub fn cml_loss(map_a: &FeatureMap, map_b: &FeatureMap) -> Result<CmlResult> {
    if map_a.channels != map_b.channels {
        return Err(Error::validation(format!(
            "channel count mismatch: {} vs {}",
            map_a.channels, map_b.channels
        )));
    }
    let c = map_a.channels;
    let ga = gram(map_a);
    let gb = gram(map_b);
    let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>().sqrt();

    let mut grad_a = vec![0.0f64; map_a.values.len()];
    let mut grad_b = vec![0.0f64; map_b.values.len()];
    if loss >= GRAD_EPS {
        fill_grad(map_a, &diff, c, 2.0 / loss, &mut grad_a);
        fill_grad(map_b, &diff, c, -2.0 / loss, &mut grad_b);
    }
    Ok(CmlResult {
        loss,
        grad_a,
        grad_b,
    })
}

// grad[c][s] = scale * sum_j flat[s][j] * diff[j][c]
fn fill_grad(map: &FeatureMap, diff: &[f64], c: usize, scale: f64, out: &mut [f64]) {
    let hw = map.spatial_len();
    for ci in 0..c {
        for s in 0..hw {
            let mut acc = 0.0;
            for j in 0..c {
                acc += map.values[j * hw + s] * diff[j * c + ci];
            }
            out[ci * hw + s] = scale * acc;
        }
    }
}

/// Verifies the analytic gradients of [`cml_loss`] against central finite
/// differences with step `h` on every coordinate of both inputs. Returns the
/// maximum of `|analytic - numeric| / max(1, |numeric|)`.
///
/// Rejects input pairs with loss <= 1e-6: the norm is nonsmooth there and
/// the comparison is meaningless.
pub fn finite_diff_check(map_a: &FeatureMap, map_b: &FeatureMap, h: f64) -> Result<f64> {
    let base = cml_loss(map_a, map_b)?;
    if base.loss <= 1e-6 {
        return Err(Error::validation(format!(
            "finite_diff_check requires loss > 1e-6, got {}",
            base.loss
        )));
    }
    let loss_of = |a: &FeatureMap, b: &FeatureMap| cml_loss(a, b).map(|r| r.loss);

    let mut max_err = 0.0f64;
    let mut check_side = |which_a: bool| -> Result<()> {
        let reference = if which_a { map_a } else { map_b };
        let analytic = if which_a { &base.grad_a } else { &base.grad_b };
        for (k, &analytic_k) in analytic.iter().enumerate() {
            let mut plus = reference.clone();
            plus.values[k] += h;
            let mut minus = reference.clone();
            minus.values[k] -= h;
            let (lp, lm) = if which_a {
                (loss_of(&plus, map_b)?, loss_of(&minus, map_b)?)
            } else {
                (loss_of(map_a, &plus)?, loss_of(map_a, &minus)?)
            };
            let numeric = (lp - lm) / (2.0 * h);
            let err = (analytic_k - numeric).abs() / numeric.abs().max(1.0);
            max_err = max_err.max(err);
        }
        Ok(())
    };
    check_side(true)?;
    check_side(false)?;
    Ok(max_err)
}
