//! Analytic gradients against central finite differences.

use serde::Serialize;

use crate::model;
use crate::params::EncoderParams;
use crate::splice;
use crate::vocab::TokenSeq;
use crate::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Entries where both gradients were below [`ZERO_FLOOR`].
    pub numerically_zero: usize,
}

/// Magnitude below which both gradients count as zero. Central
/// differences at `epsilon = 1e-5` carry roundoff of about
/// `1e-16 / 1e-5 = 1e-11`; the floor sits two orders above that. Entries
/// such as attention key biases, whose exact gradient is zero because
/// softmax ignores a per-row shift, land here.
pub const ZERO_FLOOR: f64 = 1e-9;

/// `|a - n| / max(|a|, |n|)`, or zero when both are below [`ZERO_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn compare(
    analytic: &[f64],
    indices: &[usize],
    params: &mut [f64],
    epsilon: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64, NeuralError>,
) -> Result<GradCheck, NeuralError> {
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: 0,
        numerically_zero: 0,
    };
    for &i in indices {
        let orig = params[i];
        params[i] = orig + epsilon;
        let up = loss(params)?;
        params[i] = orig - epsilon;
        let down = loss(params)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if analytic[i].abs().max(numeric.abs()) < ZERO_FLOOR {
            worst.numerically_zero += 1;
        }
        if err > worst.max_relative_error {
            worst.max_relative_error = err;
            worst.worst_index = i;
        }
        worst.checked += 1;
    }
    Ok(worst)
}

fn all_or(indices: Option<&[usize]>, n: usize) -> Vec<usize> {
    indices.map_or_else(|| (0..n).collect(), <[usize]>::to_vec)
}

/// Check the single-encoder loss over `indices` (every parameter if
/// `None`). Dropout is off.
pub fn grad_check(
    params: &EncoderParams<f64>,
    seqs: &[&TokenSeq],
    labels: &[bool],
    epsilon: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheck, NeuralError> {
    let mut analytic = params.zeros_like();
    model::loss_and_grads(params, seqs, labels, None, &mut analytic)?;
    let mut probe = params.clone();
    let indices = all_or(indices, params.len());
    let mut data = probe.data.clone();
    compare(&analytic, &indices, &mut data, epsilon, |d| {
        probe.data.copy_from_slice(d);
        model::loss_and_grads(&probe, seqs, labels, None, &mut vec![0.0; d.len()])
    })
}

/// Check the composed loss with respect to the unifier's parameters.
pub fn grad_check_spliced(
    fu: &EncoderParams<f64>,
    uu: &EncoderParams<f64>,
    seqs: &[&TokenSeq],
    labels: &[bool],
    epsilon: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheck, NeuralError> {
    let mut analytic = uu.zeros_like();
    splice::loss_and_grads(fu, uu, seqs, labels, None, &mut analytic)?;
    let mut probe = uu.clone();
    let indices = all_or(indices, uu.len());
    let mut data = probe.data.clone();
    compare(&analytic, &indices, &mut data, epsilon, |d| {
        probe.data.copy_from_slice(d);
        splice::loss_and_grads(fu, &probe, seqs, labels, None, &mut vec![0.0; d.len()])
    })
}
