//! Closed-form concentration bounds and width lower bounds.
//!
//! Every bound shares the Chernoff rate
//! `φ(ε) = ε/4 + ln(2 / (1 + √(1+ε)))`: a single ReLU layer of width `m`
//! fails to keep `‖v‖²` within `(1 ± ε)‖u‖²` with probability at most
//! `2·exp(−m φ(ε))`. The deep and dataset-level statements are union bounds
//! over that event, and the subspace width bound inverts it over a grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of evaluating a failure-probability bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// The bound clamped to `[0, 1]`.
    pub probability: f64,
    /// The unclamped value.
    pub raw: f64,
    /// Set when `raw ≥ 1`, i.e. the bound says nothing.
    pub vacuous: bool,
}

impl BoundResult {
    fn from_raw(raw: f64) -> Self {
        Self {
            probability: raw.clamp(0.0, 1.0),
            raw,
            vacuous: raw >= 1.0,
        }
    }
}

/// Parameters shared by the bound evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub widths: Vec<usize>,
    pub dataset_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub subspace_dim: Option<usize>,
}

impl BoundQuery {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        check_delta(self.delta)?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("widths must be non-empty and positive"));
        }
        if self.subspace_dim == Some(0) {
            return Err(Error::invalid("subspace dimension must be positive"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn forward_failure_prob(&self) -> Result<BoundResult> {
        self.validate()?;
        deep_forward_failure_prob(&self.widths, self.dataset_size, self.epsilon)
    }

    /// Width needed for the subspace guarantee over all layers.
    pub fn subspace_min_width(&self) -> Result<usize> {
        self.validate()?;
        let d = self
            .subspace_dim
            .ok_or_else(|| Error::invalid("subspace dimension not set"))?;
        subspace_min_width(d, self.epsilon, self.delta, self.depth())
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must lie in [0, 1), got {epsilon}")))
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Unchecked rate, defined for every `ε ≥ 0`.
fn phi(epsilon: f64) -> f64 {
    epsilon / 4.0 + (2.0 / (1.0 + (1.0 + epsilon).sqrt())).ln()
}

/// `φ(ε) = ε/4 + ln(2 / (1 + √(1+ε)))` for `ε ∈ [0, 1)`.
pub fn rate_phi(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(phi(epsilon))
}

/// `min(1, 2·exp(−m φ(ε)))`.
pub fn single_layer_failure_prob(m: usize, epsilon: f64) -> Result<BoundResult> {
    if m == 0 {
        return Err(Error::invalid("layer width must be positive"));
    }
    let rate = rate_phi(epsilon)?;
    Ok(BoundResult::from_raw(2.0 * (-(m as f64) * rate).exp()))
}

/// `min(1, Σ_l 2N·exp(−n_l φ(ε)))` for a dataset of `N` fixed inputs.
pub fn deep_forward_failure_prob(widths: &[usize], n_samples: usize, epsilon: f64) -> Result<BoundResult> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::invalid("widths must be non-empty and positive"));
    }
    let rate = rate_phi(epsilon)?;
    let raw: f64 = widths
        .iter()
        .map(|&w| 2.0 * n_samples as f64 * (-(w as f64) * rate).exp())
        .sum();
    Ok(BoundResult::from_raw(raw))
}

/// `min(1, 4NL·exp(−n φ(ε)))` for the weight-gradient norms of a uniform-width net.
pub fn gradient_failure_prob(n: usize, depth: usize, n_samples: usize, epsilon: f64) -> Result<BoundResult> {
    if n == 0 || depth == 0 {
        return Err(Error::invalid("width and depth must be positive"));
    }
    let rate = rate_phi(epsilon)?;
    let raw = 4.0 * n_samples as f64 * depth as f64 * (-(n as f64) * rate).exp();
    Ok(BoundResult::from_raw(raw))
}

/// Smallest `ε` with `multiplier·exp(−m φ(ε)) ≤ delta`, by bisection on `(0, 1)`.
///
/// Returns 0 when the bound is already below `delta` at `ε = 0`.
pub fn solve_epsilon(m: usize, delta: f64, multiplier: f64) -> Result<f64> {
    check_delta(delta)?;
    if m == 0 || multiplier.is_nan() || multiplier <= 0.0 {
        return Err(Error::invalid("width and multiplier must be positive"));
    }
    let bound = |eps: f64| multiplier * (-(m as f64) * phi(eps)).exp();
    if bound(0.0) <= delta {
        return Ok(0.0);
    }
    if bound(1.0) > delta {
        return Err(Error::NoRoot(format!(
            "width {m} cannot reach failure probability {delta} for any epsilon < 1"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if bound(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grid spacing `Δ = min{ε/(3√d), √ε/(√3·d)}`.
pub fn grid_delta(d: usize, epsilon: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("subspace dimension must be positive"));
    }
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Err(Error::invalid("epsilon must be positive for the grid spacing"));
    }
    let d = d as f64;
    Ok((epsilon / (3.0 * d.sqrt())).min(epsilon.sqrt() / (3f64.sqrt() * d)))
}

/// Width that keeps every input of a `d`-dimensional subspace within the
/// `(1 ± ε)` band at each of `L` layers with probability `1 − δ`:
/// `⌈(d·ln(2/Δ) + ln(4L/δ)) / φ(ε/3)⌉`. With `L = 1` this is the single-layer
/// statement.
pub fn subspace_min_width(d: usize, epsilon: f64, delta: f64, depth: usize) -> Result<usize> {
    check_delta(delta)?;
    if depth == 0 {
        return Err(Error::invalid("depth must be positive"));
    }
    let spacing = grid_delta(d, epsilon)?;
    let numerator = d as f64 * (2.0 / spacing).ln() + (4.0 * depth as f64 / delta).ln();
    let width = (numerator / phi(epsilon / 3.0)).ceil();
    if !width.is_finite() || width > usize::MAX as f64 {
        return Err(Error::invalid("width bound overflows"));
    }
    Ok(width as usize)
}
