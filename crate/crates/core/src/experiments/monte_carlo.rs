//! Monte Carlo checks of the single-layer expectation and concentration
//! statements.
//!
//! Each trial draws a fresh input and a fresh random layer, so the trials
//! are i.i.d. and the empirical violation frequency is a binomial estimate
//! of the failure probability that the closed-form bounds control.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, check_epsilon};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Draws, RngState, Vector};
use crate::network::{forward, init_network, InitScheme, NetworkConfig};

/// How a trial realizes `Ru` for its random matrix `R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Draw all `m × n` entries of `R` and multiply.
    #[default]
    Dense,
    /// Draw `Ru` from its exact law. For a fixed `u` and i.i.d. N(0, σ²)
    /// entries, the rows of `Ru` are i.i.d. N(0, σ²‖u‖²), and for a pair
    /// `(u₁, u₂)` each row of `(Ru₁, Ru₂)` is bivariate normal with
    /// covariance `σ²[[‖u₁‖², ⟨u₁,u₂⟩], [⟨u₁,u₂⟩, ‖u₂‖²]]`. Costs `O(m)`
    /// per trial instead of `O(mn)`.
    Marginal,
}

/// Law of the fixed input `u` of a trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLaw {
    /// `u ~ N(0, I_n)`, resampled if zero.
    #[default]
    Gaussian,
    /// `u = e_1`.
    BasisVector,
}

/// How the second vector of an inner-product trial relates to the first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLaw {
    /// Independent uniformly random unit vectors.
    #[default]
    Independent,
    /// `u₂ = u₁`.
    Identical,
    /// `u₂ = 0`.
    SecondZero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOptions {
    pub projection: Projection,
    pub input: InputLaw,
    pub pair: PairLaw,
}

impl McOptions {
    pub fn marginal() -> Self {
        Self {
            projection: Projection::Marginal,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub trials: usize,
    pub epsilon: f64,
    pub violation_count: usize,
    pub violation_rate: f64,
    /// Mean of `‖v‖² / ‖u‖²` over trials.
    pub mean_ratio: f64,
    pub ratio_std: f64,
    pub theoretical_bound: f64,
    /// `violation_rate ≤ bound + 3·√(bound / T)`.
    pub bound_satisfied: bool,
}

impl McReport {
    pub fn ratio_stderr(&self) -> f64 {
        self.ratio_std / (self.trials as f64).sqrt()
    }

    /// Whether `|mean_ratio − 1| ≤ k · stderr`.
    pub fn mean_within(&self, k: f64) -> bool {
        (self.mean_ratio - 1.0).abs() <= k * self.ratio_stderr()
    }

    pub fn allowed_rate(&self) -> f64 {
        allowed_rate(self.theoretical_bound, self.trials)
    }
}

fn allowed_rate(bound: f64, trials: usize) -> f64 {
    bound + 3.0 * (bound / trials as f64).sqrt()
}

/// Per-trial observation: the squared-norm ratio and the deviation that is
/// compared against each `ε`.
struct TrialOutcome {
    ratio: f64,
    deviation: f64,
}

fn check_common(m: usize, n: usize, trials: usize, epsilons: &[f64]) -> Result<()> {
    if m == 0 || n == 0 || trials == 0 {
        return Err(Error::invalid("m, n and trials must be positive"));
    }
    if epsilons.is_empty() {
        return Err(Error::invalid("at least one epsilon is required"));
    }
    for &eps in epsilons {
        check_epsilon(eps)?;
    }
    Ok(())
}

fn draw_input(draws: &mut Draws, n: usize, law: InputLaw) -> Vec<f64> {
    match law {
        InputLaw::BasisVector => {
            let mut u = vec![0.0; n];
            u[0] = 1.0;
            u
        }
        InputLaw::Gaussian => loop {
            let mut u = vec![0.0; n];
            draws.fill_normal(&mut u, 1.0);
            if norm(&u) > 0.0 {
                break u;
            }
        },
    }
}

fn draw_unit(draws: &mut Draws, n: usize) -> Vec<f64> {
    let mut u = draw_input(draws, n, InputLaw::Gaussian);
    let len = norm(&u);
    u.iter_mut().for_each(|v| *v /= len);
    u
}

/// One coordinate `(Ru)_i` with `R_i· ~ N(0, σ²)` drawn densely.
#[inline]
fn dense_coordinate(draws: &mut Draws, u: &[f64], sigma: f64) -> f64 {
    let mut acc = 0.0;
    for &uj in u {
        acc += draws.normal() * uj;
    }
    sigma * acc
}

fn run_trials<F>(trials: usize, rng: RngState, trial: F) -> Vec<TrialOutcome>
where
    F: Fn(&mut Draws) -> TrialOutcome + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| trial(&mut rng.derive(t as u64).draws()))
        .collect()
}

fn summarize(outcomes: &[TrialOutcome], epsilons: &[f64], bound: impl Fn(f64) -> Result<f64>) -> Result<Vec<McReport>> {
    let trials = outcomes.len();
    let ratios = super::Stats::of(outcomes.iter().map(|o| o.ratio));
    epsilons
        .iter()
        .map(|&eps| {
            let violation_count = outcomes.iter().filter(|o| o.deviation > eps).count();
            let violation_rate = violation_count as f64 / trials as f64;
            let theoretical_bound = bound(eps)?;
            Ok(McReport {
                trials,
                epsilon: eps,
                violation_count,
                violation_rate,
                mean_ratio: ratios.mean,
                ratio_std: ratios.std,
                theoretical_bound,
                bound_satisfied: violation_rate <= allowed_rate(theoretical_bound, trials),
            })
        })
        .collect()
}

/// `v = ReLU(Ru)` with `R_ij ~ N(0, 2/m)`; one report per `ε`, all sharing
/// the same trials. Violations are `|‖v‖² − ‖u‖²| > ε‖u‖²`, checked against
/// `2·exp(−m φ(ε))`.
pub fn mc_forward_layer_with(
    m: usize,
    n: usize,
    epsilons: &[f64],
    trials: usize,
    options: McOptions,
    rng: RngState,
) -> Result<Vec<McReport>> {
    check_common(m, n, trials, epsilons)?;
    let sigma = (2.0 / m as f64).sqrt();
    let outcomes = run_trials(trials, rng, |draws| {
        let u = draw_input(draws, n, options.input);
        let u_sq = dot(&u, &u);
        let v_sq: f64 = match options.projection {
            Projection::Dense => (0..m)
                .map(|_| dense_coordinate(draws, &u, sigma).max(0.0).powi(2))
                .sum(),
            Projection::Marginal => {
                let scale = sigma * u_sq.sqrt();
                (0..m).map(|_| (scale * draws.normal()).max(0.0).powi(2)).sum()
            }
        };
        let ratio = v_sq / u_sq;
        TrialOutcome {
            ratio,
            deviation: (ratio - 1.0).abs(),
        }
    });
    summarize(&outcomes, epsilons, |eps| {
        Ok(bounds::single_layer_failure_prob(m, eps)?.probability)
    })
}

pub fn mc_forward_layer(m: usize, n: usize, epsilon: f64, trials: usize, rng: RngState) -> Result<McReport> {
    Ok(mc_forward_layer_with(m, n, &[epsilon], trials, McOptions::default(), rng)?.remove(0))
}

/// `v = (Ru) ⊙ z` with `R_ij ~ N(0, 1/(pm))` and `z_i ~ Bernoulli(p)`.
///
/// The concentration bound `2·exp(−m φ(ε))` is only established for
/// `p = 0.5`; for other `p` the report carries a bound of 1.
pub fn mc_backward_layer_with(
    m: usize,
    n: usize,
    p: f64,
    epsilons: &[f64],
    trials: usize,
    options: McOptions,
    rng: RngState,
) -> Result<Vec<McReport>> {
    check_common(m, n, trials, epsilons)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("keep probability must lie in (0, 1], got {p}")));
    }
    let sigma = (1.0 / (p * m as f64)).sqrt();
    let outcomes = run_trials(trials, rng, |draws| {
        let u = draw_input(draws, n, options.input);
        let u_sq = dot(&u, &u);
        let scale = sigma * u_sq.sqrt();
        let mut v_sq = 0.0;
        for _ in 0..m {
            if !draws.bernoulli(p) {
                continue;
            }
            let coord = match options.projection {
                Projection::Dense => dense_coordinate(draws, &u, sigma),
                Projection::Marginal => scale * draws.normal(),
            };
            v_sq += coord * coord;
        }
        let ratio = v_sq / u_sq;
        TrialOutcome {
            ratio,
            deviation: (ratio - 1.0).abs(),
        }
    });
    summarize(&outcomes, epsilons, |eps| {
        if p == 0.5 {
            Ok(bounds::single_layer_failure_prob(m, eps)?.probability)
        } else {
            Ok(1.0)
        }
    })
}

pub fn mc_backward_layer(m: usize, n: usize, p: f64, epsilon: f64, trials: usize, rng: RngState) -> Result<McReport> {
    Ok(mc_backward_layer_with(m, n, p, &[epsilon], trials, McOptions::default(), rng)?.remove(0))
}

/// Masked inner products `v_k = (Ru_k) ⊙ z` with shared `R_ij ~ N(0, 1/(0.5m))`
/// and shared `z_i ~ Bernoulli(0.5)`. Violations are
/// `|⟨v₁,v₂⟩ − ⟨u₁,u₂⟩| > ε`, checked against `4·exp(−m φ(ε))`. The
/// reported ratio is `‖v₁‖² / ‖u₁‖²`.
pub fn mc_masked_inner_product_with(
    m: usize,
    n: usize,
    trials: usize,
    epsilons: &[f64],
    options: McOptions,
    rng: RngState,
) -> Result<Vec<McReport>> {
    check_common(m, n, trials, epsilons)?;
    let sigma = (2.0 / m as f64).sqrt();
    let outcomes = run_trials(trials, rng, |draws| {
        let u1 = draw_unit(draws, n);
        let u2 = match options.pair {
            PairLaw::Independent => draw_unit(draws, n),
            PairLaw::Identical => u1.clone(),
            PairLaw::SecondZero => vec![0.0; n],
        };
        let target = dot(&u1, &u2);
        let (n1, n2) = (norm(&u1), norm(&u2));
        // Orthogonal decomposition u₂ = c·û₁ + r·ê₂ for the marginal route.
        let c = target / n1;
        let r = (n2 * n2 - c * c).max(0.0).sqrt();
        let mut inner = 0.0;
        let mut v1_sq = 0.0;
        for _ in 0..m {
            if !draws.bernoulli(0.5) {
                continue;
            }
            let (a, b) = match options.projection {
                Projection::Dense => {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for (x, y) in u1.iter().zip(&u2) {
                        let g = draws.normal();
                        a += g * x;
                        b += g * y;
                    }
                    (sigma * a, sigma * b)
                }
                Projection::Marginal => {
                    let g1 = draws.normal();
                    let g2 = draws.normal();
                    (sigma * n1 * g1, sigma * (c * g1 + r * g2))
                }
            };
            inner += a * b;
            v1_sq += a * a;
        }
        TrialOutcome {
            ratio: v1_sq / (n1 * n1),
            deviation: (inner - target).abs(),
        }
    });
    summarize(&outcomes, epsilons, |eps| {
        Ok((4.0 * (-(m as f64) * bounds::rate_phi(eps)?).exp()).min(1.0))
    })
}

pub fn mc_masked_inner_product(m: usize, n: usize, trials: usize, epsilon: f64, rng: RngState) -> Result<McReport> {
    Ok(mc_masked_inner_product_with(m, n, trials, &[epsilon], McOptions::default(), rng)?.remove(0))
}

/// Fraction of freshly initialized networks in which each unit is active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateFrequencies {
    pub trials: usize,
    /// `per_layer[l][i]` is the frequency of `a^{l+1}_i > 0`.
    pub per_layer: Vec<Vec<f64>>,
}

impl GateFrequencies {
    pub fn all(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_layer.iter().flatten().copied()
    }

    /// Largest `|freq − 0.5|` over all units.
    pub fn max_deviation(&self) -> f64 {
        self.all().map(|f| (f - 0.5).abs()).fold(0.0, f64::max)
    }
}

/// Re-initializes the network `trials` times (He, fan-out) and counts how
/// often each pre-activation is strictly positive for the fixed `input`.
pub fn mc_gate_frequency(
    config: &NetworkConfig,
    input: &Vector,
    trials: usize,
    rng: RngState,
) -> Result<GateFrequencies> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    if input.dim() != config.widths[0] {
        return Err(Error::DimensionMismatch {
            context: "gate input",
            expected: config.widths[0],
            actual: input.dim(),
        });
    }
    let hidden = &config.widths[1..];
    let zero_counts = || hidden.iter().map(|&w| vec![0usize; w]).collect::<Vec<_>>();
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec<usize>>> {
            let net = init_network(config, InitScheme::HeFanOut, rng.derive(t as u64))?;
            let trace = forward(&net, input)?;
            Ok(trace
                .preacts
                .iter()
                .map(|a| a.as_slice().iter().map(|&v| usize::from(v > 0.0)).collect())
                .collect())
        })
        .try_reduce(zero_counts, |mut acc, c| {
            for (al, cl) in acc.iter_mut().zip(c) {
                al.iter_mut().zip(cl).for_each(|(x, y)| *x += y);
            }
            Ok(acc)
        })?;
    Ok(GateFrequencies {
        trials,
        per_layer: counts
            .into_iter()
            .map(|layer| layer.into_iter().map(|c| c as f64 / trials as f64).collect())
            .collect(),
    })
}
