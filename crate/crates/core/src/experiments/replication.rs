//! Norm-ratio measurements on whole networks over a random dataset.

use rayon::prelude::*;

use super::{chunk_rows, ExperimentConfig, Stats, SummaryRow, SummaryTable, WidthSpec};
use crate::bounds::solve_epsilon;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState};
use crate::network::{
    backward_batch, batch_norm_ratios, forward_batch, forward_sq_norms, head_loss_grad_batch, init_network, InitScheme,
    NetworkConfig, ReluNet,
};

/// `count` inputs `x ~ N(0, I_{input_dim})` with labels uniform over the
/// classes. Sample `i` is drawn from `rng.derive(i)`, so a larger dataset
/// extends a smaller one.
pub fn dataset(input_dim: usize, num_classes: usize, count: usize, rng: RngState) -> Result<(Matrix, Vec<usize>)> {
    if input_dim == 0 || num_classes == 0 {
        return Err(Error::invalid("input_dim and num_classes must be positive"));
    }
    let mut inputs = Matrix::zeros(count, input_dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut draws = rng.derive(i as u64).draws();
        draws.fill_normal(inputs.row_mut(i), 1.0);
        labels.push(draws.below(num_classes));
    }
    Ok((inputs, labels))
}

/// Per-sample, per-layer norm ratios (`[sample][layer]`, layer 1 first).
///
/// A gradient ratio is NaN when the sample's `δ` vanished; statistics skip it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatioSamples {
    pub act: Vec<Vec<f64>>,
    pub grad: Vec<Vec<f64>>,
}

impl RatioSamples {
    pub fn len(&self) -> usize {
        self.act.len()
    }

    pub fn is_empty(&self) -> bool {
        self.act.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.act.first().map_or(0, Vec::len)
    }

    pub fn act_stats(&self, layer: usize) -> Stats {
        Stats::of(self.act.iter().map(|r| r[layer - 1]).filter(|v| v.is_finite()))
    }

    pub fn grad_stats(&self, layer: usize) -> Stats {
        Stats::of(self.grad.iter().map(|r| r[layer - 1]).filter(|v| v.is_finite()))
    }

    /// Gradient ratios pooled over samples and layers.
    pub fn pooled_grad_stats(&self) -> Stats {
        Stats::of(self.grad.iter().flatten().copied().filter(|v| v.is_finite()))
    }

    /// Largest single-layer squared distortion `|‖h^l‖²/‖h^{l-1}‖² − 1|`
    /// over all samples and layers.
    pub fn max_step_distortion(&self) -> f64 {
        self.act
            .iter()
            .flat_map(|row| {
                std::iter::once(1.0)
                    .chain(row.iter().copied())
                    .collect::<Vec<_>>()
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| ((w[1] / w[0]).powi(2) - 1.0).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Checks `(1 − ε̂)^l ≤ ‖h^l‖²/‖x‖² ≤ (1 + ε̂)^l` for every sample and
    /// layer, with `ε̂` from [`Self::max_step_distortion`] and a relative
    /// slack `rel_tol` for rounding.
    pub fn sandwich_holds(&self, rel_tol: f64) -> bool {
        let eps = self.max_step_distortion();
        self.act.iter().all(|row| {
            row.iter().enumerate().all(|(l, &r)| {
                let sq = r * r;
                let power = (l + 1) as i32;
                let lo = (1.0 - eps).max(0.0).powi(power);
                let hi = (1.0 + eps).powi(power);
                sq >= lo * (1.0 - rel_tol) && sq <= hi * (1.0 + rel_tol)
            })
        })
    }

    fn append(&mut self, other: RatioSamples) {
        self.act.extend(other.act);
        self.grad.extend(other.grad);
    }
}

/// Runs forward, cross-entropy head and backward passes over the dataset in
/// fixed-size chunks and collects norm ratios in sample order.
pub fn measure_ratios(net: &ReluNet, inputs: &Matrix, labels: &[usize]) -> Result<RatioSamples> {
    if inputs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "dataset labels",
            expected: inputs.rows(),
            actual: labels.len(),
        });
    }
    let max_width = net.widths().into_iter().max().unwrap_or(1);
    let chunk = chunk_rows(max_width);
    let starts: Vec<usize> = (0..inputs.rows()).step_by(chunk).collect();
    let parts = starts
        .par_iter()
        .map(|&start| -> Result<RatioSamples> {
            let end = (start + chunk).min(inputs.rows());
            let rows: Vec<&[f64]> = (start..end).map(|i| inputs.row(i)).collect();
            let batch = Matrix::from_rows(&rows)?;
            let trace = forward_batch(net, &batch)?;
            let (_, deltas) = head_loss_grad_batch(&trace, net, &labels[start..end])?;
            let da = backward_batch(net, &trace, &deltas)?;
            let mut part = RatioSamples::default();
            for (s, ratios) in batch_norm_ratios(&trace, &da).into_iter().enumerate() {
                match ratios {
                    Some(r) => {
                        part.act.push(r.iter().map(|x| x.act).collect());
                        part.grad.push(r.iter().map(|x| x.grad).collect());
                    }
                    None => {
                        let x_norm = crate::linalg::norm(trace.inputs.row(s));
                        part.act.push(
                            (1..=net.depth())
                                .map(|l| crate::linalg::norm(trace.act(l).row(s)) / x_norm)
                                .collect(),
                        );
                        part.grad.push(vec![f64::NAN; net.depth()]);
                    }
                }
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = RatioSamples::default();
    for p in parts {
        out.append(p);
    }
    Ok(out)
}

fn build_net(config: &ExperimentConfig, spec: &WidthSpec, depth: usize, scheme: InitScheme) -> Result<ReluNet> {
    let rng = config.rng();
    let mut widths = vec![config.input_dim];
    widths.extend(spec.hidden_widths(depth, rng.derive_tag("architecture")));
    let net_config = NetworkConfig::new(widths, config.num_classes, config.seed)?;
    init_network(&net_config, scheme, rng.derive_tag("network"))
}

fn config_dataset(config: &ExperimentConfig) -> Result<(Matrix, Vec<usize>)> {
    dataset(
        config.input_dim,
        config.num_classes,
        config.num_samples,
        config.rng().derive_tag("data"),
    )
}

/// Output of [`run_norm_per_layer`].
#[derive(Clone, Debug)]
pub struct NormPerLayer {
    /// Rows `act_ratio/<scheme>_<width>` keyed by layer.
    pub act: SummaryTable,
    /// Rows `grad_ratio/<scheme>_<width>` keyed by layer.
    pub grad: SummaryTable,
    /// Raw ratios for every `(scheme, width)` setting, in table order.
    pub samples: Vec<(InitScheme, WidthSpec, RatioSamples)>,
}

impl NormPerLayer {
    /// Both tables as one, activation rows first.
    pub fn combined(&self) -> SummaryTable {
        let mut t = self.act.clone();
        t.name = "norm_per_layer".into();
        t.extend(self.grad.clone());
        t
    }
}

/// Per-layer `‖h^l‖/‖x‖` and `‖∂ℓ/∂W^l‖_F/(‖δ‖‖x‖)` for every init scheme
/// and width setting of the config.
pub fn run_norm_per_layer(config: &ExperimentConfig) -> Result<NormPerLayer> {
    config.validate()?;
    let (inputs, labels) = config_dataset(config)?;
    let mut act = SummaryTable::new("norm_per_layer_act", config.seed, config.to_json());
    let mut grad = SummaryTable::new("norm_per_layer_grad", config.seed, config.to_json());
    let mut samples = Vec::new();
    for &scheme in &config.schemes {
        for spec in &config.widths {
            let net = build_net(config, spec, config.depth, scheme)?;
            let ratios = measure_ratios(&net, &inputs, &labels)?;
            let series = format!("{}_{}", scheme.name(), spec.label());
            for l in 1..=config.depth {
                act.push(SummaryRow::new(format!("act_ratio/{series}"), l, ratios.act_stats(l)));
                grad.push(SummaryRow::new(format!("grad_ratio/{series}"), l, ratios.grad_stats(l)));
            }
            samples.push((scheme, spec.clone(), ratios));
        }
    }
    Ok(NormPerLayer { act, grad, samples })
}

/// Single-layer distortion against the width predicted for failure
/// probability `config.delta`, for every width setting.
///
/// Forward: a one-layer net, `|1 − ‖h^1‖/‖x‖|`. Backward: a two-layer net,
/// `|1 − ‖∂ℓ/∂W^1‖_F/(‖δ‖‖x‖)|`, which is the distortion of one masked
/// transposed layer. Squared-norm variants are emitted alongside; the
/// theoretical value is the `ε` of the squared-norm bound in both cases.
pub fn run_bound_tightness(config: &ExperimentConfig) -> Result<SummaryTable> {
    config.validate()?;
    let (inputs, labels) = config_dataset(config)?;
    let scheme = config.schemes[0];
    let n = config.num_samples;
    let mut table = SummaryTable::new("bound_tightness", config.seed, config.to_json());
    for spec in &config.widths {
        let width = spec.key();
        let theory = solve_epsilon(width, config.delta, 2.0)?;

        let fwd_net = build_net(config, &WidthSpec::Uniform(width), 1, scheme)?;
        let mut fwd = Vec::with_capacity(n);
        let mut fwd_sq = Vec::with_capacity(n);
        let chunk = chunk_rows(width.max(config.input_dim));
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let rows: Vec<&[f64]> = (start..end).map(|i| inputs.row(i)).collect();
            let batch = Matrix::from_rows(&rows)?;
            let sq = forward_sq_norms(&fwd_net, &batch)?;
            for (s, row) in batch.row_iter().enumerate() {
                let ratio_sq = sq.get(s, 0) / row.iter().map(|v| v * v).sum::<f64>();
                fwd.push((1.0 - ratio_sq.sqrt()).abs());
                fwd_sq.push((1.0 - ratio_sq).abs());
            }
        }

        let bwd_net = build_net(config, &WidthSpec::Uniform(width), 2, scheme)?;
        let ratios = measure_ratios(&bwd_net, &inputs, &labels)?;
        let bwd: Vec<f64> = ratios.grad.iter().map(|r| (1.0 - r[0]).abs()).collect();
        let bwd_sq: Vec<f64> = ratios.grad.iter().map(|r| (1.0 - r[0] * r[0]).abs()).collect();

        for (quantity, values) in [
            ("fwd_distortion", fwd),
            ("fwd_sq_distortion", fwd_sq),
            ("bwd_distortion", bwd),
            ("bwd_sq_distortion", bwd_sq),
        ] {
            let stats = Stats::of(values.into_iter().filter(|v| v.is_finite()));
            table.push(SummaryRow::new(format!("{quantity}/empirical"), width, stats));
            table.push(SummaryRow::point(format!("{quantity}/theory"), width, theory, n));
        }
    }
    Ok(table)
}

/// Gradient ratios of He-initialized nets whose layer widths are jittered.
///
/// Emits per-layer `grad_ratio/v<spread>` and `layer_width/v<spread>` rows,
/// plus `grad_ratio_pooled/all` rows keyed by the spread, pooling samples
/// and layers.
pub fn run_width_variation(config: &ExperimentConfig) -> Result<SummaryTable> {
    config.validate()?;
    let (inputs, labels) = config_dataset(config)?;
    let scheme = config.schemes[0];
    let mut table = SummaryTable::new("width_variation", config.seed, config.to_json());
    let mut pooled = Vec::new();
    for spec in &config.widths {
        let net = build_net(config, spec, config.depth, scheme)?;
        let ratios = measure_ratios(&net, &inputs, &labels)?;
        let label = spec.label();
        let widths = net.widths();
        for l in 1..=config.depth {
            table.push(SummaryRow::new(format!("grad_ratio/{label}"), l, ratios.grad_stats(l)));
        }
        for (l, &w) in widths.iter().enumerate().skip(1) {
            table.push(SummaryRow::point(format!("layer_width/{label}"), l, w as f64, 1));
        }
        pooled.push(SummaryRow::new(
            "grad_ratio_pooled/all",
            spec.key(),
            ratios.pooled_grad_stats(),
        ));
    }
    table.rows.extend(pooled);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Preset;

    fn tiny(widths: Vec<WidthSpec>, depth: usize) -> ExperimentConfig {
        ExperimentConfig {
            depth,
            input_dim: 30,
            num_classes: 5,
            num_samples: 40,
            widths,
            ..ExperimentConfig::norm_per_layer(Preset::Desk)
        }
    }

    #[test]
    fn dataset_prefix_stable() {
        let rng = RngState::from_seed(4);
        let (a, la) = dataset(8, 3, 10, rng).unwrap();
        let (b, lb) = dataset(8, 3, 4, rng).unwrap();
        assert_eq!(&a.as_slice()[..32], b.as_slice());
        assert_eq!(&la[..4], &lb[..]);
        assert!(la.iter().all(|&y| y < 3));
    }

    #[test]
    fn norm_per_layer_shape_and_determinism() {
        let cfg = tiny(vec![WidthSpec::Uniform(64), WidthSpec::Uniform(128)], 4);
        let a = run_norm_per_layer(&cfg).unwrap();
        assert_eq!(a.act.rows.len(), 2 * 2 * 4);
        assert_eq!(a.grad.rows.len(), 16);
        assert!(a.act.rows.iter().all(|r| r.std >= 0.0 && r.count == 40));
        let b = run_norm_per_layer(&cfg).unwrap();
        assert_eq!(a.combined(), b.combined());
        for (_, _, s) in &a.samples {
            assert!(s.sandwich_holds(1e-12));
        }
    }

    #[test]
    fn zero_spread_matches_uniform_width() {
        let mut uniform = tiny(vec![WidthSpec::Uniform(50)], 5);
        uniform.schemes = vec![InitScheme::HeFanOut];
        let mut jitter = uniform.clone();
        jitter.widths = vec![WidthSpec::Jitter { base: 50, spread: 0 }];
        let a = run_norm_per_layer(&uniform).unwrap();
        let b = run_width_variation(&jitter).unwrap();
        for l in 1..=5 {
            let x = a.grad.get("grad_ratio/he_n50", l).unwrap();
            let y = b.get("grad_ratio/v0", l).unwrap();
            assert_eq!((x.mean, x.std, x.count), (y.mean, y.std, y.count));
        }
    }

    #[test]
    fn bound_tightness_rows() {
        let cfg = ExperimentConfig {
            input_dim: 40,
            num_samples: 30,
            widths: vec![WidthSpec::Uniform(500), WidthSpec::Uniform(1000)],
            ..ExperimentConfig::bound_tightness(Preset::Desk)
        };
        let t = run_bound_tightness(&cfg).unwrap();
        assert_eq!(t.rows.len(), 2 * 8);
        let th = t.get("fwd_distortion/theory", 1000).unwrap().mean;
        assert!((th - 0.209_374_570_017_860_06).abs() < 1e-11);
        for w in [500, 1000] {
            let e = t.get("fwd_distortion/empirical", w).unwrap();
            assert!(e.mean < t.get("fwd_distortion/theory", w).unwrap().mean);
            assert!(t.get("bwd_distortion/empirical", w).unwrap().mean > 0.0);
        }
    }

    #[test]
    fn sandwich_detects_a_violation() {
        let s = RatioSamples {
            act: vec![vec![1.1, 1.1 * 1.1]],
            grad: vec![vec![1.0, 1.0]],
        };
        let eps = s.max_step_distortion();
        assert!((eps - (1.21 - 1.0)).abs() < 1e-12);
        assert!(s.sandwich_holds(1e-12));
        assert_eq!(RatioSamples::default().max_step_distortion(), 0.0);
    }
}
