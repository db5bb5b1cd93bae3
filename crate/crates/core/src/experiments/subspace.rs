//! Norm preservation uniformly over inputs drawn from a low-dimensional subspace.

use rayon::prelude::*;

use super::{chunk_rows, ExperimentConfig, SummaryRow, SummaryTable};
use crate::bounds::subspace_min_width;
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_basis, Matrix, RngState};
use crate::network::{forward_sq_norms, init_network, NetworkConfig, ReluNet};

/// Extremes of `‖h^l‖²/‖x‖²` over all subspace inputs for one hidden width.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceWidth {
    pub width: usize,
    /// Per layer, layer 1 first.
    pub min_sq_ratio: Vec<f64>,
    pub max_sq_ratio: Vec<f64>,
    /// Inputs outside `[(1−ε)^l, (1+ε)^l]` at layer `l`.
    pub violations_per_layer: Vec<usize>,
    /// Inputs outside the band at one or more layers.
    pub violations: usize,
}

/// Result of [`run_subspace_sweep`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceSweep {
    pub subspace_dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub depth: usize,
    pub inputs: usize,
    /// Width the union bound over the subspace grid asks for.
    pub formula_width: usize,
    pub per_width: Vec<SubspaceWidth>,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl SubspaceSweep {
    /// `(1 − ε)^l` and `(1 + ε)^l`.
    pub fn band(&self, layer: usize) -> (f64, f64) {
        let l = layer as i32;
        ((1.0 - self.epsilon).powi(l), (1.0 + self.epsilon).powi(l))
    }

    pub fn to_table(&self) -> SummaryTable {
        let mut t = SummaryTable::new("subspace", self.seed, self.config.clone());
        let n = self.inputs;
        for w in &self.per_width {
            let series = format!("n{}", w.width);
            for l in 1..=self.depth {
                t.push(SummaryRow::point(
                    format!("sq_ratio_max/{series}"),
                    l,
                    w.max_sq_ratio[l - 1],
                    n,
                ));
                t.push(SummaryRow::point(
                    format!("sq_ratio_min/{series}"),
                    l,
                    w.min_sq_ratio[l - 1],
                    n,
                ));
            }
            for l in 1..=self.depth {
                t.push(SummaryRow::point(
                    format!("violations/{series}"),
                    l,
                    w.violations_per_layer[l - 1] as f64,
                    n,
                ));
            }
        }
        for l in 1..=self.depth {
            let (lo, hi) = self.band(l);
            t.push(SummaryRow::point("sq_ratio_max/band_upper", l, hi, n));
            t.push(SummaryRow::point("sq_ratio_min/band_lower", l, lo, n));
        }
        t.push(SummaryRow::point(
            "formula_width/all",
            self.subspace_dim,
            self.formula_width as f64,
            1,
        ));
        t
    }
}

/// Orthonormal basis of the input subspace used by [`run_subspace_sweep`].
pub fn subspace_basis(config: &ExperimentConfig) -> Result<Matrix> {
    let d = config
        .subspace_dim
        .ok_or_else(|| Error::invalid("subspace experiment needs subspace_dim"))?;
    orthonormal_basis(config.input_dim, d, config.rng().derive_tag("basis"))
}

fn subspace_chunk(basis: &Matrix, rng: RngState, start: usize, end: usize) -> Result<Matrix> {
    let d = basis.cols();
    let mut z = Matrix::zeros(end - start, d);
    for (r, i) in (start..end).enumerate() {
        rng.derive(i as u64).draws().fill_normal(z.row_mut(r), 1.0);
    }
    z.matmul_t(basis)
}

struct Extremes {
    min: Vec<f64>,
    max: Vec<f64>,
    per_layer: Vec<usize>,
    any: usize,
}

impl Extremes {
    fn empty(depth: usize) -> Self {
        Self {
            min: vec![f64::INFINITY; depth],
            max: vec![f64::NEG_INFINITY; depth],
            per_layer: vec![0; depth],
            any: 0,
        }
    }

    fn merge(mut self, other: Extremes) -> Self {
        for l in 0..self.min.len() {
            self.min[l] = self.min[l].min(other.min[l]);
            self.max[l] = self.max[l].max(other.max[l]);
            self.per_layer[l] += other.per_layer[l];
        }
        self.any += other.any;
        self
    }
}

fn sweep_width(
    net: &ReluNet,
    basis: &Matrix,
    input_rng: RngState,
    inputs: usize,
    epsilon: f64,
) -> Result<SubspaceWidth> {
    let depth = net.depth();
    let width = net.widths().into_iter().skip(1).max().unwrap_or(1);
    let chunk = chunk_rows(width.max(net.input_dim()));
    let starts: Vec<usize> = (0..inputs).step_by(chunk).collect();
    let ext = starts
        .par_iter()
        .map(|&start| -> Result<Extremes> {
            let end = (start + chunk).min(inputs);
            let x = subspace_chunk(basis, input_rng, start, end)?;
            let sq = forward_sq_norms(net, &x)?;
            let mut e = Extremes::empty(depth);
            for (s, row) in x.row_iter().enumerate() {
                let x_sq: f64 = row.iter().map(|v| v * v).sum();
                let mut bad = false;
                for l in 0..depth {
                    let r = sq.get(s, l) / x_sq;
                    e.min[l] = e.min[l].min(r);
                    e.max[l] = e.max[l].max(r);
                    let power = (l + 1) as i32;
                    if r < (1.0 - epsilon).powi(power) || r > (1.0 + epsilon).powi(power) {
                        e.per_layer[l] += 1;
                        bad = true;
                    }
                }
                e.any += usize::from(bad);
            }
            Ok(e)
        })
        .try_reduce(|| Extremes::empty(depth), |a, b| Ok(a.merge(b)))?;
    Ok(SubspaceWidth {
        width,
        min_sq_ratio: ext.min,
        max_sq_ratio: ext.max,
        violations_per_layer: ext.per_layer,
        violations: ext.any,
    })
}

/// Pushes `num_samples` inputs `x = B z`, `z ~ N(0, I_d)`, through He nets of
/// each configured width and records the extremes of the squared norm ratio
/// per layer, together with band violations for `ε = config.epsilon[0]`.
pub fn run_subspace_sweep(config: &ExperimentConfig) -> Result<SubspaceSweep> {
    config.validate()?;
    let d = config
        .subspace_dim
        .ok_or_else(|| Error::invalid("subspace experiment needs subspace_dim"))?;
    let epsilon = *config
        .epsilon
        .first()
        .ok_or_else(|| Error::invalid("subspace experiment needs an epsilon"))?;
    let formula_width = subspace_min_width(d, epsilon, config.delta, config.depth)?;
    let basis = subspace_basis(config)?;
    let rng = config.rng();
    let input_rng = rng.derive_tag("subspace-input");
    let scheme = config.schemes[0];
    let mut per_width = Vec::with_capacity(config.widths.len());
    for spec in &config.widths {
        let mut widths = vec![config.input_dim];
        widths.extend(spec.hidden_widths(config.depth, rng.derive_tag("architecture")));
        let net_config = NetworkConfig::new(widths, config.num_classes, config.seed)?;
        let net = init_network(&net_config, scheme, rng.derive_tag("network"))?;
        per_width.push(sweep_width(&net, &basis, input_rng, config.num_samples, epsilon)?);
    }
    Ok(SubspaceSweep {
        subspace_dim: d,
        epsilon,
        delta: config.delta,
        depth: config.depth,
        inputs: config.num_samples,
        formula_width,
        per_width,
        seed: config.seed,
        config: config.to_json(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{Preset, WidthSpec};

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            input_dim: 40,
            num_samples: 300,
            widths: vec![WidthSpec::Uniform(30), WidthSpec::Uniform(800)],
            ..ExperimentConfig::subspace(Preset::Desk)
        }
    }

    #[test]
    fn inputs_lie_in_the_subspace() {
        let cfg = small();
        let b = subspace_basis(&cfg).unwrap();
        let x = subspace_chunk(&b, RngState::from_seed(1), 0, 10).unwrap();
        // Projecting onto the basis and back recovers x.
        let coords = x.matmul(&b).unwrap();
        let back = coords.matmul_t(&b).unwrap();
        for (a, c) in x.as_slice().iter().zip(back.as_slice()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn wider_nets_stay_closer_to_one() {
        let sweep = run_subspace_sweep(&small()).unwrap();
        assert_eq!(sweep.formula_width, 9_189);
        let narrow = &sweep.per_width[0];
        let wide = &sweep.per_width[1];
        assert!(wide.max_sq_ratio[0] - wide.min_sq_ratio[0] < narrow.max_sq_ratio[0] - narrow.min_sq_ratio[0]);
        for w in &sweep.per_width {
            for l in 0..3 {
                assert!(w.min_sq_ratio[l] <= w.max_sq_ratio[l]);
            }
            assert!(w.violations <= w.violations_per_layer.iter().sum());
        }
        let t = sweep.to_table();
        assert_eq!(t.get("formula_width/all", 5).unwrap().mean, 9_189.0);
        assert_eq!(t.series("violations/n800").len(), 3);
    }

    #[test]
    fn requires_a_subspace_dimension() {
        let mut cfg = small();
        cfg.subspace_dim = None;
        assert!(run_subspace_sweep(&cfg).is_err());
        cfg.subspace_dim = Some(41);
        assert!(run_subspace_sweep(&cfg).is_err());
    }
}
