//! Python bindings: bounds, Monte Carlo checks, networks and experiments.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use normlab::bounds::{self, BoundResult};
use normlab::cli::{format_csv, format_json};
use normlab::experiments::{self, ExperimentConfig, McOptions, McReport, Preset, Projection, SummaryTable, WidthSpec};
use normlab::linalg::{RngState, Vector};
use normlab::network::{self, InitScheme, NetworkConfig, ReluNet};

fn to_py(err: normlab::Error) -> PyErr {
    match err {
        normlab::Error::Io(e) => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn bound_dict<'py>(py: Python<'py>, r: BoundResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("probability", r.probability)?;
    d.set_item("raw", r.raw)?;
    d.set_item("vacuous", r.vacuous)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &McReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("trials", r.trials)?;
    d.set_item("epsilon", r.epsilon)?;
    d.set_item("violation_count", r.violation_count)?;
    d.set_item("violation_rate", r.violation_rate)?;
    d.set_item("mean_ratio", r.mean_ratio)?;
    d.set_item("ratio_std", r.ratio_std)?;
    d.set_item("theoretical_bound", r.theoretical_bound)?;
    d.set_item("bound_satisfied", r.bound_satisfied)?;
    Ok(d)
}

#[pyfunction]
fn rate_phi(epsilon: f64) -> PyResult<f64> {
    bounds::rate_phi(epsilon).map_err(to_py)
}

/// `min(1, 2·exp(−m φ(ε)))` plus the raw value and a vacuity flag.
#[pyfunction]
fn single_layer_failure_prob(py: Python<'_>, m: usize, epsilon: f64) -> PyResult<Bound<'_, PyDict>> {
    bound_dict(py, bounds::single_layer_failure_prob(m, epsilon).map_err(to_py)?)
}

#[pyfunction]
fn deep_forward_failure_prob(
    py: Python<'_>,
    widths: Vec<usize>,
    n_samples: usize,
    epsilon: f64,
) -> PyResult<Bound<'_, PyDict>> {
    bound_dict(
        py,
        bounds::deep_forward_failure_prob(&widths, n_samples, epsilon).map_err(to_py)?,
    )
}

#[pyfunction]
fn gradient_failure_prob(
    py: Python<'_>,
    n: usize,
    depth: usize,
    n_samples: usize,
    epsilon: f64,
) -> PyResult<Bound<'_, PyDict>> {
    bound_dict(
        py,
        bounds::gradient_failure_prob(n, depth, n_samples, epsilon).map_err(to_py)?,
    )
}

#[pyfunction]
#[pyo3(signature = (m, delta, multiplier = 2.0))]
fn solve_epsilon(m: usize, delta: f64, multiplier: f64) -> PyResult<f64> {
    bounds::solve_epsilon(m, delta, multiplier).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (d, epsilon, delta, depth = 1))]
fn subspace_min_width(d: usize, epsilon: f64, delta: f64, depth: usize) -> PyResult<usize> {
    bounds::subspace_min_width(d, epsilon, delta, depth).map_err(to_py)
}

fn options(sampler: &str) -> PyResult<McOptions> {
    let projection = match sampler {
        "dense" => Projection::Dense,
        "marginal" => Projection::Marginal,
        other => return Err(PyValueError::new_err(format!("unknown sampler `{other}`"))),
    };
    Ok(McOptions {
        projection,
        ..McOptions::default()
    })
}

fn reports<'py>(py: Python<'py>, rs: Vec<McReport>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rs.iter().map(|r| report_dict(py, r)).collect()
}

/// One report per epsilon for `ReLU(Ru)`, `R_ij ~ N(0, 2/m)`.
#[pyfunction]
#[pyo3(signature = (m, n, epsilons, trials, seed = 0, sampler = "dense"))]
fn mc_forward_layer<'py>(
    py: Python<'py>,
    m: usize,
    n: usize,
    epsilons: Vec<f64>,
    trials: usize,
    seed: u64,
    sampler: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = options(sampler)?;
    let rs = py
        .allow_threads(|| experiments::mc_forward_layer_with(m, n, &epsilons, trials, opts, RngState::from_seed(seed)))
        .map_err(to_py)?;
    reports(py, rs)
}

/// One report per epsilon for `(Ru) ⊙ z`, `z_i ~ Bernoulli(p)`.
#[pyfunction]
#[pyo3(signature = (m, n, epsilons, trials, p = 0.5, seed = 0, sampler = "dense"))]
#[allow(clippy::too_many_arguments)]
fn mc_backward_layer<'py>(
    py: Python<'py>,
    m: usize,
    n: usize,
    epsilons: Vec<f64>,
    trials: usize,
    p: f64,
    seed: u64,
    sampler: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = options(sampler)?;
    let rs = py
        .allow_threads(|| {
            experiments::mc_backward_layer_with(m, n, p, &epsilons, trials, opts, RngState::from_seed(seed))
        })
        .map_err(to_py)?;
    reports(py, rs)
}

#[pyfunction]
#[pyo3(signature = (m, n, epsilons, trials, seed = 0, sampler = "dense"))]
fn mc_masked_inner_product<'py>(
    py: Python<'py>,
    m: usize,
    n: usize,
    epsilons: Vec<f64>,
    trials: usize,
    seed: u64,
    sampler: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let opts = options(sampler)?;
    let rs = py
        .allow_threads(|| {
            experiments::mc_masked_inner_product_with(m, n, trials, &epsilons, opts, RngState::from_seed(seed))
        })
        .map_err(to_py)?;
    reports(py, rs)
}

/// A bias-free ReLU network with a linear softmax head.
#[pyclass(name = "Network", module = "normlab_py")]
struct PyNetwork {
    inner: ReluNet,
}

#[pymethods]
impl PyNetwork {
    /// `widths = [n_0, n_1, …, n_L]`; `init` is `he`, `he-fanin` or `glorot`.
    #[new]
    #[pyo3(signature = (widths, num_classes, seed = 0, init = "he"))]
    fn new(widths: Vec<usize>, num_classes: usize, seed: u64, init: &str) -> PyResult<Self> {
        let scheme: InitScheme = init.parse().map_err(to_py)?;
        let config = NetworkConfig::new(widths, num_classes, seed).map_err(to_py)?;
        Ok(Self {
            inner: ReluNet::init(&config, scheme).map_err(to_py)?,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    /// Activations `[h^1, …, h^L]` and the logits.
    fn forward(&self, x: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let x = Vector::new(x).map_err(to_py)?;
        let t = network::forward(&self.inner, &x).map_err(to_py)?;
        Ok((
            t.acts.into_iter().map(Vector::into_inner).collect(),
            t.logits.into_inner(),
        ))
    }

    fn loss(&self, x: Vec<f64>, label: usize) -> PyResult<f64> {
        let x = Vector::new(x).map_err(to_py)?;
        network::loss(&self.inner, &x, label).map_err(to_py)
    }

    /// Per-layer `(‖h^l‖/‖x‖, ‖∂ℓ/∂W^l‖_F/(‖δ‖‖x‖))`.
    fn norm_ratios(&self, x: Vec<f64>, label: usize) -> PyResult<Vec<(f64, f64)>> {
        let x = Vector::new(x).map_err(to_py)?;
        let (trace, grads) = network::gradients(&self.inner, &x, label).map_err(to_py)?;
        let ratios = network::norm_ratios(&trace, &grads).map_err(to_py)?;
        Ok(ratios.into_iter().map(|r| (r.act, r.grad)).collect())
    }

    /// `∂ℓ/∂W^l` for every layer, as nested lists.
    fn weight_gradients(&self, x: Vec<f64>, label: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let x = Vector::new(x).map_err(to_py)?;
        let (_, grads) = network::gradients(&self.inner, &x, label).map_err(to_py)?;
        Ok(grads
            .dw
            .iter()
            .map(|m| m.row_iter().map(<[f64]>::to_vec).collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(widths={:?}, num_classes={})",
            self.inner.widths(),
            self.inner.num_classes()
        )
    }
}

fn experiment_config(name: &str, preset: Preset) -> PyResult<ExperimentConfig> {
    Ok(match name {
        "fig1" | "norm_per_layer" => ExperimentConfig::norm_per_layer(preset),
        "fig2" | "bound_tightness" => ExperimentConfig::bound_tightness(preset),
        "fig3" | "width_variation" => ExperimentConfig::width_variation(preset),
        "subspace" => ExperimentConfig::subspace(preset),
        other => return Err(PyValueError::new_err(format!("unknown experiment `{other}`"))),
    })
}

/// Runs a replication experiment and returns its summary table as CSV (or
/// JSON with `format="json"`). `widths` replaces the swept hidden widths;
/// for `fig3` they are the spreads around the base width.
#[pyfunction]
#[pyo3(signature = (name, preset = "desk", seed = 0, samples = None, depth = None, widths = None, format = "csv"))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    name: &str,
    preset: &str,
    seed: u64,
    samples: Option<usize>,
    depth: Option<usize>,
    widths: Option<Vec<usize>>,
    format: &str,
) -> PyResult<String> {
    let mut config = experiment_config(name, preset.parse().map_err(to_py)?)?;
    config.seed = seed;
    if let Some(s) = samples {
        config.num_samples = s;
    }
    if let Some(d) = depth {
        config.depth = d;
    }
    let jitter_base = config.widths.iter().find_map(|w| match w {
        WidthSpec::Jitter { base, .. } => Some(*base),
        _ => None,
    });
    if let Some(ws) = widths {
        config.widths = ws
            .into_iter()
            .map(|w| match jitter_base {
                Some(base) => WidthSpec::Jitter { base, spread: w },
                None => WidthSpec::Uniform(w),
            })
            .collect();
    }
    let kind = name.to_string();
    let table: SummaryTable = py
        .allow_threads(move || -> normlab::Result<SummaryTable> {
            Ok(match kind.as_str() {
                "fig1" | "norm_per_layer" => experiments::run_norm_per_layer(&config)?.combined(),
                "fig2" | "bound_tightness" => experiments::run_bound_tightness(&config)?,
                "fig3" | "width_variation" => experiments::run_width_variation(&config)?,
                _ => experiments::run_subspace_sweep(&config)?.to_table(),
            })
        })
        .map_err(to_py)?;
    match format {
        "csv" => format_csv(&table).map_err(to_py),
        "json" => format_json(&table).map_err(to_py),
        other => Err(PyValueError::new_err(format!("unknown format `{other}`"))),
    }
}

#[pymodule]
fn normlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rate_phi, m)?)?;
    m.add_function(wrap_pyfunction!(single_layer_failure_prob, m)?)?;
    m.add_function(wrap_pyfunction!(deep_forward_failure_prob, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_failure_prob, m)?)?;
    m.add_function(wrap_pyfunction!(solve_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(subspace_min_width, m)?)?;
    m.add_function(wrap_pyfunction!(mc_forward_layer, m)?)?;
    m.add_function(wrap_pyfunction!(mc_backward_layer, m)?)?;
    m.add_function(wrap_pyfunction!(mc_masked_inner_product, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyNetwork>()?;
    Ok(())
}
