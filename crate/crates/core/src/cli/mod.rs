//! The `normlab` command line.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for I/O
//! and other environment failures.

mod svg;
mod table_io;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use svg::{render_svg, PlotSpec};
pub use table_io::{format_csv, format_json, format_number, parse_csv, write_table, Format, OutputSpec, CSV_HEADER};

use crate::bounds::{
    deep_forward_failure_prob, gradient_failure_prob, single_layer_failure_prob, solve_epsilon, subspace_min_width,
    BoundResult,
};
use crate::error::{Error, Result};
use crate::experiments::{
    mc_backward_layer_with, mc_forward_layer_with, mc_gate_frequency, mc_masked_inner_product_with,
    run_bound_tightness, run_norm_per_layer, run_subspace_sweep, run_width_variation, ExperimentConfig, McOptions,
    McReport, Preset, Projection, SummaryTable, WidthSpec,
};
use crate::linalg::{RngState, Vector};
use crate::network::{InitScheme, NetworkConfig};

#[derive(Debug, Parser)]
#[command(
    name = "normlab",
    version,
    about = "Norm preservation in randomly initialized ReLU networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form failure probability of the norm-preservation bounds.
    Bounds(BoundsArgs),
    /// Smallest epsilon whose single-layer bound drops to delta.
    SolveEps(SolveEpsArgs),
    /// Width needed to preserve norms over a whole input subspace.
    MinWidth(MinWidthArgs),
    /// Monte Carlo check of a single-layer statement.
    Mc(McArgs),
    /// Activation and gradient norm ratios per layer (He against Glorot).
    Fig1(ExperimentArgs),
    /// Empirical against theoretical single-layer distortion across widths.
    Fig2(ExperimentArgs),
    /// Gradient ratios when layer widths vary.
    Fig3(ExperimentArgs),
    /// Norm extremes over inputs from a low-dimensional subspace.
    Subspace(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json or svg. Defaults to the extension of --out, else csv
    /// (plain text for scalar commands).
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Fail instead of replacing an existing output file.
    #[arg(long)]
    pub no_clobber: bool,
}

impl OutputArgs {
    fn inferred_format(&self) -> Option<Format> {
        self.format.or_else(|| {
            let ext = self.out.as_ref()?.extension()?.to_str()?;
            ext.parse().ok()
        })
    }

    fn spec(&self, format: Format) -> OutputSpec {
        OutputSpec {
            path: self.out.clone(),
            format,
            overwrite: !self.no_clobber,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundKind {
    /// `2·exp(−m φ(ε))` for one layer of width m.
    Single,
    /// Union bound over `depth` layers of width m and `samples` inputs.
    Forward,
    /// Gradient-norm bound for `depth` layers of width m and `samples` inputs.
    Gradient,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, value_enum, default_value_t = BoundKind::Single)]
    pub kind: BoundKind,
    /// Layer width.
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    /// Dataset size N.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SolveEpsArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Constant in front of `exp(−m φ(ε))`: 2 for norms, 4 for inner products.
    #[arg(long, default_value_t = 2.0)]
    pub multiplier: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MinWidthArgs {
    /// Subspace dimension.
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum McKind {
    /// `ReLU(Ru)` with He variance.
    Forward,
    /// `(Ru) ⊙ z` with Bernoulli(p) gates.
    Backward,
    /// Inner products of two masked projections.
    Inner,
    /// Frequency of positive pre-activations over re-initializations.
    Gates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Dense,
    Marginal,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, value_enum, default_value_t = McKind::Forward)]
    pub kind: McKind,
    /// Output width (hidden width for `gates`).
    #[arg(long)]
    pub m: usize,
    /// Input dimension.
    #[arg(long)]
    pub n: usize,
    /// One or more comma-separated epsilons sharing the same trials.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Gate keep probability for `backward`.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Number of layers for `gates`.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, value_enum, default_value_t = Sampler::Dense)]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_parser = parse_preset, default_value = "desk")]
    pub preset: Preset,
    /// JSON file whose fields override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Dataset size.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Hidden widths to sweep (comma-separated); for fig3 the base width.
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Width spreads for fig3 (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub v: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_init)]
    pub init: Vec<InitScheme>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Subspace dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Results go to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Runs one parsed subcommand.
pub fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Bounds(a) => bounds(&a, stdout),
        Command::SolveEps(a) => {
            let eps = solve_epsilon(a.m, a.delta, a.multiplier)?;
            let json = json!({"m": a.m, "delta": a.delta, "multiplier": a.multiplier, "epsilon": eps});
            emit_scalar(&a.output, "epsilon", eps, json, stdout)
        }
        Command::MinWidth(a) => {
            let w = subspace_min_width(a.d, a.eps, a.delta, a.depth)?;
            let json = json!({"d": a.d, "epsilon": a.eps, "delta": a.delta, "depth": a.depth, "width": w});
            emit_scalar(&a.output, "width", w as f64, json, stdout)
        }
        Command::Mc(a) => monte_carlo(&a, stdout),
        Command::Fig1(a) => experiment(Experiment::NormPerLayer, &a, stdout),
        Command::Fig2(a) => experiment(Experiment::BoundTightness, &a, stdout),
        Command::Fig3(a) => experiment(Experiment::WidthVariation, &a, stdout),
        Command::Subspace(a) => experiment(Experiment::Subspace, &a, stdout),
    }
}

fn scalar_format(output: &OutputArgs) -> Result<Option<Format>> {
    match output.inferred_format() {
        Some(Format::Svg) => Err(Error::invalid(
            "svg output is only available for experiment subcommands",
        )),
        f => Ok(f),
    }
}

fn emit_scalar(
    output: &OutputArgs,
    name: &str,
    value: f64,
    json: serde_json::Value,
    stdout: &mut dyn Write,
) -> Result<()> {
    let format = scalar_format(output)?;
    let text = match format {
        None => format!("{value}\n"),
        Some(Format::Json) => format!("{}\n", serde_json::to_string(&json)?),
        Some(_) => format!("{name}\n{}\n", format_number(value)),
    };
    output.spec(format.unwrap_or_default()).emit(&text, stdout)
}

fn bounds(a: &BoundsArgs, stdout: &mut dyn Write) -> Result<()> {
    let result: BoundResult = match a.kind {
        BoundKind::Single => single_layer_failure_prob(a.m, a.eps)?,
        BoundKind::Forward => deep_forward_failure_prob(&vec![a.m; a.depth], a.samples, a.eps)?,
        BoundKind::Gradient => gradient_failure_prob(a.m, a.depth, a.samples, a.eps)?,
    };
    let format = scalar_format(&a.output)?;
    let text = match format {
        None if result.vacuous => format!("{} (vacuous: raw bound {})\n", result.probability, result.raw),
        None => format!("{}\n", result.probability),
        Some(Format::Json) => {
            let kind = format!("{:?}", a.kind).to_lowercase();
            let v = json!({
                "kind": kind, "m": a.m, "depth": a.depth, "samples": a.samples, "epsilon": a.eps,
                "probability": result.probability, "raw": result.raw, "vacuous": result.vacuous,
            });
            format!("{}\n", serde_json::to_string(&v)?)
        }
        Some(_) => format!(
            "probability,raw,vacuous\n{},{},{}\n",
            format_number(result.probability),
            format_number(result.raw),
            result.vacuous
        ),
    };
    a.output.spec(format.unwrap_or_default()).emit(&text, stdout)
}

fn monte_carlo(a: &McArgs, stdout: &mut dyn Write) -> Result<()> {
    let format = scalar_format(&a.output)?.unwrap_or_default();
    let rng = RngState::from_seed(a.seed).derive_tag("mc");
    if a.kind == McKind::Gates {
        return gates(a, format, rng, stdout);
    }
    let options = McOptions {
        projection: match a.sampler {
            Sampler::Dense => Projection::Dense,
            Sampler::Marginal => Projection::Marginal,
        },
        ..McOptions::default()
    };
    let reports = match a.kind {
        McKind::Forward => mc_forward_layer_with(a.m, a.n, &a.eps, a.trials, options, rng)?,
        McKind::Backward => mc_backward_layer_with(a.m, a.n, a.p, &a.eps, a.trials, options, rng)?,
        McKind::Inner => mc_masked_inner_product_with(a.m, a.n, a.trials, &a.eps, options, rng)?,
        McKind::Gates => unreachable!(),
    };
    let text = match format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&reports)?),
        _ => mc_csv(&reports),
    };
    a.output.spec(format).emit(&text, stdout)
}

fn mc_csv(reports: &[McReport]) -> String {
    let mut out = String::from(
        "epsilon,trials,violation_count,violation_rate,theoretical_bound,bound_satisfied,mean_ratio,ratio_std\n",
    );
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            format_number(r.epsilon),
            r.trials,
            r.violation_count,
            format_number(r.violation_rate),
            format_number(r.theoretical_bound),
            r.bound_satisfied,
            format_number(r.mean_ratio),
            format_number(r.ratio_std)
        )
        .unwrap();
    }
    out
}

fn gates(a: &McArgs, format: Format, rng: RngState, stdout: &mut dyn Write) -> Result<()> {
    let mut widths = vec![a.n];
    widths.extend(std::iter::repeat_n(a.m, a.depth));
    let config = NetworkConfig::new(widths, 2, a.seed)?;
    let input = Vector::gaussian(a.n, 1.0, rng.derive_tag("gate-input"))?;
    let freq = mc_gate_frequency(&config, &input, a.trials, rng)?;
    let text = match format {
        Format::Json => format!("{}\n", serde_json::to_string(&freq)?),
        _ => {
            let mut out = String::from("layer,min,max,mean\n");
            for (l, layer) in freq.per_layer.iter().enumerate() {
                let min = layer.iter().copied().fold(f64::INFINITY, f64::min);
                let max = layer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = layer.iter().sum::<f64>() / layer.len() as f64;
                writeln!(
                    out,
                    "{},{},{},{}",
                    l + 1,
                    format_number(min),
                    format_number(max),
                    format_number(mean)
                )
                .unwrap();
            }
            out
        }
    };
    a.output.spec(format).emit(&text, stdout)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Experiment {
    NormPerLayer,
    BoundTightness,
    WidthVariation,
    Subspace,
}

impl Experiment {
    fn preset(self, preset: Preset) -> ExperimentConfig {
        match self {
            Experiment::NormPerLayer => ExperimentConfig::norm_per_layer(preset),
            Experiment::BoundTightness => ExperimentConfig::bound_tightness(preset),
            Experiment::WidthVariation => ExperimentConfig::width_variation(preset),
            Experiment::Subspace => ExperimentConfig::subspace(preset),
        }
    }
}

/// Preset, then the fields of the JSON file, then command-line flags.
fn build_config(kind: Experiment, a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = kind.preset(a.preset);
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        let overrides: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config file: {e}")))?;
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(Error::invalid("config file must hold a JSON object"));
        };
        let mut merged = config.to_json();
        let fields = merged.as_object_mut().expect("config is an object");
        for (k, v) in overrides {
            if !fields.contains_key(&k) {
                return Err(Error::invalid(format!("config file: unknown field `{k}`")));
            }
            fields.insert(k, v);
        }
        config = serde_json::from_value(merged).map_err(|e| Error::invalid(format!("config file: {e}")))?;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(v) = a.depth {
        config.depth = v;
    }
    if let Some(v) = a.samples {
        config.num_samples = v;
    }
    if let Some(v) = a.n {
        config.input_dim = v;
    }
    if let Some(v) = a.trials {
        config.trials = v;
    }
    if let Some(v) = a.delta {
        config.delta = v;
    }
    if let Some(v) = a.d {
        config.subspace_dim = Some(v);
    }
    if !a.init.is_empty() {
        config.schemes = a.init.clone();
    }
    if !a.eps.is_empty() {
        config.epsilon = a.eps.clone();
    }
    if kind == Experiment::WidthVariation {
        if a.m.len() > 1 {
            return Err(Error::invalid("fig3 takes a single base width"));
        }
        if !a.m.is_empty() || !a.v.is_empty() {
            let (old_base, old_spreads): (Vec<usize>, Vec<usize>) = config
                .widths
                .iter()
                .map(|w| match w {
                    WidthSpec::Jitter { base, spread } => (*base, *spread),
                    other => (other.max_width(), 0),
                })
                .unzip();
            let base = a.m.first().copied().or(old_base.first().copied()).unwrap_or(1000);
            let spreads = if a.v.is_empty() { old_spreads } else { a.v.clone() };
            config.widths = spreads
                .into_iter()
                .map(|spread| WidthSpec::Jitter { base, spread })
                .collect();
        }
    } else {
        if !a.v.is_empty() {
            return Err(Error::invalid("--v only applies to fig3"));
        }
        if !a.m.is_empty() {
            config.widths = a.m.iter().map(|&w| WidthSpec::Uniform(w)).collect();
        }
    }
    config.validate()?;
    Ok(config)
}

fn experiment(kind: Experiment, a: &ExperimentArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = build_config(kind, a)?;
    let format = a.output.inferred_format().unwrap_or_default();
    let table: SummaryTable = match kind {
        Experiment::NormPerLayer => run_norm_per_layer(&config)?.combined(),
        Experiment::BoundTightness => run_bound_tightness(&config)?,
        Experiment::WidthVariation => run_width_variation(&config)?,
        Experiment::Subspace => run_subspace_sweep(&config)?.to_table(),
    };
    write_table(&table, &a.output.spec(format), stdout)
}
