use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::{check_delta, check_epsilon};
use crate::error::{Error, Result};
use crate::linalg::RngState;
use crate::network::InitScheme;

/// How the hidden widths `n_1 … n_L` of one network are chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthSpec {
    /// Explicit widths, one per layer.
    Fixed(Vec<usize>),
    /// Every layer has the same width.
    Uniform(usize),
    /// Each layer independently uniform on the integers `base − spread ..= base + spread`.
    Jitter { base: usize, spread: usize },
}

impl WidthSpec {
    pub fn validate(&self, depth: usize) -> Result<()> {
        match self {
            WidthSpec::Fixed(ws) if ws.len() != depth => Err(Error::invalid(format!(
                "fixed widths list has {} entries for depth {depth}",
                ws.len()
            ))),
            WidthSpec::Fixed(ws) if ws.contains(&0) => Err(Error::invalid("widths must be positive")),
            WidthSpec::Uniform(0) => Err(Error::invalid("width must be positive")),
            WidthSpec::Jitter { base, spread } if spread >= base => Err(Error::invalid(format!(
                "width spread {spread} must be smaller than base width {base}"
            ))),
            _ => Ok(()),
        }
    }

    /// Hidden widths for a `depth`-layer network. Jittered widths use one
    /// uniform draw per layer from `rng`, so specs that differ only in
    /// `spread` receive coupled architectures.
    pub fn hidden_widths(&self, depth: usize, rng: RngState) -> Vec<usize> {
        match self {
            WidthSpec::Fixed(ws) => ws.clone(),
            WidthSpec::Uniform(w) => vec![*w; depth],
            WidthSpec::Jitter { base, spread } => {
                let mut draws = rng.draws();
                (0..depth)
                    .map(|_| {
                        let offset = (draws.uniform() * (2 * spread + 1) as f64) as usize;
                        base - spread + offset.min(2 * spread)
                    })
                    .collect()
            }
        }
    }

    pub fn max_width(&self) -> usize {
        match self {
            WidthSpec::Fixed(ws) => ws.iter().copied().max().unwrap_or(0),
            WidthSpec::Uniform(w) => *w,
            WidthSpec::Jitter { base, spread } => base + spread,
        }
    }

    /// Short label used in metric names.
    pub fn label(&self) -> String {
        match self {
            WidthSpec::Fixed(ws) => format!("fixed{}", ws.len()),
            WidthSpec::Uniform(w) => format!("n{w}"),
            WidthSpec::Jitter { spread, .. } => format!("v{spread}"),
        }
    }

    /// Integer used in the `layer_or_width` column of sweep summaries.
    pub fn key(&self) -> usize {
        match self {
            WidthSpec::Fixed(ws) => ws.iter().sum::<usize>() / ws.len().max(1),
            WidthSpec::Uniform(w) => *w,
            WidthSpec::Jitter { spread, .. } => *spread,
        }
    }
}

/// Size presets for the replication experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reduced sample counts and widths that run in minutes on one core.
    Desk,
    /// The published configurations.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }
}

/// Declarative description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub depth: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub num_samples: usize,
    pub trials: usize,
    /// One entry per setting of the sweep.
    pub widths: Vec<WidthSpec>,
    pub schemes: Vec<InitScheme>,
    pub epsilon: Vec<f64>,
    pub delta: f64,
    pub subspace_dim: Option<usize>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth", self.depth),
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
            ("num_samples", self.num_samples),
            ("trials", self.trials),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.widths.is_empty() {
            return Err(Error::invalid("at least one width setting is required"));
        }
        for w in &self.widths {
            w.validate(self.depth)?;
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("at least one init scheme is required"));
        }
        for &eps in &self.epsilon {
            check_epsilon(eps)?;
        }
        check_delta(self.delta)?;
        if let Some(d) = self.subspace_dim {
            if d == 0 || d > self.input_dim {
                return Err(Error::invalid(format!(
                    "subspace dimension {d} must lie in 1..={}",
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> RngState {
        RngState::from_seed(self.seed)
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().map(WidthSpec::max_width).max().unwrap_or(1)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn base(preset: Preset) -> Self {
        Self {
            depth: 10,
            input_dim: 500,
            num_classes: 20,
            num_samples: if preset == Preset::Paper { 2000 } else { 200 },
            trials: 1,
            widths: Vec::new(),
            schemes: vec![InitScheme::HeFanOut],
            epsilon: Vec::new(),
            delta: 0.05,
            subspace_dim: None,
            seed: 0,
        }
    }

    /// Activation and gradient norm ratios per layer for several widths,
    /// He against Glorot.
    pub fn norm_per_layer(preset: Preset) -> Self {
        let mut widths = vec![100, 500, 2000];
        if preset == Preset::Paper {
            widths.push(4060);
        }
        Self {
            widths: widths.into_iter().map(WidthSpec::Uniform).collect(),
            schemes: vec![InitScheme::HeFanOut, InitScheme::Glorot],
            ..Self::base(preset)
        }
    }

    /// Empirical against theoretical single-layer distortion for widths 500–4000.
    pub fn bound_tightness(preset: Preset) -> Self {
        Self {
            depth: 1,
            num_samples: if preset == Preset::Paper { 2000 } else { 500 },
            widths: (1..=8).map(|k| WidthSpec::Uniform(500 * k)).collect(),
            ..Self::base(preset)
        }
    }

    /// 20 layers with widths jittered around 1000.
    pub fn width_variation(preset: Preset) -> Self {
        Self {
            depth: 20,
            num_samples: if preset == Preset::Paper { 1000 } else { 200 },
            widths: [1, 200, 500]
                .into_iter()
                .map(|spread| WidthSpec::Jitter { base: 1000, spread })
                .collect(),
            ..Self::base(preset)
        }
    }

    /// Inputs confined to a 5-dimensional subspace of R^200, three layers.
    pub fn subspace(preset: Preset) -> Self {
        Self {
            depth: 3,
            input_dim: 200,
            num_samples: if preset == Preset::Paper { 100_000 } else { 10_000 },
            widths: [250, 1000, 4000].into_iter().map(WidthSpec::Uniform).collect(),
            epsilon: vec![0.5],
            subspace_dim: Some(5),
            ..Self::base(preset)
        }
    }
}
