//! Monte Carlo verifiers and replication experiments.
//!
//! All randomness is derived from the config seed through named sub-streams,
//! and every reduction runs in sample or trial order, so results do not
//! depend on the number of worker threads.

mod config;
mod monte_carlo;
mod replication;
mod subspace;
mod table;

pub use config::{ExperimentConfig, Preset, WidthSpec};
pub use monte_carlo::{
    mc_backward_layer, mc_backward_layer_with, mc_forward_layer, mc_forward_layer_with, mc_gate_frequency,
    mc_masked_inner_product, mc_masked_inner_product_with, GateFrequencies, InputLaw, McOptions, McReport, PairLaw,
    Projection,
};
pub use replication::{
    dataset, measure_ratios, run_bound_tightness, run_norm_per_layer, run_width_variation, NormPerLayer, RatioSamples,
};
pub use subspace::{run_subspace_sweep, subspace_basis, SubspaceSweep, SubspaceWidth};
pub use table::{Stats, SummaryRow, SummaryTable};

/// Rows per batched forward/backward pass for a network whose widest layer
/// has `max_width` units.
pub(crate) fn chunk_rows(max_width: usize) -> usize {
    (4_000_000 / max_width.max(1)).clamp(1, 512)
}
