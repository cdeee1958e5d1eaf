//! Diagnostics for trained networks: transform invariance of hidden units,
//! similarity between weight vectors, and sweeps over reorder placements.

mod ablation;
mod invariance;
mod redundancy;

pub use ablation::{ablation_sweep, AblationCell, AblationRow, ABLATION_HEADER};
pub use invariance::{
    collect_responses, invariance_score, Excluded, InvarianceReport, NeuronScore, OrbitGrid, Responses,
    FIRING_FRACTION,
};
pub use redundancy::{weight_redundancy, RedundancyHistogram, DEFAULT_MAX_PAIRS, HISTOGRAM_BINS};
