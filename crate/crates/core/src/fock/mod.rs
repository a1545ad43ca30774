//! Truncated Fock-space engine.
//!
//! Pure states are sparse maps from occupation tuples to amplitudes and are
//! transformed exactly; loss keeps its environment modes so the global state
//! stays pure until the final partial trace.

pub mod density;
pub mod protocol;
pub mod state;

pub use density::{coherent_informations, entropy, rci, DensityMatrix};
pub use protocol::{
    baseline_for_distance, final_stage, full_protocol_state, numeric_skr, relay_stage, single_node_baseline,
    BaselineRate, FinalStage, FockSettings, ProtocolState, RelayState, DEFAULT_CUTOFF,
};
pub use state::{
    balanced_beamsplitter, beamsplitter, bell_project, loss_channel, measure_diagonal, tmsv, tmsv_cutoff_for,
    DetectorModel, StateVector, DEFAULT_TRUNCATION_TOL,
};
