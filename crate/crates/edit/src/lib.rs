//! Concept probing and null-space-constrained rank-one editing.
//!
//! The pipeline: collect a concept's characteristic MLP activation and
//! hidden state from carrier sentences, accumulate preserved-key second
//! moments over a retain corpus, build a null-space projector from their
//! spectrum, solve the projected least-squares objective in closed form as
//! a rank-one update to the MLP down-projection, and apply it in place.
//! Redirection targets can be another concept's representation, scaled
//! Gaussian noise, or an optimized rejection direction.

pub mod covariance;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod probe;
pub mod projector;
pub mod update;
pub mod variants;

pub use covariance::{
    accumulate_covariance, read_covariance, write_covariance, CovarianceFile, CovarianceStats,
};
pub use error::{EditError, Result};
pub use pipeline::{run_edit, EditOptions, EditReceipt, LayerEditRecord, Variant};
pub use probe::{
    collect_activation_key, collect_hidden_target, locate_subject_token, ConceptStats,
    ProbeTemplateSet,
};
pub use projector::{spectral_null_projector, NullProjector, DEFAULT_REL_THRESHOLD};
pub use update::{
    apply_update, closed_form_update, closed_form_update_weighted, objective_value,
    redirection_vector, RankOneUpdate,
};
pub use variants::{noise_target, reject_target, RejectOptConfig};
