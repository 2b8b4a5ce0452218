use thiserror::Error;

pub type Result<T, E = TbsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TbsError {
    #[error("invalid action {action} for phase {phase}")]
    InvalidAction { action: String, phase: String },

    #[error("episode is over; reset the environment first")]
    EpisodeOver,

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("partner set is empty")]
    EmptyPartnerSet,

    #[error("no training data for {0}")]
    EmptyDataset(String),

    #[error("degenerate embedding: row {0} of the rotated eigenvector matrix is all zero")]
    DegenerateEmbedding(usize),

    #[error("matrix is not orthogonal (max deviation {0:e})")]
    NotOrthogonal(f64),

    #[error("concept set mismatch: model uses `{model}`, environment uses `{env}`")]
    ConceptSetMismatch { model: String, env: String },

    #[error("held-out pool shares training seeds: {0:?}")]
    ProvenanceOverlap(Vec<u64>),

    #[error("{what} needs at least {needed} entries, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
