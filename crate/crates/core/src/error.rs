use std::path::PathBuf;

use crate::netgraph::NetGraph;
use crate::pruner::PruneTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed blob: {0}")]
    MalformedBlob(String),

    #[error("model load error in layer `{layer}`: {message}")]
    ModelLoad { layer: String, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("tap error: {0}")]
    Tap(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("heuristic `{heuristic}` not applicable to layer `{layer}`")]
    HeuristicNotApplicable { heuristic: String, layer: String },

    #[error("invalid prune: {0}")]
    InvalidPrune(String),

    #[error("score coverage error: {0}")]
    ScoreCoverage(String),

    #[error("group constraint violated: {0}")]
    GroupConstraint(String),

    #[error("budget unreachable: {reached} FLOPs after {} steps, goal {goal}", partial.trace.steps.len())]
    BudgetUnreachable {
        reached: u64,
        goal: u64,
        partial: Box<PartialPrune>,
    },

    #[error("profile error: {0}")]
    Profile(String),

    #[error("trainer does not support layer `{0}`")]
    TrainerUnsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Best result reached by the greedy pruner before it ran out of candidates.
#[derive(Debug)]
pub struct PartialPrune {
    pub net: NetGraph,
    pub trace: PruneTrace,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn model(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ModelLoad {
            layer: layer.into(),
            message: message.into(),
        }
    }
}
