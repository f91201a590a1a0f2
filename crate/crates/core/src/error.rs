use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("infeasible degree target {avg_degree} for {num_agents} agents")]
    InfeasibleDegree { num_agents: usize, avg_degree: f64 },

    #[error("random graph generation gave up after {0} attempts")]
    GeneratorExhausted(usize),

    #[error("unknown agent id {0}")]
    UnknownAgent(usize),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{function} is not differentiable at coordinate {index}")]
    NonSmooth { function: String, index: usize },

    #[error("protocol desync at agent {agent}: {detail}")]
    ProtocolDesync { agent: usize, detail: String },

    #[error("misalignment is undefined for an all-zero ground truth")]
    ZeroTruth,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("orientation calibration inconclusive (error +1: {plus:.3e}, error -1: {minus:.3e}, |x*|: {target:.3e})")]
    CalibrationFailed { plus: f64, minus: f64, target: f64 },

    #[error("parse error in {source_name}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: Option<usize>,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
