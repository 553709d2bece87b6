//! File formats, experiment orchestration and the command line around
//! [`featgraph_core`].
//!
//! * [`io`]: dataset CSV with JSON sidecars, edge-list and partition text
//!   files, model checkpoints, report files.
//! * [`workspace`]: the on-disk workspace layout and its hash manifest.
//! * [`harness`]: experiment plans, the resumable record store, sweeps and
//!   the aggregate tables.
//! * [`stats`]: replicate summaries and one-sided confidence bounds.
//! * [`svg`]: minimal line-chart and heatmap rendering.
//! * [`cli`]: the `featgraph` command.

pub mod cli;
pub mod harness;
pub mod io;
pub mod stats;
pub mod svg;
pub mod workspace;

pub use featgraph_core as core;

use std::path::PathBuf;

use featgraph_core::dmie::DmieError;
use featgraph_core::fgraph::GraphError;
use featgraph_core::gnnmodel::GnnError;
use featgraph_core::mdlselect::MdlError;
use featgraph_core::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("check failed: {0}")]
    Failed(String),
    #[error("resource cap exceeded: {0}")]
    Resource(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plan: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Expression(#[from] DmieError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Mdl(#[from] MdlError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit status: 1 for bad input (including missing input
    /// files), 2 for runtime failures, 3 when a resource cap stopped the
    /// work.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Resource(_) => 3,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            Error::Io { .. }
            | Error::Failed(_)
            | Error::Model(GnnError::Diverged { .. })
            | Error::Model(GnnError::Diff(_)) => 2,
            _ => 1,
        }
    }
}
