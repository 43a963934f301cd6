use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("no agents to simulate")]
    NoAgents,
    #[error("invalid agent: {0}")]
    InvalidAgent(String),
    #[error("invalid style parameters: {0}")]
    InvalidStyle(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("agents {a} and {b} occupy the same position")]
    Coincident { a: usize, b: usize },
    #[error("could not place {n_agents} agents without overlap after {attempts} attempts")]
    Placement { n_agents: usize, attempts: usize },
    #[error("step cap {cap} reached before all agents arrived ({recorded} frames recorded)")]
    StepCap { cap: usize, recorded: usize },
    #[error("scene {index} of split {split} failed after {attempts} attempts: {last}")]
    Rejected {
        split: String,
        index: usize,
        attempts: usize,
        last: Box<SimError>,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}
