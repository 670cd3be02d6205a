use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid hypothesis class: {0}")]
    InvalidClass(String),

    #[error("dataset carries no per-step rewards; the Bellman-error loss needs them")]
    MissingStepRewards,

    #[error("dataset carries no outcome rewards")]
    MissingOutcomeRewards,

    #[error("empty score list")]
    EmptyScores,

    #[error("invalid privacy parameter: {0}")]
    InvalidPrivacy(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("operation requires a deterministic MDP")]
    NotDeterministic,

    #[error("operation requires a fixed initial state")]
    StochasticInitialState,

    #[error("mismatched episode counts across seeds for {group}: {first} vs {other}")]
    MixedEpisodeCounts {
        group: String,
        first: usize,
        other: usize,
    },

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
