use thiserror::Error;

/// Errors produced by the estimators, the simulator and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("RRH index {index} out of range (scenario has {count} RRHs)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("number of LoS RRHs {na} out of range [2, {max}]")]
    NaOutOfRange { na: usize, max: usize },

    #[error("under-determined model: {0}")]
    UnderDetermined(String),

    #[error("zero range between points")]
    ZeroRange,

    #[error("no scatterer attached to RRH {0}")]
    MissingScatterer(usize),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("singular system ({what}): condition number {cond:.3e}")]
    Singular { what: &'static str, cond: f64 },

    #[error("unobservable geometry: Fisher matrix condition number {cond:.3e}")]
    Unobservable { cond: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("{failed} of {total} trials failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("unknown scenario family `{0}`")]
    UnknownFamily(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::InvalidNoise(_) => "invalid_noise",
            Error::InvalidInput(_) => "invalid_input",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::NaOutOfRange { .. } => "na_out_of_range",
            Error::UnderDetermined(_) => "under_determined",
            Error::ZeroRange => "zero_range",
            Error::MissingScatterer(_) => "missing_scatterer",
            Error::SingularGeometry(_) => "singular_geometry",
            Error::Singular { .. } => "singular",
            Error::Unobservable { .. } => "unobservable",
            Error::Dimension { .. } => "dimension",
            Error::Diverged(_) => "diverged",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::UnknownFamily(_) => "unknown_family",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
