use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// A positive count was reported for a period that carried no exposure.
    #[error("inconsistent observation: count {count} under zero exposure")]
    ZeroExposureCount { count: u64 },

    #[error("degenerate latent state: {0}")]
    Degenerate(String),

    #[error("coefficient map needs the successor period's coefficients")]
    NeedsSuccessor,

    #[error("coefficient map undefined: {0}")]
    MapUndefined(String),

    #[error("lift refused: {0}")]
    LiftRefused(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("csv row {row}: {message}")]
    Csv { row: u64, message: String },

    #[error("entity {entity}, period {period}: {source}")]
    AtPeriod {
        entity: String,
        period: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown entity {0}")]
    UnknownEntity(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(self, entity: &str, period: u32) -> Self {
        Error::AtPeriod { entity: entity.to_owned(), period, source: Box::new(self) }
    }
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {x}")))
    }
}
