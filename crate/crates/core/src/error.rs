use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inputs are individually valid but the analytic collision model
    /// cannot represent them (e.g. windows longer than the reservation period).
    #[error("model-domain error: {0}")]
    ModelDomain(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("sweep point avg_speed={avg_speed}: {source}")]
    SweepPoint {
        avg_speed: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::ModelDomain(msg.into())
    }

    pub(crate) fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Stable, machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::ModelDomain(_) => "model_domain",
            Error::MissingKey(_) => "missing_key",
            Error::Invalid { .. } => "invalid_value",
            Error::Parse(_) => "parse",
            Error::SweepPoint { .. } => "sweep_point",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// The config key an error refers to, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Error::MissingKey(k) => Some(k),
            Error::Invalid { key, .. } => Some(key),
            Error::SweepPoint { source, .. } => source.key(),
            _ => None,
        }
    }
}
