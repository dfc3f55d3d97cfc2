use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("vector is not timelike: eta(y, y) = {norm:e}")]
    NotTimelike { norm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration left the timelike cone at step {step}: eta(y, y) = {norm:e}")]
    LeftCone { step: usize, norm: f64 },

    #[error("particle {index}: {source}")]
    Particle {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate moments: {0}")]
    DegenerateMoments(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("grid error: {0}")]
    Grid(String),

    /// The quantity being fitted sits at the numerical floor; `floor` is the
    /// largest magnitude observed.
    #[error("fit refused: values at numerical floor (max {floor:e})")]
    AtFloor { floor: f64 },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("{context}: {source}")]
    Annotated {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn annotate(self, context: impl Into<String>) -> Self {
        Error::Annotated {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Configuration errors map to exit status 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Annotated { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
