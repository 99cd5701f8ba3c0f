use thiserror::Error;

pub type Result<T> = std::result::Result<T, IsdError>;

#[derive(Debug, Error)]
pub enum IsdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("underdetermined regression: {rows} rows for {params} parameters")]
    Underdetermined { rows: usize, params: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Display already includes the inner error, so it is not exposed as a
    /// separate source (which would print it twice in error chains).
    #[error("{stage}: {inner}")]
    Stage {
        stage: &'static str,
        inner: Box<IsdError>,
    },
}

impl IsdError {
    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        IsdError::Stage {
            stage,
            inner: Box::new(self),
        }
    }

    /// True for errors caused by numerical degeneracy rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            IsdError::NotPositiveDefinite(_)
            | IsdError::Singular(_)
            | IsdError::Underdetermined { .. }
            | IsdError::NonFinite(_) => true,
            IsdError::Stage { inner, .. } => inner.is_numerical(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
