use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("region has no area left after removing the exclusion disk")]
    EmptyRegion,
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("position sampler stalled: acceptance rate {rate:.3e} is below 1e-6")]
    SamplingStall { rate: f64 },
    #[error("density is unbounded on the region: {0}")]
    UnboundedDensity(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("could not place base station {index} with the required spacing")]
    PlacementFailure { index: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("cell {id}: {source}")]
    Cell {
        id: u32,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }

    pub(crate) fn in_cell(self, id: u32) -> Self {
        match self {
            e @ Error::Cell { .. } => e,
            other => Error::Cell { id, source: Box::new(other) },
        }
    }

    /// The error with any cell wrapper removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cell { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
