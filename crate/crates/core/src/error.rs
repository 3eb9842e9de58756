use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("argument {x} outside basis domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("derivative order {n} annihilates an order-{order} basis")]
    DerivativeOrder { n: usize, order: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{} sample argument(s) outside their basis domain, first (sample, component) = {:?}", .offenders.len(), .offenders.first())]
    OutOfDomain { offenders: Vec<(usize, usize)> },

    #[error(
        "singular posterior precision{}: smallest eigenvalue {min_eigenvalue:e} along group {group} coefficient {index}",
        .iteration.map(|i| format!(" at sweep {i}")).unwrap_or_default()
    )]
    Singular {
        iteration: Option<usize>,
        group: usize,
        index: usize,
        min_eigenvalue: f64,
    },

    #[error("chain diverged at sweep {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("maximum-likelihood iteration did not converge in {iterations} iterations (last relative change {last_change:e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        last: Box<crate::sampler::MleFit>,
    },

    #[error("degenerate selector: {0}")]
    Degenerate(String),

    #[error("ill-conditioned projection (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("simulation blew up at step {step}: |force| = {force:e}")]
    BlowUp { step: usize, force: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
