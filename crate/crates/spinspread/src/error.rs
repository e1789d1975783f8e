use thiserror::Error;

/// Errors produced by any module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice: {0}")]
    Lattice(String),

    #[error("spread: {0}")]
    Spread(String),

    #[error("kn: {0}")]
    Kn(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("mqc: {0}")]
    Mqc(String),

    #[error("fit: {0}")]
    Fit(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
