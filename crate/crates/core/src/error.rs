use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("training diverged at epoch {epoch}: {what} = {value}")]
    Divergence {
        epoch: usize,
        what: &'static str,
        value: f64,
    },
    #[error("unsupported operation: {0}")]
    Capability(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("dataset schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { context, expected, got });
    }
    Ok(())
}
