use alloc::string::String;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("parse error: unexpected `{token}` in `{input}`")]
    Parse { input: String, token: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged { epoch: usize, step: usize, loss: f32 },
    #[error("generation error: {0}")]
    Generation(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use contract_err;
pub(crate) use dim_err;
