use alloc::string::String;

/// Failure classes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("index {index} out of bounds for {len} pixels")]
    Bounds { index: usize, len: usize },
    #[error("gradient oracle error: {0}")]
    Oracle(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
