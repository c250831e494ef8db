use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("electron size L = {size} is smaller than the classical radius e²/(mc²) = {radius}; the extended model is acausal")]
    Causality { size: f64, radius: f64 },

    #[error("packet width collapsed to a = {width} at t = {t}")]
    WidthCollapse { t: f64, width: f64 },

    #[error("time {t} outside the solved domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("time {t} needs delayed data at t - tau = {delayed} < 0")]
    DelayDomain { t: f64, delayed: f64 },

    #[error("source grid misses {tail_mass:e} of the initial probability mass")]
    SupportTruncated { tail_mass: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
