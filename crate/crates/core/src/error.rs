use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("density profile integrates to zero on the grid")]
    ZeroDensityIntegral,

    #[error("time {t} us is outside the schedule [0, {t_max}] us")]
    OutsideSchedule { t: f64, t_max: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step size underflow at t = {t} us (h = {h:e} us); problem too stiff for the chosen tolerance")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t} us")]
    NonFinite { t: f64 },

    #[error("pulse span too small: need [{need_from}, {need_to}] us inside [0, {span}] us")]
    SpanTooSmall { need_from: f64, need_to: f64, span: f64 },

    #[error("envelope has zero energy")]
    ZeroEnergy,

    #[error("no fringe sideband above the noise floor")]
    NoSideband,

    #[error("aliasing: beat frequency {beat} MHz exceeds Nyquist {nyquist} MHz")]
    Aliasing { beat: f64, nyquist: f64 },

    #[error("filter design failed: {0}")]
    FilterDesign(String),

    #[error("low-pass cutoff {cutoff} MHz must be below the carrier {carrier} MHz")]
    ImageLeakage { cutoff: f64, carrier: f64 },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("config error at {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("run `{context}` failed: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed trace file: {0}")]
    TraceFormat(String),

    #[error("missing or corrupt artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
