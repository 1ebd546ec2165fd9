//! Deterministic desk-scale haul-road world, an imitation-learning stack for
//! truck control, and the benchmark suite that scores trained planners.
//!
//! The crate is organized bottom-up: [`world`] simulates the mine, [`expert`]
//! drives it, [`data`] turns demonstrations into training sets, [`nn`] and
//! [`loss`] provide the learning machinery, [`model`] is the planner network,
//! [`deploy`] closes the loop at runtime and [`bench`] scores the result.
//!
//! Numeric code in [`nn`] and the evidential loss functions are generic over
//! [`scalar::Scalar`]; everything downstream runs at the concrete [`Real`]
//! precision fixed here.

pub mod bench;
pub mod config;
pub mod data;
pub mod deploy;
pub mod expert;
pub mod loss;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod world;

/// Working precision for simulation, training and evaluation.
///
/// Gradient checks at 1e-4 relative tolerance with h = 1e-5 probes need the
/// full 52-bit mantissa; f32 is supported by the generic layers but is not
/// used by the pipeline.
pub type Real = f64;

/// Parameter store at working precision.
pub type ParamStore = nn::ParamStore<Real>;
/// Feed-forward stack at working precision.
pub type Mlp = nn::Mlp<Real>;
/// Optimizer state at working precision.
pub type Adam = nn::Adam<Real>;

pub use config::RunConfig;

/// Crate-wide error type.
///
/// Variants map onto the process exit codes used by the CLI: configuration
/// errors exit 2, missing inputs exit 3, numerical failures exit 4 and
/// benchmark threshold violations exit 5.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite gradient in {0}; optimizer step refused")]
    NonFiniteGradient(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("loss overflow in term `{term}`: {detail}")]
    LossOverflow { term: String, detail: String },

    #[error("expert lost the route at s = {s:.1} m (lateral offset {offset:.2} m)")]
    ExpertLost { s: f64, offset: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("checkpoint/config mismatch: checkpoint built under {stored}, current is {current} (pass --force to override)")]
    ConfigMismatch { stored: String, current: String },

    #[error("benchmark threshold violated: {0}")]
    BenchThreshold(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::ConfigMismatch { .. } => 2,
            Error::MissingInput(_) => 3,
            Error::BenchThreshold(_) => 5,
            Error::Io(_) | Error::Json(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
