//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Geometry and controller routines distinguish structural failures
/// (emptiness, unboundedness) from contract violations so callers can react:
/// the family builder aborts on `ErosionEmpty`, the harness aborts an episode
/// on `ProtocolDesync`, the CLI maps `Config`/`Parse` to exit code 2 and
/// everything else to 1.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation that needs a nonempty set received or produced an empty one.
    #[error("empty set: {0}")]
    EmptySet(&'static str),

    /// A halfspace intersection fails to bound a polytope.
    #[error("unbounded set: {0}")]
    UnboundedSet(&'static str),

    /// Input outside the supported problem class (state dimension 1 or 2).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The closed-loop map never contracted enough for the invariant-set
    /// recursion to stop within the iteration cap.
    #[error("invariant-set recursion did not contract within {iterations} iterations (last contraction factor {alpha:.6e})")]
    NonContractive { iterations: usize, alpha: f64 },

    /// The computed terminal set failed its own invariance certificate.
    #[error("terminal set failed the invariance post-check; request a smaller alpha_max")]
    InvarianceCheckFailed,

    /// Disturbance erosion left the target without an interior, so no
    /// predecessor set exists.
    #[error("disturbance erosion emptied the target set; the disturbance box is too large relative to it")]
    ErosionEmpty,

    /// State outside the outermost controllable set.
    #[error("state lies outside the controllable region")]
    Infeasible,

    /// The two endpoints of the covert channel lost agreement.
    #[error("protocol desync: {0}")]
    ProtocolDesync(String),

    /// An internal invariant was violated; indicates a bug or corrupt data.
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    /// Invalid configuration value (semantic validation, after parsing).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file content, with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
