//! Crate-wide error type.

/// Errors produced by layer construction, training, and the CLI surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of inputs, tables, or matrices do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value or cross-field constraint is invalid
    /// (includes capacity guards such as the tree-depth cap).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An input value is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A backward pass was given a trace produced under a different strategy.
    #[error("trace/strategy mismatch: trace was recorded under {recorded}, backward called with {requested}")]
    TraceMismatch {
        recorded: &'static str,
        requested: &'static str,
    },

    /// Training loss blew past the divergence guard.
    #[error("training diverged at epoch {epoch}: mse = {mse:e} (guard 1e6); try a smaller learning rate")]
    Diverged { epoch: usize, mse: f64 },

    /// A model file failed structural validation (version, payload length, non-finite entries).
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// The config file is syntactically or schematically invalid.
    #[error("config error: {0}")]
    ConfigSyntax(String),

    /// A test oracle refused to run because the problem is too large for enumeration.
    #[error("oracle guard: {0}")]
    OracleGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
