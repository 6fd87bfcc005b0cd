use thiserror::Error;

/// Error type shared by every module in this crate.
///
/// `Config` marks violated numeric or structural constraints (named field in the
/// message), `Layout` marks dimension mismatches between parameter vectors and
/// datasets, `Quadrature` marks an amplitude integral whose every node
/// underflowed, and `FlatSpectrum` marks a spectrum with no peak above the
/// noise floor.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config: {0}")]
    Config(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("quadrature: {0}")]
    Quadrature(String),
    #[error("flat spectrum: no bin exceeds median + 5*MAD of the power distribution")]
    FlatSpectrum,
}

pub type Result<T> = std::result::Result<T, CoreError>;
