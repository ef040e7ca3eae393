//! Automated-threshold terrace compression for multispectral transmission
//! images, with pixel clustering and Dice-based evaluation.
//!
//! The pipeline runs frame accumulation and median filtering
//! ([`image`]), histogram-driven threshold selection and terrace
//! compression ([`terrace`]), window transforms ([`window`]), clustering of
//! stacked channels ([`clustering`]) and scoring against a body template
//! ([`evaluation`]). [`phantom`] generates a synthetic test object and
//! [`pipeline`] strings the stages together from a [`config`] file.

pub mod clustering;
pub mod evaluation;
pub mod image;
pub mod phantom;
pub mod report;
pub mod seed;
pub mod terrace;
pub mod window;
pub mod config;
pub mod pipeline;

use std::fmt;

use thiserror::Error;

pub use config::ConfigError;
pub use pipeline::Stage;

/// Error raised inside one pipeline stage.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Terrace(#[from] terrace::TerraceError),
    #[error(transparent)]
    Window(#[from] window::WindowError),
    #[error(transparent)]
    Cluster(#[from] clustering::ClusterError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Phantom(#[from] phantom::PhantomError),
    #[error("{0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl StageError {
    /// True for errors caused by bad parameters or malformed inputs rather
    /// than by the data failing to process.
    pub fn is_validation(&self) -> bool {
        use clustering::ClusterError as C;
        use evaluation::EvalError as E;
        use image::ImageError as I;
        use phantom::PhantomError as P;
        use terrace::TerraceError as T;
        match self {
            Self::Window(_) | Self::Input(_) => true,
            Self::Image(e) => !matches!(e, I::Overflow { .. } | I::Io(_)),
            Self::Terrace(e) => matches!(
                e,
                T::InvalidConfig(_) | T::InvalidThresholds { .. } | T::TooFewSegments(_)
            ),
            Self::Cluster(e) => matches!(
                e,
                C::InvalidK { .. } | C::InvalidParameter(_) | C::DimensionMismatch(..) | C::LabelOutOfRange { .. }
            ),
            Self::Eval(e) => matches!(e, E::DimensionMismatch(..) | E::InvalidLabel { .. } | E::BodyMismatch),
            Self::Phantom(e) => matches!(e, P::InvalidSpec(_) | P::Overlap(..) | P::IntensityRange { .. }),
            Self::Io { .. } => false,
        }
    }
}

/// Pipeline error carrying the failing stage and wavelength.
#[derive(Debug)]
pub enum Error {
    Config(ConfigError),
    Stage {
        stage: Stage,
        wavelength: Option<u32>,
        source: StageError,
    },
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Config(e) => e.source(),
            Self::Stage { source, .. } => Some(source),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => e.fmt(f),
            Self::Stage {
                stage,
                wavelength,
                source,
            } => {
                write!(f, "{stage} stage")?;
                if let Some(w) = wavelength {
                    write!(f, " at {w} nm")?;
                }
                write!(f, ": {source}")
            }
        }
    }
}

impl Error {
    pub fn stage(stage: Stage, wavelength: Option<u32>, source: impl Into<StageError>) -> Self {
        Self::Stage {
            stage,
            wavelength,
            source: source.into(),
        }
    }

    pub fn is_validation(&self) -> bool {
        match self {
            Self::Config(_) => true,
            Self::Stage { source, .. } => source.is_validation(),
        }
    }

    /// Process exit code: 1 for validation errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            1
        } else {
            2
        }
    }
}
