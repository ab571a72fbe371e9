//! Simulation of a 56-Gb/s intensity-modulated, directly detected discrete
//! multi-tone (DMT) optical link over up to 80 km of dispersive fiber.
//!
//! The crate models the full chain of such a link: bit/power-loaded DMT
//! modulation, clipping, Mach-Zehnder electro-optic conversion, optical
//! mux/demux filtering (centered for double-sideband or detuned for
//! vestigial-sideband operation), dispersive and optionally nonlinear fiber
//! propagation, ASE noise loading to a target OSNR, square-law
//! photodetection, Schmidl-Cox timing recovery, one-tap equalization with
//! decision-directed tracking, and Monte Carlo BER accounting.
//!
//! The pieces are grouped the way the link is built:
//!
//! - [`signal`], [`qam`], [`transform`]: waveform/constellation/transform
//!   primitives shared by everything else.
//! - [`loading`]: SNR estimation, margin-adaptive bit loading and
//!   margin-equalizing power loading, plus framing/rate arithmetic.
//! - [`txchain`]: frame assembly into a clipped real drive waveform.
//! - [`channel`]: the optical field-level channel.
//! - [`rxchain`]: receiver DSP and error counting.
//! - [`config`], [`harness`]: experiment configuration, link assembly,
//!   calibration, parameter sweeps and CSV emission.
//!
//! Everything is deterministic: a configuration plus a 64-bit seed fully
//! determines every waveform, noise realization, and output byte. See the
//! `examples/` directory for runnable entry points per capability; the
//! `dmtsim` binary exposes the same operations as CLI subcommands.

pub mod channel;
pub mod config;
pub mod harness;
pub mod loading;
pub mod qam;
pub mod rxchain;
pub mod signal;
pub mod transform;
pub mod txchain;

mod math;

pub use config::LinkConfig;
pub use harness::SweepResult;
pub use rxchain::Metrics;
pub use loading::{LoadingConfig, SnrProfile, SubcarrierPlan};
pub use signal::{SignalBlock, SimRng};

/// Errors produced anywhere in the simulation chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was called with arguments violating its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Configuration file or override could not be parsed or validated.
    #[error("invalid config: {0}")]
    Config(String),
    /// The requested rate cannot be loaded onto the measured channel.
    #[error("infeasible calibration: {0}")]
    Infeasible(String),
    /// A BER target was never reached on the swept grid.
    #[error("target unreachable: {0}")]
    Unreachable(String),
    /// The Schmidl-Cox metric never exceeded the detection threshold.
    #[error("no preamble found (max metric {max_metric:.3})")]
    NoPreamble { max_metric: f64 },
    /// Failure inside a named stage of the link pipeline.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 invalid config, 3 infeasible
    /// calibration, 4 unreachable BER target, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Infeasible(_) => 3,
            Error::Unreachable(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
