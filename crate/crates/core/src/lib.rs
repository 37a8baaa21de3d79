//! Simulation engine for integrated sensing and communication (ISAC) in
//! cell-free massive MIMO networks.
//!
//! The crate models a distributed deployment of multi-antenna access points
//! (APs) that simultaneously serve single-antenna users on the downlink and
//! probe the surveillance area for radar targets. It provides:
//!
//! - random deployments with scalable user-centric and target-centric
//!   association rules ([`scenario`]),
//! - spatially correlated Rayleigh/Rician channel models with clutter
//!   scaling and target reflections ([`channels`]),
//! - uplink pilot signaling and per-AP MMSE channel estimation
//!   ([`estimation`]),
//! - maximum-ratio communication precoding plus steered probing beams and
//!   per-AP transmit-frame assembly ([`precoding`]),
//! - closed-form use-and-then-forget user SINR/rates together with an
//!   independent Monte Carlo oracle ([`comm_metrics`]),
//! - GLRT multistatic detection and tracking with clutter whitening, ML
//!   reflectivity estimation, CPU fusion and SCNR/SICNR figures of merit
//!   ([`sensing`]),
//! - scalable fractional power allocation and a benchmark max-min optimizer
//!   based on successive convex approximation with bisection ([`power`]),
//! - Monte Carlo experiment orchestration and CSV reporting ([`harness`]).

pub mod channels;
pub mod comm_metrics;
pub mod config;
pub mod estimation;
pub mod golden;
pub mod harness;
pub mod linalg;
pub mod power;
pub mod precoding;
pub mod rng;
pub mod scenario;
pub mod sensing;

pub use config::SystemConfig;
pub use scenario::{AssociationMaps, AssociationMode, Scenario};

use thiserror::Error;

/// Errors surfaced by the simulation engine.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Structurally incompatible inputs (dimension mismatch etc.).
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A numerical operation failed (singular matrix, non-finite value).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Threshold calibration could not be performed.
    #[error("calibration error: {0}")]
    Calibration(String),
    /// The convex solver failed for a reason other than proven infeasibility.
    #[error("solver error: {0}")]
    Solver(String),
    /// I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
