use thiserror::Error;

use crate::hybrid::ModeId;

/// Errors raised by simulation, linearization and optimization.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("integration diverged in mode {mode} at t = {time}")]
    IntegrationDiverged { mode: ModeId, time: f64 },

    #[error("integrator step size underflow in mode {mode} at t = {time}")]
    StepSizeUnderflow { mode: ModeId, time: f64 },

    #[error("guard has no sign change on [{t_lo}, {t_hi}] (g_lo = {g_lo}, g_hi = {g_hi})")]
    EventBracket {
        t_lo: f64,
        t_hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("event location did not reach guard tolerance (|g| = {residual}) after {iterations} iterations")]
    EventTolerance { residual: f64, iterations: usize },

    #[error("more than {limit} events within step {step}")]
    Zeno { step: usize, limit: usize },

    #[error("state left the bounding box at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("initial state is outside the domain of mode {mode} (guard {from}->{to} = {value})")]
    InitialDomain {
        mode: ModeId,
        from: ModeId,
        to: ModeId,
        value: f64,
    },

    #[error("no transition {from}->{to} in system")]
    UnknownTransition { from: ModeId, to: ModeId },

    #[error("unknown mode {0}")]
    UnknownMode(ModeId),

    #[error("non-finite reset output for transition {from}->{to}")]
    NonFiniteReset { from: ModeId, to: ModeId },

    #[error("near-grazing crossing for transition {from}->{to}: guard rate {rate:e}")]
    Grazing { from: ModeId, to: ModeId, rate: f64 },

    #[error("non-finite finite difference at step {step}, coordinate {coordinate}")]
    NonFiniteDifference { step: usize, coordinate: usize },

    #[error("perturbing coordinate {coordinate} changes the event count of step {step}")]
    ModeSequenceFragile { step: usize, coordinate: usize },

    #[error("singular leg Jacobian ({leg} leg, knee angle {knee})")]
    SingularLeg { leg: &'static str, knee: f64 },

    #[error("backward pass failed at step {step}: regularization cap exceeded")]
    BackwardPass { step: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
