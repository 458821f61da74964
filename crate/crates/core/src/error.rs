use alloc::boxed::Box;
use alloc::string::String;

use crate::dynamics::FlowState;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {layer} has zero Frobenius norm")]
    DegenerateLayer { layer: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("layer {layer} is not unit norm (norm = {norm})")]
    NotUnitNorm { layer: usize, norm: f64 },
    #[error("degenerate batch: scale {0:e} below 1e-12")]
    DegenerateBatch(f64),
    #[error("p-norm is not differentiable here: {0}")]
    Kink(String),
    #[error("step too large: radicand {0:e} is negative")]
    StepTooLarge(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("state blew up at step {step} (t = {time:e})")]
    BlowUp {
        step: usize,
        time: f64,
        last_valid: Box<FlowState>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}
