//! Multi-direction gradient methods for strictly convex quadratics
//! `f(x) = ½xᵀAx − xᵀb`, with weighted-norm step sizes, symmetric
//! preconditioning and over/under-relaxation.
//!
//! Each iteration picks a direction matrix `W_k` (the gradient plus whatever
//! a [`directions::DirectionStrategy`] adds), solves a small system for the
//! sub-step sizes that minimize the next gradient in a polynomial norm
//! ([`norms::NormSpec`]), and moves by `ω` times that step.

pub mod directions;
pub mod error;
pub mod experiment;
pub mod linops;
pub mod norms;
pub mod runner;
pub mod stepsolver;
pub mod textio;

pub use directions::{BuiltinStrategy, DirectionStrategy, StrategySpec};
pub use error::{Error, Result};
pub use linops::{Matrix, Preconditioner, ProblemInstance, SpectrumInfo, Vector};
pub use norms::NormSpec;
pub use runner::{
    compute_bounds, run_flexible, run_flexible_with, verify_run, BoundReport, PrecondSpec,
    RunConfig, RunResult, Status, TraceRecord,
};
