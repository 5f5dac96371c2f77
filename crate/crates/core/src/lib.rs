//! Feedforward-control synthesis and verification toolkit for incremental
//! exponential stability of affine-in-control systems ẋ = f(t,x) + u(t)·G(t,x).
//!
//! The pipeline, in dependency order:
//!
//! 1. [`smallmat`] — symmetric parts and eigenvalues of small Jacobians.
//! 2. [`sysmodel`] — system models with certified time envelopes, plus the
//!    bundled example systems.
//! 3. [`intervals`] — detection of the sign-definite interval structure of
//!    R(t,·) = J_Gᵀ + J_G over a time window.
//! 4. [`synth`] — constants, the piecewise-smooth feedforward input, and the
//!    Lyapunov gain that certify exponential contraction.
//! 5. [`sim`] — adaptive Runge–Kutta integration of base + variational
//!    dynamics, ensembles, and the pathwise integral comparison.
//! 6. [`verify`] — empirical certificate, contraction and incremental
//!    stability checks, decay fits, and report assembly.

pub mod error;
pub mod intervals;
pub mod signal;
pub mod sim;
pub mod smallmat;
pub mod synth;
pub mod sysmodel;
pub mod verify;

pub use error::{Error, ErrorCategory, Result};
pub use intervals::{IntervalStructure, Sign, TransitionKind, ValidationReport};
pub use signal::{ConstantInput, FnInput, GainSignal, InputSignal, UnitGain, ZeroInput};
pub use sim::{IntegrateOptions, LyapunovTrace, Trajectory};
pub use smallmat::{SquareMatrix, SymmetricMatrix};
pub use synth::{
    FeedforwardInput, GainFunction, PeriodicGain, PeriodicInput, Synthesis, SynthesisConstants,
    SynthesisDocument,
};
pub use sysmodel::{Forcing, SystemModel};
pub use verify::{CheckResult, DecayFit, VerificationReport};

/// Version tag written into every JSON artifact produced by the toolkit.
pub const SCHEMA_VERSION: u32 = 1;
