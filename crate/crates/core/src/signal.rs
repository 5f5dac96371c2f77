//! Minimal traits connecting synthesized objects to the simulator and the
//! verifier, so that closed-form expressions, constants, and piecewise
//! synthesized inputs can all drive the same integration code.

/// A scalar open-loop input signal u(t).
pub trait InputSignal: Send + Sync {
    fn value(&self, t: f64) -> f64;

    /// Times inside `span` where the signal is not smooth (piece junctions).
    /// The integrator restarts exactly at these points so each step sees a
    /// C² right-hand side.
    fn breakpoints_in(&self, _span: (f64, f64)) -> Vec<f64> {
        Vec::new()
    }
}

/// A scalar Lyapunov gain g(t) > 0.
pub trait GainSignal: Send + Sync {
    fn value(&self, t: f64) -> f64;

    /// Certified lower bound on the gain over its domain (1 when the gain
    /// never dips).  Used to convert Lyapunov decay into state-norm bounds.
    fn floor(&self) -> f64 {
        1.0
    }
}

/// Constant input.
pub struct ConstantInput(pub f64);

impl InputSignal for ConstantInput {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }
}

/// Zero input, for uncontrolled runs.
pub struct ZeroInput;

impl InputSignal for ZeroInput {
    fn value(&self, _t: f64) -> f64 {
        0.0
    }
}

/// Adapter for closures.
pub struct FnInput<F: Fn(f64) -> f64 + Send + Sync>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> InputSignal for FnInput<F> {
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Unit gain, turning V = g·|δx|² into the plain squared norm.
pub struct UnitGain;

impl GainSignal for UnitGain {
    fn value(&self, _t: f64) -> f64 {
        1.0
    }
}
