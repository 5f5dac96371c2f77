//! Affine-in-control system models: ẋ = f(t, x) + u(t)·G(t, x).
//!
//! A model carries the vector fields, both Jacobians, and three scalar
//! envelope functions of time that bound the symmetrized Jacobians over the
//! state region of interest:
//!
//! * `envelope_r_min(t)` ≤ λ_min(R(t, x)) and λ_max(R(t, x)) ≤ `envelope_r_max(t)`
//!   where R = J_Gᵀ + J_G,
//! * λ_max(A(t, x)) ≤ `envelope_a_max(t)` where A = J_fᵀ + J_f.
//!
//! The envelopes are what interval analysis and synthesis consume; the raw
//! fields are what simulation consumes.

use crate::error::{Error, Result};
use crate::smallmat::{sym_part, SquareMatrix, SymmetricMatrix};
use std::sync::Arc;

pub type VectorField = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// Returns the n² entries of a Jacobian in row-major order.
pub type MatrixField = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type Envelope = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Additive forcing term for the scalar entrainment example `eq47`.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    /// g(t) = t·cos(t): aperiodic, used to demonstrate loss of periodic
    /// convergence while contraction is retained.
    TCosT,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Forcing {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::TCosT => t * t.cos(),
            Forcing::Custom(f) => f(t),
        }
    }
}

#[derive(Clone)]
pub struct SystemModel {
    dimension: usize,
    drift: VectorField,
    control_dir: VectorField,
    drift_jacobian: MatrixField,
    control_jacobian: MatrixField,
    pub envelope_r_min: Envelope,
    pub envelope_r_max: Envelope,
    pub envelope_a_max: Envelope,
    /// Declared period T of the time dependence, if any.
    pub period: Option<f64>,
    /// Axis-aligned box the envelopes are certified over, per coordinate.
    pub state_box: Option<Vec<(f64, f64)>>,
}

pub struct SystemModelBuilder {
    dimension: usize,
    drift: Option<VectorField>,
    control_dir: Option<VectorField>,
    drift_jacobian: Option<MatrixField>,
    control_jacobian: Option<MatrixField>,
    envelope_r_min: Option<Envelope>,
    envelope_r_max: Option<Envelope>,
    envelope_a_max: Option<Envelope>,
    period: Option<f64>,
    state_box: Option<Vec<(f64, f64)>>,
}

impl SystemModel {
    pub fn builder(dimension: usize) -> SystemModelBuilder {
        SystemModelBuilder {
            dimension,
            drift: None,
            control_dir: None,
            drift_jacobian: None,
            control_jacobian: None,
            envelope_r_min: None,
            envelope_r_max: None,
            envelope_a_max: None,
            period: None,
            state_box: None,
        }
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "state has dimension {}, model expects {}",
                x.len(),
                self.dimension
            )));
        }
        Ok(())
    }

    fn finite_vec(&self, t: f64, v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
        if v.len() != self.dimension {
            return Err(Error::Evaluation {
                t,
                detail: format!("{what} returned {} components, expected {}", v.len(), self.dimension),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Evaluation {
                t,
                detail: format!("{what} returned a non-finite value"),
            });
        }
        Ok(v)
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        self.finite_vec(t, (self.drift)(t, x), "drift")
    }

    pub fn control_dir_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        self.finite_vec(t, (self.control_dir)(t, x), "control direction")
    }

    fn jacobian_at(&self, field: &MatrixField, t: f64, x: &[f64], what: &str) -> Result<SquareMatrix> {
        self.check_state(x)?;
        let entries = field(t, x);
        SquareMatrix::new(self.dimension, entries).map_err(|e| Error::Evaluation {
            t,
            detail: format!("{what}: {e}"),
        })
    }

    pub fn drift_jacobian_at(&self, t: f64, x: &[f64]) -> Result<SquareMatrix> {
        self.jacobian_at(&self.drift_jacobian, t, x, "drift Jacobian")
    }

    pub fn control_jacobian_at(&self, t: f64, x: &[f64]) -> Result<SquareMatrix> {
        self.jacobian_at(&self.control_jacobian, t, x, "control Jacobian")
    }
}

impl SystemModelBuilder {
    pub fn drift(mut self, f: VectorField) -> Self {
        self.drift = Some(f);
        self
    }
    pub fn control_dir(mut self, g: VectorField) -> Self {
        self.control_dir = Some(g);
        self
    }
    pub fn drift_jacobian(mut self, j: MatrixField) -> Self {
        self.drift_jacobian = Some(j);
        self
    }
    pub fn control_jacobian(mut self, j: MatrixField) -> Self {
        self.control_jacobian = Some(j);
        self
    }
    pub fn envelope_r_min(mut self, e: Envelope) -> Self {
        self.envelope_r_min = Some(e);
        self
    }
    pub fn envelope_r_max(mut self, e: Envelope) -> Self {
        self.envelope_r_max = Some(e);
        self
    }
    pub fn envelope_a_max(mut self, e: Envelope) -> Self {
        self.envelope_a_max = Some(e);
        self
    }
    pub fn period(mut self, t: f64) -> Self {
        self.period = Some(t);
        self
    }
    pub fn state_box(mut self, b: Vec<(f64, f64)>) -> Self {
        self.state_box = Some(b);
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        if self.dimension == 0 || self.dimension > crate::smallmat::MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "state dimension must be in 1..={}, got {}",
                crate::smallmat::MAX_ORDER,
                self.dimension
            )));
        }
        if let Some(t) = self.period {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidInput("period must be positive and finite".into()));
            }
        }
        let missing = |what: &str| Error::InvalidInput(format!("system model is missing {what}"));
        Ok(SystemModel {
            dimension: self.dimension,
            drift: self.drift.ok_or_else(|| missing("drift"))?,
            control_dir: self.control_dir.ok_or_else(|| missing("control direction"))?,
            drift_jacobian: self.drift_jacobian.ok_or_else(|| missing("drift Jacobian"))?,
            control_jacobian: self
                .control_jacobian
                .ok_or_else(|| missing("control Jacobian"))?,
            envelope_r_min: self.envelope_r_min.ok_or_else(|| missing("envelope_r_min"))?,
            envelope_r_max: self.envelope_r_max.ok_or_else(|| missing("envelope_r_max"))?,
            envelope_a_max: self.envelope_a_max.ok_or_else(|| missing("envelope_a_max"))?,
            period: self.period,
            state_box: self.state_box,
        })
    }
}

/// A(t, x) = J_fᵀ + J_f, the doubled symmetric part of the drift Jacobian.
pub fn eval_a(sys: &SystemModel, t: f64, x: &[f64]) -> Result<SymmetricMatrix> {
    Ok(sym_part(&sys.drift_jacobian_at(t, x)?))
}

/// R(t, x) = J_Gᵀ + J_G, the doubled symmetric part of the control Jacobian.
pub fn eval_r(sys: &SystemModel, t: f64, x: &[f64]) -> Result<SymmetricMatrix> {
    Ok(sym_part(&sys.control_jacobian_at(t, x)?))
}

/// Joint right-hand side of the base and variational dynamics:
///
/// base′ = f(t, x) + u·G(t, x),
/// displacement′ = (J_f(t, x) + u·J_G(t, x))·δx.
pub fn augmented_rhs(
    sys: &SystemModel,
    t: f64,
    u: f64,
    x: &[f64],
    dx: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if dx.len() != sys.dimension() {
        return Err(Error::InvalidInput(format!(
            "displacement has dimension {}, model expects {}",
            dx.len(),
            sys.dimension()
        )));
    }
    if !u.is_finite() {
        return Err(Error::Evaluation {
            t,
            detail: "input u is non-finite".into(),
        });
    }
    let f = sys.drift_at(t, x)?;
    let g = sys.control_dir_at(t, x)?;
    let base: Vec<f64> = f.iter().zip(&g).map(|(fi, gi)| fi + u * gi).collect();

    let jf = sys.drift_jacobian_at(t, x)?;
    let jg = sys.control_jacobian_at(t, x)?;
    let j = jf.add_scaled(u, &jg)?;
    let disp = j.mul_vec(dx);
    if base.iter().chain(disp.iter()).any(|c| !c.is_finite()) {
        return Err(Error::Evaluation {
            t,
            detail: "augmented right-hand side is non-finite".into(),
        });
    }
    Ok((base, disp))
}

/// Compares both Jacobian callables against central finite differences of
/// the corresponding vector fields at one point.  Returns the worst
/// entry-wise deviation, relative when the analytic entry is of order one or
/// larger, absolute otherwise.
pub fn check_jacobian_consistency(sys: &SystemModel, t: f64, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput("finite-difference step must be > 0".into()));
    }
    sys.check_state(x)?;
    let n = sys.dimension();
    let mut worst = 0.0f64;
    let pairs: [(&MatrixField, &VectorField, &str); 2] = [
        (&sys.drift_jacobian, &sys.drift, "drift"),
        (&sys.control_jacobian, &sys.control_dir, "control direction"),
    ];
    for (jac, field, what) in pairs {
        let analytic = sys.jacobian_at(jac, t, x, what)?;
        for col in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[col] += h;
            xm[col] -= h;
            let fp = self_finite(field(t, &xp), t, what)?;
            let fm = self_finite(field(t, &xm), t, what)?;
            for row in 0..n {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let a = analytic.get(row, col);
                let dev = (fd - a).abs() / fd.abs().max(1.0);
                worst = worst.max(dev);
            }
        }
    }
    Ok(worst)
}

fn self_finite(v: Vec<f64>, t: f64, what: &str) -> Result<Vec<f64>> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Evaluation {
            t,
            detail: format!("{what} returned a non-finite value"),
        });
    }
    Ok(v)
}

/// Bundled example systems, by catalog name: `eq47`, `eq48`, `eq49`.
///
/// `eq47` defaults to zero additive forcing; use [`builtin_with_forcing`] to
/// select a different one.
pub fn builtin(name: &str) -> Result<SystemModel> {
    builtin_with_forcing(name, Forcing::Zero)
}

pub fn builtin_with_forcing(name: &str, forcing: Forcing) -> Result<SystemModel> {
    match name {
        "eq47" => Ok(eq47(forcing)),
        "eq48" => Ok(eq48()),
        "eq49" => Ok(eq49()),
        other => Err(Error::Config(format!(
            "unknown builtin system '{other}' (available: eq47, eq48, eq49)"
        ))),
    }
}

/// Scalar entrainment example: ẋ = x + u·sin(t)·x + g(t).
///
/// R(t, x) = 2·sin(t) independently of x, so the envelopes are exact; the
/// declared period 2π is kept only when the forcing itself is 2π-periodic
/// (checked by sampling).
pub fn eq47(forcing: Forcing) -> SystemModel {
    let two_pi = 2.0 * std::f64::consts::PI;
    let periodic = forcing_is_periodic(&forcing, two_pi);
    let g = forcing.clone();
    let mut b = SystemModel::builder(1)
        .drift(Arc::new(move |t, x| vec![x[0] + g.eval(t)]))
        .control_dir(Arc::new(|t: f64, x: &[f64]| vec![t.sin() * x[0]]))
        .drift_jacobian(Arc::new(|_t, _x| vec![1.0]))
        .control_jacobian(Arc::new(|t: f64, _x: &[f64]| vec![t.sin()]))
        .envelope_r_min(Arc::new(|t: f64| 2.0 * t.sin()))
        .envelope_r_max(Arc::new(|t: f64| 2.0 * t.sin()))
        .envelope_a_max(Arc::new(|_t| 2.0))
        .state_box(vec![(-10.0, 10.0)]);
    if periodic {
        b = b.period(two_pi);
    }
    b.build().expect("builtin eq47 is well-formed")
}

/// Planar relaxation-oscillator example:
/// ẋ₁ = x₁ − x₁³/3 − x₂ + u·x₁, ẋ₂ = −x₂ + x₁.
///
/// R = [[2, 0], [0, 0]] is only positive semidefinite, so no sign-definite
/// interval exists for any m > 0.
pub fn eq48() -> SystemModel {
    SystemModel::builder(2)
        .drift(Arc::new(|_t, x: &[f64]| {
            vec![x[0] - x[0].powi(3) / 3.0 - x[1], -x[1] + x[0]]
        }))
        .control_dir(Arc::new(|_t, x: &[f64]| vec![x[0], 0.0]))
        .drift_jacobian(Arc::new(|_t, x: &[f64]| {
            vec![1.0 - x[0] * x[0], -1.0, 1.0, -1.0]
        }))
        .control_jacobian(Arc::new(|_t, _x| vec![1.0, 0.0, 0.0, 0.0]))
        .envelope_r_min(Arc::new(|_t| 0.0))
        .envelope_r_max(Arc::new(|_t| 2.0))
        .envelope_a_max(Arc::new(|_t| 2.0))
        .state_box(vec![(-3.0, 3.0), (-3.0, 3.0)])
        .build()
        .expect("builtin eq48 is well-formed")
}

/// Scalar bistable example with additive control: ẋ = x − x³/3 + u.
///
/// The control direction is constant, so R ≡ 0 and the sign-definiteness
/// hypothesis can never hold; the system is used for the negative gates.
pub fn eq49() -> SystemModel {
    SystemModel::builder(1)
        .drift(Arc::new(|_t, x: &[f64]| vec![x[0] - x[0].powi(3) / 3.0]))
        .control_dir(Arc::new(|_t, _x| vec![1.0]))
        .drift_jacobian(Arc::new(|_t, x: &[f64]| vec![1.0 - x[0] * x[0]]))
        .control_jacobian(Arc::new(|_t, _x| vec![0.0]))
        .envelope_r_min(Arc::new(|_t| 0.0))
        .envelope_r_max(Arc::new(|_t| 0.0))
        .envelope_a_max(Arc::new(|_t| 2.0))
        .state_box(vec![(-3.0, 3.0)])
        .build()
        .expect("builtin eq49 is well-formed")
}

fn forcing_is_periodic(forcing: &Forcing, period: f64) -> bool {
    match forcing {
        Forcing::Zero => true,
        Forcing::TCosT => false,
        Forcing::Custom(f) => {
            let samples = 129;
            (0..samples).all(|i| {
                let t = period * i as f64 / (samples - 1) as f64;
                let a = f(t);
                let b = f(t + period);
                (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn eval_a_matches_known_forms() {
        let s47 = eq47(Forcing::Zero);
        let a = eval_a(&s47, 3.7, &[5.0]).unwrap();
        assert_eq!(a.get(0, 0), 2.0);

        let s48 = eq48();
        let a = eval_a(&s48, 0.0, &[1.0, -0.5]).unwrap();
        assert_abs_diff_eq!(a.get(0, 0), 0.0, epsilon = 1e-15);
        assert_eq!(a.get(0, 1), 0.0); // -1 and +1 cancel in the symmetric part
        assert_eq!(a.get(1, 1), -2.0);

        let s49 = eq49();
        let a = eval_a(&s49, 0.0, &[0.0]).unwrap();
        assert_eq!(a.get(0, 0), 2.0);
    }

    #[test]
    fn eval_r_matches_known_forms() {
        let s47 = eq47(Forcing::Zero);
        let r = eval_r(&s47, PI / 2.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(r.get(0, 0), 2.0, epsilon = 1e-15);

        let s48 = eq48();
        let r = eval_r(&s48, 1.0, &[0.3, 0.7]).unwrap();
        assert_eq!(
            [r.get(0, 0), r.get(0, 1), r.get(1, 0), r.get(1, 1)],
            [2.0, 0.0, 0.0, 0.0]
        );

        let s49 = eq49();
        assert_eq!(eval_r(&s49, 0.0, &[1.0]).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn augmented_rhs_examples() {
        let s49 = eq49();
        let (base, disp) = augmented_rhs(&s49, 0.0, 3.0, &[0.0], &[1.0]).unwrap();
        assert_eq!(base, vec![3.0]);
        assert_eq!(disp, vec![1.0]);

        let s47 = eq47(Forcing::Zero);
        let (base, disp) = augmented_rhs(&s47, 0.0, 0.0, &[1.0], &[1.0]).unwrap();
        assert_eq!(base, vec![1.0]);
        assert_eq!(disp, vec![1.0]);

        let s48 = eq48();
        let (base, disp) = augmented_rhs(&s48, 0.0, -2.0, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(base[0], 1.0 - 1.0 / 3.0 - 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(base[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(disp[0], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(disp[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn builtin_envelopes_and_periods() {
        let s47 = builtin("eq47").unwrap();
        assert_eq!((s47.envelope_a_max)(17.3), 2.0);
        assert_abs_diff_eq!((s47.envelope_r_min)(PI / 6.0), 1.0, epsilon = 1e-12);
        assert_eq!(s47.period, Some(2.0 * PI));

        let aperiodic = builtin_with_forcing("eq47", Forcing::TCosT).unwrap();
        assert_eq!(aperiodic.period, None);

        let periodic_custom =
            builtin_with_forcing("eq47", Forcing::Custom(Arc::new(|t: f64| t.sin()))).unwrap();
        assert_eq!(periodic_custom.period, Some(2.0 * PI));

        let s48 = builtin("eq48").unwrap();
        assert_eq!((s48.envelope_r_min)(12.0), 0.0);
        assert_eq!((s48.envelope_r_max)(12.0), 2.0);
        assert_eq!(s48.period, None);

        let s49 = builtin("eq49").unwrap();
        assert_eq!((s49.envelope_r_min)(0.0), 0.0);
        assert_eq!((s49.envelope_r_max)(0.0), 0.0);
        assert_eq!(s49.period, None);
    }

    #[test]
    fn unknown_builtin_is_a_config_error() {
        assert!(matches!(builtin("eq50"), Err(Error::Config(_))));
    }

    #[test]
    fn jacobians_agree_with_finite_differences() {
        let s47 = eq47(Forcing::Zero);
        assert!(check_jacobian_consistency(&s47, 1.0, &[2.0], 1e-5).unwrap() < 1e-8);

        let s48 = eq48();
        assert!(check_jacobian_consistency(&s48, 0.3, &[0.7, -0.4], 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn constant_drift_has_exact_zero_jacobian() {
        let sys = SystemModel::builder(1)
            .drift(Arc::new(|_t, _x| vec![4.0]))
            .control_dir(Arc::new(|_t, _x| vec![1.0]))
            .drift_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .control_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .envelope_r_min(Arc::new(|_| 0.0))
            .envelope_r_max(Arc::new(|_| 0.0))
            .envelope_a_max(Arc::new(|_| 0.0))
            .build()
            .unwrap();
        assert!(check_jacobian_consistency(&sys, 0.0, &[1.0], 1e-5).unwrap() < 1e-10);
    }

    #[test]
    fn wrong_jacobian_is_detected() {
        let sys = SystemModel::builder(1)
            .drift(Arc::new(|_t, x: &[f64]| vec![x[0]]))
            .control_dir(Arc::new(|_t, _x| vec![0.0]))
            .drift_jacobian(Arc::new(|_t, _x| vec![2.0])) // off by +1
            .control_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .envelope_r_min(Arc::new(|_| 0.0))
            .envelope_r_max(Arc::new(|_| 0.0))
            .envelope_a_max(Arc::new(|_| 2.0))
            .build()
            .unwrap();
        let dev = check_jacobian_consistency(&sys, 0.0, &[1.0], 1e-5).unwrap();
        assert!((dev - 1.0).abs() < 1e-6, "deviation {dev} should be about 1");
    }

    #[test]
    fn declared_period_matches_sampled_drift() {
        let sys = eq47(Forcing::Zero);
        let t_grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.37).collect();
        let period = sys.period.unwrap();
        for &t in &t_grid {
            let a = sys.drift_at(t, &[1.3]).unwrap();
            let b = sys.drift_at(t + period, &[1.3]).unwrap();
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            let ga = sys.control_dir_at(t, &[1.3]).unwrap();
            let gb = sys.control_dir_at(t + period, &[1.3]).unwrap();
            assert_abs_diff_eq!(ga[0], gb[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_evaluation_is_reported_with_location() {
        let sys = SystemModel::builder(1)
            .drift(Arc::new(|t: f64, _x: &[f64]| vec![1.0 / (t - 2.0) * 0.0 + (t - 2.0).recip()]))
            .control_dir(Arc::new(|_t, _x| vec![0.0]))
            .drift_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .control_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .envelope_r_min(Arc::new(|_| 0.0))
            .envelope_r_max(Arc::new(|_| 0.0))
            .envelope_a_max(Arc::new(|_| 0.0))
            .build()
            .unwrap();
        match sys.drift_at(2.0, &[0.0]) {
            Err(Error::Evaluation { t, .. }) => assert_eq!(t, 2.0),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }
}
