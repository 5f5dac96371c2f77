//! Trajectory simulation: an embedded Runge–Kutta 5(4) pair (Dormand–Prince
//! coefficients) with PI step-size control and a fifth-order dense-output
//! interpolant.  The base state and the variational displacement are always
//! integrated jointly as one 2n-dimensional system, and integration restarts
//! exactly at input-piece junctions so every step sees a smooth right-hand
//! side.

use crate::error::{Error, Result};
use crate::signal::{GainSignal, InputSignal};
use crate::sysmodel::SystemModel;
use std::io::{self, Write};

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// The last row of A is the 5th-order weight vector, so stage 7 lands on the
// accepted solution (FSAL).  E holds the difference between the 5th- and
// 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output coefficients.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2; // max shrink per step
const FAC_MAX: f64 = 10.0; // max growth per step

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// First trial step; defaults to span/1000.
    pub initial_step: Option<f64>,
    /// Hard cap on the step size; synthesis pipelines set this to an eighth
    /// of the longest indefinite gap so blend pieces are always resolved.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: None,
            max_step: None,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest scaled local error estimate among accepted steps (≤ 1 by
    /// construction unless the controller was forced to the minimum step).
    pub max_error_estimate: f64,
    pub rhs_evaluations: usize,
}

/// A sampled solution of the augmented (base + displacement) dynamics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub displacements: Vec<Vec<f64>>,
    pub input_values: Vec<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn dimension(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Euclidean norms |δx(t_i)|.
    pub fn displacement_norms(&self) -> Vec<f64> {
        self.displacements.iter().map(|d| norm(d)).collect()
    }

    /// Pointwise distances |x(t_i) − other.x(t_i)|; the two trajectories
    /// must share the same sampling grid.
    pub fn distances_to(&self, other: &Trajectory) -> Result<Vec<f64>> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::InvalidInput(
                "trajectories are sampled on different grids".into(),
            ));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Uniform sampling grid with exact endpoints.
pub fn uniform_grid(span: (f64, f64), points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs at least two points");
    let (a, b) = span;
    let mut g: Vec<f64> = (0..points)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect();
    g[0] = a;
    *g.last_mut().unwrap() = b;
    g
}

struct AugmentedRhs<'a> {
    sys: &'a SystemModel,
    input: &'a dyn InputSignal,
}

impl AugmentedRhs<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dimension()
    }

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.sys.dimension();
        let u = self.input.value(t);
        let (base, disp) = crate::sysmodel::augmented_rhs(self.sys, t, u, &y[..n], &y[n..])?;
        let mut dy = base;
        dy.extend(disp);
        Ok(dy)
    }
}

/// Integrates the joint base/variational dynamics over `span`, sampling the
/// dense output on `grid` (strictly increasing, within the span).  A zero
/// `dx0` yields an identically zero displacement trace.
pub fn integrate(
    sys: &SystemModel,
    input: &dyn InputSignal,
    x0: &[f64],
    dx0: &[f64],
    span: (f64, f64),
    grid: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let n = sys.dimension();
    if x0.len() != n || dx0.len() != n {
        return Err(Error::InvalidInput(format!(
            "initial state/displacement must have dimension {n}"
        )));
    }
    if !(span.1 > span.0) || !span.0.is_finite() || !span.1.is_finite() {
        return Err(Error::InvalidInput("span must be a finite, increasing pair".into()));
    }
    if !(opts.rel_tol > 0.0) || !(opts.abs_tol > 0.0) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    let span_len = span.1 - span.0;
    let time_tol = 1e-12 * span_len.max(1.0);
    if grid.is_empty() {
        return Err(Error::InvalidInput("output grid is empty".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput("output grid must be strictly increasing".into()));
        }
    }
    if grid[0] < span.0 - time_tol || *grid.last().unwrap() > span.1 + time_tol {
        return Err(Error::InvalidInput("output grid must lie within the span".into()));
    }

    // Segment boundaries: span endpoints plus input junctions.
    let mut bounds = vec![span.0];
    let mut junctions = input.breakpoints_in(span);
    junctions.retain(|t| *t > span.0 + time_tol && *t < span.1 - time_tol);
    junctions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for t in junctions {
        if t - bounds.last().unwrap() > time_tol {
            bounds.push(t);
        }
    }
    bounds.push(span.1);

    let rhs = AugmentedRhs { sys, input };
    let dim = rhs.dim();
    let mut y: Vec<f64> = x0.iter().chain(dx0.iter()).copied().collect();
    let mut stats = StepStats::default();

    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut displacements = Vec::with_capacity(grid.len());
    let mut input_values = Vec::with_capacity(grid.len());
    let mut cursor = 0usize;

    let emit = |t: f64, y: &[f64], times: &mut Vec<f64>, states: &mut Vec<Vec<f64>>,
                    displacements: &mut Vec<Vec<f64>>, input_values: &mut Vec<f64>| {
        times.push(t);
        states.push(y[..n].to_vec());
        displacements.push(y[n..].to_vec());
        input_values.push(input.value(t));
    };

    // Grid points at (or numerically before) the initial time.
    while cursor < grid.len() && grid[cursor] <= span.0 + time_tol {
        emit(grid[cursor], &y, &mut times, &mut states, &mut displacements, &mut input_values);
        cursor += 1;
    }

    let default_h = span_len / 1000.0;
    let mut h = opts.initial_step.unwrap_or(default_h).abs();
    if let Some(hm) = opts.max_step {
        if !(hm > 0.0) {
            return Err(Error::InvalidInput("max_step must be positive".into()));
        }
        h = h.min(hm);
    }
    let mut facold: f64 = 1e-4;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    for seg in bounds.windows(2) {
        let (seg_start, seg_end) = (seg[0], seg[1]);
        let mut t = seg_start;
        // Fresh derivative at the segment start: the input may jump in
        // higher derivatives across the junction, so FSAL does not carry.
        k[0] = rhs.eval(t, &y)?;
        stats.rhs_evaluations += 1;

        while t < seg_end - time_tol {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::IntegrationFailure {
                    last_t: t,
                    detail: format!("exceeded {} steps", opts.max_steps),
                });
            }
            h = h.min(seg_end - t);
            if let Some(hm) = opts.max_step {
                h = h.min(hm);
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::IntegrationFailure {
                    last_t: t,
                    detail: "step size underflow".into(),
                });
            }

            // Stages 2..7.
            let mut failed_eval: Option<Error> = None;
            let mut ytmp = vec![0.0; dim];
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * k[j][i];
                    }
                    ytmp[i] = y[i] + h * acc;
                }
                match rhs.eval(t + C[s] * h, &ytmp) {
                    Ok(v) => k[s] = v,
                    Err(e) => {
                        failed_eval = Some(e);
                        break;
                    }
                }
                stats.rhs_evaluations += 1;
            }
            if let Some(e) = failed_eval {
                // The model blew up inside the step; if the state is already
                // huge report divergence, otherwise bubble the evaluation
                // error up unchanged.
                if y.iter().any(|c| c.abs() > 1e100) {
                    return Err(Error::Divergence { t });
                }
                return Err(e);
            }
            // ytmp now holds the stage-7 state, which is the 5th-order solution.
            let y_new = ytmp;
            let k_new = k[6].clone(); // f(t+h, y_new), FSAL candidate

            let mut err_sq = 0.0;
            for i in 0..dim {
                let sk = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                err_sq += (h * e / sk) * (h * e / sk);
            }
            let err = (err_sq / dim as f64).sqrt();

            if !err.is_finite() {
                if y.iter().any(|c| c.abs() > 1e100) {
                    return Err(Error::Divergence { t });
                }
                stats.rejected += 1;
                h *= 0.1;
                continue;
            }

            let fac11 = err.powf(EXPO1);
            if err <= 1.0 {
                // Accepted.
                stats.accepted += 1;
                stats.max_error_estimate = stats.max_error_estimate.max(err);
                let t_new = if seg_end - (t + h) <= time_tol { seg_end } else { t + h };

                // Dense output coefficients for this step.
                let mut c0 = Vec::with_capacity(dim);
                let mut c1 = Vec::with_capacity(dim);
                let mut c2 = Vec::with_capacity(dim);
                let mut c3 = Vec::with_capacity(dim);
                let mut c4 = Vec::with_capacity(dim);
                for i in 0..dim {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    let mut dsum = 0.0;
                    for j in 0..7 {
                        dsum += D[j] * k[j][i];
                    }
                    c0.push(y[i]);
                    c1.push(ydiff);
                    c2.push(bspl);
                    c3.push(ydiff - h * k_new[i] - bspl);
                    c4.push(h * dsum);
                }

                while cursor < grid.len() && grid[cursor] <= t_new + time_tol {
                    let g = grid[cursor];
                    let theta = ((g - t) / h).clamp(0.0, 1.0);
                    if theta >= 1.0 - 1e-12 {
                        emit(g, &y_new, &mut times, &mut states, &mut displacements, &mut input_values);
                    } else {
                        let s1 = 1.0 - theta;
                        let mut yi = Vec::with_capacity(dim);
                        for i in 0..dim {
                            yi.push(
                                c0[i] + theta
                                    * (c1[i] + s1 * (c2[i] + theta * (c3[i] + s1 * c4[i]))),
                            );
                        }
                        emit(g, &yi, &mut times, &mut states, &mut displacements, &mut input_values);
                    }
                    cursor += 1;
                }

                y = y_new;
                t = t_new;
                k[0] = k_new;
                if y.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Divergence { t });
                }
                // Lund stabilization uses the error of the previous
                // accepted step, then records the current one.
                let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                facold = err.max(1e-4);
                h /= fac;
            } else {
                stats.rejected += 1;
                h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            }
        }
    }

    if cursor < grid.len() {
        return Err(Error::IntegrationFailure {
            last_t: *times.last().unwrap_or(&span.0),
            detail: "output grid extends past the integrated span".into(),
        });
    }

    Ok(Trajectory {
        times,
        states,
        displacements,
        input_values,
        stats,
    })
}

/// How ensemble members seed their variational displacement.
#[derive(Debug, Clone)]
pub enum DisplacementPolicy {
    /// Member i starts with the unit basis vector e_(i mod n).
    UnitBasisCycle,
    /// All members share one fixed seed.
    Fixed(Vec<f64>),
    /// No displacement tracking (zero seed).
    None,
}

/// Integrates one trajectory per initial condition on a shared grid.
/// Failures are collected per member rather than aborting the batch.
pub fn ensemble(
    sys: &SystemModel,
    input: &dyn InputSignal,
    initial_conditions: &[Vec<f64>],
    policy: &DisplacementPolicy,
    span: (f64, f64),
    grid: &[f64],
    opts: &IntegrateOptions,
) -> Vec<Result<Trajectory>> {
    let n = sys.dimension();
    initial_conditions
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let dx0 = match policy {
                DisplacementPolicy::UnitBasisCycle => {
                    let mut e = vec![0.0; n];
                    e[i % n] = 1.0;
                    e
                }
                DisplacementPolicy::Fixed(v) => v.clone(),
                DisplacementPolicy::None => vec![0.0; n],
            };
            integrate(sys, input, x0, &dx0, span, grid, opts)
        })
        .collect()
}

/// V(t) = g(t)·|δx(t)|² along a trajectory, with consecutive-sample ratios.
#[derive(Debug, Clone)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub gain_values: Vec<f64>,
    /// ratios[i] = V(t_{i+1})/V(t_i); NaN where the denominator vanishes.
    pub ratios: Vec<f64>,
    pub had_zero: bool,
}

pub fn lyapunov_trace(traj: &Trajectory, gain: &dyn GainSignal) -> Result<LyapunovTrace> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    let mut values = Vec::with_capacity(traj.len());
    let mut gain_values = Vec::with_capacity(traj.len());
    let mut had_zero = false;
    for (t, d) in traj.times.iter().zip(&traj.displacements) {
        let g = gain.value(*t);
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::NumericFailure(format!(
                "gain must be positive and finite, got {g} at t = {t}"
            )));
        }
        let v = g * d.iter().map(|c| c * c).sum::<f64>();
        if v == 0.0 {
            had_zero = true;
        }
        values.push(v);
        gain_values.push(g);
    }
    let ratios = values
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN })
        .collect();
    Ok(LyapunovTrace {
        times: traj.times.clone(),
        values,
        gain_values,
        ratios,
        had_zero,
    })
}

/// Comparison between the squared endpoint distance of two trajectories and
/// the path integral of squared variational displacements along the straight
/// line between their initial conditions.
#[derive(Debug, Clone, Copy)]
pub struct PathIntegralCheck {
    /// |φ(t; x0) − φ(t; x1)|²
    pub lhs: f64,
    /// trapezoid over s of |∂φ/∂s|², seeded with δx(t0) = x0 − x1
    pub rhs: f64,
    pub panels: usize,
}

/// Integrates the variational flow from every node of a uniform grid on the
/// straight segment θ(s) = s·x0 + (1−s)·x1 and compares endpoint distance
/// against the discretized path integral.
pub fn path_integral_check(
    sys: &SystemModel,
    input: &dyn InputSignal,
    x0: &[f64],
    x1: &[f64],
    t0: f64,
    t1: f64,
    panels: usize,
    opts: &IntegrateOptions,
) -> Result<PathIntegralCheck> {
    if panels < 2 {
        return Err(Error::InvalidInput("need at least 2 panels on the s-grid".into()));
    }
    let n = sys.dimension();
    if x0.len() != n || x1.len() != n {
        return Err(Error::InvalidInput(format!("endpoints must have dimension {n}")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidInput("need t1 > t0".into()));
    }
    let dx0: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| a - b).collect();
    let grid = [t0, t1];
    let mut final_disp_sq = Vec::with_capacity(panels + 1);
    let mut first_state: Option<Vec<f64>> = None;
    let mut last_state: Option<Vec<f64>> = None;
    for j in 0..=panels {
        let s = j as f64 / panels as f64;
        let theta: Vec<f64> = x0
            .iter()
            .zip(x1)
            .map(|(a, b)| s * a + (1.0 - s) * b)
            .collect();
        let traj = integrate(sys, input, &theta, &dx0, (t0, t1), &grid, opts)?;
        let end = traj.states.last().unwrap().clone();
        let dend = traj.displacements.last().unwrap();
        final_disp_sq.push(dend.iter().map(|c| c * c).sum::<f64>());
        if j == 0 {
            first_state = Some(end.clone());
        }
        if j == panels {
            last_state = Some(end);
        }
    }
    let a = first_state.unwrap();
    let b = last_state.unwrap();
    let lhs = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>();
    let ds = 1.0 / panels as f64;
    let mut rhs = 0.5 * (final_disp_sq[0] + final_disp_sq[panels]);
    for v in &final_disp_sq[1..panels] {
        rhs += v;
    }
    rhs *= ds;
    Ok(PathIntegralCheck { lhs, rhs, panels })
}

/// Writes a trajectory as CSV: `t, x1..xn, dx1..dxn, u` plus a `V` column
/// when a gain is supplied.  Values carry 17 significant digits so files are
/// byte-identical across reruns and round-trip exactly.
pub fn write_csv<W: Write>(
    traj: &Trajectory,
    gain: Option<&dyn GainSignal>,
    mut out: W,
) -> io::Result<()> {
    let n = traj.dimension();
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",dx{i}"));
    }
    header.push_str(",u");
    if gain.is_some() {
        header.push_str(",V");
    }
    writeln!(out, "{header}")?;
    for idx in 0..traj.len() {
        let t = traj.times[idx];
        let mut row = format!("{t:.16e}");
        for c in &traj.states[idx] {
            row.push_str(&format!(",{c:.16e}"));
        }
        for c in &traj.displacements[idx] {
            row.push_str(&format!(",{c:.16e}"));
        }
        row.push_str(&format!(",{:.16e}", traj.input_values[idx]));
        if let Some(g) = gain {
            let gv = g.value(t);
            let v = gv * traj.displacements[idx].iter().map(|c| c * c).sum::<f64>();
            row.push_str(&format!(",{v:.16e}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{ConstantInput, FnInput, UnitGain, ZeroInput};
    use crate::sysmodel::{self, Forcing};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    /// Bisection root of x³ − 3x − 9 = 0, the equilibrium of the bistable
    /// example under constant input 3.
    fn cubic_root() -> f64 {
        let f = |x: f64| x * x * x - 3.0 * x - 9.0;
        let (mut lo, mut hi) = (2.0, 3.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bistable_converges_to_shifted_equilibrium() {
        let sys = sysmodel::eq49();
        let grid = uniform_grid((0.0, 10.0), 11);
        let traj = integrate(
            &sys,
            &ConstantInput(3.0),
            &[0.0],
            &[0.0],
            (0.0, 10.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let root = cubic_root();
        assert_abs_diff_eq!(traj.states.last().unwrap()[0], root, epsilon = 1e-6);
    }

    #[test]
    fn linear_growth_hits_e() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let grid = uniform_grid((0.0, 1.0), 5);
        let traj = integrate(
            &sys,
            &ZeroInput,
            &[1.0],
            &[1.0],
            (0.0, 1.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(traj.states.last().unwrap()[0], e, epsilon = 1e-8);
        assert_abs_diff_eq!(traj.displacements.last().unwrap()[0], e, epsilon = 1e-8);
        assert!(traj.stats.accepted > 0);
    }

    #[test]
    fn zero_displacement_seed_stays_zero() {
        let sys = sysmodel::eq48();
        let grid = uniform_grid((0.0, 5.0), 21);
        let traj = integrate(
            &sys,
            &ConstantInput(-2.0),
            &[1.0, -1.0],
            &[0.0, 0.0],
            (0.0, 5.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!(traj.displacements.iter().all(|d| d.iter().all(|c| *c == 0.0)));
    }

    #[test]
    fn variational_factor_matches_closed_form() {
        // For the scalar entrainment system with u = -3 sin t the
        // displacement is δx(t) = exp(-t/2 + (3/4) sin 2t) · δx(0).
        let sys = sysmodel::eq47(Forcing::Zero);
        let input = FnInput(|t: f64| -3.0 * t.sin());
        let grid = uniform_grid((0.0, 30.0), 301);
        let traj = integrate(
            &sys,
            &input,
            &[1.0],
            &[1.0],
            (0.0, 30.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        for (t, d) in traj.times.iter().zip(&traj.displacements) {
            let exact = (-t / 2.0 + 0.75 * (2.0 * t).sin()).exp();
            assert_abs_diff_eq!(d[0], exact, epsilon = 1e-7 * (1.0 + exact));
        }
    }

    #[test]
    fn grid_validation() {
        let sys = sysmodel::eq49();
        let opts = IntegrateOptions::default();
        let err = integrate(&sys, &ZeroInput, &[0.0], &[0.0], (0.0, 1.0), &[], &opts);
        assert!(err.is_err());
        let err = integrate(&sys, &ZeroInput, &[0.0], &[0.0], (0.0, 1.0), &[0.5, 0.5], &opts);
        assert!(err.is_err());
        let err = integrate(&sys, &ZeroInput, &[0.0], &[0.0], (0.0, 1.0), &[0.5, 2.0], &opts);
        assert!(err.is_err());
        let err = integrate(&sys, &ZeroInput, &[0.0], &[0.0], (1.0, 1.0), &[1.0], &opts);
        assert!(err.is_err());
    }

    #[test]
    fn finite_time_blowup_is_reported() {
        let sys = crate::sysmodel::SystemModel::builder(1)
            .drift(Arc::new(|_t, x: &[f64]| vec![x[0] * x[0]]))
            .control_dir(Arc::new(|_t, _x| vec![0.0]))
            .drift_jacobian(Arc::new(|_t, x: &[f64]| vec![2.0 * x[0]]))
            .control_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .envelope_r_min(Arc::new(|_| 0.0))
            .envelope_r_max(Arc::new(|_| 0.0))
            .envelope_a_max(Arc::new(|_| f64::MAX))
            .build()
            .unwrap();
        let grid = uniform_grid((0.0, 2.0), 5);
        let res = integrate(
            &sys,
            &ZeroInput,
            &[1.5],
            &[0.0],
            (0.0, 2.0),
            &grid,
            &IntegrateOptions::default(),
        );
        match res {
            Err(Error::Divergence { t }) => assert!(t > 0.5 && t < 0.7, "blowup near 2/3, got {t}"),
            Err(Error::IntegrationFailure { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_refinement_is_consistent() {
        let sys = sysmodel::eq48();
        let grid = [5.0];
        let coarse_opts = IntegrateOptions {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            ..Default::default()
        };
        let fine_opts = IntegrateOptions {
            rel_tol: 5e-7,
            abs_tol: 5e-9,
            ..Default::default()
        };
        let run = |o: &IntegrateOptions| {
            integrate(&sys, &ConstantInput(-2.0), &[2.0, -1.0], &[1.0, 0.0], (0.0, 5.0), &grid, o)
                .unwrap()
                .states
                .last()
                .unwrap()
                .clone()
        };
        let coarse = run(&coarse_opts);
        let fine = run(&fine_opts);
        for (a, b) in coarse.iter().zip(&fine) {
            let allowance = 10.0 * (coarse_opts.rel_tol * a.abs().max(1.0) + coarse_opts.abs_tol);
            assert!((a - b).abs() <= allowance, "refinement moved state by {}", (a - b).abs());
        }
    }

    #[test]
    fn ensemble_policies() {
        let sys = sysmodel::eq48();
        let grid = uniform_grid((0.0, 1.0), 3);
        let ics = vec![vec![0.5, 0.0], vec![-0.5, 0.1], vec![0.0, 0.2]];
        let runs = ensemble(
            &sys,
            &ConstantInput(-2.0),
            &ics,
            &DisplacementPolicy::UnitBasisCycle,
            (0.0, 1.0),
            &grid,
            &IntegrateOptions::default(),
        );
        assert_eq!(runs.len(), 3);
        let t0 = runs[0].as_ref().unwrap();
        let t1 = runs[1].as_ref().unwrap();
        let t2 = runs[2].as_ref().unwrap();
        assert_eq!(t0.displacements[0], vec![1.0, 0.0]);
        assert_eq!(t1.displacements[0], vec![0.0, 1.0]);
        assert_eq!(t2.displacements[0], vec![1.0, 0.0]); // cycles back to e1
        assert_eq!(t0.times, t1.times);
    }

    #[test]
    fn lyapunov_trace_of_pure_growth() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let grid = uniform_grid((0.0, 1.0), 11);
        let traj = integrate(
            &sys,
            &ZeroInput,
            &[1.0],
            &[1.0],
            (0.0, 1.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let trace = lyapunov_trace(&traj, &UnitGain).unwrap();
        assert!(!trace.had_zero);
        // V = |δx|² = e^{2t}; each ratio is e^{2·Δt}.
        let expected = (2.0 * 0.1f64).exp();
        for r in &trace.ratios {
            assert_abs_diff_eq!(*r, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn lyapunov_trace_flags_zero_displacement() {
        let sys = sysmodel::eq49();
        let grid = uniform_grid((0.0, 1.0), 3);
        let traj = integrate(
            &sys,
            &ZeroInput,
            &[1.0],
            &[0.0],
            (0.0, 1.0),
            &grid,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let trace = lyapunov_trace(&traj, &UnitGain).unwrap();
        assert!(trace.had_zero);
        assert!(trace.ratios.iter().all(|r| r.is_nan()));
    }

    #[test]
    fn path_integral_degenerate_pair_is_zero() {
        let sys = sysmodel::eq48();
        let r = path_integral_check(
            &sys,
            &ConstantInput(-2.0),
            &[0.4, 0.2],
            &[0.4, 0.2],
            0.0,
            1.0,
            8,
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn path_integral_equality_for_affine_flow() {
        // The scalar entrainment system is affine in the state, so the flow
        // is affine and the path integrand is constant in s: both sides agree.
        let sys = sysmodel::eq47(Forcing::Zero);
        let input = FnInput(|t: f64| -3.0 * t.sin());
        let r = path_integral_check(
            &sys,
            &input,
            &[2.0],
            &[-1.0],
            0.0,
            5.0,
            64,
            &IntegrateOptions::default(),
        )
        .unwrap();
        assert!(r.lhs > 0.0);
        assert_abs_diff_eq!(r.lhs, r.rhs, epsilon = 1e-6 * r.rhs);
    }

    #[test]
    fn path_integral_inequality_for_contractive_planar_flow() {
        let sys = sysmodel::eq48();
        let opts = IntegrateOptions::default();
        let a =
            path_integral_check(&sys, &ConstantInput(-2.0), &[1.5, -1.0], &[-1.0, 0.5], 0.0, 1.0, 64, &opts)
                .unwrap();
        assert!(a.lhs <= a.rhs * (1.0 + 1e-6), "lhs {} rhs {}", a.lhs, a.rhs);
        // Doubling the s-resolution moves the quadrature by < 1e-4 relative.
        let b =
            path_integral_check(&sys, &ConstantInput(-2.0), &[1.5, -1.0], &[-1.0, 0.5], 0.0, 1.0, 128, &opts)
                .unwrap();
        assert!((a.rhs - b.rhs).abs() <= 1e-4 * b.rhs.max(1e-12));
    }

    #[test]
    fn csv_output_is_deterministic_and_shaped() {
        let sys = sysmodel::eq48();
        let grid = uniform_grid((0.0, 1.0), 5);
        let run = || {
            let traj = integrate(
                &sys,
                &ConstantInput(-2.0),
                &[1.0, 0.5],
                &[1.0, 0.0],
                (0.0, 1.0),
                &grid,
                &IntegrateOptions::default(),
            )
            .unwrap();
            let mut buf = Vec::new();
            write_csv(&traj, Some(&UnitGain), &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,dx1,dx2,u,V");
        assert_eq!(lines.count(), 5);
    }
}
