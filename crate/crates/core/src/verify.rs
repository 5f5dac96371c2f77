//! Certification layer: discrete checks of the Lyapunov decay inequality,
//! the contraction and incremental-stability bounds with explicit
//! constants, geometric convergence of the period map, and least-squares
//! estimation of empirical decay rates.

use crate::error::{Error, Result};
use crate::intervals::IntervalStructure;
use crate::signal::{GainSignal, InputSignal};
use crate::sim::{integrate, uniform_grid, IntegrateOptions, LyapunovTrace, Trajectory};
use crate::synth::SynthesisConstants;
use crate::sysmodel::SystemModel;
use crate::SCHEMA_VERSION;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Multiplicative slack applied to every exponential-bound check.
pub const DEFAULT_SLACK: f64 = 1e-6;
/// Absolute floor on distances, below which comparisons are noise.
pub const DISTANCE_FLOOR: f64 = 1e-12;
/// Distances below this are treated as fully converged.
pub const CONVERGED: f64 = 1e-13;

const MARGIN_FLOOR: f64 = -700.0;

/// Outcome of one bound check.  `worst_margin` is the largest logarithmic
/// excess of the checked quantity over its (slackened) bound, so the check
/// passes exactly when it is ≤ 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
}

impl CheckResult {
    fn from_worst(name: impl Into<String>, worst: f64, location: Option<f64>) -> Self {
        let worst = worst.max(MARGIN_FLOOR);
        CheckResult {
            name: name.into(),
            pass: worst <= 0.0,
            worst_margin: worst,
            location,
        }
    }
}

/// Checks V(t₂) ≤ V(t₁)·e^{−α(t₂−t₁)}·(1+tol) across every consecutive
/// sample pair of the trace.
pub fn check_certificate(trace: &LyapunovTrace, alpha: f64, tol: f64) -> CheckResult {
    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    for i in 0..trace.times.len().saturating_sub(1) {
        let (t1, t2) = (trace.times[i], trace.times[i + 1]);
        let (v1, v2) = (trace.values[i], trace.values[i + 1]);
        if v1 <= 0.0 {
            continue;
        }
        let margin = if v2 <= 0.0 {
            MARGIN_FLOOR
        } else {
            v2.ln() - v1.ln() + alpha * (t2 - t1) - (1.0 + tol).ln()
        };
        if margin > worst {
            worst = margin;
            loc = Some(t2);
        }
    }
    CheckResult::from_worst("Lyapunov decay certificate", worst, loc)
}

/// Core of the exponential-bound checks: for every ordered grid pair
/// (t₀ ≤ t) requires value(t) ≤ k·(1+slack)·value(t₀)·e^{−rate·(t−t₀)}
/// plus the absolute floor, via a running minimum of the growth-corrected
/// series.
fn decay_bound_excess(
    times: &[f64],
    values: &[f64],
    k: f64,
    rate: f64,
    slack: f64,
    floor: f64,
) -> (f64, Option<f64>) {
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut run_min = f64::INFINITY;
    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    for (t, v) in times.iter().zip(values) {
        let growth = (rate * (t - t0)).exp();
        run_min = run_min.min(v * growth);
        let bound = k * (1.0 + slack) * run_min / growth + floor;
        let margin = if *v <= 0.0 { MARGIN_FLOOR } else { (v / bound).ln() };
        if margin > worst {
            worst = margin;
            loc = Some(*t);
        }
    }
    (worst, loc)
}

/// Definition-style contraction check: |δx(t)| ≤ k·|δx(t₀)|·e^{−λ(t−t₀)}
/// for every trajectory and every ordered pair of grid times.
pub fn check_contraction(trajs: &[Trajectory], overshoot: f64, rate: f64) -> CheckResult {
    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    for traj in trajs {
        let norms = traj.displacement_norms();
        let (w, l) = decay_bound_excess(
            &traj.times,
            &norms,
            overshoot,
            rate,
            DEFAULT_SLACK,
            DISTANCE_FLOOR,
        );
        if w > worst {
            worst = w;
            loc = l;
        }
    }
    CheckResult::from_worst("contraction bound on displacements", worst, loc)
}

/// Incremental-stability check on trajectory pairs:
/// |x₁(t) − x₂(t)| ≤ k·|x₁(t₀) − x₂(t₀)|·e^{−λ(t−t₀)} over all grid pairs.
pub fn check_ies(
    pairs: &[(Trajectory, Trajectory)],
    overshoot: f64,
    rate: f64,
) -> Result<CheckResult> {
    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    for (a, b) in pairs {
        let dist = a.distances_to(b)?;
        let (w, l) = decay_bound_excess(&a.times, &dist, overshoot, rate, DEFAULT_SLACK, DISTANCE_FLOOR);
        if w > worst {
            worst = w;
            loc = l;
        }
    }
    Ok(CheckResult::from_worst(
        "incremental exponential stability bound",
        worst,
        loc,
    ))
}

/// Least-squares exponential fit of a positive series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecayFit {
    pub lambda_hat: f64,
    /// Fitted pre-factor, anchored at the first positive sample and never
    /// reported below 1.
    pub overshoot_hat: f64,
    pub r_squared: f64,
    pub window_used: (f64, f64),
}

/// Fits log(value) = b − λ·t by least squares over the positive samples.
pub fn fit_decay(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::InvalidInput("times/values length mismatch".into()));
    }
    let samples: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if samples.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 positive samples for a decay fit, have {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_y = samples.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, y) in &samples {
        stt += (t - mean_t) * (t - mean_t);
        sty += (t - mean_t) * (y - mean_y);
    }
    if stt <= 0.0 {
        return Err(Error::InsufficientData(
            "all samples share one time instant".into(),
        ));
    }
    let slope = sty / stt;
    let fitted_at = |t: f64| mean_y + slope * (t - mean_t);
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (t, y) in &samples {
        ss_res += (y - fitted_at(*t)) * (y - fitted_at(*t));
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot <= 1e-30 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let (t_first, y_first) = samples[0];
    let overshoot_hat = (fitted_at(t_first) - y_first).exp().max(1.0);
    Ok(DecayFit {
        lambda_hat: -slope,
        overshoot_hat,
        r_squared,
        window_used: (t_first, samples.last().unwrap().0),
    })
}

/// Period-map convergence: distances between states one period apart must
/// shrink geometrically (ratio ≤ ratioBound) past the first period.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PeriodicConvergence {
    pub check: CheckResult,
    /// dₙ = |x(t₀+(n+1)T) − x(t₀+nT)|
    pub distances: Vec<f64>,
    /// dₙ₊₁/dₙ for n ≥ 1 where the denominator is meaningful.
    pub ratios: Vec<f64>,
    /// Geometric extrapolation of the state the period map converges to.
    pub fixed_point: Vec<f64>,
}

pub fn check_periodic_convergence(
    traj: &Trajectory,
    period: f64,
    ratio_bound: f64,
) -> Result<PeriodicConvergence> {
    if !(period > 0.0) {
        return Err(Error::InvalidInput("period must be positive".into()));
    }
    if !(ratio_bound > 0.0 && ratio_bound < 1.0) {
        return Err(Error::InvalidInput("ratio bound must lie in (0, 1)".into()));
    }
    let t0 = *traj
        .times
        .first()
        .ok_or_else(|| Error::InvalidInput("trajectory is empty".into()))?;
    let t_end = *traj.times.last().unwrap();
    let n_periods = ((t_end - t0) / period + 1e-9).floor() as usize;
    if n_periods < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 periods, trajectory spans {n_periods}"
        )));
    }
    let tol = 1e-9 * period.max(1.0);
    let mut marks = Vec::with_capacity(n_periods + 1);
    for j in 0..=n_periods {
        let target = t0 + j as f64 * period;
        let idx = traj
            .times
            .partition_point(|t| *t < target - tol)
            .min(traj.times.len() - 1);
        if (traj.times[idx] - target).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "sampling grid is not commensurate with the period near t = {target}"
            )));
        }
        marks.push(idx);
    }
    let dist = |i: usize, j: usize| -> f64 {
        traj.states[marks[i]]
            .iter()
            .zip(&traj.states[marks[j]])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let distances: Vec<f64> = (0..n_periods).map(|n| dist(n + 1, n)).collect();

    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    let mut ratios = Vec::new();
    for n in 1..distances.len().saturating_sub(1) {
        if distances[n] < CONVERGED || distances[n + 1] < CONVERGED {
            continue; // early-converged
        }
        let ratio = distances[n + 1] / distances[n];
        ratios.push(ratio);
        let margin = (ratio / ratio_bound).ln();
        if margin > worst {
            worst = margin;
            loc = Some(t0 + (n + 2) as f64 * period);
        }
    }

    let last = traj.states[marks[n_periods]].clone();
    let prev = &traj.states[marks[n_periods - 1]];
    let dn = distances[n_periods - 1];
    let dn_prev = distances[n_periods - 2];
    let fixed_point = if dn < CONVERGED || dn_prev < CONVERGED {
        last
    } else {
        let rho = (dn / dn_prev).clamp(0.0, 0.99);
        last.iter()
            .zip(prev)
            .map(|(l, p)| l + (l - p) * rho / (1.0 - rho))
            .collect()
    };

    Ok(PeriodicConvergence {
        check: CheckResult::from_worst("period-map geometric convergence", worst, loc),
        distances,
        ratios,
        fixed_point,
    })
}

/// Empirical confirmation that a certified contraction yields incremental
/// stability with exactly the predicted constants: overshoot 1/√(gain
/// floor) and rate α/2 — no refitting.  Initial pairs are drawn from the
/// system's state box with a seeded ChaCha8 generator.
#[allow(clippy::too_many_arguments)]
pub fn theorem_one_empirical(
    sys: &SystemModel,
    input: &dyn InputSignal,
    gain: &dyn GainSignal,
    alpha: f64,
    span: (f64, f64),
    trials: usize,
    seed: u64,
    opts: &IntegrateOptions,
) -> Result<CheckResult> {
    let boxes = sys.state_box.clone().ok_or_else(|| {
        Error::InvalidInput("system has no state box to sample initial conditions from".into())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = uniform_grid(span, 512);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        boxes
            .iter()
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect()
    };
    let zeros = vec![0.0; sys.dimension()];
    let mut pairs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let xa = draw(&mut rng);
        let xb = draw(&mut rng);
        let ta = integrate(sys, input, &xa, &zeros, span, &grid, opts)?;
        let tb = integrate(sys, input, &xb, &zeros, span, &grid, opts)?;
        pairs.push((ta, tb));
    }
    // Distances that fall below the integrator's own error scale are
    // numerically indistinguishable from zero; widen the additive floor
    // accordingly so solver noise cannot fail the bound.
    let mut scale: f64 = 0.0;
    for (a, b) in &pairs {
        for x in a.states.iter().chain(b.states.iter()) {
            for v in x {
                scale = scale.max(v.abs());
            }
        }
    }
    let noise_floor = DISTANCE_FLOOR.max(100.0 * opts.abs_tol.max(opts.rel_tol * scale));
    let k_pred = 1.0 / gain.floor().sqrt();
    let rate = alpha / 2.0;
    let mut worst = MARGIN_FLOOR;
    let mut loc = None;
    for (a, b) in &pairs {
        let dist = a.distances_to(b)?;
        let (w, l) =
            decay_bound_excess(&a.times, &dist, k_pred, rate, DEFAULT_SLACK, noise_floor);
        if w > worst {
            worst = w;
            loc = l;
        }
    }
    Ok(CheckResult::from_worst(
        "incremental stability with predicted constants",
        worst,
        loc,
    ))
}

/// Echo of the constants a verification ran with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsEcho {
    pub alpha: f64,
    pub c: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub k: f64,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

impl ConstantsEcho {
    pub fn new(structure: &IntervalStructure, constants: &SynthesisConstants) -> Self {
        ConstantsEcho {
            alpha: constants.alpha,
            c: constants.c,
            m: structure.m,
            big_m: structure.big_m,
            k: structure.min_even_length,
            l: structure.max_odd_length,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedDecayFit {
    pub name: String,
    #[serde(flatten)]
    pub fit: DecayFit,
}

/// The complete outcome of a verification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationReport {
    pub schema_version: u32,
    pub checks: Vec<CheckResult>,
    pub decay_fits: Vec<NamedDecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants_used: Option<ConstantsEcho>,
    pub certification_scope: String,
    pub sampling_note: String,
}

impl VerificationReport {
    pub fn new(scope: impl Into<String>, sampling_note: impl Into<String>) -> Self {
        VerificationReport {
            schema_version: SCHEMA_VERSION,
            checks: Vec::new(),
            decay_fits: Vec::new(),
            constants_used: None,
            certification_scope: scope.into(),
            sampling_note: sampling_note.into(),
        }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("failed to serialize report: {e}")))
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scope: {}\n", self.certification_scope));
        if let Some(c) = &self.constants_used {
            out.push_str(&format!(
                "constants: alpha={:.6}, c={:.6}, m={:.6}, M={:.6}, k={:.6}",
                c.alpha, c.c, c.m, c.big_m, c.k
            ));
            if let Some(l) = c.l {
                out.push_str(&format!(", L={l:.6}"));
            }
            out.push('\n');
        }
        for check in &self.checks {
            out.push_str(&format!(
                "[{}] {} (worst margin {:+.3e}{})\n",
                if check.pass { "PASS" } else { "FAIL" },
                check.name,
                check.worst_margin,
                check
                    .location
                    .map_or(String::new(), |t| format!(" at t = {t:.6}")),
            ));
        }
        for f in &self.decay_fits {
            out.push_str(&format!(
                "fit {}: rate {:.6}, overshoot {:.6}, r^2 {:.6}\n",
                f.name, f.fit.lambda_hat, f.fit.overshoot_hat, f.fit.r_squared
            ));
        }
        out.push_str(&format!("sampling: {}\n", self.sampling_note));
        out.push_str(&format!(
            "overall: {}\n",
            if self.pass() { "PASS" } else { "FAIL" }
        ));
        out
    }
}
