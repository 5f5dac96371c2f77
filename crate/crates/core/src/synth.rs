//! Constructive synthesis of the open-loop input and the certificate gain:
//! plateau values on the sign-definite intervals, C² quintic blends through
//! the indefinite gaps (forced to zero wherever the relevant envelope loses
//! its sign), an exponential-decay / affine-rise gain, and periodization of
//! both for period-aligned windows.

use crate::error::{Error, Result};
use crate::intervals::{IntervalStructure, TransitionKind, TransitionTimes};
use crate::signal::{GainSignal, InputSignal};
use crate::sysmodel::SystemModel;
use crate::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

/// Quintic smoothstep σ(s) = 6s⁵ − 15s⁴ + 10s³ on [0, 1]: monotone, with
/// σ and its first two derivatives hitting the endpoint values exactly in
/// floating point, which is what makes every junction identity exact.
pub fn smoothstep(s: f64) -> f64 {
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

pub fn smoothstep_d1(s: f64) -> f64 {
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

pub fn smoothstep_d2(s: f64) -> f64 {
    60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

/// The scalar constants the certificate is built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthesisConstants {
    pub alpha: f64,
    pub margin: f64,
    pub c: f64,
    /// One amplitude per odd-type segment, in time order (edge gaps
    /// included).
    pub c_odd: Vec<f64>,
}

/// c = margin·(α + e^{(M+α)·L}/k) where L is the longest odd-type segment
/// (margin·α when there is none), then per-segment amplitudes
/// c_seg = margin·max over adjacent definite intervals of (c + k₂ᵢ)/m²,
/// with a missing neighbor's term dropped at window edges.
pub fn choose_constants(
    structure: &IntervalStructure,
    alpha: f64,
    margin: f64,
) -> Result<SynthesisConstants> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput("alpha must be positive".into()));
    }
    if !(margin > 1.0) {
        return Err(Error::InvalidInput("margin must exceed 1".into()));
    }
    let c = match structure.max_decay_length() {
        Some(l) => {
            let exponent = (structure.big_m + alpha) * l;
            if exponent > 700.0 {
                return Err(Error::SynthesisInfeasible(format!(
                    "e^{{(M+alpha)·L}} overflows (exponent {exponent:.1}); reduce alpha or \
                     refine the interval structure"
                )));
            }
            margin * (alpha + exponent.exp() / structure.min_even_length)
        }
        None => margin * alpha,
    };
    let m2 = structure.m * structure.m;
    let c_odd = structure
        .odd_segments()
        .iter()
        .map(|seg| {
            let mut bound: f64 = 0.0;
            for even in [seg.left_even, seg.right_even].into_iter().flatten() {
                bound = bound.max((c + structure.eps_max_per_even[even]) / m2);
            }
            margin * bound
        })
        .collect();
    Ok(SynthesisConstants {
        alpha,
        margin,
        c,
        c_odd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum PieceKind {
    Plateau { value: f64 },
    Blend { from: f64, to: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPiece {
    pub span: (f64, f64),
    #[serde(flatten)]
    pub kind: PieceKind,
}

impl InputPiece {
    /// Value and first two derivatives at normalized coordinate s ∈ [0, 1].
    fn eval_at_s(&self, s: f64) -> (f64, f64, f64) {
        match self.kind {
            PieceKind::Plateau { value } => (value, 0.0, 0.0),
            PieceKind::Zero => (0.0, 0.0, 0.0),
            PieceKind::Blend { from, to } => {
                let h = self.span.1 - self.span.0;
                let d = to - from;
                (
                    from + d * smoothstep(s),
                    d * smoothstep_d1(s) / h,
                    d * smoothstep_d2(s) / (h * h),
                )
            }
        }
    }
}

/// The synthesized input: a contiguous list of plateau/blend/zero pieces.
/// Evaluation outside the domain extends the boundary values as constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedforwardInput {
    pub domain: (f64, f64),
    pub pieces: Vec<InputPiece>,
}

impl FeedforwardInput {
    pub fn from_pieces(pieces: Vec<InputPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("input needs at least one piece".into()));
        }
        for p in &pieces {
            if !(p.span.1 > p.span.0) {
                return Err(Error::Structural(format!(
                    "piece span [{}, {}] is empty or reversed",
                    p.span.0, p.span.1
                )));
            }
        }
        let scale = (pieces.last().unwrap().span.1 - pieces[0].span.0).max(1.0);
        for w in pieces.windows(2) {
            if (w[1].span.0 - w[0].span.1).abs() > 1e-9 * scale {
                return Err(Error::Structural(format!(
                    "pieces are not contiguous at t = {}",
                    w[0].span.1
                )));
            }
        }
        let domain = (pieces[0].span.0, pieces.last().unwrap().span.1);
        Ok(Self { domain, pieces })
    }

    fn locate(&self, t: f64) -> (&InputPiece, f64) {
        let idx = self
            .pieces
            .partition_point(|p| p.span.1 < t)
            .min(self.pieces.len() - 1);
        let p = &self.pieces[idx];
        let s = ((t - p.span.0) / (p.span.1 - p.span.0)).clamp(0.0, 1.0);
        (p, s)
    }

    pub fn value(&self, t: f64) -> f64 {
        let (p, s) = self.locate(t);
        p.eval_at_s(s).0
    }

    pub fn deriv1(&self, t: f64) -> f64 {
        let (p, s) = self.locate(t);
        p.eval_at_s(s).1
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        let (p, s) = self.locate(t);
        p.eval_at_s(s).2
    }

    /// Interior piece boundaries.
    pub fn junctions(&self) -> Vec<f64> {
        self.pieces[1..].iter().map(|p| p.span.0).collect()
    }
}

impl InputSignal for FeedforwardInput {
    fn value(&self, t: f64) -> f64 {
        FeedforwardInput::value(self, t)
    }

    fn breakpoints_in(&self, span: (f64, f64)) -> Vec<f64> {
        self.junctions()
            .into_iter()
            .filter(|t| *t > span.0 && *t < span.1)
            .collect()
    }
}

/// Builds the input piece by piece.  On each definite interval the value is
/// the constant −sign·c★·m, c★ being the largest adjacent segment amplitude
/// (so blends meet plateaus exactly); through each odd-type segment the
/// input blends to zero across `[t1, t2]` when the envelope crosses zero,
/// or bridges the neighboring plateaus directly when R stays sign-definite.
pub fn build_input(
    structure: &IntervalStructure,
    constants: &SynthesisConstants,
    transitions: &[TransitionTimes],
) -> Result<FeedforwardInput> {
    let segs = structure.odd_segments();
    if transitions.len() != segs.len() {
        return Err(Error::Structural(format!(
            "have {} transition records for {} odd-type segments",
            transitions.len(),
            segs.len()
        )));
    }
    let scale = (structure.window.1 - structure.window.0).max(1.0);
    for (tr, seg) in transitions.iter().zip(&segs) {
        if (tr.segment.span.0 - seg.span.0).abs() > 1e-9 * scale
            || (tr.segment.span.1 - seg.span.1).abs() > 1e-9 * scale
        {
            return Err(Error::Structural(
                "transition records do not match the structure's odd segments".into(),
            ));
        }
    }
    if constants.c_odd.len() != segs.len() {
        return Err(Error::Structural(
            "constants carry a different number of segment amplitudes".into(),
        ));
    }

    // Plateau magnitude per definite interval: the largest adjacent segment
    // amplitude, or the standalone bound when no odd-type segment touches it.
    let evens = structure.even_count();
    let mut c_star: Vec<Option<f64>> = vec![None; evens];
    for (idx, tr) in transitions.iter().enumerate() {
        for even in [tr.segment.left_even, tr.segment.right_even].into_iter().flatten() {
            let cur = c_star[even].unwrap_or(f64::NEG_INFINITY);
            c_star[even] = Some(cur.max(constants.c_odd[idx]));
        }
    }
    let m2 = structure.m * structure.m;
    let plateau: Vec<f64> = (0..evens)
        .map(|i| {
            let cs = c_star[i].unwrap_or_else(|| {
                constants.margin * (constants.c + structure.eps_max_per_even[i]) / m2
            });
            -structure.signs[i].as_f64() * cs * structure.m
        })
        .collect();

    let tiny = 1e-12 * scale;
    let mut pieces: Vec<InputPiece> = Vec::new();
    let push_gap = |tr: &TransitionTimes, pieces: &mut Vec<InputPiece>| -> Result<()> {
        let span = tr.segment.span;
        let left_val = tr.segment.left_even.map(|i| plateau[i]);
        let right_val = tr.segment.right_even.map(|i| plateau[i]);
        match tr.kind {
            TransitionKind::Crossing { t1, t2, .. } => {
                if let Some(lv) = left_val {
                    if t1 > span.0 + tiny {
                        pieces.push(InputPiece {
                            span: (span.0, t1),
                            kind: PieceKind::Blend { from: lv, to: 0.0 },
                        });
                    }
                }
                if t2 > t1 + tiny {
                    pieces.push(InputPiece {
                        span: (t1.max(span.0), t2),
                        kind: PieceKind::Zero,
                    });
                }
                if let Some(rv) = right_val {
                    if span.1 > t2 + tiny {
                        pieces.push(InputPiece {
                            span: (t2, span.1),
                            kind: PieceKind::Blend { from: 0.0, to: rv },
                        });
                    }
                }
            }
            TransitionKind::SignDefinite(_) => {
                let (lv, rv) = match (left_val, right_val) {
                    (Some(l), Some(r)) => (l, r),
                    _ => {
                        return Err(Error::Structural(
                            "sign-definite segment at a window edge is not supported".into(),
                        ))
                    }
                };
                if lv == rv {
                    pieces.push(InputPiece {
                        span,
                        kind: PieceKind::Plateau { value: lv },
                    });
                } else {
                    pieces.push(InputPiece {
                        span,
                        kind: PieceKind::Blend { from: lv, to: rv },
                    });
                }
            }
        }
        Ok(())
    };

    if let Some(tr) = transitions.iter().find(|t| t.segment.left_even.is_none()) {
        push_gap(tr, &mut pieces)?;
    }
    for i in 0..evens {
        pieces.push(InputPiece {
            span: structure.even_interval(i),
            kind: PieceKind::Plateau { value: plateau[i] },
        });
        if let Some(tr) = transitions.iter().find(|t| t.segment.left_even == Some(i)) {
            push_gap(tr, &mut pieces)?;
        }
    }
    FeedforwardInput::from_pieces(pieces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum GainKind {
    /// g(t) = startValue·e^{−rate·(t − span start)} on odd-type segments.
    Decay { start_value: f64 },
    /// g(t) = zeta + xi·(t − span start) on definite intervals, reaching 1
    /// at the interval end.
    Rise { zeta: f64, xi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPiece {
    pub span: (f64, f64),
    #[serde(flatten)]
    pub kind: GainKind,
}

/// The certificate gain: continuous, piecewise exponential/affine, pinned
/// to 1 at the end of every definite interval and sandwiched in
/// [e^{−rate·L}, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainFunction {
    pub domain: (f64, f64),
    /// M + α.
    pub rate: f64,
    /// e^{−rate·L} with L the longest odd-type segment; 1 when none exists.
    pub floor: f64,
    pub pieces: Vec<GainPiece>,
}

impl GainFunction {
    pub fn value(&self, t: f64) -> f64 {
        let idx = self
            .pieces
            .partition_point(|p| p.span.1 < t)
            .min(self.pieces.len() - 1);
        let p = &self.pieces[idx];
        let dt = (t - p.span.0).clamp(0.0, p.span.1 - p.span.0);
        match p.kind {
            GainKind::Decay { start_value } => start_value * (-self.rate * dt).exp(),
            GainKind::Rise { zeta, xi } => zeta + xi * dt,
        }
    }
}

impl GainSignal for GainFunction {
    fn value(&self, t: f64) -> f64 {
        GainFunction::value(self, t)
    }

    fn floor(&self) -> f64 {
        self.floor
    }
}

/// Walks the window in time order: exponential decay from 1 across every
/// odd-type segment, affine rise back to 1 across every definite interval
/// (degenerating to the constant 1 when nothing decayed before it).
pub fn build_gain(structure: &IntervalStructure, constants: &SynthesisConstants) -> Result<GainFunction> {
    let rate = structure.big_m + constants.alpha;
    let segs = structure.odd_segments();
    let floor = match structure.max_decay_length() {
        Some(l) => (-rate * l).exp(),
        None => 1.0,
    };
    let mut pieces: Vec<GainPiece> = Vec::new();
    let mut g_entering = 1.0;
    let push_decay = |span: (f64, f64), g_entering: &mut f64, pieces: &mut Vec<GainPiece>| {
        pieces.push(GainPiece {
            span,
            kind: GainKind::Decay { start_value: 1.0 },
        });
        *g_entering = (-rate * (span.1 - span.0)).exp();
    };
    if let Some(seg) = segs.iter().find(|s| s.left_even.is_none()) {
        push_decay(seg.span, &mut g_entering, &mut pieces);
    }
    for i in 0..structure.even_count() {
        let span = structure.even_interval(i);
        let zeta = g_entering;
        let xi = (1.0 - zeta) / (span.1 - span.0);
        pieces.push(GainPiece {
            span,
            kind: GainKind::Rise { zeta, xi },
        });
        g_entering = 1.0;
        if let Some(seg) = segs.iter().find(|s| s.left_even == Some(i)) {
            push_decay(seg.span, &mut g_entering, &mut pieces);
        }
    }
    Ok(GainFunction {
        domain: structure.window,
        rate,
        floor,
        pieces,
    })
}

/// One junction's continuity deltas, expected to be exactly zero for
/// synthesized inputs.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct JunctionCheck {
    pub t: f64,
    pub delta_value: f64,
    pub delta_d1: f64,
    pub delta_d2: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SmoothnessReport {
    pub junctions: Vec<JunctionCheck>,
    /// Worst excursion of any piece outside the band spanned by its own
    /// endpoint values (blends are monotone, so this should be ≤ 0).
    pub band_excess: f64,
}

impl SmoothnessReport {
    pub fn pass(&self) -> bool {
        self.junctions.iter().all(|j| j.pass) && self.band_excess <= 1e-12
    }
}

/// Compares value and first two derivatives across every junction using the
/// piece polynomials' exact endpoint evaluations, and samples each piece to
/// confirm it stays within the band of its endpoint values.
pub fn verify_smoothness(input: &FeedforwardInput, junction_tol: f64) -> SmoothnessReport {
    let mut junctions = Vec::new();
    for w in input.pieces.windows(2) {
        let (lv, ld1, ld2) = w[0].eval_at_s(1.0);
        let (rv, rd1, rd2) = w[1].eval_at_s(0.0);
        let (dv, d1, d2) = (rv - lv, rd1 - ld1, rd2 - ld2);
        junctions.push(JunctionCheck {
            t: w[1].span.0,
            delta_value: dv,
            delta_d1: d1,
            delta_d2: d2,
            pass: dv.abs() <= junction_tol && d1.abs() <= junction_tol && d2.abs() <= junction_tol,
        });
    }
    let mut band_excess: f64 = f64::NEG_INFINITY;
    for p in &input.pieces {
        let (a, _, _) = p.eval_at_s(0.0);
        let (b, _, _) = p.eval_at_s(1.0);
        let (lo, hi) = (a.min(b), a.max(b));
        for j in 0..=100 {
            let (v, _, _) = p.eval_at_s(j as f64 / 100.0);
            band_excess = band_excess.max((lo - v).max(v - hi));
        }
    }
    SmoothnessReport {
        junctions,
        band_excess,
    }
}

/// A one-period input extended by wrap-around evaluation.
#[derive(Debug, Clone)]
pub struct PeriodicInput {
    pub base: FeedforwardInput,
    pub period: f64,
}

impl PeriodicInput {
    fn fold(&self, t: f64) -> f64 {
        self.base.domain.0 + (t - self.base.domain.0).rem_euclid(self.period)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.base.value(self.fold(t))
    }

    pub fn deriv1(&self, t: f64) -> f64 {
        self.base.deriv1(self.fold(t))
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        self.base.deriv2(self.fold(t))
    }
}

impl InputSignal for PeriodicInput {
    fn value(&self, t: f64) -> f64 {
        PeriodicInput::value(self, t)
    }

    fn breakpoints_in(&self, span: (f64, f64)) -> Vec<f64> {
        let mut marks = self.base.junctions();
        marks.push(self.base.domain.0);
        let mut out = Vec::new();
        for b in marks {
            let k0 = ((span.0 - b) / self.period).floor() as i64 - 1;
            let k1 = ((span.1 - b) / self.period).ceil() as i64 + 1;
            for k in k0..=k1 {
                let t = b + k as f64 * self.period;
                if t > span.0 && t < span.1 {
                    out.push(t);
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * self.period);
        out
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicGain {
    pub base: GainFunction,
    pub period: f64,
}

impl PeriodicGain {
    fn fold(&self, t: f64) -> f64 {
        self.base.domain.0 + (t - self.base.domain.0).rem_euclid(self.period)
    }

    pub fn value(&self, t: f64) -> f64 {
        self.base.value(self.fold(t))
    }
}

impl GainSignal for PeriodicGain {
    fn value(&self, t: f64) -> f64 {
        PeriodicGain::value(self, t)
    }

    fn floor(&self) -> f64 {
        self.base.floor
    }
}

const SEAM_TOL: f64 = 1e-12;

/// Wraps a one-period input/gain pair into periodic signals.  The input
/// seam must already be C² (value and both derivatives agree at the domain
/// endpoints); the gain's first rise is rebuilt to start from the value the
/// trailing decay hands over, making g continuous across the seam.
pub fn periodize(
    input: &FeedforwardInput,
    gain: &GainFunction,
    period: f64,
) -> Result<(PeriodicInput, PeriodicGain)> {
    if !(period > 0.0) {
        return Err(Error::InvalidInput("period must be positive".into()));
    }
    let len = input.domain.1 - input.domain.0;
    if (len - period).abs() > 1e-9 * period.max(1.0) {
        return Err(Error::Periodization(format!(
            "input domain length {len} does not match the period {period}"
        )));
    }
    let first = input.pieces.first().unwrap();
    let last = input.pieces.last().unwrap();
    let (v0, d10, d20) = first.eval_at_s(0.0);
    let (v1, d11, d21) = last.eval_at_s(1.0);
    let scale = v0.abs().max(v1.abs()).max(1.0);
    if (v0 - v1).abs() > SEAM_TOL * scale
        || (d10 - d11).abs() > SEAM_TOL * scale
        || (d20 - d21).abs() > SEAM_TOL * scale
    {
        return Err(Error::Periodization(format!(
            "input seam mismatch at t = {}: Δu = {:.3e}, Δu' = {:.3e}, Δu'' = {:.3e}; \
             re-align the window so it starts on a definite interval",
            input.domain.0,
            v1 - v0,
            d11 - d10,
            d21 - d20
        )));
    }

    let mut wrapped = gain.clone();
    let handover = gain.value(gain.domain.1);
    match wrapped.pieces.first_mut() {
        Some(GainPiece {
            span,
            kind: GainKind::Rise { zeta, xi },
        }) => {
            *zeta = handover;
            *xi = (1.0 - handover) / (span.1 - span.0);
        }
        _ => {
            return Err(Error::Periodization(
                "gain must start with an affine rise piece (period-aligned window)".into(),
            ));
        }
    }

    Ok((
        PeriodicInput {
            base: input.clone(),
            period,
        },
        PeriodicGain {
            base: wrapped,
            period,
        },
    ))
}

/// Everything a run needs to replay a synthesized design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthesisDocument {
    pub schema_version: u32,
    pub constants: SynthesisConstants,
    pub input: FeedforwardInput,
    pub gain: GainFunction,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub period: Option<f64>,
}

impl SynthesisDocument {
    pub fn new(
        constants: SynthesisConstants,
        input: FeedforwardInput,
        gain: GainFunction,
        period: Option<f64>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            constants,
            input,
            gain,
            period,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("failed to serialize synthesis document: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SynthesisDocument = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed synthesis document: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {})",
                doc.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(doc)
    }
}

/// The full synthesis result for one structure.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub constants: SynthesisConstants,
    pub transitions: Vec<TransitionTimes>,
    pub input: FeedforwardInput,
    pub gain: GainFunction,
}

/// Convenience pipeline: constants, transition times, input, gain.
pub fn synthesize(
    sys: &SystemModel,
    structure: &IntervalStructure,
    alpha: f64,
    margin: f64,
    root_tol: f64,
) -> Result<Synthesis> {
    let constants = choose_constants(structure, alpha, margin)?;
    let transitions = crate::intervals::all_transitions(sys, structure, root_tol)?;
    let input = build_input(structure, &constants, &transitions)?;
    let gain = build_gain(structure, &constants)?;
    Ok(Synthesis {
        constants,
        transitions,
        input,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::{self, align_periodic, find_knots};
    use crate::sysmodel::{self, Forcing, SystemModel};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn eq47_structure() -> IntervalStructure {
        let sys = sysmodel::eq47(Forcing::Zero);
        let w = (0.0, 2.0 * PI);
        find_knots(&sys, w, 1.0, intervals::default_grid_step(w), 1e-10).unwrap()
    }

    #[test]
    fn smoothstep_endpoint_identities_are_exact() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep_d1(0.0), 0.0);
        assert_eq!(smoothstep_d1(1.0), 0.0);
        assert_eq!(smoothstep_d2(0.0), 0.0);
        assert_eq!(smoothstep_d2(1.0), 0.0);
        let mut prev = 0.0;
        for i in 1..=100 {
            let v = smoothstep(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn constants_match_reference_values() {
        let s = eq47_structure();
        let k = choose_constants(&s, 0.5, 1.05).unwrap();
        // The analytic formula uses exact knots; the detected structure's
        // L and k carry the bisection tolerance.
        let expected_c = 1.05 * (0.5 + (2.5 * PI / 3.0).exp() / (2.0 * PI / 3.0));
        assert_abs_diff_eq!(k.c, expected_c, epsilon = 1e-6);
        assert_abs_diff_eq!(k.c, 7.396, epsilon = 2e-3);
        assert_eq!(k.c_odd.len(), 3); // leading gap, interior gap, trailing gap
        for co in &k.c_odd {
            assert_abs_diff_eq!(*co, 1.05 * (k.c + 2.0), epsilon = 1e-9);
            assert_abs_diff_eq!(*co, 9.866, epsilon = 2e-3);
        }
    }

    /// Scalar system with R(t, x) equal to a given function of time.
    fn scalar_with_r(r: impl Fn(f64) -> f64 + Send + Sync + Copy + 'static) -> SystemModel {
        SystemModel::builder(1)
            .drift(Arc::new(|_t, _x| vec![0.0]))
            .drift_jacobian(Arc::new(|_t, _x| vec![0.0]))
            .control_dir(Arc::new(move |t, x: &[f64]| vec![x[0] * r(t) / 2.0]))
            .control_jacobian(Arc::new(move |t, _x| vec![r(t) / 2.0]))
            .envelope_r_min(Arc::new(move |t| r(t)))
            .envelope_r_max(Arc::new(move |t| r(t)))
            .envelope_a_max(Arc::new(|_| 0.0))
            .build()
            .unwrap()
    }

    #[test]
    fn constants_without_gaps_reduce_to_margin_alpha() {
        let sys = scalar_with_r(|_| 2.0);
        let w = (0.0, 10.0);
        let s = find_knots(&sys, w, 1.0, intervals::default_grid_step(w), 1e-10).unwrap();
        let k = choose_constants(&s, 1.0, 1.1).unwrap();
        assert_eq!(k.c, 1.1);
        assert!(k.c_odd.is_empty());
    }

    #[test]
    fn invalid_constants_inputs_are_rejected() {
        let s = eq47_structure();
        assert!(choose_constants(&s, 0.0, 1.05).is_err());
        assert!(choose_constants(&s, 0.5, 1.0).is_err());
    }

    #[test]
    fn enormous_gap_is_infeasible() {
        let mut s = eq47_structure();
        // Pretend the interior gap were 600 time units long.
        s.knots = vec![0.0, 10.0, 610.0, 620.0];
        s.window = (0.0, 620.0);
        s.max_odd_length = Some(600.0);
        let err = choose_constants(&s, 0.5, 1.05);
        assert!(matches!(err, Err(Error::SynthesisInfeasible(_))));
    }

    #[test]
    fn entrainment_input_matches_reference_pieces() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = eq47_structure();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        let amp = syn.constants.c_odd[0] * s.m;
        let p = &syn.input.pieces;
        assert_eq!(p.len(), 6, "{p:#?}");
        // Leading edge: rise from zero input into the first plateau.
        assert_eq!(p[0].kind, PieceKind::Blend { from: 0.0, to: -amp });
        assert_eq!(p[1].kind, PieceKind::Plateau { value: -amp });
        assert_abs_diff_eq!(p[1].span.0, PI / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1].span.1, 5.0 * PI / 6.0, epsilon = 1e-9);
        assert_eq!(p[2].kind, PieceKind::Blend { from: -amp, to: 0.0 });
        assert_abs_diff_eq!(p[2].span.1, PI, epsilon = 1e-9);
        assert_eq!(p[3].kind, PieceKind::Blend { from: 0.0, to: amp });
        assert_eq!(p[4].kind, PieceKind::Plateau { value: amp });
        assert_eq!(p[5].kind, PieceKind::Blend { from: amp, to: 0.0 });
        assert_abs_diff_eq!(amp, 9.866, epsilon = 2e-3);
        // The input vanishes with two derivatives exactly at the switch.
        let t_switch = p[2].span.1;
        assert_eq!(syn.input.value(t_switch), 0.0);
        assert_eq!(syn.input.deriv1(t_switch), 0.0);
        assert_eq!(syn.input.deriv2(t_switch), 0.0);
    }

    #[test]
    fn sign_definite_gap_keeps_constant_input() {
        let sys = scalar_with_r(|t| 1.2 + t.cos());
        let w = (0.0, 2.0 * PI);
        let s = find_knots(&sys, w, 1.0, intervals::default_grid_step(w), 1e-10).unwrap();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        assert_eq!(syn.input.pieces.len(), 3);
        let mid = &syn.input.pieces[1];
        let expect = -syn.constants.c_odd[0] * s.m;
        assert_eq!(mid.kind, PieceKind::Plateau { value: expect });
        // Sign compatibility: u ≤ 0 while R > 0 throughout.
        for j in 0..=200 {
            let t = w.0 + (w.1 - w.0) * j as f64 / 200.0;
            assert!(syn.input.value(t) <= 0.0);
        }
    }

    #[test]
    fn standalone_definite_window_gets_plateau_only() {
        let sys = scalar_with_r(|_| 2.0);
        let w = (0.0, 10.0);
        let s = find_knots(&sys, w, 1.0, intervals::default_grid_step(w), 1e-10).unwrap();
        let syn = synthesize(&sys, &s, 1.0, 1.1, 1e-10).unwrap();
        assert_eq!(syn.input.pieces.len(), 1);
        let expect = -1.1 * (syn.constants.c + 0.0) / 1.0;
        assert_eq!(
            syn.input.pieces[0].kind,
            PieceKind::Plateau { value: expect }
        );
        assert_eq!(syn.gain.pieces.len(), 1);
        assert_eq!(syn.gain.value(5.0), 1.0);
        assert_eq!(syn.gain.floor, 1.0);
    }

    #[test]
    fn gain_matches_reference_values() {
        let s = eq47_structure();
        let k = choose_constants(&s, 0.5, 1.05).unwrap();
        let g = build_gain(&s, &k).unwrap();
        assert_eq!(g.rate, 2.5);
        // End of each definite interval (the detected knot): back to 1.
        assert_abs_diff_eq!(g.value(s.knots[1]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(s.knots[3]), 1.0, epsilon = 1e-12);
        // After the interior gap: the full decay.
        let expect = (-2.5 * PI / 3.0).exp();
        assert_abs_diff_eq!(g.value(7.0 * PI / 6.0), expect, epsilon = 1e-9);
        assert_abs_diff_eq!(g.value(7.0 * PI / 6.0), 0.07304, epsilon = 2e-4);
        assert_abs_diff_eq!(g.floor, expect, epsilon = 1e-9);
        // Sandwich on a dense grid.
        for j in 0..=2000 {
            let t = s.window.0 + (s.window.1 - s.window.0) * j as f64 / 2000.0;
            let v = g.value(t);
            assert!(v <= 1.0 + 1e-12);
            assert!(v >= g.floor - 1e-12, "g({t}) = {v} below floor {}", g.floor);
        }
    }

    #[test]
    fn gain_satisfies_discrete_decrease_bounds() {
        let s = eq47_structure();
        let k = choose_constants(&s, 0.5, 1.05).unwrap();
        let g = build_gain(&s, &k).unwrap();
        for seg in s.odd_segments() {
            for j in 0..200 {
                let t1 = seg.span.0 + seg.length() * j as f64 / 200.0;
                let t2 = seg.span.0 + seg.length() * (j + 1) as f64 / 200.0;
                let ratio = g.value(t2) / g.value(t1);
                assert!(ratio <= (-g.rate * (t2 - t1)).exp() * (1.0 + 1e-9));
            }
        }
        for i in 0..s.even_count() {
            let (a, b) = s.even_interval(i);
            for j in 0..200 {
                let t1 = a + (b - a) * j as f64 / 200.0;
                let t2 = a + (b - a) * (j + 1) as f64 / 200.0;
                let slope = (g.value(t2) - g.value(t1)) / (t2 - t1);
                assert!(slope <= 1.0 / s.min_even_length + 1e-9);
            }
        }
    }

    #[test]
    fn smoothness_report_is_exact_for_synthesized_input() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = eq47_structure();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        let report = verify_smoothness(&syn.input, 0.0);
        assert!(report.pass(), "{report:?}");
        for j in &report.junctions {
            assert_eq!(j.delta_value, 0.0);
            assert_eq!(j.delta_d1, 0.0);
            assert_eq!(j.delta_d2, 0.0);
        }
    }

    #[test]
    fn discontinuous_input_is_flagged() {
        let input = FeedforwardInput::from_pieces(vec![
            InputPiece {
                span: (0.0, 1.0),
                kind: PieceKind::Plateau { value: 1.0 },
            },
            InputPiece {
                span: (1.0, 2.0),
                kind: PieceKind::Plateau { value: 2.0 },
            },
        ])
        .unwrap();
        let report = verify_smoothness(&input, 1e-12);
        assert!(!report.pass());
        assert_eq!(report.junctions.len(), 1);
        assert_abs_diff_eq!(report.junctions[0].delta_value, 1.0);
    }

    #[test]
    fn single_piece_report_is_vacuous() {
        let input = FeedforwardInput::from_pieces(vec![InputPiece {
            span: (0.0, 1.0),
            kind: PieceKind::Plateau { value: -3.0 },
        }])
        .unwrap();
        let report = verify_smoothness(&input, 1e-12);
        assert!(report.pass());
        assert!(report.junctions.is_empty());
    }

    #[test]
    fn periodization_of_aligned_window() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = align_periodic(&sys, 1.0, None, 1e-10).unwrap();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        let period = 2.0 * PI;
        let (pu, pg) = periodize(&syn.input, &syn.gain, period).unwrap();

        let amp = syn.constants.c_odd[0] * s.m;
        assert_eq!(syn.input.value(s.window.0), -amp);
        assert_eq!(syn.input.value(s.window.1), -amp);
        // Wrap-around evaluation repeats exactly.
        for j in 0..=50 {
            let t = s.window.0 + period * j as f64 / 50.0;
            assert_abs_diff_eq!(pu.value(t), pu.value(t + period), epsilon = 1e-12);
            assert_abs_diff_eq!(pu.value(t), pu.value(t + 3.0 * period), epsilon = 1e-12);
        }
        // The rebuilt first rise starts from the trailing decay's handover,
        // making the gain continuous (and periodic) at the seam.
        let handover = syn.gain.value(s.window.1);
        assert_abs_diff_eq!(pg.value(s.window.0), handover, epsilon = 1e-12);
        assert_abs_diff_eq!(
            pg.value(s.window.0 - 1e-9),
            pg.value(s.window.0 + 1e-9),
            epsilon = 1e-6
        );
        assert_eq!(pg.floor(), syn.gain.floor);
        // Breakpoints repeat across periods.
        let bp = pu.breakpoints_in((s.window.0, s.window.0 + 2.0 * period));
        assert!(bp.len() >= 10);
        for t in &bp {
            assert!(*t > s.window.0 && *t < s.window.0 + 2.0 * period);
        }
    }

    #[test]
    fn periodization_rejects_bad_inputs() {
        // Seam value mismatch: plateau into a blend that lands at zero.
        let input = FeedforwardInput::from_pieces(vec![
            InputPiece {
                span: (0.0, 1.0),
                kind: PieceKind::Plateau { value: 1.0 },
            },
            InputPiece {
                span: (1.0, 2.0),
                kind: PieceKind::Blend { from: 1.0, to: 0.0 },
            },
        ])
        .unwrap();
        let gain = GainFunction {
            domain: (0.0, 2.0),
            rate: 1.0,
            floor: 1.0,
            pieces: vec![GainPiece {
                span: (0.0, 2.0),
                kind: GainKind::Rise { zeta: 1.0, xi: 0.0 },
            }],
        };
        assert!(matches!(
            periodize(&input, &gain, 2.0),
            Err(Error::Periodization(_))
        ));
        // Wrong period length.
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = align_periodic(&sys, 1.0, None, 1e-10).unwrap();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        assert!(matches!(
            periodize(&syn.input, &syn.gain, 5.0),
            Err(Error::Periodization(_))
        ));
    }

    #[test]
    fn unaligned_window_cannot_be_periodized() {
        // Synthesis over [0, 2π] starts and ends at u = 0, so the input
        // seam looks fine — but the gain starts with a decay piece, which
        // betrays the missing alignment.
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = eq47_structure();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        let err = periodize(&syn.input, &syn.gain, 2.0 * PI);
        assert!(matches!(err, Err(Error::Periodization(_))), "{err:?}");
    }

    #[test]
    fn document_round_trip_preserves_evaluation() {
        let sys = sysmodel::eq47(Forcing::Zero);
        let s = align_periodic(&sys, 1.0, None, 1e-10).unwrap();
        let syn = synthesize(&sys, &s, 0.5, 1.05, 1e-10).unwrap();
        let doc = SynthesisDocument::new(
            syn.constants.clone(),
            syn.input.clone(),
            syn.gain.clone(),
            Some(2.0 * PI),
        );
        let json = doc.to_json().unwrap();
        assert!(json.contains("\"schemaVersion\": 1"));
        let back = SynthesisDocument::from_json(&json).unwrap();
        for j in 0..=100 {
            let t = s.window.0 + 2.0 * PI * j as f64 / 100.0;
            assert_eq!(back.input.value(t), syn.input.value(t));
            assert_eq!(back.gain.value(t), syn.gain.value(t));
        }
        assert_eq!(back.period, Some(2.0 * PI));
        assert_eq!(back.constants.c, syn.constants.c);

        let tampered = json.replace("\"schemaVersion\": 1", "\"schemaVersion\": 99");
        assert!(matches!(
            SynthesisDocument::from_json(&tampered),
            Err(Error::Config(_))
        ));
    }
}
