//! Detection and validation of the alternating interval structure on which
//! synthesis rests: maximal time intervals where the control-direction
//! symmetric part R is uniformly positive (or negative) definite, separated
//! by indefinite gaps of bounded length, together with the constants
//! (m, M, k, L, per-interval A-bounds) that the certificate consumes.

use crate::error::{Error, Result};
use crate::sysmodel::SystemModel;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

/// Default scan resolution: 4096 cells across the window.
pub fn default_grid_step(window: (f64, f64)) -> f64 {
    (window.1 - window.0) / 4096.0
}

/// Definiteness label of an interval where R is uniformly bounded away
/// from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// The detected interval skeleton over one analysis window.
///
/// `knots` holds consecutive pairs `[start, end]` of the sign-definite
/// ("even") intervals; the indefinite ("odd") gaps are everything in
/// between, plus possibly a leading/trailing edge gap where the window
/// begins or ends outside any definite interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntervalStructure {
    pub window: (f64, f64),
    pub knots: Vec<f64>,
    pub signs: Vec<Sign>,
    pub m: f64,
    /// Max of the A-envelope over the indefinite set (0 when that set is
    /// empty).
    #[serde(rename = "M")]
    pub big_m: f64,
    /// k: length of the shortest definite interval.
    pub min_even_length: f64,
    /// L: length of the longest interior indefinite gap, absent when the
    /// window holds a single definite interval.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_odd_length: Option<f64>,
    /// Per definite interval, the max of the A-envelope over it.
    pub eps_max_per_even: Vec<f64>,
    /// True when the window is period-aligned so its trailing gap wraps
    /// around to the first definite interval.
    #[serde(default)]
    pub periodic_wrap: bool,
    /// Scan resolution the structure was computed with.
    pub grid_step: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// One indefinite (odd-type) segment: an interior gap between two definite
/// intervals, an edge gap with a single neighbor, or the wrap-around gap of
/// a period-aligned window.
#[derive(Debug, Clone, PartialEq)]
pub struct OddSegment {
    pub span: (f64, f64),
    /// Index into `signs`/even intervals on the left, if any.
    pub left_even: Option<usize>,
    pub right_even: Option<usize>,
    pub wrap: bool,
}

impl OddSegment {
    pub fn length(&self) -> f64 {
        self.span.1 - self.span.0
    }
}

impl IntervalStructure {
    pub fn even_count(&self) -> usize {
        self.signs.len()
    }

    pub fn even_interval(&self, i: usize) -> (f64, f64) {
        (self.knots[2 * i], self.knots[2 * i + 1])
    }

    fn edge_tol(&self) -> f64 {
        1e-12 * (self.window.1 - self.window.0).max(1.0)
    }

    pub fn leading_gap(&self) -> Option<(f64, f64)> {
        let a0 = *self.knots.first()?;
        (a0 - self.window.0 > self.edge_tol()).then_some((self.window.0, a0))
    }

    pub fn trailing_gap(&self) -> Option<(f64, f64)> {
        let a_last = *self.knots.last()?;
        (self.window.1 - a_last > self.edge_tol()).then_some((a_last, self.window.1))
    }

    /// All odd-type segments in time order, edge gaps included.
    pub fn odd_segments(&self) -> Vec<OddSegment> {
        let mut segs = Vec::new();
        if let Some(span) = self.leading_gap() {
            segs.push(OddSegment {
                span,
                left_even: None,
                right_even: Some(0),
                wrap: false,
            });
        }
        for i in 0..self.even_count().saturating_sub(1) {
            segs.push(OddSegment {
                span: (self.knots[2 * i + 1], self.knots[2 * i + 2]),
                left_even: Some(i),
                right_even: Some(i + 1),
                wrap: false,
            });
        }
        if let Some(span) = self.trailing_gap() {
            let last = self.even_count() - 1;
            if self.periodic_wrap {
                segs.push(OddSegment {
                    span,
                    left_even: Some(last),
                    right_even: Some(0),
                    wrap: true,
                });
            } else {
                segs.push(OddSegment {
                    span,
                    left_even: Some(last),
                    right_even: None,
                    wrap: false,
                });
            }
        }
        segs
    }

    /// Longest odd-type segment (edge gaps included); None when the window
    /// is a single definite interval.  This is the horizon over which the
    /// certificate gain is allowed to decay.
    pub fn max_decay_length(&self) -> Option<f64> {
        self.odd_segments()
            .iter()
            .map(OddSegment::length)
            .fold(None, |acc, l| Some(acc.map_or(l, |a: f64| a.max(l))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Pos,
    Neg,
    Indefinite,
}

fn classify(sys: &SystemModel, t: f64, m: f64) -> Result<Class> {
    let rmin = (sys.envelope_r_min)(t);
    let rmax = (sys.envelope_r_max)(t);
    if !rmin.is_finite() || !rmax.is_finite() {
        return Err(Error::Evaluation {
            t,
            detail: "R envelope is not finite".into(),
        });
    }
    if rmin >= m {
        Ok(Class::Pos)
    } else if rmax <= -m {
        Ok(Class::Neg)
    } else {
        Ok(Class::Indefinite)
    }
}

/// Bisects `f` over `[outside, inside]` (where the definiteness condition
/// fails at `outside` and holds at `inside`) and returns a point within
/// `tol` of the boundary at which the condition still holds.
fn refine_edge<F>(f: F, mut outside: f64, mut inside: f64, tol: f64) -> f64
where
    F: Fn(f64) -> bool,
{
    while (inside - outside).abs() > tol {
        let mid = 0.5 * (outside + inside);
        if f(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// Scans the window for maximal intervals where R ⪰ mI or R ⪯ −mI (via the
/// system's envelopes), refines their endpoints by bisection, and gathers
/// the constants used downstream.  Intervals shorter than twice the grid
/// step are dropped with a warning.
pub fn find_knots(
    sys: &SystemModel,
    window: (f64, f64),
    m: f64,
    grid_step: f64,
    root_tol: f64,
) -> Result<IntervalStructure> {
    if !(m > 0.0) {
        return Err(Error::InvalidInput("m must be positive".into()));
    }
    if !(grid_step > 0.0) || !(root_tol > 0.0) {
        return Err(Error::InvalidInput("grid_step and root_tol must be positive".into()));
    }
    if !(window.1 > window.0) || !window.0.is_finite() || !window.1.is_finite() {
        return Err(Error::InvalidInput("window must be a finite, increasing pair".into()));
    }
    let len = window.1 - window.0;
    let cells = (len / grid_step).ceil() as usize;
    let cells = cells.max(8);
    let ts: Vec<f64> = (0..=cells)
        .map(|i| window.0 + len * i as f64 / cells as f64)
        .collect();
    let classes: Vec<Class> = ts
        .iter()
        .map(|t| classify(sys, *t, m))
        .collect::<Result<_>>()?;

    // Maximal runs of a single definite class.
    let mut runs: Vec<(usize, usize, Sign)> = Vec::new();
    let mut i = 0;
    while i <= cells {
        match classes[i] {
            Class::Indefinite => i += 1,
            c => {
                let start = i;
                while i + 1 <= cells && classes[i + 1] == c {
                    i += 1;
                }
                let sign = if c == Class::Pos { Sign::Positive } else { Sign::Negative };
                runs.push((start, i, sign));
                i += 1;
            }
        }
    }

    let holds = |t: f64, sign: Sign| -> bool {
        matches!(
            (classify(sys, t, m), sign),
            (Ok(Class::Pos), Sign::Positive) | (Ok(Class::Neg), Sign::Negative)
        )
    };

    let mut knots = Vec::new();
    let mut signs = Vec::new();
    let mut warnings = Vec::new();
    for (s, e, sign) in runs {
        let a = if s == 0 {
            ts[0]
        } else {
            refine_edge(|t| holds(t, sign), ts[s - 1], ts[s], root_tol)
        };
        let b = if e == cells {
            ts[cells]
        } else {
            refine_edge(|t| holds(t, sign), ts[e + 1], ts[e], root_tol)
        };
        if b - a < 2.0 * grid_step {
            warnings.push(format!(
                "discarded {} interval [{a:.6}, {b:.6}] shorter than twice the grid step",
                match sign {
                    Sign::Positive => "positive-definite",
                    Sign::Negative => "negative-definite",
                }
            ));
            continue;
        }
        knots.push(a);
        knots.push(b);
        signs.push(sign);
    }

    if signs.is_empty() {
        return Err(Error::AssumptionViolated(format!(
            "no interval with R definiteness margin m = {m} found in [{}, {}]",
            window.0, window.1
        )));
    }
    for w in knots.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Structural(
                "refined interval endpoints are not strictly increasing".into(),
            ));
        }
    }

    // Constants from the same grid: A-envelope bound over the indefinite
    // set and per definite interval.
    let in_even = |t: f64| -> Option<usize> {
        (0..signs.len()).find(|i| t >= knots[2 * i] && t <= knots[2 * i + 1])
    };
    let mut big_m: f64 = 0.0;
    let mut any_odd_sample = false;
    for t in &ts {
        if in_even(*t).is_none() {
            let a = (sys.envelope_a_max)(*t);
            if !a.is_finite() {
                return Err(Error::Evaluation {
                    t: *t,
                    detail: "A envelope is not finite".into(),
                });
            }
            big_m = big_m.max(a);
            any_odd_sample = true;
        }
    }
    if !any_odd_sample {
        big_m = 0.0;
    }

    let mut eps_max_per_even = Vec::with_capacity(signs.len());
    for i in 0..signs.len() {
        let (a, b) = (knots[2 * i], knots[2 * i + 1]);
        let n = ((b - a) / grid_step).ceil().max(8.0) as usize;
        let mut worst: f64 = f64::NEG_INFINITY;
        for j in 0..=n {
            let t = a + (b - a) * j as f64 / n as f64;
            let v = (sys.envelope_a_max)(t);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    t,
                    detail: "A envelope is not finite".into(),
                });
            }
            worst = worst.max(v);
        }
        eps_max_per_even.push(worst);
    }

    let min_even_length = (0..signs.len())
        .map(|i| knots[2 * i + 1] - knots[2 * i])
        .fold(f64::INFINITY, f64::min);
    let max_odd_length = (signs.len() > 1).then(|| {
        (0..signs.len() - 1)
            .map(|i| knots[2 * i + 2] - knots[2 * i + 1])
            .fold(0.0f64, f64::max)
    });

    Ok(IntervalStructure {
        window,
        knots,
        signs,
        m,
        big_m,
        min_even_length,
        max_odd_length,
        eps_max_per_even,
        periodic_wrap: false,
        grid_step,
        warnings,
    })
}

/// Period-aligned analysis for periodic systems: shifts the window to start
/// exactly at the first definite-interval onset so one period ends at the
/// onset of the next copy, and marks the trailing gap as wrapping around.
pub fn align_periodic(
    sys: &SystemModel,
    m: f64,
    grid_step: Option<f64>,
    root_tol: f64,
) -> Result<IntervalStructure> {
    let period = sys.period.ok_or_else(|| {
        Error::InvalidInput("period-aligned analysis requires a periodic system".into())
    })?;
    let first_pass_window = (0.0, period);
    let step = grid_step.unwrap_or_else(|| default_grid_step(first_pass_window));
    let first = find_knots(sys, first_pass_window, m, step, root_tol)?;
    let a0 = first.knots[0];
    let mut aligned = find_knots(sys, (a0, a0 + period), m, step, root_tol)?;
    if aligned.leading_gap().is_some() {
        return Err(Error::Structural(
            "period-aligned window does not start on a definite interval".into(),
        ));
    }
    aligned.periodic_wrap = aligned.trailing_gap().is_some();
    Ok(aligned)
}

/// Where, inside one odd-type segment, the relevant R envelope crosses zero.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    /// The envelope reaches zero: sign-compatibility forces the input to
    /// zero on `[t1, t2]`.  `degenerate` marks an empty middle (t1 = t2).
    Crossing { t1: f64, t2: f64, degenerate: bool },
    /// R keeps one definiteness sign across the whole segment (it only
    /// loses the uniform margin m), so the input may stay bounded away
    /// from zero throughout.
    SignDefinite(Sign),
}

#[derive(Debug, Clone)]
pub struct TransitionTimes {
    pub segment: OddSegment,
    pub kind: TransitionKind,
}

fn envelope_for(sys: &SystemModel, sign: Sign) -> impl Fn(f64) -> f64 + '_ {
    move |t| match sign {
        Sign::Positive => (sys.envelope_r_min)(t),
        Sign::Negative => (sys.envelope_r_max)(t),
    }
}

const ZERO_SCAN_CELLS: usize = 1024;

fn bisect_zero<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(flo * fhi < 0.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scan_zeros<F: Fn(f64) -> f64>(f: &F, span: (f64, f64), tol: f64) -> Vec<f64> {
    let (a, b) = span;
    let mut zeros = Vec::new();
    let mut prev_t = a;
    let mut prev_v = f(a);
    for i in 1..=ZERO_SCAN_CELLS {
        let t = a + (b - a) * i as f64 / ZERO_SCAN_CELLS as f64;
        let v = f(t);
        if prev_v == 0.0 {
            zeros.push(prev_t);
        } else if v != 0.0 && (prev_v > 0.0) != (v > 0.0) {
            zeros.push(bisect_zero(f, prev_t, t, tol));
        }
        prev_t = t;
        prev_v = v;
    }
    if prev_v == 0.0 {
        zeros.push(b);
    }
    zeros
}

/// Finds the input-must-vanish window inside one odd-type segment: the
/// first zero of the left neighbor's envelope and the last zero of the
/// right neighbor's, searched by scan + bisection.  Edge gaps use the
/// window boundary for the missing side.
pub fn locate_transitions(
    sys: &SystemModel,
    structure: &IntervalStructure,
    segment_index: usize,
    root_tol: f64,
) -> Result<TransitionTimes> {
    let segs = structure.odd_segments();
    let segment = segs
        .get(segment_index)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "odd segment index {segment_index} out of range ({} segments)",
                segs.len()
            ))
        })?
        .clone();
    let left_sign = segment.left_even.map(|i| structure.signs[i]);
    let right_sign = segment.right_even.map(|i| structure.signs[i]);

    let zeros_of = |sign: Sign| scan_zeros(&envelope_for(sys, sign), segment.span, root_tol);

    let kind = match (left_sign, right_sign) {
        (Some(ls), Some(rs)) => {
            let left_zeros = zeros_of(ls);
            let right_zeros = if rs == ls { left_zeros.clone() } else { zeros_of(rs) };
            match (left_zeros.first(), right_zeros.last()) {
                (Some(&t1), Some(&t2)) => {
                    if t2 < t1 {
                        // Crossings interleave so tightly the scan found the
                        // left-envelope zero after the right's: collapse to a
                        // single switch point.
                        let mid = 0.5 * (t1 + t2);
                        TransitionKind::Crossing { t1: mid, t2: mid, degenerate: true }
                    } else {
                        TransitionKind::Crossing {
                            t1,
                            t2,
                            degenerate: t2 - t1 <= root_tol.max(1e-12),
                        }
                    }
                }
                (None, None) if ls == rs => TransitionKind::SignDefinite(ls),
                _ => {
                    return Err(Error::Structural(format!(
                        "R envelope never reaches zero on [{}, {}] yet the neighboring \
                         definiteness signs differ — envelopes are inconsistent",
                        segment.span.0, segment.span.1
                    )));
                }
            }
        }
        // Leading edge gap: the input starts at zero, so only the approach
        // to the first definite interval needs a transition time.
        (None, Some(rs)) => {
            let t2 = zeros_of(rs).last().copied().unwrap_or(segment.span.0);
            TransitionKind::Crossing {
                t1: segment.span.0,
                t2,
                degenerate: t2 - segment.span.0 <= root_tol.max(1e-12),
            }
        }
        // Trailing edge gap (no wrap): mirror image.
        (Some(ls), None) => {
            let t1 = zeros_of(ls).first().copied().unwrap_or(segment.span.1);
            TransitionKind::Crossing {
                t1,
                t2: segment.span.1,
                degenerate: segment.span.1 - t1 <= root_tol.max(1e-12),
            }
        }
        (None, None) => {
            return Err(Error::Structural("odd segment with no neighbors".into()));
        }
    };
    Ok(TransitionTimes { segment, kind })
}

/// Transition times for every odd-type segment, in time order.
pub fn all_transitions(
    sys: &SystemModel,
    structure: &IntervalStructure,
    root_tol: f64,
) -> Result<Vec<TransitionTimes>> {
    (0..structure.odd_segments().len())
        .map(|i| locate_transitions(sys, structure, i, root_tol))
        .collect()
}

/// One re-checked invariant of an interval structure.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckEntry {
    pub name: String,
    pub pass: bool,
    /// Positive means the invariant holds with that much room.
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Re-checks every claimed invariant on a grid ten times finer than the one
/// the structure was computed with.  Failures become report entries rather
/// than errors.
pub fn validate_assumption(sys: &SystemModel, structure: &IntervalStructure) -> ValidationReport {
    let tol = (10.0 * DEFAULT_ROOT_TOL).max(1e-12);
    let fine = structure.grid_step / 10.0;
    let mut entries = Vec::new();

    // Definiteness margin on each even interval.
    let mut worst = f64::INFINITY;
    let mut worst_loc = None;
    for i in 0..structure.even_count() {
        let (a, b) = structure.even_interval(i);
        let n = ((b - a) / fine).ceil().max(8.0) as usize;
        for j in 0..=n {
            let t = a + (b - a) * j as f64 / n as f64;
            let margin = match structure.signs[i] {
                Sign::Positive => (sys.envelope_r_min)(t) - structure.m,
                Sign::Negative => -(sys.envelope_r_max)(t) - structure.m,
            };
            if margin < worst {
                worst = margin;
                worst_loc = Some(t);
            }
        }
    }
    entries.push(CheckEntry {
        name: "R definiteness margin m on definite intervals".into(),
        pass: worst >= -tol,
        worst_margin: worst,
        location: worst_loc,
    });

    // Even lengths against the claimed minimum.
    let mut worst = f64::INFINITY;
    let mut worst_loc = None;
    for i in 0..structure.even_count() {
        let (a, b) = structure.even_interval(i);
        let margin = (b - a) - structure.min_even_length;
        if margin < worst {
            worst = margin;
            worst_loc = Some(a);
        }
    }
    entries.push(CheckEntry {
        name: "definite interval length >= k".into(),
        pass: worst >= -tol,
        worst_margin: worst,
        location: worst_loc,
    });

    // Interior gap lengths against the claimed maximum.
    let interior: Vec<(f64, f64)> = (0..structure.even_count().saturating_sub(1))
        .map(|i| (structure.knots[2 * i + 1], structure.knots[2 * i + 2]))
        .collect();
    let (pass, worst, worst_loc) = if interior.is_empty() {
        (true, 0.0, None)
    } else {
        let claimed = structure.max_odd_length.unwrap_or(0.0);
        let mut worst = f64::INFINITY;
        let mut loc = None;
        for (a, b) in interior {
            let margin = claimed - (b - a);
            if margin < worst {
                worst = margin;
                loc = Some(a);
            }
        }
        (worst >= -tol, worst, loc)
    };
    entries.push(CheckEntry {
        name: "indefinite gap length <= L".into(),
        pass,
        worst_margin: worst,
        location: worst_loc,
    });

    // A-envelope bound over the indefinite set.
    let mut worst = f64::INFINITY;
    let mut worst_loc = None;
    let total_cells = ((structure.window.1 - structure.window.0) / fine).ceil().max(8.0) as usize;
    let in_even = |t: f64| {
        (0..structure.even_count())
            .any(|i| t >= structure.knots[2 * i] && t <= structure.knots[2 * i + 1])
    };
    let mut sampled_odd = false;
    for j in 0..=total_cells {
        let t = structure.window.0
            + (structure.window.1 - structure.window.0) * j as f64 / total_cells as f64;
        if !in_even(t) {
            sampled_odd = true;
            let margin = structure.big_m - (sys.envelope_a_max)(t);
            if margin < worst {
                worst = margin;
                worst_loc = Some(t);
            }
        }
    }
    if !sampled_odd {
        worst = 0.0;
        worst_loc = None;
    }
    entries.push(CheckEntry {
        name: "A envelope <= M on indefinite set".into(),
        pass: worst >= -tol,
        worst_margin: worst,
        location: worst_loc,
    });

    // Per-even A-envelope bounds.
    let mut worst = f64::INFINITY;
    let mut worst_loc = None;
    for i in 0..structure.even_count() {
        let (a, b) = structure.even_interval(i);
        let n = ((b - a) / fine).ceil().max(8.0) as usize;
        for j in 0..=n {
            let t = a + (b - a) * j as f64 / n as f64;
            let margin = structure.eps_max_per_even[i] - (sys.envelope_a_max)(t);
            if margin < worst {
                worst = margin;
                worst_loc = Some(t);
            }
        }
    }
    entries.push(CheckEntry {
        name: "A envelope <= per-interval bound on definite intervals".into(),
        pass: worst >= -tol,
        worst_margin: worst,
        location: worst_loc,
    });

    // Knot ordering.
    let ordered = structure.knots.windows(2).all(|w| w[1] > w[0])
        && structure.knots.len() == 2 * structure.even_count()
        && structure.eps_max_per_even.len() == structure.even_count();
    entries.push(CheckEntry {
        name: "knots strictly increasing and consistent".into(),
        pass: ordered,
        worst_margin: if ordered { 0.0 } else { -1.0 },
        location: None,
    });

    ValidationReport { entries }
}
