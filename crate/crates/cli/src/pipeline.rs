//! Subcommand implementations: each takes a parsed configuration, runs the
//! corresponding library pipeline, writes artifacts into the output
//! directory, and prints a short human-readable summary.

use crate::config::{InputMode, RunConfig};
use crate::expr::Expr;
use crate::figures;
use crate::svg::{self, Series};
use contraction_core::intervals::{
    align_periodic, default_grid_step, find_knots, validate_assumption, IntervalStructure,
    ValidationReport,
};
use contraction_core::signal::{ConstantInput, GainSignal, InputSignal};
use contraction_core::sim::{
    ensemble, lyapunov_trace, uniform_grid, write_csv, DisplacementPolicy, Trajectory,
};
use contraction_core::synth::{
    periodize, synthesize, verify_smoothness, PieceKind, Synthesis, SynthesisDocument,
};
use contraction_core::verify::{
    check_certificate, check_contraction, check_ies, check_periodic_convergence, fit_decay,
    theorem_one_empirical, CheckResult, ConstantsEcho, NamedDecayFit, VerificationReport,
};
use contraction_core::{Error, Result, SystemModel};
use std::fs;
use std::path::{Path, PathBuf};

const ROOT_TOL: f64 = 1e-10;
const JUNCTION_TOL: f64 = 1e-9;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Detects the interval structure over the configured window and re-checks
/// it on a finer grid.  Period-aligned detection kicks in when the system
/// declares a period and the window spans exactly one.
pub fn analyze_structure(cfg: &RunConfig, sys: &SystemModel) -> Result<IntervalStructure> {
    let window = cfg.window()?;
    let m = cfg.m.ok_or_else(|| Error::Config("missing key `m`".into()))?;
    match sys.period {
        Some(t) if (window.1 - window.0 - t).abs() <= 1e-9 * t.max(1.0) => {
            align_periodic(sys, m, None, ROOT_TOL)
        }
        _ => find_knots(sys, window, m, default_grid_step(window), ROOT_TOL),
    }
}

pub fn cmd_analyze(cfg: &RunConfig, out_dir: &Path) -> Result<IntervalStructure> {
    let sys = cfg.build_system()?;
    let structure = analyze_structure(cfg, &sys)?;
    let validation = validate_assumption(&sys, &structure);
    ensure_dir(out_dir)?;
    let json = serde_json::to_string_pretty(&structure)
        .map_err(|e| Error::Config(format!("cannot serialize structure: {e}")))?;
    write_file(&out_dir.join("structure.json"), &json)?;
    let vjson = serde_json::to_string_pretty(&validation)
        .map_err(|e| Error::Config(format!("cannot serialize validation: {e}")))?;
    write_file(&out_dir.join("validation.json"), &vjson)?;

    print_structure(&structure);
    print_validation(&validation);
    if let Some(first) = validation.entries.iter().find(|e| !e.pass) {
        return Err(Error::AssumptionViolated(format!(
            "re-check failed: {} (margin {:+.3e})",
            first.name, first.worst_margin
        )));
    }
    Ok(structure)
}

fn print_structure(s: &IntervalStructure) {
    let signs: Vec<&str> = s.signs.iter().map(|g| match g {
        contraction_core::Sign::Positive => "+",
        contraction_core::Sign::Negative => "-",
    }).collect();
    println!("window   [{:.9}, {:.9}]", s.window.0, s.window.1);
    println!(
        "knots    [{}]",
        s.knots.iter().map(|k| format!("{k:.9}")).collect::<Vec<_>>().join(", ")
    );
    println!("signs    [{}]", signs.join(", "));
    println!("m        {:.6}", s.m);
    println!("M        {:.6}", s.big_m);
    println!("k (min definite length)  {:.9}", s.min_even_length);
    match s.max_odd_length {
        Some(l) => println!("L (max interior gap)     {l:.9}"),
        None => println!("L (max interior gap)     none"),
    }
    if s.periodic_wrap {
        println!("periodic wrap gap        yes");
    }
    for w in &s.warnings {
        println!("note: {w}");
    }
}

fn print_validation(v: &ValidationReport) {
    for e in &v.entries {
        println!(
            "[{}] {} (margin {:+.3e}{})",
            if e.pass { "PASS" } else { "FAIL" },
            e.name,
            e.worst_margin,
            e.location.map_or(String::new(), |t| format!(" at t = {t:.6}")),
        );
    }
}

pub fn cmd_synthesize(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let sys = cfg.build_system()?;
    let structure = analyze_structure(cfg, &sys)?;
    let validation = validate_assumption(&sys, &structure);
    if let Some(first) = validation.entries.iter().find(|e| !e.pass) {
        return Err(Error::AssumptionViolated(format!(
            "structure re-check failed: {}",
            first.name
        )));
    }
    let alpha = cfg.alpha.unwrap_or(0.5);
    let margin = cfg.margin.unwrap_or(1.05);
    let syn = synthesize(&sys, &structure, alpha, margin, ROOT_TOL)?;
    let smooth = verify_smoothness(&syn.input, JUNCTION_TOL);
    if !smooth.pass() {
        return Err(Error::NumericFailure(
            "synthesized input failed its smoothness self-check".into(),
        ));
    }
    // Exercise the periodic extension early so misconfigurations surface
    // here rather than in simulate/verify.
    if let Some(t) = sys.period {
        periodize(&syn.input, &syn.gain, t)?;
    }
    let document = SynthesisDocument::new(
        syn.constants.clone(),
        syn.input.clone(),
        syn.gain.clone(),
        sys.period,
    );

    ensure_dir(out_dir)?;
    write_file(&out_dir.join("synthesis.json"), &document.to_json()?)?;

    let window = structure.window;
    let grid = uniform_grid(window, 1201);
    let u_series = Series {
        label: "input u".into(),
        points: grid.iter().map(|t| (*t, syn.input.value(*t))).collect(),
    };
    let g_series = Series {
        label: "gain g".into(),
        points: grid.iter().map(|t| (*t, syn.gain.value(*t))).collect(),
    };
    write_file(
        &out_dir.join("synthesis.svg"),
        &svg::line_plot("synthesized input and gain", "t", "u, g", &[u_series, g_series]),
    )?;

    let amplitude = plateau_amplitude(&syn);
    println!("alpha    {alpha:.6}");
    println!("margin   {margin:.6}");
    println!("c        {:.6}", syn.constants.c);
    println!("plateau amplitude  {amplitude:.6}");
    println!("gain floor         {:.9e}", syn.gain.floor());
    println!("junction deltas    all below {JUNCTION_TOL:.1e}");
    Ok(())
}

pub fn plateau_amplitude(syn: &Synthesis) -> f64 {
    syn.input
        .pieces
        .iter()
        .filter_map(|p| match p.kind {
            PieceKind::Plateau { value } => Some(value.abs()),
            _ => None,
        })
        .fold(0.0, f64::max)
}

/// Everything simulate/verify need about the resolved input signal.
pub struct ResolvedInput {
    pub input: Box<dyn InputSignal>,
    pub gain: Option<Box<dyn GainSignal>>,
    pub synthesis: Option<Synthesis>,
    pub structure: Option<IntervalStructure>,
    /// Period of the periodized design, when one was built.
    pub period: Option<f64>,
}

struct ExprInput(Expr);

impl InputSignal for ExprInput {
    fn value(&self, t: f64) -> f64 {
        self.0.eval(t, &[])
    }
}

pub fn resolve_input(cfg: &RunConfig, sys: &SystemModel) -> Result<ResolvedInput> {
    let mode = cfg
        .input_mode
        .as_ref()
        .ok_or_else(|| Error::Config("missing key `inputMode`".into()))?;
    match mode {
        InputMode::Expression(text) => {
            let e = Expr::parse(text)?;
            if e.max_state() > 0 {
                return Err(Error::Config("input expression must depend on t only".into()));
            }
            Ok(ResolvedInput {
                input: Box::new(ExprInput(e)),
                gain: None,
                synthesis: None,
                structure: None,
                period: None,
            })
        }
        InputMode::Constant(v) => Ok(ResolvedInput {
            input: Box::new(ConstantInput(*v)),
            gain: None,
            synthesis: None,
            structure: None,
            period: None,
        }),
        InputMode::Synthesized => {
            let structure = analyze_structure(cfg, sys)?;
            let alpha = cfg.alpha.unwrap_or(0.5);
            let margin = cfg.margin.unwrap_or(1.05);
            let syn = synthesize(sys, &structure, alpha, margin, ROOT_TOL)?;
            match sys.period {
                Some(t) => {
                    let (pu, pg) = periodize(&syn.input, &syn.gain, t)?;
                    Ok(ResolvedInput {
                        input: Box::new(pu),
                        gain: Some(Box::new(pg)),
                        synthesis: Some(syn),
                        structure: Some(structure),
                        period: Some(t),
                    })
                }
                None => Ok(ResolvedInput {
                    input: Box::new(syn.input.clone()),
                    gain: Some(Box::new(syn.gain.clone())),
                    synthesis: Some(syn),
                    structure: Some(structure),
                    period: None,
                }),
            }
        }
    }
}

/// Default integration span: the configured span, or — for a periodized
/// synthesis — six periods starting at the aligned window.
fn effective_span(cfg: &RunConfig, resolved: &ResolvedInput) -> Result<(f64, f64)> {
    if let Some(s) = cfg.span {
        if !(s[0] < s[1]) {
            return Err(Error::Config("span must satisfy start < end".into()));
        }
        return Ok((s[0], s[1]));
    }
    match (&resolved.structure, resolved.period) {
        (Some(st), Some(t)) => Ok((st.window.0, st.window.0 + 6.0 * t)),
        _ => cfg.window(),
    }
}

fn effective_grid(cfg: &RunConfig, span: (f64, f64), period: Option<f64>) -> Vec<f64> {
    if let Some(n) = cfg.grid_points {
        return uniform_grid(span, n.max(2));
    }
    if let Some(t) = period {
        // commensurate grid: 256 cells per period
        let periods = ((span.1 - span.0) / t).round().max(1.0) as usize;
        return uniform_grid(span, periods * 256 + 1);
    }
    uniform_grid(span, 1001)
}

pub struct SimulationOutput {
    pub trajectories: Vec<Trajectory>,
    pub csv_paths: Vec<PathBuf>,
    pub failures: Vec<(usize, Error)>,
}

pub fn run_ensemble(cfg: &RunConfig, sys: &SystemModel, resolved: &ResolvedInput) -> Result<SimulationOutput> {
    let ics = cfg.initial_conditions(sys.dimension())?;
    let span = effective_span(cfg, resolved)?;
    let grid = effective_grid(cfg, span, resolved.period);
    let mut opts = cfg.integrate_options();
    if opts.max_step.is_none() {
        if let Some(st) = &resolved.structure {
            opts.max_step = st.max_decay_length().map(|l| l / 8.0);
        }
    }
    let results = ensemble(
        sys,
        resolved.input.as_ref(),
        &ics,
        &DisplacementPolicy::UnitBasisCycle,
        span,
        &grid,
        &opts,
    );
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push((i, e)),
        }
    }
    Ok(SimulationOutput { trajectories, csv_paths: Vec::new(), failures })
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulationOutput> {
    let sys = cfg.build_system()?;
    let resolved = resolve_input(cfg, &sys)?;
    let mut out = run_ensemble(cfg, &sys, &resolved)?;
    ensure_dir(out_dir)?;

    for (i, traj) in out.trajectories.iter().enumerate() {
        let path = out_dir.join(format!("traj_{i:02}.csv"));
        let mut buf = Vec::new();
        write_csv(traj, resolved.gain.as_deref(), &mut buf)
            .map_err(|e| Error::Config(format!("cannot format CSV: {e}")))?;
        fs::write(&path, &buf)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        out.csv_paths.push(path);
    }

    let n = sys.dimension();
    let series: Vec<Series> = out
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, traj)| trajectory_series(traj, n, i))
        .collect();
    let (x_label, y_label) = if n == 2 { ("x1", "x2") } else { ("t", "x") };
    write_file(
        &out_dir.join("trajectories.svg"),
        &svg::line_plot("simulated trajectories", x_label, y_label, &series),
    )?;

    let failures = std::mem::take(&mut out.failures);
    for (i, e) in &failures {
        eprintln!("[warn] trajectory {i} failed: {e}");
    }
    println!(
        "simulated {} trajectories ({} failed), wrote {}",
        out.trajectories.len() + failures.len(),
        failures.len(),
        out_dir.display()
    );
    if !out.trajectories.is_empty() {
        let spread = final_spread(&out.trajectories);
        println!("final pairwise spread  {spread:.6e}");
    }
    if let Some((_, e)) = failures.into_iter().next() {
        return Err(e);
    }
    Ok(out)
}

fn trajectory_series(traj: &Trajectory, n: usize, index: usize) -> Vec<Series> {
    if n == 2 {
        vec![Series {
            label: String::new(),
            points: traj.states.iter().map(|x| (x[0], x[1])).collect(),
        }]
    } else {
        (0..n)
            .map(|c| Series {
                label: if index == 0 && n > 1 { format!("x{}", c + 1) } else { String::new() },
                points: traj
                    .times
                    .iter()
                    .zip(&traj.states)
                    .map(|(t, x)| (*t, x[c]))
                    .collect(),
            })
            .collect()
    }
}

/// Largest pairwise distance between members at the final grid time.
pub fn final_spread(trajs: &[Trajectory]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in trajs.iter().enumerate() {
        for b in &trajs[i + 1..] {
            let (xa, xb) = (a.states.last().unwrap(), b.states.last().unwrap());
            let d = xa
                .iter()
                .zip(xb)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
    }
    worst
}

pub fn cmd_verify(cfg: &RunConfig, out_dir: &Path) -> Result<VerificationReport> {
    let sys = cfg.build_system()?;
    let resolved = resolve_input(cfg, &sys)?;
    let sim = run_ensemble(cfg, &sys, &resolved)?;
    if let Some((i, e)) = sim.failures.into_iter().next() {
        return Err(Error::NumericFailure(format!("trajectory {i} failed: {e}")));
    }
    let trajs = sim.trajectories;
    if trajs.is_empty() {
        return Err(Error::Config("no trajectories to verify".into()));
    }
    let span = effective_span(cfg, &resolved)?;

    let alpha = cfg.alpha.unwrap_or(0.5);
    let scope = match resolved.period {
        Some(t) => format!("periodic (period {t:.9})"),
        None => format!("window [{:.6}, {:.6}]", span.0, span.1),
    };
    let mut report = VerificationReport::new(
        scope,
        format!(
            "decay bounds checked over every ordered pair of grid times on {} trajectories; \
             grid has {} samples",
            trajs.len(),
            trajs[0].times.len()
        ),
    );
    if let (Some(st), Some(syn)) = (&resolved.structure, &resolved.synthesis) {
        report.constants_used = Some(ConstantsEcho::new(st, &syn.constants));
    }

    // Certificate (needs the synthesized gain).
    if let Some(gain) = &resolved.gain {
        let tol = cfg.verify.tol.unwrap_or(1e-6);
        let mut worst = CheckResult {
            name: "Lyapunov decay certificate".into(),
            pass: true,
            worst_margin: f64::NEG_INFINITY,
            location: None,
        };
        for traj in &trajs {
            let trace = lyapunov_trace(traj, gain.as_ref())?;
            let check = check_certificate(&trace, alpha, tol);
            if check.worst_margin > worst.worst_margin {
                worst.worst_margin = check.worst_margin;
                worst.location = check.location;
            }
            worst.pass &= check.pass;
        }
        if !worst.worst_margin.is_finite() {
            worst.worst_margin = -700.0;
        }
        report.checks.push(worst);
    }

    // Contraction and pairwise bounds with predicted or asserted constants.
    let constants = match (&resolved.gain, cfg.verify.overshoot, cfg.verify.rate) {
        (_, Some(k), Some(l)) => Some((k, l)),
        (Some(g), _, _) => Some((1.0 / g.floor().sqrt(), alpha / 2.0)),
        _ => None,
    };
    if let Some((k, lambda)) = constants {
        report.checks.push(check_contraction(&trajs, k, lambda));
        let mut pairs = Vec::new();
        for w in trajs.windows(2) {
            pairs.push((w[0].clone(), w[1].clone()));
        }
        if !pairs.is_empty() {
            report.checks.push(check_ies(&pairs, k, lambda)?);
        }
    }

    // Independent random pairs with the predicted constants.
    if let (Some(gain), Some(_)) = (&resolved.gain, &sys.state_box) {
        let trials = cfg.verify.trials.unwrap_or(20);
        let seed = cfg.verify.seed.unwrap_or(0);
        let opts = cfg.integrate_options();
        report.checks.push(theorem_one_empirical(
            &sys,
            resolved.input.as_ref(),
            gain.as_ref(),
            alpha,
            span,
            trials,
            seed,
            &opts,
        )?);
    }

    // Decay fits (excluding one gap length of initial transient when the
    // structure provides one).
    let skip = resolved
        .structure
        .as_ref()
        .and_then(|s| s.max_decay_length())
        .unwrap_or(0.0);
    let t_start = trajs[0].times[0] + skip;
    for (i, traj) in trajs.iter().take(2).enumerate() {
        let norms = traj.displacement_norms();
        let (ts, vs): (Vec<f64>, Vec<f64>) = traj
            .times
            .iter()
            .zip(&norms)
            .filter(|(t, _)| **t >= t_start)
            .map(|(t, v)| (*t, *v))
            .unzip();
        match fit_decay(&ts, &vs) {
            Ok(fit) => report.decay_fits.push(NamedDecayFit {
                name: format!("displacement decay (member {i})"),
                fit,
            }),
            Err(e) => eprintln!("[warn] decay fit for member {i} skipped: {e}"),
        }
    }
    if trajs.len() >= 2 {
        let dist = trajs[0].distances_to(&trajs[1])?;
        let (ts, vs): (Vec<f64>, Vec<f64>) = trajs[0]
            .times
            .iter()
            .zip(&dist)
            .filter(|(t, _)| **t >= t_start)
            .map(|(t, v)| (*t, *v))
            .unzip();
        match fit_decay(&ts, &vs) {
            Ok(fit) => report.decay_fits.push(NamedDecayFit {
                name: "pairwise distance decay (members 0, 1)".into(),
                fit,
            }),
            Err(e) => eprintln!("[warn] pairwise decay fit skipped: {e}"),
        }
    }

    // Period-map convergence for periodic designs (or an explicitly
    // asserted period).
    if let Some(t) = cfg.verify.period.or(resolved.period) {
        let periods = (span.1 - span.0) / t;
        if periods >= 4.0 - 1e-9 {
            let bound = cfg
                .verify
                .ratio_bound
                .unwrap_or_else(|| (-0.5 * alpha * t).exp() * 1.05);
            let pc = check_periodic_convergence(&trajs[0], t, bound)?;
            report.checks.push(pc.check.clone());
        }
    }

    ensure_dir(out_dir)?;
    write_file(&out_dir.join("verify.json"), &report.to_json()?)?;
    let text = report.render_text();
    write_file(&out_dir.join("verify.txt"), &text)?;
    print!("{text}");
    Ok(report)
}

pub fn cmd_reproduce_figure(id: &str, out_dir: &Path) -> Result<PathBuf> {
    let spec = figures::figure(id)?;
    let grid = uniform_grid(spec.span, spec.grid_points);
    let opts = contraction_core::IntegrateOptions::default();
    let results = ensemble(
        &spec.system,
        spec.input.as_ref(),
        &spec.initial_conditions,
        &DisplacementPolicy::None,
        spec.span,
        &grid,
        &opts,
    );
    let mut trajs = Vec::new();
    for r in results {
        trajs.push(r?);
    }

    ensure_dir(out_dir)?;
    let n = spec.system.dimension();

    // Combined wide CSV: t, then the state coordinates of each member.
    let csv_path = out_dir.join(format!("{id}.csv"));
    let mut buf = String::new();
    buf.push('t');
    for m in 0..trajs.len() {
        for c in 1..=n {
            if n == 1 {
                buf.push_str(&format!(",x_{m:02}"));
            } else {
                buf.push_str(&format!(",x{c}_{m:02}"));
            }
        }
    }
    buf.push('\n');
    for (row, t) in grid.iter().enumerate() {
        buf.push_str(&format!("{t:.16e}"));
        for traj in &trajs {
            for c in 0..n {
                buf.push_str(&format!(",{:.16e}", traj.states[row][c]));
            }
        }
        buf.push('\n');
    }
    write_file(&csv_path, &buf)?;

    let series: Vec<Series> = trajs
        .iter()
        .flat_map(|traj| {
            if spec.phase {
                vec![Series {
                    label: String::new(),
                    points: traj.states.iter().map(|x| (x[0], x[1])).collect(),
                }]
            } else {
                (0..n)
                    .map(|c| Series {
                        label: String::new(),
                        points: traj
                            .times
                            .iter()
                            .zip(&traj.states)
                            .map(|(t, x)| (*t, x[c]))
                            .collect(),
                    })
                    .collect()
            }
        })
        .collect();
    let (x_label, y_label) = if spec.phase { ("x1", "x2") } else { ("t", "x") };
    write_file(
        &out_dir.join(format!("{id}.svg")),
        &svg::line_plot(spec.title, x_label, y_label, &series),
    )?;

    println!(
        "{}: {} trajectories over [{}, {}]",
        spec.id,
        trajs.len(),
        spec.span.0,
        spec.span.1
    );
    println!("final pairwise spread  {:.6e}", final_spread(&trajs));
    if id == "fig4" {
        let endpoints: Vec<f64> = trajs.iter().map(|t| t.states.last().unwrap()[0]).collect();
        let lo = endpoints.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = endpoints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("endpoint range         [{lo:.6}, {hi:.6}]");
    }
    Ok(csv_path)
}
