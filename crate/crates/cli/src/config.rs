//! Declarative run configuration (TOML).
//!
//! ```toml
//! system = "eq47"              # or a [system] table with expressions
//! window = [0.0, 6.283185307179586]
//! m = 1.0
//! alpha = 0.5
//! margin = 1.05
//! inputMode = "synthesized"    # or { expression = "-3*sin(t)" } / { constant = -2.0 }
//! forcing = "t * cos(t)"       # optional, scalar systems with additive forcing
//! initialConditions = [[-10.0], [-5.0], [0.0], [5.0], [10.0]]
//! # initialConditions = { count = 30, box = [[-5.0, 5.0]], seed = 7 }
//! outputDir = "out"
//!
//! [tolerances]                 # optional
//! relTol = 1e-8
//! absTol = 1e-10
//! ```

use crate::expr::Expr;
use contraction_core::sysmodel::{self, Forcing};
use contraction_core::{Error, IntegrateOptions, Result, SystemModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub window: Option<[f64; 2]>,
    pub m: Option<f64>,
    pub alpha: Option<f64>,
    pub margin: Option<f64>,
    pub input_mode: Option<InputMode>,
    /// Additive time-dependent forcing g(t), scalar systems only.
    pub forcing: Option<String>,
    pub initial_conditions: Option<InitialConditions>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: Option<String>,
    /// Integration span for simulate/verify; defaults to the window.
    pub span: Option<[f64; 2]>,
    /// Output grid resolution over the span (points, default 1001).
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub verify: VerifySettings,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin(String),
    Custom(Box<CustomSystem>),
}

/// A system given by closed-form expressions in `t, x1..xn`.
/// Jacobians are spelled out rather than derived; a finite-difference
/// consistency probe rejects mismatched pairs early.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CustomSystem {
    pub dimension: usize,
    pub drift: Vec<String>,
    pub control_dir: Vec<String>,
    pub drift_jacobian: Vec<Vec<String>>,
    pub control_jacobian: Vec<Vec<String>>,
    /// Envelopes: expressions in t only.
    pub envelope_r_min: String,
    pub envelope_r_max: String,
    pub envelope_a_max: String,
    pub period: Option<f64>,
    pub state_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InputMode {
    Synthesized,
    Expression(String),
    Constant(f64),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InitialConditions {
    Explicit(Vec<Vec<f64>>),
    Random {
        count: usize,
        #[serde(rename = "box")]
        sample_box: Vec<[f64; 2]>,
        seed: u64,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Tolerances {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub max_steps: Option<usize>,
}

/// Optional knobs for the verify subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VerifySettings {
    /// Asserted contraction constants for non-synthesized inputs.
    pub overshoot: Option<f64>,
    pub rate: Option<f64>,
    /// Certificate slack (default 1e-6).
    pub tol: Option<f64>,
    /// Period-map contraction bound (default exp(-alpha/2·T)·1.05).
    pub ratio_bound: Option<f64>,
    /// Run the period-map check against this period even when the input
    /// was not periodized (e.g. to probe aperiodic forcing).
    pub period: Option<f64>,
    /// Random trajectory pairs for the predicted-constants check.
    pub trials: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_system(&self) -> Result<SystemModel> {
        let forcing = match &self.forcing {
            None => Forcing::Zero,
            Some(text) => {
                let e = Expr::parse(text)?;
                if e.max_state() > 0 {
                    return Err(Error::Config(
                        "forcing must be a function of t only".into(),
                    ));
                }
                Forcing::Custom(Arc::new(move |t| e.eval(t, &[])))
            }
        };
        match &self.system {
            SystemSpec::Builtin(name) => sysmodel::builtin_with_forcing(name, forcing),
            SystemSpec::Custom(c) => {
                if !matches!(forcing, Forcing::Zero) {
                    return Err(Error::Config(
                        "forcing is only supported for builtin systems; fold g(t) into the drift expressions".into(),
                    ));
                }
                build_custom(c)
            }
        }
    }

    pub fn window(&self) -> Result<(f64, f64)> {
        let w = self
            .window
            .ok_or_else(|| Error::Config("missing key `window`".into()))?;
        if !(w[0] < w[1]) {
            return Err(Error::Config("window must satisfy start < end".into()));
        }
        Ok((w[0], w[1]))
    }

    pub fn integrate_options(&self) -> IntegrateOptions {
        let mut opts = IntegrateOptions::default();
        if let Some(r) = self.tolerances.rel_tol {
            opts.rel_tol = r;
        }
        if let Some(a) = self.tolerances.abs_tol {
            opts.abs_tol = a;
        }
        opts.max_step = self.tolerances.max_step.or(opts.max_step);
        if let Some(n) = self.tolerances.max_steps {
            opts.max_steps = n;
        }
        opts
    }

    pub fn initial_conditions(&self, dimension: usize) -> Result<Vec<Vec<f64>>> {
        let spec = self
            .initial_conditions
            .as_ref()
            .ok_or_else(|| Error::Config("missing key `initialConditions`".into()))?;
        let ics = match spec {
            InitialConditions::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Config("initialConditions must not be empty".into()));
                }
                list.clone()
            }
            InitialConditions::Random { count, sample_box, seed } => {
                if *count == 0 {
                    return Err(Error::Config("initialConditions.count must be >= 1".into()));
                }
                if sample_box.len() != dimension {
                    return Err(Error::Config(format!(
                        "initialConditions.box has {} coordinates, system has {}",
                        sample_box.len(),
                        dimension
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| {
                        sample_box
                            .iter()
                            .map(|[lo, hi]| rng.random_range(*lo..*hi))
                            .collect()
                    })
                    .collect()
            }
        };
        for ic in &ics {
            if ic.len() != dimension {
                return Err(Error::Config(format!(
                    "initial condition {ic:?} has dimension {}, system has {dimension}",
                    ic.len()
                )));
            }
        }
        Ok(ics)
    }

    pub fn output_dir(&self) -> &str {
        self.output_dir.as_deref().unwrap_or("out")
    }
}

fn parse_all(exprs: &[String]) -> Result<Vec<Expr>> {
    exprs.iter().map(|s| Expr::parse(s)).collect()
}

fn build_custom(c: &CustomSystem) -> Result<SystemModel> {
    let n = c.dimension;
    if n == 0 {
        return Err(Error::Config("system.dimension must be >= 1".into()));
    }
    for (name, list) in [("drift", &c.drift), ("controlDir", &c.control_dir)] {
        if list.len() != n {
            return Err(Error::Config(format!(
                "system.{name} must have {n} component expressions, has {}",
                list.len()
            )));
        }
    }
    for (name, rows) in [
        ("driftJacobian", &c.drift_jacobian),
        ("controlJacobian", &c.control_jacobian),
    ] {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("system.{name} must be an {n}×{n} matrix of expressions")));
        }
    }

    let drift = parse_all(&c.drift)?;
    let control = parse_all(&c.control_dir)?;
    let jf: Vec<Expr> = parse_all(&c.drift_jacobian.concat())?;
    let jg: Vec<Expr> = parse_all(&c.control_jacobian.concat())?;
    for e in drift
        .iter()
        .chain(control.iter())
        .chain(jf.iter())
        .chain(jg.iter())
    {
        if e.max_state() > n {
            return Err(Error::Config(format!(
                "expression references x{} but the system has dimension {n}",
                e.max_state()
            )));
        }
    }
    let env_r_min = Expr::parse(&c.envelope_r_min)?;
    let env_r_max = Expr::parse(&c.envelope_r_max)?;
    let env_a_max = Expr::parse(&c.envelope_a_max)?;
    for (name, e) in [
        ("envelopeRMin", &env_r_min),
        ("envelopeRMax", &env_r_max),
        ("envelopeAMax", &env_a_max),
    ] {
        if e.max_state() > 0 {
            return Err(Error::Config(format!("system.{name} must depend on t only")));
        }
    }

    fn eval_all(exprs: &[Expr], t: f64, x: &[f64]) -> Vec<f64> {
        exprs.iter().map(|e| e.eval(t, x)).collect()
    }

    let mut builder = SystemModel::builder(n)
        .drift(Arc::new(move |t, x| eval_all(&drift, t, x)))
        .control_dir(Arc::new(move |t, x| eval_all(&control, t, x)))
        .drift_jacobian(Arc::new(move |t, x| eval_all(&jf, t, x)))
        .control_jacobian(Arc::new(move |t, x| eval_all(&jg, t, x)))
        .envelope_r_min(Arc::new(move |t| env_r_min.eval(t, &[])))
        .envelope_r_max(Arc::new(move |t| env_r_max.eval(t, &[])))
        .envelope_a_max(Arc::new(move |t| env_a_max.eval(t, &[])));
    if let Some(p) = c.period {
        builder = builder.period(p);
    }
    if let Some(b) = &c.state_box {
        builder = builder.state_box(b.iter().map(|[lo, hi]| (*lo, *hi)).collect());
    }
    let sys = builder.build()?;

    // Probe the declared Jacobians against finite differences at a few
    // points so typos surface as configuration errors, not wrong results.
    let probe: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
    for t in [0.0, 0.7, 1.9] {
        let defect = sysmodel::check_jacobian_consistency(&sys, t, &probe, 1e-5)?;
        if defect > 1e-3 {
            return Err(Error::Config(format!(
                "declared Jacobians disagree with finite differences of the fields \
                 (defect {defect:.2e} at t = {t}); check the expressions"
            )));
        }
    }
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_builtin_config() {
        let cfg = parse(
            r#"
system = "eq47"
window = [0.0, 6.283185307179586]
m = 1.0
alpha = 0.5
margin = 1.05
inputMode = "synthesized"
initialConditions = [[-10.0], [-5.0], [0.0], [5.0], [10.0]]
outputDir = "artifacts"
"#,
        );
        assert!(matches!(cfg.system, SystemSpec::Builtin(ref n) if n == "eq47"));
        assert!(matches!(cfg.input_mode, Some(InputMode::Synthesized)));
        let sys = cfg.build_system().unwrap();
        assert_eq!(sys.dimension(), 1);
        assert_eq!(cfg.initial_conditions(1).unwrap().len(), 5);
        assert_eq!(cfg.output_dir(), "artifacts");
        assert_eq!(cfg.window().unwrap(), (0.0, 6.283185307179586));
    }

    #[test]
    fn expression_and_constant_input_modes() {
        let cfg = parse(
            r#"
system = "eq47"
inputMode = { expression = "-3 * sin(t)" }
"#,
        );
        match cfg.input_mode {
            Some(InputMode::Expression(ref s)) => assert_eq!(s, "-3 * sin(t)"),
            other => panic!("{other:?}"),
        }
        let cfg = parse(
            r#"
system = "eq48"
inputMode = { constant = -2.0 }
"#,
        );
        assert!(matches!(cfg.input_mode, Some(InputMode::Constant(v)) if v == -2.0));
    }

    #[test]
    fn random_initial_conditions_are_seed_deterministic() {
        let text = r#"
system = "eq48"
initialConditions = { count = 6, box = [[-2.0, 2.0], [-2.0, 2.0]], seed = 7 }
"#;
        let a = parse(text).initial_conditions(2).unwrap();
        let b = parse(text).initial_conditions(2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().flatten().all(|v| v.abs() < 2.0));
        // a different seed gives a different draw
        let other = parse(&text.replace("seed = 7", "seed = 8"))
            .initial_conditions(2)
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn forcing_becomes_part_of_the_drift() {
        let cfg = parse(
            r#"
system = "eq47"
forcing = "t * cos(t)"
"#,
        );
        let sys = cfg.build_system().unwrap();
        let v = sys.drift_at(2.0, &[0.0]).unwrap();
        assert!((v[0] - 2.0 * 2.0f64.cos()).abs() < 1e-14);
        assert!(sys.period.is_none(), "aperiodic forcing must clear the period");
    }

    #[test]
    fn custom_system_round_trip() {
        let cfg = parse(
            r#"
window = [0.0, 6.283185307179586]
m = 1.0

[system]
dimension = 1
drift = ["x1"]
controlDir = ["sin(t) * x1"]
driftJacobian = [["1"]]
controlJacobian = [["sin(t)"]]
envelopeRMin = "2 * sin(t)"
envelopeRMax = "2 * sin(t)"
envelopeAMax = "2"
period = 6.283185307179586
stateBox = [[-10.0, 10.0]]
"#,
        );
        let sys = cfg.build_system().unwrap();
        assert_eq!(sys.dimension(), 1);
        assert_eq!(sys.period, Some(6.283185307179586));
        let j = sys.control_jacobian_at(1.0, &[3.0]).unwrap();
        assert!((j.get(0, 0) - 1.0f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_jacobian_is_rejected() {
        let cfg = parse(
            r#"
[system]
dimension = 1
drift = ["x1 * x1"]
controlDir = ["x1"]
driftJacobian = [["1"]]
controlJacobian = [["1"]]
envelopeRMin = "2"
envelopeRMax = "2"
envelopeAMax = "10"
"#,
        );
        let err = match cfg.build_system() {
            Err(e) => e,
            Ok(_) => panic!("inconsistent jacobian accepted"),
        };
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn config_errors_are_descriptive() {
        assert!(toml::from_str::<RunConfig>("window = [0.0, 1.0]").is_err()); // no system
        let cfg = parse("system = \"eq47\"\nwindow = [1.0, 1.0]");
        assert!(cfg.window().is_err());
        let cfg = parse("system = \"eq47\"");
        assert!(cfg.window().is_err());
        assert!(cfg.initial_conditions(1).is_err());
        let cfg = parse("system = \"nope\"");
        assert!(cfg.build_system().is_err());
        let cfg = parse("system = \"eq47\"\nforcing = \"x1 + t\"");
        assert!(cfg.build_system().is_err());
        let cfg = parse(
            "system = \"eq48\"\ninitialConditions = { count = 2, box = [[-1.0, 1.0]], seed = 1 }",
        );
        assert!(cfg.initial_conditions(2).is_err());
    }
}
