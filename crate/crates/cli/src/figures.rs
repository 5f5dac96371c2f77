//! The four bundled figure setups.  Initial conditions are explicit fixed
//! lists so repeated runs are byte-identical.

use contraction_core::signal::{ConstantInput, FnInput, InputSignal};
use contraction_core::sysmodel::{self, Forcing};
use contraction_core::{Error, Result, SystemModel};

pub struct FigureSpec {
    pub id: &'static str,
    pub title: &'static str,
    pub system: SystemModel,
    pub input: Box<dyn InputSignal>,
    pub initial_conditions: Vec<Vec<f64>>,
    pub span: (f64, f64),
    pub grid_points: usize,
    /// Phase plot (x1 vs x2) instead of time series.
    pub phase: bool,
}

pub fn figure(id: &str) -> Result<FigureSpec> {
    match id {
        "fig1" => Ok(FigureSpec {
            id: "fig1",
            title: "scalar system, u = -3 sin t, g = 0",
            system: sysmodel::eq47(Forcing::Zero),
            input: Box::new(FnInput(|t: f64| -3.0 * t.sin())),
            initial_conditions: (-5..=5).map(|k| vec![k as f64]).collect(),
            span: (0.0, 30.0),
            grid_points: 1501,
            phase: false,
        }),
        "fig2" => Ok(FigureSpec {
            id: "fig2",
            title: "scalar system, u = -3 sin t, g = t cos t",
            system: sysmodel::eq47(Forcing::TCosT),
            input: Box::new(FnInput(|t: f64| -3.0 * t.sin())),
            initial_conditions: (-5..=5).map(|k| vec![k as f64]).collect(),
            span: (0.0, 30.0),
            grid_points: 1501,
            phase: false,
        }),
        "fig3" => Ok(FigureSpec {
            id: "fig3",
            title: "planar system, u = -2",
            system: sysmodel::eq48(),
            input: Box::new(ConstantInput(-2.0)),
            initial_conditions: vec![
                vec![2.0, 2.0],
                vec![2.0, -2.0],
                vec![-2.0, 2.0],
                vec![-2.0, -2.0],
                vec![2.0, 0.0],
                vec![-2.0, 0.0],
                vec![0.0, 2.0],
                vec![0.0, -2.0],
            ],
            span: (0.0, 6.0),
            grid_points: 601,
            phase: true,
        }),
        "fig4" => Ok(FigureSpec {
            id: "fig4",
            title: "bistable system driven to a single equilibrium, u = 3",
            system: sysmodel::eq49(),
            input: Box::new(ConstantInput(3.0)),
            initial_conditions: (-3..=3).map(|k| vec![k as f64]).collect(),
            span: (0.0, 8.0),
            grid_points: 801,
            phase: false,
        }),
        other => Err(Error::Config(format!(
            "unknown figure '{other}' (available: fig1, fig2, fig3, fig4)"
        ))),
    }
}
