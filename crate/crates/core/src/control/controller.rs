use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{matrix_rows, vector};
use super::LinearModel;
use crate::{Error, Result};

/// Quantities the closed loop can feed back from the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    /// Mean latency of queries completing in the last interval.
    MeanLatency,
    /// Time-averaged in-flight query count over the last interval.
    MeanInFlight,
}

fn default_outputs() -> Vec<Output> {
    vec![Output::MeanLatency]
}

/// Integral controller with actuator bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Integral gain, one row per actuator and one column per output.
    #[serde(with = "matrix_rows")]
    pub gain: DMatrix<f64>,
    #[serde(with = "vector")]
    pub setpoint: DVector<f64>,
    #[serde(with = "vector")]
    pub u_min: DVector<f64>,
    #[serde(with = "vector")]
    pub u_max: DVector<f64>,
    pub sample_interval_s: f64,
    /// Weight of resource usage in the cost criterion.
    #[serde(default)]
    pub lambda: f64,
    /// Nodes whose VM count each actuator drives.
    #[serde(default)]
    pub controlled_nodes: Vec<String>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
}

impl ControllerConfig {
    pub fn actuators(&self) -> usize {
        self.u_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.u_min.len();
        let p = self.setpoint.len();
        if m == 0 || self.u_max.len() != m {
            return Err(Error::Dimension("u_min and u_max must have the same nonzero length".into()));
        }
        if self.gain.nrows() != m || self.gain.ncols() != p {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {m}x{p}",
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::Validation("u_min must not exceed u_max".into()));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(Error::Validation("sample_interval_s must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn check_against(&self, model: &LinearModel) -> Result<()> {
        self.validate()?;
        model.validate()?;
        if model.inputs() != self.actuators() || model.outputs() != self.setpoint.len() {
            return Err(Error::Dimension(format!(
                "model has {} inputs and {} outputs, controller has {} actuators and {} setpoints",
                model.inputs(),
                model.outputs(),
                self.actuators(),
                self.setpoint.len()
            )));
        }
        Ok(())
    }

    /// Stage cost `(‖y − r‖² + λ‖u‖²)·Δt`.
    pub fn stage_cost(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        ((y - &self.setpoint).norm_squared() + self.lambda * u.norm_squared()) * self.sample_interval_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub u: DVector<f64>,
    pub integrator: DVector<f64>,
    pub saturated: Vec<bool>,
}

/// `v = s + Ki·(r − y)`, `u = clamp(v)`. Saturated components keep their
/// previous integrator value (clipped into bounds) instead of winding up.
pub fn step_controller(config: &ControllerConfig, integrator: &DVector<f64>, y: &DVector<f64>) -> ControllerStep {
    let v = integrator + &config.gain * (&config.setpoint - y);
    let mut u = v.clone();
    let mut next = v.clone();
    let mut saturated = vec![false; v.len()];
    for i in 0..v.len() {
        let (lo, hi) = (config.u_min[i], config.u_max[i]);
        if v[i] > hi {
            u[i] = hi;
            next[i] = hi;
            saturated[i] = true;
        } else if v[i] < lo {
            u[i] = lo;
            next[i] = lo;
            saturated[i] = true;
        }
    }
    ControllerStep { u, integrator: next, saturated }
}

/// Closed-loop matrix on the stacked state `(x, s)` under the unsaturated
/// law: `[[A − B·Ki·C, B], [−Ki·C, I]]`.
pub fn closed_loop_matrix(model: &LinearModel, gain: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.states();
    let m = model.inputs();
    let kc = gain * &model.c;
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&(&model.a - &model.b * &kc));
    out.view_mut((0, n), (n, m)).copy_from(&model.b);
    out.view_mut((n, 0), (m, n)).copy_from(&(-kc));
    out.view_mut((n, n), (m, m)).fill_with_identity();
    out
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> f64 {
    matrix
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of the closed loop. With an all-zero gain the integrator
/// is a constant input rather than a mode of the loop, so the plant matrix
/// alone decides.
pub fn closed_loop_spectral_radius(model: &LinearModel, config: &ControllerConfig) -> Result<f64> {
    config.check_against(model)?;
    if config.gain.iter().all(|&k| k == 0.0) {
        return Ok(spectral_radius(&model.a));
    }
    Ok(spectral_radius(&closed_loop_matrix(model, &config.gain)))
}

pub fn is_stable(spectral_radius: f64) -> bool {
    spectral_radius < 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRun {
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Runs the controller against the linear model for `steps` samples,
/// starting from the model's initial state and the given integrator state.
pub fn simulate_linear(
    model: &LinearModel,
    config: &ControllerConfig,
    integrator: &DVector<f64>,
    steps: usize,
) -> Result<LinearRun> {
    config.check_against(model)?;
    let mut x = model.initial_state();
    let mut s = integrator.clone();
    let mut run = LinearRun { y: Vec::with_capacity(steps), u: Vec::with_capacity(steps), cost: 0.0 };
    for _ in 0..steps {
        let y = &model.c * &x;
        let step = step_controller(config, &s, &y);
        run.cost += config.stage_cost(&y, &step.u);
        x = &model.a * &x + &model.b * &step.u;
        s = step.integrator;
        run.y.push(y);
        run.u.push(step.u);
    }
    Ok(run)
}

/// Linear-model scenario used to score candidate gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneScenario {
    #[serde(with = "vector")]
    pub setpoint: DVector<f64>,
    #[serde(with = "vector")]
    pub u_min: DVector<f64>,
    #[serde(with = "vector")]
    pub u_max: DVector<f64>,
    #[serde(with = "vector")]
    pub integrator: DVector<f64>,
    pub steps: usize,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub spectral_radius: f64,
    pub stable: bool,
    /// Only scored when stable.
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_index: usize,
    #[serde(with = "matrix_rows")]
    pub gain: DMatrix<f64>,
    pub cost: f64,
    pub candidates: Vec<CandidateScore>,
}

impl TuneScenario {
    pub fn controller(&self, gain: DMatrix<f64>, sample_interval_s: f64) -> ControllerConfig {
        ControllerConfig {
            gain,
            setpoint: self.setpoint.clone(),
            u_min: self.u_min.clone(),
            u_max: self.u_max.clone(),
            sample_interval_s,
            lambda: self.lambda,
            controlled_nodes: Vec::new(),
            outputs: default_outputs(),
        }
    }
}

/// Keeps candidates with a stable closed loop and returns the one with the
/// lowest cost on the linear model; earlier candidates win ties.
pub fn tune_gain_grid(model: &LinearModel, candidates: &[DMatrix<f64>], scenario: &TuneScenario) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate gains".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (index, gain) in candidates.iter().enumerate() {
        let config = scenario.controller(gain.clone(), model.sample_interval_s);
        let rho = closed_loop_spectral_radius(model, &config)?;
        let stable = is_stable(rho);
        let cost = if stable {
            Some(simulate_linear(model, &config, &scenario.integrator, scenario.steps)?.cost)
        } else {
            None
        };
        if let Some(c) = cost {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((index, c));
            }
        }
        scores.push(CandidateScore { index, spectral_radius: rho, stable, cost });
    }
    let (best_index, cost) = best.ok_or(Error::NoStableCandidate)?;
    Ok(TuneResult { best_index, gain: candidates[best_index].clone(), cost, candidates: scores })
}
