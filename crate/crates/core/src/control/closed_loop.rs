//! Feedback over the simulator: every sample interval the loop measures the
//! last interval, steps the integral controller and applies the rounded
//! output as the VM count of the controlled nodes.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arx::{fit_model, ArxFit, IoSample};
use super::controller::{step_controller, ControllerConfig, Output};
use super::LinearModel;
use crate::engine::{CapacityChange, IntervalMeasurement, SimInput, Simulation, Trace};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStepRecord {
    pub k: usize,
    pub t_s: f64,
    pub y: Vec<f64>,
    /// Clamped controller output.
    pub u: Vec<f64>,
    /// VM counts in force after this step.
    pub applied: Vec<u32>,
    pub saturated: Vec<bool>,
    /// Cost accumulated up to and including this step.
    pub j_partial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrace {
    pub steps: Vec<ControlStepRecord>,
    pub cost_j: f64,
}

struct Measurer {
    outputs: Vec<Output>,
    last_latency: f64,
}

impl Measurer {
    fn new(outputs: &[Output], initial_latency: f64) -> Self {
        Self { outputs: outputs.to_vec(), last_latency: initial_latency }
    }

    /// Intervals without completions hold the previous latency.
    fn measure(&mut self, m: IntervalMeasurement) -> DVector<f64> {
        if let Some(latency) = m.mean_latency_s {
            self.last_latency = latency;
        }
        DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|o| match o {
                Output::MeanLatency => self.last_latency,
                Output::MeanInFlight => m.mean_in_flight,
            }),
        )
    }
}

fn control_steps(input: &SimInput<'_>, interval: f64) -> usize {
    input
        .workload
        .last()
        .map_or(0, |q| (q.arrival_s / interval).ceil() as usize)
}

fn check_nodes(input: &SimInput<'_>, config: &ControllerConfig) -> Result<()> {
    if config.controlled_nodes.len() != config.actuators() {
        return Err(Error::Dimension(format!(
            "{} controlled nodes for {} actuators",
            config.controlled_nodes.len(),
            config.actuators()
        )));
    }
    if config.outputs.len() != config.setpoint.len() {
        return Err(Error::Dimension(format!(
            "{} outputs for {} setpoints",
            config.outputs.len(),
            config.setpoint.len()
        )));
    }
    for (i, id) in config.controlled_nodes.iter().enumerate() {
        let node = input
            .topology
            .node(id)
            .ok_or_else(|| Error::Validation(format!("controlled node `{id}` not in topology")))?;
        for bound in [config.u_min[i], config.u_max[i]] {
            if bound < node.vm_min as f64 || bound > node.vm_max as f64 {
                return Err(Error::CapacityOutOfBounds {
                    node_id: id.clone(),
                    vm_count: bound.round().max(0.0) as u32,
                    vm_min: node.vm_min,
                    vm_max: node.vm_max,
                });
            }
        }
    }
    Ok(())
}

fn apply(sim: &mut Simulation<'_>, nodes: &[String], u: &DVector<f64>, t: f64) -> Result<Vec<u32>> {
    nodes
        .iter()
        .zip(u.iter())
        .map(|(id, &value)| {
            let target = value.round() as u32;
            if sim.vm_count(id) != Some(target) {
                sim.schedule_capacity(CapacityChange { time_s: t, node_id: id.clone(), vm_count: target })?;
                sim.advance_to(t);
            }
            Ok(target)
        })
        .collect()
}

/// Runs the workload under integral feedback and returns the trace together
/// with the per-step control record and cost.
pub fn run_closed_loop(
    input: SimInput<'_>,
    model: &LinearModel,
    config: &ControllerConfig,
) -> Result<(Trace, ControlTrace)> {
    config.check_against(model)?;
    check_nodes(&input, config)?;
    let interval = config.sample_interval_s;
    let mut sim = Simulation::new(input)?;

    let mut integrator = DVector::from_iterator(
        config.actuators(),
        config.controlled_nodes.iter().enumerate().map(|(i, id)| {
            let vm = sim.vm_count(id).expect("checked") as f64;
            vm.clamp(config.u_min[i], config.u_max[i])
        }),
    );
    let latency_reference = config
        .outputs
        .iter()
        .position(|o| *o == Output::MeanLatency)
        .map_or(0.0, |i| config.setpoint[i]);
    let mut measurer = Measurer::new(&config.outputs, latency_reference);

    let mut steps = Vec::new();
    let mut cost = 0.0;
    for k in 1..=control_steps(&input, interval) {
        let t = k as f64 * interval;
        sim.advance_to(t);
        let y = measurer.measure(sim.interval_measurement(t - interval, t));
        let step = step_controller(config, &integrator, &y);
        cost += config.stage_cost(&y, &step.u);
        let applied = apply(&mut sim, &config.controlled_nodes, &step.u, t)?;
        steps.push(ControlStepRecord {
            k,
            t_s: t,
            y: y.iter().copied().collect(),
            u: step.u.iter().copied().collect(),
            applied,
            saturated: step.saturated,
            j_partial: cost,
        });
        integrator = step.integrator;
    }
    Ok((sim.finish(), ControlTrace { steps, cost_j: cost }))
}

/// Writes `k,t_s,y_0..,u_0..,saturated,J_partial`. `saturated` is 1 when any
/// actuator hit a bound at that step.
pub fn write_control_csv<W: Write>(trace: &ControlTrace, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let (p, m) = trace.steps.first().map_or((0, 0), |s| (s.y.len(), s.u.len()));
    let mut header = vec!["k".to_string(), "t_s".to_string()];
    header.extend((0..p).map(|i| format!("y_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend(["saturated".to_string(), "J_partial".to_string()]);
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![s.k.to_string(), s.t_s.to_string()];
        row.extend(s.y.iter().map(f64::to_string));
        row.extend(s.u.iter().map(f64::to_string));
        row.push(u8::from(s.saturated.iter().any(|&b| b)).to_string());
        row.push(s.j_partial.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Excitation and fit settings for identifying a single-node plant from
/// simulator logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationPlan {
    pub node_id: String,
    #[serde(default = "default_output")]
    pub output: Output,
    pub u_min: u32,
    pub u_max: u32,
    /// Samples each random level is held for.
    pub hold_steps: usize,
    pub sample_interval_s: f64,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_output() -> Output {
    Output::MeanLatency
}

fn default_order() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    /// Model of deviations from the operating point below.
    pub fit: ArxFit,
    pub u_mean: f64,
    pub y_mean: f64,
    pub log: Vec<IoSample>,
}

/// Drives the node's VM count with a random piecewise-constant signal, logs
/// `(u[k], y[k])` per interval and fits an ARX model to the mean-removed log.
pub fn identify_plant(input: SimInput<'_>, plan: &IdentificationPlan) -> Result<Identification> {
    if plan.u_min > plan.u_max || plan.hold_steps == 0 {
        return Err(Error::Validation("identification needs u_min ≤ u_max and hold_steps ≥ 1".into()));
    }
    let interval = plan.sample_interval_s;
    if !(interval > 0.0) {
        return Err(Error::Validation("sample_interval_s must be positive".into()));
    }
    let nodes = [plan.node_id.clone()];
    let mut sim = Simulation::new(input)?;
    let mut rng = stream(input.seed, Stream::Identification);
    let mut measurer = Measurer::new(&[plan.output], 0.0);
    let mut log = Vec::new();
    let mut level = plan.u_min;
    let mut seen_latency = false;
    for k in 1..=control_steps(&input, interval) {
        let t = k as f64 * interval;
        sim.advance_to(t);
        let m = sim.interval_measurement(t - interval, t);
        seen_latency |= m.mean_latency_s.is_some();
        let y = measurer.measure(m)[0];
        if (k - 1) % plan.hold_steps == 0 {
            level = rng.random_range(plan.u_min..=plan.u_max);
        }
        apply(&mut sim, &nodes, &DVector::from_element(1, level as f64), t)?;
        // Skip the warm-up before any latency has been observed.
        if seen_latency || plan.output == Output::MeanInFlight {
            log.push(IoSample { u: vec![level as f64], y: vec![y] });
        }
    }
    let n = log.len().max(1) as f64;
    let u_mean = log.iter().map(|s| s.u[0]).sum::<f64>() / n;
    let y_mean = log.iter().map(|s| s.y[0]).sum::<f64>() / n;
    let centered: Vec<IoSample> = log
        .iter()
        .map(|s| IoSample { u: vec![s.u[0] - u_mean], y: vec![s.y[0] - y_mean] })
        .collect();
    let fit = fit_model(&centered, plan.order, interval)?;
    Ok(Identification { fit, u_mean, y_mean, log })
}
