//! Executes one configured run and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hybridsim_core::control::{
    closed_loop_spectral_radius, identify_plant, run_closed_loop, tune_gain_grid, write_control_csv, ControlTrace,
    ControllerConfig, Identification, LinearModel, TuneResult, TuneScenario,
};
use hybridsim_core::datamodel::Placement;
use hybridsim_core::engine::{simulate, write_trace_csv, CapacityChange, SimInput, Trace};
use hybridsim_core::placement::{
    greedy_improve_with, observed_weights, offload_demanding_to_public_with, CostModel, Move, WeightSource,
};
use hybridsim_core::rng::RNG_ALGORITHM;
use hybridsim_core::workload::{write_workload_csv, Burst, QueryInstance};
use hybridsim_core::{digest, Error};
use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ControllerFile, LoadedRun, Mode, Strategy};
use crate::report::{emit_fig2_table, fig2_csv, summarize, Fig2Row, Summary};
use crate::CliError;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn core_err(context: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::user(e.code(), format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInputs {
    pub config: String,
    pub topology: String,
    pub catalog: String,
    pub placement: String,
    pub workload: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Wall-clock creation time; the only field that differs between reruns.
    pub created_unix_s: u64,
    pub mode: Mode,
    pub seed: u64,
    pub rng_algorithm: String,
    pub inputs: ManifestInputs,
    /// Digest over mode, seed, RNG id and input digests.
    pub inputs_digest: String,
    pub capacity_timeline: Vec<CapacityChange>,
    /// SHA-256 of each artifact written alongside the manifest.
    pub artifacts: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub inputs_digest: String,
    pub strategy: Strategy,
    pub weights: WeightSource,
    pub initial_expected_latency_s: f64,
    pub final_expected_latency_s: f64,
    pub moves: Vec<Move>,
    pub initial_simulated_mean_latency_s: f64,
    pub final_simulated_mean_latency_s: f64,
    pub final_placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantReport {
    /// "configured" or "identified".
    pub source: String,
    pub model: LinearModel,
    /// Operating point the model's deviations are taken around.
    pub u_operating: f64,
    pub y_operating: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arx: Option<(Vec<f64>, Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub vm_count: u32,
    pub cost_j: f64,
    pub mean_latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub inputs_digest: String,
    pub plant: PlantReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuneResult>,
    pub gain: Vec<Vec<f64>>,
    pub spectral_radius: f64,
    /// Closed-loop cost; absent in tune mode, which runs open loop.
    pub cost_j: Option<f64>,
    pub mean_latency_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineReport>,
}

/// Everything a run produced, also written to `out_dir`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub manifest: Manifest,
    pub summary: Summary,
    pub fig2: Vec<Fig2Row>,
    pub trace: Trace,
    pub optimizer: Option<OptimizerReport>,
    pub control: Option<(ControlReport, ControlTrace)>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, String)>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::user("IO_ERROR", format!("{}: {e}", dir.display())))?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::user("IO_ERROR", format!("{}: {e}", path.display())))?;
        self.written.push((name.to_owned(), sha256_hex(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.put(name, &bytes)
    }
}

fn trace_bytes(trace: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("in-memory write");
    buf
}

/// Post-run consistency checks; a failure here is an engine bug (exit 2).
pub fn check_trace(trace: &Trace, workload: &[QueryInstance]) -> Result<(), CliError> {
    let fail = |msg: String| Err(CliError::internal(msg));
    if trace.records.len() != workload.len() {
        return fail(format!("{} records for {} submitted queries", trace.records.len(), workload.len()));
    }
    for (r, q) in trace.records.iter().zip(workload) {
        if r.instance_id != q.instance_id || r.arrival_s != q.arrival_s {
            return fail(format!("record order differs from arrival order at instance {}", q.instance_id));
        }
        let scale = r.completion_s.abs().max(1.0);
        let parts = r.queue_wait_s + r.service_s + r.network_s;
        if !(r.completion_s >= r.arrival_s)
            || (r.latency_s - (r.completion_s - r.arrival_s)).abs() > 1e-9 * scale
            || (parts - r.latency_s).abs() > 1e-9 * scale
            || r.queue_wait_s < 0.0
            || r.service_s < 0.0
            || r.network_s < 0.0
        {
            return fail(format!("inconsistent timing for instance {}", r.instance_id));
        }
    }
    Ok(())
}

struct Plant {
    report: PlantReport,
}

fn plant_for(input: SimInput<'_>, file: &ControllerFile) -> Result<Plant, CliError> {
    if let Some(model) = &file.model {
        model.validate().map_err(core_err("controller model"))?;
        return Ok(Plant {
            report: PlantReport {
                source: "configured".into(),
                model: model.clone(),
                u_operating: 0.0,
                y_operating: 0.0,
                arx: None,
            },
        });
    }
    let plan = file.identification.as_ref().expect("checked at load");
    let Identification { fit, u_mean, y_mean, .. } = identify_plant(input, plan).map_err(core_err("identification"))?;
    info!("identified plant a={:?} b={:?} around u={u_mean:.3} y={y_mean:.3}", fit.a, fit.b);
    Ok(Plant {
        report: PlantReport {
            source: "identified".into(),
            model: fit.model.clone(),
            u_operating: u_mean,
            y_operating: y_mean,
            arx: Some((fit.a, fit.b, fit.residual_norm)),
        },
    })
}

fn tune(
    plant: &PlantReport,
    file: &ControllerFile,
    input: SimInput<'_>,
) -> Result<Option<TuneResult>, CliError> {
    let Some(spec) = &file.tune else {
        return Ok(None);
    };
    let cfg = &file.controller;
    let shift = |v: &DVector<f64>, by: f64| v.map(|x| x - by);
    let initial = DVector::from_iterator(
        cfg.actuators(),
        cfg.controlled_nodes.iter().map(|id| input.topology.node(id).map_or(0.0, |n| n.vm_count as f64)),
    );
    let scenario = TuneScenario {
        setpoint: shift(&cfg.setpoint, plant.y_operating),
        u_min: shift(&cfg.u_min, plant.u_operating),
        u_max: shift(&cfg.u_max, plant.u_operating),
        integrator: shift(&initial.zip_map(&cfg.u_min, f64::max).zip_map(&cfg.u_max, f64::min), plant.u_operating),
        steps: spec.steps,
        lambda: cfg.lambda,
    };
    let candidates = spec
        .candidates
        .iter()
        .map(|rows| {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(CliError::user("DIMENSION_MISMATCH", "ragged candidate gain"));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let result = tune_gain_grid(&plant.model, &candidates, &scenario).map_err(core_err("tuning"))?;
    info!("tuned gain index {} (J = {:.4})", result.best_index, result.cost);
    Ok(Some(result))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn baseline(
    input: SimInput<'_>,
    file: &ControllerFile,
    plant: &LinearModel,
) -> Result<Option<BaselineReport>, CliError> {
    let Some(vm) = file.baseline_vm_count else {
        return Ok(None);
    };
    let cfg = &file.controller;
    let mut topology = input.topology.clone();
    for id in &cfg.controlled_nodes {
        topology = topology.with_vm_count(id, vm).map_err(core_err("baseline"))?;
    }
    let static_cfg = ControllerConfig {
        gain: DMatrix::zeros(cfg.gain.nrows(), cfg.gain.ncols()),
        u_min: cfg.u_min.map(|lo| lo.min(vm as f64)),
        u_max: cfg.u_max.map(|hi| hi.max(vm as f64)),
        ..cfg.clone()
    };
    let (trace, control) =
        run_closed_loop(SimInput { topology: &topology, ..input }, plant, &static_cfg).map_err(core_err("baseline"))?;
    Ok(Some(BaselineReport { vm_count: vm, cost_j: control.cost_j, mean_latency_s: trace.mean_latency() }))
}

/// Runs `loaded` with `seed`, writing artifacts into `out_dir`.
pub fn execute(loaded: &LoadedRun, seed: u64, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let cfg = &loaded.config;
    let (workload, spec) = loaded.workload(seed)?;
    let bursts: Vec<Burst> = spec.as_ref().map(|s| s.bursts.clone()).unwrap_or_default();
    info!("mode {:?}, seed {seed}, {} queries", cfg.mode, workload.len());

    let inputs = ManifestInputs {
        config: sha256_hex(loaded.sources.config.as_bytes()),
        topology: digest(&loaded.topology),
        catalog: digest(&loaded.catalog),
        placement: digest(&loaded.placement),
        workload: digest(&workload),
        controller: loaded.sources.controller.as_ref().map(|t| sha256_hex(t.as_bytes())),
    };
    let inputs_digest = digest(&(cfg.mode, seed, RNG_ALGORITHM, &inputs));

    let input = SimInput {
        topology: &loaded.topology,
        catalog: &loaded.catalog,
        placement: &loaded.placement,
        workload: &workload,
        seed,
    };
    let mut artifacts = Artifacts::new(out_dir)?;
    let mut optimizer = None;
    let mut control = None;

    let trace = match cfg.mode {
        Mode::Simulate => simulate(input, &[]).map_err(core_err("simulate"))?,
        Mode::Optimize => {
            let initial = simulate(input, &[]).map_err(core_err("simulate"))?;
            check_trace(&initial, &workload)?;
            let model = match cfg.optimize.weights {
                WeightSource::Design => CostModel::new(&loaded.catalog, &loaded.topology),
                WeightSource::Measured => {
                    CostModel::with_weights(&loaded.catalog, &loaded.topology, &observed_weights(&initial))
                }
            }
            .map_err(core_err("optimize"))?;
            let initial_cost = model.evaluate(&loaded.placement).map_err(core_err("optimize"))?.expected_latency_s;
            let (placement, moves) = match cfg.optimize.strategy {
                Strategy::Greedy => {
                    let out = greedy_improve_with(&model, &loaded.placement, cfg.optimize.max_moves)
                        .map_err(core_err("optimize"))?;
                    (out.placement, out.moves)
                }
                Strategy::Offload => {
                    let p = offload_demanding_to_public_with(&model, &loaded.placement, &initial, cfg.optimize.k)
                        .map_err(core_err("optimize"))?;
                    (p, Vec::new())
                }
            };
            let final_cost = model.evaluate(&placement).map_err(core_err("optimize"))?.expected_latency_s;
            let improved = simulate(SimInput { placement: &placement, ..input }, &[]).map_err(core_err("simulate"))?;
            debug!("analytic {initial_cost:.4} -> {final_cost:.4}");
            artifacts.json("initial_placement.json", &loaded.placement)?;
            artifacts.json("final_placement.json", &placement)?;
            artifacts.put("trace_initial.csv", &trace_bytes(&initial))?;
            optimizer = Some(OptimizerReport {
                inputs_digest: inputs_digest.clone(),
                strategy: cfg.optimize.strategy,
                weights: cfg.optimize.weights,
                initial_expected_latency_s: initial_cost,
                final_expected_latency_s: final_cost,
                moves,
                initial_simulated_mean_latency_s: initial.mean_latency(),
                final_simulated_mean_latency_s: improved.mean_latency(),
                final_placement: placement,
            });
            artifacts.json("optimizer_report.json", optimizer.as_ref().unwrap())?;
            improved
        }
        Mode::ClosedLoop | Mode::Tune => {
            let file = loaded.controller.as_ref().expect("checked at load");
            let plant = plant_for(input, file)?.report;
            let tuning = tune(&plant, file, input)?;
            let mut ctl = file.controller.clone();
            if let Some(t) = &tuning {
                ctl.gain = t.gain.clone();
            }
            let rho = closed_loop_spectral_radius(&plant.model, &ctl).map_err(core_err("controller"))?;
            if cfg.mode == Mode::Tune {
                let trace = simulate(input, &[]).map_err(core_err("simulate"))?;
                let report = ControlReport {
                    inputs_digest: inputs_digest.clone(),
                    plant,
                    tuning,
                    gain: rows(&ctl.gain),
                    spectral_radius: rho,
                    cost_j: None,
                    mean_latency_s: trace.mean_latency(),
                    baseline: None,
                };
                artifacts.json("tune_report.json", &report)?;
                trace
            } else {
                let (trace, ctrace) = run_closed_loop(input, &plant.model, &ctl).map_err(core_err("closed loop"))?;
                let base = baseline(input, file, &plant.model)?;
                let report = ControlReport {
                    inputs_digest: inputs_digest.clone(),
                    plant,
                    tuning,
                    gain: rows(&ctl.gain),
                    spectral_radius: rho,
                    cost_j: Some(ctrace.cost_j),
                    mean_latency_s: trace.mean_latency(),
                    baseline: base,
                };
                let mut csv = Vec::new();
                write_control_csv(&ctrace, &mut csv).expect("in-memory write");
                artifacts.put("control_trace.csv", &csv)?;
                artifacts.json("control_report.json", &report)?;
                control = Some((report, ctrace));
                trace
            }
        }
    };
    check_trace(&trace, &workload)?;

    let mut wl = Vec::new();
    write_workload_csv(&workload, &mut wl).expect("in-memory write");
    artifacts.put("workload.csv", &wl)?;
    artifacts.put("trace.csv", &trace_bytes(&trace))?;
    let fig2 = emit_fig2_table(&trace);
    artifacts.put("fig2_table.csv", fig2_csv(&fig2).as_bytes())?;
    let summary = summarize(&trace, &cfg.analysis, &bursts, &inputs_digest);
    artifacts.json("summary.json", &summary)?;

    let manifest = Manifest {
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        mode: cfg.mode,
        seed,
        rng_algorithm: RNG_ALGORITHM.to_owned(),
        inputs,
        inputs_digest,
        capacity_timeline: trace.manifest.capacity_timeline.clone(),
        artifacts: artifacts.written.clone(),
    };
    artifacts.json("manifest.json", &manifest)?;

    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        seed,
        manifest,
        summary,
        fig2,
        trace,
        optimizer,
        control,
    })
}
