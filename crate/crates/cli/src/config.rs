//! Run configuration and loading of every referenced input.

use std::fs;
use std::path::{Path, PathBuf};

use hybridsim_core::control::{ControllerConfig, IdentificationPlan, LinearModel};
use hybridsim_core::datamodel::{ensure_valid, load_catalog, load_placement, Catalog, Placement};
use hybridsim_core::placement::WeightSource;
use hybridsim_core::topology::{load_topology, Topology};
use hybridsim_core::workload::{generate_workload, read_workload_csv, QueryInstance, WorkloadSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Optimize,
    ClosedLoop,
    Tune,
}

/// Either an inline generator spec or a path to a workload CSV for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSource {
    Replay(String),
    Generate(WorkloadSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_window")]
    pub overload_window_s: f64,
    #[serde(default = "default_threshold")]
    pub overload_threshold: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_window() -> f64 {
    60.0
}

fn default_threshold() -> usize {
    10
}

fn default_top_k() -> usize {
    3
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            overload_window_s: default_window(),
            overload_threshold: default_threshold(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Greedy,
    /// Move fragments of the top-k demanding templates to the public tier.
    Offload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_max_moves")]
    pub max_moves: usize,
    #[serde(default)]
    pub weights: WeightSource,
    /// Templates offloaded by the offload strategy.
    #[serde(default = "default_top_k")]
    pub k: usize,
}

fn default_max_moves() -> usize {
    100
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { strategy: Strategy::Greedy, max_moves: default_max_moves(), weights: WeightSource::Design, k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    /// Candidate gains, each row-major.
    pub candidates: Vec<Vec<Vec<f64>>>,
    pub steps: usize,
}

/// Contents of the file referenced by `RunConfig::controller`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub controller: ControllerConfig,
    /// Plant model; identified from the simulator when absent.
    #[serde(default)]
    pub model: Option<LinearModel>,
    #[serde(default)]
    pub identification: Option<IdentificationPlan>,
    /// When present, the gain is chosen from these candidates.
    #[serde(default)]
    pub tune: Option<TuneSpec>,
    /// Static VM count for the comparison run without feedback.
    #[serde(default)]
    pub baseline_vm_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub topology: String,
    pub catalog: String,
    pub placement: String,
    pub workload: WorkloadSource,
    #[serde(default)]
    pub controller: Option<String>,
    /// Overrides `workload.seed`; one seed drives every stream of the run.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
}

fn default_output_dir() -> String {
    "out".into()
}

/// A configuration with all referenced documents read and validated.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub config_path: PathBuf,
    pub topology: Topology,
    pub catalog: Catalog,
    pub placement: Placement,
    pub controller: Option<ControllerFile>,
    /// Raw text of each input, hashed into the manifest.
    pub sources: Sources,
}

#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub config: String,
    pub controller: Option<String>,
    pub workload_csv: Option<String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::user("CONFIG_NOT_FOUND", format!("{}: file not found", path.display()))
        } else {
            CliError::user("IO_ERROR", format!("{}: {e}", path.display()))
        }
    })
}

fn with_file<T>(path: &Path, result: hybridsim_core::Result<T>) -> Result<T, CliError> {
    result.map_err(|e| CliError::user(e.code(), format!("{}: {e}", path.display())))
}

pub fn load_run(config_path: &Path) -> Result<LoadedRun, CliError> {
    let text = read(config_path)?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::user("PARSE_ERROR", format!("{}: {e}", config_path.display())))?;
    if !(config.analysis.overload_window_s > 0.0) {
        return Err(CliError::user("CONFIG_INVALID", "analysis.overload_window_s must be positive"));
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| base.join(p);

    let topo_path = resolve(&config.topology);
    let topology = with_file(&topo_path, load_topology(&read(&topo_path)?))?;
    let cat_path = resolve(&config.catalog);
    let catalog = with_file(&cat_path, load_catalog(&read(&cat_path)?))?;
    let place_path = resolve(&config.placement);
    let placement = with_file(&place_path, load_placement(&read(&place_path)?))?;
    with_file(&place_path, ensure_valid(&placement, &catalog, &topology))?;

    let mut sources = Sources { config: text, ..Sources::default() };
    if let WorkloadSource::Replay(p) = &config.workload {
        sources.workload_csv = Some(read(&resolve(p))?);
    }

    let controller = match &config.controller {
        Some(p) => {
            let path = resolve(p);
            let text = read(&path)?;
            let file: ControllerFile = serde_json::from_str(&text)
                .map_err(|e| CliError::user("PARSE_ERROR", format!("{}: {e}", path.display())))?;
            with_file(&path, file.controller.validate())?;
            sources.controller = Some(text);
            Some(file)
        }
        None => None,
    };

    match config.mode {
        Mode::ClosedLoop | Mode::Tune => {
            let Some(file) = &controller else {
                return Err(CliError::user(
                    "CONFIG_INVALID",
                    format!("mode {:?} needs a controller file", config.mode),
                ));
            };
            if file.model.is_none() && file.identification.is_none() {
                return Err(CliError::user("CONFIG_INVALID", "controller file needs a model or an identification plan"));
            }
            if config.mode == Mode::Tune && file.tune.is_none() {
                return Err(CliError::user("CONFIG_INVALID", "mode tune needs a `tune` section in the controller file"));
            }
        }
        Mode::Simulate | Mode::Optimize => {}
    }

    Ok(LoadedRun { config, config_path: config_path.to_path_buf(), topology, catalog, placement, controller, sources })
}

impl LoadedRun {
    /// Seed used for every stream: CLI override, then config, then workload.
    pub fn effective_seed(&self, overridden: Option<u64>) -> u64 {
        overridden.or(self.config.seed).unwrap_or(match &self.config.workload {
            WorkloadSource::Generate(spec) => spec.seed,
            WorkloadSource::Replay(_) => 0,
        })
    }

    pub fn workload(&self, seed: u64) -> Result<(Vec<QueryInstance>, Option<WorkloadSpec>), CliError> {
        let code = |e: hybridsim_core::Error| CliError::user(e.code(), format!("workload: {e}"));
        match &self.config.workload {
            WorkloadSource::Generate(spec) => {
                let spec = WorkloadSpec { seed, ..spec.clone() };
                let instances = generate_workload(&spec, &self.catalog, self.topology.client_classes()).map_err(code)?;
                Ok((instances, Some(spec)))
            }
            WorkloadSource::Replay(_) => {
                let text = self.sources.workload_csv.as_deref().unwrap_or_default();
                Ok((read_workload_csv(text.as_bytes()).map_err(code)?, None))
            }
        }
    }

    /// Output directory named in the config, relative to the config file.
    pub fn default_output_dir(&self) -> PathBuf {
        self.config_path.parent().unwrap_or(Path::new(".")).join(&self.config.output_dir)
    }
}
