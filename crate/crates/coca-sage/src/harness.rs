//! Experiment orchestration: dataset resolution, repeated train/eval runs,
//! perturbation sweeps, and report emission.
//!
//! A run is specified by [`ExperimentConfig`]. The split is derived once from
//! the base seed and shared by every repeat; each repeat re-derives its own
//! seed for initialization, perturbation masks, and tree sampling, so
//! accuracy variance across repeats reflects those sources and nothing else.
//! Reports are byte-identical across runs of the same config except for the
//! wall-time column.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    generate_sbm, load_citation_dataset, make_split, Graph, LoadReport, SbmParams,
};
use crate::model::{evaluate, train, EpochMetrics, ModelConfig};
use crate::perturb::{apply_placement, PerturbKind, Placement, PerturbationSpec};
use crate::sampling::{SamplerConfig, SamplerEngine, SamplerKind};
use crate::seed::{derive_seed, tag};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "COCA_SAGE_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// A citation dataset laid out as `<root>/<name>/<name>.content` and
    /// `<root>/<name>/<name>.cites`.
    Citation { name: String },
    /// A synthetic stochastic block model graph, generated from the base
    /// seed.
    Sbm { params: SbmParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Perturbation settings for a run. The mask seed is derived per repeat, so
/// it is not part of the setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSetting {
    pub kind: PerturbKind,
    pub intensity: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Overrides the dataset root; falls back to `COCA_SAGE_DATA_DIR`, then
    /// `./data`.
    pub data_dir: Option<PathBuf>,
    pub split: SplitSpec,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub perturb: Option<PerturbSetting>,
    pub repeats: usize,
    pub base_seed: u64,
}

/// One line of a report. Accuracies are percentages over `repeats` runs with
/// population standard deviation; wall time is the mean over repeats of the
/// median epoch time after a two-epoch warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sampler: String,
    pub placement: String,
    pub eta: f64,
    pub sample_size: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub wall_time_per_epoch_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

pub fn dataset_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads or generates the configured graph. Citation datasets also return
/// their load report.
pub fn resolve_dataset_with_report(
    cfg: &ExperimentConfig,
) -> Result<(Graph, Option<LoadReport>)> {
    match &cfg.dataset {
        DatasetSpec::Sbm { params } => {
            let graph = generate_sbm(params, derive_seed(cfg.base_seed, &[tag::DATASET]))?;
            Ok((graph, None))
        }
        DatasetSpec::Citation { name } => {
            let root = dataset_root(cfg);
            let content = root.join(name).join(format!("{name}.content"));
            let cites = root.join(name).join(format!("{name}.cites"));
            if !content.is_file() || !cites.is_file() {
                return Err(Error::Parameter(format!(
                    "dataset '{name}' not found under {} (expected {} and {}); run \
                     scripts/fetch_datasets.sh or point {DATA_DIR_ENV} at the dataset root",
                    root.display(),
                    content.display(),
                    cites.display()
                )));
            }
            let (graph, report) = load_citation_dataset(&content, &cites)?;
            Ok((graph, Some(report)))
        }
    }
}

pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Graph> {
    resolve_dataset_with_report(cfg).map(|(g, _)| g)
}

fn median_epoch_secs(history: &[EpochMetrics]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let start = if history.len() > 2 { 2 } else { 0 };
    let mut secs: Vec<f64> = history[start..].iter().map(|m| m.secs).collect();
    secs.sort_by(f64::total_cmp);
    let mid = secs.len() / 2;
    if secs.len() % 2 == 1 {
        secs[mid]
    } else {
        0.5 * (secs[mid - 1] + secs[mid])
    }
}

/// Trains and evaluates `cfg.repeats` times on a fixed split and returns the
/// aggregated row. The graph must be the one `resolve_dataset` produced for
/// this config.
pub fn run_experiment(graph: &Graph, cfg: &ExperimentConfig) -> Result<ReportRow> {
    if cfg.repeats == 0 {
        return Err(Error::Parameter("repeats must be at least 1".into()));
    }
    cfg.model.validate()?;
    let split = make_split(
        graph,
        cfg.split.train,
        cfg.split.val,
        cfg.split.test,
        derive_seed(cfg.base_seed, &[tag::SPLIT]),
    )?;
    let mut accuracies = Vec::with_capacity(cfg.repeats);
    let mut wall_times = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let repeat_seed = derive_seed(cfg.base_seed, &[tag::REPEAT, r as u64]);
        let run_graph = match &cfg.perturb {
            Some(p) if p.intensity > 0.0 => {
                let spec = PerturbationSpec {
                    kind: p.kind,
                    intensity: p.intensity,
                    placement: p.placement,
                    seed: repeat_seed,
                };
                // Train and eval share the perturbed matrix.
                apply_placement(graph, &split, &spec)?.0
            }
            _ => graph.clone(),
        };
        let engine = SamplerEngine::new(
            &run_graph,
            cfg.sampler.clone(),
            derive_seed(repeat_seed, &[tag::WEIGHTS]),
        )?;
        let outcome = train(&engine, &split, &cfg.model, repeat_seed)?;
        let acc = evaluate(
            &outcome.params,
            &engine,
            &split.test,
            &cfg.model.per_hop,
            derive_seed(repeat_seed, &[tag::TEST_EVAL]),
        )?;
        accuracies.push(acc * 100.0);
        wall_times.push(median_epoch_secs(&outcome.history));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    // Sample variance; a single repeat carries no spread information.
    let var = if accuracies.len() > 1 {
        accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ReportRow {
        sampler: cfg.sampler.kind.name().to_string(),
        placement: cfg
            .perturb
            .as_ref()
            .map(|p| p.placement.name())
            .unwrap_or("none")
            .to_string(),
        eta: cfg.perturb.as_ref().map(|p| p.intensity).unwrap_or(0.0),
        sample_size: cfg.model.per_hop[0],
        accuracy_mean: mean,
        accuracy_std: var.sqrt(),
        wall_time_per_epoch_s: wall_times.iter().sum::<f64>() / n,
    })
}

/// Full grid over samplers, placements, and intensities, in that nesting
/// order. The perturbation kind comes from `cfg.perturb`.
pub fn run_sweep(
    graph: &Graph,
    cfg: &ExperimentConfig,
    samplers: &[SamplerKind],
    placements: &[Placement],
    etas: &[f64],
) -> Result<ExperimentReport> {
    let base = cfg.perturb.as_ref().ok_or_else(|| {
        Error::Parameter("sweep requires a perturbation kind in the config".into())
    })?;
    let mut rows = Vec::with_capacity(samplers.len() * placements.len() * etas.len());
    for &sampler in samplers {
        for &placement in placements {
            for &eta in etas {
                let mut c = cfg.clone();
                c.sampler.kind = sampler;
                c.perturb = Some(PerturbSetting {
                    kind: base.kind,
                    intensity: eta,
                    placement,
                });
                rows.push(run_experiment(graph, &c)?);
            }
        }
    }
    Ok(ExperimentReport { rows })
}

/// Accuracy as a function of the per-hop sample size: one row per
/// (sampler, size), with both hops set to the size.
pub fn run_sample_size_study(
    graph: &Graph,
    cfg: &ExperimentConfig,
    samplers: &[SamplerKind],
    sizes: &[usize],
) -> Result<ExperimentReport> {
    let mut rows = Vec::with_capacity(samplers.len() * sizes.len());
    for &sampler in samplers {
        for &size in sizes {
            let mut c = cfg.clone();
            c.sampler.kind = sampler;
            c.model.per_hop = vec![size, size];
            rows.push(run_experiment(graph, &c)?);
        }
    }
    Ok(ExperimentReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Parameter(format!(
                "unknown report format '{other}' (expected csv, json, or markdown)"
            ))),
        }
    }
}

/// Renders a report. CSV and JSON keep full float precision; markdown is
/// rounded for reading and grouped by placement.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Parameter("report has no rows".into()));
    }
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(
                "sampler,placement,eta,sample_size,accuracy_mean,accuracy_std,wall_time_per_epoch_s\n",
            );
            for r in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.sampler,
                    r.placement,
                    r.eta,
                    r.sample_size,
                    r.accuracy_mean,
                    r.accuracy_std,
                    r.wall_time_per_epoch_s
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Markdown => {
            let mut out = String::new();
            let mut seen: Vec<&str> = Vec::new();
            for r in &report.rows {
                if !seen.contains(&r.placement.as_str()) {
                    seen.push(&r.placement);
                }
            }
            for placement in seen {
                out.push_str(&format!("## placement: {placement}\n\n"));
                out.push_str("| sampler | eta | sample size | accuracy (%) | wall s/epoch |\n");
                out.push_str("|---|---|---|---|---|\n");
                for r in report.rows.iter().filter(|r| r.placement == placement) {
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.2} ± {:.2} | {:.4} |\n",
                        r.sampler, r.eta, r.sample_size, r.accuracy_mean, r.accuracy_std,
                        r.wall_time_per_epoch_s
                    ));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// Stable 16-hex-digit digest of the canonical JSON form of a config, for
/// naming run directories.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut parts = Vec::with_capacity(json.len() / 8 + 2);
    for chunk in json.as_bytes().chunks(8) {
        let mut b = [0u8; 8];
        b[..chunk.len()].copy_from_slice(chunk);
        parts.push(u64::from_le_bytes(b));
    }
    parts.push(json.len() as u64);
    Ok(format!("{:016x}", derive_seed(0xC0CA, &parts)))
}
