//! Command-line front end: train a model, run perturbation sweeps and
//! sample-size studies, or benchmark weight computation.
//!
//! Every knob resolves as defaults < config file (`--config`, flat TOML
//! key/value) < command-line flag.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use coca_sage::density::KdeConfig;
use coca_sage::error::{Error, Result};
use coca_sage::graph::{make_split, SbmParams};
use coca_sage::harness::{
    config_hash, emit_report, resolve_dataset_with_report, run_experiment, run_sample_size_study,
    run_sweep, DatasetSpec, ExperimentConfig, ExperimentReport, PerturbSetting, ReportFormat,
    SplitSpec,
};
use coca_sage::model::{train, Checkpoint, ModelConfig, CHECKPOINT_VERSION};
use coca_sage::perturb::{Placement, PerturbKind};
use coca_sage::sampling::{SamplerConfig, SamplerEngine, SamplerKind, SelectionPolicy};
use coca_sage::seed::{derive_seed, tag};

#[derive(Parser)]
#[command(name = "coca-sage", version, about = "GraphSAGE with causal and cooperative-causal neighbor sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset and report test accuracy.
    Train(TrainArgs),
    /// Sweep sampler x placement x intensity and report the grid.
    Sweep(RunArgs),
    /// Report accuracy as a function of the per-hop sample size.
    SampleStudy(RunArgs),
    /// Time sampler weight computation per kind.
    BenchWeights(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name (cora, citeseer, pubmed) or "sbm".
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset root directory.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Neighbor sampler: uniform, causal, or coca.
    #[arg(long)]
    sampler: Option<String>,
    /// Selection policy: top_m or proportional.
    #[arg(long)]
    policy: Option<String>,
    /// Coalition budget before Monte-Carlo estimation kicks in.
    #[arg(long)]
    mc_budget: Option<usize>,
    #[arg(long)]
    projection_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Per-hop sample sizes, e.g. --per-hop 10 10.
    #[arg(long, num_args = 2, value_names = ["HOP1", "HOP2"])]
    per_hop: Option<Vec<usize>>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Split sizes.
    #[arg(long)]
    train_nodes: Option<usize>,
    #[arg(long)]
    val_nodes: Option<usize>,
    #[arg(long)]
    test_nodes: Option<usize>,
    /// Perturbation: bernoulli_xor (xor), gaussian_gated (gauss), sign_flip,
    /// or none.
    #[arg(long, alias = "perturb")]
    perturb_kind: Option<String>,
    #[arg(long, alias = "eta")]
    perturb_intensity: Option<f64>,
    /// Perturbation placement: both, train_only (train), or test_only (test).
    #[arg(long, alias = "placement")]
    perturb_placement: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// SBM shape, used when --dataset sbm.
    #[arg(long, value_delimiter = ',')]
    sbm_block_sizes: Option<Vec<usize>>,
    #[arg(long)]
    sbm_p_in: Option<f64>,
    #[arg(long)]
    sbm_p_out: Option<f64>,
    #[arg(long)]
    sbm_feature_dim: Option<usize>,
    #[arg(long)]
    sbm_feature_shift: Option<f64>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output path, or '-' for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// Report format: csv, json, or markdown.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Write a checkpoint under the run directory.
    #[arg(long)]
    save_checkpoint: bool,
    /// Directory for run artifacts (named by config hash).
    #[arg(long, default_value = "./runs")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of targets to compute weights for.
    #[arg(long, default_value_t = 50)]
    targets: usize,
}

/// Flat key/value config file. Unknown keys are rejected so typos surface
/// instead of silently falling back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    data_dir: Option<PathBuf>,
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
    sampler: Option<String>,
    policy: Option<String>,
    mc_budget: Option<usize>,
    projection_dim: Option<usize>,
    epsilon_floor: Option<f64>,
    hidden_dim: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    per_hop: Option<Vec<usize>>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    perturb_kind: Option<String>,
    perturb_intensity: Option<f64>,
    perturb_placement: Option<String>,
    repeats: Option<usize>,
    base_seed: Option<u64>,
    sbm_block_sizes: Option<Vec<usize>>,
    sbm_p_in: Option<f64>,
    sbm_p_out: Option<f64>,
    sbm_feature_dim: Option<usize>,
    sbm_feature_shift: Option<f64>,
    samplers: Option<Vec<String>>,
    placements: Option<Vec<String>>,
    etas: Option<Vec<f64>>,
    sizes: Option<Vec<usize>>,
}

/// Grid axes for sweep and study commands.
struct GridSpec {
    samplers: Vec<SamplerKind>,
    placements: Vec<Placement>,
    etas: Vec<f64>,
    sizes: Vec<usize>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Format {
                input: p.display().to_string(),
                line: 1,
                msg: e.to_string(),
            })
        }
    }
}

fn parse_all<T: FromStr<Err = Error>>(names: &[String]) -> Result<Vec<T>> {
    names.iter().map(|s| s.parse()).collect()
}

fn build_config(common: &CommonArgs) -> Result<(ExperimentConfig, GridSpec)> {
    let file = load_file_config(common.config.as_ref())?;

    let dataset_name = common
        .dataset
        .clone()
        .or(file.dataset)
        .unwrap_or_else(|| "cora".to_string());
    let dataset = if dataset_name == "sbm" {
        DatasetSpec::Sbm {
            params: SbmParams {
                block_sizes: common
                    .sbm_block_sizes
                    .clone()
                    .or(file.sbm_block_sizes)
                    .unwrap_or_else(|| vec![100, 100, 100]),
                p_in: common.sbm_p_in.or(file.sbm_p_in).unwrap_or(0.1),
                p_out: common.sbm_p_out.or(file.sbm_p_out).unwrap_or(0.005),
                feature_dim: common
                    .sbm_feature_dim
                    .or(file.sbm_feature_dim)
                    .unwrap_or(16),
                feature_shift: common
                    .sbm_feature_shift
                    .or(file.sbm_feature_shift)
                    .unwrap_or(3.0),
            },
        }
    } else {
        DatasetSpec::Citation { name: dataset_name }
    };

    let sampler_kind: SamplerKind = common
        .sampler
        .clone()
        .or(file.sampler)
        .unwrap_or_else(|| "coca".to_string())
        .parse()?;
    let policy: SelectionPolicy = common
        .policy
        .clone()
        .or(file.policy)
        .unwrap_or_else(|| "top_m".to_string())
        .parse()?;
    let kde_defaults = KdeConfig::default();
    let sampler = SamplerConfig {
        kind: sampler_kind,
        policy,
        mc_budget: common.mc_budget.or(file.mc_budget).unwrap_or(500),
        projection_dim: common.projection_dim.or(file.projection_dim).unwrap_or(16),
        kde: KdeConfig {
            epsilon_floor: file.epsilon_floor.unwrap_or(kde_defaults.epsilon_floor),
            ..kde_defaults
        },
    };

    let model_defaults = ModelConfig::default();
    let model = ModelConfig {
        hidden_dim: common
            .hidden_dim
            .or(file.hidden_dim)
            .unwrap_or(model_defaults.hidden_dim),
        learning_rate: common
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(model_defaults.learning_rate),
        weight_decay: common
            .weight_decay
            .or(file.weight_decay)
            .unwrap_or(model_defaults.weight_decay),
        batch_size: common
            .batch_size
            .or(file.batch_size)
            .unwrap_or(model_defaults.batch_size),
        per_hop: common
            .per_hop
            .clone()
            .or(file.per_hop)
            .unwrap_or(model_defaults.per_hop),
        max_epochs: common
            .max_epochs
            .or(file.max_epochs)
            .unwrap_or(model_defaults.max_epochs),
        patience: common
            .patience
            .or(file.patience)
            .unwrap_or(model_defaults.patience),
    };

    let perturb_kind = common
        .perturb_kind
        .clone()
        .or(file.perturb_kind)
        .filter(|k| k != "none");
    let perturb = match perturb_kind {
        Some(kind) => Some(PerturbSetting {
            kind: kind.parse()?,
            intensity: common
                .perturb_intensity
                .or(file.perturb_intensity)
                .unwrap_or(0.0),
            placement: common
                .perturb_placement
                .clone()
                .or(file.perturb_placement)
                .unwrap_or_else(|| "both".to_string())
                .parse()?,
        }),
        None => None,
    };

    let cfg = ExperimentConfig {
        dataset,
        data_dir: common.data_dir.clone().or(file.data_dir),
        split: SplitSpec {
            train: common.train_nodes.or(file.train).unwrap_or(140),
            val: common.val_nodes.or(file.val).unwrap_or(500),
            test: common.test_nodes.or(file.test).unwrap_or(1000),
        },
        sampler,
        model,
        perturb,
        repeats: common.repeats.or(file.repeats).unwrap_or(10),
        base_seed: common.seed.or(file.base_seed).unwrap_or(1),
    };

    let grid = GridSpec {
        samplers: match file.samplers {
            Some(names) => parse_all(&names)?,
            None => vec![SamplerKind::Uniform, SamplerKind::Causal, SamplerKind::Coca],
        },
        placements: match file.placements {
            Some(names) => parse_all(&names)?,
            None => vec![Placement::Both, Placement::TrainOnly, Placement::TestOnly],
        },
        etas: file.etas.unwrap_or_else(|| vec![0.1, 0.2, 0.3, 0.4, 0.5]),
        sizes: file.sizes.unwrap_or_else(|| vec![2, 4, 8, 10, 12]),
    };
    Ok((cfg, grid))
}

fn write_output(out: &str, content: &str) -> Result<()> {
    if out == "-" {
        print!("{content}");
    } else {
        std::fs::write(out, content)?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (cfg, _) = build_config(&args.common)?;
    let format: ReportFormat = args.output.format.parse()?;
    let (graph, load_report) = resolve_dataset_with_report(&cfg)?;
    if let Some(report) = load_report {
        eprintln!("{report}");
    }
    let row = run_experiment(&graph, &cfg)?;
    let report = ExperimentReport { rows: vec![row] };
    write_output(&args.output.out, &emit_report(&report, format)?)?;

    if args.save_checkpoint {
        // The checkpoint reproduces the first repeat of the reported run.
        let repeat_seed = derive_seed(cfg.base_seed, &[tag::REPEAT, 0]);
        let split = make_split(
            &graph,
            cfg.split.train,
            cfg.split.val,
            cfg.split.test,
            derive_seed(cfg.base_seed, &[tag::SPLIT]),
        )?;
        let engine = SamplerEngine::new(
            &graph,
            cfg.sampler.clone(),
            derive_seed(repeat_seed, &[tag::WEIGHTS]),
        )?;
        let outcome = train(&engine, &split, &cfg.model, repeat_seed)?;
        let run_dir = args.out_dir.join(config_hash(&cfg)?);
        std::fs::create_dir_all(&run_dir)?;
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            model: outcome.params,
            model_config: cfg.model.clone(),
            sampler: cfg.sampler.clone(),
            seed: cfg.base_seed,
        };
        checkpoint.save(&run_dir.join("checkpoint.json"))?;
        std::fs::write(
            run_dir.join("config.json"),
            serde_json::to_string_pretty(&cfg).map_err(Error::from)? + "\n",
        )?;
        eprintln!("checkpoint written to {}", run_dir.display());
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let (mut cfg, grid) = build_config(&args.common)?;
    let format: ReportFormat = args.output.format.parse()?;
    if cfg.perturb.is_none() {
        // A sweep without a configured kind defaults to feature bit flips.
        cfg.perturb = Some(PerturbSetting {
            kind: PerturbKind::BernoulliXor,
            intensity: 0.0,
            placement: Placement::Both,
        });
    }
    let (graph, _) = resolve_dataset_with_report(&cfg)?;
    let report = run_sweep(&graph, &cfg, &grid.samplers, &grid.placements, &grid.etas)?;
    write_output(&args.output.out, &emit_report(&report, format)?)
}

fn cmd_sample_study(args: &RunArgs) -> Result<()> {
    let (cfg, grid) = build_config(&args.common)?;
    let format: ReportFormat = args.output.format.parse()?;
    let (graph, _) = resolve_dataset_with_report(&cfg)?;
    let report = run_sample_size_study(&graph, &cfg, &grid.samplers, &grid.sizes)?;
    write_output(&args.output.out, &emit_report(&report, format)?)
}

fn cmd_bench_weights(args: &BenchArgs) -> Result<()> {
    let (cfg, grid) = build_config(&args.common)?;
    let (graph, _) = resolve_dataset_with_report(&cfg)?;
    let m = cfg.model.per_hop[0];
    let n = args.targets.min(graph.num_nodes());
    if n == 0 {
        return Err(Error::Parameter("no targets to benchmark".into()));
    }
    println!("sampler,targets,total_s,per_target_ms");
    for kind in grid.samplers {
        let mut sampler_cfg = cfg.sampler.clone();
        sampler_cfg.kind = kind;
        let engine = SamplerEngine::new(&graph, sampler_cfg, cfg.base_seed)?;
        let start = Instant::now();
        for target in 0..n {
            engine.weights(target, m)?;
        }
        let total = start.elapsed().as_secs_f64();
        println!(
            "{},{},{:.6},{:.6}",
            kind.name(),
            n,
            total,
            1000.0 * total / n as f64
        );
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::SampleStudy(args) => cmd_sample_study(args),
        Command::BenchWeights(args) => cmd_bench_weights(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
