//! Command-line front end for the two-stage noisy long-tail pipeline.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 I/O error
//! (including missing or corrupt upstream artifacts), 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tailnoise::error::ErrorClass;
use tailnoise::pipeline::{self, load_config, Outcome, PipelineConfig, SweepMetric, SweepParam, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "tailnoise",
    version,
    about = "Contrastive pre-screening, soft-label refurbishment and a three-expert ensemble for noisy long-tailed data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON pipeline configuration; omitted fields take the desk-scale defaults.
    /// A run manifest (`<command>_manifest.json`) is accepted too and replays that run.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory holding every artifact [default: the config's output_dir].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed; overrides the config's seed. Stage seeds derive from it.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a long-tailed Gaussian-mixture training set, corrupt its labels and draw a clean balanced test set.
    Simulate(Common),
    /// Train the contrastive encoder and pre-screening classifier; predict every training sample.
    Stage1(Common),
    /// Turn stage-1 predictions into confidence- and rarity-weighted soft labels.
    Refurbish(Common),
    /// Train the three expert heads over the frozen stage-1 encoder.
    Stage2 {
        #[command(flatten)]
        common: Common,
        /// Train on one-hot observed labels instead of refurbished soft labels.
        #[arg(long)]
        no_relabel: bool,
    },
    /// Evaluate every stage-2 checkpoint in the run directory by shot group.
    Evaluate(Common),
    /// Run simulate, stage1, refurbish, stage2 and evaluate in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Also train stage 2 without refurbishment and a plain cross-entropy baseline.
        #[arg(long)]
        ablations: bool,
    },
    /// Run the pipeline over a grid of one hyperparameter and tabulate test accuracy.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary.
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated grid values, e.g. 0,2,6,10.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Accuracy reported per grid point.
        #[arg(long, value_enum, default_value = "ensemble")]
        metric: MetricArg,
        /// Also write an SVG line chart.
        #[arg(long)]
        svg: bool,
    },
    /// Tabulate the rarity score exp(-h^2/sigma^2) for h = 0, 0.01, ..., 1.
    RarityCurve {
        #[command(flatten)]
        common: Common,
        /// Rarity scale; overrides refurbish.sigma from the config.
        #[arg(long)]
        sigma: Option<f64>,
        /// Also write an SVG line chart.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParamArg {
    C,
    Alpha,
    Sigma,
    Tau,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::C => SweepParam::C,
            ParamArg::Alpha => SweepParam::Alpha,
            ParamArg::Sigma => SweepParam::Sigma,
            ParamArg::Tau => SweepParam::Tau,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Ensemble,
    Stage1,
}

impl From<MetricArg> for SweepMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Ensemble => SweepMetric::Ensemble,
            MetricArg::Stage1 => SweepMetric::Stage1,
        }
    }
}

fn resolve(common: &Common) -> Result<(PipelineConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<Outcome> {
    let outcome = match cli.command {
        Command::Simulate(c) => {
            let (cfg, dir) = resolve(&c)?;
            pipeline::cmd_simulate(&cfg, &dir)?
        }
        Command::Stage1(c) => {
            let (cfg, dir) = resolve(&c)?;
            pipeline::cmd_stage1(&cfg, &dir)?
        }
        Command::Refurbish(c) => {
            let (cfg, dir) = resolve(&c)?;
            pipeline::cmd_refurbish(&cfg, &dir)?
        }
        Command::Stage2 { common, no_relabel } => {
            let (cfg, dir) = resolve(&common)?;
            pipeline::cmd_stage2(&cfg, &dir, no_relabel)?
        }
        Command::Evaluate(c) => {
            let (cfg, dir) = resolve(&c)?;
            pipeline::cmd_evaluate(&cfg, &dir)?
        }
        Command::Pipeline { common, ablations } => {
            let (cfg, dir) = resolve(&common)?;
            pipeline::cmd_pipeline(&cfg, &dir, ablations)?
        }
        Command::Sweep {
            common,
            param,
            values,
            metric,
            svg,
        } => {
            let (cfg, dir) = resolve(&common)?;
            let spec = SweepSpec {
                param: param.into(),
                values,
                metric: metric.into(),
            };
            pipeline::cmd_sweep(&cfg, &spec, &dir, svg)?
        }
        Command::RarityCurve { common, sigma, svg } => {
            let (mut cfg, dir) = resolve(&common)?;
            if let Some(s) = sigma {
                cfg.refurbish.sigma = s;
            }
            pipeline::cmd_rarity_curve(&cfg, &dir, svg)?
        }
    };
    Ok(outcome)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<tailnoise::Error>())
        .map(tailnoise::Error::class);
    match class {
        Some(ErrorClass::Validation) => 2,
        Some(ErrorClass::Io) | None => 3,
        Some(ErrorClass::Numeric) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!(
                "manifest: {} (config {})",
                outcome.manifest.command,
                &outcome.manifest.config_hash[..16]
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
