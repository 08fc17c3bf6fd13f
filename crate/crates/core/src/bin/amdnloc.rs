use std::path::PathBuf;
use std::process::ExitCode;

use amdnloc::evaluation::{Method, RegionMode};
use amdnloc::pipeline::{self, PipelineConfig, SegmentationPaths};
use amdnloc::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Multi-source CSI fingerprint localization pipeline.
#[derive(Parser)]
#[command(name = "amdnloc", version)]
struct Cli {
    /// JSON pipeline config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from the configured scene.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Matched-filter segmentation of the CFR images.
    Segment {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        tau_in: Option<f64>,
        #[arg(long)]
        tau_out: Option<f64>,
        /// Template size as AxB.
        #[arg(long, value_parser = parse_template)]
        template: Option<[usize; 2]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster path parameters with automatic K selection.
    Cluster {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        kmin: Option<usize>,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse the two label sets and drop tiny regions.
    Fuse {
        #[arg(long)]
        cfr: PathBuf,
        #[arg(long)]
        adcam: PathBuf,
        #[arg(long)]
        min_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a localizer on the segmented dataset.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        regions: PathBuf,
        /// Defaults to labels_cfr.json beside the regions file.
        #[arg(long)]
        labels_cfr: Option<PathBuf>,
        /// Defaults to labels_adcam.json beside the regions file.
        #[arg(long)]
        labels_adcam: Option<PathBuf>,
        #[arg(long, default_value = "amdnloc", value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the model and the baselines; write reports.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArg,
        /// Comma-separated method names, or `all`.
        #[arg(long)]
        baselines: Option<String>,
        /// Region labels used for test samples.
        #[arg(long, value_enum)]
        regions_from: Option<RegionsFrom>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run every stage into one output directory.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory; defaults to the config's data_dir.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionsFrom {
    Segmentation,
    Inferred,
}

fn parse_template(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([parse(a)?, parse(b)?])
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

/// Exit status by error category.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) | Error::MissingManifest(_) => 2,
        Error::InvalidConfig(_) | Error::UnknownBaseline(_) => 3,
        _ => 1,
    }
}

fn data_dir(arg: &DataArg, cfg: &PipelineConfig) -> PathBuf {
    arg.data.clone().unwrap_or_else(|| cfg.data_dir.clone())
}

fn run(cli: Cli) -> amdnloc::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => pipeline::read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Synth { out, seed, samples } => {
            if let Some(s) = seed {
                cfg.seed = s;
                if let Some(scene) = &mut cfg.scene {
                    scene.rng_seed = s;
                }
            }
            if let Some(m) = samples {
                cfg.num_samples = m;
            }
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            pipeline::synth(&cfg, &out)
        }
        Command::Segment {
            data,
            tau_in,
            tau_out,
            template,
            out,
        } => {
            cfg.filter.tau_in = tau_in.unwrap_or(cfg.filter.tau_in);
            cfg.filter.tau_out = tau_out.unwrap_or(cfg.filter.tau_out);
            cfg.filter.template = template.unwrap_or(cfg.filter.template);
            cfg.validate()?;
            pipeline::segment(&data_dir(&data, &cfg), &cfg.filter, &out).map(drop)
        }
        Command::Cluster {
            data,
            kmin,
            kmax,
            seed,
            out,
        } => {
            cfg.cluster.k_min = kmin.unwrap_or(cfg.cluster.k_min);
            cfg.cluster.k_max = kmax.unwrap_or(cfg.cluster.k_max);
            cfg.cluster.seed = seed.unwrap_or(cfg.cluster.seed);
            cfg.validate()?;
            pipeline::cluster(&data_dir(&data, &cfg), &cfg.cluster, &out).map(drop)
        }
        Command::Fuse {
            cfr,
            adcam,
            min_size,
            out,
        } => {
            cfg.min_size = min_size.unwrap_or(cfg.min_size);
            cfg.validate()?;
            pipeline::fuse(&cfr, &adcam, cfg.min_size, &out).map(drop)
        }
        Command::Train {
            data,
            regions,
            labels_cfr,
            labels_adcam,
            method,
            epochs,
            lr,
            batch,
            seed,
            out,
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
            cfg.train.batch_size = batch.unwrap_or(cfg.train.batch_size);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            cfg.validate()?;
            let mut seg = SegmentationPaths::beside(&regions);
            seg.cfr = labels_cfr.unwrap_or(seg.cfr);
            seg.adcam = labels_adcam.unwrap_or(seg.adcam);
            let (_, report) = pipeline::train(&data_dir(&data, &cfg), &seg, method, &cfg.eval_config(), &out)?;
            if let Some(best) = report.best_epoch {
                log::info!("best epoch {best}, test MSE {:?} m^2", report.test_mse);
            }
            Ok(())
        }
        Command::Eval {
            model,
            data,
            baselines,
            regions_from,
            report,
        } => {
            let methods = match baselines {
                Some(list) => Method::parse_list(&list)?,
                None => cfg.baselines.clone(),
            };
            let mode = regions_from.map(|r| match r {
                RegionsFrom::Segmentation => RegionMode::Known,
                RegionsFrom::Inferred => RegionMode::Inferred,
            });
            let r = pipeline::eval(&model, &data_dir(&data, &cfg), &methods, mode, &report)?;
            for m in &r.methods {
                println!(
                    "{:<28} heads {:>3}  RMSE {:>8.3} m  within 2 m {:>6.3}",
                    m.method.name(),
                    m.num_heads,
                    m.test_rmse,
                    m.within_2m
                );
            }
            Ok(())
        }
        Command::Run { out } => {
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let r = pipeline::run_all(&cfg, &out)?;
            for m in &r.methods {
                println!("{:<28} RMSE {:>8.3} m", m.method.name(), m.test_rmse);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InvalidConfig(v) = &e {
                for item in v {
                    eprintln!("  - {item}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
