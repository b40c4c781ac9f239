//! Command-line entry points: synthetic data generation, training,
//! evaluation, the ablation table and the alpha/beta grid search.
//!
//! Every run writes a config echo file into the output directory so results
//! can be reproduced from their artifacts alone.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use xmodal_core::data::{self, SyntheticSpec};
use xmodal_core::eval::{self, ApNorm};
use xmodal_core::train::{self, TrainConfig};

#[derive(Parser)]
#[command(
    name = "xmodal",
    about = "Cross-modal common-space embedding training and retrieval evaluation",
    version
)]
struct Cli {
    /// Output directory for all artifacts.
    #[arg(long, global = true, env = "XMODAL_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic paired dataset.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint with MAP@k in both retrieval directions.
    Evaluate(EvaluateArgs),
    /// Train the six component-ablation variants and tabulate their MAP.
    Ablate(AblateArgs),
    /// Train one model per (alpha, beta) grid point and record average MAP.
    GridSearch(GridSearchArgs),
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    per_cluster: usize,
    #[arg(long, default_value_t = 64)]
    dim_img: usize,
    #[arg(long, default_value_t = 48)]
    dim_txt: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Fraction of instances assigned to the test split.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

/// Training hyperparameters shared by train, ablate and grid-search.
#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Width of the shared common space.
    #[arg(long)]
    common_dim: Option<usize>,
    /// Width of the modality-specific entry layer.
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    weight_decay_g: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    denoise_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the unpaired distance preserving term.
    #[arg(long)]
    no_udp: bool,
    /// Disable the mutual distance preserving term.
    #[arg(long)]
    no_mdp: bool,
    /// Disable the modality classifier.
    #[arg(long)]
    no_mc: bool,
    /// Disable learned attention (uniform maps everywhere).
    #[arg(long)]
    no_da: bool,
    /// Keep the literal signed unpaired deviation.
    #[arg(long)]
    udp_signed: bool,
    /// Add the fourth (text-to-image) unpaired family.
    #[arg(long)]
    symmetric_udp: bool,
    /// Normalize reference distances by a whole-training-set mean.
    #[arg(long)]
    global_d_mean: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            k: self.k.unwrap_or(d.k),
            common_dim: self.common_dim.unwrap_or(d.common_dim),
            encoder_dim: self.encoder_dim.unwrap_or(d.encoder_dim),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            lambda: self.lambda.unwrap_or(d.lambda),
            lr_g: self.lr_g.unwrap_or(d.lr_g),
            weight_decay_g: self.weight_decay_g.unwrap_or(d.weight_decay_g),
            lr_d: self.lr_d.unwrap_or(d.lr_d),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            denoise_rate: self.denoise_rate.unwrap_or(d.denoise_rate),
            seed: self.seed.unwrap_or(d.seed),
            use_udp: !self.no_udp,
            use_mdp: !self.no_mdp,
            use_mc: !self.no_mc,
            use_da: !self.no_da,
            udp_signed: self.udp_signed,
            symmetric_udp: self.symmetric_udp,
            global_d_mean: self.global_d_mean,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, clap::ValueEnum)]
enum SplitArg {
    /// Test split if non-empty, otherwise everything.
    Auto,
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ranking cutoff for MAP@k.
    #[arg(long, default_value_t = 50)]
    map_k: usize,
    /// Average-precision normalization: min-rel-k or rel-at-k.
    #[arg(long, default_value = "min-rel-k")]
    ap_norm: String,
    #[arg(long, value_enum, default_value_t = SplitArg::Auto)]
    split: SplitArg,
    /// Also dump per-query average precision to this file.
    #[arg(long)]
    dump_ap: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 50)]
    map_k: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Auto)]
    split: SplitArg,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GridSearchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    map_k: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Auto)]
    split: SplitArg,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    subcommand: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_config: Option<&'a TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn write_echo(out_dir: &Path, echo: &ConfigEcho) -> Result<()> {
    let path = out_dir.join("config_echo.json");
    let json = serde_json::to_string_pretty(echo)?;
    fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn resolve_range(
    dataset: &xmodal_core::data::PairedDataset,
    split: SplitArg,
) -> std::ops::Range<usize> {
    match split {
        SplitArg::Train => dataset.train_range(),
        SplitArg::Test => dataset.test_range(),
        SplitArg::All => 0..dataset.n(),
        SplitArg::Auto => {
            if dataset.test_range().is_empty() {
                0..dataset.n()
            } else {
                dataset.test_range()
            }
        }
    }
}

/// Runs one invocation. `argv` includes the program name.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let out_dir = &cli.out_dir;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    match &cli.command {
        Command::GenSynthetic(args) => {
            if !(0.0..=1.0).contains(&args.test_fraction) {
                bail!("--test-fraction must lie in [0, 1], got {}", args.test_fraction);
            }
            let spec = SyntheticSpec {
                n_clusters: args.clusters,
                per_cluster: args.per_cluster,
                dim_img: args.dim_img,
                dim_txt: args.dim_txt,
                noise_sigma: args.noise_sigma,
                seed: args.seed,
            };
            let dataset = data::generate_synthetic(&spec)?;
            let n_test = (dataset.n() as f64 * args.test_fraction).round() as usize;
            let n_train = dataset.n() - n_test;
            let manifest = data::save_dataset(out_dir, &dataset, n_train, n_test)?;
            write_echo(
                out_dir,
                &ConfigEcho {
                    subcommand: "gen-synthetic",
                    manifest: Some(&manifest),
                    train_config: None,
                    extra: Some(serde_json::json!({
                        "spec": spec,
                        "train": n_train,
                        "test": n_test,
                    })),
                },
            )?;
            println!(
                "wrote {} instances ({} train / {} test) to {}",
                dataset.n(),
                n_train,
                n_test,
                manifest.display()
            );
        }
        Command::Train(args) => {
            let config = args.config.resolve();
            let dataset = data::load_dataset(&args.manifest)?;
            write_echo(
                out_dir,
                &ConfigEcho {
                    subcommand: "train",
                    manifest: Some(&args.manifest),
                    train_config: Some(&config),
                    extra: None,
                },
            )?;
            let outcome = train::train(&dataset, &config)?;
            let ckpt = out_dir.join("model.gpld");
            train::save_checkpoint(&ckpt, &outcome.model)?;
            let log_path = out_dir.join("train_log.csv");
            train::write_train_log(&log_path, &outcome.log)?;
            let last = outcome.log.last();
            println!(
                "trained {} epochs, {} steps ({} skipped batches); final l_g {:.6}",
                config.epochs,
                outcome.log.len(),
                outcome.skipped_batches,
                last.map_or(f64::NAN, |r| r.l_g)
            );
            println!("checkpoint: {}", ckpt.display());
            println!("log: {}", log_path.display());
        }
        Command::Evaluate(args) => {
            let norm: ApNorm = args
                .ap_norm
                .parse()
                .map_err(|e: String| anyhow::anyhow!(e))?;
            let dataset = data::load_dataset(&args.manifest)?;
            let model = train::load_checkpoint(&args.checkpoint)?;
            let range = resolve_range(&dataset, args.split);
            write_echo(
                out_dir,
                &ConfigEcho {
                    subcommand: "evaluate",
                    manifest: Some(&args.manifest),
                    train_config: Some(&model.config),
                    extra: Some(serde_json::json!({
                        "checkpoint": args.checkpoint,
                        "map_k": args.map_k,
                        "ap_norm": args.ap_norm,
                        "range": [range.start, range.end],
                    })),
                },
            )?;
            let summary = eval::evaluate_model(&model, &dataset, range, args.map_k, norm)?;
            let metrics = out_dir.join("metrics.csv");
            eval::write_metrics_csv(&metrics, args.map_k, &summary)?;
            if let Some(dump) = &args.dump_ap {
                eval::write_ap_dump(dump, &summary)?;
            }
            println!(
                "Img2Txt {:.4}  Txt2Img {:.4}  Avg {:.4}",
                summary.img2txt.map,
                summary.txt2img.map,
                summary.avg_map()
            );
            println!("metrics: {}", metrics.display());
        }
        Command::Ablate(args) => {
            let config = args.config.resolve();
            let dataset = data::load_dataset(&args.manifest)?;
            let range = resolve_range(&dataset, args.split);
            write_echo(
                out_dir,
                &ConfigEcho {
                    subcommand: "ablate",
                    manifest: Some(&args.manifest),
                    train_config: Some(&config),
                    extra: Some(serde_json::json!({
                        "map_k": args.map_k,
                        "range": [range.start, range.end],
                    })),
                },
            )?;
            let rows = train::ablate(&dataset, &config, range, args.map_k)?;
            let path = out_dir.join("ablation.csv");
            train::write_ablation_csv(&path, &rows)?;
            for row in &rows {
                println!(
                    "{:<14} Img2Txt {:.4}  Txt2Img {:.4}  Avg {:.4}",
                    row.method, row.img2txt, row.txt2img, row.avg
                );
            }
            println!("table: {}", path.display());
        }
        Command::GridSearch(args) => {
            let config = args.config.resolve();
            let dataset = data::load_dataset(&args.manifest)?;
            let range = resolve_range(&dataset, args.split);
            write_echo(
                out_dir,
                &ConfigEcho {
                    subcommand: "grid-search",
                    manifest: Some(&args.manifest),
                    train_config: Some(&config),
                    extra: Some(serde_json::json!({
                        "alphas": args.alphas,
                        "betas": args.betas,
                        "map_k": args.map_k,
                        "range": [range.start, range.end],
                    })),
                },
            )?;
            let rows = train::grid_search(
                &dataset,
                &args.alphas,
                &args.betas,
                &config,
                range,
                args.map_k,
            )?;
            let path = out_dir.join("grid.csv");
            train::write_grid_csv(&path, &rows)?;
            for row in &rows {
                println!("alpha {} beta {} -> MAP {:.4}", row.alpha, row.beta, row.map);
            }
            println!("sweep: {}", path.display());
        }
    }
    Ok(())
}
