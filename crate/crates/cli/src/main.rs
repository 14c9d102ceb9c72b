use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use pad_cli::ablate::{default_config, run_ablation};
use pad_cli::checkpoint::Checkpoint;
use pad_cli::config::ExperimentConfig;
use pad_cli::csvio::load_csv;
use pad_cli::experiment::{evaluate_predictor, load_dataset, make_splits, persist, run_experiment};
use pad_cli::toy::{baseline_path, run_toy, toy_spec, write_grid};
use pad_core::datashift::SplitSpec;
use pad_core::train::Method;

/// Output directory used when `--out` is not given.
const OUTPUT_ENV: &str = "PAD_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "pad", version, about = "Prior augmented data training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a CSV dataset and write shifted split files.
    Split {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Number of splits; split seeds are 0..seeds.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 0.2)]
        min_test_frac: f64,
        #[arg(long, default_value_t = 0)]
        cluster_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate on every split of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Split files; generated from the config when omitted.
        #[arg(long = "split", num_args = 1..)]
        splits: Vec<PathBuf>,
        /// Overrides the training seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a CSV dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Restrict evaluation to one side of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test", requires = "split")]
        side: Side,
    },
    /// Train baseline and PAD MC dropout on the gapped sine and write predictive grids.
    ToySine {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// PAD grid; the baseline grid goes next to it with a `_baseline` suffix.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the term-switch ablation grid.
    Ablate {
        /// Experiment config with a PAD method; a two-segment toy when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pad_out"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("cannot write {}", path.display()))
}

fn read_split(path: &Path) -> anyhow::Result<SplitSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid split file {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Split {
            csv,
            k,
            seeds,
            min_test_frac,
            cluster_seed,
            out,
        } => {
            let data = load_csv(&csv)?;
            let splits = make_splits(&data, k, seeds, min_test_frac, cluster_seed)?;
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            for s in &splits {
                write_json(&dir.join(format!("split_{}.json", s.seed)), s)?;
            }
            println!("wrote {} splits to {}", splits.len(), dir.display());
        }
        Command::Train {
            config,
            splits,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            let data = load_dataset(&cfg.data)?;
            let splits = if splits.is_empty() {
                make_splits(
                    &data,
                    cfg.split.k,
                    cfg.split.count,
                    cfg.split.min_test_frac,
                    cfg.split.cluster_seed,
                )?
            } else {
                splits.iter().map(|p| read_split(p)).collect::<anyhow::Result<_>>()?
            };
            for s in &splits {
                s.validate(0.0)?;
            }
            let outcome = run_experiment(&cfg, &data, &splits)?;
            let dir = out_dir(out);
            persist(&outcome, &dir)?;
            for f in &outcome.failures {
                eprintln!("split {} failed: {}", f.split_index, f.error);
            }
            println!(
                "{} of {} splits succeeded; results in {}",
                outcome.aggregate.succeeded,
                splits.len(),
                dir.display()
            );
            for (name, m) in &outcome.aggregate.metrics {
                println!("{name}: {:.4} ± {:.4} (n = {})", m.mean, m.std, m.n);
            }
            if outcome.results.is_empty() {
                anyhow::bail!("every split failed");
            }
        }
        Command::Eval {
            checkpoint,
            csv,
            split,
            side,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let predictor = ckpt.predictor()?;
            let mut data = load_csv(&csv)?;
            if let Some(path) = split {
                let s = read_split(&path)?;
                if s.assignments.len() != data.len() {
                    anyhow::bail!(
                        "split covers {} points, dataset has {}",
                        s.assignments.len(),
                        data.len()
                    );
                }
                data = data.subset(match side {
                    Side::Train => &s.train_idx,
                    Side::Test => &s.test_idx,
                })?;
            }
            let x = ckpt.x_scaler.transform(&data.x)?;
            let report = evaluate_predictor(&predictor, &x, &data.y, ckpt.y_scaler.as_ref(), &ckpt.eval, ckpt.seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ToySine { seed, out, epochs } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            }
            for (method, path) in [
                (Method::PadMcDropout, out.clone()),
                (Method::BaselineMcDropout, baseline_path(&out)),
            ] {
                let mut spec = toy_spec(method, seed);
                if let Some(e) = epochs {
                    spec.training.epochs = e;
                }
                let r = run_toy(&spec, seed)?;
                write_grid(&path, &r.grid)?;
                println!(
                    "{method}: gap std {:.4}, support std {:.4}, grid {}",
                    r.gap_std,
                    r.support_std,
                    path.display()
                );
            }
        }
        Command::Ablate {
            config,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => default_config(),
            };
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let report = run_ablation(&cfg)?;
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let path = dir.join("ablation.json");
            write_json(&path, &report)?;
            for v in &report.variants {
                let nll = v.aggregate.metrics.get("ood.nll").map_or(f64::NAN, |m| m.mean);
                let gen = v.last_epoch.and_then(|l| l.generator).unwrap_or_default();
                println!(
                    "{:<12} ood nll {nll:>9.4}  gen total {:>9.4} (A {:.4}, B {:.4}, C {:.4})",
                    format!("{:?}", v.variant),
                    gen.total,
                    gen.term_a,
                    gen.term_b,
                    gen.term_c
                );
            }
            for v in &report.probe.violations {
                eprintln!("invariant violated: {v}");
            }
            println!("report in {}", path.display());
            if !report.invariants_hold {
                anyhow::bail!("switch-independence invariants violated");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
