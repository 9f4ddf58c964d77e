use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use equigan_core::config::{preset, RunSpec};
use equigan_core::datasets::{DatasetSplit, SplitName, DATA_ROOT_ENV};
use equigan_core::likelihood::{score_training_set, write_histogram_values, ScoreOptions};
use equigan_core::report::generate_report;
use equigan_core::sweep::{run_sweep, SweepGrid};
use equigan_core::trainer::{evaluate, resolve, run_mleq_pipeline, train, RunManifest, TrainCheckpoint, TrainOptions, Variant};
use equigan_core::{Error, Result};

#[derive(Parser)]
#[command(name = "equigan", version, about = "Train, score, evaluate and report on equalized bidirectional GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// Named preset, e.g. `toy` or `cifar10-ep-mdgan`.
    #[arg(long)]
    preset: Option<String>,
    /// TOML run spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override a spec value (`key=value`; dotted or unique bare key). Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (or the three-phase pipeline for p_mdgan_mleq).
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        /// Number of training epochs.
        #[arg(long)]
        epochs: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Start over instead of continuing an unfinished run in `--out`.
        #[arg(long)]
        no_resume: bool,
        /// Print the resolved spec as TOML and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Estimate the marginal likelihood of every training sample of a checkpoint.
    Score {
        /// Checkpoint file, or a run directory (its latest checkpoint is used).
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Records CSV; the score table is written next to it as `<stem>_table.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        /// Stop after this many chunks; rerun to continue.
        #[arg(long)]
        max_chunks: Option<usize>,
    },
    /// Compute FID, precision/recall, PSNR and latent-norm statistics for a run.
    Evaluate {
        /// Run directory or manifest file.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Generated samples (overrides eval.n_gen).
        #[arg(long)]
        n_gen: Option<usize>,
    },
    /// Regenerate figures and their CSV tables from one or more runs.
    Report {
        /// Run directories, manifest files or pipeline directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Also plot sampling distributions over rank.
        #[arg(long)]
        sampling_curves: bool,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run a hyperparameter grid.
    Sweep {
        /// Grid TOML file.
        grid: PathBuf,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
        /// Run only this job index.
        #[arg(long)]
        job: Option<usize>,
        /// Extra overrides applied to every job. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn resolve_spec(args: &SpecArgs, fallback: Option<RunSpec>) -> Result<RunSpec> {
    let mut spec = match (&args.preset, &args.spec, fallback) {
        (Some(_), Some(_), _) => return Err(Error::config("preset", "give either --preset or --spec, not both")),
        (Some(p), None, _) => preset(p)?,
        (None, Some(f), _) => RunSpec::load(f)?,
        (None, None, Some(s)) => s,
        (None, None, None) => return Err(Error::config("preset", "either --preset or --spec is required")),
    };
    for o in &args.set {
        spec.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        spec.train.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn has_spec(args: &SpecArgs) -> bool {
    args.preset.is_some() || args.spec.is_some()
}

/// Spec for commands that act on an existing run: the run's own data source
/// and training config unless a spec is given explicitly.
fn spec_for_run(args: &SpecArgs, manifest: &RunManifest) -> Result<RunSpec> {
    if has_spec(args) {
        return resolve_spec(args, None);
    }
    let mut base = RunSpec {
        train: manifest.config.clone(),
        ..RunSpec::default()
    };
    if let Some(d) = &manifest.data_source {
        base.data = d.clone();
    }
    resolve_spec(args, Some(base))
}

fn load_data(spec: &RunSpec) -> Result<DatasetSplit> {
    log::info!("loading data ({DATA_ROOT_ENV} names the root of real datasets)");
    spec.data.load()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            spec,
            epochs,
            out,
            no_resume,
            dry_run,
        } => {
            let mut s = resolve_spec(&spec, None)?;
            if let Some(e) = epochs {
                s.apply_override(&format!("train.epochs={e}"))?;
                s.validate()?;
            }
            if dry_run {
                print!("{}", s.to_toml_string()?);
                return Ok(());
            }
            let data = load_data(&s)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("spec.toml"), s.to_toml_string()?)?;
            if s.train.variant == Variant::PMdganMleq {
                let opts = ScoreOptions {
                    chunk_size: s.scoring.chunk_size,
                    ..Default::default()
                };
                run_mleq_pipeline(&s.train, &s.ais, &data, &out, Some(s.data.clone()), opts)?;
                println!("{}", out.join(equigan_core::trainer::PIPELINE_FILE).display());
            } else {
                let opts = TrainOptions {
                    data_source: Some(s.data.clone()),
                    resume: !no_resume,
                    ..Default::default()
                };
                train(&s.train, &data, &out, &opts)?;
                println!("{}", out.join(equigan_core::trainer::MANIFEST_FILE).display());
            }
        }
        Command::Score {
            checkpoint,
            spec,
            out,
            limit,
            max_chunks,
        } => {
            let (ckpt_path, manifest) = if checkpoint.is_dir() {
                let (m, dir) = RunManifest::load(&checkpoint)?;
                let entry = m
                    .latest_checkpoint()
                    .ok_or_else(|| Error::MissingFile { path: dir.join("checkpoints") })?;
                (resolve(&dir, &entry.path), Some(m))
            } else {
                (checkpoint.clone(), None)
            };
            let ckpt = TrainCheckpoint::load(&ckpt_path)?;
            let s = match &manifest {
                Some(m) => spec_for_run(&spec, m)?,
                None => {
                    let base = RunSpec {
                        train: ckpt.extra.config.clone(),
                        ..RunSpec::default()
                    };
                    resolve_spec(&spec, if has_spec(&spec) { None } else { Some(base) })?
                }
            };
            let data = load_data(&s)?;
            let records = out.unwrap_or_else(|| ckpt_path.with_extension("records.csv"));
            let opts = ScoreOptions {
                chunk_size: s.scoring.chunk_size,
                max_chunks,
                limit,
            };
            let outcome = score_training_set(data.split(SplitName::Train), &ckpt.triple, &s.ais, &records, opts)?;
            match outcome.table {
                Some(t) => {
                    let table_path = table_path(&records);
                    t.write_csv(&table_path)?;
                    write_histogram_values(&outcome.records, &records.with_extension("histogram.csv"))?;
                    println!("{}", table_path.display());
                }
                None => println!("{} ({} samples scored so far)", records.display(), outcome.records.len()),
            }
        }
        Command::Evaluate { run, spec, n_gen } => {
            let (m, _) = RunManifest::load(&run)?;
            let mut s = spec_for_run(&spec, &m)?;
            if let Some(n) = n_gen {
                s.eval.n_gen = n;
            }
            s.validate()?;
            let data = load_data(&s)?;
            let report = evaluate(&run, &data, &s.eval)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Report {
            runs,
            out,
            sampling_curves,
            spec,
        } => {
            let mut s = resolve_spec(&spec, Some(RunSpec::default()))?;
            s.report.sampling_curves |= sampling_curves;
            let summary = generate_report(&runs, &out, &s.report)?;
            for p in &summary.written {
                println!("{}", p.display());
            }
            for (fig, why) in &summary.skipped {
                eprintln!("skipped {fig}: {why}");
            }
        }
        Command::Sweep { grid, out, job, set } => {
            let g = SweepGrid::load(&grid)?;
            let rows = run_sweep(&g, &set, &out, job, &mut load_data)?;
            let failed = rows.iter().filter(|r| r.status != "completed").count();
            println!("{}", out.join("sweep.csv").display());
            if failed > 0 {
                return Err(Error::InvalidInput(format!("{failed} sweep job(s) failed")));
            }
        }
    }
    Ok(())
}

fn table_path(records: &std::path::Path) -> PathBuf {
    let stem = records.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
    records.with_file_name(format!("{stem}_table.csv"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
