use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use detach_lab::data::{generate, load_csv, write_csv, Domain};
use detach_lab::harness::report::{histogram_csv, metrics_csv, run_record_csv};
use detach_lab::harness::{
    difficulty_histogram, evaluate, resume, run_experiment, Checkpoint, ExperimentKind, LabConfig, TrainState,
};

#[derive(Parser)]
#[command(name = "detach-lab", version, about = "Difficulty-aware curriculum and dual-stream multi-task training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-task dataset as CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "biased")]
        domain: Domain,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Evaluate on this dataset every `eval_every` epochs.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment protocol and write `<kind>.csv` and `<kind>.txt`.
    Experiment {
        #[arg(long)]
        kind: ExperimentKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Histogram of true-class probabilities per task.
    Histogram {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<LabConfig> {
    match path {
        Some(p) => LabConfig::from_path(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(LabConfig::default()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { config, n, domain, out } => {
            let cfg = load_config(config.as_deref())?;
            let ds = generate(&cfg.generator, n, domain)?;
            write_csv(&ds, &out)?;
            log::info!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { config, data, out, log, eval_data, resume: resume_from } => {
            let cfg = load_config(config.as_deref())?;
            let mut train_cfg = cfg.train_config();
            let train_set = load_csv(&data)?;
            train_cfg.model.input_dim = train_set.meta.d;
            let eval_set = eval_data.as_deref().map(load_csv).transpose()?;
            let mut state = match resume_from {
                Some(p) => Checkpoint::load(&p)?.train_state()?,
                None => TrainState::fresh(&train_cfg)?,
            };
            let record = resume(&train_cfg, &mut state, &train_set, eval_set.as_ref(), train_cfg.epochs)?;
            Checkpoint::from_state(&state).save(&out)?;
            fs::write(&log, run_record_csv(&record))?;
            if let Some((_, report)) = record.final_reports.first() {
                print!("{}", metrics_csv(report));
            }
            log::info!("trained {} epochs; checkpoint {}", state.epochs_completed, out.display());
        }
        Command::Eval { ckpt, data, out } => {
            let model = Checkpoint::load(&ckpt)?.model()?;
            let report = evaluate(&model, &load_csv(&data)?)?;
            let text = metrics_csv(&report);
            fs::write(&out, &text)?;
            print!("{text}");
        }
        Command::Experiment { kind, config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let table = run_experiment(kind, &cfg)?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join(format!("{}.csv", kind.name())), table.to_csv())?;
            let text = table.render_text();
            fs::write(out_dir.join(format!("{}.txt", kind.name())), &text)?;
            print!("{text}");
        }
        Command::Histogram { ckpt, data, bins, out } => {
            let model = Checkpoint::load(&ckpt)?.model()?;
            let h = difficulty_histogram(&model, &load_csv(&data)?, bins)?;
            fs::write(&out, histogram_csv(&h))?;
        }
    }
    Ok(())
}
