use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dphr_core::eval::evaluate;
use dphr_core::{generate_dataset, l2_normalize, train, Direction};
use dphr_harness::config::ExperimentConfig;
use dphr_harness::files::{pct, read_embeddings, sig6, write_embeddings, write_trace};
use dphr_harness::{run_experiment, schedule_trace, HarnessError, Result, RunStatus};

#[derive(Parser)]
#[command(
    name = "dphr",
    version,
    about = "Hardness-aware triplet reweighting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the data/training seed (and the seed list for `experiment`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to `<out>/dataset.csv`.
    Generate(Common),
    /// Train one variant; writes the trace and final embeddings.
    Train(Common),
    /// Evaluate an embeddings file in both retrieval directions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Embeddings CSV (`id,view,x0,...`).
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the (variant x seed) matrix.
    Experiment(Common),
    /// Replay the scheduler over a loss stream (one value per line).
    ScheduleTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    Ok((cfg, out))
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common)?;
            let ds = generate_dataset(&cfg.synth)?;
            let path = out.join("dataset.csv");
            write_embeddings(&path, &ds.ids, &ds.view_a, &ds.view_b)?;
            println!("wrote {} classes to {}", ds.n_classes(), path.display());
        }
        Command::Train(common) => {
            let (cfg, out) = load(&common)?;
            let ds = generate_dataset(&cfg.synth)?;
            let result = train(&ds, &cfg.train)?;
            let trace_path = out.join(format!(
                "trace_{}_{}.csv",
                cfg.train.variant, cfg.train.seed
            ));
            write_trace(&trace_path, &result.trace)?;
            write_embeddings(
                &out.join("embeddings.csv"),
                &ds.ids,
                &result.embeddings_a,
                &result.embeddings_b,
            )?;
            if let Some(last) = result.trace.last() {
                println!(
                    "{} iterations, final l_tri {}, objective {}",
                    result.trace.len(),
                    sig6(last.l_tri),
                    sig6(last.objective)
                );
            }
        }
        Command::Eval { common, input } => {
            let (cfg, out) = load(&common)?;
            let table = read_embeddings(&input)?;
            let (a, b) = if cfg.train.normalize {
                (l2_normalize(&table.view_a), l2_normalize(&table.view_b))
            } else {
                (table.view_a, table.view_b)
            };
            let mut header = vec!["direction".to_string()];
            header.extend(cfg.ks.iter().map(|k| format!("r_at_{k}")));
            header.push("ap".into());
            let mut rows = Vec::new();
            for (dir, q, g) in [(Direction::AToB, &a, &b), (Direction::BToA, &b, &a)] {
                let r = evaluate(q.view(), g.view(), &table.ids, &table.ids, &cfg.ks, dir)?;
                let mut row = vec![dir.to_string()];
                row.extend(cfg.ks.iter().map(|k| pct(r.recall(*k).unwrap_or(f64::NAN))));
                row.push(pct(r.ap));
                println!("{}", row.join(","));
                rows.push(row);
            }
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            dphr_harness::files::write_rows(&out.join("eval.csv"), &header, rows)?;
        }
        Command::Experiment(common) => {
            let (cfg, out) = load(&common)?;
            let summary = run_experiment(&cfg)?;
            let diverged = summary
                .runs
                .iter()
                .filter(|r| r.status != RunStatus::Ok)
                .count();
            println!(
                "{} runs ({} diverged); results in {}",
                summary.runs.len(),
                diverged,
                out.display()
            );
        }
        Command::ScheduleTrace { common, input } => {
            let (cfg, out) = load(&common)?;
            let path = out.join("schedule_trace.csv");
            let trace = schedule_trace(&input, &cfg.train.palw, &path)?;
            println!("{} steps written to {}", trace.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
