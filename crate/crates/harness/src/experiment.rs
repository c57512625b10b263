//! The (variant x seed) experiment matrix.

use std::path::Path;
use std::time::Instant;

use dphr_core::eval::evaluate_with;
use dphr_core::{
    generate_dataset, l2_normalize, train, Direction, Error, Exec, RetrievalResult, RunRecord,
    Variant,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::files::{pct, sig6, write_rows, write_trace, SUMMARY_HEADER};
use crate::plot::{line_plot, Series};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged { iteration: usize, detail: String },
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

/// Result of training and evaluating one (variant, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub status: RunStatus,
    /// One entry per direction, a->b first. Empty for diverged runs.
    pub metrics: Vec<RetrievalResult>,
    /// Mean unweighted triplet loss over the final epoch.
    pub final_loss: Option<f64>,
    pub wall_ms: u128,
    pub trace: Vec<RunRecord>,
}

impl RunOutcome {
    pub fn metric(&self, direction: Direction) -> Option<&RetrievalResult> {
        self.metrics.iter().find(|m| m.direction == direction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: Vec<RunOutcome>,
}

impl Summary {
    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    /// Rows of `summary.csv`, in run order, a->b before b->a.
    pub fn rows(&self) -> Vec<[String; 9]> {
        let mut rows = Vec::with_capacity(self.runs.len() * 2);
        for run in &self.runs {
            for dir in [Direction::AToB, Direction::BToA] {
                let m = run.metric(dir);
                let r = |k| m.and_then(|m| m.recall(k)).map(pct).unwrap_or_default();
                rows.push([
                    run.variant.to_string(),
                    run.seed.to_string(),
                    dir.to_string(),
                    r(1),
                    r(5),
                    m.map(|m| pct(m.ap)).unwrap_or_default(),
                    run.final_loss.map(sig6).unwrap_or_default(),
                    run.status.as_str().to_string(),
                    run.wall_ms.to_string(),
                ]);
            }
        }
        rows
    }
}

fn cutoffs(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut ks = cfg.ks.clone();
    ks.extend([1, 5]);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Generates data, trains and evaluates one cell. Divergence is reported in
/// the outcome; every other failure is an error.
pub fn run_single(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    exec: Exec,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let cell = cfg.with_seed(seed);
    let dataset = generate_dataset(&cell.synth)?;
    let mut tcfg = cell.train.clone();
    tcfg.variant = variant;

    let out = match train(&dataset, &tcfg) {
        Ok(out) => out,
        Err(Error::Divergence { iteration, detail }) => {
            return Ok(RunOutcome {
                variant,
                seed,
                status: RunStatus::Diverged { iteration, detail },
                metrics: Vec::new(),
                final_loss: None,
                wall_ms: start.elapsed().as_millis(),
                trace: Vec::new(),
            })
        }
        Err(e) => return Err(e.into()),
    };

    let (ea, eb) = if tcfg.normalize {
        (
            l2_normalize(&out.embeddings_a),
            l2_normalize(&out.embeddings_b),
        )
    } else {
        (out.embeddings_a.clone(), out.embeddings_b.clone())
    };
    let ks = cutoffs(cfg);
    let ids = &dataset.ids;
    let metrics = vec![
        evaluate_with(ea.view(), eb.view(), ids, ids, &ks, Direction::AToB, exec)?,
        evaluate_with(eb.view(), ea.view(), ids, ids, &ks, Direction::BToA, exec)?,
    ];
    let last_epoch = tcfg.epochs - 1;
    let tail: Vec<f64> = out
        .trace
        .iter()
        .filter(|r| r.epoch == last_epoch)
        .map(|r| r.l_tri)
        .collect();
    Ok(RunOutcome {
        variant,
        seed,
        status: RunStatus::Ok,
        metrics,
        final_loss: Some(mean(&tail)),
        wall_ms: start.elapsed().as_millis(),
        trace: out.trace,
    })
}

/// Runs every (variant, seed) cell without touching the filesystem. Cells
/// run concurrently under [`Exec::Parallel`]; results keep matrix order.
pub fn run_matrix(cfg: &ExperimentConfig, exec: Exec) -> Result<Summary> {
    cfg.validate()?;
    let cells: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs = exec
        .map(cells.len(), |i| {
            run_single(cfg, cells[i].0, cells[i].1, Exec::Sequential)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary { runs })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    run_experiment_with(cfg, Exec::default())
}

/// Runs the matrix and writes `summary.csv`, one `trace_<variant>_<seed>.csv`
/// per cell and the `plot_loss.svg` / `plot_lambda.svg` figures into
/// `cfg.out_dir`.
pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Exec) -> Result<Summary> {
    let summary = run_matrix(cfg, exec)?;
    write_outputs(&summary, &cfg.variants, &cfg.out_dir)?;
    Ok(summary)
}

fn mean_curve(runs: &[&RunOutcome], field: impl Fn(&RunRecord) -> Option<f64>) -> Vec<f64> {
    let len = runs.iter().map(|r| r.trace.len()).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.trace.get(t).and_then(&field))
                .collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                mean(&vals)
            }
        })
        .collect()
}

pub fn write_outputs(summary: &Summary, variants: &[Variant], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    for run in &summary.runs {
        write_trace(
            &out_dir.join(format!("trace_{}_{}.csv", run.variant, run.seed)),
            &run.trace,
        )?;
    }
    write_rows(
        &out_dir.join("summary.csv"),
        &SUMMARY_HEADER,
        summary.rows(),
    )?;

    let mut loss = Vec::new();
    let mut lambda = Vec::new();
    for &v in variants {
        let ok: Vec<&RunOutcome> = summary
            .runs_of(v)
            .filter(|r| r.status == RunStatus::Ok)
            .collect();
        if ok.is_empty() {
            continue;
        }
        loss.push(Series {
            label: v.to_string(),
            values: mean_curve(&ok, |r| Some(r.l_tri)),
        });
        if v.uses_scheduler() {
            lambda.push(Series {
                label: v.to_string(),
                values: mean_curve(&ok, |r| r.lambda),
            });
        }
    }
    let write_svg = |name: &str, body: String| {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))
    };
    write_svg(
        "plot_loss.svg",
        line_plot(
            "unweighted triplet loss (mean over seeds)",
            "iteration",
            "L_tri",
            &loss,
        ),
    )?;
    write_svg(
        "plot_lambda.svg",
        line_plot(
            "batch coefficient lambda (mean over seeds)",
            "iteration",
            "lambda",
            &lambda,
        ),
    )?;
    Ok(())
}
