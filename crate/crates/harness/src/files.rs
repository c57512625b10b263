//! CSV layouts written and read by the harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dphr_core::{PalwTrace, RunRecord};
use ndarray::Array2;

use crate::error::{HarnessError, Result};

pub const TRACE_HEADER: [&str; 9] = [
    "t",
    "epoch",
    "l_tri",
    "l_wtri",
    "alpha",
    "alpha_hat",
    "lambda_inst",
    "lambda",
    "grad_norm",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "variant",
    "seed",
    "direction",
    "r_at_1",
    "r_at_5",
    "ap",
    "final_loss",
    "status",
    "wall_ms",
];

pub const SCHEDULE_HEADER: [&str; 5] = ["t", "alpha", "alpha_hat", "lambda_inst", "lambda"];

/// Formats a real with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{x:.2}")
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

pub fn trace_row(r: &RunRecord) -> [String; 9] {
    [
        r.t.to_string(),
        r.epoch.to_string(),
        sig6(r.l_tri),
        opt(r.l_wtri),
        opt(r.alpha),
        opt(r.alpha_hat),
        opt(r.lambda_inst),
        opt(r.lambda),
        sig6(r.grad_norm),
    ]
}

pub fn write_trace(path: &Path, trace: &[RunRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record(trace_row(r))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn write_schedule(path: &Path, trace: &[PalwTrace]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SCHEDULE_HEADER)?;
    for s in trace {
        w.write_record([
            s.t.to_string(),
            sig6(s.alpha),
            sig6(s.alpha_hat),
            sig6(s.lambda_inst),
            sig6(s.lambda),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Writes `header` then `rows` as CSV.
pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Paired per-class embeddings, as stored in `id,view,x0,..` files.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<usize>,
    pub view_a: Array2<f64>,
    pub view_b: Array2<f64>,
}

pub fn write_embeddings(
    path: &Path,
    ids: &[usize],
    view_a: &Array2<f64>,
    view_b: &Array2<f64>,
) -> Result<()> {
    let mut w = create(path)?;
    let d = view_a.ncols();
    let header: Vec<String> = ["id".to_string(), "view".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("x{j}")))
        .collect();
    let io = |e| HarnessError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (view, m) in [("a", view_a), ("b", view_b)] {
        for (i, row) in m.rows().into_iter().enumerate() {
            // full round-trip precision
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{},{view},{}", ids[i], vals.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let err = |line: usize, msg: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty embeddings file".into()))?;
    let dim = header.split(',').count().saturating_sub(2);
    if dim == 0 || !header.starts_with("id,view") {
        return Err(err(1, format!("unexpected header '{header}'")));
    }
    let mut rows_a: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut rows_b: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(err(
                idx + 1,
                format!("expected {} fields, got {}", dim + 2, fields.len()),
            ));
        }
        let id: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(idx + 1, format!("bad id '{}'", fields[0])))?;
        let vals = fields[2..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| err(idx + 1, format!("bad number '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match fields[1].trim() {
            "a" => rows_a.push((id, vals)),
            "b" => rows_b.push((id, vals)),
            other => return Err(err(idx + 1, format!("unknown view '{other}'"))),
        }
    }
    let ids: Vec<usize> = rows_a.iter().map(|(id, _)| *id).collect();
    let ids_b: Vec<usize> = rows_b.iter().map(|(id, _)| *id).collect();
    if ids != ids_b {
        return Err(err(
            1,
            "view a and view b must list the same ids in the same order".into(),
        ));
    }
    let to_matrix = |rows: Vec<(usize, Vec<f64>)>| {
        let n = rows.len();
        Array2::from_shape_vec((n, dim), rows.into_iter().flat_map(|(_, v)| v).collect())
            .expect("row widths checked")
    };
    Ok(EmbeddingTable {
        ids,
        view_a: to_matrix(rows_a),
        view_b: to_matrix(rows_b),
    })
}
