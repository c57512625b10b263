//! Standalone replay of the scheduler over a recorded loss stream.

use std::path::Path;

use dphr_core::{PalwConfig, PalwState, PalwTrace};

use crate::error::{HarnessError, Result};

/// Parses one non-negative real per line. Blank lines are skipped.
pub fn parse_loss_stream(text: &str, origin: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| HarnessError::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let v: f64 = line
            .parse()
            .map_err(|_| err(format!("not a number: '{line}'")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(err(format!(
                "loss must be finite and non-negative, got {v}"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Steps a fresh scheduler through `losses`.
pub fn replay(losses: &[f64], cfg: &PalwConfig) -> Result<Vec<PalwTrace>> {
    let mut state = PalwState::from_config(cfg)?;
    losses
        .iter()
        .map(|&l| state.step(l, cfg).map_err(HarnessError::from))
        .collect()
}

/// Reads a loss stream from `input`, replays it and writes the trace CSV to
/// `output`.
pub fn schedule_trace(input: &Path, cfg: &PalwConfig, output: &Path) -> Result<Vec<PalwTrace>> {
    let text = std::fs::read_to_string(input).map_err(|e| HarnessError::io(input, e))?;
    let losses = parse_loss_stream(&text, input)?;
    let trace = replay(&losses, cfg)?;
    crate::files::write_schedule(output, &trace)?;
    Ok(trace)
}
