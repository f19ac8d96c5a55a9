use std::io::Write;

use crate::data::{batch_input, EngineSeries, LabeledFrames};
use crate::error::Result;
use crate::models::ModelState;
use crate::par::Execution;

/// Writes one CSV row per frame of `series`: engine id, 1-based window end, the
/// embedding and the piecewise lifetime label. Returns the number of rows.
pub fn export_embeddings<W: Write>(
    state: &ModelState,
    series: &[EngineSeries],
    rul_max: f64,
    mut out: W,
) -> Result<usize> {
    let w = state.config.window;
    let frames = LabeledFrames::new(series, w, rul_max);
    let mut header = String::from("engine,end_index");
    for k in 0..state.config.latent {
        header.push_str(&format!(",e{k}"));
    }
    writeln!(out, "{header},rul")?;
    if frames.is_empty() {
        return Ok(0);
    }
    let x = batch_input(series, &frames.refs, w);
    let emb = state.embed(&x, Execution::default())?;
    for ((r, e), label) in frames.refs.iter().zip(&emb).zip(&frames.labels) {
        let values: Vec<String> = e.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{},{}", series[r.series].engine_id, r.end, values.join(","), label)?;
    }
    Ok(frames.len())
}
