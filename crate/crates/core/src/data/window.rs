use log::warn;

use super::cmapss::EngineSeries;
use crate::autodiff::Tensor;

/// A fixed-width window ending at step `end_index` (1-based) of one engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub engine_id: u32,
    pub end_index: usize,
    pub window: usize,
    pub channels: usize,
    /// Row-major `[window, channels]`.
    pub values: Vec<f64>,
    pub label: Option<f64>,
}

/// Sliding windows with step one. A series shorter than `w` yields no frames.
///
/// `labels`, when given, holds one label per step of the series.
pub fn make_windows(series: &EngineSeries, w: usize, labels: Option<&[f64]>) -> Vec<Frame> {
    let len = series.len();
    if w == 0 || len < w {
        warn!("engine {} has {len} steps, shorter than window {w}; skipped", series.engine_id);
        return Vec::new();
    }
    (w..=len)
        .map(|end| Frame {
            engine_id: series.engine_id,
            end_index: end,
            window: w,
            channels: series.channels,
            values: series.readings[(end - w) * series.channels..end * series.channels].to_vec(),
            label: labels.map(|l| l[end - 1]),
        })
        .collect()
}

/// Reference to the window of `series[series]` ending at 1-based step `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub series: usize,
    pub end: usize,
}

/// All window end positions of every series that is at least `w` long.
pub fn frame_refs(series: &[EngineSeries], w: usize) -> Vec<FrameRef> {
    series
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let count = (s.len() + 1).saturating_sub(w.max(1));
            (0..count).map(move |k| FrameRef { series: i, end: w + k })
        })
        .collect()
}

/// Writes the window ending at `end` channel-first (`[channels, w]`) into `out`.
pub fn fill_channel_first(series: &EngineSeries, end: usize, w: usize, out: &mut [f64]) {
    let ch = series.channels;
    let start = end - w;
    for t in 0..w {
        let row = series.row(start + t);
        for (c, &v) in row.iter().enumerate() {
            out[c * w + t] = v;
        }
    }
    debug_assert_eq!(out.len(), ch * w);
}

/// Stacks the referenced windows into a `[B, channels, w]` network input.
pub fn batch_input(series: &[EngineSeries], refs: &[FrameRef], w: usize) -> Tensor {
    let ch = series.first().map_or(0, |s| s.channels);
    let mut data = vec![0.0; refs.len() * ch * w];
    for (k, r) in refs.iter().enumerate() {
        fill_channel_first(&series[r.series], r.end, w, &mut data[k * ch * w..(k + 1) * ch * w]);
    }
    Tensor::new(vec![refs.len(), ch, w], data).expect("consistent batch shape")
}

/// Contiguous batch ranges over `n` items. A trailing batch of one item is merged into
/// the previous batch, since train-mode batchnorm needs at least two samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let bs = batch_size.max(1);
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}
