//! CSV and aligned-text report emission.
//!
//! CSV is the single machine-readable report format; floats are written
//! with Rust's shortest round-trip formatting so identical inputs produce
//! byte-identical files.

use std::fmt::Write as _;

use crate::cost::CostReport;
use crate::harness::{BiasOracleConfig, BiasOutcome, NiahInstance, NiahOutcome};
use crate::schedule::CompressionSchedule;
use crate::scoring::{FrameScoreTable, SelectionResult};

/// Per-layer token counts plus the average over layer inputs.
pub fn schedule_csv(schedule: &CompressionSchedule) -> String {
    let mut out = String::from("layer,tokens_per_frame\n");
    for layer in 0..=schedule.num_layers {
        writeln!(out, "{layer},{}", schedule.tokens_at(layer)).unwrap();
    }
    out
}

/// Frame scores with coverage and a selected flag.
pub fn scores_csv(table: &FrameScoreTable, selection: &SelectionResult) -> String {
    let mut selected = vec![false; table.len()];
    for &frame in &selection.frames {
        selected[frame] = true;
    }
    let mut out = String::from("frame,score,coverage,selected\n");
    for frame in 0..table.len() {
        writeln!(
            out,
            "{frame},{},{},{}",
            table.scores[frame],
            table.coverage[frame],
            u8::from(selected[frame])
        )
        .unwrap();
    }
    out
}

/// The selected frames alone, in temporal order.
pub fn selection_csv(selection: &SelectionResult) -> String {
    let mut out = String::from("frame,score\n");
    for (frame, score) in selection.frames.iter().zip(&selection.scores) {
        writeln!(out, "{frame},{score}").unwrap();
    }
    out
}

pub fn cost_csv(report: &CostReport) -> String {
    let mut out = String::from(
        "frames,query_tokens,baseline_flops,compressed_flops,reduction\n",
    );
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.frames, row.query_tokens, row.baseline_flops, row.compressed_flops, row.reduction
        )
        .unwrap();
    }
    out
}

/// Human-readable table mirroring the CSV, with dims and convention notes.
pub fn cost_table(report: &CostReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "prefill cost: {} schedule, {} -> {} tokens/frame over {} layers",
        report.schedule.kind.name(),
        report.schedule.initial_tokens,
        report.schedule.tokens_at(report.schedule.num_layers),
        report.schedule.num_layers
    )
    .unwrap();
    writeln!(
        out,
        "dims: layers={} width={} heads={} kv_heads={} head_width={} mlp_width={}",
        report.dims.num_layers,
        report.dims.model_width,
        report.dims.num_attention_heads,
        report.dims.num_kv_heads,
        report.dims.head_width,
        report.dims.mlp_width
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:>8}  {:>8}  {:>16}  {:>16}  {:>9}",
        "frames", "query", "baseline TFLOPs", "compressed", "reduction"
    )
    .unwrap();
    for row in &report.rows {
        writeln!(
            out,
            "{:>8}  {:>8}  {:>16.2}  {:>16.2}  {:>8.1}%",
            row.frames,
            row.query_tokens,
            row.baseline_flops as f64 / 1e12,
            row.compressed_flops as f64 / 1e12,
            row.reduction * 100.0
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    for note in &report.notes {
        writeln!(out, "note: {note}").unwrap();
    }
    out
}

pub struct BiasRecord {
    pub cfg: BiasOracleConfig,
    pub outcome: BiasOutcome,
}

pub fn bias_csv(records: &[BiasRecord]) -> String {
    let mut out = String::from(
        "seed,total_frames,begin_bias,end_bias,needle_frame,needle_signal,\
         global_rank,segmented_rank\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.cfg.seed,
            r.cfg.total_frames,
            r.cfg.begin_bias,
            r.cfg.end_bias,
            r.cfg.needle_frame,
            r.cfg.needle_signal,
            r.outcome.global_rank,
            r.outcome.segmented_rank
        )
        .unwrap();
    }
    out
}

pub struct NiahRecord {
    pub instance: NiahInstance,
    pub outcome: NiahOutcome,
}

pub fn niah_csv(records: &[NiahRecord]) -> String {
    let mut out =
        String::from("seed,total_frames,hops,signal,recovered,rounds,hop_ranks\n");
    for r in records {
        let ranks: Vec<String> = r
            .outcome
            .rounds
            .iter()
            .map(|round| round.rank.to_string())
            .collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.instance.seed,
            r.instance.total_frames,
            r.instance.hop_frames.len(),
            r.instance.hop_signals[0],
            u8::from(r.outcome.recovered),
            r.outcome.rounds.len(),
            ranks.join(";")
        )
        .unwrap();
    }
    out
}
