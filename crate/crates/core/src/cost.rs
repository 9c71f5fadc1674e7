//! Analytic prefill FLOP accounting for baseline versus compressed
//! schedules.
//!
//! Counting convention (also emitted in every report): one multiply-
//! accumulate is one FLOP, the attention score/value products use the full
//! `S^2` term (no causal halving), and only decoder-layer linear projections
//! plus attention matmuls are counted — no visual encoder, no projector, no
//! decode phase, no latency modeling. Reduction percentages are invariant
//! to the per-MAC constant; [`layer_flops_with_convention`] exposes it for
//! cross-convention checks.

use thiserror::Error;

use crate::schedule::CompressionSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("schedule spans {schedule} layers but the model dims declare {dims}")]
    LayerMismatch { schedule: usize, dims: usize },
    #[error("{0} must be >= 1")]
    ZeroDim(&'static str),
}

/// Decoder dimensions for FLOP accounting. Defaults mirror the published
/// configuration of a 1.5B-parameter Qwen2-class decoder (grouped-query
/// attention with 2 KV heads, gated MLP width 8960) — see
/// [`ModelDims::qwen2_1_5b`]. The MLP is counted as the up and down
/// projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_layers: usize,
    pub model_width: usize,
    pub num_attention_heads: usize,
    pub num_kv_heads: usize,
    pub head_width: usize,
    pub mlp_width: usize,
}

impl ModelDims {
    /// Qwen2-1.5B public configuration: 28 layers, width 1536, 12 query
    /// heads, 2 KV heads of width 128, MLP width 8960.
    pub fn qwen2_1_5b() -> Self {
        Self {
            num_layers: 28,
            model_width: 1536,
            num_attention_heads: 12,
            num_kv_heads: 2,
            head_width: 128,
            mlp_width: 8960,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("model_width", self.model_width),
            ("num_attention_heads", self.num_attention_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_width", self.head_width),
            ("mlp_width", self.mlp_width),
        ] {
            if v == 0 {
                return Err(CostError::ZeroDim(name));
            }
        }
        Ok(())
    }

    /// Elements of the per-layer linear matrices: query, key, value, output
    /// projections plus the two MLP matrices.
    pub fn linear_params_per_layer(&self) -> u128 {
        let d = self.model_width as u128;
        let q_width = (self.num_attention_heads * self.head_width) as u128;
        let kv_width = (self.num_kv_heads * self.head_width) as u128;
        let f = self.mlp_width as u128;
        d * q_width          // query
            + d * kv_width   // key
            + d * kv_width   // value
            + q_width * d    // output
            + 2 * d * f      // mlp up + down
    }

    fn attention_width(&self) -> u128 {
        (self.num_attention_heads * self.head_width) as u128
    }
}

/// FLOPs of one decoder layer at sequence length `seq_len`:
/// `S * P_lin + 2 * S^2 * (H * d_h)` with 1 FLOP per multiply-accumulate.
pub fn layer_flops(seq_len: usize, dims: &ModelDims) -> u128 {
    layer_flops_with_convention(seq_len, dims, 1)
}

/// [`layer_flops`] scaled by an explicit FLOPs-per-MAC constant. Reduction
/// fractions are independent of this constant.
pub fn layer_flops_with_convention(seq_len: usize, dims: &ModelDims, flops_per_mac: u128) -> u128 {
    let s = seq_len as u128;
    flops_per_mac * (s * dims.linear_params_per_layer() + 2 * s * s * dims.attention_width())
}

/// One scenario of the cost comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub frames: usize,
    pub query_tokens: usize,
    pub baseline_flops: u128,
    pub compressed_flops: u128,
    /// `1 - compressed / baseline`.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub dims: ModelDims,
    pub schedule: CompressionSchedule,
    pub rows: Vec<CostRow>,
    pub notes: Vec<String>,
}

pub(crate) fn convention_notes() -> Vec<String> {
    vec![
        "counting 1 FLOP per multiply-accumulate".to_string(),
        "attention uses the full S^2 term (no causal halving)".to_string(),
        "decoder layers only: no visual encoder, projector, or decode phase".to_string(),
        "wall-clock latency is not modeled".to_string(),
    ]
}

fn cost_row(
    frames: usize,
    query_tokens: usize,
    schedule: &CompressionSchedule,
    dims: &ModelDims,
    flops_per_mac: u128,
) -> CostRow {
    let full = frames * schedule.initial_tokens + query_tokens;
    let mut baseline = 0u128;
    let mut compressed = 0u128;
    for layer in 0..schedule.num_layers {
        baseline += layer_flops_with_convention(full, dims, flops_per_mac);
        let seq = frames * schedule.tokens_at(layer) + query_tokens;
        compressed += layer_flops_with_convention(seq, dims, flops_per_mac);
    }
    CostRow {
        frames,
        query_tokens,
        baseline_flops: baseline,
        compressed_flops: compressed,
        reduction: 1.0 - compressed as f64 / baseline as f64,
    }
}

/// Baseline-vs-compressed prefill totals for one scenario.
pub fn prefill_report(
    frames: usize,
    query_tokens: usize,
    schedule: &CompressionSchedule,
    dims: &ModelDims,
) -> Result<CostReport, CostError> {
    multi_report(&[frames], query_tokens, schedule, dims)
}

/// One row per frame count (the standard comparison runs 1024/2048/4096
/// frames against an 863-token query).
pub fn multi_report(
    frames: &[usize],
    query_tokens: usize,
    schedule: &CompressionSchedule,
    dims: &ModelDims,
) -> Result<CostReport, CostError> {
    multi_report_with_convention(frames, query_tokens, schedule, dims, 1)
}

pub fn multi_report_with_convention(
    frames: &[usize],
    query_tokens: usize,
    schedule: &CompressionSchedule,
    dims: &ModelDims,
    flops_per_mac: u128,
) -> Result<CostReport, CostError> {
    dims.validate()?;
    if schedule.num_layers != dims.num_layers {
        return Err(CostError::LayerMismatch {
            schedule: schedule.num_layers,
            dims: dims.num_layers,
        });
    }
    let rows = frames
        .iter()
        .map(|&t| cost_row(t, query_tokens, schedule, dims, flops_per_mac))
        .collect();
    Ok(CostReport {
        dims: *dims,
        schedule: schedule.clone(),
        rows,
        notes: convention_notes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::CompressionSchedule;

    fn default_schedule() -> CompressionSchedule {
        CompressionSchedule::cosine(16, 28).unwrap()
    }

    #[test]
    fn default_dims_linear_parameter_count() {
        let dims = ModelDims::qwen2_1_5b();
        // 2*1536^2 + 2*1536*256 + 2*1536*8960, summed by hand.
        assert_eq!(dims.linear_params_per_layer(), 33_030_144);
    }

    #[test]
    fn unit_length_formula() {
        let dims = ModelDims::qwen2_1_5b();
        let p = dims.linear_params_per_layer();
        let hd = 12 * 128u128;
        assert_eq!(layer_flops(1, &dims), p + 2 * hd);
        // Under a 2-FLOPs-per-MAC convention the unit value doubles.
        assert_eq!(layer_flops_with_convention(1, &dims, 2), 2 * p + 4 * hd);
    }

    #[test]
    fn doubling_sequence_scales_terms_homogeneously() {
        let dims = ModelDims::qwen2_1_5b();
        let p = dims.linear_params_per_layer();
        let s = 500usize;
        let linear = |s: u128| s * p;
        let quad = |s: u128| 2 * s * s * 1536;
        assert_eq!(layer_flops(s, &dims), linear(500) + quad(500));
        assert_eq!(layer_flops(2 * s, &dims), 2 * linear(500) + 4 * quad(500));
    }

    /// Independent spreadsheet-style oracle: list every matrix product of a
    /// layer and sum its element counts.
    fn spreadsheet_layer_flops(s: u128) -> u128 {
        let matrices: [(u128, u128); 6] = [
            (1536, 1536), // query projection
            (1536, 256),  // key projection
            (1536, 256),  // value projection
            (1536, 1536), // output projection
            (1536, 8960), // mlp up
            (8960, 1536), // mlp down
        ];
        let linear: u128 = matrices.iter().map(|(r, c)| s * r * c).sum();
        let attention = 12 * 2 * s * s * 128; // scores + values per head
        linear + attention
    }

    #[test]
    fn long_sequence_value_matches_independent_summation() {
        let dims = ModelDims::qwen2_1_5b();
        assert_eq!(layer_flops(17247, &dims), spreadsheet_layer_flops(17247));
    }

    #[test]
    fn constant_schedule_reduces_nothing() {
        let schedule = CompressionSchedule::constant(16, 28).unwrap();
        let report = prefill_report(1024, 863, &schedule, &ModelDims::qwen2_1_5b()).unwrap();
        assert_eq!(report.rows[0].reduction, 0.0);
        assert_eq!(
            report.rows[0].baseline_flops,
            report.rows[0].compressed_flops
        );
    }

    #[test]
    fn standard_scenarios_match_reported_reductions_and_totals() {
        let dims = ModelDims::qwen2_1_5b();
        let report = multi_report(&[1024, 2048, 4096], 863, &default_schedule(), &dims).unwrap();
        let expected = [(0.53, 43.0), (0.56, 132.0), (0.58, 448.0)];
        for (row, (reduction, tflops)) in report.rows.iter().zip(expected) {
            assert!(
                (row.reduction - reduction).abs() <= 0.05,
                "reduction {} vs {reduction}",
                row.reduction
            );
            let baseline_tf = row.baseline_flops as f64 / 1e12;
            assert!(
                (baseline_tf / tflops - 1.0).abs() <= 0.20,
                "baseline {baseline_tf} TFLOPs vs {tflops}"
            );
            assert!(row.compressed_flops < row.baseline_flops);
        }
        assert!(report.rows[0].reduction < report.rows[1].reduction);
        assert!(report.rows[1].reduction < report.rows[2].reduction);
    }

    #[test]
    fn reduction_is_invariant_to_the_convention_constant() {
        let dims = ModelDims::qwen2_1_5b();
        let frames = [256, 1024, 4096];
        let a = multi_report(&frames, 863, &default_schedule(), &dims).unwrap();
        let b =
            multi_report_with_convention(&frames, 863, &default_schedule(), &dims, 2).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!((ra.reduction - rb.reduction).abs() < 1e-12);
            assert_eq!(2 * ra.baseline_flops, rb.baseline_flops);
        }
    }

    #[test]
    fn reduction_grows_with_frame_count() {
        let dims = ModelDims::qwen2_1_5b();
        let frames = [256, 512, 1024, 2048, 4096, 8192];
        let report = multi_report(&frames, 863, &default_schedule(), &dims).unwrap();
        for pair in report.rows.windows(2) {
            assert!(pair[1].reduction >= pair[0].reduction);
            // Baseline grows superlinearly in T.
            assert!(pair[1].baseline_flops as f64 / pair[0].baseline_flops as f64 > 2.0);
        }
    }

    #[test]
    fn layer_mismatch_is_rejected() {
        let schedule = CompressionSchedule::cosine(16, 12).unwrap();
        let err = prefill_report(1024, 863, &schedule, &ModelDims::qwen2_1_5b()).unwrap_err();
        assert_eq!(
            err,
            CostError::LayerMismatch {
                schedule: 12,
                dims: 28
            }
        );
    }
}
