//! Shared fixture builders for the criterion benchmarks.

use vtcomp_core::compress::{DropPlan, DropStrategy, FrameMatrix};
use vtcomp_core::harness::{gen_bias_attention, BiasOracle, BiasOracleConfig};
use vtcomp_core::linalg::Mat;
use vtcomp_core::model::ToyConfig;
use vtcomp_core::schedule::CompressionSchedule;

pub fn bench_model_config() -> ToyConfig {
    ToyConfig::new(4, 4, 64, 128).unwrap()
}

pub fn bench_plan(initial_tokens: usize, layers: usize) -> DropPlan {
    DropPlan::build(
        CompressionSchedule::cosine(initial_tokens, layers).unwrap(),
        DropStrategy::Suffix,
    )
}

pub fn bench_video(frames: usize, tokens: usize, width: usize) -> FrameMatrix<f32> {
    FrameMatrix::from_fn(frames, tokens, width, |f, s, k| {
        ((f * 131 + s * 17 + k * 3) % 97) as f32 * 0.02 - 1.0
    })
}

pub fn bench_question(rows: usize, width: usize) -> Mat<f32> {
    Mat::from_fn(rows, width, |r, c| ((r * 29 + c) % 31) as f32 * 0.06 - 0.9)
}

pub fn bench_oracle(total_frames: usize) -> BiasOracle {
    gen_bias_attention(&BiasOracleConfig {
        total_frames,
        tokens_per_frame: 4,
        question_tokens: 4,
        begin_bias: 0.02,
        end_bias: 0.1,
        needle_frame: total_frames / 2,
        needle_signal: 8.0,
        noise_scale: 1.0,
        seed: 42,
    })
    .unwrap()
}
