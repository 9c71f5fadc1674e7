//! Synthetic experiment generators.
//!
//! The bias oracle synthesizes question-to-video attention with a
//! controllable positional skew toward the beginning and end of the
//! attended context, the skew growing linearly with context length — long
//! contexts misrank mid-video content while short windows stay faithful.
//! That makes the segmented-vs-global comparison testable without a real
//! model: the same noise realization is served to both pipelines and only
//! the attended-context structure differs.
//!
//! The needle protocol chains the oracle into multi-hop retrieval: each
//! recovered hop activates the next hop's signal, and selection runs with
//! one frame per round.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scoring::{
    score_video, select_top_k, AttentionSource, ChunkConfig, FrameScoreTable, ScoreError,
    ScoringLayers, SegmentAttention, SegmentConfig, SegmentLayerAttention,
};
use crate::scoring::global_score;

/// Frames over which the positional boost decays to 1/e (one clip).
pub const BIAS_DECAY_FRAMES: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("needle frame {needle} outside [0, {total})")]
    NeedleOutOfRange { needle: usize, total: usize },
    #[error("oracle requires {0} >= 1")]
    ZeroDim(&'static str),
    #[error("bias and signal strengths must be non-negative and finite")]
    BadStrength,
    #[error("hop frames must be distinct, in range, and at least one")]
    BadHops,
    #[error("one signal strength per hop is required")]
    SignalCount,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Controls for the synthetic position-bias attention generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasOracleConfig {
    pub total_frames: usize,
    pub tokens_per_frame: usize,
    pub question_tokens: usize,
    /// Boost amplitude per context frame at the context start.
    pub begin_bias: f64,
    /// Boost amplitude per context frame at the context end.
    pub end_bias: f64,
    pub needle_frame: usize,
    /// Logit added to every column of the needle frame.
    pub needle_signal: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl BiasOracleConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.total_frames == 0 {
            return Err(HarnessError::ZeroDim("total_frames"));
        }
        if self.tokens_per_frame == 0 {
            return Err(HarnessError::ZeroDim("tokens_per_frame"));
        }
        if self.question_tokens == 0 {
            return Err(HarnessError::ZeroDim("question_tokens"));
        }
        if self.needle_frame >= self.total_frames {
            return Err(HarnessError::NeedleOutOfRange {
                needle: self.needle_frame,
                total: self.total_frames,
            });
        }
        for v in [
            self.begin_bias,
            self.end_bias,
            self.needle_signal,
            self.noise_scale,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(HarnessError::BadStrength);
            }
        }
        Ok(())
    }
}

/// Attention source backed by the bias model. Per question row and global
/// video column, a uniform noise logit is drawn once from the seed; a
/// requested window adds the positional boosts relative to *that* window
/// and softmax-normalizes over the window's columns. The boost amplitude is
/// `bias * context_frames`, so a full-video context is skewed
/// proportionally harder than a short window — the long-context failure
/// mode this harness exists to expose.
#[derive(Debug, Clone)]
pub struct BiasOracle {
    cfg: BiasOracleConfig,
    /// Row-major question_tokens x (total_frames * tokens_per_frame).
    noise: Vec<f64>,
}

pub fn gen_bias_attention(cfg: &BiasOracleConfig) -> Result<BiasOracle, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cols = cfg.total_frames * cfg.tokens_per_frame;
    let noise = (0..cfg.question_tokens * cols)
        .map(|_| rng.random_range(0.0..1.0) * cfg.noise_scale)
        .collect();
    Ok(BiasOracle {
        cfg: *cfg,
        noise,
    })
}

impl AttentionSource for BiasOracle {
    fn total_frames(&self) -> usize {
        self.cfg.total_frames
    }

    fn window_attention(&self, start: usize, len: usize) -> Result<SegmentAttention, ScoreError> {
        let tpf = self.cfg.tokens_per_frame;
        let full_cols = self.cfg.total_frames * tpf;
        let cols = len * tpf;
        let begin_amp = self.cfg.begin_bias * len as f64;
        let end_amp = self.cfg.end_bias * len as f64;

        let mut block = Vec::with_capacity(self.cfg.question_tokens * cols);
        let mut logits = vec![0.0f64; cols];
        for row in 0..self.cfg.question_tokens {
            for offset in 0..len {
                let frame = start + offset;
                let from_start = offset as f64;
                let from_end = (len - 1 - offset) as f64;
                let mut bias = begin_amp * (-from_start / BIAS_DECAY_FRAMES).exp()
                    + end_amp * (-from_end / BIAS_DECAY_FRAMES).exp();
                if frame == self.cfg.needle_frame {
                    bias += self.cfg.needle_signal;
                }
                for t in 0..tpf {
                    logits[offset * tpf + t] = self.noise[row * full_cols + frame * tpf + t] + bias;
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            block.extend(logits.iter().map(|e| e / denom));
        }
        Ok(SegmentAttention {
            window_frames: len,
            question_rows: self.cfg.question_tokens,
            layers: vec![SegmentLayerAttention {
                tokens_per_frame: tpf,
                heads: vec![block],
            }],
        })
    }
}

/// Needle ranks under global versus segmented scoring of the same oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasOutcome {
    pub global_rank: usize,
    pub segmented_rank: usize,
    pub global: FrameScoreTable,
    pub segmented: FrameScoreTable,
}

pub fn bias_experiment(
    cfg: &BiasOracleConfig,
    seg_cfg: &SegmentConfig,
) -> Result<BiasOutcome, HarnessError> {
    let oracle = gen_bias_attention(cfg)?;
    let chunk_cfg = ChunkConfig {
        n_selected_frames: 1,
        ..ChunkConfig::default()
    };
    let global = global_score(&oracle, seg_cfg)?;
    let segmented = score_video(&oracle, seg_cfg, &chunk_cfg)?;
    Ok(BiasOutcome {
        global_rank: global.rank_of(cfg.needle_frame),
        segmented_rank: segmented.rank_of(cfg.needle_frame),
        global,
        segmented,
    })
}

/// Segment geometry used by the frozen fixtures and the needle protocol:
/// default windows at frame granularity (clip size 1), so single-frame
/// needles are rankable.
pub fn fixture_segment_config() -> SegmentConfig {
    SegmentConfig {
        window_frames: 64,
        stride_frames: 32,
        clip_size: 1,
        scoring_layers: ScoringLayers::All,
    }
}

/// Frozen biased fixture: strong end-of-context bias, needle mid-video.
/// Tuned once so global scoring buries the needle while segmented scoring
/// ranks it first; committed golden CSVs pin the exact output.
pub fn biased_fixture() -> BiasOracleConfig {
    BiasOracleConfig {
        total_frames: 512,
        tokens_per_frame: 1,
        question_tokens: 1,
        begin_bias: 0.0,
        end_bias: 0.1,
        needle_frame: 256,
        needle_signal: 12.0,
        noise_scale: 1.0,
        seed: 7,
    }
}

/// Frozen unbiased fixture: no positional skew; both scorers must rank the
/// needle first.
pub fn unbiased_fixture() -> BiasOracleConfig {
    BiasOracleConfig {
        end_bias: 0.0,
        needle_signal: 6.0,
        ..biased_fixture()
    }
}

/// End-bias values swept by the fixture tests; segmented scoring holds rank
/// 1 across the whole grid (the documented ceiling is the last entry) while
/// global scoring only degrades.
pub const END_BIAS_SWEEP: [f64; 5] = [0.0, 0.03, 0.06, 0.09, 0.12];

/// A planted multi-hop retrieval instance: hop `i` becomes visible (its
/// signal activates) only after hops `0..i` were found.
#[derive(Debug, Clone, PartialEq)]
pub struct NiahInstance {
    pub total_frames: usize,
    pub hop_frames: Vec<usize>,
    pub hop_signals: Vec<f64>,
    pub seed: u64,
}

impl NiahInstance {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.hop_frames.is_empty() {
            return Err(HarnessError::BadHops);
        }
        if self.hop_signals.len() != self.hop_frames.len() {
            return Err(HarnessError::SignalCount);
        }
        let mut seen = std::collections::HashSet::new();
        for &frame in &self.hop_frames {
            if frame >= self.total_frames || !seen.insert(frame) {
                return Err(HarnessError::BadHops);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiahRound {
    pub target: usize,
    pub selected: Vec<usize>,
    pub rank: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiahOutcome {
    pub recovered: bool,
    pub rounds: Vec<NiahRound>,
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run the iterative needle protocol: one selection round per hop, each
/// round targeting the first unfound hop with fresh oracle noise. Recovery
/// means every hop was found within the hop-count round budget.
pub fn niah_run(
    instance: &NiahInstance,
    chunk_cfg: &ChunkConfig,
) -> Result<NiahOutcome, HarnessError> {
    instance.validate()?;
    let seg_cfg = fixture_segment_config();
    let hops = instance.hop_frames.len();
    let mut found = 0usize;
    let mut rounds = Vec::with_capacity(hops);
    for round in 0..hops {
        let target = instance.hop_frames[found];
        let oracle = gen_bias_attention(&BiasOracleConfig {
            total_frames: instance.total_frames,
            tokens_per_frame: 1,
            question_tokens: 1,
            begin_bias: 0.0,
            end_bias: 0.0,
            needle_frame: target,
            needle_signal: instance.hop_signals[found],
            noise_scale: 1.0,
            seed: round_seed(instance.seed, round),
        })?;
        let table = score_video(&oracle, &seg_cfg, chunk_cfg)?;
        let selection = select_top_k(&table, chunk_cfg.n_selected_frames)?;
        let hit = selection.frames.contains(&target);
        rounds.push(NiahRound {
            target,
            selected: selection.frames,
            rank: table.rank_of(target),
            hit,
        });
        if hit {
            found += 1;
            if found == hops {
                break;
            }
        }
    }
    Ok(NiahOutcome {
        recovered: found == hops,
        rounds,
    })
}

/// Seeded instance with `hops` distinct random hop frames, all at the same
/// signal strength.
pub fn random_instance(
    total_frames: usize,
    hops: usize,
    signal: f64,
    seed: u64,
) -> NiahInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D));
    let mut hop_frames = Vec::with_capacity(hops);
    while hop_frames.len() < hops.min(total_frames) {
        let frame = rng.random_range(0..total_frames);
        if !hop_frames.contains(&frame) {
            hop_frames.push(frame);
        }
    }
    NiahInstance {
        total_frames,
        hop_signals: vec![signal; hop_frames.len()],
        hop_frames,
        seed,
    }
}

/// Recovery rate of single-hop instances over `seeds` seeds.
pub fn niah_recovery_rate(
    total_frames: usize,
    signal: f64,
    chunk_cfg: &ChunkConfig,
    seeds: u64,
) -> Result<f64, HarnessError> {
    let mut recovered = 0usize;
    for seed in 0..seeds {
        let instance = random_instance(total_frames, 1, signal, seed);
        if niah_run(&instance, chunk_cfg)?.recovered {
            recovered += 1;
        }
    }
    Ok(recovered as f64 / seeds as f64)
}
