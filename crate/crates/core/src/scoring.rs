//! Question-conditioned frame relevance scoring.
//!
//! Relevance of a frame is the mean attention weight its video tokens
//! receive from question tokens, averaged over heads, scoring layers, and
//! every (chunk, window) observation that covers the frame. Long videos are
//! scored in overlapping chunks; within a chunk a local window slides over
//! the frames; within a window, per-frame means are bucketed by clip and
//! every frame carries its clip's mean as one observation. Aggregation is
//! the arithmetic mean over the observation multiset, which neutralizes the
//! lower coverage of boundary frames.
//!
//! Attention enters through [`AttentionSource`]: a provider of question-row
//! by video-column weight blocks for any requested window. Recorded dumps
//! and toy-model traces slice a full-sequence map ([`FullMapSource`]); the
//! synthetic bias oracle in [`crate::harness`] synthesizes fresh per-window
//! maps instead.

use thiserror::Error;

use crate::layout::clip_of_frame;

/// Slack allowed above 1.0 for question-row sums; rows may be
/// sub-normalized because only the video-column block is scored.
pub const ROW_SUM_CAP: f64 = 1.0 + 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("segment config: {0}")]
    BadSegmentConfig(&'static str),
    #[error("chunk config: {0}")]
    BadChunkConfig(&'static str),
    #[error("attention weight {value} at layer {layer} head {head} is negative")]
    NegativeWeight {
        layer: usize,
        head: usize,
        value: f64,
    },
    #[error("attention row {row} at layer {layer} head {head} sums to {sum}, above the cap")]
    RowOverflow {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("attention block at layer {layer} head {head} holds {got} values, expected {expected}")]
    BlockShape {
        layer: usize,
        head: usize,
        expected: usize,
        got: usize,
    },
    #[error("scoring layer {layer} out of range; {available} layers available")]
    LayerOutOfRange { layer: usize, available: usize },
    #[error("scoring requires at least one question token")]
    NoQuestionRows,
    #[error("scoring requires at least one layer and head")]
    NoMaps,
    #[error("frame {frame} received no observations (windowing bug)")]
    ZeroCoverage { frame: usize },
    #[error("selection requires k >= 1")]
    ZeroSelection,
}

/// Which layers' maps feed the relevance score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoringLayers {
    All,
    Subset(Vec<usize>),
}

impl ScoringLayers {
    fn resolve(&self, available: usize) -> Result<Vec<usize>, ScoreError> {
        match self {
            ScoringLayers::All => Ok((0..available).collect()),
            ScoringLayers::Subset(layers) => {
                if layers.is_empty() {
                    return Err(ScoreError::BadSegmentConfig("scoring layer set is empty"));
                }
                for &layer in layers {
                    if layer >= available {
                        return Err(ScoreError::LayerOutOfRange { layer, available });
                    }
                }
                Ok(layers.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub window_frames: usize,
    pub stride_frames: usize,
    pub clip_size: usize,
    pub scoring_layers: ScoringLayers,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window_frames: 64,
            stride_frames: 32,
            clip_size: 8,
            scoring_layers: ScoringLayers::All,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.window_frames == 0 {
            return Err(ScoreError::BadSegmentConfig("window_frames must be >= 1"));
        }
        if self.stride_frames == 0 || self.stride_frames > self.window_frames {
            return Err(ScoreError::BadSegmentConfig(
                "stride_frames must be in [1, window_frames]",
            ));
        }
        if self.clip_size == 0 {
            return Err(ScoreError::BadSegmentConfig("clip_size must be >= 1"));
        }
        if let ScoringLayers::Subset(layers) = &self.scoring_layers {
            if layers.is_empty() {
                return Err(ScoreError::BadSegmentConfig("scoring layer set is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkConfig {
    pub chunk_frames: usize,
    pub n_repeat: usize,
    pub n_selected_frames: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_frames: 512,
            n_repeat: 2,
            n_selected_frames: 512,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.chunk_frames == 0 {
            return Err(ScoreError::BadChunkConfig("chunk_frames must be >= 1"));
        }
        if self.n_repeat == 0 {
            return Err(ScoreError::BadChunkConfig("n_repeat must be >= 1"));
        }
        if !self.chunk_frames.is_multiple_of(self.n_repeat) {
            return Err(ScoreError::BadChunkConfig(
                "chunk_frames must be divisible by n_repeat",
            ));
        }
        if self.n_selected_frames == 0 {
            return Err(ScoreError::BadChunkConfig("n_selected_frames must be >= 1"));
        }
        Ok(())
    }
}

/// Per-frame relevance scores plus how many (chunk, window) observations
/// each mean absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreTable {
    pub scores: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl FrameScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// 1-based rank of a frame under (score desc, frame asc) ordering.
    pub fn rank_of(&self, frame: usize) -> usize {
        let mine = self.scores[frame];
        1 + self
            .scores
            .iter()
            .enumerate()
            .filter(|(i, &s)| s > mine || (s == mine && *i < frame))
            .count()
    }
}

/// Frames chosen by top-k selection, in ascending temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub frames: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Question-row by video-column attention for one window: one block per
/// layer (each with its own tokens-per-frame) and head.
#[derive(Debug, Clone)]
pub struct SegmentAttention {
    pub window_frames: usize,
    pub question_rows: usize,
    pub layers: Vec<SegmentLayerAttention>,
}

#[derive(Debug, Clone)]
pub struct SegmentLayerAttention {
    pub tokens_per_frame: usize,
    /// Per head, row-major `question_rows x (window_frames * tokens_per_frame)`.
    pub heads: Vec<Vec<f64>>,
}

impl SegmentAttention {
    /// Enforce the block invariants: exact shape, non-negative weights, row
    /// sums at most `1 + 1e-4`.
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.question_rows == 0 {
            return Err(ScoreError::NoQuestionRows);
        }
        if self.layers.is_empty() || self.layers.iter().any(|l| l.heads.is_empty()) {
            return Err(ScoreError::NoMaps);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let cols = self.window_frames * layer.tokens_per_frame;
            for (hi, head) in layer.heads.iter().enumerate() {
                if head.len() != self.question_rows * cols {
                    return Err(ScoreError::BlockShape {
                        layer: li,
                        head: hi,
                        expected: self.question_rows * cols,
                        got: head.len(),
                    });
                }
                for row in 0..self.question_rows {
                    let mut sum = 0.0;
                    for &w in &head[row * cols..(row + 1) * cols] {
                        if w < 0.0 || !w.is_finite() {
                            return Err(ScoreError::NegativeWeight {
                                layer: li,
                                head: hi,
                                value: w,
                            });
                        }
                        sum += w;
                    }
                    if sum > ROW_SUM_CAP {
                        return Err(ScoreError::RowOverflow {
                            layer: li,
                            head: hi,
                            row,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Provider of window attention blocks over a `total_frames()`-frame video.
pub trait AttentionSource {
    fn total_frames(&self) -> usize;
    fn window_attention(&self, start: usize, len: usize) -> Result<SegmentAttention, ScoreError>;
}

/// A full-sequence attention recording; window blocks are column slices
/// (rows stay sub-normalized rather than being re-softmaxed). This is the
/// consumption semantics of dump files and toy-model traces.
#[derive(Debug, Clone)]
pub struct FullMapSource {
    pub num_frames: usize,
    pub question_rows: usize,
    pub layers: Vec<SegmentLayerAttention>,
}

impl AttentionSource for FullMapSource {
    fn total_frames(&self) -> usize {
        self.num_frames
    }

    fn window_attention(&self, start: usize, len: usize) -> Result<SegmentAttention, ScoreError> {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let tpf = layer.tokens_per_frame;
                let full_cols = self.num_frames * tpf;
                let lo = start * tpf;
                let hi = (start + len) * tpf;
                let heads = layer
                    .heads
                    .iter()
                    .map(|head| {
                        let mut block = Vec::with_capacity(self.question_rows * (hi - lo));
                        for row in 0..self.question_rows {
                            block.extend_from_slice(&head[row * full_cols + lo..row * full_cols + hi]);
                        }
                        block
                    })
                    .collect();
                SegmentLayerAttention {
                    tokens_per_frame: tpf,
                    heads,
                }
            })
            .collect();
        Ok(SegmentAttention {
            window_frames: len,
            question_rows: self.question_rows,
            layers,
        })
    }
}

/// Window placements over `total_frames`: starts at multiples of the stride
/// up to and including `T - w`, plus a tail window at `T - w` when the
/// stride does not land there, so every frame is covered.
pub fn segment_windows(total_frames: usize, cfg: &SegmentConfig) -> Vec<(usize, usize)> {
    let w = cfg.window_frames;
    if total_frames <= w {
        return vec![(0, total_frames)];
    }
    let last = total_frames - w;
    let mut windows: Vec<(usize, usize)> = (0..=last)
        .step_by(cfg.stride_frames)
        .map(|start| (start, w))
        .collect();
    if !last.is_multiple_of(cfg.stride_frames) {
        windows.push((last, w));
    }
    windows
}

/// Chunk placements: stride `chunk_frames / n_repeat`, with the final chunk
/// clamped to end exactly at `T`. Interior frames land in `n_repeat`
/// chunks; frames near either boundary in fewer.
pub fn chunk_plan(total_frames: usize, cfg: &ChunkConfig) -> Vec<(usize, usize)> {
    let c = cfg.chunk_frames;
    if total_frames <= c {
        return vec![(0, total_frames)];
    }
    let stride = c / cfg.n_repeat;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start + c < total_frames {
        chunks.push((start, c));
        start += stride;
    }
    chunks.push((total_frames - c, c));
    chunks
}

/// Scores produced by one window: clip means plus the per-frame
/// observations (each frame carries its clip's mean).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentObservations {
    pub window: (usize, usize),
    pub clip_scores: Vec<(usize, f64)>,
    pub frame_observations: Vec<(usize, f64)>,
}

/// Score one window: per-frame mean attention over (layer, head, question
/// row, frame column), bucketed into clip means by the frame's global clip
/// index.
pub fn score_segment(
    attention: &SegmentAttention,
    segment: (usize, usize),
    clip_size: usize,
    scoring_layers: &ScoringLayers,
) -> Result<SegmentObservations, ScoreError> {
    let (start, len) = segment;
    debug_assert_eq!(attention.window_frames, len);
    attention.validate()?;
    let selected = scoring_layers.resolve(attention.layers.len())?;

    let mut frame_means = vec![0.0f64; len];
    let mut terms_per_frame = 0usize;
    for &li in &selected {
        let layer = &attention.layers[li];
        let tpf = layer.tokens_per_frame;
        let cols = len * tpf;
        terms_per_frame += layer.heads.len() * attention.question_rows * tpf;
        for head in &layer.heads {
            for row in 0..attention.question_rows {
                let row_block = &head[row * cols..(row + 1) * cols];
                for (i, mean) in frame_means.iter_mut().enumerate() {
                    for &w in &row_block[i * tpf..(i + 1) * tpf] {
                        *mean += w;
                    }
                }
            }
        }
    }
    for mean in frame_means.iter_mut() {
        *mean /= terms_per_frame as f64;
    }

    // Clip buckets keyed by global clip index; a clip straddling the window
    // boundary contributes only its in-window frames.
    let first_clip = clip_of_frame(start, clip_size);
    let last_clip = clip_of_frame(start + len - 1, clip_size);
    let mut clip_sum = vec![0.0f64; last_clip - first_clip + 1];
    let mut clip_count = vec![0usize; last_clip - first_clip + 1];
    for (i, &mean) in frame_means.iter().enumerate() {
        let c = clip_of_frame(start + i, clip_size) - first_clip;
        clip_sum[c] += mean;
        clip_count[c] += 1;
    }
    let clip_scores: Vec<(usize, f64)> = clip_sum
        .iter()
        .zip(&clip_count)
        .enumerate()
        .filter(|(_, (_, &count))| count > 0)
        .map(|(c, (&sum, &count))| (first_clip + c, sum / count as f64))
        .collect();
    let frame_observations = (0..len)
        .map(|i| {
            let c = clip_of_frame(start + i, clip_size) - first_clip;
            (start + i, clip_sum[c] / clip_count[c] as f64)
        })
        .collect();
    Ok(SegmentObservations {
        window: segment,
        clip_scores,
        frame_observations,
    })
}

/// Mean of each frame's observation multiset; order-independent. Errors if
/// any frame in `[0, total_frames)` was never observed.
pub fn aggregate(
    total_frames: usize,
    observations: impl IntoIterator<Item = (usize, f64)>,
) -> Result<FrameScoreTable, ScoreError> {
    let mut sums = vec![0.0f64; total_frames];
    let mut coverage = vec![0u32; total_frames];
    for (frame, value) in observations {
        sums[frame] += value;
        coverage[frame] += 1;
    }
    if let Some(frame) = coverage.iter().position(|&c| c == 0) {
        return Err(ScoreError::ZeroCoverage { frame });
    }
    let scores = sums
        .iter()
        .zip(&coverage)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    Ok(FrameScoreTable { scores, coverage })
}

/// The full segmented pipeline: chunk the video, slide windows within each
/// chunk, score every window, aggregate. Iteration is in fixed
/// (chunk, window) order, so the output is deterministic.
pub fn score_video(
    source: &dyn AttentionSource,
    seg_cfg: &SegmentConfig,
    chunk_cfg: &ChunkConfig,
) -> Result<FrameScoreTable, ScoreError> {
    seg_cfg.validate()?;
    chunk_cfg.validate()?;
    let total = source.total_frames();
    if total == 0 {
        return Err(ScoreError::ZeroCoverage { frame: 0 });
    }
    let mut observations = Vec::new();
    for (chunk_start, chunk_len) in chunk_plan(total, chunk_cfg) {
        for (win_start, win_len) in segment_windows(chunk_len, seg_cfg) {
            let start = chunk_start + win_start;
            let attention = source.window_attention(start, win_len)?;
            let obs = score_segment(
                &attention,
                (start, win_len),
                seg_cfg.clip_size,
                &seg_cfg.scoring_layers,
            )?;
            observations.extend(obs.frame_observations);
        }
    }
    aggregate(total, observations)
}

/// The global-attention baseline: a single window spanning all frames.
pub fn global_score(
    source: &dyn AttentionSource,
    seg_cfg: &SegmentConfig,
) -> Result<FrameScoreTable, ScoreError> {
    seg_cfg.validate()?;
    let total = source.total_frames();
    let attention = source.window_attention(0, total)?;
    let obs = score_segment(
        &attention,
        (0, total),
        seg_cfg.clip_size,
        &seg_cfg.scoring_layers,
    )?;
    aggregate(total, obs.frame_observations)
}

/// The `min(k, T)` highest-scoring frames, ties broken toward earlier
/// frames, returned in ascending temporal order.
pub fn select_top_k(table: &FrameScoreTable, k: usize) -> Result<SelectionResult, ScoreError> {
    if k == 0 {
        return Err(ScoreError::ZeroSelection);
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table.scores[b].total_cmp(&table.scores[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(k.min(table.len())).collect();
    chosen.sort_unstable();
    let scores = chosen.iter().map(|&f| table.scores[f]).collect();
    Ok(SelectionResult {
        frames: chosen,
        scores,
    })
}

/// Clip-granularity selection: rank whole clips by their (clip-constant)
/// score and emit their frames in temporal order until `k` frames are
/// collected. Off by default; frame granularity is the primary mode.
pub fn select_top_k_clips(
    table: &FrameScoreTable,
    k: usize,
    clip_size: usize,
) -> Result<SelectionResult, ScoreError> {
    if k == 0 {
        return Err(ScoreError::ZeroSelection);
    }
    let total = table.len();
    let num_clips = total.div_ceil(clip_size);
    // A clip's score is the mean of its frames' scores (identical to any
    // member when scores are clip-constant).
    let mut clip_scores = Vec::with_capacity(num_clips);
    for c in 0..num_clips {
        let lo = c * clip_size;
        let hi = ((c + 1) * clip_size).min(total);
        let mean = table.scores[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        clip_scores.push((c, mean));
    }
    clip_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen = Vec::new();
    for (c, _) in clip_scores {
        let lo = c * clip_size;
        let hi = ((c + 1) * clip_size).min(total);
        for frame in lo..hi {
            if chosen.len() < k.min(total) {
                chosen.push(frame);
            }
        }
        if chosen.len() >= k.min(total) {
            break;
        }
    }
    chosen.sort_unstable();
    let scores = chosen.iter().map(|&f| table.scores[f]).collect();
    Ok(SelectionResult {
        frames: chosen,
        scores,
    })
}
