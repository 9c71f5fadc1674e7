//! Canonical indexing between frames, clips, per-frame token slots, and
//! flattened sequence positions.
//!
//! A video enters the model as `T` frames of `N` visual tokens each,
//! flattened frame-major into positions `[0, T*N)`, with `N_q` question
//! tokens appended at `[T*N, T*N + N_q)`. Frames group into clips of
//! `clip_size` frames (the last clip may be short). All indices here are
//! 0-based; every other module builds on these conventions.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("frame grid requires num_frames >= 1, got {0}")]
    EmptyFrames(usize),
    #[error("frame grid requires tokens_per_frame >= 1, got {0}")]
    EmptyTokens(usize),
    #[error("clip partition requires clip_size >= 1, got {0}")]
    EmptyClips(usize),
}

/// Token geometry of one prefill sequence: `num_frames` frames of
/// `tokens_per_frame` visual tokens, followed by `question_tokens` query
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub num_frames: usize,
    pub tokens_per_frame: usize,
    pub question_tokens: usize,
}

impl FrameGrid {
    pub fn new(
        num_frames: usize,
        tokens_per_frame: usize,
        question_tokens: usize,
    ) -> Result<Self, LayoutError> {
        if num_frames == 0 {
            return Err(LayoutError::EmptyFrames(num_frames));
        }
        if tokens_per_frame == 0 {
            return Err(LayoutError::EmptyTokens(tokens_per_frame));
        }
        Ok(Self {
            num_frames,
            tokens_per_frame,
            question_tokens,
        })
    }

    /// Flattened video length `T * N`.
    pub fn video_len(&self) -> usize {
        self.num_frames * self.tokens_per_frame
    }

    /// Full sequence length `T * N + N_q`.
    pub fn seq_len(&self) -> usize {
        self.video_len() + self.question_tokens
    }

    /// The contiguous position ranges of the video block and the question
    /// block; together they partition `[0, seq_len())`.
    pub fn sequence_positions(&self) -> (Range<usize>, Range<usize>) {
        let v = self.video_len();
        (0..v, v..v + self.question_tokens)
    }

    /// Positions of one frame's tokens within the flattened video block.
    pub fn frame_positions(&self, frame: usize) -> Range<usize> {
        assert!(frame < self.num_frames, "frame {frame} out of range");
        let start = frame * self.tokens_per_frame;
        start..start + self.tokens_per_frame
    }
}

/// Grouping of `num_frames` frames into clips of `clip_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipPartition {
    pub clip_size: usize,
    pub num_clips: usize,
    num_frames: usize,
}

impl ClipPartition {
    pub fn new(num_frames: usize, clip_size: usize) -> Result<Self, LayoutError> {
        if num_frames == 0 {
            return Err(LayoutError::EmptyFrames(num_frames));
        }
        if clip_size == 0 {
            return Err(LayoutError::EmptyClips(clip_size));
        }
        Ok(Self {
            clip_size,
            num_clips: num_frames.div_ceil(clip_size),
            num_frames,
        })
    }

    /// Frame count of clip `clip`; only the last clip may be short.
    pub fn frames_in_clip(&self, clip: usize) -> usize {
        assert!(clip < self.num_clips, "clip {clip} out of range");
        let start = clip * self.clip_size;
        self.clip_size.min(self.num_frames - start)
    }
}

/// Clip index of a frame: `floor(frame / clip_size)`.
pub fn clip_of_frame(frame: usize, clip_size: usize) -> usize {
    assert!(clip_size >= 1, "clip_size must be >= 1");
    frame / clip_size
}

/// Flattened video position of `(frame, slot)`; bijective over valid pairs.
pub fn global_slot(frame: usize, slot: usize, tokens_per_frame: usize) -> usize {
    assert!(
        slot < tokens_per_frame,
        "slot {slot} out of range for {tokens_per_frame} tokens per frame"
    );
    frame * tokens_per_frame + slot
}

/// Inverse of [`global_slot`].
pub fn frame_slot_of_global(position: usize, tokens_per_frame: usize) -> (usize, usize) {
    assert!(tokens_per_frame >= 1, "tokens_per_frame must be >= 1");
    (position / tokens_per_frame, position % tokens_per_frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_of_frame_matches_floor_division() {
        assert_eq!(clip_of_frame(0, 8), 0);
        assert_eq!(clip_of_frame(15, 8), 1);
        // Boundary: frame 8 opens the second clip.
        assert_eq!(clip_of_frame(8, 8), 1);
    }

    #[test]
    fn global_slot_examples() {
        assert_eq!(global_slot(0, 0, 16), 0);
        assert_eq!(global_slot(2, 3, 4), 11);
        assert_eq!(global_slot(1, 15, 16), 31);
    }

    #[test]
    #[should_panic(expected = "slot 4 out of range")]
    fn global_slot_rejects_out_of_range_slot() {
        global_slot(0, 4, 4);
    }

    #[test]
    fn sequence_positions_split_video_and_question() {
        let grid = FrameGrid::new(2, 2, 3).unwrap();
        assert_eq!(grid.sequence_positions(), (0..4, 4..7));

        let degenerate = FrameGrid::new(1, 1, 0).unwrap();
        let (video, question) = degenerate.sequence_positions();
        assert_eq!(video, 0..1);
        assert!(question.is_empty());

        // 1024 frames of 16 tokens plus an 863-token query.
        let long = FrameGrid::new(1024, 16, 863).unwrap();
        assert_eq!(long.sequence_positions(), (0..16384, 16384..17247));
    }

    #[test]
    fn grid_rejects_empty_dimensions() {
        assert_eq!(FrameGrid::new(0, 4, 1), Err(LayoutError::EmptyFrames(0)));
        assert_eq!(FrameGrid::new(4, 0, 1), Err(LayoutError::EmptyTokens(0)));
        assert_eq!(
            ClipPartition::new(4, 0),
            Err(LayoutError::EmptyClips(0))
        );
    }

    #[test]
    fn partial_final_clip_is_short() {
        let clips = ClipPartition::new(19, 8).unwrap();
        assert_eq!(clips.num_clips, 3);
        assert_eq!(clips.frames_in_clip(0), 8);
        assert_eq!(clips.frames_in_clip(1), 8);
        assert_eq!(clips.frames_in_clip(2), 3);
    }

    proptest! {
        #[test]
        fn global_slot_round_trips(
            frame in 0usize..4096,
            tokens_per_frame in 1usize..128,
            slot_seed in 0usize..128,
        ) {
            let slot = slot_seed % tokens_per_frame;
            let pos = global_slot(frame, slot, tokens_per_frame);
            prop_assert_eq!(frame_slot_of_global(pos, tokens_per_frame), (frame, slot));
        }

        #[test]
        fn clip_sizes_sum_to_frame_count(
            num_frames in 1usize..2048,
            clip_size in 1usize..64,
        ) {
            let clips = ClipPartition::new(num_frames, clip_size).unwrap();
            let total: usize = (0..clips.num_clips).map(|c| clips.frames_in_clip(c)).sum();
            prop_assert_eq!(total, num_frames);
            // Every frame lands in exactly one clip, and that clip is in range.
            for frame in 0..num_frames {
                prop_assert!(clip_of_frame(frame, clip_size) < clips.num_clips);
            }
        }

        #[test]
        fn sequence_ranges_partition_without_gaps(
            frames in 1usize..512,
            tokens in 1usize..64,
            question in 0usize..256,
        ) {
            let grid = FrameGrid::new(frames, tokens, question).unwrap();
            let (video, query) = grid.sequence_positions();
            prop_assert_eq!(video.start, 0);
            prop_assert_eq!(video.end, query.start);
            prop_assert_eq!(query.end, grid.seq_len());
        }
    }
}
