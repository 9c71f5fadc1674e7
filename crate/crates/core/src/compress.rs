//! Layer-wise token dropping: which within-frame slots survive each layer
//! transition, and how a plan is applied to a token matrix.
//!
//! A [`DropPlan`] realizes a [`CompressionSchedule`] as one kept-slot list
//! per layer transition, shared by every frame. The suffix strategy keeps
//! the last slots of each frame (the direction causal attention funnels
//! information); the uniform strategy keeps evenly spaced slots.

use thiserror::Error;

use crate::schedule::{CompressionSchedule, ScheduleError};

#[derive(Debug, Error, PartialEq)]
pub enum CompressError {
    #[error("cannot keep {n_next} of {n_prev} slots")]
    KeepTooMany { n_prev: usize, n_next: usize },
    #[error("token matrix has {got} slots per frame but the transition expects {expected}")]
    SlotMismatch { expected: usize, got: usize },
    #[error("kept slot {slot} out of range for {n_prev} slots")]
    KeptSlotOutOfRange { slot: usize, n_prev: usize },
    #[error("plan block: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("plan block: missing key `strategy`")]
    MissingStrategy,
    #[error("plan block: unknown strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropStrategy {
    /// Keep the last `n_next` slots of each frame.
    Suffix,
    /// Keep evenly spaced slots, always including slot 0.
    Uniform,
}

impl DropStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            DropStrategy::Suffix => "suffix",
            DropStrategy::Uniform => "uniform",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CompressError> {
        match name {
            "suffix" => Ok(DropStrategy::Suffix),
            "uniform" => Ok(DropStrategy::Uniform),
            other => Err(CompressError::UnknownStrategy(other.to_string())),
        }
    }

    fn keep_slots(&self, n_prev: usize, n_next: usize) -> Result<Vec<usize>, CompressError> {
        match self {
            DropStrategy::Suffix => suffix_keep_slots(n_prev, n_next),
            DropStrategy::Uniform => uniform_keep_slots(n_prev, n_next),
        }
    }
}

/// The last `n_next` of `n_prev` within-frame slots, in order.
pub fn suffix_keep_slots(n_prev: usize, n_next: usize) -> Result<Vec<usize>, CompressError> {
    check_counts(n_prev, n_next)?;
    Ok((n_prev - n_next..n_prev).collect())
}

/// `n_next` evenly spaced slots `floor(j * n_prev / n_next)`, strictly
/// increasing and starting at slot 0.
pub fn uniform_keep_slots(n_prev: usize, n_next: usize) -> Result<Vec<usize>, CompressError> {
    check_counts(n_prev, n_next)?;
    Ok((0..n_next).map(|j| j * n_prev / n_next).collect())
}

fn check_counts(n_prev: usize, n_next: usize) -> Result<(), CompressError> {
    if n_next == 0 || n_next > n_prev {
        return Err(CompressError::KeepTooMany { n_prev, n_next });
    }
    Ok(())
}

/// One layer transition: `kept` slots (strictly increasing, `n_next` of
/// them) survive out of `n_prev` per-frame slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub n_prev: usize,
    pub n_next: usize,
    pub kept: Vec<usize>,
}

impl Transition {
    pub fn is_identity(&self) -> bool {
        self.n_prev == self.n_next
    }
}

/// Per-layer kept-slot lists realizing a schedule under a strategy. The
/// kept list at transition `l` (applied after layer `l`) takes each frame
/// from `tokens_at(l)` slots down to `tokens_at(l + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropPlan {
    pub schedule: CompressionSchedule,
    pub strategy: DropStrategy,
    transitions: Vec<Transition>,
}

impl DropPlan {
    pub fn build(schedule: CompressionSchedule, strategy: DropStrategy) -> Self {
        let transitions = (0..schedule.num_layers)
            .map(|layer| {
                let n_prev = schedule.tokens_at(layer);
                let n_next = schedule.tokens_at(layer + 1);
                let kept = strategy
                    .keep_slots(n_prev, n_next)
                    .expect("schedule counts are monotone non-increasing");
                Transition {
                    n_prev,
                    n_next,
                    kept,
                }
            })
            .collect();
        Self {
            schedule,
            strategy,
            transitions,
        }
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition(&self, layer: usize) -> &Transition {
        &self.transitions[layer]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Surviving per-frame slot count after the full plan.
    pub fn final_tokens(&self) -> usize {
        self.schedule.tokens_at(self.schedule.num_layers)
    }

    /// Serialize as a schedule block plus a `strategy` line.
    pub fn to_block(&self) -> String {
        format!("{}strategy={}\n", self.schedule.to_block(), self.strategy.name())
    }

    pub fn from_block(text: &str) -> Result<Self, CompressError> {
        let mut schedule_lines = String::new();
        let mut strategy = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(value) = trimmed.strip_prefix("strategy=") {
                strategy = Some(DropStrategy::parse(value.trim())?);
            } else {
                schedule_lines.push_str(line);
                schedule_lines.push('\n');
            }
        }
        let schedule = CompressionSchedule::from_block(&schedule_lines)?;
        let strategy = strategy.ok_or(CompressError::MissingStrategy)?;
        Ok(Self::build(schedule, strategy))
    }
}

/// A frames x slots x width token matrix, row-major. The element type is
/// generic so provenance tags (e.g. original slot indices) can be threaded
/// through [`apply_drop`] exactly like embedding values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix<T> {
    pub frames: usize,
    pub slots: usize,
    pub width: usize,
    data: Vec<T>,
}

impl<T: Clone> FrameMatrix<T> {
    pub fn new(frames: usize, slots: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), frames * slots * width, "frame matrix shape mismatch");
        Self {
            frames,
            slots,
            width,
            data,
        }
    }

    pub fn fill(frames: usize, slots: usize, width: usize, value: T) -> Self {
        Self::new(frames, slots, width, vec![value; frames * slots * width])
    }

    pub fn from_fn(
        frames: usize,
        slots: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(frames * slots * width);
        for frame in 0..frames {
            for slot in 0..slots {
                for k in 0..width {
                    data.push(f(frame, slot, k));
                }
            }
        }
        Self::new(frames, slots, width, data)
    }

    pub fn token(&self, frame: usize, slot: usize) -> &[T] {
        let base = (frame * self.slots + slot) * self.width;
        &self.data[base..base + self.width]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Copy the kept slots of every frame into a narrower matrix. Frame order
/// and within-frame slot order are preserved; values are copied verbatim.
pub fn apply_drop<T: Clone>(
    tokens: &FrameMatrix<T>,
    transition: &Transition,
) -> Result<FrameMatrix<T>, CompressError> {
    if tokens.slots != transition.n_prev {
        return Err(CompressError::SlotMismatch {
            expected: transition.n_prev,
            got: tokens.slots,
        });
    }
    if let Some(&slot) = transition.kept.iter().find(|&&s| s >= transition.n_prev) {
        return Err(CompressError::KeptSlotOutOfRange {
            slot,
            n_prev: transition.n_prev,
        });
    }
    let mut data = Vec::with_capacity(tokens.frames * transition.n_next * tokens.width);
    for frame in 0..tokens.frames {
        for &slot in &transition.kept {
            data.extend_from_slice(tokens.token(frame, slot));
        }
    }
    Ok(FrameMatrix::new(
        tokens.frames,
        transition.n_next,
        tokens.width,
        data,
    ))
}

/// Apply every transition of a plan in order.
pub fn apply_plan<T: Clone>(
    tokens: &FrameMatrix<T>,
    plan: &DropPlan,
) -> Result<FrameMatrix<T>, CompressError> {
    let mut current = tokens.clone();
    for transition in &plan.transitions {
        current = apply_drop(&current, transition)?;
    }
    Ok(current)
}
