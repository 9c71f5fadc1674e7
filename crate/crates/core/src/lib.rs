//! Video token compression toolkit: progressive per-layer token dropping,
//! question-conditioned frame selection from attention maps, and an analytic
//! prefill FLOP model, all runnable against a from-scratch toy transformer.
//!
//! The crate is organized around the stages of a video-QA prefill:
//!
//! * [`layout`] — indexing between frames, clips, within-frame token slots,
//!   and flattened sequence positions.
//! * [`schedule`] — per-layer target token counts (cosine, step-wise,
//!   constant families).
//! * [`compress`] — drop plans realizing a schedule (suffix-preserving or
//!   uniform slot selection) and their application to token matrices.
//! * [`model`] — a small decoder-only transformer with exact backprop that
//!   applies a drop plan between layers and records attention maps.
//! * [`scoring`] — segmented local-attention relevance scoring of frames,
//!   chunked aggregation for long videos, and top-k selection.
//! * [`cost`] — analytic prefill FLOP accounting for baseline vs compressed
//!   schedules.
//! * [`harness`] — synthetic experiment generators: a position-bias attention
//!   oracle and a multi-hop needle-in-a-haystack protocol.
//! * [`dump`] / [`config`] / [`report`] — binary attention/token dump
//!   formats, key=value run configuration, and CSV/text report emission.

pub mod compress;
pub mod config;
pub mod cost;
pub mod dump;
pub mod harness;
pub mod layout;
pub mod linalg;
pub mod model;
pub mod report;
pub mod schedule;
pub mod scoring;

pub use compress::{DropPlan, DropStrategy, FrameMatrix};
pub use cost::{CostReport, CostRow, ModelDims};
pub use layout::{ClipPartition, FrameGrid};
pub use model::{ForwardTrace, Parameters, ToyConfig};
pub use schedule::{CompressionSchedule, ScheduleKind};
pub use scoring::{ChunkConfig, FrameScoreTable, SegmentConfig, SelectionResult};
