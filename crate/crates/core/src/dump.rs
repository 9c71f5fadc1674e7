//! Binary attention and token dump formats.
//!
//! Both formats are little-endian with an 8-byte-aligned header and 32-bit
//! IEEE-754 payloads, so external exporters can produce them without a
//! tensor framework. A plain-text sidecar manifest (`<file>.manifest`)
//! mirrors the header for human inspection. Writes are whole-file atomic
//! (temp file + rename).
//!
//! `ATND` carries question-row by video-column attention blocks, one per
//! layer (each with its own tokens-per-frame) and head — the carrier
//! between a model's recorded attention and the scoring pipeline. Rows hold
//! probabilities: non-negative, summing to at most 1 + 1e-4 (sub-normalized
//! rows are expected, since question-to-question mass is not exported).
//!
//! `TOKD` carries a frames x tokens-per-frame x width embedding matrix.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::compress::FrameMatrix;
use crate::linalg::Scalar;
use crate::model::ForwardTrace;
use crate::scoring::{FullMapSource, SegmentLayerAttention, ROW_SUM_CAP};

pub const ATTENTION_MAGIC: [u8; 4] = *b"ATND";
pub const TOKEN_MAGIC: [u8; 4] = *b"TOKD";
pub const FORMAT_VERSION: u32 = 1;
const ELEM_F32: u32 = 0;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {got:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("unsupported element type tag {0}")]
    BadElemType(u32),
    #[error("header field {field} is zero")]
    ZeroField { field: &'static str },
    #[error("payload holds {got} elements, header implies {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("file continues past the declared payload")]
    TrailingBytes,
    #[error("attention weight {value} at layer {layer} head {head} is negative or non-finite")]
    NegativeWeight {
        layer: usize,
        head: usize,
        value: f32,
    },
    #[error("attention row {row} at layer {layer} head {head} sums to {sum}, above 1 + 1e-4")]
    RowOverflow {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },
    #[error("block at layer {layer} has {got} heads, expected {expected}")]
    HeadCount {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("forward trace carries no recorded attention")]
    TraceWithoutAttention,
}

/// One layer's attention blocks: tokens-per-frame at that layer plus one
/// `question_tokens x (num_frames * tokens_per_frame)` row-major block per
/// head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub tokens_per_frame: usize,
    pub heads: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub num_frames: usize,
    pub question_tokens: usize,
    pub num_heads: usize,
    pub layers: Vec<AttentionLayer>,
}

impl AttentionDump {
    pub fn new(
        num_frames: usize,
        question_tokens: usize,
        num_heads: usize,
        layers: Vec<AttentionLayer>,
    ) -> Result<Self, DumpError> {
        let dump = Self {
            num_frames,
            question_tokens,
            num_heads,
            layers,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn payload_elements(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.heads.len() * self.question_tokens * self.num_frames * l.tokens_per_frame)
            .sum()
    }

    pub fn validate(&self) -> Result<(), DumpError> {
        for (field, v) in [
            ("num_frames", self.num_frames),
            ("question_tokens", self.question_tokens),
            ("num_heads", self.num_heads),
            ("num_layers", self.layers.len()),
        ] {
            if v == 0 {
                return Err(DumpError::ZeroField { field });
            }
        }
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.tokens_per_frame == 0 {
                return Err(DumpError::ZeroField {
                    field: "tokens_per_frame",
                });
            }
            if layer.heads.len() != self.num_heads {
                return Err(DumpError::HeadCount {
                    layer: li,
                    expected: self.num_heads,
                    got: layer.heads.len(),
                });
            }
            let cols = self.num_frames * layer.tokens_per_frame;
            let expected = self.question_tokens * cols;
            for (hi, head) in layer.heads.iter().enumerate() {
                if head.len() != expected {
                    return Err(DumpError::PayloadLength {
                        expected,
                        got: head.len(),
                    });
                }
                for row in 0..self.question_tokens {
                    let mut sum = 0.0f64;
                    for &w in &head[row * cols..(row + 1) * cols] {
                        if !(w.is_finite() && w >= 0.0) {
                            return Err(DumpError::NegativeWeight {
                                layer: li,
                                head: hi,
                                value: w,
                            });
                        }
                        sum += w as f64;
                    }
                    if sum > ROW_SUM_CAP {
                        return Err(DumpError::RowOverflow {
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

    /// Extract the question-to-video blocks of a recorded forward trace.
    /// The trace must have been run with attention recording on.
    pub fn from_trace<F: Scalar>(trace: &ForwardTrace<F>) -> Result<Self, DumpError> {
        let mut layers = Vec::with_capacity(trace.layers.len());
        let mut num_heads = 0;
        for layer in &trace.layers {
            let maps = layer
                .attention
                .as_ref()
                .ok_or(DumpError::TraceWithoutAttention)?;
            num_heads = maps.len();
            let video_rows = trace.num_frames * layer.tokens_per_frame;
            let heads = maps
                .iter()
                .map(|map| {
                    let mut block =
                        Vec::with_capacity(trace.question_tokens * video_rows);
                    for q in 0..trace.question_tokens {
                        let row = map.row(video_rows + q);
                        block.extend(row[..video_rows].iter().map(|w| w.as_f64() as f32));
                    }
                    block
                })
                .collect();
            layers.push(AttentionLayer {
                tokens_per_frame: layer.tokens_per_frame,
                heads,
            });
        }
        Self::new(trace.num_frames, trace.question_tokens, num_heads, layers)
    }

    /// Widen into a scoring source (windows become column slices).
    pub fn to_source(&self) -> FullMapSource {
        FullMapSource {
            num_frames: self.num_frames,
            question_rows: self.question_tokens,
            layers: self
                .layers
                .iter()
                .map(|l| SegmentLayerAttention {
                    tokens_per_frame: l.tokens_per_frame,
                    heads: l
                        .heads
                        .iter()
                        .map(|h| h.iter().map(|&w| w as f64).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DumpError> {
        self.validate()?;
        let mut header = Vec::new();
        header.extend_from_slice(&ATTENTION_MAGIC);
        for v in [
            FORMAT_VERSION,
            self.layers.len() as u32,
            self.num_heads as u32,
            self.num_frames as u32,
            self.question_tokens as u32,
            ELEM_F32,
        ] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.layers {
            header.extend_from_slice(&(layer.tokens_per_frame as u32).to_le_bytes());
        }
        pad_to_alignment(&mut header);

        let mut body = header;
        for layer in &self.layers {
            for head in &layer.heads {
                for &w in head {
                    body.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
        atomic_write(path, &body)?;
        atomic_write(&manifest_path(path), self.manifest().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DumpError> {
        let mut file = File::open(path)?;
        let magic = read_bytes::<4>(&mut file)?;
        if magic != ATTENTION_MAGIC {
            return Err(DumpError::BadMagic {
                expected: ATTENTION_MAGIC,
                got: magic,
            });
        }
        let version = read_u32(&mut file)?;
        if version != FORMAT_VERSION {
            return Err(DumpError::BadVersion(version));
        }
        let num_layers = read_u32(&mut file)? as usize;
        let num_heads = read_u32(&mut file)? as usize;
        let num_frames = read_u32(&mut file)? as usize;
        let question_tokens = read_u32(&mut file)? as usize;
        let elem = read_u32(&mut file)?;
        if elem != ELEM_F32 {
            return Err(DumpError::BadElemType(elem));
        }
        let mut tokens_per_frame = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            tokens_per_frame.push(read_u32(&mut file)? as usize);
        }
        skip_padding(&mut file, 28 + 4 * num_layers)?;

        let mut layers = Vec::with_capacity(num_layers);
        for &tpf in &tokens_per_frame {
            let block_len = question_tokens * num_frames * tpf;
            let heads = (0..num_heads)
                .map(|_| read_f32_block(&mut file, block_len))
                .collect::<Result<Vec<_>, _>>()?;
            layers.push(AttentionLayer {
                tokens_per_frame: tpf,
                heads,
            });
        }
        expect_eof(&mut file)?;
        Self::new(num_frames, question_tokens, num_heads, layers)
    }

    pub fn manifest(&self) -> String {
        let tpf: Vec<String> = self
            .layers
            .iter()
            .map(|l| l.tokens_per_frame.to_string())
            .collect();
        format!(
            "format=ATND\nversion={}\nnum_layers={}\nnum_heads={}\nnum_frames={}\n\
             question_tokens={}\nelem_type=f32\ntokens_per_frame={}\npayload_elements={}\n",
            FORMAT_VERSION,
            self.layers.len(),
            self.num_heads,
            self.num_frames,
            self.question_tokens,
            tpf.join(","),
            self.payload_elements()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDump {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl TokenDump {
    pub fn new(
        frames: usize,
        tokens_per_frame: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self, DumpError> {
        for (field, v) in [
            ("frames", frames),
            ("tokens_per_frame", tokens_per_frame),
            ("width", width),
        ] {
            if v == 0 {
                return Err(DumpError::ZeroField { field });
            }
        }
        let expected = frames * tokens_per_frame * width;
        if values.len() != expected {
            return Err(DumpError::PayloadLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            frames,
            tokens_per_frame,
            width,
            values,
        })
    }

    pub fn from_matrix(matrix: &FrameMatrix<f32>) -> Result<Self, DumpError> {
        Self::new(
            matrix.frames,
            matrix.slots,
            matrix.width,
            matrix.data().to_vec(),
        )
    }

    pub fn to_matrix(&self) -> FrameMatrix<f32> {
        FrameMatrix::new(
            self.frames,
            self.tokens_per_frame,
            self.width,
            self.values.clone(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<(), DumpError> {
        let mut body = Vec::with_capacity(24 + self.values.len() * 4);
        body.extend_from_slice(&TOKEN_MAGIC);
        for v in [
            FORMAT_VERSION,
            self.frames as u32,
            self.tokens_per_frame as u32,
            self.width as u32,
            ELEM_F32,
        ] {
            body.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(body.len() % 8, 0);
        for &v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        atomic_write(path, &body)?;
        atomic_write(&manifest_path(path), self.manifest().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DumpError> {
        let mut file = File::open(path)?;
        let magic = read_bytes::<4>(&mut file)?;
        if magic != TOKEN_MAGIC {
            return Err(DumpError::BadMagic {
                expected: TOKEN_MAGIC,
                got: magic,
            });
        }
        let version = read_u32(&mut file)?;
        if version != FORMAT_VERSION {
            return Err(DumpError::BadVersion(version));
        }
        let frames = read_u32(&mut file)? as usize;
        let tokens_per_frame = read_u32(&mut file)? as usize;
        let width = read_u32(&mut file)? as usize;
        let elem = read_u32(&mut file)?;
        if elem != ELEM_F32 {
            return Err(DumpError::BadElemType(elem));
        }
        let values = read_f32_block(&mut file, frames * tokens_per_frame * width)?;
        expect_eof(&mut file)?;
        Self::new(frames, tokens_per_frame, width, values)
    }

    pub fn manifest(&self) -> String {
        format!(
            "format=TOKD\nversion={}\nframes={}\ntokens_per_frame={}\nwidth={}\n\
             elem_type=f32\npayload_elements={}\n",
            FORMAT_VERSION,
            self.frames,
            self.tokens_per_frame,
            self.width,
            self.values.len()
        )
    }
}

/// Sidecar manifest path: `<file>.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".manifest");
    PathBuf::from(os)
}

fn pad_to_alignment(header: &mut Vec<u8>) {
    while !header.len().is_multiple_of(8) {
        header.push(0);
    }
}

/// Whole-file atomic write: temp file in place, fsync, rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), io::Error> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn read_bytes<const N: usize>(file: &mut File) -> Result<[u8; N], io::Error> {
    let mut buf = [0u8; N];
    file.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(file: &mut File) -> Result<u32, io::Error> {
    Ok(u32::from_le_bytes(read_bytes::<4>(file)?))
}

fn skip_padding(file: &mut File, header_len: usize) -> Result<(), io::Error> {
    let pad = (8 - header_len % 8) % 8;
    if pad > 0 {
        let mut buf = vec![0u8; pad];
        file.read_exact(&mut buf)?;
    }
    Ok(())
}

fn read_f32_block(file: &mut File, len: usize) -> Result<Vec<f32>, DumpError> {
    let mut bytes = vec![0u8; len * 4];
    file.read_exact(&mut bytes).map_err(|_| DumpError::PayloadLength {
        expected: len,
        got: 0,
    })?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_eof(file: &mut File) -> Result<(), DumpError> {
    let mut probe = [0u8; 1];
    match file.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(DumpError::TrailingBytes),
    }
}
