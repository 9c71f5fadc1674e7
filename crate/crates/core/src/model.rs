//! A from-scratch decoder-only transformer at desk scale.
//!
//! Prefill only: the sequence is `[video tokens, question tokens]`, attention
//! is causal, and a [`DropPlan`] may compress the video block after each
//! layer (question tokens are never dropped). Surviving tokens keep the
//! positional identity assigned at the input — positions are encoded once,
//! additively, and travel with the tokens through compaction.
//!
//! Blocks are pre-norm: RMS normalization, multi-head attention, residual,
//! RMS normalization, GELU MLP, residual. A linear head reads the final
//! question token for regression training. Everything is generic over f32
//! (forward benchmarks) and f64 (gradient checks), and `loss_and_backward`
//! returns exact analytic gradients with compression treated as a fixed
//! index selection.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::compress::{CompressError, DropPlan, FrameMatrix};
use crate::linalg::{Mat, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model width {width} is not divisible by {heads} heads")]
    WidthHeads { width: usize, heads: usize },
    #[error("{0} must be >= 1")]
    ZeroDim(&'static str),
    #[error("video token width {got} does not match model width {expected}")]
    VideoWidth { expected: usize, got: usize },
    #[error("question token width {got} does not match model width {expected}")]
    QuestionWidth { expected: usize, got: usize },
    #[error("plan built for {plan_tokens} tokens per frame but video has {video_tokens}")]
    PlanTokens {
        plan_tokens: usize,
        video_tokens: usize,
    },
    #[error("plan covers {plan_layers} layers but the model has {model_layers}")]
    PlanLayers {
        plan_layers: usize,
        model_layers: usize,
    },
    #[error("sequence length {got} exceeds max_seq_len {max}")]
    SeqTooLong { got: usize, max: usize },
    #[error("regression head needs at least one question token")]
    NoQuestionToken,
    #[error("target length {got} does not match head_outputs {expected}")]
    TargetLen { expected: usize, got: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    BadTokenId { id: usize, vocab: usize },
    #[error("parameters carry no embedding table")]
    NoEmbedding,
    #[error(transparent)]
    Compress(#[from] CompressError),
}

/// Architecture of the toy model. Activation is GELU (tanh form),
/// normalization is pre-layer RMS with `norm_eps`, positions are sinusoidal
/// absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_width: usize,
    pub mlp_width: usize,
    pub max_seq_len: usize,
    pub head_outputs: usize,
    pub norm_eps: f64,
}

impl ToyConfig {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        model_width: usize,
        mlp_width: usize,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            num_layers,
            num_heads,
            model_width,
            mlp_width,
            max_seq_len: 4096,
            head_outputs: 4,
            norm_eps: 1e-6,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default dims for tests: big enough for nontrivial attention, small
    /// enough for sub-second runs.
    pub fn small() -> Self {
        Self::new(4, 2, 32, 64).unwrap()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_width", self.model_width),
            ("mlp_width", self.mlp_width),
            ("max_seq_len", self.max_seq_len),
            ("head_outputs", self.head_outputs),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroDim(name));
            }
        }
        if !self.model_width.is_multiple_of(self.num_heads) {
            return Err(ModelError::WidthHeads {
                width: self.model_width,
                heads: self.num_heads,
            });
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.model_width / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Mat<F>,
    pub wk: Mat<F>,
    pub wv: Mat<F>,
    pub wo: Mat<F>,
    pub w_up: Mat<F>,
    pub w_down: Mat<F>,
    pub gain1: Vec<F>,
    pub gain2: Vec<F>,
}

/// All trainable state: per-layer projections and MLP matrices, norm gains,
/// the regression head, and an optional token embedding table (absent when
/// inputs arrive pre-embedded).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub layers: Vec<LayerParams<F>>,
    pub head: Mat<F>,
    pub embedding: Option<Mat<F>>,
}

/// Deterministic initialization: every matrix entry is uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` where fan_in is the input dimension,
/// norm gains start at 1, draws in a fixed order from a seeded ChaCha8.
pub fn init_params<F: Scalar>(config: &ToyConfig, seed: u64) -> Result<Parameters<F>, ModelError> {
    init_params_impl(config, seed, None)
}

/// [`init_params`] plus an embedding table of `vocab` rows (fan_in is the
/// model width).
pub fn init_params_with_vocab<F: Scalar>(
    config: &ToyConfig,
    seed: u64,
    vocab: usize,
) -> Result<Parameters<F>, ModelError> {
    init_params_impl(config, seed, Some(vocab))
}

fn init_params_impl<F: Scalar>(
    config: &ToyConfig,
    seed: u64,
    vocab: Option<usize>,
) -> Result<Parameters<F>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.model_width;
    let mut draw = |rows: usize, cols: usize| -> Mat<F> {
        let scale = 1.0 / (rows as f64).sqrt();
        Mat::from_fn(rows, cols, |_, _| {
            F::from_f64(rng.random_range(-scale..=scale))
        })
    };
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            wq: draw(d, d),
            wk: draw(d, d),
            wv: draw(d, d),
            wo: draw(d, d),
            w_up: draw(d, config.mlp_width),
            w_down: draw(config.mlp_width, d),
            gain1: vec![F::one(); d],
            gain2: vec![F::one(); d],
        })
        .collect();
    let head = draw(d, config.head_outputs);
    let embedding = vocab.map(|v| draw_embedding(&mut rng, v, d));
    Ok(Parameters {
        layers,
        head,
        embedding,
    })
}

fn draw_embedding<F: Scalar>(rng: &mut ChaCha8Rng, vocab: usize, d: usize) -> Mat<F> {
    let scale = 1.0 / (d as f64).sqrt();
    Mat::from_fn(vocab, d, |_, _| {
        F::from_f64(rng.random_range(-scale..=scale))
    })
}

impl<F: Scalar> Parameters<F> {
    /// Zero-valued gradients (or parameters) with identical shapes.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                wq: Mat::zeros(l.wq.rows, l.wq.cols),
                wk: Mat::zeros(l.wk.rows, l.wk.cols),
                wv: Mat::zeros(l.wv.rows, l.wv.cols),
                wo: Mat::zeros(l.wo.rows, l.wo.cols),
                w_up: Mat::zeros(l.w_up.rows, l.w_up.cols),
                w_down: Mat::zeros(l.w_down.rows, l.w_down.cols),
                gain1: vec![F::zero(); l.gain1.len()],
                gain2: vec![F::zero(); l.gain2.len()],
            })
            .collect();
        Self {
            layers,
            head: Mat::zeros(self.head.rows, self.head.cols),
            embedding: self
                .embedding
                .as_ref()
                .map(|e| Mat::zeros(e.rows, e.cols)),
        }
    }

    fn for_each(&self, mut f: impl FnMut(F)) {
        for l in &self.layers {
            for m in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_up, &l.w_down] {
                m.data().iter().for_each(|&v| f(v));
            }
            l.gain1.iter().for_each(|&v| f(v));
            l.gain2.iter().for_each(|&v| f(v));
        }
        self.head.data().iter().for_each(|&v| f(v));
        if let Some(e) = &self.embedding {
            e.data().iter().for_each(|&v| f(v));
        }
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut F)) {
        for l in &mut self.layers {
            for m in [
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.w_up,
                &mut l.w_down,
            ] {
                m.data_mut().iter_mut().for_each(&mut f);
            }
            l.gain1.iter_mut().for_each(&mut f);
            l.gain2.iter_mut().for_each(&mut f);
        }
        self.head.data_mut().iter_mut().for_each(&mut f);
        if let Some(e) = &mut self.embedding {
            e.data_mut().iter_mut().for_each(&mut f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    /// Scalars in canonical order (layer matrices, gains, head, embedding).
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each(|v| out.push(v));
        out
    }

    pub fn set_from_flat(&mut self, flat: &[F]) {
        let mut it = flat.iter();
        self.for_each_mut(|v| *v = *it.next().expect("flat parameter vector too short"));
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    /// `self += scale * other`, used for plain gradient descent.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let other_flat = other.flatten();
        let mut it = other_flat.iter();
        self.for_each_mut(|v| *v += scale * *it.next().unwrap());
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|v| ok &= v.is_finite());
        ok
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                    gain1: l.gain1.iter().map(|v| G::from_f64(v.as_f64())).collect(),
                    gain2: l.gain2.iter().map(|v| G::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            head: self.head.cast(),
            embedding: self.embedding.as_ref().map(Mat::cast),
        }
    }
}

/// Per-layer record of the forward pass, taken at the layer's input.
#[derive(Debug, Clone)]
pub struct LayerTrace<F> {
    pub seq_len: usize,
    pub tokens_per_frame: usize,
    pub video_input: Mat<F>,
    pub question_input: Mat<F>,
    /// One `seq_len x seq_len` row-stochastic causal map per head, present
    /// when attention recording was requested.
    pub attention: Option<Vec<Mat<F>>>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub num_frames: usize,
    pub question_tokens: usize,
    pub layers: Vec<LayerTrace<F>>,
    pub final_video: Mat<F>,
    pub final_question: Mat<F>,
    /// Regression head applied to the last question token (absent when the
    /// sequence has no question tokens).
    pub head_output: Option<Vec<F>>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn final_tokens_per_frame(&self) -> usize {
        self.final_video.rows / self.num_frames
    }
}

struct LayerCache<F> {
    x_in: Mat<F>,
    inv_rms1: Vec<F>,
    n1: Mat<F>,
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    att: Vec<Mat<F>>,
    ctx: Mat<F>,
    x_mid: Mat<F>,
    inv_rms2: Vec<F>,
    n2: Mat<F>,
    h_pre: Mat<F>,
    h_act: Mat<F>,
}

/// Run the prefill forward pass. The question block rides behind the video
/// block and is never compressed; after layer `l` the plan's transition `l`
/// (if any) drops video slots per frame.
pub fn forward<F: Scalar>(
    params: &Parameters<F>,
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
    plan: Option<&DropPlan>,
    record_attention: bool,
) -> Result<ForwardTrace<F>, ModelError> {
    let (trace, _) = run_forward(params, config, video, question, plan, record_attention)?;
    Ok(trace)
}

fn validate_inputs<F: Scalar>(
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
    plan: Option<&DropPlan>,
) -> Result<(), ModelError> {
    config.validate()?;
    if video.width != config.model_width {
        return Err(ModelError::VideoWidth {
            expected: config.model_width,
            got: video.width,
        });
    }
    if question.rows > 0 && question.cols != config.model_width {
        return Err(ModelError::QuestionWidth {
            expected: config.model_width,
            got: question.cols,
        });
    }
    if let Some(plan) = plan {
        if plan.schedule.initial_tokens != video.slots {
            return Err(ModelError::PlanTokens {
                plan_tokens: plan.schedule.initial_tokens,
                video_tokens: video.slots,
            });
        }
        if plan.schedule.num_layers != config.num_layers {
            return Err(ModelError::PlanLayers {
                plan_layers: plan.schedule.num_layers,
                model_layers: config.num_layers,
            });
        }
    }
    let seq = video.frames * video.slots + question.rows;
    if seq > config.max_seq_len {
        return Err(ModelError::SeqTooLong {
            got: seq,
            max: config.max_seq_len,
        });
    }
    Ok(())
}

fn run_forward<F: Scalar>(
    params: &Parameters<F>,
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
    plan: Option<&DropPlan>,
    record_attention: bool,
) -> Result<(ForwardTrace<F>, Vec<LayerCache<F>>), ModelError> {
    validate_inputs(config, video, question, plan)?;
    let frames = video.frames;
    let nq = question.rows;

    let mut x = assemble_sequence(config, video, question);
    let mut tokens_per_frame = video.slots;
    let mut caches = Vec::with_capacity(config.num_layers);
    let mut layer_traces = Vec::with_capacity(config.num_layers);

    for layer in 0..config.num_layers {
        let video_rows = frames * tokens_per_frame;
        let (x_out, cache) = layer_forward(&params.layers[layer], config, &x);
        layer_traces.push(LayerTrace {
            seq_len: x.rows,
            tokens_per_frame,
            video_input: x.rows_range(0, video_rows),
            question_input: x.rows_range(video_rows, x.rows),
            attention: record_attention.then(|| cache.att.clone()),
        });
        x = match plan {
            Some(plan) => {
                let t = plan.transition(layer);
                tokens_per_frame = t.n_next;
                compress_rows(&x_out, frames, t.n_prev, &t.kept, nq)
            }
            None => x_out,
        };
        caches.push(cache);
    }

    let video_rows = frames * tokens_per_frame;
    let head_output = (nq > 0).then(|| {
        let last = x.row(x.rows - 1);
        (0..config.head_outputs)
            .map(|j| {
                let mut acc = F::zero();
                for (i, &xi) in last.iter().enumerate() {
                    acc += xi * params.head.get(i, j);
                }
                acc
            })
            .collect()
    });
    let trace = ForwardTrace {
        num_frames: frames,
        question_tokens: nq,
        layers: layer_traces,
        final_video: x.rows_range(0, video_rows),
        final_question: x.rows_range(video_rows, x.rows),
        head_output,
    };
    Ok((trace, caches))
}

/// Flatten video tokens frame-major, append question tokens, add sinusoidal
/// absolute position encodings. Positions 0..seq are assigned here, once.
fn assemble_sequence<F: Scalar>(
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
) -> Mat<F> {
    let video_rows = video.frames * video.slots;
    let seq = video_rows + question.rows;
    let d = config.model_width;
    let mut x = Mat::zeros(seq, d);
    for frame in 0..video.frames {
        for slot in 0..video.slots {
            let row = frame * video.slots + slot;
            x.row_mut(row).copy_from_slice(video.token(frame, slot));
        }
    }
    for r in 0..question.rows {
        x.row_mut(video_rows + r).copy_from_slice(question.row(r));
    }
    for pos in 0..seq {
        let row = x.row_mut(pos);
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let enc = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            row[j] += F::from_f64(enc);
        }
    }
    x
}

/// Keep `kept` slots of each frame's rows; question rows pass through.
fn compress_rows<F: Scalar>(
    x: &Mat<F>,
    frames: usize,
    n_prev: usize,
    kept: &[usize],
    nq: usize,
) -> Mat<F> {
    debug_assert_eq!(x.rows, frames * n_prev + nq);
    let mut out = Mat::zeros(frames * kept.len() + nq, x.cols);
    let mut row = 0;
    for frame in 0..frames {
        for &slot in kept {
            out.row_mut(row).copy_from_slice(x.row(frame * n_prev + slot));
            row += 1;
        }
    }
    for r in 0..nq {
        out.row_mut(row + r).copy_from_slice(x.row(frames * n_prev + r));
    }
    out
}

/// Adjoint of [`compress_rows`]: dropped rows receive zero gradient.
fn scatter_rows<F: Scalar>(
    dx_next: &Mat<F>,
    frames: usize,
    n_prev: usize,
    kept: &[usize],
    nq: usize,
) -> Mat<F> {
    let mut out = Mat::zeros(frames * n_prev + nq, dx_next.cols);
    let mut row = 0;
    for frame in 0..frames {
        for &slot in kept {
            out.row_mut(frame * n_prev + slot)
                .copy_from_slice(dx_next.row(row));
            row += 1;
        }
    }
    for r in 0..nq {
        out.row_mut(frames * n_prev + r)
            .copy_from_slice(dx_next.row(row + r));
    }
    out
}

fn rms_norm<F: Scalar>(x: &Mat<F>, gain: &[F], eps: f64) -> (Mat<F>, Vec<F>) {
    let d = x.cols;
    let mut out = Mat::zeros(x.rows, d);
    let mut inv_rms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mut ms = F::zero();
        for &v in row {
            ms += v * v;
        }
        ms = ms / F::from_f64(d as f64) + F::from_f64(eps);
        let inv = ms.sqrt().recip();
        inv_rms.push(inv);
        let out_row = out.row_mut(r);
        for j in 0..d {
            out_row[j] = row[j] * inv * gain[j];
        }
    }
    (out, inv_rms)
}

/// dx and dgain for y = gain * x / rms(x).
fn rms_norm_backward<F: Scalar>(
    x: &Mat<F>,
    gain: &[F],
    inv_rms: &[F],
    dy: &Mat<F>,
    dgain: &mut [F],
) -> Mat<F> {
    let d = x.cols;
    let mut dx = Mat::zeros(x.rows, d);
    for r in 0..x.rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let inv = inv_rms[r];
        let mut dot = F::zero();
        for j in 0..d {
            dot += dyr[j] * gain[j] * xr[j];
            dgain[j] += dyr[j] * xr[j] * inv;
        }
        let scale = dot * inv * inv * inv / F::from_f64(d as f64);
        let dxr = dx.row_mut(r);
        for j in 0..d {
            dxr[j] = dyr[j] * gain[j] * inv - xr[j] * scale;
        }
    }
    dx
}

const GELU_CUBIC: f64 = 0.044715;

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = F::from_f64(GELU_CUBIC);
    let u = c * (x + a * x * x * x);
    F::from_f64(0.5) * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = F::from_f64(GELU_CUBIC);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let half = F::from_f64(0.5);
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + F::from_f64(3.0) * a * x * x)
}

fn layer_forward<F: Scalar>(
    layer: &LayerParams<F>,
    config: &ToyConfig,
    x: &Mat<F>,
) -> (Mat<F>, LayerCache<F>) {
    let seq = x.rows;
    let dh = config.head_width();
    let inv_scale = F::from_f64(1.0 / (dh as f64).sqrt());

    let (n1, inv_rms1) = rms_norm(x, &layer.gain1, config.norm_eps);
    let q = n1.matmul(&layer.wq);
    let k = n1.matmul(&layer.wk);
    let v = n1.matmul(&layer.wv);

    let mut ctx = Mat::zeros(seq, config.model_width);
    let mut att = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let lo = h * dh;
        let hi = lo + dh;
        let qh = q.columns(lo, hi);
        let kh = k.columns(lo, hi);
        let vh = v.columns(lo, hi);
        // Causal softmax over j <= i, computed with max subtraction.
        let mut a = Mat::zeros(seq, seq);
        for i in 0..seq {
            let qi = qh.row(i);
            let mut logits = Vec::with_capacity(i + 1);
            let mut max = F::neg_infinity();
            for j in 0..=i {
                let kj = kh.row(j);
                let mut dot = F::zero();
                for (&a, &b) in qi.iter().zip(kj) {
                    dot += a * b;
                }
                dot *= inv_scale;
                if dot > max {
                    max = dot;
                }
                logits.push(dot);
            }
            let mut denom = F::zero();
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            let row = a.row_mut(i);
            for (j, &e) in logits.iter().enumerate() {
                row[j] = e / denom;
            }
        }
        // ctx_h = A * V_h, written into the head's column block.
        for i in 0..seq {
            let arow = a.row(i);
            let crow = ctx.row_mut(i);
            for j in 0..=i {
                let w = arow[j];
                let vrow = vh.row(j);
                for (c, &vv) in crow[lo..hi].iter_mut().zip(vrow) {
                    *c += w * vv;
                }
            }
        }
        att.push(a);
    }

    let attn_out = ctx.matmul(&layer.wo);
    let mut x_mid = x.clone();
    x_mid.add_assign(&attn_out);

    let (n2, inv_rms2) = rms_norm(&x_mid, &layer.gain2, config.norm_eps);
    let h_pre = n2.matmul(&layer.w_up);
    let mut h_act = h_pre.clone();
    for v in h_act.data_mut() {
        *v = gelu(*v);
    }
    let mlp_out = h_act.matmul(&layer.w_down);
    let mut x_out = x_mid.clone();
    x_out.add_assign(&mlp_out);

    let cache = LayerCache {
        x_in: x.clone(),
        inv_rms1,
        n1,
        q,
        k,
        v,
        att,
        ctx,
        x_mid,
        inv_rms2,
        n2,
        h_pre,
        h_act,
    };
    (x_out, cache)
}

fn layer_backward<F: Scalar>(
    layer: &LayerParams<F>,
    grads: &mut LayerParams<F>,
    config: &ToyConfig,
    cache: &LayerCache<F>,
    dx_out: &Mat<F>,
) -> Mat<F> {
    let seq = dx_out.rows;
    let dh = config.head_width();
    let inv_scale = F::from_f64(1.0 / (dh as f64).sqrt());

    // MLP branch: x_out = x_mid + gelu(n2 W_up) W_down.
    cache.h_act.at_matmul_into(dx_out, &mut grads.w_down);
    let mut dh_pre = dx_out.matmul_bt(&layer.w_down);
    for (g, &pre) in dh_pre.data_mut().iter_mut().zip(cache.h_pre.data()) {
        *g *= gelu_grad(pre);
    }
    cache.n2.at_matmul_into(&dh_pre, &mut grads.w_up);
    let dn2 = dh_pre.matmul_bt(&layer.w_up);
    let mut dx_mid = rms_norm_backward(
        &cache.x_mid,
        &layer.gain2,
        &cache.inv_rms2,
        &dn2,
        &mut grads.gain2,
    );
    dx_mid.add_assign(dx_out);

    // Attention branch: x_mid = x_in + (softmax(QK^T) V) W_o.
    cache.ctx.at_matmul_into(&dx_mid, &mut grads.wo);
    let dctx = dx_mid.matmul_bt(&layer.wo);
    let mut dq = Mat::zeros(seq, config.model_width);
    let mut dk = Mat::zeros(seq, config.model_width);
    let mut dv = Mat::zeros(seq, config.model_width);
    for h in 0..config.num_heads {
        let lo = h * dh;
        let hi = lo + dh;
        let a = &cache.att[h];
        let qh = cache.q.columns(lo, hi);
        let kh = cache.k.columns(lo, hi);
        let vh = cache.v.columns(lo, hi);
        let dctx_h = dctx.columns(lo, hi);

        // dA = dctx_h V_h^T, then softmax backward per causal row.
        let da = dctx_h.matmul_bt(&vh);
        let mut dlogits = Mat::zeros(seq, seq);
        for i in 0..seq {
            let arow = a.row(i);
            let darow = da.row(i);
            let mut dot = F::zero();
            for j in 0..=i {
                dot += darow[j] * arow[j];
            }
            let drow = dlogits.row_mut(i);
            for j in 0..=i {
                drow[j] = arow[j] * (darow[j] - dot);
            }
        }
        // dV_h += A^T dctx_h; dQ_h = dL K_h / scale; dK_h = dL^T Q_h / scale.
        for i in 0..seq {
            let arow = a.row(i);
            let dcrow = dctx_h.row(i);
            let dlrow = dlogits.row(i);
            let dqrow = &mut dq.row_mut(i)[lo..hi];
            for j in 0..=i {
                let kj = kh.row(j);
                let dl = dlrow[j] * inv_scale;
                for (dst, &kv) in dqrow.iter_mut().zip(kj) {
                    *dst += dl * kv;
                }
            }
            for j in 0..=i {
                let w = arow[j];
                let dl = dlrow[j] * inv_scale;
                let dvrow = &mut dv.row_mut(j)[lo..hi];
                for (dst, &dc) in dvrow.iter_mut().zip(dcrow) {
                    *dst += w * dc;
                }
                let qi = qh.row(i);
                let dkrow = &mut dk.row_mut(j)[lo..hi];
                for (dst, &qv) in dkrow.iter_mut().zip(qi) {
                    *dst += dl * qv;
                }
            }
        }
    }
    cache.n1.at_matmul_into(&dq, &mut grads.wq);
    cache.n1.at_matmul_into(&dk, &mut grads.wk);
    cache.n1.at_matmul_into(&dv, &mut grads.wv);
    let mut dn1 = dq.matmul_bt(&layer.wq);
    dn1.add_assign(&dk.matmul_bt(&layer.wk));
    dn1.add_assign(&dv.matmul_bt(&layer.wv));
    let mut dx_in = rms_norm_backward(
        &cache.x_in,
        &layer.gain1,
        &cache.inv_rms1,
        &dn1,
        &mut grads.gain1,
    );
    dx_in.add_assign(&dx_mid);
    dx_in
}

/// Mean-squared-error regression on the final question token's head output.
/// Returns the loss, exact gradients for every parameter, and the gradient
/// with respect to the assembled input sequence (for embedding training).
fn loss_and_backward_impl<F: Scalar>(
    params: &Parameters<F>,
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
    plan: Option<&DropPlan>,
    target: &[F],
) -> Result<(F, Parameters<F>, Mat<F>), ModelError> {
    if question.rows == 0 {
        return Err(ModelError::NoQuestionToken);
    }
    if target.len() != config.head_outputs {
        return Err(ModelError::TargetLen {
            expected: config.head_outputs,
            got: target.len(),
        });
    }
    let (trace, caches) = run_forward(params, config, video, question, plan, false)?;
    let y = trace.head_output.as_ref().expect("question block present");
    let inv_out = F::from_f64(1.0 / config.head_outputs as f64);
    let mut loss = F::zero();
    let mut dy = Vec::with_capacity(y.len());
    for (&yi, &ti) in y.iter().zip(target) {
        let diff = yi - ti;
        loss += diff * diff * inv_out;
        dy.push(F::from_f64(2.0) * diff * inv_out);
    }

    let mut grads = params.zeros_like();
    let frames = video.frames;
    let nq = question.rows;
    let final_rows = frames * trace.final_tokens_per_frame() + nq;

    // Head reads the last row of the final hidden state.
    let x_last = trace.final_question.row(nq - 1);
    let mut dx = Mat::zeros(final_rows, config.model_width);
    {
        let dlast = dx.row_mut(final_rows - 1);
        for i in 0..config.model_width {
            let mut acc = F::zero();
            for (j, &dyj) in dy.iter().enumerate() {
                grads.head.set(i, j, grads.head.get(i, j) + x_last[i] * dyj);
                acc += params.head.get(i, j) * dyj;
            }
            dlast[i] = acc;
        }
    }

    for layer in (0..config.num_layers).rev() {
        let cache = &caches[layer];
        let dx_out = match plan {
            Some(plan) => {
                let t = plan.transition(layer);
                scatter_rows(&dx, frames, t.n_prev, &t.kept, nq)
            }
            None => dx,
        };
        dx = layer_backward(
            &params.layers[layer],
            &mut grads.layers[layer],
            config,
            cache,
            &dx_out,
        );
    }
    Ok((loss, grads, dx))
}

pub fn loss_and_backward<F: Scalar>(
    params: &Parameters<F>,
    config: &ToyConfig,
    video: &FrameMatrix<F>,
    question: &Mat<F>,
    plan: Option<&DropPlan>,
    target: &[F],
) -> Result<(F, Parameters<F>), ModelError> {
    let (loss, grads, _) = loss_and_backward_impl(params, config, video, question, plan, target)?;
    Ok((loss, grads))
}

/// Token-id inputs for the embedding-table pathway.
#[derive(Debug, Clone)]
pub struct IdInputs {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub video_ids: Vec<usize>,
    pub question_ids: Vec<usize>,
}

/// Embed ids through the parameter table.
pub fn embed_ids<F: Scalar>(
    params: &Parameters<F>,
    ids: &[usize],
) -> Result<Mat<F>, ModelError> {
    let table = params.embedding.as_ref().ok_or(ModelError::NoEmbedding)?;
    let mut out = Mat::zeros(ids.len(), table.cols);
    for (r, &id) in ids.iter().enumerate() {
        if id >= table.rows {
            return Err(ModelError::BadTokenId {
                id,
                vocab: table.rows,
            });
        }
        out.row_mut(r).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// [`loss_and_backward`] over token ids; the returned gradients include the
/// embedding table (rows of unused ids stay zero).
pub fn loss_and_backward_ids<F: Scalar>(
    params: &Parameters<F>,
    config: &ToyConfig,
    ids: &IdInputs,
    plan: Option<&DropPlan>,
    target: &[F],
) -> Result<(F, Parameters<F>), ModelError> {
    assert_eq!(
        ids.video_ids.len(),
        ids.frames * ids.tokens_per_frame,
        "video id count"
    );
    let video_mat = embed_ids(params, &ids.video_ids)?;
    let video = FrameMatrix::new(
        ids.frames,
        ids.tokens_per_frame,
        config.model_width,
        video_mat.data().to_vec(),
    );
    let question = embed_ids(params, &ids.question_ids)?;
    let (loss, mut grads, dx0) =
        loss_and_backward_impl(params, config, &video, &question, plan, target)?;
    let table = grads.embedding.as_mut().ok_or(ModelError::NoEmbedding)?;
    let all_ids = ids.video_ids.iter().chain(&ids.question_ids);
    for (r, &id) in all_ids.enumerate() {
        let src = dx0.row(r);
        let dst = table.row_mut(id);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    Ok((loss, grads))
}

/// A fixed synthetic regression instance.
#[derive(Debug, Clone)]
pub struct TrainTask<F> {
    pub video: FrameMatrix<F>,
    pub question: Mat<F>,
    pub target: Vec<F>,
}

impl<F: Scalar> TrainTask<F> {
    /// One random input/target pair to memorize, deterministic per seed.
    pub fn memorization(
        config: &ToyConfig,
        frames: usize,
        tokens_per_frame: usize,
        question_tokens: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::from_f64(rng.random_range(-1.0..=1.0))).collect()
        };
        let video = FrameMatrix::new(
            frames,
            tokens_per_frame,
            config.model_width,
            draw(frames * tokens_per_frame * config.model_width),
        );
        let question = Mat::from_vec(
            question_tokens,
            config.model_width,
            draw(question_tokens * config.model_width),
        );
        let target = draw(config.head_outputs);
        Self {
            video,
            question,
            target,
        }
    }
}

/// Plain gradient descent on one task. Returns the per-step losses;
/// deterministic for fixed inputs. Fails naming the step if the loss goes
/// non-finite.
pub fn train_steps<F: Scalar>(
    params: &mut Parameters<F>,
    config: &ToyConfig,
    plan: Option<&DropPlan>,
    task: &TrainTask<F>,
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, ModelError> {
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = loss_and_backward(
            params,
            config,
            &task.video,
            &task.question,
            plan,
            &task.target,
        )?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step });
        }
        params.add_scaled(&grads, F::from_f64(-learning_rate));
        debug_assert!(params.all_finite());
        curve.push(loss.as_f64());
    }
    Ok(curve)
}
