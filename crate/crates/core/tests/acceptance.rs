//! Acceptance suite: every release criterion as one test with its tolerance
//! pinned in code. Each test prints a `PASS` line; run with
//! `cargo test -p vtcomp-core --test acceptance -- --nocapture` to see them.
//!
//! Oracles used here (finite differences, exhaustive enumeration, the
//! spreadsheet FLOP summation, golden files) are re-derived in this file,
//! independent of the library's implementation paths.

use vtcomp_core::compress::{apply_plan, DropPlan, DropStrategy, FrameMatrix};
use vtcomp_core::cost::{multi_report, ModelDims};
use vtcomp_core::harness::{
    bias_experiment, biased_fixture, fixture_segment_config, niah_recovery_rate,
    unbiased_fixture, BiasOracleConfig,
};
use vtcomp_core::linalg::Mat;
use vtcomp_core::model::{
    forward, init_params, loss_and_backward, Parameters, ToyConfig,
};
use vtcomp_core::report::{bias_csv, niah_csv, BiasRecord, NiahRecord};
use vtcomp_core::harness::{niah_run, random_instance};
use vtcomp_core::schedule::{build_stepwise_matching, CompressionSchedule};
use vtcomp_core::scoring::{
    chunk_plan, score_video, segment_windows, ChunkConfig, FullMapSource, ScoringLayers,
    SegmentConfig, SegmentLayerAttention,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn passed(name: &str, detail: &str) {
    println!("PASS {name}: {detail}");
}

#[test]
fn schedule_endpoints_and_monotonicity() {
    for n1 in 1..=64usize {
        for layers in 1..=64usize {
            let s = CompressionSchedule::cosine(n1, layers).unwrap();
            assert_eq!(s.tokens_at(0), n1, "start at n1={n1} L={layers}");
            assert_eq!(s.tokens_at(layers), 1, "end at n1={n1} L={layers}");
            for layer in 0..layers {
                let (a, b) = (s.tokens_at(layer), s.tokens_at(layer + 1));
                assert!(b <= a, "increase at n1={n1} L={layers} layer={layer}");
                assert!((1..=n1).contains(&a));
            }
        }
    }
    passed(
        "schedule endpoints/monotonicity",
        "all 4096 (n1, layers) pairs in [1,64]^2",
    );
}

#[test]
fn cosine_spot_values() {
    let s = CompressionSchedule::cosine(16, 28).unwrap();
    let got: Vec<usize> = [0, 7, 14, 21, 28].iter().map(|&l| s.tokens_at(l)).collect();
    assert_eq!(got, vec![16, 14, 9, 4, 1]);
    passed("cosine spot values", "layers 0/7/14/21/28 -> 16/14/9/4/1");
}

#[test]
fn drop_plan_reconstruction() {
    for strategy in [DropStrategy::Suffix, DropStrategy::Uniform] {
        let plan = DropPlan::build(
            CompressionSchedule::cosine(16, 28).unwrap(),
            strategy,
        );
        for layer in 0..plan.num_transitions() {
            let t = plan.transition(layer);
            let mut seen = vec![false; t.n_prev];
            for &slot in &t.kept {
                assert!(slot < t.n_prev);
                assert!(!seen[slot], "duplicate kept slot");
                seen[slot] = true;
            }
            let dropped: Vec<usize> = (0..t.n_prev).filter(|&s| !seen[s]).collect();
            assert_eq!(t.kept.len() + dropped.len(), t.n_prev);
            if strategy == DropStrategy::Suffix {
                assert_eq!(*t.kept.iter().min().unwrap(), t.n_prev - t.n_next);
            }
        }
    }
    passed(
        "drop-plan reconstruction",
        "kept + dropped partition every transition; suffix min(kept) = n_prev - n_next",
    );
}

#[test]
fn composition_provenance() {
    let plan = DropPlan::build(
        CompressionSchedule::cosine(16, 28).unwrap(),
        DropStrategy::Suffix,
    );
    // Tag every token with its original slot index and run the whole plan.
    let tagged = FrameMatrix::from_fn(4, 16, 1, |_, slot, _| slot);
    let out = apply_plan(&tagged, &plan).unwrap();
    assert_eq!(out.slots, 1);
    for frame in 0..4 {
        assert_eq!(out.token(frame, 0), &[15]);
    }
    passed(
        "composition provenance",
        "full suffix plan leaves exactly slot 15 per frame",
    );
}

#[test]
fn toy_gradient_check() {
    let config = ToyConfig {
        num_layers: 2,
        num_heads: 2,
        model_width: 8,
        mlp_width: 16,
        max_seq_len: 64,
        head_outputs: 4,
        norm_eps: 1e-6,
    };
    let plan = DropPlan::build(
        CompressionSchedule::cosine(4, 2).unwrap(),
        DropStrategy::Suffix,
    );
    let params: Parameters<f64> = init_params(&config, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let video = FrameMatrix::from_fn(3, 4, config.model_width, |_, _, _| {
        rng.random_range(-1.0..=1.0)
    });
    let question = Mat::from_fn(2, config.model_width, |_, _| rng.random_range(-1.0..=1.0));
    let target = vec![0.3, -0.1, 0.7, 0.2];

    let (_, grads) =
        loss_and_backward(&params, &config, &video, &question, Some(&plan), &target).unwrap();
    let analytic = grads.flatten();

    // Central finite differences, the independent oracle.
    let step = 1e-4;
    let base = params.flatten();
    let mut probe = params.clone();
    let mut max_rel = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        probe.set_from_flat(&plus);
        let (lp, _) =
            loss_and_backward(&probe, &config, &video, &question, Some(&plan), &target).unwrap();
        let mut minus = base.clone();
        minus[i] -= step;
        probe.set_from_flat(&minus);
        let (lm, _) =
            loss_and_backward(&probe, &config, &video, &question, Some(&plan), &target).unwrap();
        let numeric = (lp - lm) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    passed(
        "toy gradient check",
        &format!("{} parameters, max relative error {max_rel:.2e} <= 1e-4", base.len()),
    );
}

#[test]
fn attention_normalization_and_causality() {
    for seed in 0..20u64 {
        let config = ToyConfig::small();
        let params: Parameters<f32> = init_params(&config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let video = FrameMatrix::from_fn(3, 4, config.model_width, |_, _, _| {
            rng.random_range(-1.0f32..=1.0)
        });
        let question =
            Mat::from_fn(2, config.model_width, |_, _| rng.random_range(-1.0f32..=1.0));
        let plan = DropPlan::build(
            CompressionSchedule::cosine(4, config.num_layers).unwrap(),
            DropStrategy::Suffix,
        );
        let trace = forward(&params, &config, &video, &question, Some(&plan), true).unwrap();
        for layer in &trace.layers {
            for map in layer.attention.as_ref().unwrap() {
                for i in 0..map.rows {
                    let row = map.row(i);
                    let sum: f32 = row[..=i].iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-5, "seed {seed} row sum {sum}");
                    assert!(row[i + 1..].iter().all(|&w| w == 0.0), "acausal weight");
                }
            }
        }
    }
    passed(
        "attention normalization/causality",
        "20 seeds: rows sum to 1 +/- 1e-5, zero above the diagonal",
    );
}

/// Independent enumeration of the segmented pipeline, written from the
/// definitions: chunks, windows within chunks, flat means over the frame's
/// clip terms, then a mean over observations.
fn enumerate_scores(source: &FullMapSource, seg: &SegmentConfig, chunk: &ChunkConfig) -> Vec<f64> {
    let total = source.num_frames;
    let mut per_frame: Vec<Vec<f64>> = vec![Vec::new(); total];

    let mut chunks = Vec::new();
    if total <= chunk.chunk_frames {
        chunks.push((0usize, total));
    } else {
        let stride = chunk.chunk_frames / chunk.n_repeat;
        let mut s = 0;
        while s + chunk.chunk_frames < total {
            chunks.push((s, chunk.chunk_frames));
            s += stride;
        }
        chunks.push((total - chunk.chunk_frames, chunk.chunk_frames));
    }

    for (chunk_start, chunk_len) in chunks {
        let mut windows = Vec::new();
        if chunk_len <= seg.window_frames {
            windows.push((0usize, chunk_len));
        } else {
            let last = chunk_len - seg.window_frames;
            let mut s = 0;
            while s <= last {
                windows.push((s, seg.window_frames));
                s += seg.stride_frames;
            }
            if !last.is_multiple_of(seg.stride_frames) {
                windows.push((last, seg.window_frames));
            }
        }
        for (rel, len) in windows {
            let win_start = chunk_start + rel;
            for frame in win_start..win_start + len {
                let clip = frame / seg.clip_size;
                let mut sum = 0.0;
                let mut count = 0usize;
                for other in win_start..win_start + len {
                    if other / seg.clip_size != clip {
                        continue;
                    }
                    for layer in &source.layers {
                        let cols = total * layer.tokens_per_frame;
                        for head in &layer.heads {
                            for row in 0..source.question_rows {
                                for t in 0..layer.tokens_per_frame {
                                    sum += head[row * cols + other * layer.tokens_per_frame + t];
                                    count += 1;
                                }
                            }
                        }
                    }
                }
                per_frame[frame].push(sum / count as f64);
            }
        }
    }
    per_frame
        .iter()
        .map(|obs| obs.iter().sum::<f64>() / obs.len() as f64)
        .collect()
}

#[test]
fn scoring_matches_enumeration_oracle() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50u64 {
        let frames = rng.random_range(1..=16);
        let tpf = rng.random_range(1..=3);
        let rows = rng.random_range(1..=3);
        let num_layers = rng.random_range(1..=3);
        let heads = rng.random_range(1..=2);
        let mut gen = ChaCha8Rng::seed_from_u64(7000 + case);
        let layers = (0..num_layers)
            .map(|_| {
                let cols = frames * tpf;
                let heads = (0..heads)
                    .map(|_| {
                        let mut block = Vec::new();
                        for _ in 0..rows {
                            let raw: Vec<f64> =
                                (0..cols).map(|_| gen.random_range(0.0..1.0)).collect();
                            let sum: f64 = raw.iter().sum();
                            block.extend(raw.iter().map(|v| v / sum));
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
        let source = FullMapSource {
            num_frames: frames,
            question_rows: rows,
            layers,
        };
        let window_frames = rng.random_range(1..=8);
        let seg = SegmentConfig {
            window_frames,
            stride_frames: rng.random_range(1..=window_frames),
            clip_size: rng.random_range(1..=4),
            scoring_layers: ScoringLayers::All,
        };
        let n_repeat = rng.random_range(1..=2);
        let chunk = ChunkConfig {
            chunk_frames: n_repeat * rng.random_range(1..=6),
            n_repeat,
            n_selected_frames: 1,
        };
        let table = score_video(&source, &seg, &chunk).unwrap();
        let oracle = enumerate_scores(&source, &seg, &chunk);
        for (frame, (&got, want)) in table.scores.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() < 1e-12,
                "case {case} frame {frame}: {got} vs {want}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "oracle comparison took {elapsed:?}");
    passed(
        "scoring oracle equivalence",
        &format!("50 random inputs within 1e-12 in {elapsed:?}"),
    );
}

#[test]
fn segment_and_chunk_enumeration() {
    let seg = SegmentConfig {
        window_frames: 64,
        stride_frames: 32,
        clip_size: 8,
        scoring_layers: ScoringLayers::All,
    };
    let starts = |t: usize| -> Vec<usize> {
        segment_windows(t, &seg).iter().map(|w| w.0).collect()
    };
    assert_eq!(starts(128), vec![0, 32, 64]);
    assert_eq!(starts(100), vec![0, 32, 36]);

    let chunk = ChunkConfig {
        chunk_frames: 512,
        n_repeat: 2,
        n_selected_frames: 1,
    };
    let chunks = chunk_plan(1024, &chunk);
    assert_eq!(
        chunks.iter().map(|c| c.0).collect::<Vec<_>>(),
        vec![0, 256, 512]
    );
    let coverage = |frame: usize| {
        chunks
            .iter()
            .filter(|(s, l)| (*s..s + l).contains(&frame))
            .count()
    };
    for (range, expected) in [
        (0..256, 1usize),
        (256..512, 2),
        (512..768, 2),
        (768..1024, 1),
    ] {
        for frame in range {
            assert_eq!(coverage(frame), expected, "frame {frame}");
        }
    }
    passed(
        "segment/chunk enumeration",
        "window starts [0,32,64]/[0,32,36]; chunk starts [0,256,512] with 1/2/2/1 coverage",
    );
}

#[test]
fn position_bias_fixtures_and_goldens() {
    let seg = fixture_segment_config();

    let biased = bias_experiment(&biased_fixture(), &seg).unwrap();
    assert_eq!(biased.segmented_rank, 1);
    assert!(biased.global_rank > 1);

    let unbiased = bias_experiment(&unbiased_fixture(), &seg).unwrap();
    assert_eq!(unbiased.segmented_rank, 1);
    assert_eq!(unbiased.global_rank, 1);

    // Byte-for-byte golden comparisons over seeds 0..4 of each fixture.
    let rows = |base: BiasOracleConfig| -> String {
        let records: Vec<BiasRecord> = (0..5)
            .map(|seed| {
                let cfg = BiasOracleConfig { seed, ..base };
                BiasRecord {
                    outcome: bias_experiment(&cfg, &seg).unwrap(),
                    cfg,
                }
            })
            .collect();
        bias_csv(&records)
    };
    assert_eq!(
        rows(biased_fixture()),
        include_str!("golden/bias_biased.csv"),
        "biased golden drifted"
    );
    assert_eq!(
        rows(unbiased_fixture()),
        include_str!("golden/bias_unbiased.csv"),
        "unbiased golden drifted"
    );
    passed(
        "position-bias experiment",
        &format!(
            "biased: segmented rank 1 vs global rank {}; unbiased: both rank 1; goldens byte-identical",
            biased.global_rank
        ),
    );
}

#[test]
fn niah_recovery_properties() {
    let start = std::time::Instant::now();
    let chunk = ChunkConfig {
        chunk_frames: 512,
        n_repeat: 8,
        n_selected_frames: 1,
    };
    let rates: Vec<f64> = [0.0, 1.0, 12.0]
        .iter()
        .map(|&signal| niah_recovery_rate(768, signal, &chunk, 100).unwrap())
        .collect();
    assert_eq!(rates[2], 1.0, "high-signal rate {}", rates[2]);
    assert!(rates[0] <= 0.10, "zero-signal rate {} above chance band", rates[0]);
    assert!(rates[0] <= rates[1] && rates[1] <= rates[2], "{rates:?}");

    // Golden NIAH report (2 hops, 3 seeds, 256 frames).
    let records: Vec<NiahRecord> = (0..3)
        .map(|seed| {
            let instance = random_instance(256, 2, 12.0, seed);
            NiahRecord {
                outcome: niah_run(&instance, &chunk).unwrap(),
                instance,
            }
        })
        .collect();
    assert_eq!(
        niah_csv(&records),
        include_str!("golden/niah.csv"),
        "needle golden drifted"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "needle suite took {elapsed:?}");
    passed(
        "needle recovery",
        &format!(
            "rates {:?} over signals [0, 1, 12] with 100 seeds each in {elapsed:?}",
            rates
        ),
    );
}

#[test]
fn cost_model_matches_reported_efficiency() {
    let start = std::time::Instant::now();
    let schedule = CompressionSchedule::cosine(16, 28).unwrap();
    let dims = ModelDims::qwen2_1_5b();
    let report = multi_report(&[1024, 2048, 4096], 863, &schedule, &dims).unwrap();
    let expected = [(0.53, 43.0), (0.56, 132.0), (0.58, 448.0)];
    for (row, (reduction, tflops)) in report.rows.iter().zip(expected) {
        assert!(
            (row.reduction - reduction).abs() <= 0.05,
            "frames {}: reduction {:.4} vs {reduction} +/- 0.05",
            row.frames,
            row.reduction
        );
        let baseline_tf = row.baseline_flops as f64 / 1e12;
        assert!(
            (baseline_tf / tflops - 1.0).abs() <= 0.20,
            "frames {}: baseline {baseline_tf:.1} TFLOPs vs {tflops} +/- 20%",
            row.frames
        );
    }
    assert!(report.rows[0].reduction < report.rows[1].reduction);
    assert!(report.rows[1].reduction < report.rows[2].reduction);
    let elapsed = start.elapsed();
    assert!(elapsed.as_millis() < 1000, "cost model took {elapsed:?}");
    let summary: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{}f: {:.0}TF -{:.1}%",
                r.frames,
                r.baseline_flops as f64 / 1e12,
                r.reduction * 100.0
            )
        })
        .collect();
    passed("cost model vs reported efficiency", &summary.join(", "));
}

#[test]
fn stepwise_matching_tolerance() {
    let cosine = CompressionSchedule::cosine(16, 28).unwrap();
    let target = cosine.average_tokens_processed();
    for stages in [2usize, 3, 4] {
        let stepped = build_stepwise_matching(16, 28, stages, target).unwrap();
        // Recompute the average from scratch on the returned schedule.
        let recomputed: f64 = (0..28).map(|l| stepped.tokens_at(l) as f64).sum::<f64>() / 28.0;
        assert!(
            (recomputed - target).abs() <= 0.5,
            "{stages} stages: |{recomputed} - {target}| > 0.5"
        );
        assert_eq!(recomputed, stepped.average_tokens_processed());
    }
    passed(
        "step-wise matching",
        &format!("2/3/4-stage plateaus all within 0.5 of the cosine average {target}"),
    );
}
