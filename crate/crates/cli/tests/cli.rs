//! End-to-end tests of the `vtcomp` binary: exit codes, file outputs, and
//! equivalence between the CLI pipeline and in-process calls.

use std::path::Path;
use std::process::{Command, Output};

use vtcomp_core::compress::FrameMatrix;
use vtcomp_core::config::RunConfig;
use vtcomp_core::dump::{AttentionDump, TokenDump};
use vtcomp_core::model::{forward, init_params, Parameters, ToyConfig};
use vtcomp_core::linalg::Mat;
use vtcomp_core::report::scores_csv;
use vtcomp_core::scoring::{score_video, select_top_k};

fn vtcomp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtcomp"))
        .args(args)
        .current_dir(dir)
        .env_remove("VTCOMP_CONFIG")
        .output()
        .expect("spawn vtcomp")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn schedule_prints_counts_and_average() {
    let dir = tempfile::tempdir().unwrap();
    let out = vtcomp(
        &["schedule", "--kind", "cosine", "--n1", "16", "--layers", "28"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "layer,tokens_per_frame");
    assert_eq!(rows[1], "0,16");
    assert_eq!(rows[29], "28,1");
    assert_eq!(rows.len(), 31); // header + 29 counts + average
    assert!(rows[30].starts_with("average_tokens_processed=9.25"));
}

#[test]
fn constant_schedule_stays_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = vtcomp(
        &["schedule", "--kind", "constant", "--n1", "16", "--layers", "28"],
        dir.path(),
    );
    assert!(out.status.success());
    for line in stdout(&out).lines().skip(1).take(29) {
        assert!(line.ends_with(",16"), "{line}");
    }
}

#[test]
fn zero_layers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vtcomp(&["schedule", "--layers", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vtcomp(&["schedule", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn compress_identity_plan_keeps_payload_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tokd");
    let output = dir.path().join("out.tokd");
    let dump = TokenDump::new(2, 16, 3, (0..96).map(|i| i as f32).collect()).unwrap();
    dump.write(&input).unwrap();
    let cfg = write_config(
        dir.path(),
        "schedule.kind=constant\nschedule.initial_tokens=16\nschedule.num_layers=28\n",
    );
    let out = vtcomp(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(TokenDump::read(&output).unwrap().values, dump.values);
}

#[test]
fn compress_cosine_suffix_keeps_last_slots() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tokd");
    let output = dir.path().join("out.tokd");
    // 2 frames x 16 slots x width 1; slot value = 100*frame + slot.
    let matrix = FrameMatrix::from_fn(2, 16, 1, |f, s, _| (100 * f + s) as f32);
    TokenDump::from_matrix(&matrix).unwrap().write(&input).unwrap();
    let out = vtcomp(
        &[
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let compressed = TokenDump::read(&output).unwrap();
    assert_eq!(compressed.tokens_per_frame, 1);
    assert_eq!(compressed.values, vec![15.0, 115.0]);
}

#[test]
fn compress_rejects_mismatched_dump() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tokd");
    TokenDump::new(2, 4, 1, vec![0.0; 8]).unwrap().write(&input).unwrap();
    let out = vtcomp(
        &[
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--output",
            dir.path().join("out.tokd").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4 tokens per frame"), "{err}");
    assert!(err.contains("16"), "{err}");
}

#[test]
fn compress_rejects_truncated_dump() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.tokd");
    TokenDump::new(2, 16, 1, vec![0.5; 32]).unwrap().write(&input).unwrap();
    let bytes = std::fs::read(&input).unwrap();
    std::fs::write(&input, &bytes[..bytes.len() - 8]).unwrap();
    let out = vtcomp(
        &[
            "compress",
            "--input",
            input.to_str().unwrap(),
            "--output",
            dir.path().join("out.tokd").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

fn toy_attention_dump() -> AttentionDump {
    let config = ToyConfig::small();
    let params: Parameters<f32> = init_params(&config, 5).unwrap();
    let video = FrameMatrix::from_fn(6, 4, config.model_width, |f, s, k| {
        ((f * 31 + s * 7 + k) % 13) as f32 * 0.11 - 0.6
    });
    let question = Mat::from_fn(3, config.model_width, |r, c| {
        ((r * 17 + c) % 11) as f32 * 0.1 - 0.5
    });
    let trace = forward(&params, &config, &video, &question, None, true).unwrap();
    AttentionDump::from_trace(&trace).unwrap()
}

#[test]
fn score_select_matches_in_process_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("maps.atnd");
    let dump = toy_attention_dump();
    dump.write(&input).unwrap();
    let scores_path = dir.path().join("scores.csv");
    let out = vtcomp(
        &[
            "score-select",
            "--input",
            input.to_str().unwrap(),
            "--k",
            "3",
            "--scores",
            scores_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = RunConfig::default();
    let table = score_video(&dump.to_source(), &cfg.segment, &cfg.chunk).unwrap();
    let selection = select_top_k(&table, 3).unwrap();
    let expected = scores_csv(&table, &selection);
    assert_eq!(std::fs::read_to_string(&scores_path).unwrap(), expected);
}

#[test]
fn global_flag_equals_segmented_for_short_videos() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("maps.atnd");
    toy_attention_dump().write(&input).unwrap();
    let seg = vtcomp(
        &["score-select", "--input", input.to_str().unwrap(), "--k", "2"],
        dir.path(),
    );
    let glob = vtcomp(
        &[
            "score-select",
            "--input",
            input.to_str().unwrap(),
            "--k",
            "2",
            "--global",
        ],
        dir.path(),
    );
    assert!(seg.status.success() && glob.status.success());
    // Identical tables; only the trailing summary line differs.
    let table = |o: &Output| {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with("selected"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(table(&seg), table(&glob));
}

#[test]
fn oversized_k_selects_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("maps.atnd");
    toy_attention_dump().write(&input).unwrap();
    let selection_path = dir.path().join("sel.csv");
    let out = vtcomp(
        &[
            "score-select",
            "--input",
            input.to_str().unwrap(),
            "--k",
            "100",
            "--selection",
            selection_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let lines = std::fs::read_to_string(&selection_path).unwrap();
    assert_eq!(lines.lines().count(), 7); // header + 6 frames
}

#[test]
fn flops_reports_standard_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("cost.csv");
    let out = vtcomp(
        &["flops", "--csv", csv_path.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("dims: layers=28 width=1536"));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 4); // header + 3 scenarios
    for (line, (lo, hi)) in csv.lines().skip(1).zip([(0.48, 0.58), (0.51, 0.61), (0.53, 0.63)]) {
        let reduction: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(reduction >= lo && reduction <= hi, "{line}");
    }
}

#[test]
fn flops_echoes_custom_dims() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dims.num_layers=4\ndims.model_width=64\ndims.num_attention_heads=4\n\
         dims.num_kv_heads=4\ndims.head_width=16\ndims.mlp_width=128\n\
         schedule.num_layers=4\n",
    );
    let out = vtcomp(
        &["--config", cfg.to_str().unwrap(), "flops", "--frames", "8"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("dims: layers=4 width=64"));
}

#[test]
fn bench_with_zero_seeds_emits_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let bias = vtcomp(&["bench", "bias", "--seeds", "0"], dir.path());
    assert!(bias.status.success());
    assert_eq!(stdout(&bias).lines().count(), 2); // header + summary
    let niah = vtcomp(&["bench", "niah", "--seeds", "0"], dir.path());
    assert!(niah.status.success());
    assert_eq!(stdout(&niah).lines().count(), 2);
}

#[test]
fn bench_output_matches_committed_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");

    let biased = dir.path().join("biased.csv");
    let out = vtcomp(
        &["bench", "bias", "--seeds", "5", "--out", biased.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&biased).unwrap(),
        std::fs::read(golden_dir.join("bias_biased.csv")).unwrap()
    );

    let unbiased = dir.path().join("unbiased.csv");
    let out = vtcomp(
        &[
            "bench", "bias", "--seeds", "5", "--end-bias", "0", "--signal", "6", "--out",
            unbiased.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&unbiased).unwrap(),
        std::fs::read(golden_dir.join("bias_unbiased.csv")).unwrap()
    );

    let niah = dir.path().join("niah.csv");
    let out = vtcomp(
        &[
            "bench",
            "niah",
            "--seeds",
            "3",
            "--total-frames",
            "256",
            "--hops",
            "2",
            "--signal",
            "12",
            "--out",
            niah.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&niah).unwrap(),
        std::fs::read(golden_dir.join("niah.csv")).unwrap()
    );
}

#[test]
fn bench_niah_recovers_at_high_signal() {
    let dir = tempfile::tempdir().unwrap();
    let out = vtcomp(
        &[
            "bench", "niah", "--seeds", "2", "--total-frames", "256", "--signal", "12",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("recovered 2/2"));
}

#[test]
fn config_file_errors_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bogus=1\n");
    let out = vtcomp(
        &["--config", cfg.to_str().unwrap(), "schedule"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}
