//! End-to-end checks of the `minehaul` binary: exit codes, artifact layout
//! and the demonstration-to-evaluation pipeline on a reduced model.

use std::path::Path;
use std::process::{Command, Output};

/// Runs the binary in `dir` with ambient `MINEHAUL_*` overrides stripped.
fn minehaul(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_minehaul"));
    for (k, _) in std::env::vars() {
        if k.starts_with("MINEHAUL_") {
            cmd.env_remove(&k);
        }
    }
    cmd.current_dir(dir).args(args).output().expect("spawn minehaul")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_exit(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: stdout={} stderr={}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_CONFIG: &str = "\
[model]
scan_hidden = [16]
meas_hidden = [16]
trunk_hidden = [16]
branch_hidden = [8]
speed_hidden = [8]

[train]
epochs = 1
batch_size = 64
chunk_size = 16
";

#[test]
fn gradcheck_reports_every_term_and_exits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = minehaul(dir.path(), &["gradcheck", "--probes", "8"]);
    assert_exit(&out, 0, "gradcheck");
    let text = stdout(&out);
    for name in [
        "boosted_mae",
        "evidential_nll",
        "evidence_regularizer",
        "evidence_regularizer_alt",
        "task_weighting",
        "speed_term",
        "frame_objective",
        "layer_relu",
        "layer_tanh",
        "layer_sigmoid",
        "layer_softplus",
        "full_network",
    ] {
        assert!(text.contains(name), "missing check `{name}` in:\n{text}");
    }
    assert!(!text.contains("FAIL"), "unexpected failure in:\n{text}");
}

#[test]
fn map_gen_emits_maps_and_a_replayable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = minehaul(dir.path(), &["map-gen", "--out", "maps"]);
    assert_exit(&out, 0, "map-gen");
    for f in ["loop.json", "network.json", "manifest.json", "config.toml"] {
        assert!(dir.path().join("maps").join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("maps/manifest.json")).unwrap())
            .unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(manifest["seed"].is_u64());
}

#[test]
fn bad_inputs_map_onto_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag: usage error.
    let out = minehaul(dir.path(), &["--bogus"]);
    assert_exit(&out, 2, "unknown flag");
    // Missing demonstration directory: input error.
    let out = minehaul(dir.path(), &["filter", "--demos", "nowhere"]);
    assert_exit(&out, 3, "missing demos");
    // Unparseable fusion mode: config error, caught before any file access.
    let out = minehaul(dir.path(), &["eval", "--mode", "sideways"]);
    assert_exit(&out, 2, "bad mode");
    // Absent checkpoint: input error.
    let out = minehaul(dir.path(), &["eval", "--checkpoint", "no.ckpt"]);
    assert_exit(&out, 3, "missing checkpoint");
}

#[test]
fn pipeline_runs_from_demos_to_eval_on_a_reduced_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    let cfg = ["--config", "tiny.toml"];

    // Short recordings still clear the filter's minimum fitting sample.
    let out = minehaul(dir.path(), &[&cfg[..], &["collect", "--out", "demos", "--limit-s", "30"]].concat());
    assert_exit(&out, 0, "collect");
    assert!(dir.path().join("demos/manifest.json").is_file());

    let out = minehaul(dir.path(), &[&cfg[..], &["filter", "--demos", "demos", "--out", "filtered"]].concat());
    assert_exit(&out, 0, "filter");
    let text = stdout(&out);
    assert!(text.contains("removed"), "no removal summary in:\n{text}");
    assert!(dir.path().join("filtered/filter_report.json").is_file());

    let out = minehaul(dir.path(), &[&cfg[..], &["train", "--demos", "filtered", "--out", "train"]].concat());
    assert_exit(&out, 0, "train");
    assert!(dir.path().join("train/final.ckpt").is_file());
    assert!(dir.path().join("train/dataset/manifest.json").is_file());

    // The checkpoint remembers its configuration: evaluating under the
    // default config is refused, `--force` overrides, the matching config
    // is accepted outright.
    let eval = ["eval", "--checkpoint", "train/final.ckpt", "--duration", "5", "--out", "eval"];
    let out = minehaul(dir.path(), &eval);
    assert_exit(&out, 2, "mismatched eval");
    let out = minehaul(dir.path(), &[&eval[..], &["--force"]].concat());
    assert_exit(&out, 0, "forced eval");
    let out = minehaul(dir.path(), &[&cfg[..], &eval[..]].concat());
    assert_exit(&out, 0, "matched eval");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["mode"], "uniform");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("eval/trajectory.csv").is_file());
    assert!(dir.path().join("eval/events.jsonl").is_file());
}
