//! End-to-end binary tests: the full gen-world / gen-dataset / localize /
//! report / heatmap flow, plus byte-level determinism of localize output
//! across runs and worker counts.

use std::path::Path;
use std::process::Command;

fn floc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_floc"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn floc");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn gen_world(dir: &Path, archetype: &str, seed: u64) {
    run_ok(floc()
        .args(["gen-world", "--archetype", archetype, "--seed"])
        .arg(seed.to_string())
        .arg("--out-dir")
        .arg(dir.join("world")));
}

fn gen_dataset(dir: &Path, records: usize, seed: u64) {
    run_ok(floc()
        .args(["gen-dataset", "--records"])
        .arg(records.to_string())
        .args(["--drop-prob", "0.1", "--fp-prob", "0.02", "--seed"])
        .arg(seed.to_string())
        .arg("--map-dir")
        .arg(dir.join("world"))
        .arg("--out")
        .arg(dir.join("data.ndjson")));
}

#[test]
fn full_pipeline_and_byte_identical_localize() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_world(dir, "UG/DA", 1);
    for name in ["footprint.json", "map.pgm", "map.yaml"] {
        assert!(dir.join("world").join(name).exists(), "missing {name}");
    }
    gen_dataset(dir, 3, 2);

    // localize twice with 1 worker and twice with 8: all CSV bytes equal.
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "8", "1", "8"].iter().enumerate() {
        let csv = dir.join(format!("rows{i}.csv"));
        run_ok(floc()
            .args(["localize", "--modality", "fused", "--hypotheses", "20000", "--seed", "5"])
            .args(["--workers", workers])
            .arg("--dataset")
            .arg(dir.join("data.ndjson"))
            .arg("--map-dir")
            .arg(dir.join("world"))
            .arg("--out-csv")
            .arg(&csv)
            .arg("--out-summary")
            .arg(dir.join(format!("summary{i}.json"))));
        outputs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "worker count changed CSV bytes");
    assert_eq!(outputs[0], outputs[2], "repeat run changed CSV bytes");
    assert_eq!(outputs[0], outputs[3]);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary0.json")).unwrap()).unwrap();
    assert_eq!(summary["record_count"], 3);
    assert_eq!(summary["schema_version"], "summary.v1");

    // report prints a table over the rows.
    let report = run_ok(floc().arg("report").arg("--csv").arg(dir.join("rows0.csv")));
    assert!(report.contains("fused"), "report output: {report}");

    // heatmap writes a PGM with the grid's dimensions.
    run_ok(floc()
        .args(["heatmap", "--record", "0", "--modality", "vision"])
        .args(["--hypotheses", "20000", "--seed", "5"])
        .arg("--dataset")
        .arg(dir.join("data.ndjson"))
        .arg("--map-dir")
        .arg(dir.join("world"))
        .arg("--out")
        .arg(dir.join("hm.pgm")));
    let pgm = std::fs::read(dir.join("hm.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n400 400\n255\n"));
}

#[test]
fn detect_oracle_rewrites_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_world(dir, "DG/DA", 3);
    gen_dataset(dir, 2, 4);

    run_ok(floc()
        .args(["detect", "--detector", "oracle", "--seed", "9"])
        .args(["--confusion", "A=mystery"])
        .arg("--dataset")
        .arg(dir.join("data.ndjson"))
        .arg("--map-dir")
        .arg(dir.join("world"))
        .arg("--out")
        .arg(dir.join("detected.ndjson")));
    let text = std::fs::read_to_string(dir.join("detected.ndjson")).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["labels"].is_array());
        assert!(!record["labels"][0].to_string().contains("\"A\""));
    }
}

#[test]
fn failure_emits_machine_readable_error() {
    let output = floc()
        .args(["localize", "--dataset", "/no/such/file.ndjson"])
        .args(["--map-dir", "/no/such/dir"])
        .args(["--out-csv", "/tmp/unused.csv"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let doc: serde_json::Value = serde_json::from_str(stderr.trim())
        .unwrap_or_else(|_| panic!("stderr is not a JSON error document: {stderr}"));
    assert!(doc["error"].is_string());
    assert!(doc["kind"].is_string());
}

#[test]
fn rejects_unknown_archetype_and_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let out = floc()
        .args(["gen-world", "--archetype", "XX/YY"])
        .arg("--out-dir")
        .arg(tmp.path().join("w"))
        .output()
        .unwrap();
    assert!(!out.status.success());

    gen_world(tmp.path(), "UG/UA", 0);
    gen_dataset(tmp.path(), 1, 0);
    let out = floc()
        .args(["localize", "--modality", "psychic", "--hypotheses", "10"])
        .arg("--dataset")
        .arg(tmp.path().join("data.ndjson"))
        .arg("--map-dir")
        .arg(tmp.path().join("world"))
        .arg("--out-csv")
        .arg(tmp.path().join("r.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
