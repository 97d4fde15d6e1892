use std::path::Path;
use std::process::{Command, Output};

use halfjoin::dataset::{generate_synthetic, to_half, write_fvecs};
use halfjoin::harness::RunManifest;
use halfjoin::oracle::reference_mixed_scalar;
use halfjoin::ResultSet;

fn halfjoin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halfjoin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn metric<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in:\n{text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn join_writes_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("out.pairs");
    let manifest = dir.path().join("run.json");
    let o = halfjoin(&[
        "join", "--synthetic", "300x20", "--seed", "7", "--epsilon", "1.1",
        "--pairs-out", p(&pairs), "--manifest", p(&manifest),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);

    let m = RunManifest::read(&manifest).unwrap();
    let rs = ResultSet::read_pairs(&pairs, m.n, m.epsilon).unwrap();
    assert_eq!(metric(&text, "pairs"), rs.len().to_string());
    assert_eq!(m.pairs, rs.len());

    let ds = generate_synthetic(300, 20, 7, 0.0, 1.0).unwrap();
    assert_eq!(m.dataset_hash, ds.content_hash());
    let want = reference_mixed_scalar(&to_half(&ds, 128, 16).unwrap(), 1.1).unwrap();
    assert_eq!(rs, want);
}

#[test]
fn rerun_from_same_parameters_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let path = dir.path().join(name);
        let o = halfjoin(&[
            "join", "--synthetic", "257x33", "--epsilon", "1.5", "--workers", workers,
            "--pairs-out", p(&path),
        ]);
        assert!(o.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.pairs", "1"), run("b.pairs", "3"));
}

#[test]
fn json_format_is_an_array_of_metrics() {
    let o = halfjoin(&["join", "--synthetic", "40x4", "--epsilon", "0.5", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let entries = v.as_array().unwrap();
    assert!(entries.iter().any(|e| e["metric"] == "selectivity"));
}

#[test]
fn fvecs_input_and_accuracy_against_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.fvecs");
    write_fvecs(&data, &generate_synthetic(250, 12, 3, 0.0, 1.0).unwrap()).unwrap();
    let pairs = dir.path().join("r.pairs");
    let manifest = dir.path().join("r.json");
    let o = halfjoin(&[
        "join", "--fvecs", p(&data), "--epsilon", "0.6",
        "--pairs-out", p(&pairs), "--manifest", p(&manifest),
    ]);
    assert!(o.status.success());

    let hist = dir.path().join("hist.csv");
    let o = halfjoin(&[
        "accuracy", "--fvecs", p(&data), "--test-run", p(&manifest), "--histogram-csv", p(&hist),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let overlap: f64 = metric(&text, "overlap").parse().unwrap();
    assert!(overlap > 0.98 && overlap <= 1.0);
    let csv = std::fs::read_to_string(hist).unwrap();
    assert_eq!(csv.lines().next(), Some("bin_lo,bin_hi,count"));
    assert_eq!(csv.lines().count(), 62);

    let other = dir.path().join("other.fvecs");
    write_fvecs(&other, &generate_synthetic(250, 12, 4, 0.0, 1.0).unwrap()).unwrap();
    let o = halfjoin(&["accuracy", "--fvecs", p(&other), "--test-run", p(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn accuracy_with_calibrated_radius() {
    let o = halfjoin(&["accuracy", "--synthetic", "400x16", "--target-selectivity", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let s: f64 = metric(&text, "selectivity_fp64").parse().unwrap();
    assert!((s - 8.0).abs() < 2.0, "selectivity {s}");
    assert_eq!(metric(&text, "hist_counts").split(',').count(), 61);
}

#[test]
fn calibrate_reports_epsilon() {
    let o = halfjoin(&["calibrate", "--synthetic", "500x8", "--target-selectivity", "10", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let eps = v.as_array().unwrap().iter().find(|e| e["metric"] == "epsilon").unwrap()["value"]
        .as_f64()
        .unwrap();
    assert!(eps > 0.0);
}

#[test]
fn verify_layout_and_reuse() {
    let o = halfjoin(&["verify-layout"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("swizzled: 1 1 1 1; row-major: 8 8 8 8\n"));

    let o = halfjoin(&["reuse"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(metric(&text, "required_global_reuse"), "98");
    assert_eq!(metric(&text, "required_shared_reuse"), "35");
}

#[test]
fn bench_emits_csv_with_variants() {
    let o = halfjoin(&["bench", "--n", "256", "--d", "16,32", "--leave-one-out"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("variant,n,d,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 5);
    let pairs_col = header.split(',').position(|c| c == "pairs").unwrap();
    for cell in rows.chunks(5) {
        let counts: Vec<&str> = cell.iter().map(|r| r.split(',').nth(pairs_col).unwrap()).collect();
        assert!(counts.iter().all(|c| *c == counts[0]), "{cell:?}");
    }
}

#[test]
fn exit_codes_distinguish_error_classes() {
    // argument: bad radius is rejected before the missing file is opened
    let o = halfjoin(&["join", "--fvecs", "/nonexistent.fvecs", "--epsilon", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    // argument: clap usage error
    let o = halfjoin(&["join", "--synthetic", "10x2"]);
    assert_eq!(o.status.code(), Some(2));
    // argument: invalid tile configuration
    let o = halfjoin(&["join", "--synthetic", "10x2", "--epsilon", "1", "--warp-side", "24"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fvecs");
    std::fs::write(&bad, [4u8, 0, 0, 0, 1, 2]).unwrap();
    let o = halfjoin(&["join", "--fvecs", p(&bad), "--epsilon", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset"));

    // out of FP16 range is a format-class error
    let o = halfjoin(&["join", "--synthetic", "10x2", "--lo", "70000", "--hi", "80000", "--epsilon", "1"]);
    assert_eq!(o.status.code(), Some(3));

    // compute: calibration cannot reach an impossible selectivity
    let o = halfjoin(&["calibrate", "--synthetic", "20x2", "--target-selectivity", "1000"]);
    assert_eq!(o.status.code(), Some(4));

    let o = halfjoin(&["join", "--fvecs", "/nonexistent.fvecs", "--epsilon", "1"]);
    assert_eq!(o.status.code(), Some(5));
}
