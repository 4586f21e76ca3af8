//! End-to-end CLI checks over the built binary.

use std::path::Path;
use std::process::Command;

fn cogloop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cogloop"))
}

#[test]
fn run_subcommand_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let output = cogloop()
        .args([
            "run",
            "--method",
            "all",
            "--runs",
            "5",
            "--seed",
            "0",
            "--backend",
            "scripted",
            "--latency",
            "simulated",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("notlearning"));
    assert!(stdout.contains("interactions_mean=4.00"));
    for artifact in ["runs.csv", "summary.csv", "report.md"] {
        assert!(out.join(artifact).exists(), "{artifact} missing");
    }
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 5);
    assert!(out.join("traces").read_dir().unwrap().count() >= 15);
}

#[test]
fn single_method_run_with_warm_memory() {
    let dir = tempfile::tempdir().unwrap();
    let first_out = dir.path().join("first");
    // First run persists learned memory.
    let status = cogloop()
        .args(["run", "--method", "learning", "--runs", "2", "--seed", "0", "--out"])
        .arg(&first_out)
        .status()
        .unwrap();
    assert!(status.success());
    let memory_path = first_out.join("learning.memory.jsonl");
    assert!(memory_path.exists());

    // Second run warm-loads it.
    let second_out = dir.path().join("second");
    let output = cogloop()
        .args(["run", "--method", "learning", "--runs", "2", "--seed", "50", "--warm-memory"])
        .arg(&memory_path)
        .arg("--out")
        .arg(&second_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("interactions_mean=3.00"), "stdout: {stdout}");
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let out_from_file = dir.path().join("from-file");
    let config_path = dir.path().join("cogloop.toml");
    std::fs::write(
        &config_path,
        format!(
            "method = \"notlearning\"\nruns = 2\nseed = 7\nlatency = \"simulated\"\nout = {:?}\n\n[backend]\nkind = \"scripted\"\n",
            out_from_file
        ),
    )
    .unwrap();

    let output = cogloop()
        .args(["run", "--config"])
        .arg(&config_path)
        .args(["--runs", "3"])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let runs = std::fs::read_to_string(out_from_file.join("runs.csv")).unwrap();
    // Flag overrode runs (3, not 2); file set the method and seed.
    assert_eq!(runs.lines().count(), 1 + 3);
    assert!(runs.lines().nth(1).unwrap().starts_with("notlearning,7,"));
}

#[test]
fn zero_runs_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = cogloop()
        .args(["run", "--runs", "0", "--out"])
        .arg(dir.path().join("nothing"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("run count"), "stderr: {stderr}");
    assert!(!dir.path().join("nothing").exists(), "nothing executed");
}

#[test]
fn report_is_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let read_all = |out: &Path| {
        ["runs.csv", "summary.csv", "report.md"]
            .map(|name| std::fs::read(out.join(name)).unwrap())
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = cogloop()
            .args(["run", "--method", "all", "--runs", "4", "--seed", "3", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = read_all(&out_a);
    let mut b = read_all(&out_b);
    // Trace paths embed the output directory; normalize before comparing.
    for bytes in &mut b {
        let text = String::from_utf8(bytes.clone()).unwrap();
        *bytes = text.replace("/b/", "/a/").into_bytes();
    }
    assert_eq!(a, b);
}
