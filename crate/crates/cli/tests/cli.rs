use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_spec(dir: &Path, strategy: &str) -> String {
    let spec = dir.join("spec.toml");
    fs::write(
        &spec,
        format!(
            "strategy = \"{strategy}\"\nrepetitions = 3\noutput_dir = \"{}\"\n\n[config]\ntau = 0.75\n\n[suite]\nkind = \"synthetic\"\nseeds = [1, 2]\n\n[suite.problem]\ndepth = 4\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    spec.display().to_string()
}

#[test]
fn run_prints_metrics_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = stdout(&ssdp(&["run", "--seed", "3", "--b", "3", "--trace", trace.to_str().unwrap()]));
    assert!(out.contains("nodes explored"));
    assert!(out.contains("correct          true"));
    let replay = stdout(&ssdp(&["replay", trace.to_str().unwrap()]));
    assert!(replay.contains("counters match"));
}

#[test]
fn experiment_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "ssdp");
    let out = stdout(&ssdp(&["experiment", "--config", &spec]));
    assert!(out.contains("summary written"));
    let out_dir = dir.path().join("out");
    let traces = fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl"))
        .count();
    assert_eq!(traces, 6);
    let csv = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    stdout(&ssdp(&["experiment", "--config", &spec, "--strategy", "parallel-no-merge"]));
    let table = stdout(&ssdp(&["diagnose", out_dir.to_str().unwrap()]));
    assert!(table.contains("ssdp"));
    assert!(table.contains("parallel_no_merge"));
    assert!(table.contains("reduction vs parallel_no_merge"));
}

#[test]
fn overrides_apply_and_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "beam");
    let out = stdout(&ssdp(&["run", "--config", &spec, "--problem", "2"]));
    assert!(out.contains("strategy         beam"));
    let bad = ssdp(&["run", "--config", &spec, "--b", "0"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("b must be"));
}

#[test]
fn sweep_reports_each_tau() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "ssdp");
    let out = stdout(&ssdp(&["sweep", "--config", &spec, "--repetitions", "1", "--taus", "0.5,0.75,1.0"]));
    assert_eq!(out.lines().count(), 4);
    assert!(dir.path().join("out").join("sweep.csv").exists());
}

#[test]
fn replay_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    stdout(&ssdp(&["run", "--trace", trace.to_str().unwrap()]));
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    fs::write(&trace, lines.join("\n")).unwrap();
    let out = ssdp(&["replay", trace.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}
