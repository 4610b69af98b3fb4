use std::path::Path;
use std::process::{Command, Output};

use survhte::config::RunConfig;
use survhte::io;
use survhte::runner;
use survhte_core::dgp::{self, DgpParams};
use survhte_core::pipeline::{self, Settings};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_survhte"));
    c.env("RUST_LOG", "error").env_remove("SURVHTE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        format!("replicates = 2\n[grid]\nn = [1000]\nrate = [0.2]\nm = [4]\n[importance]\nmethods = [\"elastic_net\", \"regression_forest\"]\nforest_trees = 100\n{extra}"),
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

fn simulate(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    let o = run(&["--out-dir", d, "--seed", "4", "simulate", "--n", "1000", "--rate", "0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    format!("{d}/cohort.csv")
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    let o = bin().env("SURVHTE_THREADS", "many").arg("exp1").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_problems_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nrate = [0.5]\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "exp1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grid.rate"), "{}", stderr(&o));

    std::fs::write(&bad, "unknown_key = 3\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "exp1"]).status.code(), Some(1));
    assert_eq!(run(&["--config", "/does/not/exist.toml", "exp1"]).status.code(), Some(1));
}

#[test]
fn cohort_errors_name_the_row_or_column() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let rows = tmp.path().join("rows.csv");
    std::fs::write(&rows, "id,time,event,treatment,x1\na,3,1,0,0.5\nb,2,2,1,0.1\n").unwrap();
    let o = run(&["--out-dir", out, "fit", "--cohort", rows.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let cols = tmp.path().join("cols.csv");
    std::fs::write(&cols, "id,time,treatment,x1\na,3,0,0.5\n").unwrap();
    let o = run(&["--out-dir", out, "fit", "--cohort", cols.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"event\""), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let o = run(&["--out-dir", out.to_str().unwrap(), "simulate", "--n", "1000"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn exported_cohort_gives_the_in_memory_estimates() {
    let params = DgpParams { n: 1000, target_rate: Some(0.2), ..DgpParams::default() };
    let (cohort, _) = dgp::generate_cohort(&params).unwrap();
    let mut buf = Vec::new();
    io::write_cohort_to(&mut buf, &cohort).unwrap();
    let back = io::read_cohort_from(buf.as_slice(), cohort.horizon()).unwrap();
    assert_eq!(back.subjects(), cohort.subjects());

    let settings = Settings::default();
    let a = pipeline::step1(&cohort, &settings, 3).unwrap().surface;
    let b = pipeline::step1(&back, &settings, 3).unwrap().surface;
    assert_eq!(a, b);
}

#[test]
fn surface_file_feeds_importance_and_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = simulate(tmp.path());
    let d = tmp.path().to_str().unwrap();
    let cfg = small_config(tmp.path(), "");
    let truth = format!("{d}/cohort.json");
    let surface = format!("{d}/surface.csv");
    for args in [
        vec!["--config", &cfg, "--out-dir", d, "fit", "--cohort", &cohort, "--truth", &truth],
        vec!["--config", &cfg, "--out-dir", d, "importance", "--cohort", &cohort, "--surface", &surface, "--truth", &truth],
        vec!["--config", &cfg, "--out-dir", d, "cate", "--cohort", &cohort, "--surface", &surface, "--feature", "x2", "--breaks", "0.3,0.6"],
    ] {
        let o = run(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{d}/fit.json")).unwrap()).unwrap();
    assert_eq!(fit["nrmse"].as_array().unwrap().len(), 12);
    let imp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{d}/importance.json")).unwrap()).unwrap();
    for m in imp["methods"].as_array().unwrap() {
        assert!(m["ppv"].is_number() || m["no_knee"] == true);
    }

    let cate = std::fs::read_to_string(format!("{d}/cate.csv")).unwrap();
    let mut lines = cate.lines();
    assert_eq!(lines.next(), Some("feature,stratum,t,estimate,lower,upper,h_q"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 12);
    let total: usize = rows.iter().filter(|r| r[2] == "1").map(|r| r[6].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 1000);
    for r in &rows {
        let (e, lo, hi): (f64, f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo <= e && e <= hi);
    }

    // bad surface reference: ids that are not in the cohort
    let other = tempfile::tempdir().unwrap();
    let o = run(&["--out-dir", other.path().to_str().unwrap(), "--seed", "5", "simulate", "--n", "1200"]);
    assert!(o.status.success());
    let other_cohort = format!("{}/cohort.csv", other.path().display());
    let o = run(&["--config", &cfg, "--out-dir", d, "target", "--cohort", &other_cohort, "--surface", &surface]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = bin().args(["--config", &cfg, "--out-dir", a.to_str().unwrap(), "--threads", "2", "exp1"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin().env("SURVHTE_THREADS", "1").args(["--config", &cfg, "--out-dir", b.to_str().unwrap(), "exp1"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["exp1_metrics.csv", "exp1_report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn experiment1_report_has_one_row_per_replicate_and_method() {
    let tmp = tempfile::tempdir().unwrap();
    let c = RunConfig::load(Path::new(&small_config(tmp.path(), ""))).unwrap();
    let r = runner::run_experiment1(&c).unwrap();
    assert_eq!(r.scenarios.len(), 1);
    assert_eq!((r.scenarios[0].completed, r.scenarios[0].failed), (2, 0));
    for m in ["elastic_net", "regression_forest"] {
        assert_eq!(r.rows.iter().filter(|x| x.metric == "ppv" && x.method == m).count(), 2);
        assert_eq!(r.rows.iter().filter(|x| x.metric == "hit" && x.method == m).count(), 2 * 10);
    }
    // aggregates are recomputed from the rows
    let agg = r.aggregates.iter().find(|a| a.metric == "tpr" && a.method == "elastic_net").unwrap();
    let v: Vec<f64> = r.rows.iter().filter(|x| x.metric == "tpr" && x.method == "elastic_net").map(|x| x.value).collect();
    assert_eq!(agg.n, 2);
    assert!((agg.mean.unwrap() - (v[0] + v[1]) / 2.0).abs() < 1e-15);
}

#[test]
fn single_stratum_reports_the_ate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::load(Path::new(&small_config(tmp.path(), ""))).unwrap();
    c.grid.m = vec![1];
    c.replicates = 1;
    let r = runner::run_experiment2(&c).unwrap();
    let curve = |m: &str| -> Vec<f64> { r.rows.iter().filter(|x| x.metric == m).map(|x| x.value).collect() };
    let (stratum, ate) = (curve("stratum_targeted"), curve("ate_targeted"));
    assert_eq!(stratum.len(), 12);
    assert_eq!(curve("stratum_bias_targeted").len(), 12);
    for (s, a) in stratum.iter().zip(&ate) {
        assert!((s - a).abs() < 1e-12);
    }
    assert_eq!(curve("stratum_h_q"), vec![1000.0]);
}

#[test]
fn a_failing_scenario_is_counted_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::load(Path::new(&small_config(tmp.path(), ""))).unwrap();
    c.replicates = 1;
    // x4 is binary, so only strata 1 and 2 exist
    c.stratum.feature = "x4".into();
    c.stratum.label = 3;
    let r = runner::run_experiment2(&c).unwrap();
    let s = &r.scenarios[0];
    assert_eq!((s.completed, s.failed), (0, 1));
    assert!(s.failures[0].error.contains('3'), "{}", s.failures[0].error);
    assert!(r.rows.is_empty() && r.aggregates.is_empty());
}

#[test]
fn pipeline_writes_stability_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = simulate(tmp.path());
    let cfg = small_config(tmp.path(), "[bootstrap]\nsamples = 3\nsize = 600\n");
    let out = tmp.path().join("p");
    let o = run(&["--config", &cfg, "--out-dir", out.to_str().unwrap(), "pipeline", "--cohort", &cohort]);
    assert!(o.status.success(), "{}", stderr(&o));
    let st: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    assert_eq!(st["completed"].as_u64().unwrap() + st["failed"].as_u64().unwrap(), 3);
    for (_, counts) in st["counts"].as_array().unwrap().iter().map(|p| (p[0].clone(), p[1].clone())) {
        assert!(counts.as_array().unwrap().iter().all(|c| c.as_u64().unwrap() <= 3));
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("pipeline.json")).unwrap()).unwrap();
    assert!(summary["config_hash"].as_str().unwrap().len() == 64);

    let o = run(&["--config", &small_config(tmp.path(), "[bootstrap]\nsamples = 3\nsize = 5000\n"), "--out-dir", out.to_str().unwrap(), "pipeline", "--cohort", &cohort]);
    assert_eq!(o.status.code(), Some(1));
}
