//! The `featadmm` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn featadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featadmm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_is_reproducible_and_noise_free_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = featadmm(&["synth", "--n", "10", "--m", "500", "--pi", "2", "--noise", "0.1", "--seed", "1", "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["block_001.csv", "block_010.csv", "b.csv", "truth.csv", "meta.txt"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let fp = featadmm::FeaturePartitionF64::load(&a).unwrap();
    assert_eq!((fp.num_agents(), fp.num_samples(), fp.sizes()), (10, 500, vec![2; 10]));

    let exact = dir.path().join("exact");
    let res = featadmm(&["synth", "--n", "3", "--m", "20", "--sizes", "1,2,3", "--noise", "0", "--seed", "4", "--out", exact.to_str().unwrap()]);
    assert!(res.status.success());
    let fp = featadmm::FeaturePartitionF64::load(&exact).unwrap();
    let residual = fp.assemble().dot(&fp.truth().unwrap()) - fp.response();
    assert!(residual.iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn run_from_config_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    std::fs::write(&config, "n = 4\nm = 25\npi = 2\ntopology = ring\nreg = l2_reg:eta=0.01\nmax_rounds = 60\ntrials = 1\n").unwrap();
    let out = dir.path().join("missing/out");
    let res = featadmm(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read(&out.join("trial_000.csv")), read(&out.join("averaged.csv")));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3\n"));

    let again = dir.path().join("again");
    let res = featadmm(&["run", "--config", out.join("manifest.txt").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(res.status.success());
    for f in ["trial_000.csv", "averaged.csv", "summary.csv"] {
        assert_eq!(read(&out.join(f)), read(&again.join(f)), "{f}");
    }
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    std::fs::write(&config, "n = 3\nm = 10\nmax_rounds = 500\nreg = l2_reg:eta=0.1\ntopology = line\n").unwrap();
    let out = dir.path().join("o");
    let res = featadmm(&[
        "run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--trials", "2", "--max-rounds", "7", "--rho", "0.5", "--bcd-sweeps", "3",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    for line in ["trials = 2", "max_rounds = 7", "rho = 0.5", "bcd_sweeps = 3"] {
        assert!(manifest.lines().any(|l| l == line), "{line}");
    }
    let trial = std::fs::read_to_string(out.join("trial_001.csv")).unwrap();
    assert_eq!(trial.lines().count(), 8);
}

#[test]
fn oracle_reports_its_method() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lasso.cfg");
    std::fs::write(&config, "n = 4\nm = 30\nreg = l1_reg:eta=0.001\n").unwrap();
    let out = dir.path().join("o");
    let res = featadmm(&["oracle", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let summary = std::fs::read_to_string(out.join("oracle_000/summary.csv")).unwrap();
    assert!(summary.starts_with("objective,method,iterations\n"));
    assert!(summary.contains(",proximal-gradient,"));
    assert!(out.join("oracle_000/mu_star.csv").exists());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "n = 4\n\nreg = l1_reg:eta=oops\n").unwrap();
    let res = featadmm(&["oracle", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));

    let res = featadmm(&["reproduce", "elastic-net-x", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());

    let res = featadmm(&["run", "--config", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert!(!res.status.success());
}

#[test]
fn reproduce_writes_one_csv_per_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("topo");
    let res = featadmm(&["reproduce", "elastic-net-topo", "--out", out.to_str().unwrap(), "--trials", "1", "--max-rounds", "5"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for curve in ["line", "ring", "star", "complete"] {
        let csv = std::fs::read_to_string(out.join(format!("{curve}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 6, "{curve}");
        assert!(out.join(curve).join("manifest.txt").exists());
    }
    let central = std::fs::read_to_string(out.join("centralized.csv")).unwrap();
    assert_eq!(central.lines().count(), 5);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    std::fs::write(&config, "n = 3\nm = 12\nreg = l2_reg:eta=0.1\nmax_rounds = 20\ntrials = 3\ntopology = complete\n").unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let res = Command::new(env!("CARGO_BIN_EXE_featadmm"))
            .args(["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("FEATADMM_THREADS", threads)
            .output()
            .unwrap();
        assert!(res.status.success());
        outputs.push(read(&out.join("averaged.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);

    let res = Command::new(env!("CARGO_BIN_EXE_featadmm"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", dir.path().join("z").to_str().unwrap()])
        .env("FEATADMM_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!res.status.success());
}
