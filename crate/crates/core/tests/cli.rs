use std::fs;
use std::path::Path;
use std::process::Command;

use qutrit_bsm::cli::{self, CliError, Scenario, ScenarioConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qutrit-bsm"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn empty_config_resolves_to_reference_constants() {
    let cfg = ScenarioConfig::from_toml("").unwrap();
    assert_eq!(cfg.physics.d0_hz, 2.88e9);
    assert_eq!(cfg.physics.q_hz, 4.95e6);
    assert_eq!(cfg.physics.a_hz, 2.17e6);
    let p = cfg.physics.params();
    assert!((p.d0 - std::f64::consts::TAU * 2.88e9).abs() < 1e-3);
    let f = cfg.physics.frame();
    assert_eq!((f.omega_mw, f.omega_rf), (p.d0, p.q));
    assert_eq!(cfg.readout, Default::default());
}

#[test]
fn unknown_keys_are_named() {
    let err = ScenarioConfig::from_toml("[readout]\nlambda_brite = 2.0\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("lambda_brite"), "{msg}");
    let err = ScenarioConfig::from_toml("colour = 1\n").unwrap_err();
    assert!(err.to_string().contains("colour"));
    // toml positions point at the offending line
    let err = ScenarioConfig::from_toml("trials = 5\n[physics]\nd0_hz = \"x\"\n").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn inverted_count_rates_are_rejected() {
    let mut cfg = ScenarioConfig::from_toml("seed = 1\n[readout]\nlambda_dark = 2.0\nlambda_bright = 1.0\n").unwrap();
    cfg.scenario = Some(Scenario::SimulateBsm);
    assert!(matches!(cfg.validate(), Err(CliError::Config(m)) if m.contains("lambda_bright")));
}

#[test]
fn stochastic_scenarios_need_a_seed() {
    let mut cfg = ScenarioConfig::default();
    cfg.scenario = Some(Scenario::Tomography);
    assert!(matches!(cfg.validate(), Err(CliError::Config(m)) if m.contains("seed")));
    cfg.scenario = Some(Scenario::OptimizePulse);
    assert!(cfg.validate().is_ok());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "[readout]\nbogus = 1\n");
    let st = bin()
        .args(["simulate-bsm", "--seed", "1", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("a"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_CONFIG));

    let st = bin().args(["simulate-bsm", "--trials", "10", "--out"]).arg(tmp.path().join("b")).status().unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_CONFIG), "missing seed");

    let st = bin().args(["tomography", "--seed", "2"]).arg("--config").arg(write_config(tmp.path(), "[tomography]\nshots = 10\n")).arg("--out").arg(tmp.path().join("c")).status().unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_CONFIG), "too few shots");

    // a single iteration cannot reach 0.9999 from the two-tone seed
    let cfg = write_config(tmp.path(), "[grape]\nmax_iters = 1\nfid_goal = 0.9999\nstages = [\"cnot\"]\n");
    let out = tmp.path().join("d");
    let st = bin().arg("optimize-pulse").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_GOAL_NOT_MET));
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("goal_not_met"));

    let st = bin().args(["simulate-bsm", "--seed", "3", "--trials", "50", "--out"]).arg(tmp.path().join("e")).status().unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_OK));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let st = bin()
            .env("RAYON_NUM_THREADS", threads)
            .args(["simulate-bsm", "--seed", "7", "--trials", "3000", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        read_all(&out)
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let c = run("c", "3");
    assert_eq!(a.len(), 4);
    for other in [&b, &c] {
        assert_eq!(a.len(), other.len());
        for ((na, da), (nb, db)) in a.iter().zip(other.iter()) {
            assert_eq!(na, nb);
            assert!(da == db, "{na} differs");
        }
    }
    let outcomes = String::from_utf8(a.iter().find(|(n, _)| n == "outcomes.jsonl").unwrap().1.clone()).unwrap();
    assert_eq!(outcomes.lines().count(), 4 * 3000);
    let first: serde_json::Value = serde_json::from_str(outcomes.lines().next().unwrap()).unwrap();
    for key in ["trial", "prepared", "n1", "n2", "n3", "n4", "label"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn different_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::default();
    cfg.scenario = Some(Scenario::SimulateBsm);
    cfg.trials = 500;
    cfg.seed = Some(1);
    cli::run_scenario(&cfg, &tmp.path().join("a")).unwrap();
    cfg.seed = Some(2);
    cli::run_scenario(&cfg, &tmp.path().join("b")).unwrap();
    let a = fs::read(tmp.path().join("a/histograms.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/histograms.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn resolved_config_is_echoed_and_reloadable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::from_toml("[readout]\nn_c = 2\n").unwrap();
    cfg.scenario = Some(Scenario::SimulateBsm);
    cfg.seed = Some(4);
    cfg.trials = 100;
    cfg.write_outcomes = false;
    let rep = cli::run_scenario(&cfg, tmp.path()).unwrap();
    assert!(!rep.files.contains(&"outcomes.jsonl".to_string()));
    let echoed = ScenarioConfig::load(&tmp.path().join("config.resolved.toml")).unwrap();
    assert_eq!(echoed.readout.n_c, 2);
    assert_eq!(echoed.physics.mw_carrier_hz, Some(2.88e9));
    assert_eq!(echoed, ScenarioConfig { out: None, ..cfg.resolved() });
}

#[test]
fn sweep_false_positives_fall_with_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "[sweep]\nparameter = \"n_c\"\nvalues = [1, 2, 3, 4]\n");
    let out = tmp.path().join("s");
    let st = bin()
        .args(["sweep", "--seed", "11", "--trials", "4000", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let fp = header.iter().position(|&h| h == "dark_false_positive").unwrap();
    let fpo = header.iter().position(|&h| h == "dark_false_positive_oracle").unwrap();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert!(w[1][fp] <= w[0][fp]);
        assert!(w[1][fpo] < w[0][fpo]);
    }
}

#[test]
fn simulate_summary_carries_its_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::default();
    cfg.scenario = Some(Scenario::SimulateBsm);
    cfg.seed = Some(9);
    cfg.trials = 20_000;
    cfg.write_outcomes = false;
    cli::run_scenario(&cfg, tmp.path()).unwrap();
    let s: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    let preps = s["preparations"].as_array().unwrap();
    assert_eq!(preps.len(), 4);
    for p in preps {
        for l in p["labels"].as_array().unwrap() {
            let z = l["z"].as_f64().unwrap();
            assert!(z.abs() < 5.0, "{p}");
        }
    }
    let hist = fs::read_to_string(tmp.path().join("histograms.csv")).unwrap();
    assert!(hist.starts_with("prepared,measurement,counts,occurrences,frequency"));
}

#[test]
fn tomography_writes_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::from_toml("[readout]\np_leak = 0.0\n[tomography]\nshots = 2000\nstate = \"psi-\"\n").unwrap();
    cfg.scenario = Some(Scenario::Tomography);
    cfg.seed = Some(5);
    cli::run_scenario(&cfg, tmp.path()).unwrap();
    let s: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("tomography.json")).unwrap()).unwrap();
    assert_eq!(s["target"], "psi-");
    assert!((s["trace"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!(s["min_eigenvalue"].as_f64().unwrap() > -1e-12);
    assert!(s["fidelity"].as_f64().unwrap() > 0.9);
    let re = fs::read_to_string(tmp.path().join("rho_real.csv")).unwrap();
    assert_eq!(re.lines().count(), 5);
}

#[test]
fn optimize_pulse_writes_loadable_pulses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::from_toml("[grape]\nstages = [\"cnot\", \"map_pp\"]\n").unwrap();
    cfg.scenario = Some(Scenario::OptimizePulse);
    let rep = cli::run_scenario(&cfg, tmp.path()).unwrap();
    assert!(rep.files.contains(&"pulses/cnot.json".to_string()));
    let text = fs::read_to_string(tmp.path().join("pulses/cnot.json")).unwrap();
    let file: qutrit_bsm::circuits::StageFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.segments.len(), 1);
    let cs = file.segments[0].pulse.to_controls().unwrap();
    assert_eq!(cs.n_slices(), 100);
    let unknown = ScenarioConfig::from_toml("[grape]\nstages = [\"nope\"]\n").unwrap();
    let mut unknown = unknown;
    unknown.scenario = Some(Scenario::OptimizePulse);
    assert!(matches!(cli::run_scenario(&unknown, tmp.path()), Err(CliError::Config(_))));
}
