use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
design = \"hat\"
n = 12
sigma = 0.5
k = 16
eta = 0.2
seed = 3

[trainer]
max_steps = 400
log_every = 100
steady_window = 2
";

fn minstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minstab"))
        .args(args)
        .env_remove("MINSTAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn config_in(dir: &TempDir, text: &str) -> String {
    let p = dir.path().join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_artifacts_and_plots() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(&dir, SMALL);
    let out = dir.path().join("run");
    let o = minstab(&["train", "--config", &cfg, "--out", p(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "records.csv",
        "summary.json",
        "params.json",
        "certificates.json",
        "resolved_config.toml",
        "fit.svg",
        "learning_curves.svg",
        "basis.svg",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 5);
    let certs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("certificates.json")).unwrap()).unwrap();
    assert!(certs["tv_bound"]["pass"].as_bool().unwrap());
    assert!(certs["gn_bound"]["slack"].is_number());

    let echo = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(echo.contains("[trainer]") && echo.contains("[dataset]"));
    assert!(echo.contains("max_steps = 400"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(&dir, SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = minstab(&["train", "--config", &cfg, "--out", p(out), "--plot"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in [
        "records.csv",
        "summary.json",
        "params.json",
        "certificates.json",
        "resolved_config.toml",
        "fit.svg",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn overrides_reach_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(&dir, SMALL);
    let out = dir.path().join("run");
    let o = minstab(&[
        "train",
        "--config",
        &cfg,
        "--out",
        p(&out),
        "--set",
        "eta=0.01",
        "--set",
        "trainer.max_steps=100",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["eta"].as_f64(), Some(0.01));
    assert_eq!(summary["steps_run"].as_u64(), Some(100));
}

#[test]
fn verify_and_basis_read_stored_params() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(&dir, SMALL);
    let run = dir.path().join("run");
    assert_eq!(
        minstab(&["train", "--config", &cfg, "--out", p(&run)]).status.code(),
        Some(0)
    );
    let params = run.join("params.json");

    let v = dir.path().join("verify");
    let o = minstab(&["verify", "--config", &cfg, "--out", p(&v), "--params", p(&params)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let certs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(v.join("certificates.json")).unwrap()).unwrap();
    for key in ["tv_bound", "gn_bound", "hessian_norm"] {
        assert!(certs[key]["pass"].is_boolean(), "{key}");
        assert!(certs[key]["slack"].is_number(), "{key}");
    }

    let b = dir.path().join("basis");
    let o = minstab(&[
        "basis",
        "--config",
        &cfg,
        "--out",
        p(&b),
        "--params",
        p(&params),
        "--points",
        "50",
        "--plot",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(b.join("basis.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 1 + 16);
    assert_eq!(lines.count(), 50);
    assert!(b.join("basis.svg").is_file());
}

#[test]
fn report_summarizes_a_run() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(&dir, SMALL);
    let run = dir.path().join("run");
    assert_eq!(
        minstab(&["train", "--config", &cfg, "--out", p(&run)]).status.code(),
        Some(0)
    );
    let o = minstab(&["report", "--dir", p(&run), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("steps run: 400"));
    assert!(run.join("report.txt").is_file());
    assert!(run.join("learning_curves.svg").is_file());
}

#[test]
fn sweep_with_plot() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(
        &dir,
        &format!("{SMALL}\n[experiments]\nreps = 2\neta_grid = [0.2, 0.05]\nworkers = 2\n"),
    );
    let out = dir.path().join("sweep");
    let o = minstab(&["sweep", "--config", &cfg, "--out", p(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(out.join("medians.csv").is_file());
    assert!(out.join("sweep.svg").is_file());
}

#[test]
fn counterexample_and_interpolate() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(
        &dir,
        "design = \"counterexample\"\nx_max = 1.0\nk = 40\nn = 10\nreps = 2\nn_grid = [10, 20]\n",
    );
    let out = dir.path().join("cx");
    let o = minstab(&["counterexample", "--config", &cfg, "--out", p(&out), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("counterexample.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 4
    );
    assert!(out.join("counterexample.svg").is_file());

    let out = dir.path().join("interp");
    let o = minstab(&["interpolate", "--config", &cfg, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("interpolant.json")).unwrap()).unwrap();
    assert!(rep["residual_rms"].is_number());
    assert!(out.join("params.json").is_file());
}

#[test]
fn config_errors_name_the_key() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let cfg = config_in(&dir, "n = -5\n");
    let o = minstab(&["train", "--config", &cfg, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`n`"), "{}", stderr(&o));

    let cfg = config_in(&dir, "learning_rate = 0.1\n");
    let o = minstab(&["train", "--config", &cfg, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("learning_rate"));

    let o = minstab(&["train", "--out", p(&out), "--set", "eta=-1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("eta"));

    let missing = dir.path().join("nope.toml");
    let o = minstab(&["train", "--config", p(&missing), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn error_families_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");

    let o = minstab(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));

    // Diverging step size.
    let cfg = config_in(&dir, SMALL);
    let o = minstab(&["train", "--config", &cfg, "--out", p(&out), "--set", "eta=50"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let o = minstab(&["report", "--dir", p(&dir.path().join("absent"))]);
    assert_eq!(o.status.code(), Some(7));

    // No interval has weight above 10.
    let o = minstab(&[
        "rate",
        "--config",
        &cfg,
        "--out",
        p(&out),
        "--set",
        "n_grid=[8, 16]",
        "--set",
        "reps=1",
        "--set",
        "interval={ kind = \"auto\", c = 10.0 }",
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}
