use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-forward"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn figure_saddles() {
    let expected = [("fig1", 0.0, 0.2, 0.1), ("fig2", 0.8, 0.3, 0.12), ("fig3", -0.5, 0.1, 0.1171875)];
    for (preset, p, b, g) in expected {
        let v = json(&["saddle-g", "--preset", preset, "--json"]);
        assert!((v["p_star"][0].as_f64().unwrap() - p).abs() < 1e-12, "{preset}");
        assert!((v["b_star"][0].as_f64().unwrap() - b).abs() < 1e-12, "{preset}");
        assert!((v["sigma_star"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-12, "{preset}");
        assert!((v["G"].as_f64().unwrap() - g).abs() < 1e-12, "{preset}");
        let n = json(&["saddle-g", "--preset", preset, "--numeric", "--json"]);
        assert!((n["G"].as_f64().unwrap() - g).abs() < 1e-8, "{preset}");
    }
}

#[test]
fn reproduce_figures_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reproduce-figures", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());

    let fig1 = dir.path().join("fig1");
    let paths = read(&fig1, "paths.csv");
    assert_eq!(paths.lines().next().unwrap(), "t,X_path1,X_path2,amount_path1,amount_path2");
    let (t, x1, x2) = (column(&paths, "t"), column(&paths, "X_path1"), column(&paths, "X_path2"));
    for k in 0..t.len() {
        let exact = 50.0 * (0.2 * t[k]).exp();
        assert!((x1[k] - exact).abs() <= 1e-12 * exact);
        assert_eq!(x1[k], x2[k]);
    }
    assert!(column(&paths, "amount_path1").iter().all(|&a| a == 0.0));
    assert!((t.last().unwrap() - 3.0).abs() < 1e-12);

    let fig2 = dir.path().join("fig2");
    let paths = read(&fig2, "paths.csv");
    let (x1, x2, a1) = (column(&paths, "X_path1"), column(&paths, "X_path2"), column(&paths, "amount_path1"));
    assert_ne!(x1, x2);
    for (x, a) in x1.iter().zip(&a1) {
        assert!((a - 0.8 * x).abs() <= 1e-12 * x);
    }

    let fig3 = dir.path().join("fig3");
    let pref = read(&fig3, "preference.csv");
    let (t, u) = (column(&pref, "t"), column(&pref, "U_x0"));
    for (t, u) in t.iter().zip(&u) {
        let exact = 2.0 * 50f64.sqrt() * (-0.1171875 * t).exp();
        assert!((u - exact).abs() <= 1e-12 * exact);
    }

    let summary: serde_json::Value = serde_json::from_str(&read(&fig2, "summary.json")).unwrap();
    assert_eq!(summary["scenario"], "fig2");
    assert_eq!(summary["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let d = dir.path().to_str().unwrap();
        assert!(run(&["reproduce-figures", "--out", d]).status.success());
        assert!(run(&["--preset", "drift_only_demo", "pipeline-drift-only", "--out", &format!("{d}/pipe")]).status.success());
        assert!(run(&["--preset", "fig2", "verify", "--n-paths", "500", "--dt", "0.01", "--out", &format!("{d}/ver")])
            .status
            .success());
    }
    let files = [
        "fig1/saddle.json",
        "fig1/preference.csv",
        "fig1/paths.csv",
        "fig1/summary.json",
        "fig2/paths.csv",
        "fig2/summary.json",
        "fig3/summary.json",
        "pipe/bsde.csv",
        "pipe/preference.csv",
        "pipe/verify.json",
        "ver/verify.json",
        "ver/r_paths.csv",
    ];
    for f in files {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn locked_fields_are_refused() {
    let out = run(&["saddle-g", "--preset", "fig2", "--set", "market.r=0.3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locks `market`"));
    let out = run(&["saddle-g", "--preset", "fig1", "--set", "preferences.delta=0.4"]);
    assert_eq!(out.status.code(), Some(1));
    // unlocked fields and no-op overrides are fine
    assert!(run(&["saddle-g", "--preset", "fig1", "--set", "simulation.seed=5"]).status.success());
    assert!(run(&["saddle-g", "--preset", "fig1", "--set", "preferences.x0=50"]).status.success());
    assert!(run(&["saddle-g", "--preset", "custom", "--set", "market.r=0.3"]).status.success());
}

#[test]
fn config_file_and_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
preset = "custom"
[market]
r = 0.05
b_lo = [0.06]
b_hi = [0.1]
cov_vertices = [[[0.04]]]
[preferences]
delta = 0.4
"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let v = json(&["saddle-g", "--config", c, "--json"]);
    // Merton: p* = (b − r)/((1 − δ)σ²)
    assert!((v["p_star"][0].as_f64().unwrap() - 0.01 / (0.6 * 0.04)).abs() < 1e-12);

    let out = run(&["saddle-g", "--config", c, "--set", "saddle.tol=1e-9", "--dump-effective-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("preset = \"custom\"") && text.contains("delta = 0.4"));
    // the dump is itself a valid config
    let again = dir.path().join("again.toml");
    std::fs::write(&again, &text).unwrap();
    let w = json(&["saddle-g", "--config", again.to_str().unwrap(), "--json"]);
    assert_eq!(v["p_star"], w["p_star"]);

    std::fs::write(&cfg, "[market]\nrr = 1.0\n").unwrap();
    assert_eq!(run(&["saddle-g", "--config", c]).status.code(), Some(1));
    assert_eq!(run(&["saddle-g", "--config", "/nonexistent/run.toml"]).status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "ode",
        "--preset",
        "custom",
        "--set",
        r#"preferences.lambda={kind="exponential", alpha=4.0, beta=0.5}"#,
        "--set",
        "market.b_lo=[0.2]",
        "--out",
        d,
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("condition 1 violated at t = 0.0645"), "{err}");

    let out = run(&[
        "pipeline-drift-only",
        "--preset",
        "drift_only_demo",
        "--set",
        r#"preferences.lambda={kind="exponential", alpha=5.0, beta=0.5}"#,
        "--out",
        d,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("condition 2 violated at t ="));

    let out = run(&["saddle-g", "--preset", "custom", "--numeric", "--set", "saddle.max_iter=1", "--set", "market.d=1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = run(&["ode", "--preset", "fig1", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    assert_eq!(run(&["saddle-g", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_drift_only_demo() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&["--preset", "drift_only_demo", "pipeline-drift-only", "--out", dir.path().to_str().unwrap(), "--json"]);
    let y0 = v["bsde"]["y0"].as_f64().unwrap();
    assert!((y0 - 1.2 * (1.0 - (-5.0f64).exp())).abs() < 1e-8);
    assert_eq!(v["verify"]["drift_zero_passes"], true);
    assert_eq!(v["verify"]["sign_check_passed"], true);
    let bsde = read(dir.path(), "bsde.csv");
    assert!(column(&bsde, "Z_1").iter().all(|&z| z == 0.0));
    let pref = read(dir.path(), "preference.csv");
    assert_eq!(pref.lines().next().unwrap(), "t,Y,g,c_star,U_at_x,Uc_at_C");
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn pipeline_with_frozen_factor_matches_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lsmc.toml");
    std::fs::write(
        &cfg,
        r#"
preset = "drift_only_demo"
[bsde]
horizon = 5.0
n_paths = 4000
[bsde.sigma]
kind = "markov_factor"
kappa = 1.0
theta = 0.0
eta = 0.0
v0 = 0.0
base = [[0.5]]
scale_lo = 0.5
scale_hi = 1.5
"#,
    )
    .unwrap();
    let v = json(&["pipeline-drift-only", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--json"]);
    assert_eq!(v["verify"]["method"], "regression_monte_carlo");
    assert_eq!(v["verify"]["matches_deterministic"], true);
}

#[test]
fn other_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let h = json(&["saddle-h", "--preset", "fig2", "--z", "0.2", "--json"]);
    assert!((h["saddle"]["value"].as_f64().unwrap() - 0.1796875).abs() < 1e-12);

    let o = json(&["ode", "--preset", "fig2", "--out", d, "--json"]);
    assert!((o["y_horizon"].as_f64().unwrap() + 0.36).abs() < 1e-12);
    assert!(dir.path().join("preference.csv").exists());

    let b = json(&["bsde", "--preset", "drift_only_demo", "--rho", "0.2", "--horizon", "10", "--out", d, "--json"]);
    let exact = 0.12 / 0.2 * (1.0 - (-2.0f64).exp());
    assert!((b["y0"].as_f64().unwrap() - exact).abs() < 1e-8);

    let s = json(&["simulate", "--preset", "fig3", "--n-paths", "5", "--out", d, "--json"]);
    assert_eq!(s["n_paths"], 5);
    assert_eq!(read(dir.path(), "simulate.csv").lines().next().unwrap(), "path_id,t,X");

    let v = json(&["verify", "--preset", "fig2", "--p", "0.2", "--n-paths", "20000", "--out", d, "--json"]);
    assert_eq!(v["martingale"]["verdict"], "supermartingale-consistent");
    assert_eq!(v["martingale"]["agrees_with_drift"], true);
    assert_eq!(v["sign_check_passed"], true);
    assert_eq!(read(dir.path(), "r_paths.csv").lines().next().unwrap(), "path_id,t,R");

    // outside the drift box
    let out = run(&["verify", "--preset", "fig2", "--b", "0.9", "--n-paths", "10", "--out", d]);
    assert_eq!(out.status.code(), Some(1));
}
