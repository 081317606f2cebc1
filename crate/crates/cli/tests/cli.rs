use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gsbp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsbp"))
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_is_reproducible_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--n-traj", "3", "--samples", "11", "--T", "4", "--seed", "5"];
    let a = gsbp(dir.path(), &[&["--run", "a"], &args[..]].concat());
    let b = gsbp(dir.path(), &[&["--run", "b"], &args[..]].concat());
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let ca = std::fs::read(dir.path().join("a/results/dataset.csv")).unwrap();
    let cb = std::fs::read(dir.path().join("b/results/dataset.csv")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 11);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["command"], "gen-data");

    let bad = gsbp(dir.path(), &["gen-data", "--n-traj", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = gsbp(dir.path(), &["gen-data", "--samples", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fit_sde_writes_model_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let g = gsbp(
        dir.path(),
        &["--run", "data", "gen-data", "--n-traj", "10", "--samples", "21", "--T", "8", "--seed", "1"],
    );
    assert!(g.status.success());
    let data = dir.path().join("data/results/dataset.csv");
    let f = gsbp(
        dir.path(),
        &[
            "--run",
            "fit",
            "fit-sde",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "2",
            "--window",
            "5",
            "--stride",
            "5",
        ],
    );
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    for p in
        ["checkpoints/best.json", "results/model.json", "results/history.csv", "results/summary.json", "manifest.json"]
    {
        assert!(dir.path().join("fit").join(p).exists(), "{p}");
    }
    let h = std::fs::read_to_string(dir.path().join("fit/results/history.csv")).unwrap();
    assert_eq!(h.lines().count(), 3);
    let bad = gsbp(dir.path(), &["fit-sde", "--data", data.to_str().unwrap(), "--arch", "9"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = gsbp(dir.path(), &["fit-sde", "--data", "/nonexistent.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn solve_then_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    let s = gsbp(dir.path(), &["--run", "s", "solve", "--config", cfg.to_str().unwrap()]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let run = dir.path().join("s");
    for p in [
        "checkpoints/epoch_000002.json",
        "results/net.json",
        "results/history.csv",
        "results/grid.csv",
        "results/config.toml",
    ] {
        assert!(run.join(p).exists(), "{p}");
    }
    let hist = std::fs::read_to_string(run.join("results/history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 5);
    let grid = std::fs::read_to_string(run.join("results/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 5 * 5);

    let net = run.join("results/net.json");
    let r = gsbp(
        dir.path(),
        &[
            "--run",
            "r",
            "rollout",
            "--config",
            cfg.to_str().unwrap(),
            "--net",
            net.to_str().unwrap(),
            "--paths",
            "4",
            "--steps",
            "10",
            "--grid",
            "4",
            "--target-size",
            "16",
        ],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = std::fs::read_to_string(dir.path().join("r/results/rollouts.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("path_id,t,x1,x2,u1,u2"));
    assert_eq!(rows.lines().count(), 1 + 4 * 11);
    let e: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/results/endpoints.json")).unwrap()).unwrap();
    assert_eq!(e["mean"].as_array().unwrap().len(), 2);

    let gated = dir.path().join("gated.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("grid = [3, 5]", "grid = [3, 5]\ngate = 1e-12");
    std::fs::write(&gated, text).unwrap();
    assert_eq!(gsbp(dir.path(), &["solve", "--config", gated.to_str().unwrap()]).status.code(), Some(3));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[pinn]\nepochz = 3\n").unwrap();
    assert_eq!(gsbp(dir.path(), &["solve", "--config", unknown.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn ot_of_a_cloud_with_itself_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "x1,x2\n0.0,0.0\n1.0,0.5\n0.3,0.9\n").unwrap();
    std::fs::write(&b, "x1,x2,weight\n2.0,0.0,1\n2.0,1.0,3\n").unwrap();
    let same = gsbp(dir.path(), &["ot", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(same.status.success());
    let v: f64 = stdout(&same).trim().parse().unwrap();
    assert!(v.abs() <= 1e-8);
    let diff = gsbp(dir.path(), &["ot", a.to_str().unwrap(), b.to_str().unwrap(), "--eps", "0.05"]);
    let v: f64 = stdout(&diff).trim().parse().unwrap();
    assert!(v > 1.0);
    let raw = gsbp(dir.path(), &["--run", "raw", "ot", a.to_str().unwrap(), a.to_str().unwrap(), "--raw"]);
    let v: f64 = stdout(&raw).trim().parse().unwrap();
    assert!(v != 0.0);
    let j: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("raw/results/ot.json")).unwrap()).unwrap();
    assert_eq!(j["debiased"], false);
    assert_eq!(gsbp(dir.path(), &["ot", a.to_str().unwrap(), "/missing.csv"]).status.code(), Some(2));
}

#[test]
fn orderparams_on_a_bcc_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pos.csv");
    let mut text = String::from("id,x,y,z\n");
    let mut id = 0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let (x, y, z) = (i as f64, j as f64, k as f64);
                text += &format!("{id},{x},{y},{z}\n{},{},{},{}\n", id + 1, x + 0.5, y + 0.5, z + 0.5);
                id += 2;
            }
        }
    }
    std::fs::write(&p, text).unwrap();
    let o = gsbp(dir.path(), &["orderparams", p.to_str().unwrap(), "--box", "3,3,3", "--cutoff", "0.9", "--l", "0,6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("orderparams/results/orderparams.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,C_0,C_6"));
    assert_eq!(csv.lines().count(), 55);
    for line in csv.lines().skip(1) {
        let c0: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((c0 - 1.0).abs() < 1e-12);
    }
    let bad = gsbp(dir.path(), &["orderparams", p.to_str().unwrap(), "--box", "3,3,3", "--cutoff", "2.0"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = gsbp(dir.path(), &["orderparams", p.to_str().unwrap(), "--box", "3,3", "--cutoff", "0.9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gsbp(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(gsbp(dir.path(), &["gen-data", "--threads", "0"]).status.code(), Some(2));
}
