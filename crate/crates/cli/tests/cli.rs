use std::path::Path;
use std::process::{Command, Output};

fn mmloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmloc")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"
[run]
trials = 20
seed = 4

[noise]
sigma_d = 0.4
sigma_a = 0.001

[dataset]
train = 300
val = 60
test = 20

[training]
epochs = 3
hidden = [8]

[ensemble]
l = 3
calibration_samples = 20
"#;

#[test]
fn crlb_json() {
    let dir = tempfile::tempdir().unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&mmloc(dir.path(), &["crlb"]))).unwrap();
    assert!((v["pos_bound"].as_f64().unwrap() - 0.626).abs() < 1e-3);
    assert!(v["vel_bound"].as_f64().unwrap() > 0.0);
    assert_eq!(v["mapping"][0]["rrh_index"], 0);
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    ok(&mmloc(dir.path(), &["simulate", "--config", "c.toml", "--out", "m.csv"]));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("r21,rdot21,"));
    assert_eq!(csv.lines().count(), 21);
    let est: Vec<serde_json::Value> = serde_json::from_str(&ok(&mmloc(dir.path(), &["estimate", "--config", "c.toml", "--input", "m.csv"]))).unwrap();
    assert_eq!(est.len(), 20);
    let u = &est[0]["u"];
    assert!((u[0].as_f64().unwrap() - 300.0).abs() < 1.0);
    assert!((u[2].as_f64().unwrap() + 100.0).abs() < 1.0);
    let it = est[0]["iterations"].as_u64().unwrap();
    assert!((1..=5).contains(&it));
}

#[test]
fn seed_flag_changes_and_fixes_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let a = ok(&mmloc(dir.path(), &["run", "--config", "c.toml", "--seed", "9"]));
    let b = ok(&mmloc(dir.path(), &["run", "--config", "c.toml", "--seed", "9"]));
    let c = ok(&mmloc(dir.path(), &["run", "--config", "c.toml", "--seed", "10"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let csv = ok(&mmloc(dir.path(), &["run", "--config", "c.toml", "--format", "csv"]));
    assert_eq!(csv.lines().next().unwrap(), "estimator,scenario,rho,na,rmse_u,rmse_udot,crlb_pos,crlb_vel,t_per_estimate");
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[noise]\nfamily = \"D9\"\n").unwrap();
    let out = mmloc(dir.path(), &["crlb", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "unknown_family");

    let out = mmloc(dir.path(), &["crlb", "--format", "xml"]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "usage");
}

#[test]
fn map_point_cloud() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    ok(&mmloc(dir.path(), &["simulate", "--config", "c.toml", "--kind", "mapping", "--out", "s.csv"]));
    std::fs::write(dir.path().join("ue.json"), r#"{"u": [300.0, -20.0, -100.0]}"#).unwrap();
    let out = ok(&mmloc(dir.path(), &["map", "--config", "c.toml", "--input", "s.csv", "--ue", "ue.json", "--format", "csv"]));
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "x,y,z,rrh_index");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[0] - 50.0).abs() < 30.0 && (row[1] - 200.0).abs() < 30.0 && (row[2] + 70.0).abs() < 30.0);
    assert_eq!(row[3], 0.0);
}

#[test]
fn train_infer_ensemble_bench() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    ok(&mmloc(dir.path(), &["train", "--config", "c.toml", "--fp", "--subnet2", "--out", "models"]));
    for f in ["manifest.json", "member_00.json", "member_02.json", "fp.json", "subnet2.json"] {
        assert!(dir.path().join("models").join(f).exists(), "{f}");
    }
    let net: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("models/member_00.json")).unwrap()).unwrap();
    assert_eq!(net["params"]["layer_sizes"], serde_json::json!([22, 8, 22]));
    assert!(net["norm"]["inputs"]["min"].is_array());

    ok(&mmloc(dir.path(), &["simulate", "--config", "c.toml", "--out", "m.csv"]));
    for est in ["wlsnet", "lsnet", "fp", "ewlsnet"] {
        let v: Vec<serde_json::Value> = serde_json::from_str(&ok(&mmloc(dir.path(), &["infer", "--config", "c.toml", "--models", "models", "--input", "m.csv", "--estimator", est]))).unwrap();
        assert_eq!(v.len(), 20, "{est}");
        assert_eq!(v[0]["iterations"], 0);
    }
    let fused: Vec<serde_json::Value> = serde_json::from_str(&ok(&mmloc(dir.path(), &["ensemble", "--config", "c.toml", "--models", "models", "--input", "m.csv"]))).unwrap();
    assert_eq!(fused.len(), 20);

    let t: serde_json::Value = serde_json::from_str(&ok(&mmloc(dir.path(), &["bench", "--config", "c.toml", "--models", "models", "--reps", "20"]))).unwrap();
    assert!(t["t_wls"].as_f64().unwrap() > 0.0);

    std::fs::write(dir.path().join("ue.json"), r#"{"u": [300.0, -20.0, -100.0]}"#).unwrap();
    ok(&mmloc(dir.path(), &["simulate", "--config", "c.toml", "--kind", "mapping", "--out", "s.csv"]));
    let pts: Vec<serde_json::Value> = serde_json::from_str(&ok(&mmloc(dir.path(), &["map", "--config", "c.toml", "--input", "s.csv", "--ue", "ue.json", "--models", "models"]))).unwrap();
    assert_eq!(pts.len(), 20);
}
