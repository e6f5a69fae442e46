use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ruelle"))
}

fn map(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps").join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

#[test]
fn verify_resolvent_equation_example() {
    let m = map("quad_c0.map");
    let out = run(&["verify", "--map", &m, "--identity", "resolvent_eq", "--samples", "100", "--tol", "1e-8", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out);
    assert_eq!(recs[0]["config"]["seed"], 7);
    assert_eq!(recs[1]["identity_name"], "resolvent_eq");
    assert_eq!(recs[1]["pass"], true);
}

#[test]
fn unknown_identity_is_a_schema_error() {
    let out = run(&["verify", "--map", &map("quad_c0.map"), "--identity", "no_such"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_check_exits_one() {
    let out = run(&["verify", "--map", &map("quad_c025.map"), "--identity", "lemma_T", "--samples", "20", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(records(&out)[1]["pass"], false);
}

#[test]
fn lattes_check_reports_lambda() {
    let out = run(&["lattes-check", "--map", &map("lattes.map")]);
    assert_eq!(out.status.code(), Some(0));
    let r = &records(&out)[1];
    assert!((r["lambda"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!(r["residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn lattes_check_rejects_polynomial() {
    let out = run(&["lattes-check", "--map", &map("quad_c0.map")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, format!("command = verify\nmap = {}\nno-such-key = 3\n", map("quad_c0.map"))).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn config_file(record: &Value, path: &Path) {
    let mut text = String::new();
    for (k, v) in record["config"].as_object().unwrap() {
        let v = match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn echoed_config_reproduces_run() {
    let m = map("normalized.map");
    let first = run(&["--workers", "1", "verify", "--map", &m, "--identity", "lemma_T,duality", "--samples", "300", "--seed", "9"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let recs = records(&first);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("echo.cfg");
    config_file(&recs[0], &cfg);
    let second = run(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&first.stdout), String::from_utf8_lossy(&second.stdout));
}

#[test]
fn explicit_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("command = resolvent\nmap = {}\npoint = 2+0i\ntol = 1e-4\nmax-depth = 3\n", map("quad_c0.map"))).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "--max-depth", "12"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out);
    assert_eq!(recs[0]["config"]["max-depth"], 12);
    assert!((recs[1]["value"][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn render_julia_writes_pixmap_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("j.ppm");
    let out = run(&["render-julia", "--map", &map("quad_c0.map"), "--box=-1.5,-1.5,1.5,1.5", "--res", "32", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let bytes = std::fs::read(&out_path).unwrap();
    assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    let side: Value = serde_json::from_slice(&std::fs::read(dir.path().join("j.ppm.json")).unwrap()).unwrap();
    assert_eq!(side["resolution"], 32);
    assert_eq!(side["box"][0], -1.5);
}

#[test]
fn unwritable_output_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path: PathBuf = dir.path().join("missing").join("j.ppm");
    let out = run(&["render-julia", "--map", &map("quad_c0.map"), "--res", "16", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
}

#[test]
fn render_linefield_golden_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("f.json");
    // 8×8 grid on [0, 8]²; cell (1, 0) horizontal, cell (0, 1) vertical.
    let mut values = vec![[0.0, 0.0]; 64];
    values[1] = [1.0, 0.0];
    values[8] = [-1.0, 0.0];
    let doc = serde_json::json!({ "box": [0.0, 0.0, 8.0, 8.0], "resolution": 8, "values": values });
    std::fs::write(&field, doc.to_string()).unwrap();
    let out_path = dir.path().join("l.ppm");
    let spec = format!("file:{}", field.display());
    let out = run(&[
        "render-linefield", "--map", &map("quad_c0.map"), "--field", &spec, "--box", "0,0,8,8", "--res", "8",
        "--cell-px", "8", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&out_path).unwrap();
    let header = b"P6\n64 64\n255\n";
    assert!(bytes.starts_with(header));
    let px = &bytes[header.len()..];
    for y in 0..64 {
        for x in 0..64 {
            let horizontal = y == 60 && (8..16).contains(&x);
            let vertical = x == 4 && (48..56).contains(&y);
            assert_eq!(px[3 * (y * 64 + x)] == 0, horizontal || vertical, "({x}, {y})");
        }
    }
}

#[test]
fn diagnose_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let out = run(&[
        "diagnose", "--map", &map("chebyshev.map"), "--sets", "-2+0i:0.3,2+0i:0.3/2", "--depth", "3", "--res", "64",
        "--samples", "20000", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,int_abs_r,int_sigma_psi_re,int_sigma_psi_im,stderr,depth");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert_eq!((row[0], row[5]), ("0", "3"));
    for cell in &row[1..5] {
        let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{cell}");
        cell.parse::<f64>().unwrap();
    }
}

#[test]
fn fundamental_set_full_box_has_empty_boundary_layer() {
    let out = run(&["fundamental-set", "--map", &map("chebyshev.map"), "--res", "64", "--w", "full"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(records(&out)[1]["Kprime_empty"], true);
}
