use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXE: &str = env!("CARGO_BIN_EXE_polarikit");

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn polarikit(args: &[&str]) -> Output {
    Command::new(EXE).args(args).env_remove("POLARIKIT_THREADS").output().unwrap()
}

fn rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_owned).collect();
    let records = reader.records().map(Result::unwrap).collect();
    (header, records)
}

fn sidecar(path: &Path) -> serde_json::Value {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(name)).unwrap()).unwrap()
}

#[test]
fn empty_argv_prints_usage_and_exits_2() {
    let out = polarikit(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn negative_density_exits_2_naming_the_flag() {
    let dir = scratch("negative");
    let path = dir.join("s.csv");
    let out = polarikit(&["sweep", "--density", "-1", "-o", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--density"));
    assert!(!path.exists());
}

#[test]
fn epsilon_table_layout() {
    let dir = scratch("epsilon");
    let path = dir.join("eps.csv");
    let out = polarikit(&[
        "epsilon",
        "--delta-min",
        "-10",
        "--delta-max",
        "10",
        "--delta-count",
        "21",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, records) = rows(&path);
    assert_eq!(header, ["delta", "eps_re", "eps_im", "sqrt_eps_re", "sqrt_eps_im"]);
    assert_eq!(records.len(), 21);
    assert_eq!(records[0][0].parse::<f64>().unwrap(), -10.0);
    assert_eq!(records[20][0].parse::<f64>().unwrap(), 10.0);
    for record in &records {
        let eps_im: f64 = record[2].parse().unwrap();
        let root_re: f64 = record[3].parse().unwrap();
        assert!(eps_im > 0.0 && root_re > 0.0);
        // 17 significant digits: one before the point and sixteen after
        let mantissa = record[1].split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.len(), 18, "{}", &record[1]);
    }
    let meta = sidecar(&path);
    assert_eq!(meta["tool"], "polarikit");
    assert_eq!(meta["status"], "ok");
    assert!(meta["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert!(meta["timestamp_unix"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_flags_unregularized_light_cone() {
    let dir = scratch("sweep");
    let path = dir.join("sweep.csv");
    let out = polarikit(&[
        "sweep",
        "--light-cone-reg",
        "0",
        "--kappa-min",
        "-1",
        "--kappa-max",
        "1",
        "--kappa-count",
        "3",
        "--delta-min",
        "-1",
        "--delta-max",
        "1",
        "--delta-count",
        "3",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, records) = rows(&path);
    assert_eq!(header, ["kappa", "delta", "re", "im", "flag"]);
    assert_eq!(records.len(), 9);
    for record in &records {
        let on_cone = record[0] == record[1];
        assert_eq!(&record[4], if on_cone { "lightcone" } else { "ok" });
        assert_eq!(record[2].is_empty(), on_cone);
    }
}

#[test]
fn longitudinal_dispersion_follows_closed_form() {
    let dir = scratch("dispersion");
    let path = dir.join("branch.csv");
    let out = polarikit(&[
        "dispersion",
        "--component",
        "longitudinal",
        "--epsilon-mode",
        "unity",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = sidecar(&path);
    let r = meta["derived"]["resonance_ratio"].as_f64().unwrap();
    let rho = meta["derived"]["recoil_ratio"].as_f64().unwrap();
    let (header, records) = rows(&path);
    assert_eq!(header, ["kappa", "pole_re", "pole_im", "residual", "iterations"]);
    assert_eq!(records.len(), 201);
    for record in &records {
        let kappa: f64 = record[0].parse().unwrap();
        let re: f64 = record[1].parse().unwrap();
        let im: f64 = record[2].parse().unwrap();
        let expected = 2.0 * PI * 0.05 + rho * (1.0 + kappa / r).powi(2);
        assert!((re - expected).abs() < 1e-10 && (im + 0.5).abs() < 1e-10, "κ = {kappa}: {re} {im}");
        assert!(record[3].parse::<f64>().unwrap() < 1e-10);
    }
}

#[test]
fn replay_reproduces_the_table() {
    let dir = scratch("replay");
    let first = dir.join("xsec.csv");
    let out = polarikit(&["xsec", "--delta-count", "9", "--density", "0.01", "-o", first.to_str().unwrap()]);
    assert!(out.status.success());
    let mut meta_path = first.as_os_str().to_owned();
    meta_path.push(".meta.json");
    let second = dir.join("again.csv");
    let out = polarikit(&["replay", meta_path.to_str().unwrap(), "-o", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(sidecar(&first)["config"]["model"], sidecar(&second)["config"]["model"]);
}

#[test]
fn numeric_failure_exits_1_with_diagnostic() {
    let dir = scratch("failure");
    let path = dir.join("branch.csv");
    let out = polarikit(&["dispersion", "--max-iter", "1", "--pole-tol", "1e-300", "-o", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let meta = sidecar(&path);
    assert_eq!(meta["status"], "failed");
    assert!(!meta["diagnostic"].as_str().unwrap().is_empty());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = scratch("config");
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "# formfactor grid\nq_count = 4\natom-count = 500\ntf_radius = 10\n").unwrap();
    let path = dir.join("ff.csv");
    let out =
        polarikit(&["formfactor", "--config", conf.to_str().unwrap(), "--q-count", "3", "-o", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, records) = rows(&path);
    assert_eq!(header, ["q", "form_factor", "form_factor_norm"]);
    assert_eq!(records.len(), 3);
    assert!((records[0][1].parse::<f64>().unwrap() - 500.0).abs() < 1e-12 * 500.0);

    std::fs::write(&conf, "q_count = 4\nradius = 10\n").unwrap();
    let out = polarikit(&["formfactor", "--config", conf.to_str().unwrap(), "-o", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius"));
}

#[test]
fn diffxsec_crossed_channel_vanishes_in_polarization_plane() {
    let dir = scratch("diffxsec");
    let path = dir.join("dcs.csv");
    let out = polarikit(&["diffxsec", "--target", "thomas-fermi", "--theta-count", "13", "-o", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, records) = rows(&path);
    assert_eq!(header, ["theta", "q", "form_factor", "dcs_theta", "dcs_phi", "dcs_total"]);
    let forward: f64 = records[0][5].parse().unwrap();
    for record in &records {
        // in the φ = 0 plane the outgoing φ̂ is orthogonal to the incoming x̂
        assert_eq!(record[4].parse::<f64>().unwrap(), 0.0);
        assert!(record[5].parse::<f64>().unwrap() <= forward);
    }
}

#[test]
fn json_format_carries_columns_and_rows() {
    let dir = scratch("json");
    let path = dir.join("eps.json");
    let out = polarikit(&["epsilon", "--format", "json", "--delta-count", "3", "-o", path.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["columns"][0], "delta");
    assert_eq!(doc["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let dir = scratch("threads");
    let path = dir.join("eps.csv");
    let out = Command::new(EXE)
        .args(["epsilon", "-o", path.to_str().unwrap()])
        .env("POLARIKIT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("POLARIKIT_THREADS"));
}
