use std::path::Path;
use std::process::{Command, Output};

fn genprior(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genprior"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_weights_accepts_exported_generator() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    genprior::generator::save_weights(&genprior::synthetic::suite_generator().unwrap(), &path).unwrap();
    let out = genprior(&["validate-weights", path.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("output_dim: 64"));
}

#[test]
fn validate_weights_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"version\": 1").unwrap();
    let out = genprior(&["validate-weights", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "image_count = 1\neta_list = [3.0]\nsigma_exponents = [2]\nmethods = [\"l2\"]\n",
    )
    .unwrap();
    let out = genprior(&["experiment", "--config", "c.toml", "--output-dir", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("1 records, 0 failures"));
    let out = genprior(&["report", "--csv", "res/results.csv", "--out", "rep"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("rep/psnr_eta3.svg").exists());
    assert!(dir.path().join("rep/box_eta3.svg").exists());
}

#[test]
fn infer_writes_reconstruction_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let out = genprior(&["infer", "--method", "laplace", "--sigma", "1e-3", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let psnr: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("PSNR: "))
        .and_then(|v| v.trim_end_matches(" dB").parse().ok())
        .unwrap();
    assert!(psnr > 20.0, "{text}");
    for f in ["truth.png", "observed.png", "reconstruction.png", "pixel_std.png"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn generate_and_blur_demo_write_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = genprior(&["generate", "--count", "4", "--cols", "2", "--out", "g.pgm"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("g.pgm").exists());
    let out = genprior(&["blur-demo", "--etas", "2,5", "--out", "bd"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("bd/blurred_eta2.png").exists());
    assert!(dir.path().join("bd/grid.png").exists());
}

#[test]
fn printed_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = genprior(&["experiment", "--print-config"], dir.path());
    assert!(out.status.success());
    let cfg = genprior::experiments::ExperimentConfig::from_toml_str(&stdout(&out)).unwrap();
    assert_eq!(cfg, genprior::experiments::ExperimentConfig::default());
}
