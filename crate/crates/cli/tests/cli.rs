//! End-to-end checks of the `fadingmem` binary and the checked-in configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fadingmem_cli::config::ExperimentConfig;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fadingmem"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fadingmem-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn checked_in_configs_parse() {
    let mut seen = 0;
    for entry in fs::read_dir(workspace().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "acceptance.toml" {
            fadingmem_cli::acceptance::AcceptanceConfig::load(&path).unwrap();
        } else {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn list_prints_criteria_without_running() {
    let out = bin().args(["accept", "--list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("A1 "));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.toml");
    fs::write(
        &cfg,
        "kind = \"steady_sweep\"\n[instance]\nlambda = [6.0, 8.0]\nbeta = 1.0\nalpha0 = 1.0\nm = 10\n",
    )
    .unwrap();
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("steady.csv").exists());

    let out = bin()
        .args(["accept", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_output_is_identical_across_thread_counts() {
    let dir = scratch("threads");
    let cfg = dir.join("sweep.toml");
    fs::write(
        &cfg,
        "kind = \"steady_sweep\"\n[instance]\nlambda = [8.0, 6.0, 4.0]\nbeta = 1.0\nalpha0 = 1.0\nm = 20\n\
         [run]\nhorizon = 2000.0\nseeds = [3, 4]\n[sweep]\nbeta = [0.1, 1.0, 10.0]\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.join(threads);
        let run = bin()
            .args(["sweep", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(run.status.success());
        outputs.push(fs::read(out.join("steady.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let shifted = dir.join("shifted");
    let run = bin()
        .args(["sweep", "--seed-offset", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&shifted)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert_ne!(fs::read(shifted.join("steady.csv")).unwrap(), outputs[0]);
}

#[test]
fn invariant_and_limits_subcommands_write_artifacts() {
    let dir = scratch("inv");
    let root = workspace();
    let run = bin()
        .arg("invariant")
        .arg("--config")
        .arg(root.join("configs/fig6.toml"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(run.status.success());
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("invariant.json")).unwrap()).unwrap();
    assert_eq!(json["case"]["branch"], "poly_all_above_floor");

    let run = bin()
        .arg("limits")
        .arg("--config")
        .arg(root.join("configs/fig2.toml"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(run.status.success());
    let text = fs::read_to_string(dir.join("limits.csv")).unwrap();
    assert!(text
        .starts_with("#schema=fadingmem.limits.v1\nregime,alpha0,k,lambda,effective_rate,c,q\n"));
    assert_eq!(text.lines().count(), 2 + 2 * 4);
}
