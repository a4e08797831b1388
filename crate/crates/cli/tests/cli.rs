use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edgebench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgebench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EDGEBENCH_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_to(dir: &Path, scenario: &str, out: &str) -> std::path::PathBuf {
    let o = edgebench(&["run", "--config", scenario, "--out", out], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(out).join("report.json")
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgebench(
        &[
            "run",
            "--config",
            "azureedge-scalar",
            "--out",
            "out",
            "--persist-blobs",
            "blobs",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.starts_with("id,c_edge_ms,t1,t2,t3,flight_ms,residence_ms,e2e_ms,payload_bytes\n"));
    assert!(out.join("charts/e2e_latency.svg").is_file());
    assert_eq!(
        fs::read_dir(dir.path().join("blobs/scalar"))
            .unwrap()
            .count(),
        4
    );
}

#[test]
fn run_from_file_with_inheritance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("mine.toml"),
        "extends = \"greengrass-image\"\nname = \"mine\"\nseed = 5\noutput_dir = \"from-config\"\n[workload]\nitems = 20\n",
    )
    .unwrap();
    let o = edgebench(&["run", "--config", "mine.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("from-config/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_edgebench"))
        .args(["run", "--config", "greengrass-scalar"])
        .env("EDGEBENCH_OUT", &env_out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_out.join("greengrass-scalar/report.json").is_file());

    let o = Command::new(env!("CARGO_BIN_EXE_edgebench"))
        .args(["run", "--config", "greengrass-scalar", "--out", "flag"])
        .env("EDGEBENCH_OUT", &env_out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("flag/report.json").is_file());

    let o = edgebench(&["run", "--config", "greengrass-scalar"], dir.path());
    assert!(o.status.success());
    assert!(dir
        .path()
        .join("edgebench-out/greengrass-scalar/report.json")
        .is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "greengrass-audio", "a");
    let o = edgebench(
        &[
            "run",
            "--config",
            "greengrass-audio",
            "--seed",
            "9",
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let a: serde_json::Value = serde_json::from_slice(&fs::read(a).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("b/report.json")).unwrap()).unwrap();
    assert_eq!(a["seed"], 1);
    assert_eq!(b["seed"], 9);
    assert_ne!(a["rows"], b["rows"]);
}

#[test]
fn dropped_messages_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("lossy.toml"),
        "extends = \"greengrass-image\"\nname = \"lossy\"\nseed = 3\n[link]\ndrop_probability = 0.1\n",
    )
    .unwrap();
    let o = edgebench(
        &["run", "--config", "lossy.toml", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("never reached storage"));
    assert!(dir.path().join("out/report.json").is_file());
}

#[test]
fn validate_reports_typos_and_minimum_window() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("typo.toml"),
        "extends = \"azureedge-audio\"\nname = \"typo\"\nseed = 1\n[hub]\nwindw_s = 90\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("short.toml"),
        "extends = \"azureedge-audio\"\nname = \"short\"\nseed = 1\n[hub]\nwindow_s = 30\n",
    )
    .unwrap();
    let o = edgebench(
        &[
            "validate",
            "--config",
            "typo.toml",
            "short.toml",
            "greengrass-image",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.contains("unknown key `hub.windw_s`"), "{text}");
    assert!(text.contains("platform minimum of 60 s"), "{text}");
    assert!(text.contains("ok    greengrass-image"), "{text}");
}

#[test]
fn compare_shows_byte_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let edge = run_to(dir.path(), "greengrass-image", "edge");
    let cloud = run_to(dir.path(), "aws-cloud-image", "cloud");
    let o = edgebench(
        &["compare", edge.to_str().unwrap(), cloud.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success());
    let text = stdout(&o);
    let cloud_line = text
        .lines()
        .find(|l| l.starts_with("aws-cloud-image"))
        .unwrap();
    let ratio: f64 = cloud_line
        .split_whitespace()
        .last()
        .unwrap()
        .parse()
        .unwrap();
    assert!((ratio - 81.0).abs() < 8.0, "{text}");
    assert!(text.lines().next().unwrap().ends_with("byte_ratio"));

    let o = edgebench(
        &[
            "compare",
            edge.to_str().unwrap(),
            cloud.to_str().unwrap(),
            "--baseline",
            "aws-cloud-image",
            "--format",
            "json",
        ],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[1]["byte_ratio"], 1.0);
}

#[test]
fn charts_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gg = run_to(dir.path(), "greengrass-audio", "gg");
    let az = run_to(dir.path(), "azureedge-audio", "az");
    for out in ["c1", "c2"] {
        let o = edgebench(
            &[
                "charts",
                gg.to_str().unwrap(),
                az.to_str().unwrap(),
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success());
    }
    let a = fs::read_to_string(dir.path().join("c1/e2e_latency.svg")).unwrap();
    let b = fs::read_to_string(dir.path().join("c2/e2e_latency.svg")).unwrap();
    assert_eq!(a, b);
    assert!(a.contains(">greengrass<") && a.contains(">azureedge<"));
    assert_eq!(
        a.matches("<rect x=").count(),
        4,
        "two bars plus two legend swatches"
    );
}

#[test]
fn missing_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgebench(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = edgebench(&["cost", "--rate-card", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = edgebench(&["charts", "missing.json", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
