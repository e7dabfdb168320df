use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn partmine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partmine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, count: &str) -> String {
    let feat = dir.join("feat");
    let f = feat.to_str().unwrap().to_string();
    ok(&partmine(&[
        "synth",
        "--out",
        &f,
        "--count",
        count,
        "--maps",
        "160",
        "--conv-channels",
        "12",
    ]));
    f
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth(dir.path(), "1");
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    fs::write(&config, "beta = 0.1\nk_parts = 3\nlambda = 0.5\nseed = 4\n").unwrap();
    ok(&partmine(&[
        "mine",
        "--config",
        config.to_str().unwrap(),
        "--features",
        &feat,
        "--out",
        out.to_str().unwrap(),
        "--k-parts",
        "2",
    ]));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["config"]["beta"], 0.1);
    assert_eq!(summary["config"]["k_parts"], 2);
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(summary["config"]["objbox_frac"], 0.2);
    let layout = json(&out.join("scene000.layout.json"));
    assert_eq!(layout["parts"].as_array().unwrap().len(), 2);
    assert!(out.join("scene000.overlay.ppm").is_file());
}

#[test]
fn errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = partmine(&["mine", "--features", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let out = partmine(&["mine", "--connectivity", "6"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("connectivity"));

    let config = dir.path().join("bad.toml");
    fs::write(&config, "betta = 0.1\n").unwrap();
    let out = partmine(&["mine", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));

    let out = partmine(&["mine", "--alpha-mode", "median"]);
    assert!(!out.status.success());
}

#[test]
fn mine_align_train_render() {
    let dir = tempfile::tempdir().unwrap();
    let feat = synth(dir.path(), "4");
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    ok(&partmine(&[
        "mine",
        "--features",
        &feat,
        "--out",
        o,
        "--jobs",
        "2",
    ]));

    let alignment = dir.path().join("align.json");
    ok(&partmine(&[
        "align",
        "--layouts",
        o,
        "--features",
        &feat,
        "--out",
        alignment.to_str().unwrap(),
    ]));
    let a = json(&alignment);
    assert_eq!(a["labels"].as_array().unwrap().len(), 16);
    assert_eq!(a["groups"].as_array().unwrap().len(), 4);

    let model = dir.path().join("model.json");
    let labels = Path::new(&feat).join("labels.json");
    let run = partmine(&[
        "fuse-train",
        "--layouts",
        o,
        "--features",
        &feat,
        "--alignment",
        alignment.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    ok(&run);
    assert!(String::from_utf8_lossy(&run.stdout).contains("72-d features"));
    let m = json(&model);
    assert_eq!(m["classes"], serde_json::json!(["class0", "class1"]));

    let ppm = dir.path().join("scene.ppm");
    ok(&partmine(&[
        "render",
        "--image",
        Path::new(&feat)
            .join("scene001.image.npy")
            .to_str()
            .unwrap(),
        "--layout",
        out.join("scene001.layout.json").to_str().unwrap(),
        "--out",
        ppm.to_str().unwrap(),
    ]));
    let bytes = fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n448 448\n255\n"));
}
