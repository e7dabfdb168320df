use std::fs;
use std::path::Path;

use partmine::pipeline::{run_pipeline, PipelineConfig};
use partmine::synth::{planted_scene, SynthConfig};
use partmine::write_tensor;
use serde_json::Value;

fn validator(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn emitted_documents_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("features");
    fs::create_dir(&features).unwrap();
    let synth = SynthConfig {
        maps: 192,
        ..SynthConfig::default()
    };
    for i in 0..2u64 {
        let scene = planted_scene(&synth, i);
        write_tensor(&scene.stack, features.join(format!("s{i}.npy"))).unwrap();
        write_tensor(&scene.image, features.join(format!("s{i}.image.npy"))).unwrap();
    }
    // an unreadable stack becomes an error entry, not a failed run
    fs::write(features.join("broken.npy"), b"not an npy file").unwrap();
    let cfg = PipelineConfig {
        features,
        out: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!((summary.succeeded, summary.failed), (2, 1));

    let layout = validator("layout.schema.json");
    for i in 0..2 {
        let doc = load(&cfg.out.join(format!("s{i}.layout.json")));
        assert!(layout.is_valid(&doc), "{doc}");
    }
    let summary_doc = load(&cfg.out.join("summary.json"));
    let schema = validator("summary.schema.json");
    let errors: Vec<String> = schema
        .iter_errors(&summary_doc)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn schemas_reject_malformed_layouts() {
    let layout = validator("layout.schema.json");
    let good = serde_json::json!({
        "image": "a.npy", "image_size": [448, 448], "object_box": [0, 0, 10, 10],
        "side": 3, "parts": [{"center": [1, 1], "box": [0, 0, 3, 3]}]
    });
    assert!(layout.is_valid(&good));
    let mut bad = good.clone();
    bad["object_box"] = serde_json::json!([0, 0, 0]);
    assert!(!layout.is_valid(&bad));
    let mut bad = good;
    bad["parts"][0]["box"] = serde_json::json!([0, 0, 0, 3]);
    assert!(!layout.is_valid(&bad));
}
