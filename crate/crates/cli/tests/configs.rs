use std::path::PathBuf;

use fpme_harness::{ExperimentConfig, ExperimentKind};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn every_shipped_config_loads() {
    let files = shipped();
    assert_eq!(files.len(), 14);
    let mut ids = Vec::new();
    for f in &files {
        let c = ExperimentConfig::load(f).unwrap_or_else(|e| panic!("{e}"));
        ids.push(c.id.clone());
        for inner in &c.configs {
            assert!(c.base_dir.join(inner).exists(), "{}", inner.display());
        }
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), files.len(), "experiment ids must be unique");
}

#[test]
fn schema_lists_the_same_kinds_and_checks() {
    let text = std::fs::read_to_string(configs_dir().join("schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let names = |v: &serde_json::Value| -> Vec<String> {
        let mut out: Vec<String> = v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect();
        out.sort();
        out
    };
    let kinds = names(&schema["properties"]["kind"]["enum"]);
    let mut expected: Vec<String> = ExperimentKind::ALL.iter().map(|k| k.name().to_string()).collect();
    expected.sort();
    assert_eq!(kinds, expected);
    let checks = names(&schema["properties"]["checks"]["items"]["enum"]);
    let mut expected: Vec<String> =
        ExperimentKind::ALL.iter().flat_map(|k| k.checks().iter().map(|c| c.to_string())).collect();
    expected.sort();
    assert_eq!(checks, expected);
}
