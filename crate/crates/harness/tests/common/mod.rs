#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apollo_harness::corpus::synthetic_text;
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub config: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

const TINY: &[(&str, &str)] = &[
    ("model.depth", "4"),
    ("model.d_model", "16"),
    ("model.n_heads", "2"),
    ("model.ffn_ratio", "2"),
    ("model.seq_len", "16"),
    ("data.corpus", "corpus.txt"),
    ("data.batch_size", "4"),
    ("data.validation_samples", "16"),
    ("schedule.slots", "1, 2, 4"),
    ("schedule.boundary_steps", "4, 7"),
    ("optimizer.lr", "0.001"),
    ("run.steps", "10"),
    ("run.eval_interval", "5"),
    ("run.seed", "3"),
];

pub fn write_config(path: &Path, base: &[(&str, &str)], overrides: &[(&str, &str)]) {
    let mut keys: BTreeMap<&str, &str> = base.iter().copied().collect();
    for &(k, v) in overrides {
        if v.is_empty() {
            keys.remove(k);
        } else {
            keys.insert(k, v);
        }
    }
    let text: String = keys.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Tiny model and a 40 kB synthetic corpus; an empty override value
/// removes the key.
pub fn tiny(overrides: &[(&str, &str)]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("corpus.txt"), synthetic_text(40_000, 5)).unwrap();
    let config = dir.path().join("run.cfg");
    write_config(&config, TINY, overrides);
    Fixture { dir, config }
}

pub fn without_wall_ms(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms").expect("wall_ms present");
            v
        })
        .collect()
}
