use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Record of one CLI invocation: what went in, what came out.
#[derive(Debug, Default)]
pub struct Manifest {
    pub verb: String,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn digest(p: &Path) -> Value {
    match fs::read(p) {
        Ok(bytes) => json!({"path": p.display().to_string(), "sha256": hex::encode(Sha256::digest(&bytes))}),
        Err(_) => json!({"path": p.display().to_string(), "sha256": null}),
    }
}

impl Manifest {
    pub fn new(verb: &str, config: Value) -> Manifest {
        Manifest {
            verb: verb.into(),
            config,
            ..Default::default()
        }
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.config.to_string().as_bytes()))
    }

    /// Writes `{dir}/{verb}-{hash prefix}.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let hash = self.config_hash();
        let mut outputs: Vec<&PathBuf> = self.outputs.iter().collect();
        outputs.sort();
        outputs.dedup();
        let body = json!({
            "verb": self.verb,
            "config_hash": hash,
            "config": self.config,
            "inputs": self.inputs.iter().map(|p| digest(p)).collect::<Vec<_>>(),
            "outputs": outputs.into_iter().map(|p| digest(p)).collect::<Vec<_>>(),
            "versions": {
                "stancealign": env!("CARGO_PKG_VERSION"),
                "parallel": cfg!(feature = "parallel"),
            },
        });
        let path = dir.join(format!("{}-{}.json", self.verb, &hash[..12]));
        fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")?;
        Ok(path)
    }
}
