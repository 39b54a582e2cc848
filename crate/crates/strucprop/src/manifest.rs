//! JSON run manifests written next to every artifact.

use std::path::Path;
use std::time::Duration;

use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::Result;
use crate::{checkpoint, dataset};

pub struct Manifest {
    command: String,
    config: RunConfig,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            command: command.into(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.push((role.into(), path.display().to_string()));
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn note(&mut self, key: &str, value: Value) -> &mut Self {
        self.extra.insert(key.into(), value);
        self
    }

    pub fn to_json(&self, duration: Duration) -> Value {
        let config: Map<String, Value> =
            self.config.iter().map(|(k, v)| (k.to_string(), Value::String(v.into()))).collect();
        json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "formats": { "dataset": dataset::VERSION, "checkpoint": checkpoint::VERSION },
            "seeds": {
                "seed": self.config.get("seed"),
                "init_seed": self.config.get("init_seed"),
                "bank_seed": self.config.get("bank_seed"),
                "sa_seed": self.config.get("sa_seed"),
            },
            "config": config,
            "inputs": self.inputs.iter().map(|(r, p)| json!({ "role": r, "path": p })).collect::<Vec<_>>(),
            "outputs": self.outputs,
            "duration_seconds": duration.as_secs_f64(),
            "details": self.extra,
        })
    }

    pub fn write(&self, path: &Path, duration: Duration) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(duration)).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
