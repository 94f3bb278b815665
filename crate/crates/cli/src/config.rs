use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::args::GlobalArgs;
use crate::error::CliError;

/// Effective settings for one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub store: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub task: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub grads: Option<PathBuf>,
    pub n: usize,
    pub gamma: Option<f64>,
    pub family: String,
    pub n_pair_max: usize,
    pub lowercase: bool,
    pub template: String,
    pub instruction: String,
    pub embedder: String,
    pub embed_url: Option<String>,
    pub embed_dim: usize,
    pub model_id: Option<String>,
    pub model_endpoint: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            store: "store".into(),
            out: "out".into(),
            seed: 0,
            corpus: None,
            task: None,
            table: None,
            records: None,
            grads: None,
            n: 3,
            gamma: None,
            family: "triviaqa".into(),
            n_pair_max: memtrace_core::index::DEFAULT_N_PAIR_MAX,
            lowercase: true,
            template: memtrace_core::bridge::DEFAULT_TEMPLATE.into(),
            instruction: String::new(),
            embedder: "hash".into(),
            embed_url: None,
            embed_dim: 256,
            model_id: None,
            model_endpoint: None,
        }
    }
}

fn flag_overrides(g: &GlobalArgs) -> Map<String, Value> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.to_owned(), v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()));
    let string = |s: &Option<String>| s.clone().map(Value::from);
    put("store", path(&g.store));
    put("out", path(&g.out));
    put("seed", g.seed.map(Value::from));
    put("corpus", path(&g.corpus));
    put("task", path(&g.task));
    put("table", path(&g.table));
    put("records", path(&g.records));
    put("grads", path(&g.grads));
    put("n", g.n.map(Value::from));
    put("gamma", g.gamma.map(Value::from));
    put("family", string(&g.family));
    put("n_pair_max", g.n_pair_max.map(Value::from));
    put("lowercase", g.no_lowercase.then_some(Value::Bool(false)));
    put("template", string(&g.template));
    put("instruction", string(&g.instruction));
    put("embedder", string(&g.embedder));
    put("embed_url", string(&g.embed_url));
    put("embed_dim", g.embed_dim.map(Value::from));
    put("model_id", string(&g.model_id));
    put("model_endpoint", string(&g.model_endpoint));
    m
}

impl RunConfig {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(g: &GlobalArgs) -> anyhow::Result<Self> {
        let mut merged = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(path) = &g.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let file: Map<String, Value> = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            merged.extend(file);
        }
        merged.extend(flag_overrides(g));
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::new("invalid_config", format!("invalid run config: {e}")))?;
        Ok(cfg)
    }

    pub fn write_effective(&self, command: &str) -> anyhow::Result<PathBuf> {
        let path = self.out.join("config").join(format!("{command}.json"));
        write_json(&path, &serde_json::to_value(self)?)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.json");
        std::fs::write(&file, r#"{"n": 5, "seed": 9, "family": "wmt"}"#).unwrap();
        let g = GlobalArgs {
            config: Some(file),
            seed: Some(1),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&g).unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.family, "wmt");
        assert_eq!(cfg.n_pair_max, 8);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.json");
        std::fs::write(&file, r#"{"nn": 5}"#).unwrap();
        let g = GlobalArgs {
            config: Some(file),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&g).is_err());
    }
}
