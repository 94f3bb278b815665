//! Merges the analysis artifacts of an output directory into one report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::{write_json, write_text, RunConfig};
use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

/// Artifact files (`*.json` carrying an `"artifact"` field) keyed by stem.
pub fn collect(dir: &Path) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(out);
    };
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "json") || path.file_stem().is_some_and(|s| s == "report") {
            continue;
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let Ok(v) = serde_json::from_str::<Value>(&text) else { continue };
        if v.get("artifact").is_some() {
            let stem = path.file_stem().expect("has stem").to_string_lossy().into_owned();
            out.insert(stem, v);
        }
    }
    Ok(out)
}

pub fn merge(artifacts: &BTreeMap<String, Value>) -> Result<Value> {
    if artifacts.is_empty() {
        return Err(CliError::new("no_artifacts", "no analysis artifacts found").into());
    }
    let mut digest: Option<&str> = None;
    for (name, a) in artifacts {
        let d = a["corpus_digest"].as_str().unwrap_or_default();
        match digest {
            None => digest = Some(d),
            Some(prev) if prev != d => {
                return Err(CliError::new(
                    "mixed_corpora",
                    format!("mixed corpora: artifact {name} has corpus digest {d}, others {prev}"),
                )
                .into())
            }
            Some(_) => {}
        }
    }
    let entries: BTreeMap<&String, Value> = artifacts
        .iter()
        .map(|(k, a)| (k, json!({"artifact": a["artifact"], "result": a["result"]})))
        .collect();
    Ok(json!({
        "report_version": REPORT_VERSION,
        "corpus_digest": digest,
        "entries": entries,
    }))
}

/// One `entry,metric,value` row per scalar field of each entry's result.
pub fn summary_csv(report: &Value) -> String {
    let mut out = String::from("entry,metric,value\n");
    if let Some(entries) = report["entries"].as_object() {
        for (name, e) in entries {
            if let Some(fields) = e["result"].as_object() {
                for (k, v) in fields {
                    let cell = match v {
                        Value::Number(n) => n.to_string(),
                        Value::Bool(b) => b.to_string(),
                        Value::String(s) if !s.contains([',', '\n', '"']) => s.clone(),
                        Value::Null => String::new(),
                        _ => continue,
                    };
                    let _ = writeln!(out, "{name},{k},{cell}");
                }
            }
        }
    }
    out
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let report = merge(&collect(&cfg.out)?)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_text(&cfg.out.join("report.csv"), &summary_csv(&report))?;
    println!("{}", json!({"report": cfg.out.join("report.json"), "entries": report["entries"].as_object().map_or(0, |m| m.len())}));
    Ok(())
}
