use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Provenance stamped into every output.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Value,
    pub parameters: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// sha256 of each output body, keyed by file name.
    pub output_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs,
            parameters: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            output_digests: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) {
        self.parameters.insert(key.to_string(), serde_json::to_value(v).expect("parameter serializes"));
    }
}

pub enum Body {
    Csv(String),
    Json(Value),
}

impl Body {
    fn digest_input(&self) -> String {
        match self {
            Body::Csv(s) => s.clone(),
            Body::Json(v) => serde_json::to_string(v).expect("json"),
        }
    }
}

/// Collected outputs of one run.
pub struct Outputs {
    pub manifest: RunManifest,
    files: Vec<(String, Body)>,
}

impl Outputs {
    pub fn new(manifest: RunManifest) -> Self {
        Outputs { manifest, files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, body: Body) {
        self.files.push((name.to_string(), body));
    }

    fn render(&self) -> Vec<(String, String)> {
        let mut m = self.manifest.clone();
        for (name, body) in &self.files {
            m.output_digests.insert(name.clone(), hex::encode(Sha256::digest(body.digest_input().as_bytes())));
        }
        self.files
            .iter()
            .map(|(name, body)| {
                let text = match body {
                    Body::Csv(s) => {
                        let header = serde_json::to_string(&m).expect("manifest");
                        format!("# manifest: {header}\n{s}")
                    }
                    Body::Json(v) => {
                        let mut v = v.clone();
                        if let Value::Object(o) = &mut v {
                            o.insert("manifest".into(), serde_json::to_value(&m).expect("manifest"));
                        }
                        serde_json::to_string_pretty(&v).expect("json") + "\n"
                    }
                };
                (name.clone(), text)
            })
            .collect()
    }

    /// Writes every file into `dir`, or the first one to stdout.
    pub fn emit(&self, dir: Option<&Path>) -> Result<()> {
        let rendered = self.render();
        match dir {
            Some(d) => {
                fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
                for (name, text) in rendered {
                    let p = d.join(&name);
                    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
                }
            }
            None => {
                if let Some((_, text)) = rendered.first() {
                    std::io::stdout().write_all(text.as_bytes())?;
                }
            }
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
