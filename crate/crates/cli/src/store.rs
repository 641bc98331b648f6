//! Run directory: an append-only record of one simulation.
//!
//! ```text
//! run/
//!   config.json      resolved RunConfig
//!   templates.json   locale plus sha256 of every prompt template
//!   responses.jsonl  one SimulatedResponse per (subject, question) attempt
//!   trace.jsonl      intermediate stage outputs
//!   requests.jsonl   every model request and reply
//!   warnings.json    warning counts of the latest invocation
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use survey_sim::survey::{read_jsonl, SimulatedResponse};
use survey_sim::templates::PromptTemplates;

use crate::config::RunConfig;

pub const CONFIG: &str = "config.json";
pub const TEMPLATES: &str = "templates.json";
pub const RESPONSES: &str = "responses.jsonl";
pub const TRACE: &str = "trace.jsonl";
pub const REQUESTS: &str = "requests.jsonl";
pub const WARNINGS: &str = "warnings.json";

pub fn template_hashes(templates: &PromptTemplates) -> BTreeMap<String, String> {
    templates
        .iter()
        .map(|(name, text)| {
            let digest = Sha256::digest(text.as_bytes());
            (name.to_string(), digest.iter().map(|b| format!("{b:02x}")).collect())
        })
        .collect()
}

#[derive(Serialize)]
struct TemplateRecord<'a> {
    locale: &'a str,
    sha256: BTreeMap<String, String>,
}

pub fn write_pretty(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct RunStore {
    pub dir: PathBuf,
}

impl RunStore {
    /// Opens a run directory for `config`, creating it if needed. An existing
    /// run must have been started with the identical configuration and templates.
    pub fn open(dir: &Path, config: &RunConfig, templates: &PromptTemplates) -> Result<RunStore> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
        let config_text = serde_json::to_string_pretty(config)? + "\n";
        let templates_text = serde_json::to_string_pretty(&TemplateRecord {
            locale: &templates.locale,
            sha256: template_hashes(templates),
        })? + "\n";
        for (name, text) in [(CONFIG, &config_text), (TEMPLATES, &templates_text)] {
            let path = dir.join(name);
            if path.exists() {
                let existing = std::fs::read_to_string(&path)?;
                if existing != *text {
                    bail!(
                        "{} differs from the current settings; use a new output directory for a different configuration",
                        path.display()
                    );
                }
            } else {
                std::fs::write(&path, text)?;
            }
        }
        Ok(RunStore { dir: dir.to_path_buf() })
    }

    pub fn load_config(dir: &Path) -> Result<RunConfig> {
        let path = dir.join(CONFIG);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Latest record per (subject, question), in first-seen order.
    pub fn responses(dir: &Path) -> Result<Vec<SimulatedResponse>> {
        let path = dir.join(RESPONSES);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let all: Vec<SimulatedResponse> = read_jsonl(&path)?;
        let mut index: HashMap<(String, String), usize> = HashMap::new();
        let mut latest: Vec<SimulatedResponse> = Vec::new();
        for r in all {
            let key = (r.subject_id.clone(), r.question_id.clone());
            match index.get(&key) {
                Some(&i) => latest[i] = r,
                None => {
                    index.insert(key, latest.len());
                    latest.push(r);
                }
            }
        }
        Ok(latest)
    }

    pub fn appender(&self, name: &str) -> Result<JsonlAppender> {
        let path = self.dir.join(name);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(JsonlAppender {
            out: BufWriter::new(file),
            path,
        })
    }
}

pub struct JsonlAppender {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonlAppender {
    /// Appends the records and flushes, so a crash loses at most one subject.
    pub fn append<T: Serialize>(&mut self, records: &[T]) -> Result<()> {
        for r in records {
            serde_json::to_writer(&mut self.out, r)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush().with_context(|| format!("writing {}", self.path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_record_wins() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path(), &RunConfig::default(), &PromptTemplates::english()).unwrap();
        let mut out = store.appender(RESPONSES).unwrap();
        let r = |q: &str, a: Option<&str>| SimulatedResponse {
            subject_id: "s".into(),
            question_id: q.into(),
            answer: a.map(String::from),
            cluster: None,
            error: a.is_none().then(|| "failed".into()),
        };
        out.append(&[r("Q1", None), r("Q2", Some("(B)")), r("Q1", Some("(A)"))]).unwrap();
        let got = RunStore::responses(dir.path()).unwrap();
        assert_eq!(got, [r("Q1", Some("(A)")), r("Q2", Some("(B)"))]);
    }

    #[test]
    fn reopening_with_other_settings_fails() {
        let dir = tempfile::tempdir().unwrap();
        RunStore::open(dir.path(), &RunConfig::default(), &PromptTemplates::english()).unwrap();
        RunStore::open(dir.path(), &RunConfig::default(), &PromptTemplates::english()).unwrap();
        let other = RunConfig {
            seed: 5,
            ..RunConfig::default()
        };
        assert!(RunStore::open(dir.path(), &other, &PromptTemplates::english()).is_err());
        let mut templates = PromptTemplates::english();
        templates.set("synthesis", "changed");
        assert!(RunStore::open(dir.path(), &RunConfig::default(), &templates).is_err());
    }

    #[test]
    fn hashes_are_hex_sha256() {
        let h = template_hashes(&PromptTemplates::english());
        assert!(h.values().all(|v| v.len() == 64 && v.chars().all(|c| c.is_ascii_hexdigit())));
    }
}
