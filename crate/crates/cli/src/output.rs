//! Output files. Each one names the tool version and the config hash.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub const TOOL: &str = "sofic-glauber";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct OutDir {
    dir: PathBuf,
    hash: String,
}

impl OutDir {
    pub fn create(dir: &Path, hash: String) -> Result<Self, String> {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
        })
    }

    /// Comment line with provenance, a header row, then `rows`.
    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), String> {
        let mut buf = format!("# {TOOL} {VERSION} config_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| e.to_string())?;
            for row in rows {
                w.write_record(&row).map_err(|e| e.to_string())?;
            }
            w.flush().map_err(|e| e.to_string())?;
        }
        self.write(name, &String::from_utf8(buf).expect("utf-8"))
    }

    /// `body`'s fields next to `tool`, `version` and `config_hash`.
    pub fn json(&self, name: &str, body: &impl Serialize) -> Result<(), String> {
        let mut value = json!({ "tool": TOOL, "version": VERSION, "config_hash": self.hash });
        match serde_json::to_value(body).map_err(|e| e.to_string())? {
            Value::Object(fields) => value.as_object_mut().expect("object").extend(fields),
            other => {
                value["result"] = other;
            }
        }
        let text = serde_json::to_string_pretty(&value).map_err(|e| e.to_string())? + "\n";
        self.write(name, &text)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), String> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}

/// Shortest round-trip representation; `inf` marks an empty constraint set.
pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn cell(x: impl Display) -> String {
    x.to_string()
}

pub fn letters(x: &[u8]) -> String {
    x.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}
