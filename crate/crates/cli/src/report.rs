use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Summary printed on stdout as one JSON object after every command.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// sha256 over every input file, in argument order.
    pub inputs_digest: String,
    pub outputs: Vec<PathBuf>,
    pub metrics: Map<String, Value>,
    pub wall_clock_s: f64,
}

pub struct Recorder {
    command: String,
    hasher: Sha256,
    outputs: Vec<PathBuf>,
    pub metrics: Map<String, Value>,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.into(),
            hasher: Sha256::new(),
            outputs: Vec::new(),
            metrics: Map::new(),
            start: Instant::now(),
        }
    }

    /// Folds a file, or every file below a directory in sorted order, into
    /// the input digest. Unreadable paths are skipped; the loader reports them.
    pub fn input(&mut self, path: &Path) {
        let mut files = Vec::new();
        collect_files(path, &mut files);
        for f in files {
            if let Ok(bytes) = fs::read(&f) {
                self.hasher.update((bytes.len() as u64).to_le_bytes());
                self.hasher.update(&bytes);
            }
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn finish(self) -> RunReport {
        RunReport {
            command: self.command,
            inputs_digest: hex::encode(self.hasher.finalize()),
            outputs: self.outputs,
            metrics: self.metrics,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
        }
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) {
    if path.is_dir() {
        let Ok(entries) = fs::read_dir(path) else { return };
        let mut children: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        children.sort();
        for c in children {
            collect_files(&c, out);
        }
    } else {
        out.push(path.to_path_buf());
    }
}
