//! Run manifests: plain `key=value` lines recording a command, every
//! resolved option, the files it writes, and wall-clock timestamps.
//!
//! Option values are stored under `arg.<name>`; [`replay_argv`] turns them
//! back into a command line, so a saved manifest reruns the same command.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Keys whose values differ between otherwise identical runs.
pub const VOLATILE_KEYS: [&str; 2] = ["started_unix_ms", "finished_unix_ms"];

const ARG_PREFIX: &str = "arg.";

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Array(items) => Some(items.iter().filter_map(scalar).collect::<Vec<_>>().join(",")),
        Value::Object(_) => Some(v.to_string()),
    }
}

/// A manifest being assembled for one command run.
#[derive(Clone, Debug)]
pub struct RunManifest {
    path: PathBuf,
    entries: Vec<(String, String)>,
    outputs: usize,
}

impl RunManifest {
    pub fn new(command: &str, path: impl Into<PathBuf>) -> Self {
        let mut m = Self {
            path: path.into(),
            entries: Vec::new(),
            outputs: 0,
        };
        m.set("command", command);
        m.set("tool", concat!("gradfaith ", env!("CARGO_PKG_VERSION")));
        m.set("started_unix_ms", unix_ms());
        m
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        let value = value.to_string().replace(['\n', '\r'], " ");
        self.entries.push((key.to_string(), value));
    }

    /// Records every field of a serializable options struct as `arg.<field>`.
    pub fn args<T: Serialize>(&mut self, args: &T) {
        self.fields(ARG_PREFIX, args);
    }

    /// Records every field of a serializable value as `<prefix><field>`.
    pub fn fields<T: Serialize>(&mut self, prefix: &str, value: &T) {
        if let Ok(Value::Object(map)) = serde_json::to_value(value) {
            for (k, v) in &map {
                if let Some(s) = scalar(v) {
                    self.set(&format!("{prefix}{k}"), s);
                }
            }
        }
    }

    pub fn output(&mut self, path: &Path) {
        let key = format!("output.{}", self.outputs);
        self.outputs += 1;
        self.set(&key, path.display());
    }

    fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes the manifest as it stands.
    pub fn write(&self) -> CliResult<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&self.path, self.render()).map_err(|e| CliError::io(&self.path, e))
    }

    /// Adds the finish timestamp and rewrites the file.
    pub fn finish(mut self) -> CliResult<()> {
        self.set("finished_unix_ms", unix_ms());
        self.write()
    }
}

/// A manifest read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedManifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl SavedManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> CliResult<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected key=value".into(),
                });
            };
            entries.push((k.to_string(), v.to_string()));
        }
        let command = entries
            .iter()
            .find(|(k, _)| k == "command")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| CliError::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "no command entry".into(),
            })?;
        Ok(Self { command, entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `(option id, value)` pairs in file order.
    pub fn args(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(ARG_PREFIX).map(|id| (id, v.as_str())))
    }

    /// Entries with the volatile timestamp lines removed.
    pub fn stable_entries(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .filter(|(k, _)| !VOLATILE_KEYS.contains(&k.as_str()))
            .cloned()
            .collect()
    }
}

/// Rebuilds the command line a manifest was produced by. `flag_of` maps an
/// option id to its long flag name.
pub fn replay_argv(saved: &SavedManifest, flag_of: impl Fn(&str) -> Option<String>) -> CliResult<Vec<String>> {
    let mut argv = vec!["gradfaith".to_string(), saved.command.clone()];
    for (id, value) in saved.args() {
        let flag = flag_of(id).ok_or_else(|| {
            CliError::Usage(format!(
                "manifest option {id:?} is not an option of `{}`",
                saved.command
            ))
        })?;
        if value.is_empty() {
            continue;
        }
        argv.push(format!("--{flag}"));
        argv.push(value.to_string());
    }
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Opts {
        out: PathBuf,
        seeds: Vec<u64>,
        lr: f64,
        shuffle: bool,
        capture: Option<String>,
    }

    #[test]
    fn args_round_trip_through_text() {
        let mut m = RunManifest::new("train", "x.manifest");
        m.args(&Opts {
            out: "runs".into(),
            seeds: vec![1, 2, 3],
            lr: 0.01,
            shuffle: true,
            capture: None,
        });
        m.output(Path::new("runs/a.gfck"));
        let saved = SavedManifest::parse(Path::new("x"), &m.render()).unwrap();
        assert_eq!(saved.command, "train");
        let args: Vec<_> = saved.args().collect();
        assert_eq!(
            args,
            vec![("lr", "0.01"), ("out", "runs"), ("seeds", "1,2,3"), ("shuffle", "true")]
        );
        assert_eq!(saved.get("output.0"), Some("runs/a.gfck"));
        let argv = replay_argv(&saved, |id| Some(id.replace('_', "-"))).unwrap();
        assert_eq!(argv[..4], ["gradfaith", "train", "--lr", "0.01"]);
        assert!(saved.stable_entries().iter().all(|(k, _)| k != "started_unix_ms"));
    }

    #[test]
    fn malformed_lines_are_parse_errors() {
        let e = SavedManifest::parse(Path::new("m"), "command=x\nnot a pair\n").unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 2, .. }));
        assert!(SavedManifest::parse(Path::new("m"), "a=b\n").is_err());
    }
}
