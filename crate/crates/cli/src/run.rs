//! Shared plumbing: error classes, config merging, metadata, file output.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Usage errors exit with 1, data errors with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub fn usage(msg: impl Display) -> Failure {
    Failure::Usage(msg.to_string())
}

pub fn data(msg: impl Display) -> Failure {
    Failure::Data(msg.to_string())
}

/// Attaches a failure class and context to foreign errors.
pub trait Classify<T> {
    fn usage_err(self, ctx: &str) -> Outcome<T>;
    fn data_err(self, ctx: &str) -> Outcome<T>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn usage_err(self, ctx: &str) -> Outcome<T> {
        self.map_err(|e| usage(format!("{ctx}: {e}")))
    }
    fn data_err(self, ctx: &str) -> Outcome<T> {
        self.map_err(|e| data(format!("{ctx}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool_version: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

/// Left out of the config hash: the seed has its own field, and the same
/// run written to two places should hash the same.
const UNHASHED_KEYS: [&str; 4] = ["seed", "out", "out_dir", "report"];

impl Metadata {
    pub fn new(seed: u64, resolved: &Value) -> Self {
        let mut v = resolved.clone();
        if let Value::Object(m) = &mut v {
            for k in UNHASHED_KEYS {
                m.remove(k);
            }
        }
        // serde_json maps are sorted, so this text is canonical.
        let hash = Sha256::digest(v.to_string().as_bytes());
        Self {
            tool_version: TOOL_VERSION,
            seed,
            config_hash: hex::encode(hash),
        }
    }

    pub fn csv_comment(&self) -> String {
        format!(
            "# tool_version={} seed={} config_hash={}\n",
            self.tool_version, self.seed, self.config_hash
        )
    }
}

pub fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).data_err(&format!("cannot read {}", path.display()))
}

pub fn read_bytes(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).data_err(&format!("cannot read {}", path.display()))
}

/// Checks inputs before any work starts.
pub fn require_files(paths: &[&Path]) -> Outcome<()> {
    for p in paths {
        if !p.is_file() {
            return Err(data(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

pub fn require_parent(path: &Path) -> Outcome<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(data(format!(
            "output directory {} does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

/// Overlays the top-level keys of a JSON config file on the flag values.
/// Keys the command does not know are usage errors.
pub fn overlay_config(flags: Value, config: Option<&Path>) -> Outcome<Value> {
    let Some(path) = config else { return Ok(flags) };
    let text = read_text(path)?;
    let file: Value =
        serde_json::from_str(&text).data_err(&format!("config {}", path.display()))?;
    let Value::Object(file) = file else {
        return Err(data(format!(
            "config {} must hold a JSON object",
            path.display()
        )));
    };
    let Value::Object(mut merged) = flags else {
        unreachable!("flag sets serialize to objects")
    };
    for (k, v) in file {
        if !merged.contains_key(&k) {
            return Err(usage(format!(
                "config {}: unknown key {k:?}",
                path.display()
            )));
        }
        merged.insert(k, v);
    }
    Ok(Value::Object(merged))
}

/// Flags → JSON, config overlay, back to the typed parameter set.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
) -> Outcome<(T, Value)> {
    let v = overlay_config(
        serde_json::to_value(flags).expect("flags serialize"),
        config,
    )?;
    let typed = serde_json::from_value(v.clone()).usage_err("config")?;
    Ok((typed, v))
}

/// `payload` as a JSON object with a `metadata` key added.
pub fn with_metadata(meta: &Metadata, payload: impl Serialize) -> Value {
    let mut obj = match serde_json::to_value(payload).expect("payload serializes") {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    obj.insert(
        "metadata".into(),
        serde_json::to_value(meta).expect("metadata serializes"),
    );
    Value::Object(obj)
}

/// Parses an artifact written by this tool, ignoring its metadata.
pub fn parse_artifact<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let mut v: Value =
        serde_json::from_str(&read_text(path)?).data_err(&path.display().to_string())?;
    if let Value::Object(m) = &mut v {
        m.remove("metadata");
    }
    serde_json::from_value(v).data_err(&path.display().to_string())
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome<()> {
    fs::write(path, bytes).data_err(&format!("cannot write {}", path.display()))
}

/// Writes JSON to `out`, or to stdout when no path is given.
pub fn emit_json(out: Option<&Path>, v: &Value) -> Outcome<()> {
    match out {
        Some(p) => write_file(p, to_pretty(v)),
        None => {
            print!("{}", to_pretty(v));
            Ok(())
        }
    }
}
