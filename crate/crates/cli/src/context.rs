use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lipro_core::diffusion::PathSample;
use lipro_core::paths::GridPathMeasure;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SEED_VAR: &str = "LIPRO_SEED";

/// Bad input or parameters (exit 2). Failed checks are recorded on the
/// [`Context`] instead, so their outputs are still written.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
}

impl Failure {
    pub fn invalid(msg: impl Display) -> Self {
        Failure::Invalid(msg.to_string())
    }
}

impl From<lipro_core::Error> for Failure {
    fn from(e: lipro_core::Error) -> Self {
        Failure::invalid(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::invalid(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::invalid(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::invalid(e)
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn digest(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(bytes)),
    }
}

/// Everything a command touched, for the manifest.
#[derive(Debug, Default)]
pub struct Context {
    pub jobs: usize,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Set by a command whose checked property failed; outputs are still written.
    pub check_failure: Option<String>,
}

impl Context {
    pub fn new(jobs: usize) -> Self {
        Context {
            jobs,
            ..Default::default()
        }
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        self.inputs.push(digest(path, &bytes));
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
    }

    /// A measure document, or a sample document read as its empirical law.
    pub fn read_measure(&mut self, path: &Path) -> Result<GridPathMeasure> {
        let v: Value = self.read_json(path)?;
        let parsed = if v.get("atoms").is_some() {
            serde_json::from_value::<GridPathMeasure>(v)
        } else if v.get("paths").is_some() {
            serde_json::from_value::<PathSample>(v).and_then(|s| s.measure().map_err(serde::de::Error::custom))
        } else {
            return Err(Failure::invalid(format!(
                "{}: neither a measure (\"atoms\") nor a sample (\"paths\")",
                path.display()
            )));
        };
        parsed.map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
    }

    /// Writes `text` to `out`, or to stdout when no path is given.
    pub fn emit(&mut self, out: Option<&Path>, text: &str) -> Result<()> {
        match out {
            Some(path) => {
                fs::write(path, text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
                self.outputs.push(digest(path, text.as_bytes()));
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                stdout.flush()?;
            }
        }
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, out: Option<&Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.emit(out, &text)
    }

    /// The seed actually used: `LIPRO_SEED` when set, else `given`.
    pub fn seed(&mut self, given: u64) -> Result<u64> {
        let seed = match std::env::var(SEED_VAR) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Failure::invalid(format!("{SEED_VAR}={s:?} is not an unsigned integer")))?,
            Err(_) => given,
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn fail_check(&mut self, msg: impl Display) {
        if self.check_failure.is_none() {
            self.check_failure = Some(msg.to_string());
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema: u32,
    pub command: &'a str,
    pub params: Value,
    pub seed: Option<u64>,
    pub version: &'a str,
    pub inputs: &'a [FileDigest],
    pub outputs: &'a [FileDigest],
    pub check_failure: Option<&'a str>,
}

/// `--manifest` if given, else `<first output>.manifest.json`.
pub fn manifest_path(requested: Option<&Path>, ctx: &Context) -> Option<PathBuf> {
    requested.map(Path::to_path_buf).or_else(|| {
        ctx.outputs.first().map(|d| {
            let mut p = d.path.clone();
            p.push_str(".manifest.json");
            PathBuf::from(p)
        })
    })
}

pub fn write_manifest(path: &Path, command: &str, params: Value, ctx: &Context) -> Result<()> {
    let m = Manifest {
        schema: lipro_core::io::SCHEMA,
        command,
        params,
        seed: ctx.seed,
        version: env!("CARGO_PKG_VERSION"),
        inputs: &ctx.inputs,
        outputs: &ctx.outputs,
        check_failure: ctx.check_failure.as_deref(),
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// Renders rows as CSV with a header line.
pub fn csv_text<R: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: R) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(Failure::invalid)
}

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
