//! Config-driven experiment runs, manifests and plot data.

pub mod calibrate;
pub mod config;
pub mod experiments;
pub mod plotdata;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, Kind, Params, Setup};
pub use experiments::Check;

use crate::error::{HjbError, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Exit status for an error that stopped a command before any manifest.
pub fn exit_code(e: &HjbError) -> i32 {
    match e {
        HjbError::Assertion { .. } | HjbError::Certificate { .. } => EXIT_FAIL,
        _ => EXIT_CONFIG,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRecord {
    pub kind: Kind,
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
    pub error: Option<String>,
    pub seconds: f64,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub invariant: String,
    pub pass: bool,
    pub detail: String,
}

impl From<Check> for CheckRecord {
    fn from(c: Check) -> Self {
        CheckRecord {
            invariant: c.invariant,
            pass: c.pass,
            detail: c.detail,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub kind: Kind,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub passed: bool,
    pub experiments: Vec<ExperimentRecord>,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }

    /// Names of failed invariants, with the experiment they belong to.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.experiments {
            if let Some(err) = &e.error {
                out.push(format!("{}: {err}", e.kind.name()));
            }
            for c in e.checks.iter().filter(|c| !c.pass) {
                out.push(format!("{}: {} ({})", e.kind.name(), c.invariant, c.detail));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HjbError::Config(format!("{}: {e}", path.display())))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub(crate) fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn list_files(root: &Path, dir: &Path) -> Result<Vec<FileEntry>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        if p.is_file() {
            let (sha256, bytes) = sha256_file(&p)?;
            let rel = p.strip_prefix(root).unwrap_or(&p);
            let path = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(FileEntry { path, sha256, bytes });
        }
    }
    Ok(out)
}

/// Runs the configured experiment(s) into `dir` and writes `manifest.json`.
///
/// Errors are returned only for problems that prevent any experiment from
/// starting; failures inside an experiment are recorded in the manifest.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let started = unix_now();
    let setup = cfg.build()?;
    fs::create_dir_all(dir)?;
    let kinds: Vec<Kind> = match cfg.kind {
        Kind::FullSuite => Kind::EXPERIMENTS.to_vec(),
        k => vec![k],
    };
    let records: Vec<ExperimentRecord> = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&kind| {
                let setup = &setup;
                scope.spawn(move || run_one(kind, cfg, setup, dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let passed = records.iter().all(|r| r.passed);
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        kind: cfg.kind,
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
        passed,
        experiments: records,
    };
    experiments::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn run_one(kind: Kind, cfg: &ExperimentConfig, setup: &Setup, root: &Path) -> Result<ExperimentRecord> {
    let sub = root.join(kind.name());
    if sub.exists() {
        fs::remove_dir_all(&sub)?;
    }
    fs::create_dir_all(&sub)?;
    let clock = Instant::now();
    let (checks, error) = match experiments::run_kind(kind, cfg, setup, &sub) {
        Ok(c) => (c, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let seconds = clock.elapsed().as_secs_f64();
    let passed = error.is_none() && checks.iter().all(|c| c.pass);
    Ok(ExperimentRecord {
        kind,
        passed,
        checks: checks.into_iter().map(CheckRecord::from).collect(),
        error,
        seconds,
        files: list_files(root, &sub)?,
    })
}

/// Loads a config file, applies overrides and runs it into its output directory.
pub fn run_path(path: &Path, overrides: &[String]) -> Result<(RunManifest, PathBuf)> {
    let cfg = ExperimentConfig::load(path, overrides)?;
    let dir = cfg.run_dir(Some(path));
    let m = run(&cfg, &dir)?;
    Ok((m, dir))
}
