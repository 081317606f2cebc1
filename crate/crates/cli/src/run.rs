use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use gsbp::nets::NetError;
use gsbp::optim::OptimError;
use gsbp::orderparams::OrderError;
use gsbp::pinn::PinnError;
use gsbp::policy::PolicyError;
use gsbp::sde::SdeError;
use gsbp::sde_learn::FitError;
use gsbp::sinkhorn::SinkhornError;

/// Failures split by exit code: 2 for bad input, 3 for numerical breakdown.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::NonFinite { .. } => CliError::Numerical(format!("sde-sim: {e}")),
            e => CliError::Config(format!("sde-sim: {e}")),
        }
    }
}

impl From<SinkhornError> for CliError {
    fn from(e: SinkhornError) -> Self {
        match e {
            SinkhornError::NonFinite => CliError::Numerical(format!("sinkhorn: {e}")),
            e => CliError::Config(format!("sinkhorn: {e}")),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Config(format!("nets: {e}"))
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Diverged { .. } | FitError::Optim(OptimError::NonFinite(_)) => {
                CliError::Numerical(format!("sde-learn: {e}"))
            }
            e => CliError::Config(format!("sde-learn: {e}")),
        }
    }
}

impl From<PinnError> for CliError {
    fn from(e: PinnError) -> Self {
        match e {
            PinnError::NonFinite { .. } => CliError::Numerical(format!("gsbp-pinn: {e}")),
            PinnError::Sinkhorn(s) => CliError::from(s),
            PinnError::Sde(s) => CliError::from(s),
            e => CliError::Config(format!("gsbp-pinn: {e}")),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonFinite { .. } => CliError::Numerical(format!("policy-runtime: {e}")),
            PolicyError::Sde(s) => CliError::from(s),
            PolicyError::Sinkhorn(s) => CliError::from(s),
            e => CliError::Config(format!("policy-runtime: {e}")),
        }
    }
}

impl From<OrderError> for CliError {
    fn from(e: OrderError) -> Self {
        CliError::Config(format!("orderparams: {e}"))
    }
}

/// `out/<run>/{manifest.json, checkpoints/, results/}`.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, name: &str) -> Result<Self, CliError> {
        let root = out.join(name);
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("results"))?;
        Ok(RunDir { root })
    }

    pub fn results(&self, file: &str) -> PathBuf {
        self.root.join("results").join(file)
    }

    pub fn checkpoint(&self, file: &str) -> PathBuf {
        self.root.join("checkpoints").join(file)
    }

    /// Written first; the effective config is hashed in its canonical JSON form.
    pub fn write_manifest<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        seed: Option<u64>,
        threads: usize,
        inputs: &[&Path],
    ) -> Result<Manifest, CliError> {
        let config = serde_json::to_value(config)?;
        let mut inputs_hashed = Vec::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            inputs_hashed.push(InputFile { path: p.display().to_string(), sha256: hex(&Sha256::digest(&bytes)) });
        }
        let m = Manifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_sha256: hex(&Sha256::digest(serde_json::to_vec(&config)?)),
            config,
            seed,
            threads,
            inputs: inputs_hashed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::write(self.root.join("manifest.json"), serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<InputFile>,
    pub version: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}
