//! TOML run file for `solve` and `rollout`.
//!
//! ```toml
//! [problem]
//! dynamics = "classical-sbp"   # or "omt", "neural" (needs `model`)
//! m0 = [0.2, 0.2]
//! cov0 = [0.1, 0.0, 0.0, 0.1]
//! m_t = [0.4, 0.375]
//! cov_t = [0.1, 0.0, 0.0, 0.1]
//! horizon = 1.0
//! state_box = [[0.0, 1.0], [0.0, 1.0]]
//!
//! [pinn]
//! hidden = [32, 32]
//! n_colloc = 500
//! epochs = 5000
//! lr = 1e-3
//!
//! [output]
//! checkpoint_every = 1000
//! grid = [21, 41]     # time points, points per state axis
//! gate = 1e-2         # optional bound on the final total loss
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gsbp::pinn::{GsbpProblem, PinnConfig};
use gsbp::sde::Dynamics;
use gsbp::sde_learn::NeuralSde;

use crate::run::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub dynamics: String,
    pub model: Option<PathBuf>,
    pub m0: [f64; 2],
    pub cov0: [f64; 4],
    pub m_t: [f64; 2],
    pub cov_t: [f64; 4],
    pub horizon: f64,
    pub state_box: [[f64; 2]; 2],
    pub control_box: Option<Vec<[f64; 2]>>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            dynamics: "classical-sbp".into(),
            model: None,
            m0: [0.2, 0.2],
            cov0: [0.1, 0.0, 0.0, 0.1],
            m_t: [0.4, 0.375],
            cov_t: [0.1, 0.0, 0.0, 0.1],
            horizon: 1.0,
            state_box: [[0.0, 1.0], [0.0, 1.0]],
            control_box: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub checkpoint_every: usize,
    pub grid: [usize; 2],
    pub gate: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { checkpoint_every: 1000, grid: [21, 41], gate: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveFile {
    pub problem: ProblemConfig,
    pub pinn: PinnConfig,
    pub output: OutputConfig,
}

impl SolveFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(CliError::config)
    }
}

impl ProblemConfig {
    /// Relative model paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<GsbpProblem, CliError> {
        let dynamics = match self.dynamics.as_str() {
            "classical-sbp" => Dynamics::ClassicalSbp { n: 2 },
            "omt" => Dynamics::Omt { n: 2 },
            "neural" => {
                let p = self.model.as_ref().ok_or_else(|| CliError::Config("neural dynamics need `model`".into()))?;
                let p = if p.is_relative() { base.join(p) } else { p.clone() };
                Dynamics::Neural(Box::new(
                    NeuralSde::load(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
                ))
            }
            other => return Err(CliError::Config(format!("unknown dynamics `{other}`"))),
        };
        let b = self.state_box;
        let mut problem = GsbpProblem::new(
            dynamics,
            self.m0,
            self.cov0,
            self.m_t,
            self.cov_t,
            self.horizon,
            [(b[0][0], b[0][1]), (b[1][0], b[1][1])],
        )?;
        problem.control_box = self.control_box.as_ref().map(|c| c.iter().map(|r| (r[0], r[1])).collect());
        Ok(problem)
    }
}
