use std::path::Path as FsPath;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sim::{euler_maruyama_rng, latin_hypercube, GaussianSampler, Policy};
use super::{Dynamics, SdeError, SyntheticTruth};

/// Open-loop linear ramp `u(t) = intercept + slope·t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampInput {
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl RampInput {
    pub const SLOPE_BOX: (f64, f64) = (-0.005, 0.005);

    pub fn at(&self, t: f64) -> Vec<f64> {
        self.intercept.iter().zip(&self.slope).map(|(c, s)| c + s * t).collect()
    }

    /// Fails unless the ramp stays inside `bounds` over `[0, t_end]`.
    pub fn check(&self, bounds: &[(f64, f64)], t_end: f64) -> Result<(), SdeError> {
        if self.slope.len() != bounds.len() || self.intercept.len() != bounds.len() {
            return Err(SdeError::Config(format!(
                "ramp has {} channels, input box {}",
                self.slope.len(),
                bounds.len()
            )));
        }
        for (ch, &(lo, hi)) in bounds.iter().enumerate() {
            for u in [self.intercept[ch], self.intercept[ch] + self.slope[ch] * t_end] {
                if u < lo - 1e-12 || u > hi + 1e-12 {
                    return Err(SdeError::Config(format!("ramp channel {ch} leaves [{lo}, {hi}] (reaches {u})")));
                }
            }
        }
        Ok(())
    }

    /// `count` ramps with Latin-hypercube slopes in [`SLOPE_BOX`](Self::SLOPE_BOX) per channel.
    pub fn latin_designs(count: usize, intercept: &[f64], seed: u64) -> Vec<RampInput> {
        let bounds = vec![Self::SLOPE_BOX; intercept.len()];
        latin_hypercube(count, &bounds, seed)
            .into_iter()
            .map(|slope| RampInput { slope, intercept: intercept.to_vec() })
            .collect()
    }
}

impl Policy for RampInput {
    fn control(&self, t: f64, _x: &[f64]) -> Vec<f64> {
        self.at(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub records: Vec<Record>,
}

impl Trajectory {
    /// Sample spacing; records are equispaced.
    pub fn dt(&self) -> f64 {
        self.records[1].t - self.records[0].t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub dynamics: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub t_end: f64,
    /// Integrator steps per trajectory.
    pub steps: usize,
    pub samples_per_traj: usize,
    pub n_traj: usize,
    pub designs: Vec<RampInput>,
    pub x0: Option<GaussianSampler>,
}

impl DatasetMeta {
    /// Integrator steps between consecutive records.
    pub fn substeps(&self) -> usize {
        self.steps / (self.samples_per_traj - 1).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

/// One trajectory per design, each from RNG stream `(seed, index)`, subsampled
/// to `samples_per_traj` equispaced records including both endpoints.
pub fn generate_dataset(
    dynamics: &Dynamics,
    designs: &[RampInput],
    x0: &GaussianSampler,
    t_end: f64,
    steps: usize,
    samples_per_traj: usize,
    seed: u64,
) -> Result<TrajectoryDataset, SdeError> {
    if designs.is_empty() {
        return Err(SdeError::Config("at least one design is required".into()));
    }
    if samples_per_traj < 2 {
        return Err(SdeError::Config("samples_per_traj must be >= 2".into()));
    }
    if steps == 0 || steps % (samples_per_traj - 1) != 0 {
        return Err(SdeError::Config(format!(
            "steps ({steps}) must be a positive multiple of samples_per_traj - 1 ({})",
            samples_per_traj - 1
        )));
    }
    if x0.dim() != dynamics.state_dim() {
        return Err(SdeError::Config("initial-state sampler dimension mismatch".into()));
    }
    for d in designs {
        if d.slope.len() != dynamics.control_dim() {
            return Err(SdeError::Config("design dimension does not match the control dimension".into()));
        }
        if matches!(dynamics, Dynamics::Synthetic(_)) {
            d.check(&SyntheticTruth::INPUT_BOX, t_end)?;
        }
    }
    let stride = steps / (samples_per_traj - 1);
    let trajectories = designs
        .par_iter()
        .enumerate()
        .map(|(id, design)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let start = x0.sample(&mut rng)?;
            let path = euler_maruyama_rng(dynamics, &start, design, t_end, steps, &mut rng)?;
            let records = (0..samples_per_traj)
                .map(|k| {
                    let s = k * stride;
                    Record { t: path.t[s], x: path.x[s].clone(), u: path.u[s].clone() }
                })
                .collect();
            Ok(Trajectory { id, records })
        })
        .collect::<Result<Vec<_>, SdeError>>()?;
    let meta = DatasetMeta {
        seed,
        dynamics: dynamics.id().to_string(),
        state_dim: dynamics.state_dim(),
        control_dim: dynamics.control_dim(),
        t_end,
        steps,
        samples_per_traj,
        n_traj: designs.len(),
        designs: designs.to_vec(),
        x0: Some(x0.clone()),
    };
    Ok(TrajectoryDataset { trajectories, meta })
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Same metadata, a subset of trajectories (ids are kept).
    pub fn subset(&self, ids: &[usize]) -> TrajectoryDataset {
        let trajectories: Vec<Trajectory> =
            ids.iter().map(|&i| self.trajectories.iter().find(|t| t.id == i).expect("id in dataset").clone()).collect();
        let mut meta = self.meta.clone();
        meta.n_traj = trajectories.len();
        TrajectoryDataset { trajectories, meta }
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, w: W) -> Result<(), SdeError> {
        let (n, m) = (self.meta.state_dim, self.meta.control_dim);
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wr.write_record(&header)?;
        let mut row = Vec::with_capacity(2 + n + m);
        for tr in &self.trajectories {
            for r in &tr.records {
                row.clear();
                row.push(tr.id.to_string());
                row.push(r.t.to_string());
                row.extend(r.x.iter().chain(&r.u).map(|v| v.to_string()));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SdeError> {
        let mut buf = Vec::new();
        self.to_csv_writer(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Writes `path` (CSV) and the metadata sidecar `path.with_extension("json")`.
    pub fn write(&self, path: &FsPath) -> Result<(), SdeError> {
        let f = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(f))?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads a trajectory CSV and, when present, its JSON sidecar. Without a
    /// sidecar the metadata is reconstructed from the table.
    pub fn read(path: &FsPath) -> Result<TrajectoryDataset, SdeError> {
        let text = std::fs::read_to_string(path)?;
        let mut ds = Self::from_csv_str(&text)?;
        let side = sidecar(path);
        if side.exists() {
            let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(side)?)?;
            if meta.state_dim != ds.meta.state_dim || meta.control_dim != ds.meta.control_dim {
                return Err(SdeError::Parse("sidecar dimensions disagree with the CSV header".into()));
            }
            ds.meta = meta;
        }
        Ok(ds)
    }

    pub fn from_csv_str(text: &str) -> Result<TrajectoryDataset, SdeError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "traj_id" || cols[1] != "t" {
            return Err(SdeError::Parse("expected header traj_id,t,x1..xn,u1..um".into()));
        }
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if n == 0 || 2 + n + m != cols.len() {
            return Err(SdeError::Parse(format!("unrecognized columns: {}", cols.join(","))));
        }
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64, SdeError> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| SdeError::Parse(format!("row {}: bad number {:?}", line + 2, &rec[k])))
            };
            let id: usize =
                rec[0].trim().parse().map_err(|_| SdeError::Parse(format!("row {}: bad traj_id", line + 2)))?;
            let r = Record {
                t: num(1)?,
                x: (2..2 + n).map(num).collect::<Result<_, _>>()?,
                u: (2 + n..2 + n + m).map(num).collect::<Result<_, _>>()?,
            };
            match trajectories.last_mut() {
                Some(tr) if tr.id == id => {
                    if r.t <= tr.records.last().expect("non-empty").t {
                        return Err(SdeError::Parse(format!("row {}: time stamps must increase", line + 2)));
                    }
                    tr.records.push(r)
                }
                _ => {
                    if trajectories.iter().any(|t| t.id == id) {
                        return Err(SdeError::Parse(format!("row {}: trajectory {id} is not contiguous", line + 2)));
                    }
                    trajectories.push(Trajectory { id, records: vec![r] })
                }
            }
        }
        if trajectories.is_empty() {
            return Err(SdeError::Parse("no records".into()));
        }
        let k = trajectories[0].records.len();
        let t_end = trajectories[0].records[k - 1].t;
        let meta = DatasetMeta {
            seed: 0,
            dynamics: "unknown".into(),
            state_dim: n,
            control_dim: m,
            t_end,
            steps: k.saturating_sub(1),
            samples_per_traj: k,
            n_traj: trajectories.len(),
            designs: Vec::new(),
            x0: None,
        };
        Ok(TrajectoryDataset { trajectories, meta })
    }
}

fn sidecar(path: &FsPath) -> std::path::PathBuf {
    path.with_extension("json")
}
