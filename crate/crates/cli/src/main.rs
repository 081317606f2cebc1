mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gsbp::orderparams::{steinhardt, ParticleConfiguration};
use gsbp::pinn::{self, PinnNet};
use gsbp::policy::{closed_loop, write_rollouts, GridSpec, PolicyTable, RolloutConfig};
use gsbp::sde::{generate_dataset, Dynamics, GaussianSampler, RampInput, SyntheticTruth, TrajectoryDataset};
use gsbp::sde_learn::{self, SdeFitConfig};
use gsbp::sinkhorn::{sinkhorn_divergence, sinkhorn_loss, DiscreteMeasure};

use config::SolveFile;
use run::{write_json, CliError, RunDir};

#[derive(Parser)]
#[command(name = "gsbp", version, about = "Generalized Schrödinger bridge control pipeline")]
struct Cli {
    /// Output root; each run writes to <out>/<run>.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run name (defaults to the subcommand).
    #[arg(long, global = true)]
    run: Option<String>,
    /// Worker threads (default: all cores; 1 is bit-reproducible).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ramp-input trajectories of the synthetic truth.
    GenData(GenData),
    /// Fit a neural SDE to a trajectory dataset.
    FitSde(FitSde),
    /// Train the PINN on a GSBP instance.
    Solve(Solve),
    /// Closed-loop rollouts under a tabulated trained policy.
    Rollout(Rollout),
    /// Sinkhorn loss between two weighted point clouds.
    Ot(Ot),
    /// Steinhardt bond order parameters of a periodic configuration.
    Orderparams(OrderParams),
}

#[derive(Args, Serialize)]
struct GenData {
    #[arg(long, default_value_t = 200)]
    n_traj: usize,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Horizon in seconds.
    #[arg(long = "T", alias = "t-end", default_value_t = 200.0)]
    t_end: f64,
    /// Integrator steps (default: samples − 1).
    #[arg(long)]
    steps: Option<usize>,
    /// Diffusion multiplier; 0 gives noiseless data.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct FitSde {
    /// Trajectory CSV written by gen-data (sidecar JSON alongside).
    #[arg(long)]
    data: PathBuf,
    /// 1: 1×200, 2: 1×1000, 3: 6×200.
    #[arg(long, default_value_t = 1)]
    arch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.25)]
    batch_fraction: f64,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct Solve {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct Rollout {
    /// Same run file as `solve` (problem section is used).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained network (results/net.json of a solve run).
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 150)]
    paths: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Policy grid points per axis.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 256)]
    target_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct Ot {
    /// CSV with columns x1..xn and an optional weight.
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Report the cross term instead of the debiased divergence.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Serialize)]
struct OrderParams {
    /// CSV with columns id,x,y,z.
    positions: PathBuf,
    /// Periodic cell extents Lx,Ly,Lz.
    #[arg(long = "box", value_delimiter = ',', required = true)]
    cell: Vec<f64>,
    #[arg(long)]
    cutoff: f64,
    /// Degrees to compute.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 12])]
    l: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(CliError::config)?;
    }
    let threads = rayon::current_num_threads();
    let name = |default: &str| cli.run.clone().unwrap_or_else(|| default.to_string());
    match &cli.command {
        Command::GenData(a) => gen_data(a, &RunDir::create(&cli.out, &name("gen-data"))?, threads),
        Command::FitSde(a) => fit_sde(a, &RunDir::create(&cli.out, &name("fit-sde"))?, threads),
        Command::Solve(a) => solve(a, &RunDir::create(&cli.out, &name("solve"))?, threads),
        Command::Rollout(a) => rollout(a, &RunDir::create(&cli.out, &name("rollout"))?, threads),
        Command::Ot(a) => ot(a, &RunDir::create(&cli.out, &name("ot"))?, threads),
        Command::Orderparams(a) => orderparams(a, &RunDir::create(&cli.out, &name("orderparams"))?, threads),
    }
}

fn gen_data(a: &GenData, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    if a.n_traj == 0 {
        return Err(CliError::Config("--n-traj must be at least 1".into()));
    }
    if a.samples < 2 {
        return Err(CliError::Config("--samples must be at least 2".into()));
    }
    dir.write_manifest("gen-data", a, Some(a.seed), threads, &[])?;
    let truth = SyntheticTruth { noise_scale: a.noise, ..SyntheticTruth::default() };
    let designs = RampInput::latin_designs(a.n_traj, &[SyntheticTruth::INTERCEPT; 2], a.seed);
    let x0 = GaussianSampler::isotropic(vec![0.2, 0.2], 0.1, Some(SyntheticTruth::STATE_BOX.to_vec()))?;
    let steps = a.steps.unwrap_or(a.samples - 1);
    let ds = generate_dataset(&Dynamics::Synthetic(truth), &designs, &x0, a.t_end, steps, a.samples, a.seed)?;
    let path = dir.results("dataset.csv");
    ds.write(&path)?;
    println!("wrote {} trajectories × {} samples to {}", ds.len(), a.samples, path.display());
    Ok(())
}

fn fit_sde(a: &FitSde, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    let hidden = SdeFitConfig::architecture(a.arch)
        .ok_or_else(|| CliError::Config(format!("unknown architecture {}", a.arch)))?;
    let ds = TrajectoryDataset::read(&a.data)?;
    let mut cfg = SdeFitConfig::new(ds.meta.state_dim, ds.meta.control_dim, ds.meta.state_dim, &hidden);
    cfg.epochs = a.epochs;
    cfg.lr0 = a.lr;
    cfg.batch_fraction = a.batch_fraction;
    cfg.window = a.window;
    cfg.stride = a.stride;
    cfg.seed = a.seed;
    dir.write_manifest("fit-sde", &cfg, Some(a.seed), threads, &[a.data.as_path()])?;
    let split = sde_learn::split(&ds, a.seed)?;
    let t0 = Instant::now();
    let r = sde_learn::fit(&cfg, &split)?;
    r.model.save(&dir.checkpoint("best.json"))?;
    r.model.save(&dir.results("model.json"))?;
    sde_learn::write_history(&r.history, &dir.results("history.csv"))?;
    write_json(
        &dir.results("summary.json"),
        &serde_json::json!({
            "best_epoch": r.best_epoch,
            "best_val": r.best_val,
            "train": split.train.len(),
            "test": split.test.len(),
            "validation": split.validation.len(),
            "seconds": t0.elapsed().as_secs_f64(),
        }),
    )?;
    println!("best validation loss {:.6e} at epoch {:?}", r.best_val, r.best_epoch);
    Ok(())
}

fn load_solve_file(path: Option<&Path>) -> Result<(SolveFile, PathBuf), CliError> {
    match path {
        Some(p) => Ok((SolveFile::read(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default())),
        None => Ok((SolveFile::default(), PathBuf::from("."))),
    }
}

fn solve(a: &Solve, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    let (mut file, base) = load_solve_file(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        file.pinn.epochs = e;
    }
    if let Some(lr) = a.lr {
        file.pinn.lr = lr;
    }
    if let Some(s) = a.seed {
        file.pinn.seed = s;
    }
    let inputs: Vec<&Path> = a.config.iter().map(PathBuf::as_path).collect();
    dir.write_manifest("solve", &file, Some(file.pinn.seed), threads, &inputs)?;
    std::fs::write(dir.results("config.toml"), file.to_toml()?)?;
    let problem = file.problem.build(&base)?;
    let every = file.output.checkpoint_every;
    let mut ckpt_err = None;
    let mut observer = |epoch: usize, net: &PinnNet, r: &pinn::LossReport| {
        if every > 0 && epoch > 0 && epoch % every == 0 {
            log::info!("epoch {epoch}: total {:.4e}", r.total);
            if let Err(e) = net.save(&dir.checkpoint(&format!("epoch_{epoch:06}.json"))) {
                ckpt_err.get_or_insert(e);
            }
        }
    };
    let t0 = Instant::now();
    let result = pinn::train(&problem, &file.pinn, Some(&mut observer))?;
    if let Some(e) = ckpt_err {
        return Err(e.into());
    }
    let net = result.net;
    net.save(&dir.results("net.json"))?;
    pinn::write_history(&result.history, &dir.results("history.csv"))?;
    let [nt, nx] = file.output.grid;
    let grid = pinn::solution_grid(&net, &problem, nt, nx);
    pinn::write_grid(&grid, net.controls, &dir.results("grid.csv"))?;
    let mut b = (0.0, 0.0);
    for s in 0..8 {
        let v = pinn::boundary_loss(
            &net,
            &problem,
            file.pinn.boundary_batch,
            file.pinn.eps,
            file.pinn.sinkhorn_iters,
            1_000 + s,
        )?;
        b = (b.0 + v.0 / 8.0, b.1 + v.1 / 8.0);
    }
    let last = result.history.last().cloned();
    let total = last.as_ref().map_or(f64::NAN, |r| r.total);
    write_json(
        &dir.results("summary.json"),
        &serde_json::json!({
            "final": last,
            "boundary_rho0": b.0,
            "boundary_rhoT": b.1,
            "mass_t0": pinn::mass(&net, &problem, 0.0, 101),
            "mass_tmid": pinn::mass(&net, &problem, 0.5 * problem.horizon, 101),
            "mass_tT": pinn::mass(&net, &problem, problem.horizon, 101),
            "saturation": pinn::saturation(&net, &problem, nt, nx),
            "seconds": t0.elapsed().as_secs_f64(),
            "gate": file.output.gate,
        }),
    )?;
    println!("final total loss {total:.6e}; boundary losses {:.3e} / {:.3e}", b.0, b.1);
    if let Some(g) = file.output.gate {
        if !(total <= g) {
            return Err(CliError::Numerical(format!("gsbp-pinn: final total {total:.4e} above gate {g:.4e}")));
        }
    }
    Ok(())
}

fn rollout(a: &Rollout, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    let (file, base) = load_solve_file(a.config.as_deref())?;
    let mut inputs: Vec<&Path> = a.config.iter().map(PathBuf::as_path).collect();
    inputs.push(&a.net);
    dir.write_manifest("rollout", &(&file.problem, a), Some(a.seed), threads, &inputs)?;
    let problem = file.problem.build(&base)?;
    let net = PinnNet::load(&a.net).map_err(|e| CliError::Config(format!("{}: {e}", a.net.display())))?;
    let grid = GridSpec::new(problem.horizon, problem.state_box.to_vec(), vec![a.grid; 3])?;
    let table = PolicyTable::build(&net, &grid, Some(a.net.display().to_string()))?;
    let cfg = RolloutConfig {
        paths: a.paths,
        steps: a.steps,
        horizon: problem.horizon,
        seed: a.seed,
        eps: a.eps,
        target_size: a.target_size,
    };
    let r = closed_loop(&table, &problem.dynamics, &problem.rho0, &problem.rho_t, &cfg)?;
    write_rollouts(&r.paths, std::fs::File::create(dir.results("rollouts.csv"))?)?;
    write_json(&dir.results("endpoints.json"), &r.stats)?;
    println!("endpoint mean {:?}, Sinkhorn divergence to target {:.4e}", r.stats.mean, r.stats.sinkhorn);
    Ok(())
}

fn read_cloud(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let header = rd.headers()?.clone();
    let wcol = header.iter().position(|h| h.trim() == "weight");
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for row in rd.records() {
        let row = row?;
        let mut p = Vec::new();
        for (k, v) in row.iter().enumerate() {
            let v: f64 =
                v.trim().parse().map_err(|_| CliError::Config(format!("{}: bad number `{v}`", path.display())))?;
            if Some(k) == wcol {
                weights.push(v);
            } else {
                p.push(v);
            }
        }
        points.push(p);
    }
    let m = if wcol.is_some() {
        DiscreteMeasure::from_masses(points, &weights)?
    } else {
        DiscreteMeasure::uniform(points)?
    };
    Ok(m)
}

fn ot(a: &Ot, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    dir.write_manifest("ot", a, None, threads, &[a.a.as_path(), a.b.as_path()])?;
    let ma = read_cloud(&a.a)?;
    let mb = read_cloud(&a.b)?;
    let loss = if a.raw { sinkhorn_loss(&ma, &mb, a.eps)? } else { sinkhorn_divergence(&ma, &mb, a.eps)? };
    write_json(&dir.results("ot.json"), &serde_json::json!({ "loss": loss, "eps": a.eps, "debiased": !a.raw }))?;
    println!("{loss:.12e}");
    Ok(())
}

fn orderparams(a: &OrderParams, dir: &RunDir, threads: usize) -> Result<(), CliError> {
    if a.cell.len() != 3 {
        return Err(CliError::Config(format!("--box needs three extents, got {}", a.cell.len())));
    }
    dir.write_manifest("orderparams", a, None, threads, &[a.positions.as_path()])?;
    let mut rd = csv::Reader::from_path(&a.positions)
        .map_err(|e| CliError::Config(format!("{}: {e}", a.positions.display())))?;
    let mut ids = Vec::new();
    let mut pos = Vec::new();
    for row in rd.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(CliError::Config("positions need columns id,x,y,z".into()));
        }
        let f =
            |k: usize| row[k].trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad number `{}`", &row[k])));
        ids.push(row[0].trim().to_string());
        pos.push([f(1)?, f(2)?, f(3)?]);
    }
    let cell = [a.cell[0], a.cell[1], a.cell[2]];
    let cfg = ParticleConfiguration::new(pos, cell, a.cutoff)?;
    let results = a.l.iter().map(|&l| steinhardt(&cfg, l)).collect::<Result<Vec<_>, _>>()?;
    let mut w = csv::Writer::from_path(dir.results("orderparams.csv"))?;
    let mut header = vec!["id".to_string()];
    header.extend(a.l.iter().map(|l| format!("C_{l}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(results.iter().map(|r| r.per_particle[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let means: Vec<(usize, f64)> = results.iter().map(|r| (r.l, r.mean)).collect();
    write_json(&dir.results("means.json"), &means)?;
    for (l, m) in means {
        println!("<C_{l}> = {m:.12}");
    }
    Ok(())
}
