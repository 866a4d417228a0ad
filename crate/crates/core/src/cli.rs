//! Experiment configuration, run directories and the command-line verbs.
//!
//! A run directory holds `config.toml` (the effective configuration),
//! `inputs.sha256` (a git-style content hash of that file),
//! `checkpoint.json`, `training_log.csv`, `bound_report.json` and
//! `summary.csv`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::fd_check;
use crate::besov::{criterion, CriterionId};
use crate::bounds::{bound_report, BoundReport, NetworkShape, SupGrid};
use crate::error::{Error, Result};
use crate::loss::{SetSizes, TrainingObjective, TrainingSets};
use crate::network::{load_checkpoint, save_checkpoint, CheckpointMeta, MlpParams};
use crate::optim::{train, LogRow, Objective, Schedule};
use crate::physics::{exact_solution, Manufactured, Problem, DIM, PERIOD};
use crate::spectral::{read_trajectory, solve, write_trajectory, Forcing, GridField, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    Midpoint,
    UniformRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Grid points per axis (power of two).
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub snapshot_every: usize,
    /// Add the manufactured forcing.
    pub forcing: bool,
    pub nonlinear: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n: 64,
            dt: 1e-3,
            horizon: 1.0,
            snapshot_every: 10,
            forcing: true,
            nonlinear: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub lambda: f64,
    pub horizon: f64,
    pub widths: Vec<usize>,
    pub seed: u64,
    pub m_int: usize,
    pub m_sb: usize,
    pub m_t: usize,
    /// Per-axis refinement of the generalization-error sets.
    pub fine_factor: usize,
    /// Subtract the manufactured forcing in the interior residual.
    pub mms: bool,
    pub quadrature: QuadratureKind,
    pub out_dir: PathBuf,
    pub schedule: Schedule,
    pub sup_grid: SupGrid,
    pub m_int_sweep: Vec<usize>,
    pub neuron_sweep: Vec<usize>,
    pub simulation: SimulationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            lambda: 0.01,
            horizon: 1.0,
            widths: vec![3, 80, 80, 2],
            seed: 1,
            m_int: 10_000,
            m_sb: 1000,
            m_t: 1000,
            fine_factor: 2,
            mms: true,
            quadrature: QuadratureKind::Midpoint,
            out_dir: PathBuf::from("runs"),
            schedule: Schedule::full(),
            sup_grid: SupGrid::default(),
            m_int_sweep: vec![10_000, 15_000, 20_000],
            neuron_sweep: vec![20, 40, 80],
            simulation: SimulationConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    (before.matches('\n').count() + 1, s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1)
                })
                .unwrap_or((0, 0));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                column,
                msg: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.lambda, self.horizon, self.mms).map_err(|e| config_err(e.to_string()))
    }

    pub fn sizes(&self) -> SetSizes {
        SetSizes {
            m_int: self.m_int,
            m_sb: self.m_sb,
            m_t: self.m_t,
        }
    }

    pub fn training_sets(&self) -> Result<TrainingSets> {
        match self.quadrature {
            QuadratureKind::Midpoint => TrainingSets::midpoint(self.sizes(), self.horizon),
            QuadratureKind::UniformRandom => TrainingSets::uniform_random(self.sizes(), self.horizon, self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem()?;
        let w = &self.widths;
        if w.len() < 3 || w[0] != DIM + 1 || w[w.len() - 1] != DIM || w.contains(&0) {
            return Err(config_err(format!("widths must be [3, ..., 2] with at least one hidden layer, got {w:?}")));
        }
        if self.m_int < 8 || self.m_sb < 2 || self.m_t < 1 {
            return Err(config_err(format!(
                "quadrature sizes too small: m_int={}, m_sb={}, m_t={}",
                self.m_int, self.m_sb, self.m_t
            )));
        }
        if self.fine_factor == 0 {
            return Err(config_err("fine_factor must be at least 1"));
        }
        self.schedule.validate().map_err(|e| config_err(e.to_string()))?;
        let g = &self.sup_grid;
        if g.nx == 0 || g.jet_nx == 0 || g.nt < 2 || g.jet_nt < 2 {
            return Err(config_err(format!("sup_grid too small: {g:?}")));
        }
        if self.m_int_sweep.iter().any(|&m| m < 8) || self.neuron_sweep.contains(&0) {
            return Err(config_err("sweep entries must be positive (m_int ≥ 8)"));
        }
        let s = &self.simulation;
        if s.n < 4 || !s.n.is_power_of_two() {
            return Err(config_err(format!("simulation.n must be a power of two ≥ 4, got {}", s.n)));
        }
        if !(s.dt > 0.0 && s.horizon >= 0.0 && s.snapshot_every > 0) {
            return Err(config_err("simulation needs dt > 0, horizon ≥ 0, snapshot_every > 0"));
        }
        Ok(())
    }

    /// Directory name of a training run.
    pub fn run_name(&self) -> String {
        let hidden: Vec<String> = self.widths[1..self.widths.len() - 1].iter().map(usize::to_string).collect();
        format!("lambda{}_mint{}_w{}_seed{}", self.lambda, self.m_int, hidden.join("x"), self.seed)
    }
}

/// `sha256("blob <len>\0" ‖ bytes)`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml` and its hash into `dir`.
fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let text = cfg.to_toml();
    write_file(&dir.join("config.toml"), &text)?;
    write_file(&dir.join("inputs.sha256"), format!("{}\n", content_hash(text.as_bytes())))
}

pub fn log_header() -> &'static str {
    "iter,stage,optimizer,lr,e_pde2,e_sb1_2,e_sb2_2,e_sb3_2,e_sb4_2,e_t2,total"
}

fn log_line(r: &LogRow) -> String {
    let c = r.components;
    format!(
        "{},{},{:?},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        r.iter, r.stage, r.optimizer, r.lr, c[0], c[1], c[2], c[3], c[4], c[5], r.total
    )
}

fn summary_csv(reports: &[&BoundReport]) -> String {
    let mut s = format!("{}\n", BoundReport::summary_header());
    for r in reports {
        s.push_str(&r.summary_row());
        s.push('\n');
    }
    s
}

/// Artifacts of a finished training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub params: MlpParams,
    pub report: BoundReport,
    pub final_loss: f64,
}

/// Computes the bound report of a network under `cfg`.
pub fn evaluate_network(params: &MlpParams, cfg: &ExperimentConfig) -> Result<BoundReport> {
    let problem = cfg.problem()?;
    let sets = cfg.training_sets()?;
    bound_report(params, Some(params), NetworkShape::of(params), &problem, &sets, cfg.fine_factor, cfg.sup_grid)
}

/// Trains one network and writes its run directory under `cfg.out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.out_dir.join(cfg.run_name());
    create_dir(&dir)?;
    write_config(&dir, cfg)?;
    let problem = cfg.problem()?;
    let sets = cfg.training_sets()?;
    let mut params = MlpParams::init(cfg.seed, &cfg.widths)?;
    let mut obj = TrainingObjective::new(&problem, &sets, &cfg.widths)?;

    let log_path = dir.join("training_log.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut io_err = None;
    let mut emit = |line: &str, log: &mut BufWriter<fs::File>| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log, "{line}") {
                io_err = Some(e);
            }
        }
    };
    emit(log_header(), &mut log);
    let record = train(params.as_mut_slice(), &mut obj, &cfg.schedule, |row| emit(&log_line(row), &mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }

    let stage = if record.diverged.is_some() { "diverged" } else { "final" };
    let meta = CheckpointMeta {
        seed: cfg.seed,
        lambda: cfg.lambda,
        stage: stage.into(),
    };
    save_checkpoint(&params, &meta, &dir.join("checkpoint.json"))?;
    if let Some(msg) = record.diverged {
        return Err(Error::Divergence(format!("{msg}; partial run in {}", dir.display())));
    }
    let report = evaluate_network(&params, cfg)?;
    write_report(&dir, &report)?;
    Ok(RunOutcome {
        dir,
        params,
        report,
        final_loss: record.final_loss,
    })
}

fn write_report(dir: &Path, report: &BoundReport) -> Result<()> {
    write_file(&dir.join("bound_report.json"), serde_json::to_string_pretty(report).expect("report serializes"))?;
    write_file(&dir.join("summary.csv"), summary_csv(&[report]))
}

/// Recomputes the report of a run directory (or a bare checkpoint with
/// `cfg`). The checkpoint must match the configured widths and λ.
pub fn cmd_eval(checkpoint: &Path, cfg: &ExperimentConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let (params, meta) = load_checkpoint(checkpoint)?;
    if params.widths() != cfg.widths.as_slice() {
        return Err(config_err(format!(
            "checkpoint widths {:?} differ from configured widths {:?}",
            params.widths(),
            cfg.widths
        )));
    }
    if meta.lambda != cfg.lambda {
        return Err(config_err(format!("checkpoint λ={} differs from configured λ={}", meta.lambda, cfg.lambda)));
    }
    evaluate_network(&params, cfg)
}

/// Report of the manufactured solution itself, with the configured
/// architecture feeding the analytic constants.
pub fn eval_exact(cfg: &ExperimentConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let sets = cfg.training_sets()?;
    let shape = NetworkShape {
        layers: cfg.widths.len() - 1,
        width: cfg.widths.iter().copied().max().unwrap_or(1),
        r: 1.0,
    };
    bound_report(&Manufactured { lambda: cfg.lambda }, None, shape, &problem, &sets, cfg.fine_factor, cfg.sup_grid)
}

/// Runs the solver from the manufactured initial data and writes
/// `snapshots/` under the output directory. Returns the index path.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let s = cfg.simulation;
    let u0 = GridField::from_fn(s.n, PERIOD, DIM, |x, y| exact_solution(x, y, 0.0, cfg.lambda).to_vec())?;
    let solver = SolverConfig {
        lambda: cfg.lambda,
        dt: s.dt,
        forcing: if s.forcing { Forcing::Manufactured } else { Forcing::Off },
        nonlinear: s.nonlinear,
        dealias: true,
    };
    let traj = solve(&u0, s.horizon, solver, s.snapshot_every)?;
    create_dir(&cfg.out_dir)?;
    write_config(&cfg.out_dir, cfg)?;
    write_trajectory(&cfg.out_dir.join("snapshots"), &traj)
}

/// Writes `criterion_<id>.csv` for each criterion into `out` and returns
/// the integrals.
pub fn cmd_monitor(index: &Path, ids: &[CriterionId], out: &Path) -> Result<Vec<(CriterionId, f64)>> {
    let traj = read_trajectory(index)?;
    create_dir(out)?;
    let mut res = Vec::new();
    for &id in ids {
        let series = criterion(&traj, id)?;
        series.write_csv(&out.join(format!("criterion_{id}.csv")))?;
        res.push((id, series.integral));
    }
    Ok(res)
}

/// Which parameter a quadrature study sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    InteriorPoints,
    Neurons,
}

/// Trains one run per sweep entry and writes `quadstudy.csv` (or
/// `neuronstudy.csv`) plus a combined `summary.csv` into `cfg.out_dir`.
pub fn cmd_quadstudy(cfg: &ExperimentConfig, sweep: Sweep, parallel: bool) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let configs: Vec<ExperimentConfig> = match sweep {
        Sweep::InteriorPoints => cfg
            .m_int_sweep
            .iter()
            .map(|&m| ExperimentConfig { m_int: m, ..cfg.clone() })
            .collect(),
        Sweep::Neurons => cfg
            .neuron_sweep
            .iter()
            .map(|&w| {
                let mut widths = cfg.widths.clone();
                let last = widths.len() - 1;
                widths[1..last].iter_mut().for_each(|v| *v = w);
                ExperimentConfig { widths, ..cfg.clone() }
            })
            .collect(),
    };
    let outcomes: Vec<RunOutcome> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || cmd_train(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("worker panicked".into()))))
                .collect::<Result<_>>()
        })?
    } else {
        configs.iter().map(cmd_train).collect::<Result<_>>()?
    };
    let name = match sweep {
        Sweep::InteriorPoints => "quadstudy.csv",
        Sweep::Neurons => "neuronstudy.csv",
    };
    let csv = study_csv(&outcomes, sweep);
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(name), csv)?;
    let reports: Vec<&BoundReport> = outcomes.iter().map(|o| &o.report).collect();
    write_file(&cfg.out_dir.join("summary.csv"), summary_csv(&reports))?;
    Ok(outcomes)
}

/// Sweep table with columns `(m_int | neurons), e_t, l2_error, log10_bound`.
pub fn study_csv(outcomes: &[RunOutcome], sweep: Sweep) -> String {
    let key = match sweep {
        Sweep::InteriorPoints => "m_int",
        Sweep::Neurons => "neurons",
    };
    let mut csv = format!("{key},e_t,l2_error,log10_bound\n");
    for o in outcomes {
        let r = &o.report;
        let k = match sweep {
            Sweep::InteriorPoints => r.sizes.m_int,
            Sweep::Neurons => o.params.widths()[1],
        };
        csv.push_str(&format!(
            "{k},{:e},{:e},{}\n",
            r.measured.training.total,
            r.measured.total_l2_error,
            r.bound_total.log10()
        ));
    }
    csv
}

/// One line of the derivative check table.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub what: String,
    pub rel_err: f64,
    pub tolerance: f64,
}

/// Checks input jets against finite differences on the configured
/// architecture and parameter gradients on a small network.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradcheckRow>> {
    cfg.validate()?;
    let params = MlpParams::init(cfg.seed, &cfg.widths)?;
    let point = [0.37, 1.21, 0.44];
    let mut rows = Vec::new();
    let cases: [([usize; 3], f64, f64, &str); 6] = [
        ([1, 0, 0], 1e-5, 1e-6, "d/dx1"),
        ([0, 0, 1], 1e-5, 1e-6, "d/dt"),
        ([0, 2, 0], 1e-4, 1e-6, "d2/dx2^2"),
        ([4, 0, 0], 0.05, 1e-3, "d4/dx1^4"),
        ([2, 2, 0], 0.05, 1e-3, "d4/dx1^2dx2^2"),
        ([0, 4, 0], 0.05, 1e-3, "d4/dx2^4"),
    ];
    for c in 0..DIM {
        for (multi, step, tol, name) in cases {
            let r = fd_check(&params, point, c, multi, step)?;
            rows.push(GradcheckRow {
                what: format!("u{} {name}", c + 1),
                rel_err: r.rel_err,
                tolerance: tol,
            });
        }
    }
    let widths = [3, 5, 5, 2];
    let small = MlpParams::init(cfg.seed, &widths)?;
    let sets = TrainingSets::uniform_random(SetSizes { m_int: 8, m_sb: 4, m_t: 4 }, cfg.horizon, cfg.seed)?;
    let mut obj = TrainingObjective::new(&cfg.problem()?, &sets, &widths)?;
    let (_, grad) = obj.value_grad(small.as_slice())?;
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    let mut theta = small.as_slice().to_vec();
    for i in 0..theta.len() {
        let x = theta[i];
        theta[i] = x + h;
        let up = obj.value(&theta)?;
        theta[i] = x - h;
        let down = obj.value(&theta)?;
        theta[i] = x;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    rows.push(GradcheckRow {
        what: "parameter gradient (3,5,5,2)".into(),
        rel_err: worst,
        tolerance: 1e-5,
    });
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "kspinn", version, about = "PINN training and error certification for the 2-D vector Kuramoto-Sivashinsky equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long = "m-int", global = true)]
    pub m_int: Option<usize>,
    /// Width of every hidden layer
    #[arg(long, global = true)]
    pub neurons: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the reduced schedule [(Adam, 2000, 1e-3), (L-BFGS, 500, 1e-3)]
    #[arg(long = "desk-scale", global = true)]
    pub desk_scale: bool,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.m_int {
            cfg.m_int = v;
        }
        if let Some(w) = self.neurons {
            let last = cfg.widths.len() - 1;
            cfg.widths[1..last].iter_mut().for_each(|v| *v = w);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.desk_scale {
            cfg.schedule = Schedule::desk();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its run directory
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute errors and the bound for a run directory or checkpoint
    Eval {
        /// Run directory or checkpoint.json
        path: Option<PathBuf>,
        /// Evaluate the manufactured solution instead of a network
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the spectral solver from the manufactured initial data
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate regularity criteria on a stored trajectory
    Monitor {
        /// Trajectory index.json
        index: PathBuf,
        /// Criterion ids (T3.2, T3.10Y, T3.12H, T3.10kM); all when omitted
        #[arg(long = "criterion")]
        criteria: Vec<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the number of interior points (or neurons) and tabulate errors
    Quadstudy {
        /// Sweep the hidden width instead of M_int
        #[arg(long = "neuron-sweep")]
        neuron_sweep: bool,
        /// Train the sweep entries concurrently
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare derivatives with finite differences
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn print_report(r: &BoundReport) {
    println!("{}", BoundReport::summary_header());
    println!("{}", r.summary_row());
    println!(
        "bound dominates error²: {} (log10 margin {})",
        r.dominates,
        r.log10_margin.map_or("inf".to_string(), |m| format!("{m:.3}"))
    );
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let out = cmd_train(&cfg)?;
            println!("run directory: {}", out.dir.display());
            print_report(&out.report);
        }
        Command::Eval { path, exact, common } => {
            let report = if exact {
                eval_exact(&common.resolve()?)?
            } else {
                let path = path.ok_or_else(|| config_err("eval needs a run directory or checkpoint path (or --exact)"))?;
                let (checkpoint, run_cfg) = if path.is_dir() {
                    (path.join("checkpoint.json"), Some(path.join("config.toml")))
                } else {
                    (path.clone(), None)
                };
                let common = match (&common.config, run_cfg) {
                    (None, Some(c)) if c.exists() => CommonArgs {
                        config: Some(c),
                        ..common
                    },
                    _ => common,
                };
                cmd_eval(&checkpoint, &common.resolve()?)?
            };
            print_report(&report);
        }
        Command::Simulate { common } => {
            let cfg = common.resolve()?;
            let index = cmd_simulate(&cfg)?;
            println!("trajectory index: {}", index.display());
        }
        Command::Monitor { index, criteria, common } => {
            let ids = if criteria.is_empty() {
                CriterionId::ALL.to_vec()
            } else {
                criteria.iter().map(|s| s.parse().map_err(|e: Error| config_err(e.to_string()))).collect::<Result<_>>()?
            };
            let out = common.out.clone().unwrap_or_else(|| index.parent().unwrap_or(Path::new(".")).to_path_buf());
            for (id, v) in cmd_monitor(&index, &ids, &out)? {
                println!("{id}: integral {v:e}");
            }
        }
        Command::Quadstudy {
            neuron_sweep,
            parallel,
            common,
        } => {
            let cfg = common.resolve()?;
            let sweep = if neuron_sweep { Sweep::Neurons } else { Sweep::InteriorPoints };
            let outcomes = cmd_quadstudy(&cfg, sweep, parallel)?;
            println!("{}", BoundReport::summary_header());
            for o in outcomes {
                println!("{}", o.report.summary_row());
            }
        }
        Command::Gradcheck { common } => {
            let cfg = common.resolve()?;
            let rows = cmd_gradcheck(&cfg)?;
            let mut failed = 0;
            for r in &rows {
                let ok = r.rel_err <= r.tolerance;
                failed += usize::from(!ok);
                println!("{:<32} rel_err {:.3e} (tol {:.0e}) {}", r.what, r.rel_err, r.tolerance, if ok { "ok" } else { "FAIL" });
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} derivative checks exceeded tolerance")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_experiments() {
        let c = ExperimentConfig::default();
        assert_eq!(c.widths, [3, 80, 80, 2]);
        assert_eq!((c.m_t, c.m_sb, c.m_int), (1000, 1000, 10_000));
        assert_eq!(c.m_int_sweep, [10_000, 15_000, 20_000]);
        assert_eq!(c.schedule, Schedule::full());
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_errors() {
        let c = ExperimentConfig {
            lambda: 0.0,
            seed: 9,
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
        let partial = ExperimentConfig::from_toml("lambda = 0.0\nm_int = 500\n", Path::new("p.toml")).unwrap();
        assert_eq!((partial.lambda, partial.m_int, partial.m_t), (0.0, 500, 1000));
        let err = ExperimentConfig::from_toml("lambda = 0.0\nbogus = 1\n", Path::new("b.toml")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        let bad = ExperimentConfig {
            widths: vec![3, 10, 3],
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn flags_override_config() {
        let args = CommonArgs {
            lambda: Some(0.0),
            neurons: Some(20),
            desk_scale: true,
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.widths, [3, 20, 20, 2]);
        assert_eq!(c.schedule, Schedule::desk());
        assert_eq!(c.run_name(), "lambda0_mint10000_w20x20_seed1");
    }

    #[test]
    fn content_hash_is_git_style() {
        // `git hash-object` uses SHA-1; the same framing with SHA-256 of "" is fixed
        let h = content_hash(b"");
        assert_eq!(h, "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn clap_surface() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["kspinn", "train", "--desk-scale", "--lambda", "0.0", "--m-int", "15000"]).unwrap();
        match cli.command {
            Command::Train { common } => assert!(common.desk_scale && common.m_int == Some(15000)),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["kspinn", "fly"]).is_err());
    }
}
