//! Command-line workflows. Each subcommand reads one TOML run file and writes
//! its artifacts into the output directory, stamped with the config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_eigenbasis, inner_h, random_discrete_fields, Basis, BasisArtifact};
use crate::config::{RunConfig, Workbench, VERSION};
use crate::control::{
    admissible_norm, exponential_integrability, make_target, optimize, CostProblem, OptimizeResult,
};
use crate::diagnostics::{
    bootstrap_mean, certify_fourth_moment, certify_second_moment, certify_stability,
    certify_wellposed_cost, empirical_c0, energy_identity_defect, moment_consistency, weight_xi0,
    EstimateReport, FourthMoment, HolderChainReport, MeanEstimate, MomentConsistency, SecondMoment,
    StabilityInput, MIN_PATHS,
};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::Wall;
use crate::lifting::{
    lift, lift_residuals, trace_norm_parts, ControlFile, LiftResiduals, LiftSolver,
};

#[derive(Debug, Parser)]
#[command(
    name = "slipflow",
    version,
    about = "Stochastic Navier-Stokes channel flow with Navier-slip boundary control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// First seed of the Monte Carlo seed bank.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads for path-parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the eigenbasis and write it with its eigenvalue table.
    Basis,
    /// Lift the configured control and report boundary residuals.
    Lift,
    /// Simulate Monte Carlo paths and summarize them.
    Simulate,
    /// Certify the a priori estimates on simulated paths.
    Verify,
    /// Minimize the tracking cost over the control parametrization.
    Optimize,
}

/// JSON wrapper carried by every output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub version: String,
    pub data: T,
}

/// A loaded configuration plus where its outputs go.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
        let text = fs::read_to_string(path)?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let Some(s) = cli.seed {
            config.monte_carlo.seed = s;
        }
        if let Some(p) = cli.paths {
            config.monte_carlo.paths = p;
        }
        if let Some(t) = cli.threads {
            config.monte_carlo.threads = t;
        }
        Self::new(config, cli.out.clone())
    }

    pub fn new(config: RunConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
        fs::create_dir_all(&out)?;
        Ok(Run {
            hash: config.hash(),
            config,
            out,
        })
    }

    fn header(&self) -> String {
        format!("slipflow {VERSION} config {}", self.hash)
    }

    fn write_json<T: Serialize>(&self, name: &str, data: T) -> Result<()> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            version: VERSION.into(),
            data,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        fs::write(self.out.join(name), text)?;
        Ok(())
    }

    fn write_csv(&self, name: impl AsRef<Path>, header: &str, rows: &str) -> Result<()> {
        fs::write(
            self.out.join(name),
            format!("# {}\n{header}\n{rows}", self.header()),
        )?;
        Ok(())
    }

    /// Basis from `basis.json` in the output directory when it fits, else a fresh build.
    fn basis(&self) -> Result<Basis> {
        let path = self.out.join("basis.json");
        if let Ok(text) = fs::read_to_string(&path) {
            let env: Envelope<BasisArtifact> = serde_json::from_str(&text)?;
            if env.data.spec == self.config.domain && env.data.pairs.len() >= self.config.basis.size
            {
                return Basis::import(&env.data)?.truncated(self.config.basis.size);
            }
        }
        build_eigenbasis(&self.config.domain, self.config.basis.size)
    }

    fn workbench(&self) -> Result<Workbench> {
        Workbench::with_basis(&self.config, self.basis()?)
    }

    pub fn execute(&self, cmd: Command) -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.monte_carlo.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| match cmd {
            Command::Basis => self.cmd_basis(),
            Command::Lift => self.cmd_lift(),
            Command::Simulate => self.cmd_simulate(),
            Command::Verify => self.cmd_verify(),
            Command::Optimize => self.cmd_optimize(),
        })
    }

    fn cmd_basis(&self) -> Result<()> {
        let basis = build_eigenbasis(&self.config.domain, self.config.basis.size)?;
        let report = basis_report(&basis, self.config.monte_carlo.seed)?;
        let mut rows = String::new();
        for (i, p) in basis.pairs.iter().enumerate() {
            let k = self.config.domain.wavenumber(p.mode);
            let _ = writeln!(
                rows,
                "{},{},{},{:e},{:e}",
                i + 1,
                p.mode,
                p.branch,
                k,
                p.eigenvalue
            );
        }
        self.write_csv(
            "eigenvalues.csv",
            "index,mode,branch,wavenumber,eigenvalue",
            &rows,
        )?;
        self.write_json("basis.json", basis.export())?;
        self.write_json("basis_report.json", report)
    }

    fn cmd_lift(&self) -> Result<()> {
        let w = self.workbench()?;
        let ctrl = w.control(&self.config.control.apply)?;
        let solver = LiftSolver::new(&w.model.basis.grid)?;
        let lifted = lift(&ctrl, &w.model.lift, &w.model.basis.grid)?;
        let residuals = lift_residuals(&ctrl, &lifted, &solver)?;
        let mut rows = String::new();
        for &t in &ctrl.times {
            let p = trace_norm_parts(&ctrl, t)?;
            let _ = writeln!(
                rows,
                "{t:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                p.total(),
                p.a,
                p.a_dot,
                p.b_neg,
                p.b,
                p.b_dot
            );
        }
        self.write_csv("lift.csv", "t,trace_norm,a,a_dot,b_neg,b,b_dot", &rows)?;
        self.write_json("control.json", ctrl.to_file())?;
        self.write_json(
            "lift_report.json",
            LiftReport {
                residuals,
                calderon_ratio: lifted.calderon_ratio(&w.model.basis.grid)?,
                admissible_norm: admissible_norm(&ctrl)?,
                compatibility_defect: ctrl.compatibility_defect(),
                exp_integrability: exponential_integrability(&ctrl, self.config.diagnostics.c0)?,
            },
        )
    }

    fn cmd_simulate(&self) -> Result<()> {
        let w = self.workbench()?;
        let ctrl = w.control(&self.config.control.apply)?;
        let mc = &self.config.monte_carlo;
        let trajs = w
            .model
            .simulate_ensemble(&ctrl, &w.beta0, mc.seed, mc.paths)?;
        let dir = self.out.join("paths");
        fs::create_dir_all(&dir)?;
        let n = w.model.dim();
        for t in &trajs {
            fs::write(
                dir.join(format!("path_{:05}.csv", t.path)),
                t.to_csv(n, &self.header()),
            )?;
        }
        let summary = summarize(&trajs, w.model.drift.viscosity)?;
        let mut rows = String::new();
        for (l, s) in summary.series.iter().enumerate() {
            let _ = writeln!(
                rows,
                "{:e},{:e},{:e},{:e},{:e}",
                summary.times[l], s.mean, s.ci_low, s.ci_high, summary.dissipation_mean[l]
            );
        }
        self.write_csv(
            "summary.csv",
            "t,mean_u_l2_sq,ci_low,ci_high,mean_u_v_sq",
            &rows,
        )?;
        let total_failure = summary.blown_up == trajs.len();
        self.write_json("summary.json", &summary)?;
        if total_failure {
            return Err(Error::Numerical(format!(
                "all {} paths blew up",
                trajs.len()
            )));
        }
        Ok(())
    }

    fn cmd_verify(&self) -> Result<()> {
        let reports = verify_reports(&self.config)?;
        let finite = reports.all_finite();
        self.write_json("reports.json", &reports)?;
        if !finite {
            return Err(Error::Numerical("a fitted constant is not finite".into()));
        }
        Ok(())
    }

    fn cmd_optimize(&self) -> Result<()> {
        let w = self.workbench()?;
        let cfg = &self.config;
        let spec = cfg.admissible();
        let star = w.control(&cfg.control.target)?;
        let mut target = make_target(&w.model, &star, &w.beta0)?;
        target.label = self.header();
        let problem = CostProblem {
            model: &w.model,
            target: &target,
            beta0: &w.beta0,
            param: &w.param,
            spec: &spec,
            c0: cfg.diagnostics.c0,
            seed: cfg.monte_carlo.seed,
            paths: cfg.monte_carlo.paths,
        };
        let result = optimize(
            &problem,
            &cfg.params_or_zero(&cfg.control.initial),
            &cfg.optimizer,
        )?;
        fs::write(self.out.join("target.bin"), target.to_bytes())?;
        self.write_csv(
            "history.csv",
            &history_header(w.param.dim()),
            &history_rows(&result),
        )?;
        self.write_json(
            "best_control.json",
            w.param.control(&result.best_params)?.to_file(),
        )?;
        self.write_json("history.json", &result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisReport {
    pub size: usize,
    /// Relative weak residual against the basis and random discrete test fields.
    pub weak_residual: f64,
    pub orthonormality_error: f64,
    pub divergence: f64,
    pub normal_trace: f64,
    pub eigenvalue_min: f64,
    pub eigenvalue_max: f64,
}

pub fn basis_report(basis: &Basis, seed: u64) -> Result<BasisReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = random_discrete_fields(basis, 8, &mut rng);
    tests.extend(basis.fields.iter().cloned());
    let weak_residual = basis.weak_residual(&tests)?;
    let mut orth = 0.0_f64;
    let mut div = 0.0_f64;
    let mut nt = 0.0_f64;
    for (i, ei) in basis.fields.iter().enumerate() {
        for (j, ej) in basis.fields.iter().enumerate().skip(i) {
            let g = inner_h(&basis.grid, ei, ej)?;
            orth = orth.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
        div = ei.divergence().iter().fold(div, |m, d| m.max(d.abs()));
        for wall in Wall::BOTH {
            nt = ei.normal_trace(wall).iter().fold(nt, |m, d| m.max(d.abs()));
        }
    }
    let ev = basis.eigenvalues();
    Ok(BasisReport {
        size: basis.len(),
        weak_residual,
        orthonormality_error: orth,
        divergence: div,
        normal_trace: nt,
        eigenvalue_min: ev.first().copied().unwrap_or(f64::NAN),
        eigenvalue_max: ev.last().copied().unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftReport {
    pub residuals: LiftResiduals,
    pub calderon_ratio: f64,
    pub admissible_norm: f64,
    pub compatibility_defect: f64,
    pub exp_integrability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub paths: usize,
    pub blown_up: usize,
    pub final_energy: MeanEstimate,
    pub final_dissipation: MeanEstimate,
    pub max_energy: MeanEstimate,
    /// Largest cumulative per-step defect of the homogeneous energy identity.
    pub energy_identity_defect: f64,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub series: Vec<MeanEstimate>,
    #[serde(skip)]
    pub dissipation_mean: Vec<f64>,
}

pub fn summarize(trajs: &[Trajectory], viscosity: f64) -> Result<SimulationSummary> {
    let good: Vec<&Trajectory> = trajs.iter().filter(|t| !t.blew_up).collect();
    let blown_up = trajs.len() - good.len();
    let times = good.first().map(|t| t.times.clone()).unwrap_or_default();
    let pick = |f: &dyn Fn(&Trajectory) -> f64| {
        bootstrap_mean(&good.iter().map(|t| f(t)).collect::<Vec<_>>())
    };
    let mut series = Vec::with_capacity(times.len());
    let mut dissipation_mean = Vec::with_capacity(times.len());
    for l in 0..times.len() {
        series.push(pick(&|t| t.energy[l]));
        dissipation_mean
            .push(good.iter().map(|t| t.dissipation[l]).sum::<f64>() / good.len() as f64);
    }
    let mut defect = 0.0_f64;
    for t in &good {
        defect = defect.max(energy_identity_defect(t, viscosity));
    }
    Ok(SimulationSummary {
        paths: trajs.len(),
        blown_up,
        final_energy: pick(&|t| *t.energy.last().unwrap()),
        final_dissipation: pick(&|t| *t.dissipation.last().unwrap()),
        max_energy: pick(&|t| t.energy.iter().cloned().fold(0.0, f64::max)),
        energy_identity_defect: defect,
        times,
        series,
        dissipation_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReports {
    pub estimates: Vec<EstimateReport>,
    pub holder_chain: HolderChainReport,
    pub moment_consistency: MomentConsistency,
    pub weight_admissible: bool,
    pub empirical_c0: f64,
    pub refined_size: usize,
}

impl VerifyReports {
    pub fn all_finite(&self) -> bool {
        self.estimates.iter().all(EstimateReport::is_finite)
            && self.holder_chain.rhs.is_finite()
            && self.holder_chain.lhs.is_finite()
            && self.empirical_c0.is_finite()
    }
}

/// Every certificate at basis size `n` and at the refined size.
pub fn verify_reports(config: &RunConfig) -> Result<VerifyReports> {
    let w = Workbench::new(config)?;
    let refined_size = config
        .diagnostics
        .refined_size
        .unwrap_or(2 * config.basis.size);
    let mut fine_cfg = config.clone();
    fine_cfg.basis.size = refined_size;
    let fine = Workbench::new(&fine_cfg)?;
    let mc = &config.monte_carlo;
    let nu = config.domain.viscosity;
    let consts = config.stability_constants();

    let ctrl = w.control(&config.control.apply)?;
    let ctrl2 = w.control(&config.control.compare)?;
    let coarse = w
        .model
        .simulate_ensemble(&ctrl, &w.beta0, mc.seed, mc.paths)?;
    let refined = fine
        .model
        .simulate_ensemble(&ctrl, &fine.beta0, mc.seed, mc.paths)?;
    let second_bundle = w
        .model
        .simulate_ensemble(&ctrl2, &w.beta0, mc.seed, mc.paths)?;
    let times = &coarse[0].times;
    let weight = weight_xi0(&ctrl, config.diagnostics.c0, times)?;

    let estimates = vec![
        certify_second_moment(&coarse, &weight, nu, SecondMoment::Galerkin, MIN_PATHS)?,
        certify_fourth_moment(&coarse, &weight, nu, FourthMoment::Galerkin, MIN_PATHS)?,
        certify_second_moment(&refined, &weight, nu, SecondMoment::Limit, MIN_PATHS)?,
        certify_fourth_moment(&refined, &weight, nu, FourthMoment::Limit, MIN_PATHS)?,
        certify_stability(
            &StabilityInput {
                drift: &w.model.drift,
                ctrl1: &ctrl,
                ctrl2: &ctrl2,
                trajs1: &coarse,
                trajs2: &second_bundle,
            },
            consts,
            MIN_PATHS,
        )?,
    ];
    Ok(VerifyReports {
        estimates,
        holder_chain: certify_wellposed_cost(&refined, &weight, MIN_PATHS)?,
        moment_consistency: moment_consistency(&refined, &weight)?,
        weight_admissible: weight.is_admissible(),
        empirical_c0: empirical_c0(&coarse, &weight)?,
        refined_size,
    })
}

fn history_header(d: usize) -> String {
    let mut h = String::from("iteration,j,ci_half_width,tracking,penalty,admissible_norm,compatibility_defect,exp_integrability");
    for i in 0..d {
        let _ = write!(h, ",p{}", i + 1);
    }
    h
}

fn history_rows(r: &OptimizeResult) -> String {
    let mut s = String::new();
    for e in &r.history {
        let _ = write!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            e.iteration,
            e.j,
            e.ci_half_width,
            e.tracking,
            e.penalty,
            e.admissible_norm,
            e.compatibility_defect,
            e.exp_integrability
        );
        for p in &e.params {
            let _ = write!(s, ",{p:e}");
        }
        s.push('\n');
    }
    s
}

/// Read a control artifact written by `lift` or `optimize`.
pub fn read_control(path: &Path) -> Result<crate::lifting::BoundaryControl> {
    let env: Envelope<ControlFile> = serde_json::from_str(&fs::read_to_string(path)?)?;
    crate::lifting::BoundaryControl::from_file(&env.data)
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match Run::from_cli(&cli).and_then(|run| run.execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("slipflow: {e}");
            e.exit_code()
        }
    }
}
