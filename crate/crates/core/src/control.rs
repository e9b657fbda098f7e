//! Boundary tracking control: admissible set, Monte Carlo cost and
//! derivative-free minimization under common random numbers.
//!
//! Controls are deterministic coefficient paths. The decision variable is a
//! parameter vector `p` mapped linearly onto a control by a fixed set of
//! compatible atoms, so projecting onto the admissible ball acts on `p` too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{GalerkinModel, Trajectory};
use crate::error::{check_len, Error, Result};
use crate::geometry::{Grid, Wall};
use crate::lifting::{project_compatible, trace_norm, BoundaryControl, ControlField, ControlIndex};

/// Admissible set: compatible controls in a ball of the time-integrated trace norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSpec {
    pub modes: usize,
    pub time_nodes: usize,
    pub radius: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub p: f64,
}

impl AdmissibleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "admissible radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(Error::InvalidConfig(
                "penalty weights lambda1, lambda2 must be positive".into(),
            ));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "trace exponent p must lie in (2, inf), got {}",
                self.p
            )));
        }
        if self.time_nodes < 2 {
            return Err(Error::InvalidConfig(
                "control time grid needs at least two nodes".into(),
            ));
        }
        Ok(())
    }
}

/// `(Σ_intervals Δt ‖(a,b)‖²_{H_p(Γ)}(midpoint))^{1/2}`, exact for the constant-slope
/// pieces of the time derivative and midpoint-accurate for the values.
pub fn admissible_norm(ctrl: &BoundaryControl) -> Result<f64> {
    let mut s = 0.0;
    for w in ctrl.times.windows(2) {
        let n = trace_norm(ctrl, 0.5 * (w[0] + w[1]))?;
        s += (w[1] - w[0]) * n * n;
    }
    Ok(s.sqrt())
}

/// Compatible projection followed by radial scaling onto the ball.
pub fn project_admissible(
    ctrl: &BoundaryControl,
    spec: &AdmissibleSpec,
) -> Result<BoundaryControl> {
    let c = project_compatible(ctrl);
    let n = admissible_norm(&c)?;
    if n > spec.radius * (1.0 + 1e-13) {
        Ok(c.scaled(spec.radius / n))
    } else {
        Ok(c)
    }
}

/// `exp(4 C₀ ∫₀ᵀ ‖(a,b)‖² dt)` for a deterministic control.
pub fn exponential_integrability(ctrl: &BoundaryControl, c0: f64) -> Result<f64> {
    let n = admissible_norm(ctrl)?;
    Ok((4.0 * c0 * n * n).exp())
}

/// `∫₀ᵀ∫_Γ (λ₁/2 a² + λ₂/2 b²)`: wall quadrature in x and Simpson's rule in
/// time, both exact for piecewise-linear trigonometric coefficients.
pub fn penalty(ctrl: &BoundaryControl, grid: &Grid, lambda1: f64, lambda2: f64) -> Result<f64> {
    let wall_sq = |t: f64| -> Result<f64> {
        let mut s = 0.0;
        for (field, lam) in [(ControlField::A, lambda1), (ControlField::B, lambda2)] {
            for wall in Wall::BOTH {
                let v = ctrl.wall_samples(field, wall, t, &grid.x_nodes)?;
                s += 0.5
                    * lam
                    * grid.integrate_wall(&v.iter().map(|x| x * x).collect::<Vec<_>>())?;
            }
        }
        Ok(s)
    };
    let mut total = 0.0;
    for w in ctrl.times.windows(2) {
        let h = w[1] - w[0];
        let f0 = wall_sq(w[0])?;
        let fm = wall_sq(0.5 * (w[0] + w[1]))?;
        let f1 = wall_sq(w[1])?;
        total += h / 6.0 * (f0 + 4.0 * fm + f1);
    }
    Ok(total)
}

/// Desired field `y_d` sampled at the simulation times on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    /// Free-form provenance text stored in the file header.
    pub label: String,
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
    /// Per time: interior `u` samples followed by `w` samples.
    pub samples: Vec<Vec<f64>>,
}

const TARGET_MAGIC: &[u8; 8] = b"SLPFTGT1";

impl TargetField {
    pub fn zeros(grid: &Grid, times: &[f64]) -> Self {
        TargetField {
            label: String::new(),
            nx: grid.nx(),
            ny: grid.ny(),
            times: times.to_vec(),
            samples: vec![vec![0.0; 2 * grid.npts()]; times.len()],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TARGET_MAGIC);
        out.extend_from_slice(&(self.label.len() as u64).to_le_bytes());
        out.extend_from_slice(self.label.as_bytes());
        for v in [self.nx as u64, self.ny as u64, self.times.len() as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (t, s) in self.times.iter().zip(&self.samples) {
            out.extend_from_slice(&t.to_le_bytes());
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Artifact("truncated or malformed target file".into());
        if bytes.len() < 16 || &bytes[..8] != TARGET_MAGIC {
            return Err(bad());
        }
        let word =
            |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
        let label_len = word(8);
        if label_len > bytes.len() {
            return Err(bad());
        }
        let head = 16 + label_len;
        if bytes.len() < head + 24 {
            return Err(bad());
        }
        let label = String::from_utf8(bytes[16..head].to_vec()).map_err(|_| bad())?;
        let (nx, ny, nt) = (word(head), word(head + 8), word(head + 16));
        let row = 1 + 2 * nx * ny;
        let body = &bytes[head + 24..];
        if body.len() != nt * row * 8 {
            return Err(bad());
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut times = Vec::with_capacity(nt);
        let mut samples = Vec::with_capacity(nt);
        for r in vals.chunks_exact(row) {
            times.push(r[0]);
            samples.push(r[1..].to_vec());
        }
        Ok(TargetField {
            label,
            nx,
            ny,
            times,
            samples,
        })
    }

    fn check(&self, grid: &Grid, times: &[f64]) -> Result<()> {
        check_len(grid.nx(), self.nx)?;
        check_len(grid.ny(), self.ny)?;
        check_len(self.times.len(), times.len())?;
        if self.times != times {
            return Err(Error::InvalidConfig(
                "target and simulation time grids differ".into(),
            ));
        }
        Ok(())
    }
}

/// Noise-free reference run with `ctrl_star`, stored as the target.
pub fn make_target(
    model: &GalerkinModel,
    ctrl_star: &BoundaryControl,
    beta0: &[f64],
) -> Result<TargetField> {
    let incs = vec![vec![0.0; model.noise.m()]; model.time.steps()];
    let traj = model.simulate_with_increments(ctrl_star, beta0, &incs, 0, 0)?;
    if traj.blew_up {
        return Err(Error::Numerical("reference simulation blew up".into()));
    }
    let samples = traj
        .times
        .iter()
        .zip(&traj.beta)
        .map(|(&t, b)| Ok(model.drift.velocity_samples(b, &ctrl_star.at(t)?.0)))
        .collect::<Result<_>>()?;
    Ok(TargetField {
        label: String::new(),
        nx: model.basis.grid.nx(),
        ny: model.basis.grid.ny(),
        times: traj.times,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub j: f64,
    pub tracking: f64,
    pub penalty: f64,
    pub ci_half_width: f64,
    pub paths: usize,
    pub blown_up: usize,
}

/// `½∫₀ᵀ∫_O |y - y_d|²` along one path.
pub fn tracking_term(
    model: &GalerkinModel,
    ctrl: &BoundaryControl,
    traj: &Trajectory,
    target: &TargetField,
) -> Result<f64> {
    let grid = &model.basis.grid;
    target.check(grid, &traj.times)?;
    let npts = grid.npts();
    let mut integrand = Vec::with_capacity(traj.times.len());
    for (l, &t) in traj.times.iter().enumerate() {
        let y = model.drift.velocity_samples(&traj.beta[l], &ctrl.at(t)?.0);
        let yd = &target.samples[l];
        let mut s = 0.0;
        for q in 0..npts {
            let du = y[q] - yd[q];
            let dw = y[npts + q] - yd[npts + q];
            s += grid.quad_weights_domain[q] * (du * du + dw * dw);
        }
        integrand.push(0.5 * s);
    }
    Ok(crate::diagnostics::trapezoid(&traj.times, &integrand))
}

/// Monte Carlo estimate of `J` on paths `0..paths` of `seed`.
pub fn estimate_cost(
    model: &GalerkinModel,
    ctrl: &BoundaryControl,
    target: &TargetField,
    beta0: &[f64],
    spec: &AdmissibleSpec,
    seed: u64,
    paths: usize,
) -> Result<CostReport> {
    if paths == 0 {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let trajs = if model.noise.is_off() {
        // every path is the same deterministic run
        let incs = vec![vec![0.0; model.noise.m()]; model.time.steps()];
        vec![model.simulate_with_increments(ctrl, beta0, &incs, seed, 0)?]
    } else {
        model.simulate_ensemble(ctrl, beta0, seed, paths)?
    };
    let mut tracks = Vec::new();
    let mut blown = 0;
    for t in &trajs {
        if t.blew_up {
            blown += 1;
        } else {
            tracks.push(tracking_term(model, ctrl, t, target)?);
        }
    }
    if tracks.is_empty() {
        return Err(Error::Numerical("every cost path blew up".into()));
    }
    let pen = penalty(ctrl, &model.basis.grid, spec.lambda1, spec.lambda2)?;
    let n = tracks.len();
    let tracking = tracks.iter().sum::<f64>() / n as f64;
    let ci_half_width = if n > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0575);
        let mut boots: Vec<f64> = (0..200)
            .map(|_| (0..n).map(|_| tracks[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        boots.sort_by(f64::total_cmp);
        0.5 * (boots[194] - boots[5])
    } else {
        0.0
    };
    let (paths_used, blown_up) = if model.noise.is_off() {
        (paths, 0)
    } else {
        (n, blown)
    };
    Ok(CostReport {
        j: tracking + pen,
        tracking,
        penalty: pen,
        ci_half_width,
        paths: paths_used,
        blown_up,
    })
}

/// Time shape of one control atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeProfile {
    #[default]
    Constant,
    /// `t / T`
    Ramp,
}

/// One coefficient direction of the linear control parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAtom {
    pub field: ControlField,
    pub wall: Wall,
    pub mode: i32,
    #[serde(default)]
    pub profile: TimeProfile,
}

/// `p ↦ Σ p_k atom_k`, each atom made compatible once at construction.
#[derive(Debug, Clone)]
pub struct Parametrization {
    atoms: Vec<BoundaryControl>,
    template: BoundaryControl,
}

impl Parametrization {
    pub fn new(
        atoms: &[ControlAtom],
        length_x: f64,
        spec: &AdmissibleSpec,
        horizon: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if atoms.is_empty() {
            return Err(Error::InvalidConfig(
                "control parametrization needs at least one atom".into(),
            ));
        }
        let template =
            BoundaryControl::zero(length_x, spec.modes, spec.p, horizon, spec.time_nodes)?;
        let mut out = Vec::with_capacity(atoms.len());
        for atom in atoms {
            if atom.mode.unsigned_abs() as usize > spec.modes {
                return Err(Error::InvalidConfig(format!(
                    "atom mode {} exceeds K_c = {}",
                    atom.mode, spec.modes
                )));
            }
            let mut c = template.clone();
            let idx = ControlIndex {
                field: atom.field,
                wall: atom.wall,
                mode: atom.mode,
            };
            for l in 0..c.times.len() {
                let s = match atom.profile {
                    TimeProfile::Constant => 1.0,
                    TimeProfile::Ramp => c.times[l] / horizon,
                };
                c.set(l, idx, s);
            }
            out.push(project_compatible(&c));
        }
        Ok(Parametrization {
            atoms: out,
            template,
        })
    }

    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    pub fn control(&self, params: &[f64]) -> Result<BoundaryControl> {
        check_len(self.dim(), params.len())?;
        let mut c = self.template.clone();
        for (p, atom) in params.iter().zip(&self.atoms) {
            c = c.linear_combination(1.0, atom, *p)?;
        }
        Ok(c)
    }

    /// Scale `params` so the control lies in the admissible ball.
    pub fn project(&self, params: &[f64], spec: &AdmissibleSpec) -> Result<Vec<f64>> {
        let n = admissible_norm(&self.control(params)?)?;
        if n > spec.radius * (1.0 + 1e-13) {
            let s = spec.radius / n;
            Ok(params.iter().map(|p| p * s).collect())
        } else {
            Ok(params.to_vec())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    NelderMead,
    Spsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub kind: OptimizerKind,
    pub budget: usize,
    /// Initial simplex edge or SPSA perturbation size, in parameter units.
    #[serde(default = "default_step")]
    pub step: f64,
    /// SPSA gain `a` in `a_k = a / (k + 1 + 10)^0.602`.
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_step() -> f64 {
    0.1
}

fn default_gain() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub j: f64,
    pub ci_half_width: f64,
    pub tracking: f64,
    pub penalty: f64,
    pub admissible_norm: f64,
    pub compatibility_defect: f64,
    pub exp_integrability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub best_params: Vec<f64>,
    pub best: CostReport,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Cost evaluation under a frozen seed bank.
pub struct CostProblem<'a> {
    pub model: &'a GalerkinModel,
    pub target: &'a TargetField,
    pub beta0: &'a [f64],
    pub param: &'a Parametrization,
    pub spec: &'a AdmissibleSpec,
    pub c0: f64,
    pub seed: u64,
    pub paths: usize,
}

impl CostProblem<'_> {
    pub fn evaluate(&self, params: &[f64]) -> Result<CostReport> {
        let ctrl = self.param.control(params)?;
        estimate_cost(
            self.model,
            &ctrl,
            self.target,
            self.beta0,
            self.spec,
            self.seed,
            self.paths,
        )
    }

    fn entry(&self, iteration: usize, params: &[f64], r: &CostReport) -> Result<HistoryEntry> {
        let ctrl = self.param.control(params)?;
        Ok(HistoryEntry {
            iteration,
            params: params.to_vec(),
            j: r.j,
            ci_half_width: r.ci_half_width,
            tracking: r.tracking,
            penalty: r.penalty,
            admissible_norm: admissible_norm(&ctrl)?,
            compatibility_defect: ctrl.compatibility_defect(),
            exp_integrability: exponential_integrability(&ctrl, self.c0)?,
        })
    }
}

/// Minimize `J` over the parametrized admissible set.
///
/// The history holds one entry per iteration with the incumbent after that
/// iteration, so its `j` column is nonincreasing. A candidate replaces the
/// incumbent only on strict improvement.
pub fn optimize(
    problem: &CostProblem,
    initial: &[f64],
    opt: &OptimizerSpec,
) -> Result<OptimizeResult> {
    let x0 = problem.param.project(initial, problem.spec)?;
    let r0 = problem.evaluate(&x0)?;
    let mut history = vec![problem.entry(0, &x0, &r0)?];
    let mut evals = 1;
    let (best_params, best) = match opt.kind {
        OptimizerKind::NelderMead => nelder_mead(problem, x0, r0, opt, &mut history, &mut evals)?,
        OptimizerKind::Spsa => spsa(problem, x0, r0, opt, &mut history, &mut evals)?,
    };
    Ok(OptimizeResult {
        best_params,
        best,
        budget_exhausted: opt.budget > 0,
        history,
        evaluations: evals,
    })
}

fn nelder_mead(
    problem: &CostProblem,
    x0: Vec<f64>,
    r0: CostReport,
    opt: &OptimizerSpec,
    history: &mut Vec<HistoryEntry>,
    evals: &mut usize,
) -> Result<(Vec<f64>, CostReport)> {
    let d = x0.len();
    let mut eval = |x: &[f64]| -> Result<(Vec<f64>, CostReport)> {
        let p = problem.param.project(x, problem.spec)?;
        *evals += 1;
        let r = problem.evaluate(&p)?;
        Ok((p, r))
    };
    let mut simplex: Vec<(Vec<f64>, CostReport)> = vec![(x0.clone(), r0)];
    if opt.budget > 0 {
        for k in 0..d {
            let mut x = x0.clone();
            x[k] += opt.step;
            simplex.push(eval(&x)?);
        }
    }
    let order = |s: &mut Vec<(Vec<f64>, CostReport)>| s.sort_by(|a, b| a.1.j.total_cmp(&b.1.j));
    let mut incumbent = simplex[0].clone();
    for it in 1..=opt.budget {
        order(&mut simplex);
        let worst = simplex[d].clone();
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|v| v.0[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..d)
                .map(|k| centroid[k] + t * (worst.0[k] - centroid[k]))
                .collect()
        };
        let refl = eval(&along(-1.0))?;
        if refl.1.j < simplex[0].1.j {
            let exp = eval(&along(-2.0))?;
            simplex[d] = if exp.1.j < refl.1.j { exp } else { refl };
        } else if refl.1.j < simplex[d - 1].1.j {
            simplex[d] = refl;
        } else {
            let t = if refl.1.j < worst.1.j { -0.5 } else { 0.5 };
            let con = eval(&along(t))?;
            if con.1.j < worst.1.j.min(refl.1.j) {
                simplex[d] = con;
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..d).map(|k| best[k] + 0.5 * (v.0[k] - best[k])).collect();
                    *v = eval(&x)?;
                }
            }
        }
        order(&mut simplex);
        if simplex[0].1.j < incumbent.1.j {
            incumbent = simplex[0].clone();
        }
        history.push(problem.entry(it, &incumbent.0, &incumbent.1)?);
    }
    Ok(incumbent)
}

fn spsa(
    problem: &CostProblem,
    x0: Vec<f64>,
    r0: CostReport,
    opt: &OptimizerSpec,
    history: &mut Vec<HistoryEntry>,
    evals: &mut usize,
) -> Result<(Vec<f64>, CostReport)> {
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut incumbent = (x0, r0);
    for it in 1..=opt.budget {
        let k = it as f64;
        let a = opt.gain / (k + 10.0).powf(0.602);
        let c = opt.step / k.powf(0.101);
        let delta: Vec<f64> = (0..d)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let plus: Vec<f64> = incumbent
            .0
            .iter()
            .zip(&delta)
            .map(|(x, s)| x + c * s)
            .collect();
        let minus: Vec<f64> = incumbent
            .0
            .iter()
            .zip(&delta)
            .map(|(x, s)| x - c * s)
            .collect();
        let jp = problem
            .evaluate(&problem.param.project(&plus, problem.spec)?)?
            .j;
        let jm = problem
            .evaluate(&problem.param.project(&minus, problem.spec)?)?
            .j;
        let g = (jp - jm) / (2.0 * c);
        let cand: Vec<f64> = incumbent
            .0
            .iter()
            .zip(&delta)
            .map(|(x, s)| x - a * g * s)
            .collect();
        let cand = problem.param.project(&cand, problem.spec)?;
        let rc = problem.evaluate(&cand)?;
        *evals += 3;
        if rc.j < incumbent.1.j {
            incumbent = (cand, rc);
        }
        history.push(problem.entry(it, &incumbent.0, &incumbent.1)?);
    }
    Ok(incumbent)
}
