//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use slipflow::basis::build_eigenbasis;
use slipflow::cli::{basis_report, verify_reports, Command, Run};
use slipflow::config::{RunConfig, Workbench};
use slipflow::control::{make_target, optimize, CostProblem, OptimizerKind};
use slipflow::diagnostics::{certify_stability, energy_identity_defect, StabilityInput, MIN_PATHS};
use slipflow::dynamics::{brownian_increments, coarsen, Trajectory};
use slipflow::geometry::{build_grid, DomainSpec};
use slipflow::lifting::{
    control_indices, lift, lift_residuals, project_compatible, BoundaryControl, LiftOperator,
    LiftSolver,
};
use slipflow::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn config(body: &str) -> RunConfig {
    RunConfig::from_toml(body).expect("acceptance config parses")
}

/// TOML for a run on a `2π` periodic channel.
fn toml(
    modes_x: usize,
    nodes_y: usize,
    alpha: f64,
    nu: f64,
    n: usize,
    horizon: f64,
    dt: f64,
    rest: &str,
) -> String {
    format!(
        "[domain]\nlength_x = 6.283185307179586\nmodes_x = {modes_x}\nnodes_y = {nodes_y}\n\
         friction_alpha = {alpha}\nviscosity = {nu}\n\n[basis]\nsize = {n}\n\n\
         [time]\nhorizon = {horizon}\ndt = {dt}\n\n{rest}"
    )
}

fn zeros(n: usize) -> Vec<Vec<f64>> {
    vec![vec![]; n]
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let d = a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn criterion_1() -> Result<Outcome> {
    let spec = DomainSpec {
        length_x: std::f64::consts::TAU,
        modes_x: 5,
        nodes_y: 48,
        friction_alpha: 1.0,
        viscosity: 1.0,
    };
    let basis = build_eigenbasis(&spec, 32)?;
    let r = basis_report(&basis, 11)?;
    let free = build_eigenbasis(
        &DomainSpec {
            friction_alpha: 0.0,
            ..spec
        },
        32,
    )?;
    let mut shear_err = 0.0_f64;
    let mut shear_count = 0;
    for p in free.pairs.iter().filter(|p| p.mode == 0) {
        let j = (p.branch + 1) as f64;
        let exact = (j * std::f64::consts::PI).powi(2);
        shear_err = shear_err.max((p.eigenvalue - exact).abs() / exact);
        shear_count += 1;
    }
    let r0 = basis_report(&free, 11)?;
    let pass = r.weak_residual <= 1e-6
        && r0.weak_residual <= 1e-6
        && r.orthonormality_error <= 1e-8
        && r0.orthonormality_error <= 1e-8
        && r.divergence.max(r0.divergence) <= 1e-10
        && r.normal_trace.max(r0.normal_trace) <= 1e-10
        && shear_count > 0
        && shear_err <= 1e-6;
    outcome(
        pass,
        format!(
            "weak residual {:.1e}/{:.1e}, orthonormality {:.1e}, div {:.1e}, v.n {:.1e}, {} shear eigenvalues vs (j pi)^2 {:.1e}",
            r.weak_residual,
            r0.weak_residual,
            r.orthonormality_error.max(r0.orthonormality_error),
            r.divergence.max(r0.divergence),
            r.normal_trace.max(r0.normal_trace),
            shear_count,
            shear_err
        ),
    )
}

fn random_control(rng: &mut ChaCha8Rng, modes: usize, horizon: f64) -> Result<BoundaryControl> {
    let mut c = BoundaryControl::zero(std::f64::consts::TAU, modes, 4.0, horizon, 6)?;
    for node in 0..c.times.len() {
        for idx in control_indices(modes) {
            c.set(node, idx, rng.random_range(-1.0..1.0));
        }
    }
    Ok(project_compatible(&c))
}

fn criterion_2() -> Result<Outcome> {
    let spec = DomainSpec {
        length_x: std::f64::consts::TAU,
        modes_x: 4,
        nodes_y: 24,
        friction_alpha: 0.7,
        viscosity: 1.0,
    };
    let grid = build_grid(&spec)?;
    let solver = LiftSolver::new(&grid)?;
    let modes = 3;
    let op = LiftOperator::new(&solver, modes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut normal, mut tangential, mut harmonic, mut linearity, mut calderon) =
        (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut prev: Option<BoundaryControl> = None;
    for _ in 0..20 {
        let c = random_control(&mut rng, modes, 1.0)?;
        let scale = c.max_abs().max(1.0);
        let lifted = lift(&c, &op, &grid)?;
        let r = lift_residuals(&c, &lifted, &solver)?;
        normal = normal.max(r.normal / scale);
        tangential = tangential.max(r.tangential / scale);
        harmonic = harmonic.max(r.harmonic);
        calderon = calderon.max(lifted.calderon_ratio(&grid)?);
        if let Some(p) = &prev {
            let (a, b) = (0.8, -1.3);
            let combo = c.linear_combination(a, p, b)?;
            for &t in &c.times {
                let direct = solver.lift_coefficients(&combo.at(t)?.0, modes)?;
                let mut sum = solver.lift_coefficients(&c.at(t)?.0, modes)?.scaled(a);
                sum.axpy(b, &solver.lift_coefficients(&p.at(t)?.0, modes)?);
                linearity = linearity.max(direct.sub(&sum).max_abs() / direct.max_abs().max(1.0));
            }
        }
        prev = Some(c);
    }
    let pass = normal <= 1e-8
        && tangential <= 1e-6
        && harmonic <= 1e-8
        && linearity <= 1e-10
        && calderon.is_finite();
    outcome(
        pass,
        format!(
            "normal {normal:.1e}, tangential {tangential:.1e}, harmonic {harmonic:.1e}, linearity {linearity:.1e}, trace-lift constant {calderon:.3}"
        ),
    )
}

fn criterion_3() -> Result<Outcome> {
    let cfg = config(&toml(
        3,
        16,
        1.0,
        0.5,
        12,
        0.5,
        0.01,
        "[initial]\namplitude = 1.0\ndecay = 0.5\nseed = 3\n",
    ));
    let w = Workbench::new(&cfg)?;
    let ctrl = w.control(&[])?;
    let mut defects = vec![];
    let mut steps = 50;
    for _ in 0..4 {
        let traj = w
            .model
            .simulate_with_increments(&ctrl, &w.beta0, &zeros(steps), 0, 0)?;
        defects.push(energy_identity_defect(&traj, cfg.domain.viscosity));
        steps *= 2;
    }
    let orders: Vec<f64> = defects.windows(2).map(|d| (d[0] / d[1]).log2()).collect();
    let pass = orders.iter().all(|o| *o >= 0.9);
    outcome(
        pass,
        format!("defects {}, orders {:.3?}", sci(&defects), orders),
    )
}

fn criterion_4() -> Result<Outcome> {
    let mut cfg = config(&toml(
        3,
        16,
        1.0,
        0.5,
        12,
        1.0,
        0.01,
        "[initial]\namplitude = 1.0\ndecay = 0.5\nseed = 4\n",
    ));
    cfg.time.nonlinear = false;
    let w = Workbench::new(&cfg)?;
    let ctrl = w.control(&[])?;
    let nu = cfg.domain.viscosity;
    let lam = w.model.basis.eigenvalues();
    let exact: Vec<f64> = w
        .beta0
        .iter()
        .zip(&lam)
        .map(|(b, l)| b * (-nu * l * cfg.time.horizon).exp())
        .collect();
    let mut errs = vec![];
    for steps in [100, 200, 400] {
        let traj = w
            .model
            .simulate_with_increments(&ctrl, &w.beta0, &zeros(steps), 0, 0)?;
        errs.push(
            traj.final_beta()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    let ratios: Vec<f64> = errs.windows(2).map(|e| e[0] / e[1]).collect();
    let pass = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    outcome(
        pass,
        format!("max errors {}, halving ratios {:.3?}", sci(&errs), ratios),
    )
}

fn criterion_5() -> Result<Outcome> {
    let cfg = config(&toml(
        2,
        12,
        1.0,
        0.01,
        8,
        1.0,
        0.01,
        "[noise]\nmult_gain = [0.2]\n\n[initial]\namplitude = 0.1\ndecay = 2.0\nseed = 5\n",
    ));
    let w = Workbench::new(&cfg)?;
    let ctrl = w.control(&[])?;
    let fine_steps = 4096;
    let factors = [8usize, 16, 32, 64];
    let errs: Vec<Vec<f64>> = (0..200u64)
        .into_par_iter()
        .map(|p| {
            let incs = brownian_increments(55, p, fine_steps, 1, 1.0 / fine_steps as f64);
            let fine = w
                .model
                .simulate_with_increments(&ctrl, &w.beta0, &incs, 55, p)?;
            factors
                .iter()
                .map(|&f| {
                    let coarse = w.model.simulate_with_increments(
                        &ctrl,
                        &w.beta0,
                        &coarsen(&incs, f),
                        55,
                        p,
                    )?;
                    Ok(dist(coarse.final_beta(), fine.final_beta()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let dts: Vec<f64> = factors
        .iter()
        .map(|f| *f as f64 / fine_steps as f64)
        .collect();
    let means: Vec<f64> = (0..factors.len())
        .map(|k| errs.iter().map(|e| e[k]).sum::<f64>() / errs.len() as f64)
        .collect();
    let s = slope(&dts, &means);
    outcome(
        (0.4..=0.6).contains(&s),
        format!("mean strong errors {}, slope {s:.3}", sci(&means)),
    )
}

fn criterion_6() -> Result<Outcome> {
    let cfg = config(&toml(
        4,
        24,
        1.0,
        0.5,
        32,
        0.5,
        0.005,
        "[noise]\nmult_gain = [0.2]\n\n[initial]\namplitude = 1.0\ndecay = 1.0\nseed = 6\n\n\
         [control]\nmodes = 1\napply = [0.3, 0.2]\n",
    ));
    let full = build_eigenbasis(&cfg.domain, 32)?;
    let benches: Vec<Workbench> = [8usize, 16, 32]
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.basis.size = n;
            Workbench::with_basis(&c, full.truncated(n)?)
        })
        .collect::<Result<_>>()?;
    let steps = cfg.time.steps();
    let dt = cfg.time.effective_dt();
    let ok: Vec<bool> = (0..50u64)
        .into_par_iter()
        .map(|p| {
            let incs = brownian_increments(66, p, steps, 1, dt);
            let ends: Vec<Vec<f64>> = benches
                .iter()
                .map(|w| {
                    let ctrl = w.control(&cfg.control.apply)?;
                    Ok(w.model
                        .simulate_with_increments(&ctrl, &w.beta0, &incs, 66, p)?
                        .final_beta()
                        .to_vec())
                })
                .collect::<Result<_>>()?;
            Ok(dist(&ends[0], &ends[1]) >= dist(&ends[1], &ends[2]))
        })
        .collect::<Result<_>>()?;
    let frac = ok.iter().filter(|b| **b).count() as f64 / ok.len() as f64;
    outcome(
        frac >= 0.9,
        format!(
            "nested-gap ordering holds on {:.0}% of 50 paths",
            100.0 * frac
        ),
    )
}

fn verify_config(n: usize, paths: usize) -> RunConfig {
    let mut cfg = config(&toml(
        5,
        32,
        1.0,
        0.5,
        n,
        0.5,
        0.01,
        "[noise]\nmult_gain = [0.2]\n\n[initial]\namplitude = 0.5\ndecay = 1.0\nseed = 7\n\n\
         [control]\nmodes = 1\napply = [0.3, 0.2]\ncompare = [0.2, 0.1]\n",
    ));
    cfg.monte_carlo.paths = paths;
    cfg.monte_carlo.seed = 77;
    cfg
}

fn criterion_7() -> Result<Outcome> {
    let base = verify_reports(&verify_config(8, 400))?;
    let doubled = verify_reports(&verify_config(16, 400))?;
    let more = verify_reports(&verify_config(8, 1600))?;
    let mut worst = 1.0_f64;
    let mut finite = base.all_finite() && doubled.all_finite() && more.all_finite();
    let mut names = vec![];
    for (i, e) in base.estimates.iter().enumerate() {
        for other in [&doubled.estimates[i], &more.estimates[i]] {
            let (a, b) = (e.constant, other.constant);
            finite &= a.is_finite() && b.is_finite();
            if a > 0.0 && b > 0.0 {
                worst = worst.max(a.max(b) / a.min(b));
            } else if a != b {
                worst = f64::INFINITY;
            }
        }
        names.push(format!("{}={:.3}", e.name, e.constant));
    }
    let chain = base.holder_chain.holds && doubled.holder_chain.holds && more.holder_chain.holds;
    let pass = finite && chain && worst <= 2.0;
    outcome(
        pass,
        format!(
            "{}; holder chain {chain}; worst change factor {worst:.3}",
            names.join(", ")
        ),
    )
}

fn criterion_8() -> Result<Outcome> {
    let cfg = verify_config(8, MIN_PATHS);
    let w = Workbench::new(&cfg)?;
    let mc = &cfg.monte_carlo;
    let consts = cfg.stability_constants();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let run = |p1: &[f64], p2: &[f64]| -> Result<(f64, f64)> {
        let c1 = w.control(p1)?;
        let c2 = w.control(p2)?;
        let t1: Vec<Trajectory> = w
            .model
            .simulate_ensemble(&c1, &w.beta0, mc.seed, mc.paths)?;
        let t2: Vec<Trajectory> = w
            .model
            .simulate_ensemble(&c2, &w.beta0, mc.seed, mc.paths)?;
        let r = certify_stability(
            &StabilityInput {
                drift: &w.model.drift,
                ctrl1: &c1,
                ctrl2: &c2,
                trajs1: &t1,
                trajs2: &t2,
            },
            consts,
            MIN_PATHS,
        )?;
        Ok((r.constant, r.ci_high))
    };
    let mut fitted = vec![];
    let mut halved = vec![];
    for _ in 0..5 {
        let p1 = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let p2 = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        // shrink about the midpoint so the pair stays centred where it was
        let q1: Vec<f64> = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| 0.75 * a + 0.25 * b)
            .collect();
        let q2: Vec<f64> = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| 0.25 * a + 0.75 * b)
            .collect();
        fitted.push(run(&p1, &p2)?);
        halved.push(run(&q1, &q2)?);
    }
    let c = fitted.iter().map(|f| f.0).fold(0.0, f64::max);
    let c_hi = fitted.iter().map(|f| f.1).fold(0.0, f64::max);
    let pass = c_hi.is_finite() && c > 0.0 && halved.iter().all(|h| h.0 <= c_hi);
    outcome(
        pass,
        format!(
            "fitted constant {c:.6} (upper bound {c_hi:.6}); pairs {:.6?}; halved {:.6?}",
            fitted, halved
        ),
    )
}

fn recovery(noise: &str, paths: usize) -> Result<(f64, f64, Vec<f64>, Vec<f64>, bool)> {
    let mut cfg = config(&toml(
        3,
        16,
        1.0,
        0.5,
        12,
        0.5,
        0.01,
        &format!(
            "{noise}[initial]\namplitude = 0.5\ndecay = 1.0\nseed = 9\n\n\
             [control]\nmodes = 1\nlambda1 = 1e-6\nlambda2 = 1e-6\ntarget = [0.4, -0.3]\ninitial = [0.0, 0.0]\n\n\
             [optimizer]\nkind = \"nelder-mead\"\nbudget = 40\nstep = 0.2\n"
        ),
    ));
    cfg.monte_carlo.paths = paths;
    cfg.monte_carlo.seed = 99;
    let w = Workbench::new(&cfg)?;
    let spec = cfg.admissible();
    let star = w.control(&cfg.control.target)?;
    let target = make_target(&w.model, &star, &w.beta0)?;
    let problem = CostProblem {
        model: &w.model,
        target: &target,
        beta0: &w.beta0,
        param: &w.param,
        spec: &spec,
        c0: cfg.diagnostics.c0,
        seed: cfg.monte_carlo.seed,
        paths,
    };
    assert_eq!(cfg.optimizer.kind, OptimizerKind::NelderMead);
    let r = optimize(&problem, &cfg.control.initial, &cfg.optimizer)?;
    let js: Vec<f64> = r.history.iter().map(|h| h.j).collect();
    let monotone = js.windows(2).all(|p| p[1] <= p[0]);
    Ok((
        js[0],
        r.best.j,
        r.best_params,
        cfg.control.target.clone(),
        monotone,
    ))
}

fn criterion_9() -> Result<Outcome> {
    let (j0, j1, p, star, mono) = recovery("", 1)?;
    let rel = p
        .iter()
        .zip(&star)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let (k0, k1, _, _, mono2) = recovery("[noise]\nmult_gain = [0.1]\n\n", 50)?;
    let pass = j1 <= 0.1 * j0 && rel <= 0.1 && k1 <= 0.5 * k0 && mono && mono2;
    outcome(
        pass,
        format!(
            "noise off: J {j0:.3e} -> {j1:.3e}, params {p:.4?} (max rel err {rel:.2e}); rho=0.1: J {k0:.3e} -> {k1:.3e}; monotone {mono}/{mono2}"
        ),
    )
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("output dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Result<Outcome> {
    let mut cfg = verify_config(8, MIN_PATHS);
    cfg.optimizer.budget = 4;
    cfg.control.target = vec![0.3, -0.2];
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    for (dir, threads) in [(a.path(), 1), (b.path(), 2)] {
        let mut c = cfg.clone();
        c.monte_carlo.threads = threads;
        let run = Run::new(c, Some(dir.to_path_buf()))?;
        for cmd in [
            Command::Basis,
            Command::Lift,
            Command::Simulate,
            Command::Verify,
            Command::Optimize,
        ] {
            run.execute(cmd)?;
        }
    }
    let ta = read_tree(a.path());
    let tb = read_tree(b.path());
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = ta.len() == tb.len() && ta.len() > 10 && differing.is_empty();
    outcome(
        pass,
        format!(
            "{} output files compared across reruns, {} differ",
            ta.len(),
            differing.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("eigenbasis certification", criterion_1),
        ("lifting certification", criterion_2),
        ("homogeneous energy identity", criterion_3),
        ("linear closed form", criterion_4),
        ("strong SDE convergence", criterion_5),
        ("Galerkin consistency", criterion_6),
        ("estimate certification", criterion_7),
        ("stability", criterion_8),
        ("control recovery", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f() {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {:>2} {tag} [{:.1}s] {name}: {detail}",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
