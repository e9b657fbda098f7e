use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slipflow::basis::{build_eigenbasis, norm_h, project, random_discrete_fields};
use slipflow::diagnostics::{
    certify_fourth_moment, certify_second_moment, certify_wellposed_cost, trapezoid, weight_xi0,
    FourthMoment, SecondMoment, MIN_PATHS,
};
use slipflow::dynamics::{GalerkinModel, NoiseModel, TimeSpec, Trajectory};
use slipflow::field::Component;
use slipflow::geometry::{build_grid, DomainSpec};
use slipflow::lifting::{BoundaryControl, LiftOperator, LiftSolver, WallData};

fn spec(alpha: f64) -> DomainSpec {
    DomainSpec {
        length_x: std::f64::consts::TAU,
        modes_x: 3,
        nodes_y: 20,
        friction_alpha: alpha,
        viscosity: 0.5,
    }
}

/// Thomas algorithm for `sub_i x_{i-1} + diag_i x_i + sup_i x_{i+1} = rhs_i`.
fn tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Second-order finite differences for `H'' = k² H`, `H'(0) = s0`, `H'(1) = s1`, on `m` intervals.
fn harmonic_fd(k: f64, s0: f64, s1: f64, m: usize) -> Vec<f64> {
    let h = 1.0 / m as f64;
    let n = m + 1;
    let diag = vec![-2.0 - k * k * h * h; n];
    let mut sub = vec![1.0; n];
    let mut sup = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    // ghost points folded into the end rows
    sup[0] = 2.0;
    rhs[0] = 2.0 * h * s0;
    sub[n - 1] = 2.0;
    rhs[n - 1] = -2.0 * h * s1;
    tridiagonal(&sub, &diag, &sup, &rhs)
}

#[test]
fn harmonic_profile_matches_finite_differences() {
    let grid = build_grid(&spec(1.0)).unwrap();
    let solver = LiftSolver::new(&grid).unwrap();
    let mut a = WallData::zeros(2);
    a.bottom[2 + 1] = 0.8;
    a.top[2 + 1] = -0.3;
    a.bottom[2 - 2] = 0.5;
    a.top[2 - 2] = 0.9;
    let h = solver.solve_harmonic(&a).unwrap();
    for (mode, ab, at) in [(1, 0.8, -0.3), (-2, 0.5, 0.9)] {
        let k = spec(1.0).wavenumber(mode);
        let m = 200;
        let coarse = harmonic_fd(k, -ab, at, m);
        let fine = harmonic_fd(k, -ab, at, 2 * m);
        for i in (0..=m).step_by(20) {
            let rich = (4.0 * fine[2 * i] - coarse[i]) / 3.0;
            let y = i as f64 / m as f64;
            let (v, _) = h.profile(mode, y);
            assert!((v - rich).abs() < 1e-8, "mode {mode} y {y}: {v} vs {rich}");
        }
    }
}

/// Mean-zero shear `u = -mu y²/2 + c1 y + c2` with `-u'(0) + alpha u(0) = bb` and `-u'(1) - alpha u(1) = bt`.
fn shear_profile(alpha: f64, bb: f64, bt: f64) -> impl Fn(f64) -> f64 {
    let m = Matrix3::new(
        -1.0 / 6.0,
        0.5,
        1.0,
        0.0,
        -1.0,
        alpha,
        1.0 + 0.5 * alpha,
        -1.0 - alpha,
        -alpha,
    );
    let x = m.lu().solve(&Vector3::new(0.0, bb, bt)).unwrap();
    move |y| -x[0] * y * y / 2.0 + x[1] * y + x[2]
}

#[test]
fn shear_stokes_correction_matches_closed_form() {
    for alpha in [0.0, 1.0] {
        let grid = build_grid(&spec(alpha)).unwrap();
        let solver = LiftSolver::new(&grid).unwrap();
        let (bb, bt) = (0.4, -0.7);
        let mut b = WallData::zeros(1);
        b.bottom[1] = bb;
        b.top[1] = bt;
        let v = solver.solve_stokes_correction(&b).unwrap();
        let exact = shear_profile(alpha, bb, bt);
        let u = v.component(Component::U);
        for (q, &y) in grid.y_nodes.iter().enumerate() {
            for ix in 0..grid.nx() {
                let got = u[grid.index(ix, q)];
                assert!(
                    (got - exact(y)).abs() < 1e-10,
                    "alpha {alpha} y {y}: {got} vs {}",
                    exact(y)
                );
            }
        }
        assert!(v.component(Component::W).iter().all(|w| w.abs() < 1e-12));
    }
    // the free-slip case reduces to c0 (1/6 - y^2/2) for top stress c0
    let f = shear_profile(0.0, 0.0, 2.0);
    for y in [0.0, 0.3, 1.0] {
        assert!((f(y) - 2.0 * (1.0 / 6.0 - y * y / 2.0)).abs() < 1e-14);
    }
}

#[test]
fn projection_energy_is_monotone_in_n() {
    let basis = build_eigenbasis(&spec(1.0), 24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in random_discrete_fields(&basis, 4, &mut rng) {
        let c = project(&f, &basis).unwrap();
        let total = norm_h(&basis.grid, &f).unwrap().powi(2);
        let mut acc = 0.0;
        for ci in &c {
            let next = acc + ci * ci;
            assert!(next >= acc);
            acc = next;
        }
        assert!(acc <= total * (1.0 + 1e-12));
    }
}

struct Linear {
    model: GalerkinModel,
    beta0: Vec<f64>,
    ctrl: BoundaryControl,
}

fn linear(horizon: f64) -> Linear {
    let s = spec(1.0);
    let basis = build_eigenbasis(&s, 4).unwrap();
    let solver = LiftSolver::new(&basis.grid).unwrap();
    let lift = LiftOperator::new(&solver, 1).unwrap();
    let time = TimeSpec {
        horizon,
        dt: 0.01,
        nonlinear: false,
    };
    let model = GalerkinModel::new(basis, lift, NoiseModel::none(), time).unwrap();
    let ctrl = BoundaryControl::zero(s.length_x, 1, 4.0, horizon, 3).unwrap();
    Linear {
        model,
        beta0: vec![0.6, -0.4, 0.3, 0.2],
        ctrl,
    }
}

fn run(l: &Linear, steps: usize) -> Vec<Trajectory> {
    let t = l
        .model
        .simulate_with_increments(&l.ctrl, &l.beta0, &vec![vec![]; steps], 0, 0)
        .unwrap();
    vec![t; MIN_PATHS]
}

#[test]
fn linear_moments_match_discrete_closed_form() {
    let l = linear(0.2);
    let (nu, c0, steps) = (0.5, 1.3, 40);
    let dt = 0.2 / steps as f64;
    let trajs = run(&l, steps);
    let times = &trajs[0].times;
    let w = weight_xi0(&l.ctrl, c0, times).unwrap();
    let lam = l.model.basis.eigenvalues();
    let energy = |k: usize| -> f64 {
        l.beta0
            .iter()
            .zip(&lam)
            .map(|(b, la)| b * b * (1.0 - nu * la * dt).powi(2 * k as i32))
            .sum()
    };
    let diss = |k: usize| -> f64 {
        l.beta0
            .iter()
            .zip(&lam)
            .map(|(b, la)| la * b * b * (1.0 - nu * la * dt).powi(2 * k as i32))
            .sum()
    };
    let xi2: Vec<f64> = times.iter().map(|t| (-2.0 * c0 * t).exp()).collect();
    let sup = (0..=steps).map(|k| xi2[k] * energy(k)).fold(0.0, f64::max);
    let int_v = trapezoid(
        times,
        &(0..=steps).map(|k| xi2[k] * diss(k)).collect::<Vec<_>>(),
    );
    let rhs2 = energy(0) + trapezoid(times, &xi2);

    let r2 = certify_second_moment(&trajs, &w, nu, SecondMoment::Galerkin, MIN_PATHS).unwrap();
    assert!((r2.lhs - (sup + nu * int_v)).abs() < 1e-12 * r2.lhs);
    assert!((r2.rhs - rhs2).abs() < 1e-12 * rhs2);

    let sup4 = (0..=steps)
        .map(|k| xi2[k] * xi2[k] * energy(k) * energy(k))
        .fold(0.0, f64::max);
    let xi4: Vec<f64> = xi2.iter().map(|x| x * x).collect();
    let r4 = certify_fourth_moment(&trajs, &w, nu, FourthMoment::Galerkin, MIN_PATHS).unwrap();
    assert!((r4.lhs - (sup4 + 8.0 * nu * nu * int_v * int_v)).abs() < 1e-12 * r4.lhs);
    assert!((r4.rhs - (energy(0).powi(2) + trapezoid(times, &xi4))).abs() < 1e-12 * r4.rhs);

    let chain = certify_wellposed_cost(&trajs, &w, MIN_PATHS).unwrap();
    assert!(
        (chain.inverse_weight_root - (2.0 * c0 * 0.2_f64).exp()).abs()
            < 1e-12 * chain.inverse_weight_root
    );
    assert!(chain.holds);
}

/// Continuous-time value `Σ β_i² + ν Σ λ_i β_i² (1 - e^{-2(C0+νλ_i)T}) / (2(C0+νλ_i))`.
#[test]
fn linear_second_moment_converges_to_exponential_decay() {
    let horizon = 0.1;
    let l = linear(horizon);
    let (nu, c0) = (0.5, 1.0);
    let lam = l.model.basis.eigenvalues();
    let exact: f64 = l.beta0.iter().map(|b| b * b).sum::<f64>()
        + nu * l
            .beta0
            .iter()
            .zip(&lam)
            .map(|(b, la)| {
                let r = 2.0 * (c0 + nu * la);
                la * b * b * (1.0 - (-r * horizon).exp()) / r
            })
            .sum::<f64>();
    let lhs = |steps: usize| {
        let trajs = run(&l, steps);
        let w = weight_xi0(&l.ctrl, c0, &trajs[0].times).unwrap();
        certify_second_moment(&trajs, &w, nu, SecondMoment::Galerkin, MIN_PATHS)
            .unwrap()
            .lhs
    };
    let (a, b) = (lhs(1000), lhs(2000));
    let rich = 2.0 * b - a;
    assert!(((a - exact) / (b - exact) - 2.0).abs() < 0.05);
    assert!((rich - exact).abs() < 1e-6 * exact, "{rich} vs {exact}");
}
