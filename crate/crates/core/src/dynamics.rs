//! Galerkin stochastic Navier-Stokes system for the coefficients of `u_n`.
//!
//! With `y_n = u_n + a` (lifting) and `u_n = Σ β_i e_i`, the coefficients obey
//!
//! ```text
//! dβ_i = [ -ν(u_n + a, e_i)_V + ν∫_Γ b (e_i·τ) dγ - (∂_t a, e_i) - ((y_n·∇)y_n, e_i) ] dt
//!        + Σ_k (G^k(t, y_n), e_i) dW^k
//! ```
//!
//! with `G^k = g_k + ρ_k u_n`. Everything that does not depend on the state
//! is precomputed in [`DriftOperator`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{inner_h, inner_v, Basis};
use crate::error::{check_len, Error, Result};
use crate::field::{Component, VelocityField};
use crate::geometry::Grid;
use crate::lifting::{control_indices, BoundaryControl, ControlField, LiftOperator};

/// State norm above which a path is declared blown up.
pub const BLOWUP_NORM: f64 = 1e8;

/// `G^k(t, y) = g_k + ρ_k u_n` in basis coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// One coefficient vector per Wiener component; shorter vectors are zero padded.
    #[serde(default)]
    pub additive: Vec<Vec<f64>>,
    /// Multiplicative gains `ρ_k >= 0`.
    #[serde(default)]
    pub mult_gain: Vec<f64>,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::default()
    }

    pub fn multiplicative(gains: &[f64]) -> Self {
        NoiseModel {
            additive: vec![],
            mult_gain: gains.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mult_gain.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidConfig(
                "multiplicative gains must be finite and nonnegative".into(),
            ));
        }
        if self.additive.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig(
                "additive noise coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Number of Wiener components; the shorter list is zero padded.
    pub fn m(&self) -> usize {
        self.mult_gain.len().max(self.additive.len())
    }

    pub fn is_off(&self) -> bool {
        self.mult_gain.iter().all(|r| *r == 0.0)
            && self.additive.iter().flatten().all(|g| *g == 0.0)
    }

    /// Lipschitz constant `K = Σ ρ_k²` of `y ↦ G(t, y)` in Hilbert-Schmidt norm squared.
    pub fn lipschitz_k(&self) -> f64 {
        self.mult_gain.iter().map(|r| r * r).sum()
    }

    /// Linear-growth constant `max(Σ‖g_k‖, Σρ_k)`.
    pub fn growth_k(&self) -> f64 {
        let g: f64 = self
            .additive
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        g.max(self.mult_gain.iter().sum())
    }

    fn additive_entry(&self, k: usize, i: usize) -> f64 {
        self.additive
            .get(k)
            .and_then(|g| g.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    fn gain(&self, k: usize) -> f64 {
        self.mult_gain.get(k).copied().unwrap_or(0.0)
    }
}

/// Diffusion matrix: column `k` holds the coefficients of `G^k = g_k + ρ_k u_n`.
pub fn diffusion(beta: &[f64], noise: &NoiseModel) -> DMatrix<f64> {
    let n = beta.len();
    DMatrix::from_fn(n, noise.m(), |i, k| {
        noise.additive_entry(k, i) + noise.gain(k) * beta[i]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub beta: Vec<f64>,
}

/// State-independent pieces of the drift.
#[derive(Debug, Clone)]
pub struct DriftOperator {
    pub viscosity: f64,
    pub eigenvalues: Vec<f64>,
    n: usize,
    nc: usize,
    npts: usize,
    /// Interior samples of basis fields, all six components stacked: `6 npts × n`.
    basis_samples: DMatrix<f64>,
    /// Interior samples of the lifting responses: `6 npts × nc`.
    response_samples: DMatrix<f64>,
    /// Weighted `u` and `w` samples of the basis: `n × npts`.
    proj_u: DMatrix<f64>,
    proj_w: DMatrix<f64>,
    /// `(R_c, e_i)_V`.
    pub v_coupling: DMatrix<f64>,
    /// `(R_c, e_i)`.
    pub h_coupling: DMatrix<f64>,
    /// `∫_Γ b_c (e_i·τ) dγ`, nonzero only for tangential-stress coefficients.
    pub wall_coupling: DMatrix<f64>,
    /// Gram matrices of the responses in `H` and `V`.
    pub response_gram_h: DMatrix<f64>,
    pub response_gram_v: DMatrix<f64>,
}

fn interior_matrix(fields: &[VelocityField], npts: usize) -> DMatrix<f64> {
    DMatrix::from_fn(6 * npts, fields.len(), |r, c| fields[c].as_slice()[r])
}

impl DriftOperator {
    pub fn new(basis: &Basis, lift: &LiftOperator) -> Result<Self> {
        let grid = &basis.grid;
        let alpha = basis.alpha();
        let npts = grid.npts();
        let n = basis.len();
        let nc = lift.responses.len();
        for r in &lift.responses {
            r.check_grid(grid)?;
        }
        let weights = &grid.quad_weights_domain;
        let proj = |c: Component| {
            DMatrix::from_fn(n, npts, |i, q| weights[q] * basis.fields[i].component(c)[q])
        };
        let mut v_coupling = DMatrix::zeros(n, nc);
        let mut h_coupling = DMatrix::zeros(n, nc);
        for (c, r) in lift.responses.iter().enumerate() {
            for (i, e) in basis.fields.iter().enumerate() {
                v_coupling[(i, c)] = inner_v(grid, alpha, r, e)?;
                h_coupling[(i, c)] = inner_h(grid, r, e)?;
            }
        }
        let mut wall_coupling = DMatrix::zeros(n, nc);
        for (c, idx) in control_indices(lift.modes).into_iter().enumerate() {
            if idx.field != ControlField::B {
                continue;
            }
            let phi = grid.mode_samples(idx.mode);
            for (i, e) in basis.fields.iter().enumerate() {
                let et = e.tangential_trace(idx.wall);
                let prod: Vec<f64> = phi.iter().zip(&et).map(|(a, b)| a * b).collect();
                wall_coupling[(i, c)] = grid.integrate_wall(&prod)?;
            }
        }
        let mut response_gram_h = DMatrix::zeros(nc, nc);
        let mut response_gram_v = DMatrix::zeros(nc, nc);
        for c in 0..nc {
            for d in c..nc {
                let h = inner_h(grid, &lift.responses[c], &lift.responses[d])?;
                let v = inner_v(grid, alpha, &lift.responses[c], &lift.responses[d])?;
                response_gram_h[(c, d)] = h;
                response_gram_h[(d, c)] = h;
                response_gram_v[(c, d)] = v;
                response_gram_v[(d, c)] = v;
            }
        }
        Ok(DriftOperator {
            viscosity: basis.spec.viscosity,
            eigenvalues: basis.eigenvalues(),
            n,
            nc,
            npts,
            basis_samples: interior_matrix(&basis.fields, npts),
            response_samples: interior_matrix(&lift.responses, npts),
            proj_u: proj(Component::U),
            proj_w: proj(Component::W),
            v_coupling,
            h_coupling,
            wall_coupling,
            response_gram_h,
            response_gram_v,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.nc
    }

    /// `((y·∇)y, e_i)` for `y = Σβ_i e_i + Σθ_c R_c`.
    pub fn nonlinear(&self, beta: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut y = &self.basis_samples * DVector::from_column_slice(beta);
        if theta.iter().any(|t| *t != 0.0) {
            y.gemv(
                1.0,
                &self.response_samples,
                &DVector::from_column_slice(theta),
                1.0,
            );
        }
        let p = self.npts;
        let s = y.as_slice();
        let (u, w, ux, uy, wx, wy) = (
            &s[0..p],
            &s[p..2 * p],
            &s[2 * p..3 * p],
            &s[3 * p..4 * p],
            &s[4 * p..5 * p],
            &s[5 * p..6 * p],
        );
        let cu = DVector::from_iterator(p, (0..p).map(|q| u[q] * ux[q] + w[q] * uy[q]));
        let cw = DVector::from_iterator(p, (0..p).map(|q| u[q] * wx[q] + w[q] * wy[q]));
        let mut out = &self.proj_u * cu;
        out.gemv(1.0, &self.proj_w, &cw, 1.0);
        out.as_slice().to_vec()
    }

    /// Drift with control coefficients `theta` and their time derivative.
    pub fn drift_coefficients(
        &self,
        beta: &[f64],
        theta: &[f64],
        theta_dot: &[f64],
        nonlinear: bool,
    ) -> Vec<f64> {
        let nu = self.viscosity;
        let th = DVector::from_column_slice(theta);
        let mut out = DVector::from_iterator(
            self.n,
            beta.iter().zip(&self.eigenvalues).map(|(b, l)| -nu * l * b),
        );
        if theta.iter().any(|t| *t != 0.0) {
            out.gemv(-nu, &self.v_coupling, &th, 1.0);
            out.gemv(nu, &self.wall_coupling, &th, 1.0);
        }
        if theta_dot.iter().any(|t| *t != 0.0) {
            out.gemv(
                -1.0,
                &self.h_coupling,
                &DVector::from_column_slice(theta_dot),
                1.0,
            );
        }
        if nonlinear {
            for (o, c) in out.iter_mut().zip(self.nonlinear(beta, theta)) {
                *o -= c;
            }
        }
        out.as_slice().to_vec()
    }

    pub fn drift(
        &self,
        state: &GalerkinState,
        ctrl: &BoundaryControl,
        nonlinear: bool,
    ) -> Result<Vec<f64>> {
        check_len(self.n, state.beta.len())?;
        check_len(self.nc, ctrl.len())?;
        let (theta, slope) = ctrl.at(state.t)?;
        Ok(self.drift_coefficients(&state.beta, &theta, &slope, nonlinear))
    }

    pub fn npts(&self) -> usize {
        self.npts
    }

    /// Interior samples of `(u, w)` of `y = Σβ_i e_i + Σθ_c R_c`, `u` first.
    pub fn velocity_samples(&self, beta: &[f64], theta: &[f64]) -> Vec<f64> {
        let rows = 2 * self.npts;
        let mut y = self.basis_samples.rows(0, rows) * DVector::from_column_slice(beta);
        if theta.iter().any(|t| *t != 0.0) {
            y.gemv(
                1.0,
                &self.response_samples.rows(0, rows),
                &DVector::from_column_slice(theta),
                1.0,
            );
        }
        y.as_slice().to_vec()
    }

    /// `(‖u‖², ‖u‖_V², ‖y‖², ‖y‖_V²)` with `y = u + a`.
    pub fn norms(&self, beta: &[f64], theta: &[f64]) -> [f64; 4] {
        let u2: f64 = beta.iter().map(|b| b * b).sum();
        let uv: f64 = beta
            .iter()
            .zip(&self.eigenvalues)
            .map(|(b, l)| l * b * b)
            .sum();
        if theta.iter().all(|t| *t == 0.0) {
            return [u2, uv, u2, uv];
        }
        let b = DVector::from_column_slice(beta);
        let th = DVector::from_column_slice(theta);
        let cross_h = b.dot(&(&self.h_coupling * &th));
        let cross_v = b.dot(&(&self.v_coupling * &th));
        let aa_h = th.dot(&(&self.response_gram_h * &th));
        let aa_v = th.dot(&(&self.response_gram_v * &th));
        [
            u2,
            uv,
            (u2 + 2.0 * cross_h + aa_h).max(0.0),
            (uv + 2.0 * cross_v + aa_v).max(0.0),
        ]
    }

    /// `‖(y_1 - y_2)‖²` and its V-norm when the two states use different controls.
    pub fn difference_norms(
        &self,
        beta1: &[f64],
        theta1: &[f64],
        beta2: &[f64],
        theta2: &[f64],
    ) -> [f64; 2] {
        let db: Vec<f64> = beta1.iter().zip(beta2).map(|(a, b)| a - b).collect();
        let dt: Vec<f64> = theta1.iter().zip(theta2).map(|(a, b)| a - b).collect();
        let n = self.norms(&db, &dt);
        [n[2], n[3]]
    }
}

/// `((y·∇)y, e_i)` for an arbitrary sampled field, by quadrature.
pub fn nonlinear_term(y: &VelocityField, basis: &Basis) -> Result<Vec<f64>> {
    let grid = &basis.grid;
    y.check_grid(grid)?;
    use Component::*;
    let (u, w) = (y.component(U), y.component(W));
    let cu: Vec<f64> = (0..grid.npts())
        .map(|q| u[q] * y.component(Ux)[q] + w[q] * y.component(Uy)[q])
        .collect();
    let cw: Vec<f64> = (0..grid.npts())
        .map(|q| u[q] * y.component(Wx)[q] + w[q] * y.component(Wy)[q])
        .collect();
    Ok(basis
        .fields
        .iter()
        .map(|e| {
            grid.quad_weights_domain
                .iter()
                .enumerate()
                .map(|(q, wt)| wt * (cu[q] * e.component(U)[q] + cw[q] * e.component(W)[q]))
                .sum()
        })
        .collect())
}

/// `((v·∇)v, v)` for a sampled field.
pub fn convective_energy(grid: &Grid, v: &VelocityField) -> Result<f64> {
    v.check_grid(grid)?;
    use Component::*;
    let (u, w) = (v.component(U), v.component(W));
    grid.integrate_domain(
        &(0..grid.npts())
            .map(|q| {
                u[q] * (u[q] * v.component(Ux)[q] + w[q] * v.component(Uy)[q])
                    + w[q] * (u[q] * v.component(Wx)[q] + w[q] * v.component(Wy)[q])
            })
            .collect::<Vec<_>>(),
    )
}

/// One Euler-Maruyama step: `β ← β + f dt + G dW`.
pub fn step_em(
    state: &GalerkinState,
    dt: f64,
    dw: &[f64],
    drift: &[f64],
    noise: &NoiseModel,
) -> Result<GalerkinState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "time step must be positive, got {dt}"
        )));
    }
    check_len(state.beta.len(), drift.len())?;
    check_len(noise.m(), dw.len())?;
    let mut beta: Vec<f64> = state
        .beta
        .iter()
        .zip(drift)
        .map(|(b, f)| b + f * dt)
        .collect();
    for (k, dwk) in dw.iter().enumerate() {
        if *dwk == 0.0 {
            continue;
        }
        let rho = noise.gain(k);
        for (i, b) in beta.iter_mut().enumerate() {
            *b += (noise.additive_entry(k, i) + rho * state.beta[i]) * dwk;
        }
    }
    let norm2: f64 = beta.iter().map(|b| b * b).sum();
    if !norm2.is_finite() || norm2.sqrt() > BLOWUP_NORM {
        return Err(Error::Numerical(format!(
            "state blew up at t = {}",
            state.t + dt
        )));
    }
    Ok(GalerkinState {
        t: state.t + dt,
        beta,
    })
}

/// Random smooth initial data: `β_i = amp z_i (λ_1/λ_i)^decay` with `z_i` standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub amplitude: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_decay() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn zero() -> Self {
        InitialCondition {
            amplitude: 0.0,
            decay: 1.0,
            seed: 0,
        }
    }

    /// Coefficients on the leading `eigenvalues.len()` basis functions. The
    /// draw for index `i` does not depend on the truncation level.
    pub fn coefficients(&self, eigenvalues: &[f64]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let l1 = eigenvalues.first().copied().unwrap_or(1.0);
        eigenvalues
            .iter()
            .map(|l| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.amplitude * z * (l1 / l).powf(self.decay)
            })
            .collect()
    }
}

/// Time stepping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSpec {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_true")]
    pub nonlinear: bool,
}

fn default_true() -> bool {
    true
}

impl TimeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.dt > self.horizon {
            return Err(Error::InvalidConfig(format!(
                "dt {} exceeds the horizon {}",
                self.dt, self.horizon
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    /// Step actually used so that `steps * dt = horizon`.
    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
}

/// Random stream for one Monte Carlo path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Brownian increments `dW ~ N(0, dt I_m)` for `steps` steps.
pub fn brownian_increments(seed: u64, path: u64, steps: usize, m: usize, dt: f64) -> Vec<Vec<f64>> {
    let mut rng = path_rng(seed, path);
    let s = dt.sqrt();
    (0..steps)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect()
        })
        .collect()
}

/// Sum consecutive blocks of `factor` increments (same Brownian path, coarser step).
pub fn coarsen(increments: &[Vec<f64>], factor: usize) -> Vec<Vec<f64>> {
    increments
        .chunks(factor)
        .map(|block| {
            let mut s = vec![0.0; block[0].len()];
            for inc in block {
                for (a, b) in s.iter_mut().zip(inc) {
                    *a += b;
                }
            }
            s
        })
        .collect()
}

/// One simulated realization of the Galerkin system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub path: u64,
    pub times: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    /// `‖u_n‖²`
    pub energy: Vec<f64>,
    /// `‖u_n‖_V²`
    pub dissipation: Vec<f64>,
    /// `‖y_n‖²`
    pub y_energy: Vec<f64>,
    /// `‖y_n‖_V²`
    pub y_dissipation: Vec<f64>,
    /// `2(f + νΛβ)·β`: power injected by everything except viscous dissipation.
    pub forcing_power: Vec<f64>,
    pub blew_up: bool,
    pub increments: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn final_beta(&self) -> &[f64] {
        self.beta
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn u0_energy(&self) -> f64 {
        self.energy[0]
    }

    pub fn y0_energy(&self) -> f64 {
        self.y_energy[0]
    }

    /// CSV with time, norms and the leading `components` coefficients.
    pub fn to_csv(&self, components: usize, header_comment: &str) -> String {
        use std::fmt::Write;
        let k = components.min(self.beta[0].len());
        let mut s = String::new();
        if !header_comment.is_empty() {
            let _ = writeln!(s, "# {header_comment}");
        }
        s.push_str("t,u_l2_sq,u_v_sq,y_l2_sq,y_v_sq");
        for i in 0..k {
            let _ = write!(s, ",beta_{}", i + 1);
        }
        s.push('\n');
        for l in 0..self.times.len() {
            let _ = write!(
                s,
                "{:e},{:e},{:e},{:e},{:e}",
                self.times[l],
                self.energy[l],
                self.dissipation[l],
                self.y_energy[l],
                self.y_dissipation[l]
            );
            for b in &self.beta[l][..k] {
                let _ = write!(s, ",{b:e}");
            }
            s.push('\n');
        }
        s
    }

    /// Compact little-endian binary: magic, seed, path, counts, times, coefficients.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.beta[0].len();
        let mut out = Vec::with_capacity(40 + 8 * self.times.len() * (n + 1));
        out.extend_from_slice(TRAJECTORY_MAGIC);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.path.to_le_bytes());
        out.extend_from_slice(&(self.times.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.push(self.blew_up as u8);
        for (t, b) in self.times.iter().zip(&self.beta) {
            out.extend_from_slice(&t.to_le_bytes());
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Times and coefficients from [`Trajectory::to_bytes`].
    pub fn coefficients_from_bytes(bytes: &[u8]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let bad = || Error::Artifact("truncated or malformed trajectory file".into());
        if bytes.len() < 41 || &bytes[..8] != TRAJECTORY_MAGIC {
            return Err(bad());
        }
        let word = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (steps, n) = (word(24) as usize, word(32) as usize);
        let body = &bytes[41..];
        if body.len() != steps * (n + 1) * 8 {
            return Err(bad());
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut times = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        for row in vals.chunks_exact(n + 1) {
            times.push(row[0]);
            beta.push(row[1..].to_vec());
        }
        Ok((times, beta))
    }
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"SLPFTRJ1";

/// Everything needed to integrate the Galerkin system for a given control family.
#[derive(Debug, Clone)]
pub struct GalerkinModel {
    pub basis: Basis,
    pub lift: LiftOperator,
    pub drift: DriftOperator,
    pub noise: NoiseModel,
    pub time: TimeSpec,
}

impl GalerkinModel {
    pub fn new(
        basis: Basis,
        lift: LiftOperator,
        noise: NoiseModel,
        time: TimeSpec,
    ) -> Result<Self> {
        noise.validate()?;
        time.validate()?;
        let drift = DriftOperator::new(&basis, &lift)?;
        Ok(GalerkinModel {
            basis,
            lift,
            drift,
            noise,
            time,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    fn check_control(&self, ctrl: &BoundaryControl) -> Result<()> {
        ctrl.validate()?;
        check_len(self.lift.modes, ctrl.modes)?;
        if ctrl.horizon() + 1e-12 < self.time.horizon {
            return Err(Error::OutsideHorizon {
                t: self.time.horizon,
                horizon: ctrl.horizon(),
            });
        }
        let defect = ctrl.compatibility_defect();
        if defect > 1e-12 * ctrl.max_abs().max(1.0) {
            return Err(Error::Incompatible {
                flux: defect * ctrl.length_x,
            });
        }
        Ok(())
    }

    /// Integrate one path on prescribed Brownian increments (one row per step).
    pub fn simulate_with_increments(
        &self,
        ctrl: &BoundaryControl,
        beta0: &[f64],
        increments: &[Vec<f64>],
        seed: u64,
        path: u64,
    ) -> Result<Trajectory> {
        self.check_control(ctrl)?;
        check_len(self.dim(), beta0.len())?;
        let steps = increments.len();
        if steps == 0 {
            return Err(Error::InvalidConfig("need at least one time step".into()));
        }
        let dt = self.time.horizon / steps as f64;
        let nu = self.drift.viscosity;
        let mut traj = Trajectory {
            seed,
            path,
            times: Vec::with_capacity(steps + 1),
            beta: Vec::with_capacity(steps + 1),
            energy: Vec::with_capacity(steps + 1),
            dissipation: Vec::with_capacity(steps + 1),
            y_energy: Vec::with_capacity(steps + 1),
            y_dissipation: Vec::with_capacity(steps + 1),
            forcing_power: Vec::with_capacity(steps + 1),
            blew_up: false,
            increments: None,
        };
        let mut state = GalerkinState {
            t: 0.0,
            beta: beta0.to_vec(),
        };
        for l in 0..=steps {
            let (theta, slope) = ctrl.at(state.t.min(ctrl.horizon()))?;
            let f = self
                .drift
                .drift_coefficients(&state.beta, &theta, &slope, self.time.nonlinear);
            let norms = self.drift.norms(&state.beta, &theta);
            let power: f64 = 2.0
                * f.iter()
                    .zip(&state.beta)
                    .zip(&self.drift.eigenvalues)
                    .map(|((fi, b), lam)| (fi + nu * lam * b) * b)
                    .sum::<f64>();
            traj.times.push(state.t);
            traj.beta.push(state.beta.clone());
            traj.energy.push(norms[0]);
            traj.dissipation.push(norms[1]);
            traj.y_energy.push(norms[2]);
            traj.y_dissipation.push(norms[3]);
            traj.forcing_power.push(power);
            if l == steps {
                break;
            }
            match step_em(&state, dt, &increments[l], &f, &self.noise) {
                Ok(mut next) => {
                    // keep the grid exact; accumulated rounding would drift past the horizon
                    next.t = (l + 1) as f64 * dt;
                    state = next;
                }
                Err(Error::Numerical(_)) => {
                    traj.blew_up = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(traj)
    }

    /// Integrate one path with increments drawn from `(seed, path)` at the model's `dt`.
    pub fn simulate_path(
        &self,
        ctrl: &BoundaryControl,
        beta0: &[f64],
        seed: u64,
        path: u64,
    ) -> Result<Trajectory> {
        let steps = self.time.steps();
        let incs = brownian_increments(seed, path, steps, self.noise.m(), self.time.effective_dt());
        self.simulate_with_increments(ctrl, beta0, &incs, seed, path)
    }

    /// Paths `0..paths` in parallel; the output order is the path order.
    pub fn simulate_ensemble(
        &self,
        ctrl: &BoundaryControl,
        beta0: &[f64],
        seed: u64,
        paths: usize,
    ) -> Result<Vec<Trajectory>> {
        (0..paths as u64)
            .into_par_iter()
            .map(|p| self.simulate_path(ctrl, beta0, seed, p))
            .collect()
    }

    /// Weak-form residual `max_i |β_i(T) - β_i(0) - ∫f_i dt - Σ_k ∫G^k_i dW^k|`
    /// with the time integral by the trapezoidal rule.
    pub fn weak_form_residual(
        &self,
        ctrl: &BoundaryControl,
        traj: &Trajectory,
        increments: &[Vec<f64>],
    ) -> Result<f64> {
        let steps = traj.times.len() - 1;
        check_len(increments.len(), steps)?;
        let n = self.dim();
        let mut integral = vec![0.0; n];
        let mut prev: Option<Vec<f64>> = None;
        for l in 0..=steps {
            let st = GalerkinState {
                t: traj.times[l],
                beta: traj.beta[l].clone(),
            };
            let f = self.drift.drift(&st, ctrl, self.time.nonlinear)?;
            if let Some(p) = prev {
                let dt = traj.times[l] - traj.times[l - 1];
                for i in 0..n {
                    integral[i] += 0.5 * dt * (p[i] + f[i]);
                }
                let g = diffusion(&traj.beta[l - 1], &self.noise);
                let dw = DVector::from_column_slice(&increments[l - 1]);
                let s = g * dw;
                for i in 0..n {
                    integral[i] += s[i];
                }
            }
            prev = Some(f);
        }
        let (b0, bt) = (&traj.beta[0], traj.final_beta());
        Ok((0..n)
            .map(|i| (bt[i] - b0[i] - integral[i]).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_eigenbasis, random_discrete_fields};
    use crate::geometry::DomainSpec;
    use crate::geometry::Wall;
    use crate::lifting::{ControlIndex, LiftSolver};
    use std::f64::consts::PI;

    fn model(n: usize, nonlinear: bool, noise: NoiseModel) -> GalerkinModel {
        let spec = DomainSpec {
            length_x: 2.0 * PI,
            modes_x: 3,
            nodes_y: 16,
            friction_alpha: 0.5,
            viscosity: 0.5,
        };
        let basis = build_eigenbasis(&spec, n).unwrap();
        let lift = LiftOperator::new(&LiftSolver::new(&basis.grid).unwrap(), 1).unwrap();
        GalerkinModel::new(
            basis,
            lift,
            noise,
            TimeSpec {
                horizon: 0.5,
                dt: 0.01,
                nonlinear,
            },
        )
        .unwrap()
    }

    fn zero_ctrl() -> BoundaryControl {
        BoundaryControl::zero(2.0 * PI, 1, 4.0, 0.5, 3).unwrap()
    }

    #[test]
    fn zero_state_zero_drift() {
        let m = model(6, true, NoiseModel::none());
        let st = GalerkinState {
            t: 0.1,
            beta: vec![0.0; 6],
        };
        assert!(m
            .drift
            .drift(&st, &zero_ctrl(), true)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn linear_drift_is_eigenvalue_decay() {
        let m = model(6, false, NoiseModel::none());
        let beta: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let st = GalerkinState {
            t: 0.0,
            beta: beta.clone(),
        };
        let f = m.drift.drift(&st, &zero_ctrl(), false).unwrap();
        for i in 0..6 {
            let expect = -0.5 * m.drift.eigenvalues[i] * beta[i];
            assert!((f[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn convection_is_skew_in_span() {
        let m = model(10, true, NoiseModel::none());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in random_discrete_fields(&m.basis, 4, &mut rng) {
            let e = convective_energy(&m.basis.grid, &v).unwrap();
            let nv = crate::basis::norm_v(&m.basis.grid, 0.5, &v).unwrap();
            assert!(e.abs() <= 1e-8 * nv * nv, "{e}");
        }
        let beta: Vec<f64> = (0..10)
            .map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.4)
            .collect();
        let nl = m.drift.nonlinear(&beta, &[0.0; 12]);
        let dot: f64 = nl.iter().zip(&beta).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        let direct = nonlinear_term(&m.basis.reconstruct(&beta), &m.basis).unwrap();
        for (a, b) in nl.iter().zip(direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_columns() {
        let noise = NoiseModel {
            additive: vec![vec![1.0, 2.0], vec![]],
            mult_gain: vec![0.0, 0.3],
        };
        let g = diffusion(&[1.0, -1.0, 2.0], &noise);
        assert_eq!(g.shape(), (3, 2));
        assert_eq!(g.column(0).as_slice(), &[1.0, 2.0, 0.0]);
        assert!((g[(2, 1)] - 0.6).abs() < 1e-15);
        assert!((noise.lipschitz_k() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn em_step_without_forcing_only_advances_time() {
        let st = GalerkinState {
            t: 0.25,
            beta: vec![1.0, 2.0],
        };
        let out = step_em(&st, 0.1, &[], &[0.0, 0.0], &NoiseModel::none()).unwrap();
        assert_eq!(out.beta, st.beta);
        assert!((out.t - 0.35).abs() < 1e-15);
        assert!(step_em(&st, 0.0, &[], &[0.0, 0.0], &NoiseModel::none()).is_err());
        let blow = step_em(&st, 1.0, &[], &[1e9, 0.0], &NoiseModel::none());
        assert!(matches!(blow, Err(Error::Numerical(_))));
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = model(6, true, NoiseModel::multiplicative(&[0.2]));
        let b0 = InitialCondition {
            amplitude: 0.3,
            decay: 1.0,
            seed: 5,
        }
        .coefficients(&m.drift.eigenvalues);
        let a = m.simulate_path(&zero_ctrl(), &b0, 11, 2).unwrap();
        let b = m.simulate_path(&zero_ctrl(), &b0, 11, 2).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = m.simulate_path(&zero_ctrl(), &b0, 11, 3).unwrap();
        assert_ne!(a.final_beta(), c.final_beta());
        let (t, beta) = Trajectory::coefficients_from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(t, a.times);
        assert_eq!(beta, a.beta);
    }

    #[test]
    fn initial_condition_is_prefix_stable() {
        let ic = InitialCondition {
            amplitude: 1.0,
            decay: 1.0,
            seed: 9,
        };
        let long = ic.coefficients(&[1.0, 2.0, 3.0, 4.0]);
        let short = ic.coefficients(&[1.0, 2.0]);
        assert_eq!(&long[..2], &short[..]);
    }

    #[test]
    fn coarsening_sums_blocks() {
        let incs = brownian_increments(1, 0, 8, 2, 0.125);
        let c = coarsen(&incs, 4);
        assert_eq!(c.len(), 2);
        assert!((c[1][0] - incs[4..].iter().map(|r| r[0]).sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn weak_form_residual_is_small_without_noise() {
        let m = model(6, true, NoiseModel::none());
        let mut ctrl = zero_ctrl();
        ctrl.set_constant(
            ControlIndex {
                field: ControlField::B,
                wall: Wall::Top,
                mode: 1,
            },
            0.3,
        );
        let b0 = InitialCondition {
            amplitude: 0.2,
            decay: 1.0,
            seed: 1,
        }
        .coefficients(&m.drift.eigenvalues);
        let incs = vec![vec![]; 50];
        let t = m.simulate_with_increments(&ctrl, &b0, &incs, 0, 0).unwrap();
        let r = m.weak_form_residual(&ctrl, &t, &incs).unwrap();
        assert!(r < 5e-2, "{r}");
    }
}
