//! Boundary controls and their divergence-free Stokes lifting.
//!
//! A control is a pair `(a, b)` of wall data: `a` prescribes `y·n` and `b` the
//! tangential stress `[2D(y)n + alpha y]·tau`. The lifting is built in two
//! stages: a harmonic potential `h` with `∂h/∂n = a` gives `c = ∇h`, and a
//! homogeneous-normal Stokes solve removes the remaining stress mismatch
//! `b - [2D(c)n + alpha c]·tau`.
//!
//! Controls are piecewise linear in time on a uniform node grid and carry real
//! Fourier coefficients (signed mode labels, see [`crate::geometry`]) for
//! `|j| <= K_c` on each wall.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::basis::{norm_h, norm_h1, ShenSpace};
use crate::error::{check_len, Error, Result};
use crate::field::{from_terms, Profile, Term, VelocityField};
use crate::geometry::{fourier_derivative, fourier_mode, mode_mass, Grid, Wall};
use crate::quadrature::{apply, differentiation_matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ControlField {
    /// Normal velocity `a`.
    A,
    /// Tangential stress `b`.
    B,
}

/// Position of one coefficient in the flat control vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlIndex {
    pub field: ControlField,
    pub wall: Wall,
    pub mode: i32,
}

/// Number of coefficients for `K_c` modes per wall and field.
pub fn control_len(modes: usize) -> usize {
    4 * (2 * modes + 1)
}

/// Flat index of a coefficient: field-major, then wall, then mode `-K_c..=K_c`.
pub fn control_offset(modes: usize, idx: ControlIndex) -> usize {
    let per_wall = 2 * modes + 1;
    let f = match idx.field {
        ControlField::A => 0,
        ControlField::B => 1,
    };
    (f * 2 + idx.wall.index()) * per_wall + (idx.mode + modes as i32) as usize
}

pub fn control_indices(modes: usize) -> Vec<ControlIndex> {
    let k = modes as i32;
    let mut out = Vec::with_capacity(control_len(modes));
    for field in [ControlField::A, ControlField::B] {
        for wall in Wall::BOTH {
            for mode in -k..=k {
                out.push(ControlIndex { field, wall, mode });
            }
        }
    }
    out
}

/// Deterministic-coefficient boundary control on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryControl {
    pub length_x: f64,
    pub modes: usize,
    /// Trace-space exponent, `2 < p < ∞`.
    pub p: f64,
    pub times: Vec<f64>,
    /// `values[l]` is the coefficient vector at `times[l]`.
    pub values: Vec<Vec<f64>>,
}

impl BoundaryControl {
    pub fn zero(length_x: f64, modes: usize, p: f64, horizon: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidConfig(
                "control time grid needs at least two nodes".into(),
            ));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "control horizon must be positive, got {horizon}"
            )));
        }
        let times = (0..nodes)
            .map(|l| horizon * l as f64 / (nodes - 1) as f64)
            .collect();
        let c = BoundaryControl {
            length_x,
            modes,
            p,
            times,
            values: vec![vec![0.0; control_len(modes)]; nodes],
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "trace exponent p must lie in (2, inf), got {}",
                self.p
            )));
        }
        if !(self.length_x > 0.0) {
            return Err(Error::InvalidConfig(
                "control length_x must be positive".into(),
            ));
        }
        if self.times.len() < 2 || self.times.len() != self.values.len() {
            return Err(Error::InvalidConfig(
                "control needs matching time grid and value rows".into(),
            ));
        }
        if self.times[0] != 0.0 || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "control time grid must start at 0 and increase".into(),
            ));
        }
        for row in &self.values {
            check_len(control_len(self.modes), row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(
                    "control coefficients must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("validated control has nodes")
    }

    pub fn len(&self) -> usize {
        control_len(self.modes)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, node: usize, idx: ControlIndex) -> f64 {
        self.values[node][control_offset(self.modes, idx)]
    }

    pub fn set(&mut self, node: usize, idx: ControlIndex, v: f64) {
        let o = control_offset(self.modes, idx);
        self.values[node][o] = v;
    }

    /// Set one coefficient to the same value at every node.
    pub fn set_constant(&mut self, idx: ControlIndex, v: f64) {
        for l in 0..self.times.len() {
            self.set(l, idx, v);
        }
    }

    /// Interval containing `t` (right-continuous, last interval closed).
    fn interval(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        let tol = 1e-12 * horizon.max(1.0);
        if !(t >= -tol && t <= horizon + tol) {
            return Err(Error::OutsideHorizon { t, horizon });
        }
        let n = self.times.len();
        let l = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        Ok(l.min(n - 2))
    }

    /// Coefficients `theta(t)` and their time derivative.
    pub fn at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.interval(t)?;
        let (t0, t1) = (self.times[l], self.times[l + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (v0, v1) = (&self.values[l], &self.values[l + 1]);
        let theta = v0.iter().zip(v1).map(|(a, b)| a + s * (b - a)).collect();
        let slope = v0.iter().zip(v1).map(|(a, b)| (b - a) / h).collect();
        Ok((theta, slope))
    }

    /// Largest violation of `∫_Γ a dγ = 0` over the time nodes (in coefficient units).
    pub fn compatibility_defect(&self) -> f64 {
        let b = ControlIndex {
            field: ControlField::A,
            wall: Wall::Bottom,
            mode: 0,
        };
        let t = ControlIndex {
            field: ControlField::A,
            wall: Wall::Top,
            mode: 0,
        };
        (0..self.times.len())
            .map(|l| (self.get(l, b) + self.get(l, t)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn check_same_layout(&self, other: &BoundaryControl) -> Result<()> {
        check_len(self.len(), other.len())?;
        check_len(self.times.len(), other.times.len())?;
        if self.times != other.times || self.length_x != other.length_x {
            return Err(Error::InvalidConfig(
                "controls live on different grids".into(),
            ));
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn linear_combination(
        &self,
        a: f64,
        other: &BoundaryControl,
        b: f64,
    ) -> Result<BoundaryControl> {
        self.check_same_layout(other)?;
        let mut out = self.clone();
        for (row, orow) in out.values.iter_mut().zip(&other.values) {
            for (x, y) in row.iter_mut().zip(orow) {
                *x = a * *x + b * y;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> BoundaryControl {
        let mut out = self.clone();
        out.values.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// Physical wall samples of `a` or `b` at time `t` on the given x nodes.
    pub fn wall_samples(
        &self,
        field: ControlField,
        wall: Wall,
        t: f64,
        x_nodes: &[f64],
    ) -> Result<Vec<f64>> {
        let (theta, _) = self.at(t)?;
        let k = self.modes as i32;
        Ok(x_nodes
            .iter()
            .map(|&x| {
                (-k..=k)
                    .map(|mode| {
                        let kk =
                            2.0 * std::f64::consts::PI * mode.unsigned_abs() as f64 / self.length_x;
                        theta[control_offset(self.modes, ControlIndex { field, wall, mode })]
                            * fourier_mode(mode, kk, x)
                    })
                    .sum()
            })
            .collect())
    }

    pub fn to_file(&self) -> ControlFile {
        let series = control_indices(self.modes)
            .into_iter()
            .map(|idx| ControlSeries {
                field: idx.field,
                wall: idx.wall,
                mode: idx.mode,
                values: (0..self.times.len()).map(|l| self.get(l, idx)).collect(),
            })
            .collect();
        ControlFile {
            format: CONTROL_FORMAT.into(),
            length_x: self.length_x,
            modes: self.modes,
            p: self.p,
            times: self.times.clone(),
            series,
        }
    }

    pub fn from_file(file: &ControlFile) -> Result<BoundaryControl> {
        if file.format != CONTROL_FORMAT {
            return Err(Error::Artifact(format!(
                "unknown control format {:?}",
                file.format
            )));
        }
        let mut c = BoundaryControl {
            length_x: file.length_x,
            modes: file.modes,
            p: file.p,
            times: file.times.clone(),
            values: vec![vec![0.0; control_len(file.modes)]; file.times.len()],
        };
        for s in &file.series {
            if s.mode.unsigned_abs() as usize > file.modes {
                return Err(Error::Artifact(format!(
                    "mode {} exceeds declared K_c = {}",
                    s.mode, file.modes
                )));
            }
            check_len(file.times.len(), s.values.len())?;
            let idx = ControlIndex {
                field: s.field,
                wall: s.wall,
                mode: s.mode,
            };
            for (l, v) in s.values.iter().enumerate() {
                c.set(l, idx, *v);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

pub const CONTROL_FORMAT: &str = "slipflow-control-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSeries {
    pub field: ControlField,
    pub wall: Wall,
    pub mode: i32,
    pub values: Vec<f64>,
}

/// Structured-text control artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFile {
    pub format: String,
    pub length_x: f64,
    pub modes: usize,
    pub p: f64,
    pub times: Vec<f64>,
    pub series: Vec<ControlSeries>,
}

/// Replace the zero-mode normal data by its antisymmetric part across walls.
///
/// Written as `(d, -d)` with `d = (a_bottom - a_top) / 2` so a second
/// application reproduces the first bit for bit.
pub fn project_compatible(ctrl: &BoundaryControl) -> BoundaryControl {
    let mut out = ctrl.clone();
    let b = ControlIndex {
        field: ControlField::A,
        wall: Wall::Bottom,
        mode: 0,
    };
    let t = ControlIndex {
        field: ControlField::A,
        wall: Wall::Top,
        mode: 0,
    };
    for l in 0..out.times.len() {
        let (ab, at) = (out.get(l, b), out.get(l, t));
        if ab + at != 0.0 {
            let d = 0.5 * (ab - at);
            out.set(l, b, d);
            out.set(l, t, -d);
        }
    }
    out
}

/// Per-wall Fourier coefficients for modes `-K_c..=K_c` (index `mode + K_c`).
#[derive(Debug, Clone, PartialEq)]
pub struct WallData {
    pub modes: usize,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl WallData {
    pub fn zeros(modes: usize) -> Self {
        WallData {
            modes,
            bottom: vec![0.0; 2 * modes + 1],
            top: vec![0.0; 2 * modes + 1],
        }
    }

    pub fn wall(&self, wall: Wall) -> &[f64] {
        match wall {
            Wall::Bottom => &self.bottom,
            Wall::Top => &self.top,
        }
    }

    pub fn wall_mut(&mut self, wall: Wall) -> &mut Vec<f64> {
        match wall {
            Wall::Bottom => &mut self.bottom,
            Wall::Top => &mut self.top,
        }
    }

    pub fn get(&self, wall: Wall, mode: i32) -> f64 {
        self.wall(wall)[(mode + self.modes as i32) as usize]
    }

    /// Extract coefficients of `field` from a flat control vector.
    pub fn from_control(theta: &[f64], modes: usize, field: ControlField) -> Self {
        let mut out = WallData::zeros(modes);
        for wall in Wall::BOTH {
            for mode in -(modes as i32)..=modes as i32 {
                out.wall_mut(wall)[(mode + modes as i32) as usize] =
                    theta[control_offset(modes, ControlIndex { field, wall, mode })];
            }
        }
        out
    }

    /// Project wall samples onto the modes.
    pub fn from_samples(grid: &Grid, modes: usize, bottom: &[f64], top: &[f64]) -> Result<Self> {
        let mut out = WallData::zeros(modes);
        for (wall, s) in [(Wall::Bottom, bottom), (Wall::Top, top)] {
            for mode in -(modes as i32)..=modes as i32 {
                out.wall_mut(wall)[(mode + modes as i32) as usize] =
                    grid.wall_coefficient(s, mode)?;
            }
        }
        Ok(out)
    }
}

/// Harmonic potential `h` with `∂h/∂n = a` on both walls and `∫_Γ h dγ = 0`.
///
/// Per mode `j != 0`, `h_j = (a_top cosh(ky) + a_bottom cosh(k(1-y))) / (k sinh k)`;
/// the zero mode is the linear profile `a_top (y - 1/2)`.
#[derive(Debug, Clone)]
pub struct HarmonicPotential {
    pub length_x: f64,
    pub data: WallData,
}

impl HarmonicPotential {
    fn k(&self, mode: i32) -> f64 {
        2.0 * std::f64::consts::PI * mode.unsigned_abs() as f64 / self.length_x
    }

    /// `(H, H')` for one mode.
    pub fn profile(&self, mode: i32, y: f64) -> (f64, f64) {
        let ab = self.data.get(Wall::Bottom, mode);
        let at = self.data.get(Wall::Top, mode);
        if mode == 0 {
            return (at * (y - 0.5), at);
        }
        let k = self.k(mode);
        // cosh(ky)/sinh(k) and sinh(ky)/sinh(k) without overflow
        let denom = 1.0 - (-2.0 * k).exp();
        let ch = |s: f64| ((k * (s - 1.0)).exp() + (-k * (s + 1.0)).exp()) / denom;
        let sh = |s: f64| ((k * (s - 1.0)).exp() - (-k * (s + 1.0)).exp()) / denom;
        let h = (at * ch(y) + ab * ch(1.0 - y)) / k;
        let dh = at * sh(y) - ab * sh(1.0 - y);
        (h, dh)
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let m = self.data.modes as i32;
        (-m..=m)
            .map(|j| self.profile(j, y).0 * fourier_mode(j, self.k(j), x))
            .sum()
    }

    /// `c = ∇h` sampled on the grid.
    pub fn gradient(&self, grid: &Grid) -> VelocityField {
        let m = self.data.modes as i32;
        let mut u_terms = Vec::new();
        let mut w_terms = Vec::new();
        for j in -m..=m {
            if self.data.get(Wall::Bottom, j) == 0.0 && self.data.get(Wall::Top, j) == 0.0 {
                continue;
            }
            let k = self.k(j);
            let (sign, partner) = fourier_derivative(j);
            if j != 0 {
                let hp = Profile::from_fn(grid, |y| self.profile(j, y));
                u_terms.push(Term {
                    mode: partner,
                    scale: sign * k,
                    profile: hp,
                });
            }
            let dp = Profile::from_fn(grid, |y| {
                let (h, dh) = self.profile(j, y);
                (dh, k * k * h)
            });
            w_terms.push(Term {
                mode: j,
                scale: 1.0,
                profile: dp,
            });
        }
        from_terms(grid, &u_terms, &w_terms)
    }

    /// Largest `|Δh|` at the interior nodes, with `∂_yy` from the spectral
    /// differentiation matrix on the Gauss nodes and `∂_xx` from the Fourier
    /// coefficients of each row.
    pub fn laplacian_residual(&self, grid: &Grid) -> Result<f64> {
        let h = grid.sample(|x, y| self.value(x, y));
        let (nx, ny) = (grid.nx(), grid.ny());
        let d = differentiation_matrix(&grid.y_nodes);
        let mut worst = 0.0_f64;
        let band = grid.spec.modes_x as i32;
        let mut hxx = vec![0.0; nx * ny];
        for iy in 0..ny {
            let row = &h[iy * nx..(iy + 1) * nx];
            for j in -band..=band {
                let c = grid.wall_coefficient(row, j)?;
                let k = grid.spec.wavenumber(j);
                for (ix, x) in grid.x_nodes.iter().enumerate() {
                    hxx[iy * nx + ix] -= k * k * c * fourier_mode(j, k, *x);
                }
            }
        }
        for ix in 0..nx {
            let col: Vec<f64> = (0..ny).map(|iy| h[iy * nx + ix]).collect();
            let hyy = apply(&d, &apply(&d, &col));
            for iy in 0..ny {
                worst = worst.max((hyy[iy] + hxx[iy * nx + ix]).abs());
            }
        }
        Ok(worst)
    }
}

/// Direct solvers for the two lifting stages on a fixed grid.
#[derive(Debug, Clone)]
pub struct LiftSolver {
    pub grid: Grid,
    pub space: ShenSpace,
    pub alpha: f64,
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl LiftSolver {
    pub fn new(grid: &Grid) -> Result<Self> {
        let space = ShenSpace::new(grid);
        let alpha = grid.spec.friction_alpha;
        let mut factors = Vec::new();
        for j in 0..=grid.spec.modes_x as i32 {
            let (a, _) = space.forms(grid.spec.wavenumber(j), alpha);
            let f = a.cholesky().ok_or_else(|| {
                Error::Resolution(format!(
                    "singular Stokes system for mode {j}; increase nodes_y"
                ))
            })?;
            factors.push(f);
        }
        Ok(LiftSolver {
            grid: grid.clone(),
            space,
            alpha,
            factors,
        })
    }

    fn check_band(&self, modes: usize) -> Result<()> {
        if modes > self.grid.spec.modes_x {
            return Err(Error::Resolution(format!(
                "control uses {modes} modes but the grid resolves only {}",
                self.grid.spec.modes_x
            )));
        }
        Ok(())
    }

    /// Harmonic stage. Fails when the zero modes carry net flux.
    pub fn solve_harmonic(&self, a: &WallData) -> Result<HarmonicPotential> {
        self.check_band(a.modes)?;
        let flux = a.get(Wall::Bottom, 0) + a.get(Wall::Top, 0);
        let scale = a
            .get(Wall::Bottom, 0)
            .abs()
            .max(a.get(Wall::Top, 0).abs())
            .max(1.0);
        if flux.abs() > 1e-12 * scale {
            return Err(Error::Incompatible {
                flux: flux * self.grid.spec.length_x,
            });
        }
        Ok(HarmonicPotential {
            length_x: self.grid.spec.length_x,
            data: a.clone(),
        })
    }

    /// Stokes stage: `v·n = 0` and `[2D(v)n + alpha v]·tau = b_tilde` on the walls.
    pub fn solve_stokes_correction(&self, b_tilde: &WallData) -> Result<VelocityField> {
        self.check_band(b_tilde.modes)?;
        let m = b_tilde.modes as i32;
        let slopes = self.space.wall_slopes();
        let mut out = VelocityField::zeros(&self.grid);
        for j in -m..=m {
            let (bb, bt) = (b_tilde.get(Wall::Bottom, j), b_tilde.get(Wall::Top, j));
            if bb == 0.0 && bt == 0.0 {
                continue;
            }
            if !(bb.is_finite() && bt.is_finite()) {
                return Err(Error::Numerical("non-finite Stokes boundary data".into()));
            }
            let rhs =
                DVector::from_iterator(slopes.len(), slopes.iter().map(|s| bb * s[0] - bt * s[1]));
            let f = self.factors[j.unsigned_abs() as usize].solve(&rhs);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Resolution(format!(
                    "Stokes solve for mode {j} produced non-finite profile"
                )));
            }
            out.axpy(1.0, &self.space.field(&self.grid, j, f.as_slice()));
        }
        Ok(out)
    }

    /// Tangential stress of a field projected onto wall modes `-K_c..=K_c`.
    pub fn stress_data(&self, field: &VelocityField, modes: usize) -> Result<WallData> {
        let sb = field.tangential_stress(Wall::Bottom, self.alpha);
        let st = field.tangential_stress(Wall::Top, self.alpha);
        WallData::from_samples(&self.grid, modes, &sb, &st)
    }

    /// Full lifting `c + b` of one flat coefficient vector.
    pub fn lift_coefficients(&self, theta: &[f64], modes: usize) -> Result<VelocityField> {
        check_len(control_len(modes), theta.len())?;
        let a = WallData::from_control(theta, modes, ControlField::A);
        let b = WallData::from_control(theta, modes, ControlField::B);
        let c = self.solve_harmonic(&a)?.gradient(&self.grid);
        let sc = self.stress_data(&c, modes)?;
        let mut b_tilde = b;
        for wall in Wall::BOTH {
            for (x, s) in b_tilde.wall_mut(wall).iter_mut().zip(sc.wall(wall)) {
                *x -= s;
            }
        }
        let mut field = self.solve_stokes_correction(&b_tilde)?;
        field.axpy(1.0, &c);
        Ok(field)
    }
}

/// Cached lifting responses: one field per control coefficient, so the
/// lifting of any compatible control is a superposition.
#[derive(Debug, Clone)]
pub struct LiftOperator {
    pub modes: usize,
    pub responses: Vec<VelocityField>,
}

impl LiftOperator {
    pub fn new(solver: &LiftSolver, modes: usize) -> Result<Self> {
        solver.check_band(modes)?;
        let n = control_len(modes);
        let mut responses = vec![VelocityField::zeros(&solver.grid); n];
        // zero-mode normal data only enters through its compatible combination
        let mut anti = vec![0.0; n];
        anti[control_offset(
            modes,
            ControlIndex {
                field: ControlField::A,
                wall: Wall::Bottom,
                mode: 0,
            },
        )] = 1.0;
        anti[control_offset(
            modes,
            ControlIndex {
                field: ControlField::A,
                wall: Wall::Top,
                mode: 0,
            },
        )] = -1.0;
        let anti_field = solver.lift_coefficients(&anti, modes)?;
        for idx in control_indices(modes) {
            let o = control_offset(modes, idx);
            responses[o] = match (idx.field, idx.mode) {
                (ControlField::A, 0) => {
                    anti_field.scaled(if idx.wall == Wall::Bottom { 0.5 } else { -0.5 })
                }
                _ => {
                    let mut e = vec![0.0; n];
                    e[o] = 1.0;
                    solver.lift_coefficients(&e, modes)?
                }
            };
        }
        Ok(LiftOperator { modes, responses })
    }

    pub fn field(&self, grid: &Grid, theta: &[f64]) -> VelocityField {
        VelocityField::combination(grid, theta, &self.responses)
    }
}

/// Lifting of a control at every node of its time grid.
#[derive(Debug, Clone)]
pub struct LiftedField {
    pub times: Vec<f64>,
    pub field: Vec<VelocityField>,
    pub time_derivative: Vec<VelocityField>,
    pub trace_norm_series: Vec<f64>,
}

impl LiftedField {
    /// `max_l (‖a‖_{H¹} + ‖∂_t a‖_2) / ‖(a,b)‖_{H_p(Γ)}` over nodes with nonzero data.
    pub fn calderon_ratio(&self, grid: &Grid) -> Result<f64> {
        let mut worst = 0.0_f64;
        for ((f, df), n) in self
            .field
            .iter()
            .zip(&self.time_derivative)
            .zip(&self.trace_norm_series)
        {
            if *n > 0.0 {
                worst = worst.max((norm_h1(grid, f)? + norm_h(grid, df)?) / n);
            }
        }
        Ok(worst)
    }
}

/// Lift a compatible control at every node, using the cached responses.
pub fn lift(ctrl: &BoundaryControl, op: &LiftOperator, grid: &Grid) -> Result<LiftedField> {
    ctrl.validate()?;
    check_len(op.modes, ctrl.modes)?;
    let defect = ctrl.compatibility_defect();
    if defect > 1e-12 * ctrl.max_abs().max(1.0) {
        return Err(Error::Incompatible {
            flux: defect * ctrl.length_x,
        });
    }
    let mut out = LiftedField {
        times: ctrl.times.clone(),
        field: vec![],
        time_derivative: vec![],
        trace_norm_series: vec![],
    };
    for &t in &ctrl.times {
        let (theta, slope) = ctrl.at(t)?;
        out.field.push(op.field(grid, &theta));
        out.time_derivative.push(op.field(grid, &slope));
        out.trace_norm_series.push(trace_norm(ctrl, t)?);
    }
    Ok(out)
}

/// Worst boundary and interior residuals of a lifted control over its time nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftResiduals {
    /// `max |a·n - a|` over walls, nodes and x samples.
    pub normal: f64,
    /// `max |[2D(a)n + alpha a]·tau - b|`.
    pub tangential: f64,
    /// Interior Laplacian residual of the harmonic stage.
    pub harmonic: f64,
    pub divergence: f64,
}

pub fn lift_residuals(
    ctrl: &BoundaryControl,
    lifted: &LiftedField,
    solver: &LiftSolver,
) -> Result<LiftResiduals> {
    let grid = &solver.grid;
    check_len(ctrl.times.len(), lifted.field.len())?;
    let mut r = LiftResiduals {
        normal: 0.0,
        tangential: 0.0,
        harmonic: 0.0,
        divergence: 0.0,
    };
    let worst = |acc: &mut f64, got: &[f64], want: &[f64]| {
        for (g, w) in got.iter().zip(want) {
            *acc = acc.max((g - w).abs());
        }
    };
    for (l, &t) in ctrl.times.iter().enumerate() {
        let f = &lifted.field[l];
        for wall in Wall::BOTH {
            let a = ctrl.wall_samples(ControlField::A, wall, t, &grid.x_nodes)?;
            let b = ctrl.wall_samples(ControlField::B, wall, t, &grid.x_nodes)?;
            worst(&mut r.normal, &f.normal_trace(wall), &a);
            worst(
                &mut r.tangential,
                &f.tangential_stress(wall, solver.alpha),
                &b,
            );
        }
        r.divergence = f
            .divergence()
            .iter()
            .fold(r.divergence, |m, d| m.max(d.abs()));
        let (theta, _) = ctrl.at(t)?;
        let h =
            solver.solve_harmonic(&WallData::from_control(&theta, ctrl.modes, ControlField::A))?;
        r.harmonic = r.harmonic.max(h.laplacian_residual(grid)?);
    }
    Ok(r)
}

/// The five pieces of the trace-space norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceNormParts {
    /// `‖a‖_{H^{1-1/p}(Γ)}`
    pub a: f64,
    /// `‖∂_t a‖_{H^{1/2}(Γ)}`
    pub a_dot: f64,
    /// `‖b‖_{H^{-1/p}(Γ)}`
    pub b_neg: f64,
    /// `‖b‖_{L_2(Γ)}`
    pub b: f64,
    /// `‖∂_t b‖_{H^{-1/2}(Γ)}`
    pub b_dot: f64,
}

impl TraceNormParts {
    pub fn total(&self) -> f64 {
        self.a + self.a_dot + self.b_neg + self.b + self.b_dot
    }
}

/// Fourier-multiplier norm `(∑_w ∑_j (1+k_j²)^s ∫phi_j² |c_{w,j}|²)^{1/2}` on both walls.
fn multiplier_norm(
    theta: &[f64],
    modes: usize,
    length_x: f64,
    field: ControlField,
    order: f64,
) -> f64 {
    let mut s = 0.0;
    for wall in Wall::BOTH {
        for mode in -(modes as i32)..=modes as i32 {
            let c = theta[control_offset(modes, ControlIndex { field, wall, mode })];
            let k = 2.0 * std::f64::consts::PI * mode.unsigned_abs() as f64 / length_x;
            s += (1.0 + k * k).powf(order) * mode_mass(mode, length_x) * c * c;
        }
    }
    s.sqrt()
}

pub fn trace_norm_parts(ctrl: &BoundaryControl, t: f64) -> Result<TraceNormParts> {
    let (theta, slope) = ctrl.at(t)?;
    let (m, l, p) = (ctrl.modes, ctrl.length_x, ctrl.p);
    Ok(TraceNormParts {
        a: multiplier_norm(&theta, m, l, ControlField::A, 1.0 - 1.0 / p),
        a_dot: multiplier_norm(&slope, m, l, ControlField::A, 0.5),
        b_neg: multiplier_norm(&theta, m, l, ControlField::B, -1.0 / p),
        b: multiplier_norm(&theta, m, l, ControlField::B, 0.0),
        b_dot: multiplier_norm(&slope, m, l, ControlField::B, -0.5),
    })
}

/// Hilbertian surrogate of `‖(a,b)(t)‖_{H_p(Γ)}`.
pub fn trace_norm(ctrl: &BoundaryControl, t: f64) -> Result<f64> {
    Ok(trace_norm_parts(ctrl, t)?.total())
}

/// Dense matrix helper used by consumers that want responses as columns.
pub fn response_matrix(op: &LiftOperator) -> DMatrix<f64> {
    let rows = op
        .responses
        .first()
        .map(|r| r.as_slice().len())
        .unwrap_or(0);
    DMatrix::from_fn(rows, op.responses.len(), |i, j| {
        op.responses[j].as_slice()[i]
    })
}
