//! Sampled two-component velocity fields with first derivatives and wall traces.

use crate::error::{check_len, Result};
use crate::geometry::{fourier_derivative, fourier_mode, Grid, Wall};

/// Interior components, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U = 0,
    W = 1,
    Ux = 2,
    Uy = 3,
    Wx = 4,
    Wy = 5,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::U,
        Component::W,
        Component::Ux,
        Component::Uy,
        Component::Wx,
        Component::Wy,
    ];
}

/// Wall traces, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trace {
    U = 0,
    W = 1,
    Uy = 2,
    Wx = 3,
}

/// Velocity `(u, w)` sampled at the interior quadrature nodes together with
/// its gradient, plus traces of `u, w, u_y, w_x` on both walls.
///
/// Everything lives in one flat buffer so fields form a vector space under
/// plain slice arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::zeros_dims(grid.nx(), grid.ny())
    }

    pub(crate) fn zeros_dims(nx: usize, ny: usize) -> Self {
        VelocityField {
            nx,
            ny,
            data: vec![0.0; Self::buffer_len(nx, ny)],
        }
    }

    pub fn buffer_len(nx: usize, ny: usize) -> usize {
        6 * nx * ny + 8 * nx
    }

    pub fn from_buffer(grid: &Grid, data: Vec<f64>) -> Result<Self> {
        check_len(Self::buffer_len(grid.nx(), grid.ny()), data.len())?;
        Ok(VelocityField {
            nx: grid.nx(),
            ny: grid.ny(),
            data,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        check_len(grid.nx(), self.nx)?;
        check_len(grid.ny(), self.ny)
    }

    fn npts(&self) -> usize {
        self.nx * self.ny
    }

    pub fn component(&self, c: Component) -> &[f64] {
        let n = self.npts();
        &self.data[c as usize * n..(c as usize + 1) * n]
    }

    pub fn component_mut(&mut self, c: Component) -> &mut [f64] {
        let n = self.npts();
        &mut self.data[c as usize * n..(c as usize + 1) * n]
    }

    fn trace_offset(&self, wall: Wall, t: Trace) -> usize {
        6 * self.npts() + (wall.index() * 4 + t as usize) * self.nx
    }

    pub fn trace(&self, wall: Wall, t: Trace) -> &[f64] {
        let o = self.trace_offset(wall, t);
        &self.data[o..o + self.nx]
    }

    pub fn trace_mut(&mut self, wall: Wall, t: Trace) -> &mut [f64] {
        let o = self.trace_offset(wall, t);
        &mut self.data[o..o + self.nx]
    }

    pub fn axpy(&mut self, a: f64, other: &VelocityField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn sub(&self, other: &VelocityField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `sum_i coeffs[i] * fields[i]`.
    pub fn combination(grid: &Grid, coeffs: &[f64], fields: &[VelocityField]) -> Self {
        let mut out = Self::zeros(grid);
        for (c, f) in coeffs.iter().zip(fields) {
            if *c != 0.0 {
                out.axpy(*c, f);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `u_x + w_y` at the interior nodes.
    pub fn divergence(&self) -> Vec<f64> {
        self.component(Component::Ux)
            .iter()
            .zip(self.component(Component::Wy))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `v·n` along a wall.
    pub fn normal_trace(&self, wall: Wall) -> Vec<f64> {
        let n = wall.normal();
        self.trace(wall, Trace::U)
            .iter()
            .zip(self.trace(wall, Trace::W))
            .map(|(u, w)| u * n[0] + w * n[1])
            .collect()
    }

    /// `v·tau` along a wall.
    pub fn tangential_trace(&self, wall: Wall) -> Vec<f64> {
        let t = wall.tangent();
        self.trace(wall, Trace::U)
            .iter()
            .zip(self.trace(wall, Trace::W))
            .map(|(u, w)| u * t[0] + w * t[1])
            .collect()
    }

    /// `[2 D(v) n + alpha v]·tau` along a wall. Valid because both wall
    /// normals are vertical, so only the shear entry of `D(v)` contributes.
    pub fn tangential_stress(&self, wall: Wall, alpha: f64) -> Vec<f64> {
        let n = wall.normal();
        let t = wall.tangent();
        let shear = self
            .trace(wall, Trace::Uy)
            .iter()
            .zip(self.trace(wall, Trace::Wx));
        shear
            .zip(self.tangential_trace(wall))
            .map(|((uy, wx), vt)| t[0] * n[1] * (uy + wx) + alpha * vt)
            .collect()
    }
}

/// A wall-normal profile sampled at the Gauss nodes and both walls.
#[derive(Debug, Clone)]
pub struct Profile {
    pub val: Vec<f64>,
    pub der: Vec<f64>,
    pub wall_val: [f64; 2],
    pub wall_der: [f64; 2],
}

impl Profile {
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (val, der): (Vec<f64>, Vec<f64>) = grid.y_nodes.iter().map(|&y| f(y)).unzip();
        let b = f(0.0);
        let t = f(1.0);
        Profile {
            val,
            der,
            wall_val: [b.0, t.0],
            wall_der: [b.1, t.1],
        }
    }
}

/// One separable piece `scale * phi_mode(x) * profile(y)` of a component.
#[derive(Debug, Clone)]
pub struct Term {
    pub mode: i32,
    pub scale: f64,
    pub profile: Profile,
}

/// Build a field whose `u` and `w` components are sums of separable terms.
pub fn from_terms(grid: &Grid, u_terms: &[Term], w_terms: &[Term]) -> VelocityField {
    let mut field = VelocityField::zeros(grid);
    let nx = grid.nx();
    for (terms, value, dx, dy, trace_v, trace_dx, trace_dy) in [
        (
            u_terms,
            Component::U,
            Component::Ux,
            Component::Uy,
            Trace::U,
            None,
            Some(Trace::Uy),
        ),
        (
            w_terms,
            Component::W,
            Component::Wx,
            Component::Wy,
            Trace::W,
            Some(Trace::Wx),
            None,
        ),
    ] {
        for term in terms {
            let k = grid.spec.wavenumber(term.mode);
            let (sign, partner) = fourier_derivative(term.mode);
            let phi: Vec<f64> = grid
                .x_nodes
                .iter()
                .map(|&x| term.scale * fourier_mode(term.mode, k, x))
                .collect();
            let dphi: Vec<f64> = grid
                .x_nodes
                .iter()
                .map(|&x| term.scale * sign * k * fourier_mode(partner, k, x))
                .collect();
            let p = &term.profile;
            for (iy, (pv, pd)) in p.val.iter().zip(&p.der).enumerate() {
                let row = iy * nx..(iy + 1) * nx;
                for (slot, phi_x) in field.component_mut(value)[row.clone()].iter_mut().zip(&phi) {
                    *slot += phi_x * pv;
                }
                for (slot, dphi_x) in field.component_mut(dx)[row.clone()].iter_mut().zip(&dphi) {
                    *slot += dphi_x * pv;
                }
                for (slot, phi_x) in field.component_mut(dy)[row].iter_mut().zip(&phi) {
                    *slot += phi_x * pd;
                }
            }
            for wall in Wall::BOTH {
                let wi = wall.index();
                for (slot, phi_x) in field.trace_mut(wall, trace_v).iter_mut().zip(&phi) {
                    *slot += phi_x * p.wall_val[wi];
                }
                if let Some(t) = trace_dx {
                    for (slot, dphi_x) in field.trace_mut(wall, t).iter_mut().zip(&dphi) {
                        *slot += dphi_x * p.wall_val[wi];
                    }
                }
                if let Some(t) = trace_dy {
                    for (slot, phi_x) in field.trace_mut(wall, t).iter_mut().zip(&phi) {
                        *slot += phi_x * p.wall_der[wi];
                    }
                }
            }
        }
    }
    field
}

/// Field from a streamfunction `psi = f(y) phi_mode(x)`: `v = (psi_y, -psi_x)`.
///
/// `f` is given as `(f, f', f'')` at the nodes and walls.
pub fn from_streamfunction(grid: &Grid, mode: i32, f: &Profile, df: &Profile) -> VelocityField {
    let k = grid.spec.wavenumber(mode);
    let (sign, partner) = fourier_derivative(mode);
    let u = Term {
        mode,
        scale: 1.0,
        profile: df.clone(),
    };
    let mut w_terms = Vec::new();
    if mode != 0 {
        w_terms.push(Term {
            mode: partner,
            scale: -sign * k,
            profile: f.clone(),
        });
    }
    from_terms(grid, &[u], &w_terms)
}
