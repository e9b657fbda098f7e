//! Periodic channel `(0, L_x) x (0, 1)` with two flat walls.
//!
//! The x direction is Fourier (equispaced nodes, trapezoidal rule) and the
//! wall-normal direction uses Gauss-Legendre points. Real Fourier modes are
//! labelled by a signed index: `j > 0` is `cos(k_j x)`, `j < 0` is
//! `sin(k_|j| x)`, `j = 0` is the constant, with `k_j = 2 pi |j| / L_x`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::quadrature;

/// Geometry and physical constants of the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub length_x: f64,
    pub modes_x: usize,
    pub nodes_y: usize,
    pub friction_alpha: f64,
    pub viscosity: f64,
}

impl DomainSpec {
    pub const MIN_NODES_Y: usize = 8;

    pub fn validate(&self) -> Result<()> {
        if !(self.length_x > 0.0 && self.length_x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "length_x must be positive, got {}",
                self.length_x
            )));
        }
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "viscosity must be positive, got {}",
                self.viscosity
            )));
        }
        if !(self.friction_alpha >= 0.0 && self.friction_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "friction_alpha must be nonnegative, got {}",
                self.friction_alpha
            )));
        }
        if self.modes_x < 1 {
            return Err(Error::InvalidConfig("modes_x must be at least 1".into()));
        }
        if self.nodes_y < Self::MIN_NODES_Y {
            return Err(Error::InvalidConfig(format!(
                "nodes_y must be at least {}, got {}",
                Self::MIN_NODES_Y,
                self.nodes_y
            )));
        }
        Ok(())
    }

    /// Number of x nodes. Cubic products of modes `|j| <= K` are integrated
    /// exactly, which is the 2/3 truncation rule for the convective term.
    pub fn nodes_x(&self) -> usize {
        3 * self.modes_x + 1
    }

    /// Highest polynomial degree of wall-normal streamfunction profiles such
    /// that cubic products are integrated exactly by the Gauss rule.
    pub fn profile_degree(&self) -> usize {
        (2 * self.nodes_y) / 3
    }

    pub fn wavenumber(&self, mode: i32) -> f64 {
        2.0 * PI * mode.unsigned_abs() as f64 / self.length_x
    }
}

/// One of the two channel walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    Bottom,
    Top,
}

impl Wall {
    pub const BOTH: [Wall; 2] = [Wall::Bottom, Wall::Top];

    pub fn index(self) -> usize {
        match self {
            Wall::Bottom => 0,
            Wall::Top => 1,
        }
    }

    pub fn y(self) -> f64 {
        match self {
            Wall::Bottom => 0.0,
            Wall::Top => 1.0,
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Wall::Bottom => [0.0, -1.0],
            Wall::Top => [0.0, 1.0],
        }
    }

    /// Unit tangent with `(n, tau)` positively oriented: `tau = (-n_2, n_1)`.
    pub fn tangent(self) -> [f64; 2] {
        let n = self.normal();
        [-n[1], n[0]]
    }

    pub fn name(self) -> &'static str {
        match self {
            Wall::Bottom => "bottom",
            Wall::Top => "top",
        }
    }
}

/// Real Fourier mode `phi_j(x)`.
pub fn fourier_mode(mode: i32, k: f64, x: f64) -> f64 {
    match mode.signum() {
        0 => 1.0,
        1 => (k * x).cos(),
        _ => (k * x).sin(),
    }
}

/// Derivative of a real Fourier mode: `phi_j' = sign * k * phi_{partner(j)}`.
pub fn fourier_derivative(mode: i32) -> (f64, i32) {
    match mode.signum() {
        0 => (0.0, 0),
        1 => (-1.0, -mode),
        _ => (1.0, -mode),
    }
}

/// `∫_0^{L_x} phi_j^2 dx`.
pub fn mode_mass(mode: i32, length_x: f64) -> f64 {
    if mode == 0 {
        length_x
    } else {
        0.5 * length_x
    }
}

/// Tensor-product quadrature grid over the channel.
#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: DomainSpec,
    pub x_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub y_weights: Vec<f64>,
    pub x_weight: f64,
    /// Weights at `(x_i, y_q)`, stored y-major (`q * nx + i`).
    pub quad_weights_domain: Vec<f64>,
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn ny(&self) -> usize {
        self.y_nodes.len()
    }

    pub fn npts(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn outward_normal(&self, wall: Wall) -> [f64; 2] {
        wall.normal()
    }

    pub fn tangent(&self, wall: Wall) -> [f64; 2] {
        wall.tangent()
    }

    /// Sample a scalar function at the interior nodes in storage order.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.npts());
        for &y in &self.y_nodes {
            for &x in &self.x_nodes {
                out.push(f(x, y));
            }
        }
        out
    }

    /// Sample a function of x along a wall.
    pub fn sample_wall(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.x_nodes.iter().map(|&x| f(x)).collect()
    }

    /// Values of mode `j` at the x nodes.
    pub fn mode_samples(&self, mode: i32) -> Vec<f64> {
        let k = self.spec.wavenumber(mode);
        self.x_nodes
            .iter()
            .map(|&x| fourier_mode(mode, k, x))
            .collect()
    }

    pub fn integrate_domain(&self, samples: &[f64]) -> Result<f64> {
        check_len(self.npts(), samples.len())?;
        Ok(samples
            .iter()
            .zip(&self.quad_weights_domain)
            .map(|(f, w)| f * w)
            .sum())
    }

    /// Line integral along one wall.
    pub fn integrate_wall(&self, samples: &[f64]) -> Result<f64> {
        check_len(self.nx(), samples.len())?;
        Ok(self.x_weight * samples.iter().sum::<f64>())
    }

    /// `∫_Γ f dγ` as the sum of both wall integrals.
    pub fn integrate_boundary(&self, bottom: &[f64], top: &[f64]) -> Result<f64> {
        Ok(self.integrate_wall(bottom)? + self.integrate_wall(top)?)
    }

    /// Real Fourier coefficient of wall samples onto mode `j`.
    pub fn wall_coefficient(&self, samples: &[f64], mode: i32) -> Result<f64> {
        check_len(self.nx(), samples.len())?;
        let phi = self.mode_samples(mode);
        let dot: f64 = samples.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() * self.x_weight;
        Ok(dot / mode_mass(mode, self.spec.length_x))
    }
}

pub fn build_grid(spec: &DomainSpec) -> Result<Grid> {
    spec.validate()?;
    let nx = spec.nodes_x();
    let dx = spec.length_x / nx as f64;
    let x_nodes: Vec<f64> = (0..nx).map(|i| i as f64 * dx).collect();
    let (y_nodes, y_weights) = quadrature::gauss_legendre_unit(spec.nodes_y);
    let mut quad = Vec::with_capacity(nx * spec.nodes_y);
    for wy in &y_weights {
        for _ in 0..nx {
            quad.push(dx * wy);
        }
    }
    Ok(Grid {
        spec: spec.clone(),
        x_nodes,
        y_nodes,
        y_weights,
        x_weight: dx,
        quad_weights_domain: quad,
    })
}
