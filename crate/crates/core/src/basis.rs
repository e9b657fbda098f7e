//! Navier-slip Stokes eigenbasis in streamfunction form.
//!
//! Every field of the discrete space is `psi = f(y) phi_j(x)` with
//! `f(0) = f(1) = 0`, so `v = (psi_y, -psi_x)` is solenoidal with `v·n = 0`
//! on both walls. For `j = 0` this is the shear family `(f'(y), 0)`, and the
//! wall conditions on `f` force zero mean flow. Wall-normal profiles live in
//! the Legendre-Dirichlet space spanned by `L_m(2y-1) - L_{m+2}(2y-1)`.
//!
//! Per mode the V- and H-forms reduce to
//!
//! ```text
//! a(f,g) = ∫ 4k² f'g' + (f''+k²f)(g''+k²g) dy + alpha (f'g'(0) + f'g'(1))
//! m(f,g) = ∫ f'g' + k² f g dy
//! ```
//!
//! times `∫ phi_j² dx`, and the generalized symmetric pencil `(a, m)` gives
//! the eigenpairs. The Gauss rule integrates both forms exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{from_streamfunction, Component, Profile, Trace, VelocityField};
use crate::geometry::{build_grid, mode_mass, DomainSpec, Grid, Wall};
use crate::quadrature::legendre_table;

/// Legendre-Dirichlet profile space sampled on a grid.
#[derive(Debug, Clone)]
pub struct ShenSpace {
    pub degree: usize,
    /// `[m][q]` tables of `f, f', f''` at the Gauss nodes.
    val: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    /// `[m][wall]` tables at `y = 0, 1`.
    wall_d1: Vec<[f64; 2]>,
    wall_d2: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl ShenSpace {
    pub fn new(grid: &Grid) -> Self {
        let degree = grid.spec.profile_degree();
        let dim = degree - 1;
        let mut val = vec![Vec::with_capacity(grid.ny()); dim];
        let mut d1 = vec![Vec::with_capacity(grid.ny()); dim];
        let mut d2 = vec![Vec::with_capacity(grid.ny()); dim];
        let eval = |y: f64| {
            let [p, dp, ddp] = legendre_table(degree, 2.0 * y - 1.0);
            // normalise so that ∫ f_m'^2 dy = 1
            (0..dim)
                .map(|m| {
                    let s = 1.0 / (2.0 * (4.0 * m as f64 + 6.0)).sqrt();
                    (
                        s * (p[m] - p[m + 2]),
                        2.0 * s * (dp[m] - dp[m + 2]),
                        4.0 * s * (ddp[m] - ddp[m + 2]),
                    )
                })
                .collect::<Vec<_>>()
        };
        for &y in &grid.y_nodes {
            for (m, (f, df, ddf)) in eval(y).into_iter().enumerate() {
                val[m].push(f);
                d1[m].push(df);
                d2[m].push(ddf);
            }
        }
        let e0 = eval(0.0);
        let e1 = eval(1.0);
        let wall_d1 = (0..dim).map(|m| [e0[m].1, e1[m].1]).collect();
        let wall_d2 = (0..dim).map(|m| [e0[m].2, e1[m].2]).collect();
        ShenSpace {
            degree,
            val,
            d1,
            d2,
            wall_d1,
            wall_d2,
            weights: grid.y_weights.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.val.len()
    }

    /// V-form and H-form matrices for wavenumber `k` (x-mass factored out).
    pub fn forms(&self, k: f64, alpha: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let k2 = k * k;
        let mut a = DMatrix::zeros(n, n);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut av = 0.0;
                let mut mv = 0.0;
                for q in 0..self.weights.len() {
                    let w = self.weights[q];
                    let (fi, fj) = (self.val[i][q], self.val[j][q]);
                    let (di, dj) = (self.d1[i][q], self.d1[j][q]);
                    let (si, sj) = (self.d2[i][q] + k2 * fi, self.d2[j][q] + k2 * fj);
                    av += w * (4.0 * k2 * di * dj + si * sj);
                    mv += w * (di * dj + k2 * fi * fj);
                }
                av += alpha
                    * (self.wall_d1[i][0] * self.wall_d1[j][0]
                        + self.wall_d1[i][1] * self.wall_d1[j][1]);
                a[(i, j)] = av;
                a[(j, i)] = av;
                m[(i, j)] = mv;
                m[(j, i)] = mv;
            }
        }
        (a, m)
    }

    /// Profiles `(f, f')` and `(f', f'')` for the coefficient vector `c`.
    pub fn profiles(&self, c: &[f64]) -> (Profile, Profile) {
        let nq = self.weights.len();
        let mut f = vec![0.0; nq];
        let mut df = vec![0.0; nq];
        let mut ddf = vec![0.0; nq];
        let mut wd1 = [0.0; 2];
        let mut wd2 = [0.0; 2];
        for (m, cm) in c.iter().enumerate() {
            for q in 0..nq {
                f[q] += cm * self.val[m][q];
                df[q] += cm * self.d1[m][q];
                ddf[q] += cm * self.d2[m][q];
            }
            for w in 0..2 {
                wd1[w] += cm * self.wall_d1[m][w];
                wd2[w] += cm * self.wall_d2[m][w];
            }
        }
        (
            Profile {
                val: f,
                der: df.clone(),
                wall_val: [0.0, 0.0],
                wall_der: wd1,
            },
            Profile {
                val: df,
                der: ddf,
                wall_val: wd1,
                wall_der: wd2,
            },
        )
    }

    /// Wall slopes `f'(0), f'(1)` of every basis function.
    pub fn wall_slopes(&self) -> &[[f64; 2]] {
        &self.wall_d1
    }

    pub fn field(&self, grid: &Grid, mode: i32, c: &[f64]) -> VelocityField {
        let (f, df) = self.profiles(c);
        from_streamfunction(grid, mode, &f, &df)
    }
}

/// One eigenfunction: mode label, branch index within its mode, eigenvalue
/// and Legendre-Dirichlet coefficients (already H-normalised).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub mode: i32,
    pub branch: usize,
    pub eigenvalue: f64,
    pub coeffs: Vec<f64>,
}

/// H-orthonormal eigenbasis `e_1..e_n` with nondecreasing eigenvalues.
#[derive(Debug, Clone)]
pub struct Basis {
    pub spec: DomainSpec,
    pub grid: Grid,
    pub space: ShenSpace,
    pub pairs: Vec<Eigenpair>,
    pub fields: Vec<VelocityField>,
}

impl Basis {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.eigenvalue).collect()
    }

    /// Leading `n` eigenpairs; the basis is ordered so this is `P_n`'s range.
    pub fn truncated(&self, n: usize) -> Result<Basis> {
        if n == 0 || n > self.len() {
            return Err(Error::Resolution(format!(
                "cannot truncate basis of size {} to {n}",
                self.len()
            )));
        }
        Ok(Basis {
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            space: self.space.clone(),
            pairs: self.pairs[..n].to_vec(),
            fields: self.fields[..n].to_vec(),
        })
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> VelocityField {
        VelocityField::combination(&self.grid, coeffs, &self.fields)
    }

    pub fn alpha(&self) -> f64 {
        self.spec.friction_alpha
    }

    /// Largest `|(v, e_i)_V - lambda_i (v, e_i)| / lambda_i` over the test fields.
    pub fn weak_residual(&self, tests: &[VelocityField]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (pair, e) in self.pairs.iter().zip(&self.fields) {
            for v in tests {
                let r = inner_v(&self.grid, self.alpha(), v, e)?
                    - pair.eigenvalue * inner_h(&self.grid, v, e)?;
                worst = worst.max(r.abs() / pair.eigenvalue);
            }
        }
        Ok(worst)
    }

    pub fn export(&self) -> BasisArtifact {
        BasisArtifact {
            format: BASIS_FORMAT.into(),
            spec: self.spec.clone(),
            y_nodes: self.grid.y_nodes.clone(),
            pairs: self.pairs.clone(),
            profiles: self
                .pairs
                .iter()
                .map(|p| self.space.profiles(&p.coeffs).0.val)
                .collect(),
        }
    }

    pub fn import(artifact: &BasisArtifact) -> Result<Basis> {
        if artifact.format != BASIS_FORMAT {
            return Err(Error::Artifact(format!(
                "unknown basis format {:?}",
                artifact.format
            )));
        }
        let grid = build_grid(&artifact.spec)?;
        let space = ShenSpace::new(&grid);
        let mut fields = Vec::with_capacity(artifact.pairs.len());
        for (pair, samples) in artifact.pairs.iter().zip(&artifact.profiles) {
            if pair.coeffs.len() != space.dim()
                || pair.mode.unsigned_abs() as usize > artifact.spec.modes_x
            {
                return Err(Error::Artifact(
                    "eigenpair does not fit the declared domain".into(),
                ));
            }
            let f = space.profiles(&pair.coeffs).0.val;
            let drift = f
                .iter()
                .zip(samples)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if drift > 1e-12 {
                return Err(Error::Artifact(format!(
                    "profile samples disagree with coefficients by {drift:e}"
                )));
            }
            fields.push(space.field(&grid, pair.mode, &pair.coeffs));
        }
        Ok(Basis {
            spec: artifact.spec.clone(),
            grid,
            space,
            pairs: artifact.pairs.clone(),
            fields,
        })
    }
}

pub const BASIS_FORMAT: &str = "slipflow-basis-v1";

/// Structured-text form of a basis: eigenvalues, coefficients and profile samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisArtifact {
    pub format: String,
    pub spec: DomainSpec,
    pub y_nodes: Vec<f64>,
    pub pairs: Vec<Eigenpair>,
    /// Streamfunction profile `f(y)` of each eigenfunction at `y_nodes`.
    pub profiles: Vec<Vec<f64>>,
}

/// Solve the generalized pencil `a x = lambda m x`, returning ascending
/// eigenvalues and `m`-orthonormal eigenvectors.
pub(crate) fn generalized_eigen(
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("mass form is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(c, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt_inv = linv.transpose();
    let mut values = Vec::with_capacity(order.len());
    let mut vectors = Vec::with_capacity(order.len());
    for i in order {
        values.push(eig.eigenvalues[i]);
        let mut x = &lt_inv * eig.eigenvectors.column(i);
        // deterministic sign: largest-magnitude entry positive
        let imax = x.iamax();
        if x[imax] < 0.0 {
            x.neg_mut();
        }
        vectors.push(x);
    }
    Ok((values, vectors))
}

/// Build the `n` lowest eigenpairs over the modes `|j| <= K`.
///
/// Only the lower half of each mode's discrete spectrum is trusted; asking for
/// more eigenpairs than that is a resolution error.
pub fn build_eigenbasis(spec: &DomainSpec, n: usize) -> Result<Basis> {
    let grid = build_grid(spec)?;
    let space = ShenSpace::new(&grid);
    if n == 0 {
        return Err(Error::InvalidConfig("basis size must be at least 1".into()));
    }
    let trusted = space.dim() / 2;
    let mut candidates: Vec<Eigenpair> = Vec::new();
    for j in 0..=spec.modes_x as i32 {
        let k = spec.wavenumber(j);
        let (a, m) = space.forms(k, spec.friction_alpha);
        let (values, vectors) = generalized_eigen(&a, &m)?;
        for (r, (lambda, x)) in values.into_iter().zip(vectors).take(trusted).enumerate() {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Numerical(format!(
                    "nonpositive eigenvalue {lambda} in mode {j}"
                )));
            }
            let parities: &[i32] = if j == 0 { &[0] } else { &[j, -j] };
            for &mode in parities {
                let norm = mode_mass(mode, spec.length_x).sqrt();
                candidates.push(Eigenpair {
                    mode,
                    branch: r,
                    eigenvalue: lambda,
                    coeffs: x.iter().map(|c| c / norm).collect(),
                });
            }
        }
    }
    if n > candidates.len() {
        return Err(Error::Resolution(format!(
            "requested {n} eigenpairs but only {} are resolved on this grid",
            candidates.len()
        )));
    }
    // lambda, then wavenumber, then wall-normal index, cosine before sine
    candidates.sort_by(|p, q| {
        p.eigenvalue
            .total_cmp(&q.eigenvalue)
            .then(p.mode.unsigned_abs().cmp(&q.mode.unsigned_abs()))
            .then(p.branch.cmp(&q.branch))
            .then(q.mode.cmp(&p.mode))
    });
    candidates.truncate(n);
    let fields = candidates
        .iter()
        .map(|p| space.field(&grid, p.mode, &p.coeffs))
        .collect();
    Ok(Basis {
        spec: spec.clone(),
        grid,
        space,
        pairs: candidates,
        fields,
    })
}

/// `(u, v) = ∫ u·v dx`.
pub fn inner_h(grid: &Grid, u: &VelocityField, v: &VelocityField) -> Result<f64> {
    u.check_grid(grid)?;
    v.check_grid(grid)?;
    let s: f64 = grid
        .quad_weights_domain
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w * (u.component(Component::U)[i] * v.component(Component::U)[i]
                + u.component(Component::W)[i] * v.component(Component::W)[i])
        })
        .sum();
    Ok(s)
}

/// `(u, v)_V = 2 ∫ D(u):D(v) dx + alpha ∫_Γ u·v dγ`.
pub fn inner_v(grid: &Grid, alpha: f64, u: &VelocityField, v: &VelocityField) -> Result<f64> {
    u.check_grid(grid)?;
    v.check_grid(grid)?;
    use Component::*;
    let mut s = 0.0;
    for (i, w) in grid.quad_weights_domain.iter().enumerate() {
        let shear_u = u.component(Uy)[i] + u.component(Wx)[i];
        let shear_v = v.component(Uy)[i] + v.component(Wx)[i];
        s += w
            * (2.0
                * (u.component(Ux)[i] * v.component(Ux)[i]
                    + u.component(Wy)[i] * v.component(Wy)[i])
                + shear_u * shear_v);
    }
    Ok(s + alpha * wall_product(grid, u, v)?)
}

/// `∫_Γ u·v dγ`.
pub fn wall_product(grid: &Grid, u: &VelocityField, v: &VelocityField) -> Result<f64> {
    let mut s = 0.0;
    for wall in Wall::BOTH {
        let prod: Vec<f64> = u
            .trace(wall, Trace::U)
            .iter()
            .zip(v.trace(wall, Trace::U))
            .zip(u.trace(wall, Trace::W).iter().zip(v.trace(wall, Trace::W)))
            .map(|((a, b), (c, d))| a * b + c * d)
            .collect();
        s += grid.integrate_wall(&prod)?;
    }
    Ok(s)
}

/// `∫ ∇u : ∇v dx`.
pub fn inner_grad(grid: &Grid, u: &VelocityField, v: &VelocityField) -> Result<f64> {
    u.check_grid(grid)?;
    v.check_grid(grid)?;
    use Component::*;
    let mut s = 0.0;
    for (i, w) in grid.quad_weights_domain.iter().enumerate() {
        s += w * [Ux, Uy, Wx, Wy]
            .iter()
            .map(|&c| u.component(c)[i] * v.component(c)[i])
            .sum::<f64>();
    }
    Ok(s)
}

pub fn norm_h(grid: &Grid, v: &VelocityField) -> Result<f64> {
    Ok(inner_h(grid, v, v)?.max(0.0).sqrt())
}

pub fn norm_v(grid: &Grid, alpha: f64, v: &VelocityField) -> Result<f64> {
    Ok(inner_v(grid, alpha, v, v)?.max(0.0).sqrt())
}

pub fn norm_h1(grid: &Grid, v: &VelocityField) -> Result<f64> {
    Ok((inner_h(grid, v, v)? + inner_grad(grid, v, v)?)
        .max(0.0)
        .sqrt())
}

/// `∫_O v dx`.
pub fn mean(grid: &Grid, v: &VelocityField) -> Result<[f64; 2]> {
    Ok([
        grid.integrate_domain(v.component(Component::U))?,
        grid.integrate_domain(v.component(Component::W))?,
    ])
}

/// Coefficients `(v, e_i)`.
pub fn project(field: &VelocityField, basis: &Basis) -> Result<Vec<f64>> {
    basis
        .fields
        .iter()
        .map(|e| inner_h(&basis.grid, field, e))
        .collect()
}

/// `‖v‖_{H¹} / ‖v‖_V`.
pub fn korn_ratio(grid: &Grid, alpha: f64, v: &VelocityField) -> Result<f64> {
    let nv = norm_v(grid, alpha, v)?;
    if nv == 0.0 {
        return Err(Error::Numerical(
            "Korn ratio of a field with zero V-norm".into(),
        ));
    }
    Ok(norm_h1(grid, v)? / nv)
}

fn interpolation_denominator(grid: &Grid, v: &VelocityField, q: f64) -> Result<f64> {
    let l2 = norm_h(grid, v)?;
    let grad = inner_grad(grid, v, v)?.max(0.0).sqrt();
    let d = l2.powf(2.0 / q) * grad.powf(1.0 - 2.0 / q);
    if d == 0.0 {
        return Err(Error::Numerical(
            "interpolation ratio of a constant field".into(),
        ));
    }
    Ok(d)
}

/// `‖v - v_O‖_4 / (‖v‖_2^{1/2} ‖∇v‖_2^{1/2})`.
pub fn gagliardo_nirenberg_ratio(grid: &Grid, v: &VelocityField) -> Result<f64> {
    let area = grid.spec.length_x;
    let [mu, mw] = mean(grid, v)?;
    let (mu, mw) = (mu / area, mw / area);
    let quartic: Vec<f64> = v
        .component(Component::U)
        .iter()
        .zip(v.component(Component::W))
        .map(|(u, w)| ((u - mu).powi(2) + (w - mw).powi(2)).powi(2))
        .collect();
    let l4 = grid.integrate_domain(&quartic)?.powf(0.25);
    Ok(l4 / interpolation_denominator(grid, v, 4.0)?)
}

/// `‖v - v_O‖_{L_2(Γ)} / (‖v‖_2^{1/2} ‖∇v‖_2^{1/2})`.
pub fn trace_ratio(grid: &Grid, v: &VelocityField) -> Result<f64> {
    let area = grid.spec.length_x;
    let [mu, mw] = mean(grid, v)?;
    let (mu, mw) = (mu / area, mw / area);
    let mut s = 0.0;
    for wall in Wall::BOTH {
        let sq: Vec<f64> = v
            .trace(wall, Trace::U)
            .iter()
            .zip(v.trace(wall, Trace::W))
            .map(|(u, w)| (u - mu).powi(2) + (w - mw).powi(2))
            .collect();
        s += grid.integrate_wall(&sq)?;
    }
    // q = 2: ‖v‖^{1/2} ‖∇v‖^{1/2}
    let l2 = norm_h(grid, v)?;
    let grad = inner_grad(grid, v, v)?.max(0.0).sqrt();
    let d = (l2 * grad).sqrt();
    if d == 0.0 {
        return Err(Error::Numerical("trace ratio of a constant field".into()));
    }
    Ok(s.sqrt() / d)
}

/// Random fields spanned by every Legendre-Dirichlet profile on every resolved mode.
pub fn random_discrete_fields(
    basis: &Basis,
    count: usize,
    rng: &mut impl rand::Rng,
) -> Vec<VelocityField> {
    use rand_distr::{Distribution, StandardNormal};
    let k = basis.spec.modes_x as i32;
    let dim = basis.space.dim();
    (0..count)
        .map(|_| {
            let mut v = VelocityField::zeros(&basis.grid);
            for mode in -k..=k {
                let c: Vec<f64> = (0..dim)
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        z / (1.0 + m as f64).powi(2)
                    })
                    .collect();
                v.axpy(1.0, &basis.space.field(&basis.grid, mode, &c));
            }
            v
        })
        .collect()
}
