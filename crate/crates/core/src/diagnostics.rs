//! Exponential weights and Monte Carlo certification of the a priori estimates.
//!
//! Expectations are sample means over non-blown-up paths and `sup_{s<=t}` is
//! the maximum over the stored time grid. Time integrals use the trapezoidal
//! rule on the same grid. Every certificate reports the ratio `lhs / rhs` as
//! its fitted constant together with a path-bootstrap interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DriftOperator, Trajectory};
use crate::error::{check_len, Error, Result};
use crate::lifting::{trace_norm, BoundaryControl};

/// Minimum number of usable paths for a Monte Carlo certificate.
pub const MIN_PATHS: usize = 100;
const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Xi0,
    Xi1,
}

/// `ξ(t_ℓ)` together with the data functions `A = ‖(a,b)‖² + 1` and `B = ‖(a,b)‖⁴ + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSeries {
    pub kind: WeightKind,
    pub c0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `-ln ξ(t_ℓ)`; stays finite where `values` underflows to zero.
    pub exponent: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl WeightSeries {
    /// `ξ(0) = 1`, `0 < ξ <= 1` and nonincreasing, with positivity read off the exponent.
    pub fn is_admissible(&self) -> bool {
        self.values.first() == Some(&1.0)
            && self.exponent.first() == Some(&0.0)
            && self.exponent.iter().all(|e| e.is_finite() && *e >= 0.0)
            && self.exponent.windows(2).all(|w| w[1] >= w[0])
            && self.values.iter().all(|v| *v >= 0.0 && *v <= 1.0)
            && self.values.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Cumulative trapezoidal integral, starting at zero.
pub fn cumulative_trapezoid(times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; times.len()];
    for l in 1..times.len() {
        out[l] = out[l - 1] + 0.5 * (times[l] - times[l - 1]) * (f[l] + f[l - 1]);
    }
    out
}

pub fn trapezoid(times: &[f64], f: &[f64]) -> f64 {
    cumulative_trapezoid(times, f)
        .last()
        .copied()
        .unwrap_or(0.0)
}

/// Squared trace norm of a control at the given times.
pub fn trace_norm_sq_series(ctrl: &BoundaryControl, times: &[f64]) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&t| trace_norm(ctrl, t).map(|n| n * n))
        .collect()
}

/// `ξ₀(t) = exp(-C₀ t - C₀ ∫₀ᵗ ‖(a,b)‖² ds)`.
pub fn weight_xi0(ctrl: &BoundaryControl, c0: f64, times: &[f64]) -> Result<WeightSeries> {
    if !(c0 >= 0.0 && c0.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "C0 must be finite and nonnegative, got {c0}"
        )));
    }
    let n2 = trace_norm_sq_series(ctrl, times)?;
    let integral = cumulative_trapezoid(times, &n2);
    let exponent: Vec<f64> = times
        .iter()
        .zip(&integral)
        .map(|(t, i)| c0 * t + c0 * i)
        .collect();
    Ok(WeightSeries {
        kind: WeightKind::Xi0,
        c0,
        times: times.to_vec(),
        values: exponent.iter().map(|e| (-e).exp()).collect(),
        exponent,
        a: n2.iter().map(|s| s + 1.0).collect(),
        b: n2.iter().map(|s| s * s + 1.0).collect(),
    })
}

/// `ξ₁(t) = exp(-∫₀ᵗ f₁ ds)`.
pub fn weight_xi1(times: &[f64], f1: &[f64]) -> Result<Vec<f64>> {
    check_len(times.len(), f1.len())?;
    Ok(cumulative_trapezoid(times, f1)
        .iter()
        .map(|i| (-i).exp())
        .collect())
}

/// Result of one Monte Carlo certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; zero when both sides vanish.
    pub constant: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub paths: usize,
    pub blown_up: usize,
    pub basis_size: usize,
}

impl EstimateReport {
    pub fn is_finite(&self) -> bool {
        self.lhs.is_finite() && self.rhs.is_finite() && self.constant.is_finite()
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-path statistics `x_p` (left side) and `z_p` (right side) combined as
/// `(Σx_p)/(Σz_p + c)`, with a deterministic bootstrap over paths.
struct PathSample {
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    rhs_const: f64,
}

impl PathSample {
    fn report(&self, name: &str, blown_up: usize, basis_size: usize) -> EstimateReport {
        let lhs = mean(&self.lhs);
        let rhs = mean(&self.rhs) + self.rhs_const;
        let constant = ratio(lhs, rhs);
        let n = self.lhs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
        let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let (mut l, mut r) = (0.0, 0.0);
                for _ in 0..n {
                    let p = rng.random_range(0..n);
                    l += self.lhs[p];
                    r += self.rhs[p];
                }
                ratio(l / n as f64, r / n as f64 + self.rhs_const)
            })
            .collect();
        boots.sort_by(f64::total_cmp);
        EstimateReport {
            name: name.into(),
            lhs,
            rhs,
            constant,
            ci_low: percentile(&boots, 0.025),
            ci_high: percentile(&boots, 0.975),
            paths: n,
            blown_up,
            basis_size,
        }
    }
}

/// `Σ_ℓ |E_{ℓ+1} - E_ℓ + 2ν Δt_ℓ ‖u_ℓ‖_V²|` for the homogeneous energy identity.
pub fn energy_identity_defect(traj: &Trajectory, viscosity: f64) -> f64 {
    (0..traj.times.len().saturating_sub(1))
        .map(|l| {
            let dt = traj.times[l + 1] - traj.times[l];
            (traj.energy[l + 1] - traj.energy[l] + 2.0 * viscosity * dt * traj.dissipation[l]).abs()
        })
        .sum()
}

/// Sample mean with a 95% percentile-bootstrap interval over the entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

pub fn bootstrap_mean(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            count: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boots.sort_by(f64::total_cmp);
    MeanEstimate {
        mean: mean(values),
        ci_low: percentile(&boots, 0.025),
        ci_high: percentile(&boots, 0.975),
        count: n,
    }
}

fn usable<'a>(
    trajs: &'a [Trajectory],
    weight: &WeightSeries,
    min_paths: usize,
) -> Result<(Vec<&'a Trajectory>, usize)> {
    let good: Vec<&Trajectory> = trajs.iter().filter(|t| !t.blew_up).collect();
    if good.len() < min_paths {
        return Err(Error::InsufficientSamples {
            needed: min_paths,
            have: good.len(),
        });
    }
    for t in &good {
        if t.times != weight.times {
            return Err(Error::InvalidConfig(
                "trajectory and weight time grids differ".into(),
            ));
        }
    }
    Ok((good.clone(), trajs.len() - good.len()))
}

/// Which form of the second-moment estimate to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondMoment {
    /// Galerkin truncation at fixed `n`.
    Galerkin,
    /// Finest available truncation standing in for the limit solution.
    Limit,
}

/// `E sup ξ₀²‖u‖² + ν E∫ξ₀²‖u‖_V² ≤ C (E‖u₀‖² + E∫ξ₀² A)`.
pub fn certify_second_moment(
    trajs: &[Trajectory],
    weight: &WeightSeries,
    viscosity: f64,
    form: SecondMoment,
    min_paths: usize,
) -> Result<EstimateReport> {
    let (good, blown) = usable(trajs, weight, min_paths)?;
    let w2: Vec<f64> = weight.values.iter().map(|x| x * x).collect();
    let data: Vec<f64> = w2.iter().zip(&weight.a).map(|(w, a)| w * a).collect();
    let rhs_const = trapezoid(&weight.times, &data);
    let mut s = PathSample {
        lhs: vec![],
        rhs: vec![],
        rhs_const,
    };
    for t in &good {
        let sup = t
            .energy
            .iter()
            .zip(&w2)
            .map(|(e, w)| w * e)
            .fold(0.0, f64::max);
        let diss: Vec<f64> = t.dissipation.iter().zip(&w2).map(|(d, w)| w * d).collect();
        s.lhs
            .push(sup + viscosity * trapezoid(&weight.times, &diss));
        s.rhs.push(t.u0_energy());
    }
    let name = match form {
        SecondMoment::Galerkin => "galerkin_second_moment",
        SecondMoment::Limit => "second_moment",
    };
    Ok(s.report(name, blown, good[0].beta[0].len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourthMoment {
    /// `E sup ξ₀⁴‖u_n‖⁴ + 8ν² E(∫ξ₀²‖u_n‖_V²)² ≤ C (E‖u₀‖⁴ + E∫ξ₀⁴ B)`.
    Galerkin,
    /// `E sup ξ₀⁴‖u‖⁴ + ν² E(∫ξ₀²‖u‖_V²)² ≤ C (E‖y₀‖⁴ + ν² E∫ξ₀⁴ B)`.
    Limit,
}

pub fn certify_fourth_moment(
    trajs: &[Trajectory],
    weight: &WeightSeries,
    viscosity: f64,
    form: FourthMoment,
    min_paths: usize,
) -> Result<EstimateReport> {
    let (good, blown) = usable(trajs, weight, min_paths)?;
    let w2: Vec<f64> = weight.values.iter().map(|x| x * x).collect();
    let w4b: Vec<f64> = w2.iter().zip(&weight.b).map(|(w, b)| w * w * b).collect();
    let nu2 = viscosity * viscosity;
    let (lhs_factor, data_factor) = match form {
        FourthMoment::Galerkin => (8.0 * nu2, 1.0),
        FourthMoment::Limit => (nu2, nu2),
    };
    let rhs_const = data_factor * trapezoid(&weight.times, &w4b);
    let mut s = PathSample {
        lhs: vec![],
        rhs: vec![],
        rhs_const,
    };
    for t in &good {
        let sup = t
            .energy
            .iter()
            .zip(&w2)
            .map(|(e, w)| w * w * e * e)
            .fold(0.0, f64::max);
        let diss: Vec<f64> = t.dissipation.iter().zip(&w2).map(|(d, w)| w * d).collect();
        let i = trapezoid(&weight.times, &diss);
        s.lhs.push(sup + lhs_factor * i * i);
        let init = match form {
            FourthMoment::Galerkin => t.u0_energy(),
            FourthMoment::Limit => t.y0_energy(),
        };
        s.rhs.push(init * init);
    }
    let name = match form {
        FourthMoment::Galerkin => "galerkin_fourth_moment",
        FourthMoment::Limit => "fourth_moment",
    };
    Ok(s.report(name, blown, good[0].beta[0].len()))
}

/// Jensen check on the same sample: `E[X²] ≥ (E X)²` with `X = sup ξ₀²‖u‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentConsistency {
    pub second: f64,
    pub fourth: f64,
    pub holds: bool,
}

pub fn moment_consistency(
    trajs: &[Trajectory],
    weight: &WeightSeries,
) -> Result<MomentConsistency> {
    let (good, _) = usable(trajs, weight, 1)?;
    let w2: Vec<f64> = weight.values.iter().map(|x| x * x).collect();
    let x: Vec<f64> = good
        .iter()
        .map(|t| {
            t.energy
                .iter()
                .zip(&w2)
                .map(|(e, w)| w * e)
                .fold(0.0, f64::max)
        })
        .collect();
    let second = mean(&x);
    let fourth = mean(&x.iter().map(|v| v * v).collect::<Vec<_>>());
    Ok(MomentConsistency {
        second,
        fourth,
        holds: fourth >= second * second * (1.0 - 1e-12),
    })
}

/// `E sup‖u‖² ≤ (E sup ξ₀⁴‖u‖⁴)^{1/2} (E ξ₀^{-4}(T))^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderChainReport {
    pub lhs: f64,
    pub weighted_fourth_root: f64,
    pub inverse_weight_root: f64,
    pub rhs: f64,
    pub holds: bool,
    pub paths: usize,
}

pub fn certify_wellposed_cost(
    trajs: &[Trajectory],
    weight: &WeightSeries,
    min_paths: usize,
) -> Result<HolderChainReport> {
    let (good, _) = usable(trajs, weight, min_paths)?;
    let sup_u: Vec<f64> = good
        .iter()
        .map(|t| t.energy.iter().cloned().fold(0.0, f64::max))
        .collect();
    let sup_w: Vec<f64> = good
        .iter()
        .map(|t| {
            t.energy
                .iter()
                .zip(&weight.values)
                .map(|(e, w)| w.powi(4) * e * e)
                .fold(0.0, f64::max)
        })
        .collect();
    let lhs = mean(&sup_u);
    let a = mean(&sup_w).sqrt();
    let xi_t = *weight.values.last().expect("nonempty weight");
    let b = xi_t.powi(-4).sqrt();
    let rhs = a * b;
    Ok(HolderChainReport {
        lhs,
        weighted_fourth_root: a,
        inverse_weight_root: b,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
        paths: good.len(),
    })
}

/// Constants entering `f₁ = C₃ + max(3C₀, C₂)(1 + ‖(a₁,b₁)‖² + ‖(a₂,b₂)‖² + ‖u₁‖_V²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub c0: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Two solution bundles driven by the same Brownian paths.
pub struct StabilityInput<'a> {
    pub drift: &'a DriftOperator,
    pub ctrl1: &'a BoundaryControl,
    pub ctrl2: &'a BoundaryControl,
    pub trajs1: &'a [Trajectory],
    pub trajs2: &'a [Trajectory],
}

/// `E sup ξ₁²‖ŷ‖² + 2ν E∫ξ₁²‖ŷ‖_V² ≤ C (E‖ŷ₀‖² + E∫ξ₁²‖(â,b̂)‖²)`.
pub fn certify_stability(
    input: &StabilityInput,
    consts: StabilityConstants,
    min_paths: usize,
) -> Result<EstimateReport> {
    let StabilityInput {
        drift,
        ctrl1,
        ctrl2,
        trajs1,
        trajs2,
    } = *input;
    check_len(trajs1.len(), trajs2.len())?;
    if trajs1.len() < min_paths {
        return Err(Error::InsufficientSamples {
            needed: min_paths,
            have: trajs1.len(),
        });
    }
    let diff_ctrl = ctrl1.linear_combination(1.0, ctrl2, -1.0)?;
    let times = &trajs1[0].times;
    let n1 = trace_norm_sq_series(ctrl1, times)?;
    let n2 = trace_norm_sq_series(ctrl2, times)?;
    let nd = trace_norm_sq_series(&diff_ctrl, times)?;
    let thetas1: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| ctrl1.at(t).map(|x| x.0))
        .collect::<Result<_>>()?;
    let thetas2: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| ctrl2.at(t).map(|x| x.0))
        .collect::<Result<_>>()?;
    let gain = (3.0 * consts.c0).max(consts.c2);
    let mut s = PathSample {
        lhs: vec![],
        rhs: vec![],
        rhs_const: 0.0,
    };
    let mut blown = 0;
    for (t1, t2) in trajs1.iter().zip(trajs2) {
        if t1.seed != t2.seed || t1.path != t2.path {
            return Err(Error::InvalidConfig(
                "stability bundles must share seeds path by path".into(),
            ));
        }
        if t1.times != *times || t2.times != *times {
            return Err(Error::InvalidConfig(
                "stability bundles use different time grids".into(),
            ));
        }
        if t1.blew_up || t2.blew_up {
            blown += 1;
            continue;
        }
        let f1: Vec<f64> = (0..times.len())
            .map(|l| consts.c3 + gain * (1.0 + n1[l] + n2[l] + t1.dissipation[l]))
            .collect();
        let xi = weight_xi1(times, &f1)?;
        let mut d2 = Vec::with_capacity(times.len());
        let mut dv = Vec::with_capacity(times.len());
        for l in 0..times.len() {
            let [h, v] = drift.difference_norms(&t1.beta[l], &thetas1[l], &t2.beta[l], &thetas2[l]);
            d2.push(h);
            dv.push(v);
        }
        let xi2: Vec<f64> = xi.iter().map(|x| x * x).collect();
        let sup = d2.iter().zip(&xi2).map(|(d, w)| d * w).fold(0.0, f64::max);
        let diss: Vec<f64> = dv.iter().zip(&xi2).map(|(d, w)| d * w).collect();
        s.lhs
            .push(sup + 2.0 * drift.viscosity * trapezoid(times, &diss));
        let data: Vec<f64> = nd.iter().zip(&xi2).map(|(d, w)| d * w).collect();
        s.rhs.push(d2[0] + trapezoid(times, &data));
    }
    if s.lhs.is_empty() {
        return Err(Error::Numerical("every stability path blew up".into()));
    }
    Ok(s.report("stability", blown, drift.dim()))
}

/// Smallest `C₀` with `2(f + νΛβ)·β ≤ 2 C₀ A (‖u‖² + 1)` along all stored states.
pub fn empirical_c0(trajs: &[Trajectory], weight: &WeightSeries) -> Result<f64> {
    let (good, _) = usable(trajs, weight, 1)?;
    let mut worst = 0.0_f64;
    for t in good {
        for l in 0..t.times.len() {
            worst = worst.max(t.forcing_power[l] / (2.0 * weight.a[l] * (t.energy[l] + 1.0)));
        }
    }
    Ok(worst)
}
