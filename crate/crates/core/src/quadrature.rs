//! One-dimensional Legendre machinery for the wall-normal direction.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[0, 1]`, nodes ascending.
///
/// Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let nodes = xs.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let weights = ws.iter().map(|w| 0.5 * w).collect();
    (nodes, weights)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one Gauss node");
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    (xs, ws)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values, first and second derivatives of `P_0..=P_nmax` at `x ∈ [-1, 1]`.
///
/// Uses the derivative recurrences `P'_{k+1} = P'_{k-1} + (2k+1) P_k` so the
/// endpoints need no special casing.
pub fn legendre_table(nmax: usize, x: f64) -> [Vec<f64>; 3] {
    let mut p = vec![0.0; nmax + 1];
    let mut d1 = vec![0.0; nmax + 1];
    let mut d2 = vec![0.0; nmax + 1];
    p[0] = 1.0;
    if nmax >= 1 {
        p[1] = x;
        d1[1] = 1.0;
    }
    for k in 1..nmax {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        d1[k + 1] = d1[k - 1] + (2.0 * kf + 1.0) * p[k];
        d2[k + 1] = d2[k - 1] + (2.0 * kf + 1.0) * d1[k];
    }
    [p, d1, d2]
}

/// Spectral differentiation matrix for the Lagrange interpolant through `nodes`.
///
/// Row-major: `d[i * n + j]` is the weight of sample `j` in the derivative at node `i`.
pub fn differentiation_matrix(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut bary = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                bary[i] *= nodes[i] - nodes[j];
            }
        }
        bary[i] = 1.0 / bary[i];
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// Apply a row-major square matrix to a vector.
pub fn apply(matrix: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            matrix[i * n..(i + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}
