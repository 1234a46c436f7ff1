//! One-dimensional quadrature and polynomial interpolation helpers.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&t| half * t).collect(),
    )
}

/// Barycentric weights for interpolation through `nodes`.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                w[j] /= nodes[j] - nodes[k];
            }
        }
    }
    // Rescale to avoid overflow for many nodes; interpolation is invariant.
    let scale = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        for v in &mut w {
            *v /= scale;
        }
    }
    w
}

/// Row of interpolation coefficients so that `p(x) = sum_j row[j] f(nodes[j])`.
pub fn interpolation_row(nodes: &[f64], bary: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut row = vec![0.0; n];
    for j in 0..n {
        if (x - nodes[j]).abs() < 1e-15 * (1.0 + x.abs()) {
            row[j] = 1.0;
            return row;
        }
    }
    let mut denom = 0.0;
    for j in 0..n {
        let t = bary[j] / (x - nodes[j]);
        row[j] = t;
        denom += t;
    }
    for v in &mut row {
        *v /= denom;
    }
    row
}

/// Spectral differentiation matrix for the interpolant through `nodes`,
/// row-major `n x n`.
pub fn differentiation_matrix(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let w = barycentric_weights(nodes);
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (nodes[i] - nodes[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// Trapezoid rule over (possibly non-uniform) nodes.
pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    assert_eq!(t.len(), f.len());
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

/// Trapezoid integral of piecewise-linear data restricted to `[lo, hi]`,
/// interpolating linearly at window edges that fall between nodes.
pub fn trapezoid_window(t: &[f64], f: &[f64], lo: f64, hi: f64) -> f64 {
    assert_eq!(t.len(), f.len());
    let mut total = 0.0;
    for i in 0..t.len().saturating_sub(1) {
        let (a, b) = (t[i], t[i + 1]);
        let s = a.max(lo);
        let e = b.min(hi);
        if e <= s {
            continue;
        }
        let lerp = |x: f64| f[i] + (f[i + 1] - f[i]) * (x - a) / (b - a);
        total += 0.5 * (e - s) * (lerp(s) + lerp(e));
    }
    total
}

/// phi_1(z) = (e^z - 1)/z and phi_2(z) = (e^z - 1 - z)/z^2, stable near 0.
pub fn phi_functions(z: f64) -> (f64, f64) {
    if z.abs() < 1e-3 {
        // Taylor: phi1 = sum z^k/(k+1)!, phi2 = sum z^k/(k+2)!
        let mut phi1 = 0.0;
        let mut phi2 = 0.0;
        let mut term = 1.0;
        for k in 0..8 {
            phi1 += term / factorial(k + 1);
            phi2 += term / factorial(k + 2);
            term *= z;
        }
        (phi1, phi2)
    } else {
        let ez = z.exp();
        let phi1 = (ez - 1.0) / z;
        let phi2 = (ez - 1.0 - z) / (z * z);
        (phi1, phi2)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Weights of the exact exponential step for `c' = -lambda c + s(t)` with
/// `s` linear on `[t_n, t_n + h]`:
/// `c_{n+1} = decay c_n + h (w0 s_n + w1 s_{n+1})`.
#[derive(Debug, Clone, Copy)]
pub struct ExpStep {
    pub decay: f64,
    pub w0: f64,
    pub w1: f64,
}

impl ExpStep {
    pub fn new(lambda: f64, h: f64) -> Self {
        let z = -lambda * h;
        let (phi1, phi2) = phi_functions(z);
        ExpStep {
            decay: z.exp(),
            w0: h * (phi1 - phi2),
            w1: h * phi2,
        }
    }

    #[inline]
    pub fn apply(&self, c: f64, s0: f64, s1: f64) -> f64 {
        self.decay * c + self.w0 * s0 + self.w1 * s1
    }
}

/// `phi_0 .. phi_{p_max}` at `z`, where `phi_p(z) = sum_k z^k / (k + p)!`.
pub fn phi_sequence(z: f64, p_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; p_max + 1];
    if z.abs() < 1.0 {
        for (p, o) in out.iter_mut().enumerate() {
            let mut term = 1.0 / factorial(p);
            let mut acc = 0.0;
            for k in 0..40 {
                acc += term;
                term *= z / (k + p + 1) as f64;
                if term.abs() < 1e-18 * acc.abs() {
                    break;
                }
            }
            *o = acc;
        }
    } else {
        // The upward recurrence is stable once |z| >= 1.
        out[0] = z.exp();
        for p in 0..p_max {
            out[p + 1] = (out[p] - 1.0 / factorial(p)) / z;
        }
    }
    out
}

/// One step of `c' = -lambda c + s(t)` from `t[n]` to `t[n + 1]`, with `s`
/// interpolated by the polynomial through `order + 1` nearby nodes:
/// `c_{n+1} = decay c_n + sum_j weights[j] s[first + j]`.
#[derive(Debug, Clone)]
pub struct ExpPolyStep {
    pub decay: f64,
    pub first: usize,
    pub weights: Vec<f64>,
}

impl ExpPolyStep {
    pub fn new(lambda: f64, t: &[f64], n: usize, order: usize) -> Self {
        assert!(n + 1 < t.len(), "step index out of range");
        let npts = (order + 1).min(t.len());
        // Centre the stencil on the step where possible.
        let lo = n.saturating_sub((npts - 1) / 2).min(t.len() - npts);
        let h = t[n + 1] - t[n];
        let z = -lambda * h;
        let phis = phi_sequence(z, npts);
        // Moments of sigma^p, sigma = (tau - t_n) / h, against the kernel.
        let moments: Vec<f64> = (0..npts).map(|p| h * factorial(p) * phis[p + 1]).collect();
        let sig: Vec<f64> = (0..npts).map(|j| (t[lo + j] - t[n]) / h).collect();
        // Lagrange basis in monomial form: solve V^T w = moments.
        let mut vt = nalgebra::DMatrix::<f64>::zeros(npts, npts);
        for p in 0..npts {
            for j in 0..npts {
                vt[(p, j)] = sig[j].powi(p as i32);
            }
        }
        let rhs = nalgebra::DVector::from_vec(moments);
        let w = vt
            .lu()
            .solve(&rhs)
            .expect("distinct time nodes give a nonsingular Vandermonde system");
        ExpPolyStep {
            decay: z.exp(),
            first: lo,
            weights: w.iter().copied().collect(),
        }
    }

    #[inline]
    pub fn apply(&self, c: f64, s: &[f64]) -> f64 {
        let mut acc = self.decay * c;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w * s[self.first + j];
        }
        acc
    }
}

/// Integrates `c' = -lambda c + s(t)` over all nodes of `t` starting from `c0`.
pub fn integrate_modal(lambda: f64, t: &[f64], s: &[f64], c0: f64, order: usize) -> Vec<f64> {
    let mut c = vec![0.0; t.len()];
    c[0] = c0;
    for n in 0..t.len().saturating_sub(1) {
        let step = ExpPolyStep::new(lambda, t, n, order);
        c[n + 1] = step.apply(c[n], s);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 48, 97] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg} q={q} exact={exact}");
            }
        }
    }

    #[test]
    fn interpolation_and_differentiation_are_exact_for_polynomials() {
        let (x, _) = gauss_legendre_on(12, 0.0, 1.0);
        let f: Vec<f64> = x.iter().map(|r| r.powi(7) - 2.0 * r.powi(3)).collect();
        let bary = barycentric_weights(&x);
        let row = interpolation_row(&x, &bary, 0.731);
        let p: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((p - (0.731f64.powi(7) - 2.0 * 0.731f64.powi(3))).abs() < 1e-13);

        let d = differentiation_matrix(&x);
        for i in 0..x.len() {
            let df: f64 = (0..x.len()).map(|j| d[i * x.len() + j] * f[j]).sum();
            let exact = 7.0 * x[i].powi(6) - 6.0 * x[i].powi(2);
            assert!((df - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn trapezoid_window_matches_clipped_integral() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let f: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let v = trapezoid_window(&t, &f, 0.25, 0.8);
        let exact = (0.8f64 * 0.8 + 0.8) - (0.25 * 0.25 + 0.25);
        assert!((v - exact).abs() < 1e-14);
        assert!((trapezoid(&t, &f) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_step_is_exact_for_linear_sources() {
        let lambda = 37.5;
        let h = 0.03;
        let (s0, s1) = (0.7, -1.3);
        // c(t) exact for c(0) = 0.2 via fine composite Simpson of Duhamel.
        let c0 = 0.2;
        let n = 20000;
        let mut acc = 0.0;
        for i in 0..=n {
            let tau = h * i as f64 / n as f64;
            let wt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let s = s0 + (s1 - s0) * tau / h;
            acc += wt * (-lambda * (h - tau)).exp() * s;
        }
        let exact = (-lambda * h).exp() * c0 + acc * h / (3.0 * n as f64);
        let step = ExpStep::new(lambda, h);
        assert!((step.apply(c0, s0, s1) - exact).abs() < 1e-12);
        // Small-argument branch agrees with the closed form.
        let (a1, a2) = phi_functions(1e-4);
        let (b1, b2) = (((1e-4f64).exp() - 1.0) / 1e-4, 0.5 + 1e-4 / 6.0);
        assert!((a1 - b1).abs() < 1e-11 && (a2 - b2).abs() < 1e-8);
    }

    #[test]
    fn cubic_exponential_step_is_exact_for_cubic_sources() {
        let lambda = 140.0;
        let t: Vec<f64> = (0..9).map(|i| 0.3 * i as f64 / 8.0 + 0.01 * (i as f64).sin()).collect();
        let src = |x: f64| 1.0 - 2.0 * x + 3.0 * x * x - 4.0 * x * x * x;
        let s: Vec<f64> = t.iter().map(|&x| src(x)).collect();
        let c = integrate_modal(lambda, &t, &s, 0.4, 3);
        // Oracle: composite Simpson of Duhamel on a fine grid.
        let tf = *t.last().unwrap();
        let n = 200000;
        let mut acc = 0.0;
        for i in 0..=n {
            let tau = t[0] + (tf - t[0]) * i as f64 / n as f64;
            let wt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += wt * (-lambda * (tf - tau)).exp() * src(tau);
        }
        let exact = (-lambda * (tf - t[0])).exp() * 0.4 + acc * (tf - t[0]) / (3.0 * n as f64);
        assert!((c[8] - exact).abs() < 1e-12, "{} vs {}", c[8], exact);
    }

    #[test]
    fn phi_sequence_branches_agree() {
        for z in [-0.999, -1.001, 0.5, -3.0] {
            let a = phi_sequence(z, 4);
            // Direct series with many terms as the oracle.
            for (p, v) in a.iter().enumerate() {
                let mut acc = 0.0;
                let mut term = 1.0 / factorial(p);
                for k in 0..80 {
                    acc += term;
                    term *= z / (k + p + 1) as f64;
                }
                assert!((v - acc).abs() < 1e-13 * acc.abs().max(1.0), "z={z} p={p}");
            }
        }
    }
}
