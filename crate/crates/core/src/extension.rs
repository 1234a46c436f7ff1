//! Divergence-free extension of ball data and its heat-kernel lift.
//!
//! `E(b) = phi b + w` where `phi` is a radial cutoff equal to one on
//! `B_{7/8}` and zero outside `B_{15/16}`, and `w` solves `div w = -phi' b_r`
//! on the annulus with `w = 0` on both spheres. The extension is stored
//! piecewise: `b` itself on a grid over `B_{7/8}` and `phi b + w` on an
//! annulus grid, so no approximation enters on `B_{7/8}`. The heat lift works
//! with the Fourier series of `E(b)` on the torus `[-pi, pi)^3`, computed by
//! quadrature over the two grids, Leray-projected and truncated to a ball of
//! wavenumbers.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ball::{BallGrid, Vsh};
use crate::error::{LabError, Result};
use crate::field::{Grid, SpaceTimeField, SphereTrace, VectorField};
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::quadrature::{gauss_legendre, gauss_legendre_on, trapezoid};
use crate::sphere::{coeff_len, lm_index, SphereQuadrature};

/// Radial cutoff: one inside `inner`, zero outside `outer`, quintic
/// smoothstep in between (C^2, slope at most `15 / (8 (outer - inner))`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec {
            inner: 0.875,
            outer: 0.9375,
        }
    }
}

impl CutoffSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner > 0.0 && self.outer > self.inner) {
            return Err(LabError::Parameter(format!(
                "cutoff needs 0 < inner < outer, got {} and {}",
                self.inner, self.outer
            )));
        }
        Ok(())
    }

    fn x(&self, r: f64) -> f64 {
        ((r - self.inner) / (self.outer - self.inner)).clamp(0.0, 1.0)
    }

    pub fn phi(&self, r: f64) -> f64 {
        let x = self.x(r);
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }

    pub fn dphi(&self, r: f64) -> f64 {
        if r <= self.inner || r >= self.outer {
            return 0.0;
        }
        let x = self.x(r);
        -30.0 * x * x * (1.0 - x) * (1.0 - x) / (self.outer - self.inner)
    }

    /// `max |grad phi|`, attained at the middle of the transition.
    pub fn max_gradient(&self) -> f64 {
        15.0 / (8.0 * (self.outer - self.inner))
    }
}

/// Degree of the bubble polynomial in the annulus divergence solver.
pub const BOGOVSKII_DEGREE: usize = 8;

/// Least-squares operator of one harmonic degree on the annulus.
struct AnnulusSolver {
    r1: f64,
    r2: f64,
    ll: f64,
    /// Quadrature nodes and weights on `(r1, r2)`.
    rq: Vec<f64>,
    wq: Vec<f64>,
    /// Pseudo-inverse mapping residual rows to bubble coefficients.
    pinv: DMatrix<f64>,
    /// Bubble basis `[value, derivative]` at the quadrature nodes.
    bubble_q: Vec<Vec<[f64; 2]>>,
    degree: usize,
}

/// `x^3 - 2x^2 + x` and `x^3 - x^2` (Hermite slope functions) with derivatives.
fn hermite_slopes(x: f64) -> ([f64; 2], [f64; 2]) {
    (
        [x * x * x - 2.0 * x * x + x, 3.0 * x * x - 4.0 * x + 1.0],
        [x * x * x - x * x, 3.0 * x * x - 2.0 * x],
    )
}

impl AnnulusSolver {
    fn bubble(&self, r: f64) -> Vec<[f64; 2]> {
        let (r1, r2) = (self.r1, self.r2);
        let beta = (r - r1).powi(2) * (r2 - r).powi(2);
        let dbeta = 2.0 * (r - r1) * (r2 - r).powi(2) - 2.0 * (r - r1).powi(2) * (r2 - r);
        let s = (2.0 * r - r1 - r2) / (r2 - r1);
        let ds = 2.0 / (r2 - r1);
        let mut p = vec![[0.0; 2]; self.degree + 1];
        // Legendre values and derivatives in s.
        let (mut p0, mut p1) = ((1.0, 0.0), (s, 1.0));
        for (j, out) in p.iter_mut().enumerate() {
            let (v, d) = match j {
                0 => p0,
                1 => p1,
                _ => {
                    let n = (j - 1) as f64;
                    let v = ((2.0 * n + 1.0) * s * p1.0 - n * p0.0) / (n + 1.0);
                    let d = ((2.0 * n + 1.0) * (p1.0 + s * p1.1) - n * p0.1) / (n + 1.0);
                    p0 = p1;
                    p1 = (v, d);
                    (v, d)
                }
            };
            *out = [beta * v, dbeta * v + beta * d * ds];
        }
        p
    }

    fn new(r1: f64, r2: f64, l: usize, degree: usize, nq: usize) -> Result<Self> {
        let ll = (l * (l + 1)) as f64;
        let (rq, wq) = gauss_legendre_on(nq, r1, r2);
        let mut s = AnnulusSolver {
            r1,
            r2,
            ll,
            rq,
            wq,
            pinv: DMatrix::zeros(0, 0),
            bubble_q: Vec::new(),
            degree,
        };
        s.bubble_q = s.rq.iter().map(|&r| s.bubble(r)).collect();
        let np = degree + 1;
        let mut m = DMatrix::<f64>::zeros(2 * nq, np);
        for q in 0..nq {
            let (r, w) = (s.rq[q], s.wq[q].sqrt() * s.rq[q]);
            for j in 0..np {
                let [b, db] = s.bubble_q[q][j];
                m[(2 * q, j)] = w * b;
                m[(2 * q + 1, j)] = w * (r * db + 2.0 * b) / ll.sqrt();
            }
        }
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-13 * smax) {
            return Err(LabError::Conditioning(format!(
                "annulus least squares at l = {l}: singular values {smin:e} .. {smax:e}"
            )));
        }
        s.pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| LabError::Conditioning(e.to_string()))?;
        Ok(s)
    }

    /// Radial profile `A` of the minimum-norm field with `div = g` for a
    /// degree-`l` coefficient `g(r)`; returns `A` and `A'` at `nodes`.
    fn solve<G: Fn(f64) -> f64>(&self, g: G, nodes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (r1, r2) = (self.r1, self.r2);
        let h = r2 - r1;
        let (g1, g2) = (g(r1), g(r2));
        let herm = |r: f64| -> (f64, f64) {
            let x = (r - r1) / h;
            let (a, b) = hermite_slopes(x);
            (h * (g1 * a[0] + g2 * b[0]), g1 * a[1] + g2 * b[1])
        };
        let nq = self.rq.len();
        let mut rhs = DVector::<f64>::zeros(2 * nq);
        for q in 0..nq {
            let r = self.rq[q];
            let w = self.wq[q].sqrt() * r;
            let (a, da) = herm(r);
            rhs[2 * q] = -w * a;
            rhs[2 * q + 1] = -w * (r * da + 2.0 * a - r * g(r)) / self.ll.sqrt();
        }
        let p = &self.pinv * rhs;
        nodes
            .iter()
            .map(|&r| {
                let (mut a, mut da) = herm(r);
                for (j, [b, db]) in self.bubble(r).into_iter().enumerate() {
                    a += p[j] * b;
                    da += p[j] * db;
                }
                (a, da)
            })
            .unzip()
    }
}

/// Solves `div w = g` on the annulus grid `shell` with `w = 0` on both
/// boundary spheres, minimizing `||w||_{L^2}` over radial profiles
/// `A = Hermite(g) + (r - r1)^2 (r2 - r)^2 p(r)`, `B = (r A' + 2A - r g) / L`,
/// `C = 0` per harmonic. `g` is given at the shell nodes.
pub fn bogovskii_solve(shell: &Arc<BallGrid>, g: &[f64]) -> Result<VectorField> {
    bogovskii_solve_with(shell, g, BOGOVSKII_DEGREE)
}

pub fn bogovskii_solve_with(shell: &Arc<BallGrid>, g: &[f64], degree: usize) -> Result<VectorField> {
    if g.len() != shell.len() {
        return Err(LabError::Parameter("divergence data does not match the annulus grid".into()));
    }
    let r1 = shell.inner_radius();
    let r2 = shell.radius();
    if !(r1 > 0.0) {
        return Err(LabError::Parameter("bogovskii_solve needs an annulus grid".into()));
    }
    let coeffs = shell.scalar_analyze(g);
    let nc = coeff_len(shell.l_max());
    let nr = shell.n_radial();
    let radii = shell.radii().to_vec();
    let profile = |k: usize| -> Vec<f64> { (0..nr).map(|ir| coeffs[ir * nc + k]).collect() };
    let interp = |vals: &[f64], r: f64| -> f64 {
        shell.radial_row(r).iter().zip(vals).map(|(w, v)| w * v).sum()
    };
    // Compatibility: int_annulus g = sqrt(4 pi) int g_00 r^2 dr.
    let g00 = profile(0);
    let mean: f64 = shell
        .radial_weights()
        .iter()
        .zip(&g00)
        .map(|(w, v)| w * v)
        .sum::<f64>()
        * (4.0 * std::f64::consts::PI).sqrt();
    let scale: f64 = shell
        .radial_weights()
        .iter()
        .enumerate()
        .map(|(ir, w)| w * (0..nc).map(|k| coeffs[ir * nc + k].abs()).sum::<f64>())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if mean.abs() > 1e-8 * scale.max(1.0) {
        return Err(LabError::Compatibility(format!(
            "divergence data has nonzero integral {mean:e}"
        )));
    }
    let nq = nr + degree + 8;
    let mut v = Vsh::zeros(shell.l_max(), nr);
    // l = 0: A = r^-2 int_{r1}^r s^2 g.
    {
        let (xg, wg) = gauss_legendre(nr + 4);
        for (ir, &r) in radii.iter().enumerate() {
            let half = 0.5 * (r - r1);
            let acc: f64 = xg
                .iter()
                .zip(&wg)
                .map(|(x, w)| {
                    let s = r1 + half * (x + 1.0);
                    w * half * s * s * interp(&g00, s)
                })
                .sum();
            v.a[ir * nc] = acc / (r * r);
        }
    }
    let solvers = (1..=shell.l_max())
        .into_par_iter()
        .map(|l| AnnulusSolver::new(r1, r2, l, degree, nq))
        .collect::<Result<Vec<_>>>()?;
    let per_lm: Vec<(usize, Vec<f64>, Vec<f64>)> = (1..=shell.l_max())
        .into_par_iter()
        .flat_map_iter(|l| {
            let solver = &solvers[l - 1];
            let radii = &radii;
            let profile = &profile;
            let interp = &interp;
            (-(l as i64)..=(l as i64)).map(move |m| {
                let k = lm_index(l, m);
                let gk = profile(k);
                let (a, da) = solver.solve(|r| interp(&gk, r), radii);
                let b: Vec<f64> = (0..nr)
                    .map(|ir| (radii[ir] * da[ir] + 2.0 * a[ir] - radii[ir] * gk[ir]) / solver.ll)
                    .collect();
                (k, a, b)
            })
        })
        .collect();
    for (k, a, b) in per_lm {
        for ir in 0..nr {
            v.a[ir * nc + k] = a[ir];
            v.b[ir * nc + k] = b[ir];
        }
    }
    VectorField::new(Grid::Ball(shell.clone()), shell.vsh_synthesize(&v))
}

/// Largest `|w|` on the two boundary spheres of an annulus field.
pub fn annulus_wall_trace(w: &VectorField) -> Result<f64> {
    let g = w.grid.ball()?;
    let mut worst = 0.0_f64;
    for r in [g.inner_radius(), g.radius()] {
        let t = g.trace(&w.values, 3, r)?;
        worst = t.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

/// Largest `|div b|` relative to `max |b|`.
pub fn relative_divergence(b: &VectorField) -> f64 {
    let d = crate::field::divergence(b);
    let dm = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let s = b.max_abs();
    if s > 0.0 {
        dm / s
    } else {
        dm
    }
}

/// Replaces the `B` coefficients of a ball field by the values that make each
/// harmonic exactly solenoidal, `B = (r A' + 2A) / L`. Returns the cleaned
/// field and the relative `L^2` size of the change.
pub fn solenoidal_clean(b: &VectorField) -> Result<(VectorField, f64)> {
    let g = b.grid.ball()?;
    let mut v = g.vsh_analyze(&b.values);
    let before = g.vsh_energy(&v);
    let nc = v.ncoef();
    let da = g.radial_derivative(&v.a, nc);
    let mut change = 0.0;
    let w = g.radial_weights();
    for (ir, &r) in g.radii().iter().enumerate() {
        let mut s = 0.0;
        for l in 1..=v.l_max {
            let ll = (l * (l + 1)) as f64;
            for k in l * l..(l + 1) * (l + 1) {
                let i = ir * nc + k;
                let nb = (r * da[i] + 2.0 * v.a[i]) / ll;
                s += ll * (nb - v.b[i]).powi(2);
                v.b[i] = nb;
            }
        }
        // The l = 0 radial part must vanish for a solenoidal field.
        s += v.a[ir * nc].powi(2);
        v.a[ir * nc] = 0.0;
        change += w[ir] * s;
    }
    let rel = if before > 0.0 { (change / before).sqrt() } else { 0.0 };
    Ok((VectorField::new(b.grid.clone(), g.vsh_synthesize(&v))?, rel))
}

/// `E(b)` stored on `B_{inner}` and on the cutoff annulus; zero beyond.
#[derive(Debug, Clone)]
pub struct ExtendedField {
    pub cutoff: CutoffSpec,
    /// `b` on a ball grid of radius `cutoff.inner`.
    pub inner: VectorField,
    /// `phi b + w` on the annulus grid.
    pub annulus: VectorField,
    /// The correction `w`.
    pub correction: VectorField,
    /// `||E(b)||_{L^4}` and `||b||_{L^4(B_1)}`.
    pub l4_norm: f64,
    pub source_l4_norm: f64,
}

impl ExtendedField {
    /// `||E(b)||_4 / ||b||_4`.
    pub fn ratio(&self) -> f64 {
        if self.source_l4_norm > 0.0 {
            self.l4_norm / self.source_l4_norm
        } else {
            0.0
        }
    }

    pub fn support_radius(&self) -> f64 {
        self.cutoff.outer
    }

    /// Quadrature nodes, weights and values covering the support.
    fn samples(&self) -> Result<(Vec<[f64; 3]>, Vec<f64>, Vec<f64>)> {
        let mut pts = Vec::new();
        let mut wts = Vec::new();
        let mut vals = Vec::new();
        for f in [&self.inner, &self.annulus] {
            let g = f.grid.ball()?;
            for i in 0..g.len() {
                pts.push(g.position(i));
                wts.push(g.weight(i));
            }
            vals.extend_from_slice(&f.values);
        }
        Ok((pts, wts, vals))
    }

    /// Values at the nodes of a ball grid sharing the angular nodes: the
    /// inner piece on `r <= inner`, the annulus piece up to `outer`, zero
    /// beyond.
    pub fn evaluate_on(&self, grid: &BallGrid) -> Result<Vec<f64>> {
        let gi = self.inner.grid.ball()?;
        let ga = self.annulus.grid.ball()?;
        if !grid.same_angular_nodes(gi) {
            return Err(LabError::Parameter("evaluation grid has different angular nodes".into()));
        }
        let na = grid.n_angular();
        let mut out = Vec::with_capacity(3 * grid.len());
        for &r in grid.radii() {
            if r <= self.cutoff.inner {
                out.extend(gi.trace(&self.inner.values, 3, r)?);
            } else if r < self.cutoff.outer {
                out.extend(ga.trace(&self.annulus.values, 3, r)?);
            } else {
                out.extend(std::iter::repeat_n(0.0, 3 * na));
            }
        }
        Ok(out)
    }
}

fn l4(grid: &BallGrid, values: &[f64]) -> f64 {
    let q: Vec<f64> = values
        .chunks(3)
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powi(2))
        .collect();
    grid.integrate(&q)
}

/// Builds `E(b) = phi b + w` for solenoidal `b` on a ball grid covering the
/// cutoff support.
pub fn extend_divfree(b: &VectorField, cutoff: &CutoffSpec) -> Result<ExtendedField> {
    cutoff.validate()?;
    let g = b.grid.ball()?;
    if g.radius() < cutoff.outer || g.inner_radius() > 0.0 {
        return Err(LabError::Parameter("b must live on a full ball covering the cutoff".into()));
    }
    let div = relative_divergence(b);
    if div > 1e-8 {
        return Err(LabError::Precondition(format!(
            "b is not solenoidal: max |div b| / max |b| = {div:e}"
        )));
    }
    let inner_grid = Arc::new(g.with_radius(cutoff.inner));
    let inner = VectorField::new(Grid::Ball(inner_grid.clone()), g.resample(&b.values, 3, &inner_grid)?)?;
    let shell = Arc::new(g.shell(g.n_radial() + 8, cutoff.inner, cutoff.outer));
    let bs = g.resample(&b.values, 3, &shell)?;
    let na = shell.n_angular();
    let sphere = shell.sphere().clone();
    let mut gdiv = vec![0.0; shell.len()];
    let mut phib = vec![0.0; 3 * shell.len()];
    for (ir, &r) in shell.radii().iter().enumerate() {
        let (p, dp) = (cutoff.phi(r), cutoff.dphi(r));
        for a in 0..na {
            let i = ir * na + a;
            let n = sphere.normal(a);
            let v = &bs[3 * i..3 * i + 3];
            gdiv[i] = -dp * (v[0] * n[0] + v[1] * n[1] + v[2] * n[2]);
            for c in 0..3 {
                phib[3 * i + c] = p * v[c];
            }
        }
    }
    let w = bogovskii_solve(&shell, &gdiv)?;
    let annulus_vals: Vec<f64> = phib.iter().zip(&w.values).map(|(a, b)| a + b).collect();
    let annulus = VectorField::new(Grid::Ball(shell.clone()), annulus_vals)?;
    let l4_norm = (l4(&inner_grid, &inner.values) + l4(&shell, &annulus.values)).powf(0.25);
    let source_l4_norm = l4(g, &b.values).powf(0.25);
    Ok(ExtendedField {
        cutoff: *cutoff,
        inner,
        annulus,
        correction: w,
        l4_norm,
        source_l4_norm,
    })
}

/// Solenoidal heat evolution of a band-limited periodic field, grouped by
/// `|k|^2`: `H(x, t) = sum_s e^{-s (t - t0)} h_s(x)`.
#[derive(Debug, Clone)]
pub struct HeatLift {
    pub t0: f64,
    pub time_nodes: Vec<f64>,
    /// Wavenumber cutoff `|k| <= band`.
    pub band: f64,
    modes: Vec<[i64; 3]>,
    /// Projected coefficients, three per mode.
    coeffs: Vec<[Complex64; 3]>,
    /// `||E(b)||_{L^4}` of the source, when built from an extension.
    pub source_l4_norm: f64,
}

/// Wavevectors with `|k| <= band`.
pub fn band_modes(band: f64) -> Vec<[i64; 3]> {
    let kmax = band.floor() as i64;
    let mut out = Vec::new();
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            for c in -kmax..=kmax {
                if ((a * a + b * b + c * c) as f64) <= band * band + 1e-9 {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

fn leray(k: [i64; 3], v: [Complex64; 3]) -> [Complex64; 3] {
    let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
    if k2 == 0.0 {
        return v;
    }
    let kd = v[0] * k[0] as f64 + v[1] * k[1] as f64 + v[2] * k[2] as f64;
    [
        v[0] - kd * (k[0] as f64 / k2),
        v[1] - kd * (k[1] as f64 / k2),
        v[2] - kd * (k[2] as f64 / k2),
    ]
}

/// `e^{-i k_d x_d}` tables for `k_d in [-kmax, kmax]`.
fn exp_tables(x: f64, kmax: i64) -> Vec<Complex64> {
    (-kmax..=kmax).map(|k| Complex64::from_polar(1.0, -(k as f64) * x)).collect()
}

/// Periodic Fourier coefficients on `[-pi, pi)^3` of a compactly supported
/// field given by quadrature samples.
pub fn fourier_coefficients(
    points: &[[f64; 3]],
    weights: &[f64],
    values: &[f64],
    modes: &[[i64; 3]],
) -> Vec<[Complex64; 3]> {
    let kmax = modes.iter().flat_map(|k| k.iter()).map(|v| v.abs()).max().unwrap_or(0);
    let tables: Vec<[Vec<Complex64>; 3]> = points
        .par_iter()
        .map(|p| [exp_tables(p[0], kmax), exp_tables(p[1], kmax), exp_tables(p[2], kmax)])
        .collect();
    let norm = (2.0 * std::f64::consts::PI).powi(-3);
    modes
        .par_iter()
        .map(|k| {
            let (i0, i1, i2) = ((k[0] + kmax) as usize, (k[1] + kmax) as usize, (k[2] + kmax) as usize);
            let mut acc = [Complex64::new(0.0, 0.0); 3];
            for (n, t) in tables.iter().enumerate() {
                let e = t[0][i0] * t[1][i1] * t[2][i2] * (weights[n] * norm);
                for c in 0..3 {
                    acc[c] += e * values[3 * n + c];
                }
            }
            acc
        })
        .collect()
}

impl HeatLift {
    /// Heat lift of arbitrary periodic coefficients (projected here).
    pub fn from_coefficients(
        modes: Vec<[i64; 3]>,
        coeffs: Vec<[Complex64; 3]>,
        t0: f64,
        time_nodes: Vec<f64>,
        band: f64,
    ) -> Result<Self> {
        if time_nodes.iter().any(|&t| t < t0 - 1e-12 * (1.0 + t0.abs())) {
            return Err(LabError::Domain("heat lift time before its start".into()));
        }
        if time_nodes.len() < 2 || time_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Parameter("need at least two increasing time nodes".into()));
        }
        let coeffs = modes.iter().zip(coeffs).map(|(k, v)| leray(*k, v)).collect();
        Ok(HeatLift {
            t0,
            time_nodes,
            band,
            modes,
            coeffs,
            source_l4_norm: 0.0,
        })
    }

    pub fn modes(&self) -> &[[i64; 3]] {
        &self.modes
    }

    /// Coefficients at time `t`.
    pub fn coefficients_at(&self, t: f64) -> Vec<[Complex64; 3]> {
        let tau = t - self.t0;
        self.modes
            .iter()
            .zip(&self.coeffs)
            .map(|(k, v)| {
                let d = (-((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64) * tau).exp();
                [v[0] * d, v[1] * d, v[2] * d]
            })
            .collect()
    }

    /// Per-shell fields `h_s` at the points, keyed by `s = |k|^2`.
    fn shell_fields(&self, points: &[[f64; 3]]) -> Vec<(f64, Vec<f64>)> {
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, k) in self.modes.iter().enumerate() {
            groups.entry(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).or_default().push(i);
        }
        let kmax = self.modes.iter().flat_map(|k| k.iter()).map(|v| v.abs()).max().unwrap_or(0);
        let groups: Vec<(i64, Vec<usize>)> = groups.into_iter().collect();
        groups
            .par_iter()
            .map(|(s, idx)| {
                let vals: Vec<f64> = points
                    .iter()
                    .flat_map(|p| {
                        let t = [exp_tables(p[0], kmax), exp_tables(p[1], kmax), exp_tables(p[2], kmax)];
                        let mut acc = [0.0; 3];
                        for &i in idx {
                            let k = self.modes[i];
                            // e^{+ik.x} = conj of the tabulated e^{-ik.x}.
                            let e = (t[0][(k[0] + kmax) as usize]
                                * t[1][(k[1] + kmax) as usize]
                                * t[2][(k[2] + kmax) as usize])
                                .conj();
                            for c in 0..3 {
                                acc[c] += (self.coeffs[i][c] * e).re;
                            }
                        }
                        acc
                    })
                    .collect();
                (*s as f64, vals)
            })
            .collect()
    }

    fn frames_at(&self, points: &[[f64; 3]]) -> Vec<Vec<f64>> {
        let shells = self.shell_fields(points);
        self.time_nodes
            .par_iter()
            .map(|&t| {
                let tau = t - self.t0;
                let mut out = vec![0.0; 3 * points.len()];
                for (s, h) in &shells {
                    let d = (-s * tau).exp();
                    for (o, v) in out.iter_mut().zip(h) {
                        *o += d * v;
                    }
                }
                out
            })
            .collect()
    }

    /// Frames at the nodes of a ball grid.
    pub fn evaluate(&self, grid: &Arc<BallGrid>) -> Result<SpaceTimeField> {
        let frames = self.frames_at(&grid.positions());
        SpaceTimeField::new(Grid::Ball(grid.clone()), self.time_nodes.clone(), frames)
    }

    /// Trace on the sphere of radius `r` with the given nodes.
    pub fn trace(&self, sphere: &Arc<SphereQuadrature>, r: f64) -> Result<SphereTrace> {
        let pts: Vec<[f64; 3]> = (0..sphere.len())
            .map(|a| {
                let n = sphere.normal(a);
                [r * n[0], r * n[1], r * n[2]]
            })
            .collect();
        SphereTrace::new(r, sphere.clone(), self.time_nodes.clone(), self.frames_at(&pts))
    }
}

/// Heat lift `Gamma(. - t0) * E(b)` truncated to `|k| <= band`.
pub fn heat_propagate(e: &ExtendedField, t0: f64, times: &[f64], band: f64) -> Result<HeatLift> {
    if !(band >= 0.0) {
        return Err(LabError::Parameter(format!("bad heat band {band}")));
    }
    if e.support_radius() > std::f64::consts::PI - 1.0 / 16.0 {
        return Err(LabError::Domain("extension support too close to the torus cell boundary".into()));
    }
    let modes = band_modes(band);
    let (pts, wts, vals) = e.samples()?;
    let coeffs = fourier_coefficients(&pts, &wts, &vals, &modes);
    let mut h = HeatLift::from_coefficients(modes, coeffs, t0, times.to_vec(), band)?;
    h.source_l4_norm = e.l4_norm;
    Ok(h)
}

/// Measured bounds of the heat lift on `B_{r0} x (t0, 0)`.
#[derive(Debug, Clone, Serialize)]
pub struct LiftBoundReport {
    pub r0: f64,
    pub t0: f64,
    /// `||H||_{L^4(dB_r0 x (t0, 0))} / ||E(b)||_4`.
    pub trace_ratio: f64,
    /// `||H||_{L^4(t0, 0; L^6(B_r0))} / ||E(b)||_4`.
    pub interior_ratio: f64,
    /// Largest `|int_{dB_r0} H . n|` over time nodes.
    pub max_flux: f64,
}

/// Trace of the heat lift on `dB_{r0}` and its measured bounds. `grid` is a
/// ball grid of radius `r0` supplying the sphere and interior nodes.
pub fn lift_trace_and_bounds(h: &HeatLift, grid: &Arc<BallGrid>) -> Result<(SphereTrace, LiftBoundReport)> {
    let r0 = grid.radius();
    let tr = h.trace(grid.sphere(), r0)?;
    // The flux check uses a sphere rule exact for the band of the lift.
    let fine = Arc::new(SphereQuadrature::with_product_margin((h.band * r0).ceil() as usize + 12));
    let check = h.trace(&fine, r0)?;
    let max_flux = (0..check.time_nodes.len()).map(|i| check.flux(i).abs()).fold(0.0, f64::max);
    let scale = check
        .frames
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_flux > 1e-8 * scale.max(1.0) * 4.0 * std::f64::consts::PI * r0 * r0 {
        return Err(LabError::Solenoidality(format!("heat lift flux {max_flux:e} through dB_r0")));
    }
    let g4: Vec<f64> = tr
        .frames
        .iter()
        .map(|f| {
            f.chunks(3)
                .enumerate()
                .map(|(a, v)| tr.weight(a) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powi(2))
                .sum()
        })
        .collect();
    let trace_l4 = trapezoid(&tr.time_nodes, &g4).max(0.0).powf(0.25);
    let interior = mixed_norm(&h.evaluate(grid)?, &NormSpec::critical(NormDomain::Full))?;
    let den = h.source_l4_norm;
    let ratio = |x: f64| if den > 0.0 { x / den } else { 0.0 };
    let report = LiftBoundReport {
        r0,
        t0: h.t0,
        trace_ratio: ratio(trace_l4),
        interior_ratio: ratio(interior),
        max_flux,
    };
    Ok((tr, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::random_solenoidal_ball;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cutoff_shape() {
        let c = CutoffSpec::default();
        assert_eq!(c.phi(0.5), 1.0);
        assert_eq!(c.phi(0.95), 0.0);
        assert!(c.max_gradient() <= 32.0);
        let mid = 0.5 * (c.inner + c.outer);
        assert!((c.dphi(mid).abs() - c.max_gradient()).abs() < 1e-12);
        let h = 1e-6;
        let fd = (c.phi(0.9 + h) - c.phi(0.9 - h)) / (2.0 * h);
        assert!((fd - c.dphi(0.9)).abs() < 1e-6);
    }

    #[test]
    fn bogovskii_zero_and_incompatible() {
        let g = Arc::new(BallGrid::new(4, 8, 1.0).unwrap().shell(10, 0.875, 0.9375));
        let w = bogovskii_solve(&g, &vec![0.0; g.len()]).unwrap();
        assert_eq!(w.max_abs(), 0.0);
        assert!(matches!(bogovskii_solve(&g, &vec![1.0; g.len()]), Err(LabError::Compatibility(_))));
    }

    #[test]
    fn bogovskii_solves_divergence_with_zero_walls() {
        let g = Arc::new(BallGrid::new(4, 8, 1.0).unwrap().shell(14, 0.875, 0.9375));
        let (r1, r2) = (0.875, 0.9375);
        let data: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.position(i);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let bump = ((r - r1) * (r2 - r)).powi(2) * 1e6;
                bump * (p[2] / r + 0.3 * p[0] * p[1] / (r * r))
            })
            .collect();
        let w = bogovskii_solve(&g, &data).unwrap();
        let div = g.divergence(&w.values);
        let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = div.iter().zip(&data).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9 * scale, "div err {err:e}");
        assert!(annulus_wall_trace(&w).unwrap() < 1e-10 * w.max_abs());
    }

    #[test]
    fn extension_is_solenoidal_and_agrees_inside() {
        let b1 = Arc::new(BallGrid::new(5, 12, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = VectorField::new(Grid::Ball(b1.clone()), random_solenoidal_ball(&b1, &mut rng, 5, 3)).unwrap();
        let e = extend_divfree(&b, &CutoffSpec::default()).unwrap();
        let ann = e.annulus.grid.ball().unwrap();
        let div = ann.divergence(&e.annulus.values);
        let dmax = div.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(dmax < 1e-8 * b.max_abs(), "{dmax:e}");
        let back = e.evaluate_on(&b1).unwrap();
        let na = b1.n_angular();
        for (ir, &r) in b1.radii().iter().enumerate() {
            if r <= 0.875 {
                for i in 3 * ir * na..3 * (ir + 1) * na {
                    assert!((back[i] - b.values[i]).abs() < 1e-10);
                }
            }
        }
        assert!(e.ratio() > 0.5 && e.ratio() < 1.5);
    }

    #[test]
    fn heat_lift_is_identity_at_start_and_decays() {
        let modes = vec![[1, 0, 0], [-1, 0, 0], [0, 2, 1], [0, -2, -1]];
        let c = Complex64::new(0.3, 0.1);
        let d = Complex64::new(0.2, -0.4);
        let coeffs = vec![
            [Complex64::new(0.0, 0.0), c, Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), c.conj(), Complex64::new(0.0, 0.0)],
            [d, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
            [d.conj(), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        ];
        let h = HeatLift::from_coefficients(modes, coeffs, -0.5, vec![-0.5, -0.25, 0.0], 3.0).unwrap();
        let g = Arc::new(BallGrid::new(4, 8, 0.7).unwrap());
        let u = h.evaluate(&g).unwrap();
        for (i, p) in g.positions().iter().enumerate() {
            for (ti, &t) in u.time_nodes.iter().enumerate() {
                let tau = t + 0.5;
                let e1 = (Complex64::new(0.0, p[0]).exp() * c).re * 2.0 * (-tau).exp();
                let e2 = (Complex64::new(0.0, 2.0 * p[1] + p[2]).exp() * d).re * 2.0 * (-5.0 * tau).exp();
                assert!((u.frames[ti][3 * i + 1] - e1).abs() < 1e-13);
                assert!((u.frames[ti][3 * i] - e2).abs() < 1e-13);
            }
        }
        assert!(HeatLift::from_coefficients(vec![], vec![], 0.0, vec![-0.1, 0.0], 1.0).is_err());
    }
}
