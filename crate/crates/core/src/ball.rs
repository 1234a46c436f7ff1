//! Ball and spherical-shell grids: radial Gauss-Legendre nodes times a sphere
//! quadrature, with per-radius spherical-harmonic transforms.
//!
//! Node index is radial-major, `ir * n_angular + angular`. Vector fields are
//! node-major with three Cartesian components, tensors with nine (`T_ij` at
//! `9 node + 3 i + j`). Tensor divergence contracts the first index,
//! `(div T)_j = d_i T_ij`, so that `div(D (x) E) = (D . grad) E` for
//! solenoidal `D`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quadrature::{barycentric_weights, differentiation_matrix, gauss_legendre_on, interpolation_row};
use crate::sphere::{coeff_len, SphereQuadrature};

/// Serializable description of a ball grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallGridSpec {
    pub l_max: usize,
    pub n_radial: usize,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct BallGrid {
    l_max: usize,
    n_radial: usize,
    inner: f64,
    radius: f64,
    r: Vec<f64>,
    /// Radial weights including the `r^2` Jacobian.
    w_r: Vec<f64>,
    bary: Vec<f64>,
    diff: Vec<f64>,
    sphere: Arc<SphereQuadrature>,
    sphere_ext: Arc<SphereQuadrature>,
}

/// Per-radius vector spherical-harmonic coefficients, `[ir * ncoef + lm]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vsh {
    pub l_max: usize,
    pub n_radial: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Vsh {
    pub fn zeros(l_max: usize, n_radial: usize) -> Self {
        let n = coeff_len(l_max) * n_radial;
        Vsh {
            l_max,
            n_radial,
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
        }
    }

    #[inline]
    pub fn ncoef(&self) -> usize {
        coeff_len(self.l_max)
    }
}

impl BallGrid {
    pub fn new(l_max: usize, n_radial: usize, radius: f64) -> Result<Self> {
        if l_max < 1 {
            return Err(LabError::Parameter("ball grid needs l_max >= 1".into()));
        }
        if n_radial < 2 * l_max {
            return Err(LabError::Parameter(format!(
                "ball grid needs n_radial >= 2 l_max (got {n_radial} < {})",
                2 * l_max
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(LabError::Parameter(format!("invalid ball radius {radius}")));
        }
        let sphere = Arc::new(SphereQuadrature::with_product_margin(l_max));
        Ok(Self::build(sphere, n_radial, 0.0, radius))
    }

    pub fn from_spec(spec: &BallGridSpec) -> Result<Self> {
        Self::new(spec.l_max, spec.n_radial, spec.radius)
    }

    pub fn spec(&self) -> BallGridSpec {
        BallGridSpec {
            l_max: self.l_max,
            n_radial: self.n_radial,
            radius: self.radius,
        }
    }

    fn build(sphere: Arc<SphereQuadrature>, n_radial: usize, inner: f64, radius: f64) -> Self {
        let l_max = sphere.l_max();
        let sphere_ext = Arc::new(sphere.with_degree(l_max + 1));
        let (r, w) = gauss_legendre_on(n_radial, inner, radius);
        let w_r = r.iter().zip(&w).map(|(r, w)| w * r * r).collect();
        let bary = barycentric_weights(&r);
        let diff = differentiation_matrix(&r);
        BallGrid {
            l_max,
            n_radial,
            inner,
            radius,
            r,
            w_r,
            bary,
            diff,
            sphere,
            sphere_ext,
        }
    }

    /// Same angular nodes and radial count, another outer radius.
    pub fn with_radius(&self, radius: f64) -> Self {
        Self::build(self.sphere.clone(), self.n_radial, 0.0, radius)
    }

    /// Same angular nodes on the shell `inner < r < outer`.
    pub fn shell(&self, n_radial: usize, inner: f64, outer: f64) -> Self {
        Self::build(self.sphere.clone(), n_radial, inner, outer)
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }
    pub fn n_radial(&self) -> usize {
        self.n_radial
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn inner_radius(&self) -> f64 {
        self.inner
    }
    pub fn radii(&self) -> &[f64] {
        &self.r
    }
    pub fn radial_weights(&self) -> &[f64] {
        &self.w_r
    }
    pub fn sphere(&self) -> &Arc<SphereQuadrature> {
        &self.sphere
    }
    pub fn n_angular(&self) -> usize {
        self.sphere.len()
    }
    pub fn len(&self) -> usize {
        self.n_radial * self.sphere.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn ncoef(&self) -> usize {
        coeff_len(self.l_max)
    }

    pub fn same_angular_nodes(&self, other: &BallGrid) -> bool {
        self.sphere.n_theta() == other.sphere.n_theta() && self.sphere.n_phi() == other.sphere.n_phi()
    }

    #[inline]
    pub fn weight(&self, node: usize) -> f64 {
        let na = self.sphere.len();
        self.w_r[node / na] * self.sphere.weight(node % na)
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        let na = self.sphere.len();
        let r = self.r[node / na];
        let n = self.sphere.normal(node % na);
        [r * n[0], r * n[1], r * n[2]]
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len());
        values.iter().enumerate().map(|(i, v)| v * self.weight(i)).sum()
    }

    /// Volume of the region, from the quadrature.
    pub fn volume(&self) -> f64 {
        (0..self.len()).map(|i| self.weight(i)).sum()
    }

    fn shell_components(&self, field: &[f64], ir: usize) -> [Vec<f64>; 3] {
        let na = self.sphere.len();
        let mut out = [vec![0.0; na], vec![0.0; na], vec![0.0; na]];
        for a in 0..na {
            let base = 3 * (ir * na + a);
            for c in 0..3 {
                out[c][a] = field[base + c];
            }
        }
        out
    }

    fn analyze_with(&self, field: &[f64], sphere: &SphereQuadrature) -> Vsh {
        assert_eq!(field.len(), 3 * self.len());
        let nc = sphere.coeff_len();
        let per: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..self.n_radial)
            .into_par_iter()
            .map(|ir| {
                let [x, y, z] = self.shell_components(field, ir);
                let (ur, ut, up) = sphere.to_spherical(&x, &y, &z);
                sphere.analyze_vector_spherical(&ur, &ut, &up)
            })
            .collect();
        let mut out = Vsh::zeros(sphere.l_max(), self.n_radial);
        for (ir, (a, b, c)) in per.into_iter().enumerate() {
            out.a[ir * nc..(ir + 1) * nc].copy_from_slice(&a);
            out.b[ir * nc..(ir + 1) * nc].copy_from_slice(&b);
            out.c[ir * nc..(ir + 1) * nc].copy_from_slice(&c);
        }
        out
    }

    /// Vector spherical-harmonic coefficients of a nodal field on each shell.
    pub fn vsh_analyze(&self, field: &[f64]) -> Vsh {
        self.analyze_with(field, &self.sphere)
    }

    fn synthesize_with(&self, v: &Vsh, sphere: &SphereQuadrature) -> Vec<f64> {
        assert_eq!(v.l_max, sphere.l_max());
        let nc = v.ncoef();
        let na = sphere.len();
        let shells: Vec<Vec<f64>> = (0..self.n_radial)
            .into_par_iter()
            .map(|ir| {
                let s = ir * nc..(ir + 1) * nc;
                let (ur, ut, up) =
                    sphere.synthesize_vector_spherical(&v.a[s.clone()], &v.b[s.clone()], &v.c[s]);
                let (x, y, z) = sphere.to_cartesian(&ur, &ut, &up);
                let mut out = vec![0.0; 3 * na];
                for a in 0..na {
                    out[3 * a] = x[a];
                    out[3 * a + 1] = y[a];
                    out[3 * a + 2] = z[a];
                }
                out
            })
            .collect();
        shells.concat()
    }

    pub fn vsh_synthesize(&self, v: &Vsh) -> Vec<f64> {
        self.synthesize_with(v, &self.sphere)
    }

    /// Applies the radial differentiation matrix to per-radius coefficients.
    pub fn radial_derivative(&self, coeffs: &[f64], ncoef: usize) -> Vec<f64> {
        let n = self.n_radial;
        let mut out = vec![0.0; coeffs.len()];
        for i in 0..n {
            for j in 0..n {
                let d = self.diff[i * n + j];
                if d == 0.0 {
                    continue;
                }
                for k in 0..ncoef {
                    out[i * ncoef + k] += d * coeffs[j * ncoef + k];
                }
            }
        }
        out
    }

    /// Spherical-harmonic coefficients of `div u` on each shell.
    pub fn divergence_coeffs(&self, v: &Vsh) -> Vec<f64> {
        let nc = v.ncoef();
        // (r^2 A)' / r^2 written as A' + 2A/r to avoid dividing by r^2.
        let d = self.radial_derivative(&v.a, nc);
        let mut out = vec![0.0; nc * self.n_radial];
        for ir in 0..self.n_radial {
            let r = self.r[ir];
            for l in 0..=v.l_max {
                let ll = (l * (l + 1)) as f64;
                for k in l * l..(l + 1) * (l + 1) {
                    let i = ir * nc + k;
                    out[i] = d[i] + (2.0 * v.a[i] - ll * v.b[i]) / r;
                }
            }
        }
        out
    }

    fn synthesize_scalar_with(&self, coeffs: &[f64], sphere: &SphereQuadrature) -> Vec<f64> {
        let nc = sphere.coeff_len();
        let shells: Vec<Vec<f64>> = (0..self.n_radial)
            .into_par_iter()
            .map(|ir| sphere.synthesize_scalar(&coeffs[ir * nc..(ir + 1) * nc]))
            .collect();
        shells.concat()
    }

    fn analyze_scalar_with(&self, values: &[f64], sphere: &SphereQuadrature) -> Vec<f64> {
        let na = sphere.len();
        let shells: Vec<Vec<f64>> = (0..self.n_radial)
            .into_par_iter()
            .map(|ir| sphere.analyze_scalar(&values[ir * na..(ir + 1) * na]))
            .collect();
        shells.concat()
    }

    pub fn scalar_analyze(&self, values: &[f64]) -> Vec<f64> {
        self.analyze_scalar_with(values, &self.sphere)
    }

    pub fn scalar_synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_scalar_with(coeffs, &self.sphere)
    }

    /// Nodal divergence of a vector field (spectral in angle and radius).
    pub fn divergence(&self, field: &[f64]) -> Vec<f64> {
        let v = self.analyze_with(field, &self.sphere_ext);
        let d = self.divergence_coeffs(&v);
        self.synthesize_scalar_with(&d, &self.sphere_ext)
    }

    /// Nodal `div T` with `(div T)_j = d_i T_ij`.
    ///
    /// Each column is transformed one degree above `l_max` so that the
    /// Cartesian result carries every harmonic that a later projection onto
    /// degree `<= l_max` vector harmonics can see.
    pub fn tensor_divergence(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), 9 * self.len());
        let n = self.len();
        let mut out = vec![0.0; 3 * n];
        for j in 0..3 {
            let mut col = vec![0.0; 3 * n];
            for node in 0..n {
                for i in 0..3 {
                    col[3 * node + i] = t[9 * node + 3 * i + j];
                }
            }
            let div = self.divergence(&col);
            for node in 0..n {
                out[3 * node + j] = div[node];
            }
        }
        out
    }

    /// Nodal `div (D (x) E) = d_i (D_i E_j)`.
    pub fn product_divergence(&self, d: &[f64], e: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut t = vec![0.0; 9 * n];
        for node in 0..n {
            for i in 0..3 {
                for j in 0..3 {
                    t[9 * node + 3 * i + j] = d[3 * node + i] * e[3 * node + j];
                }
            }
        }
        self.tensor_divergence(&t)
    }

    /// `int |grad u|^2` over the region, from the Cartesian components.
    pub fn gradient_sq_integral(&self, field: &[f64]) -> f64 {
        let n = self.len();
        let nc = self.sphere_ext.coeff_len();
        let mut total = 0.0;
        for c in 0..3 {
            let comp: Vec<f64> = (0..n).map(|i| field[3 * i + c]).collect();
            let f = self.analyze_scalar_with(&comp, &self.sphere_ext);
            let df = self.radial_derivative(&f, nc);
            for ir in 0..self.n_radial {
                let r = self.r[ir];
                let mut shell = 0.0;
                for l in 0..=self.sphere_ext.l_max() {
                    let ll = (l * (l + 1)) as f64;
                    for k in l * l..(l + 1) * (l + 1) {
                        let i = ir * nc + k;
                        shell += df[i] * df[i] + ll * f[i] * f[i] / (r * r);
                    }
                }
                total += self.w_r[ir] * shell;
            }
        }
        total
    }

    /// Interpolation weights from this grid's radial nodes to radius `r`.
    pub fn radial_row(&self, r: f64) -> Vec<f64> {
        interpolation_row(&self.r, &self.bary, r)
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if !(r >= self.inner - 1e-12 && r <= self.radius * (1.0 + 1e-12)) {
            return Err(LabError::Domain(format!(
                "radius {r} outside grid range [{}, {}]",
                self.inner, self.radius
            )));
        }
        Ok(())
    }

    /// Values on the sphere of radius `r` (sphere-node major, `ncomp` per
    /// node) by polynomial interpolation along rays.
    pub fn trace(&self, values: &[f64], ncomp: usize, r: f64) -> Result<Vec<f64>> {
        self.check_radius(r)?;
        let row = self.radial_row(r);
        let na = self.sphere.len();
        let mut out = vec![0.0; na * ncomp];
        for (ir, w) in row.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let src = &values[ir * na * ncomp..(ir + 1) * na * ncomp];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
        Ok(out)
    }

    /// Values at the nodes of `target` (same angular nodes).
    pub fn resample(&self, values: &[f64], ncomp: usize, target: &BallGrid) -> Result<Vec<f64>> {
        if !self.same_angular_nodes(target) {
            return Err(LabError::Parameter("resampling needs matching angular nodes".into()));
        }
        self.check_radius(target.inner.max(target.r[0]))?;
        self.check_radius(*target.r.last().unwrap())?;
        let mut out = Vec::with_capacity(target.len() * ncomp);
        for &r in &target.r {
            out.extend(self.trace(values, ncomp, r)?);
        }
        Ok(out)
    }

    /// Nodal vector field from per-degree radial profiles
    /// `(l, m, r) -> (A, B, C)` in the vector-harmonic split.
    pub fn field_from_profiles<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, i64, f64) -> (f64, f64, f64),
    {
        let mut v = Vsh::zeros(self.l_max, self.n_radial);
        let nc = self.ncoef();
        for (ir, &r) in self.r.iter().enumerate() {
            for l in 0..=self.l_max {
                for m in -(l as i64)..=(l as i64) {
                    let k = crate::sphere::lm_index(l, m);
                    let (a, b, c) = f(l, m, r);
                    v.a[ir * nc + k] = a;
                    v.b[ir * nc + k] = if l == 0 { 0.0 } else { b };
                    v.c[ir * nc + k] = if l == 0 { 0.0 } else { c };
                }
            }
        }
        self.vsh_synthesize(&v)
    }

    /// `int |u|^2` from vector-harmonic coefficients.
    pub fn vsh_energy(&self, v: &Vsh) -> f64 {
        let nc = v.ncoef();
        let mut total = 0.0;
        for ir in 0..self.n_radial {
            let mut s = 0.0;
            for l in 0..=v.l_max {
                let ll = (l * (l + 1)) as f64;
                for k in l * l..(l + 1) * (l + 1) {
                    let i = ir * nc + k;
                    s += v.a[i] * v.a[i] + ll * (v.b[i] * v.b[i] + v.c[i] * v.c[i]);
                }
            }
            total += self.w_r[ir] * s;
        }
        total
    }
}

/// Random smooth solenoidal field on a ball grid: poloidal and toroidal parts
/// with radial profiles `r^l q(r^2)` for random polynomials `q` of degree
/// `< n_poly`, harmonic degrees `1..=l_band`. Seeded by the caller's RNG.
pub fn random_solenoidal_ball<R: rand::Rng + ?Sized>(
    grid: &BallGrid,
    rng: &mut R,
    l_band: usize,
    n_poly: usize,
) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let l_band = l_band.min(grid.l_max());
    let nc = coeff_len(grid.l_max());
    let mut pol = vec![vec![0.0; n_poly]; nc];
    let mut tor = vec![vec![0.0; n_poly]; nc];
    let big_r = grid.radius();
    for l in 1..=l_band {
        for m in -(l as i64)..=(l as i64) {
            let k = crate::sphere::lm_index(l, m);
            let decay = 1.0 / (l as f64);
            for i in 0..n_poly {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                pol[k][i] = a * decay;
                tor[k][i] = b * decay;
            }
        }
    }
    grid.field_from_profiles(|l, m, r| {
        if l == 0 || l > l_band {
            return (0.0, 0.0, 0.0);
        }
        let k = crate::sphere::lm_index(l, m);
        let rho = r / big_r;
        let ll = (l * (l + 1)) as f64;
        // g = rho^l q(rho^2), q = sum p_i rho^{2i}
        let (mut g, mut dg, mut f) = (0.0, 0.0, 0.0);
        for i in 0..n_poly {
            let e = (l + 2 * i) as i32;
            g += pol[k][i] * rho.powi(e);
            dg += pol[k][i] * e as f64 * rho.powi(e - 1) / big_r;
            f += tor[k][i] * rho.powi(e);
        }
        (ll * g / r, g / r + dg, f)
    })
}
