//! Stokes operator on a ball: eigenbasis, semigroup, very weak solutions for
//! boundary data, and the energy-equality check.
//!
//! Solenoidal fields split per harmonic degree `l >= 1` into toroidal parts
//! `C(r) r x grad_s Y` and poloidal parts `curl curl (x g(r) Y)`, i.e.
//! `A = L g / r`, `B = g / r + g'` with `L = l (l + 1)`. Each family gives a
//! one-dimensional generalized eigenproblem, discretized by Galerkin on
//!
//! * toroidal: `f_i = r^l (1 - rho^2) P_i(2 rho^2 - 1)`,
//! * poloidal: `g_i = r^l (1 - rho^2)^2 P_i(2 rho^2 - 1)`,
//!
//! with `rho = r / R`. The factors enforce the no-slip condition exactly, so
//! every eigenfield is solenoidal and vanishes on the sphere. Basis sizes are
//! capped so that the ball grid integrates products of eigenfields exactly,
//! which makes the discrete modes orthonormal under the grid quadrature.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::ball::{BallGrid, Vsh};
use crate::error::{LabError, Result};
use crate::extension::{
    extend_divfree, heat_propagate, lift_trace_and_bounds, solenoidal_clean, CutoffSpec, LiftBoundReport,
};
use crate::field::{Grid, SpaceTimeField, SphereTrace, TensorField, VectorField};
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::quadrature::{gauss_legendre_on, integrate_modal};
use crate::slicing::{b_l4_norm, trace_l4_norm};
use crate::sphere::{coeff_len, lm_index};

/// Polynomial order of the source interpolation in the modal integrator.
pub const TIME_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Toroidal,
    Poloidal,
}

/// Legendre `P_n, P_n', P_n''` at `s` for `n < count`.
fn legendre_d2(count: usize, s: f64) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; count];
    if count == 0 {
        return out;
    }
    out[0] = [1.0, 0.0, 0.0];
    if count > 1 {
        out[1] = [s, 1.0, 0.0];
    }
    for n in 1..count.saturating_sub(1) {
        let nf = n as f64;
        let (p, dp, ddp) = (out[n][0], out[n][1], out[n][2]);
        let (pm, dpm, ddpm) = (out[n - 1][0], out[n - 1][1], out[n - 1][2]);
        out[n + 1] = [
            ((2.0 * nf + 1.0) * s * p - nf * pm) / (nf + 1.0),
            ((2.0 * nf + 1.0) * (p + s * dp) - nf * dpm) / (nf + 1.0),
            ((2.0 * nf + 1.0) * (2.0 * dp + s * ddp) - nf * ddpm) / (nf + 1.0),
        ];
    }
    out
}

/// Radial Galerkin functions of one family and degree, with two derivatives.
#[derive(Debug, Clone, Copy)]
struct RadialBasis {
    family: Family,
    l: usize,
    radius: f64,
    size: usize,
}

impl RadialBasis {
    /// `[value, d/dr, d2/dr2]` of each basis function at `r > 0`.
    fn eval(&self, r: f64) -> Vec<[f64; 3]> {
        let big = self.radius;
        let s = 2.0 * (r / big).powi(2) - 1.0;
        let (ds, dds) = (4.0 * r / (big * big), 4.0 / (big * big));
        let u = 1.0 - (r / big).powi(2);
        let (du, ddu) = (-2.0 * r / (big * big), -2.0 / (big * big));
        let (w, dw, ddw) = match self.family {
            Family::Toroidal => (u, du, ddu),
            Family::Poloidal => (u * u, 2.0 * u * du, 2.0 * du * du + 2.0 * u * ddu),
        };
        let l = self.l as i32;
        let lf = self.l as f64;
        let rl = r.powi(l);
        let rl1 = lf * r.powi(l - 1);
        let rl2 = lf * (lf - 1.0) * r.powi(l - 2);
        legendre_d2(self.size, s)
            .into_iter()
            .map(|[p, dp, ddp]| {
                let q = w * p;
                let dq = dw * p + w * dp * ds;
                let ddq = ddw * p + 2.0 * dw * dp * ds + w * (ddp * ds * ds + dp * dds);
                [rl * q, rl1 * q + rl * dq, rl2 * q + 2.0 * rl1 * dq + rl * ddq]
            })
            .collect()
    }

    /// Vector-harmonic profiles `(A, B, C)` of `sum_i c_i phi_i` at `r`.
    fn profiles(&self, c: &[f64], r: f64) -> (f64, f64, f64) {
        let vals = self.eval(r);
        let mut g = [0.0; 3];
        for (ci, v) in c.iter().zip(&vals) {
            for d in 0..3 {
                g[d] += ci * v[d];
            }
        }
        let ll = (self.l * (self.l + 1)) as f64;
        match self.family {
            Family::Toroidal => (0.0, 0.0, g[0]),
            Family::Poloidal => (ll * g[0] / r, g[0] / r + g[1], 0.0),
        }
    }
}

/// Eigenpairs of one `(l, family)` block; shared by all `2l + 1` orders `m`.
#[derive(Debug, Clone)]
pub struct RadialBlock {
    pub l: usize,
    pub family: Family,
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors in the Galerkin basis, one per eigenvalue.
    pub vectors: Vec<Vec<f64>>,
    /// `(A, B, C)` of each eigenfield at the grid radii.
    pub profiles: Vec<[Vec<f64>; 3]>,
    /// Normal derivative at the wall: `f'(R)` (toroidal) or `g''(R)` (poloidal).
    pub wall_derivative: Vec<f64>,
    /// `<E, Phi_n>` for the unit steady lifts: tangential (poloidal or
    /// toroidal family) and normal gradient parts.
    pub lift_projection: Vec<f64>,
    pub normal_lift_projection: Vec<f64>,
    basis: RadialBasis,
}

impl RadialBlock {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `(A, B, C)` of eigenfield `n` at an arbitrary radius.
    pub fn profile_at(&self, n: usize, r: f64) -> (f64, f64, f64) {
        self.basis.profiles(&self.vectors[n], r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeInfo {
    pub l: usize,
    pub m: i64,
    pub family: Family,
    pub n: usize,
    pub eigenvalue: f64,
}

/// Discrete Stokes eigenbasis on a ball grid.
#[derive(Debug, Clone)]
pub struct StokesEigenbasis {
    grid: Arc<BallGrid>,
    blocks: Vec<RadialBlock>,
    /// First mode index of each block; modes run over `m`, then `n`.
    offsets: Vec<usize>,
    modes: Vec<ModeInfo>,
}

/// Largest Galerkin size the grid integrates exactly for this block.
pub fn max_basis_size(n_radial: usize, l: usize, family: Family) -> usize {
    let slack = match family {
        Family::Toroidal => 3,
        Family::Poloidal => 5,
    };
    (2 * n_radial).saturating_sub(slack + 2 * l) / 4
}

fn solve_block(grid: &BallGrid, l: usize, family: Family, size: usize) -> Result<RadialBlock> {
    let big = grid.radius();
    let basis = RadialBasis {
        family,
        l,
        radius: big,
        size,
    };
    let ll = (l * (l + 1)) as f64;
    let nq = l + 2 * size + 10;
    let (rq, wq) = gauss_legendre_on(nq, 0.0, big);
    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut k = DMatrix::<f64>::zeros(size, size);
    // Unit steady lifts at degree l: tangential lift of this family and the
    // harmonic gradient carrying the normal component.
    let unit_lift = |r: f64| -> (f64, f64, f64) {
        let rho = r / big;
        match family {
            Family::Toroidal => (0.0, 0.0, rho.powi(l as i32)),
            Family::Poloidal => {
                let c2 = 1.0 / (2.0 * big.powi(l as i32 + 1));
                let g = c2 * (r.powi(l as i32 + 2) - big * big * r.powi(l as i32));
                let dg = c2 * ((l + 2) as f64 * r.powi(l as i32 + 1) - big * big * l as f64 * r.powi(l as i32 - 1));
                (ll * g / r, g / r + dg, 0.0)
            }
        }
    };
    let normal_lift = |r: f64| -> (f64, f64) {
        let p = (r / big).powi(l as i32 - 1);
        (p, p / l as f64)
    };
    let mut lift_rows = vec![0.0; size];
    let mut normal_rows = vec![0.0; size];
    for (&r, &w) in rq.iter().zip(&wq) {
        let v = basis.eval(r);
        let (la, lb, lc) = unit_lift(r);
        let (na, nb) = normal_lift(r);
        for i in 0..size {
            let (fi, dfi, ddfi) = (v[i][0], v[i][1], v[i][2]);
            match family {
                Family::Toroidal => {
                    lift_rows[i] += w * ll * lc * fi * r * r;
                }
                Family::Poloidal => {
                    let (ai, bi) = (ll * fi / r, fi / r + dfi);
                    lift_rows[i] += w * (la * ai + ll * lb * bi) * r * r;
                    normal_rows[i] += w * (na * ai + ll * nb * bi) * r * r;
                }
            }
            for j in 0..size {
                let (fj, dfj, ddfj) = (v[j][0], v[j][1], v[j][2]);
                match family {
                    Family::Toroidal => {
                        m[(i, j)] += w * ll * fi * fj * r * r;
                        k[(i, j)] += w * ll * (r * r * dfi * dfj + ll * fi * fj);
                    }
                    Family::Poloidal => {
                        m[(i, j)] += w * ll * (dfi * dfj * r * r + ll * fi * fj);
                        let lap_i = ddfi + 2.0 * dfi / r - ll * fi / (r * r);
                        let lap_j = ddfj + 2.0 * dfj / r - ll * fj / (r * r);
                        k[(i, j)] += w * ll * lap_i * lap_j * r * r;
                    }
                }
            }
        }
    }
    let chol = m.clone().cholesky().ok_or_else(|| {
        LabError::Conditioning(format!("mass matrix not positive definite at l = {l}"))
    })?;
    let lo = chol.l();
    let lo_inv = lo
        .clone()
        .try_inverse()
        .ok_or_else(|| LabError::Conditioning(format!("singular Cholesky factor at l = {l}")))?;
    let c = &lo_inv * &k * lo_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut eigenvalues = Vec::with_capacity(size);
    let mut vectors = Vec::with_capacity(size);
    for &i in &order {
        let lam = eig.eigenvalues[i];
        if !(lam > 0.0) {
            return Err(LabError::Resolution(format!(
                "nonpositive Stokes eigenvalue {lam:e} at l = {l} ({family:?})"
            )));
        }
        let y = eig.eigenvectors.column(i).into_owned();
        let v = lo_inv.transpose() * y;
        // Fix the sign so profiles start positive near the origin.
        let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        eigenvalues.push(lam);
        vectors.push(v.iter().map(|x| sign * x).collect::<Vec<f64>>());
    }
    let profiles = vectors
        .iter()
        .map(|v| {
            let mut p = [vec![0.0; grid.n_radial()], vec![0.0; grid.n_radial()], vec![0.0; grid.n_radial()]];
            for (ir, &r) in grid.radii().iter().enumerate() {
                let (a, b, c) = basis.profiles(v, r);
                p[0][ir] = a;
                p[1][ir] = b;
                p[2][ir] = c;
            }
            p
        })
        .collect();
    let wall = basis.eval(big);
    let wall_derivative = vectors
        .iter()
        .map(|v| {
            let d = match family {
                Family::Toroidal => 1,
                Family::Poloidal => 2,
            };
            v.iter().zip(&wall).map(|(c, e)| c * e[d]).sum()
        })
        .collect();
    let project = |rows: &[f64]| -> Vec<f64> {
        vectors
            .iter()
            .map(|v| v.iter().zip(rows).map(|(a, b)| a * b).sum())
            .collect()
    };
    let lift_projection = project(&lift_rows);
    let normal_lift_projection = project(&normal_rows);
    Ok(RadialBlock {
        l,
        family,
        eigenvalues,
        vectors,
        profiles,
        wall_derivative,
        lift_projection,
        normal_lift_projection,
        basis,
    })
}

/// Builds the eigenbasis with the largest exactly-integrated Galerkin size
/// for every block.
pub fn eigen_decompose(grid: &Arc<BallGrid>) -> Result<StokesEigenbasis> {
    eigen_decompose_sized(grid, usize::MAX)
}

/// As [`eigen_decompose`], with at most `cap` radial modes per block.
pub fn eigen_decompose_sized(grid: &Arc<BallGrid>, cap: usize) -> Result<StokesEigenbasis> {
    let mut jobs = Vec::new();
    for l in 1..=grid.l_max() {
        for family in [Family::Toroidal, Family::Poloidal] {
            let size = max_basis_size(grid.n_radial(), l, family).min(cap);
            if size == 0 {
                return Err(LabError::Resolution(format!(
                    "n_radial = {} too small for degree {l}",
                    grid.n_radial()
                )));
            }
            jobs.push((l, family, size));
        }
    }
    let blocks = jobs
        .par_iter()
        .map(|&(l, family, size)| solve_block(grid, l, family, size))
        .collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut modes = Vec::new();
    for b in &blocks {
        offsets.push(modes.len());
        for m in -(b.l as i64)..=(b.l as i64) {
            for (n, &lam) in b.eigenvalues.iter().enumerate() {
                modes.push(ModeInfo {
                    l: b.l,
                    m,
                    family: b.family,
                    n,
                    eigenvalue: lam,
                });
            }
        }
    }
    Ok(StokesEigenbasis {
        grid: grid.clone(),
        blocks,
        offsets,
        modes,
    })
}

impl StokesEigenbasis {
    pub fn grid(&self) -> &Arc<BallGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[ModeInfo] {
        &self.modes
    }

    pub fn blocks(&self) -> &[RadialBlock] {
        &self.blocks
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.modes.iter().map(|m| m.eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.modes.iter().map(|m| m.eigenvalue).fold(0.0, f64::max)
    }

    /// Index of mode `(block, m, n)`.
    pub fn index(&self, block: usize, m: i64, n: usize) -> usize {
        let b = &self.blocks[block];
        self.offsets[block] + (m + b.l as i64) as usize * b.len() + n
    }

    /// Block index of `(l, family)`.
    pub fn block_of(&self, l: usize, family: Family) -> usize {
        2 * (l - 1)
            + match family {
                Family::Toroidal => 0,
                Family::Poloidal => 1,
            }
    }

    /// `<u, Phi_k>` from vector-harmonic coefficients.
    pub fn project_vsh(&self, v: &Vsh) -> Vec<f64> {
        let nc = v.ncoef();
        let w = self.grid.radial_weights();
        let mut out = vec![0.0; self.len()];
        for (bi, b) in self.blocks.iter().enumerate() {
            let ll = (b.l * (b.l + 1)) as f64;
            for m in -(b.l as i64)..=(b.l as i64) {
                let k = lm_index(b.l, m);
                for n in 0..b.len() {
                    let p = &b.profiles[n];
                    let mut s = 0.0;
                    for ir in 0..self.grid.n_radial() {
                        let i = ir * nc + k;
                        s += w[ir]
                            * (v.a[i] * p[0][ir] + ll * (v.b[i] * p[1][ir] + v.c[i] * p[2][ir]));
                    }
                    out[self.index(bi, m, n)] = s;
                }
            }
        }
        out
    }

    /// `<u, Phi_k>` for a nodal field on the basis grid.
    pub fn project(&self, field: &[f64]) -> Vec<f64> {
        self.project_vsh(&self.grid.vsh_analyze(field))
    }

    pub fn to_vsh(&self, coeffs: &[f64]) -> Vsh {
        let nr = self.grid.n_radial();
        let mut v = Vsh::zeros(self.grid.l_max(), nr);
        let nc = v.ncoef();
        for (bi, b) in self.blocks.iter().enumerate() {
            for m in -(b.l as i64)..=(b.l as i64) {
                let k = lm_index(b.l, m);
                for n in 0..b.len() {
                    let c = coeffs[self.index(bi, m, n)];
                    if c == 0.0 {
                        continue;
                    }
                    let p = &b.profiles[n];
                    for ir in 0..nr {
                        let i = ir * nc + k;
                        v.a[i] += c * p[0][ir];
                        v.b[i] += c * p[1][ir];
                        v.c[i] += c * p[2][ir];
                    }
                }
            }
        }
        v
    }

    /// `sum_k c_k Phi_k` at the grid nodes.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.grid.vsh_synthesize(&self.to_vsh(coeffs))
    }

    /// Nodal values of a single eigenfield.
    pub fn mode_field(&self, k: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.len()];
        c[k] = 1.0;
        self.synthesize(&c)
    }

    /// Largest deviation of the grid Gram matrix from the identity.
    pub fn gram_defect(&self) -> f64 {
        let w = self.grid.radial_weights();
        let mut worst = 0.0_f64;
        for b in &self.blocks {
            let ll = (b.l * (b.l + 1)) as f64;
            for i in 0..b.len() {
                for j in 0..b.len() {
                    let (p, q) = (&b.profiles[i], &b.profiles[j]);
                    let g: f64 = (0..self.grid.n_radial())
                        .map(|ir| w[ir] * (p[0][ir] * q[0][ir] + ll * (p[1][ir] * q[1][ir] + p[2][ir] * q[2][ir])))
                        .sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g - target).abs());
                }
            }
        }
        worst
    }

    /// Largest `|(A, B, C)|` of any eigenfield on the wall.
    pub fn wall_trace_max(&self) -> f64 {
        let big = self.grid.radius();
        let mut worst = 0.0_f64;
        for b in &self.blocks {
            for n in 0..b.len() {
                let (a, bb, c) = b.profile_at(n, big);
                worst = worst.max(a.abs()).max(bb.abs()).max(c.abs());
            }
        }
        worst
    }

    /// `||u - P u||_2 / ||u||_2` for the projection `P` onto the span.
    pub fn projection_residual(&self, field: &[f64]) -> f64 {
        let v = self.grid.vsh_analyze(field);
        let total = self.grid.vsh_energy(&v);
        if total == 0.0 {
            return 0.0;
        }
        let c = self.project_vsh(&v);
        let kept: f64 = c.iter().map(|x| x * x).sum();
        ((total - kept).max(0.0) / total).sqrt()
    }

    /// Fraction of `||u||^2` captured by the basis.
    pub fn retained_fraction(&self, field: &[f64]) -> f64 {
        let r = self.projection_residual(field);
        1.0 - r * r
    }

    fn check_field(&self, u: &VectorField) -> Result<()> {
        match &u.grid {
            Grid::Ball(g) if g.spec() == self.grid.spec() => Ok(()),
            _ => Err(LabError::Parameter("field is not on the eigenbasis grid".into())),
        }
    }

    /// `e^{-tA} b = sum_k e^{-lambda_k t} <b, Phi_k> Phi_k`.
    pub fn semigroup_apply(&self, b: &VectorField, t: f64) -> Result<VectorField> {
        self.check_field(b)?;
        if !(t >= 0.0) {
            return Err(LabError::Parameter(format!("semigroup time {t} must be >= 0")));
        }
        let c = self.project(&b.values);
        let c = self.semigroup_coeffs(&c, t);
        VectorField::new(b.grid.clone(), self.synthesize(&c))
    }

    pub fn semigroup_coeffs(&self, c: &[f64], t: f64) -> Vec<f64> {
        c.iter()
            .zip(&self.modes)
            .map(|(c, m)| c * (-m.eigenvalue * t).exp())
            .collect()
    }

    /// `int |grad u|^2 = sum lambda_k c_k^2` for `u` in the span.
    pub fn dirichlet_energy(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.modes).map(|(c, m)| m.eigenvalue * c * c).sum()
    }
}

/// Sup of `t^{1/8} ||e^{-tA} b||_6 / ||b||_4` over a bank of fields and times.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothingBank {
    pub times: Vec<f64>,
    /// Sup over `times` for each field.
    pub per_sample: Vec<f64>,
    pub sup: f64,
    /// Field index and time of the sup.
    pub argmax: (usize, f64),
}

fn l6_norm(grid: &BallGrid, values: &[f64]) -> f64 {
    let q: Vec<f64> = values.chunks(3).map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powi(3)).collect();
    grid.integrate(&q).max(0.0).powf(1.0 / 6.0)
}

/// `n` log-spaced times on `[lo, hi]`.
pub fn log_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n.max(2) - 1) as f64))
        .collect()
}

/// Seeded full-band solenoidal fields on the basis grid.
pub fn rough_fields(basis: &StokesEigenbasis, count: usize, seed: u64) -> Result<Vec<VectorField>> {
    use rand::SeedableRng;
    let g = basis.grid();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = crate::ball::random_solenoidal_ball(g, &mut rng, g.l_max(), g.n_radial() / 2);
            VectorField::new(Grid::Ball(g.clone()), f)
        })
        .collect()
}

pub fn smoothing_bank(basis: &StokesEigenbasis, fields: &[VectorField], times: &[f64]) -> Result<SmoothingBank> {
    if fields.is_empty() || times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
        return Err(LabError::Parameter("smoothing bank needs fields and positive times".into()));
    }
    let g = basis.grid();
    let rows = fields
        .par_iter()
        .map(|b| {
            basis.check_field(b)?;
            let den = b_l4_norm(b)?;
            if !(den > 0.0) {
                return Err(LabError::Sampling("zero field in the smoothing bank".into()));
            }
            let c = basis.project(&b.values);
            Ok(times
                .iter()
                .map(|&t| t.powf(0.125) * l6_norm(g, &basis.synthesize(&basis.semigroup_coeffs(&c, t))) / den)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut argmax = (0, times[0]);
    let mut sup = f64::NEG_INFINITY;
    for (i, r) in rows.iter().enumerate() {
        for (j, &q) in r.iter().enumerate() {
            if q > sup {
                sup = q;
                argmax = (i, times[j]);
            }
        }
    }
    Ok(SmoothingBank {
        times: times.to_vec(),
        per_sample: rows.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect(),
        sup,
        argmax,
    })
}

/// Boundary velocity on the wall of the basis ball, with zero net flux.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub a: SphereTrace,
    /// Largest flux removed by the correction (before correcting).
    pub flux_removed: f64,
}

impl BoundaryData {
    /// Subtracts the uniform normal field carrying each frame's net flux.
    pub fn new(a: SphereTrace) -> Result<Self> {
        let mut a = a;
        let area = 4.0 * std::f64::consts::PI * a.radius * a.radius;
        let mut removed = 0.0_f64;
        for i in 0..a.time_nodes.len() {
            let flux = a.flux(i);
            removed = removed.max(flux.abs());
            let un = flux / area;
            for node in 0..a.sphere.len() {
                let n = a.sphere.normal(node);
                for c in 0..3 {
                    a.frames[i][3 * node + c] -= un * n[c];
                }
            }
        }
        Ok(BoundaryData {
            a,
            flux_removed: removed,
        })
    }

    /// Takes the trace as is; the solver rejects it if the flux is not zero.
    pub fn uncorrected(a: SphereTrace) -> Self {
        BoundaryData { a, flux_removed: 0.0 }
    }

    pub fn zeros(radius: f64, sphere: Arc<crate::sphere::SphereQuadrature>, times: Vec<f64>) -> Self {
        BoundaryData {
            a: SphereTrace::zeros(radius, sphere, times),
            flux_removed: 0.0,
        }
    }

    pub fn max_flux(&self) -> f64 {
        (0..self.a.time_nodes.len())
            .map(|i| self.a.flux(i).abs())
            .fold(0.0, f64::max)
    }

    fn scale(&self) -> f64 {
        self.a
            .frames
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Per-time vector-harmonic coefficients `(a_A, a_B, a_C)` of boundary data.
fn boundary_vsh(basis: &StokesEigenbasis, a: &SphereTrace) -> Result<Vec<[Vec<f64>; 3]>> {
    let g = basis.grid();
    let s = g.sphere();
    if a.sphere.n_theta() != s.n_theta() || a.sphere.n_phi() != s.n_phi() {
        return Err(LabError::Parameter("boundary data uses different sphere nodes".into()));
    }
    if (a.radius - g.radius()).abs() > 1e-12 * g.radius() {
        return Err(LabError::Parameter(format!(
            "boundary data on radius {} but basis ball has radius {}",
            a.radius,
            g.radius()
        )));
    }
    let na = s.len();
    Ok(a.frames
        .par_iter()
        .map(|f| {
            let mut x = vec![0.0; na];
            let mut y = vec![0.0; na];
            let mut z = vec![0.0; na];
            for i in 0..na {
                x[i] = f[3 * i];
                y[i] = f[3 * i + 1];
                z[i] = f[3 * i + 2];
            }
            let (ur, ut, up) = s.to_spherical(&x, &y, &z);
            let (va, vb, vc) = s.analyze_vector_spherical(&ur, &ut, &up);
            [va, vb, vc]
        })
        .collect())
}

/// Steady Stokes extension of boundary coefficients into the ball, and its
/// projections `d_k = <E, Phi_k>`.
fn steady_lift(basis: &StokesEigenbasis, coef: &[Vec<f64>; 3]) -> (Vsh, Vec<f64>) {
    let g = basis.grid();
    let big = g.radius();
    let l_max = g.l_max();
    let nc = coeff_len(l_max);
    let mut v = Vsh::zeros(l_max, g.n_radial());
    let mut d = vec![0.0; basis.len()];
    for l in 1..=l_max {
        let lf = l as f64;
        let ll = lf * (lf + 1.0);
        for m in -(l as i64)..=(l as i64) {
            let k = lm_index(l, m);
            let (aa, ab, ac) = (coef[0][k], coef[1][k], coef[2][k]);
            let alpha = aa / (lf * big.powi(l as i32 - 1));
            let b_res = ab - aa / lf;
            let c2 = b_res / (2.0 * big.powi(l as i32 + 1));
            for (ir, &r) in g.radii().iter().enumerate() {
                let i = ir * nc + k;
                let pn = alpha * r.powi(l as i32 - 1);
                let gp = c2 * (r.powi(l as i32 + 2) - big * big * r.powi(l as i32));
                let dgp = c2 * ((lf + 2.0) * r.powi(l as i32 + 1) - big * big * lf * r.powi(l as i32 - 1));
                v.a[i] = lf * pn + ll * gp / r;
                v.b[i] = pn + gp / r + dgp;
                v.c[i] = ac * (r / big).powi(l as i32);
            }
            let bt = basis.block_of(l, Family::Toroidal);
            let bp = basis.block_of(l, Family::Poloidal);
            for n in 0..basis.blocks[bt].len() {
                d[basis.index(bt, m, n)] = ac * basis.blocks[bt].lift_projection[n];
            }
            let blk = &basis.blocks[bp];
            for n in 0..blk.len() {
                d[basis.index(bp, m, n)] =
                    b_res * blk.lift_projection[n] + aa * blk.normal_lift_projection[n];
            }
        }
    }
    (v, d)
}

/// Very weak solution `U = E + sum_k (c_k - d_k) Phi_k` on the basis ball.
#[derive(Debug, Clone)]
pub struct VeryWeakSolution {
    pub field: SpaceTimeField,
    /// `<U, Phi_k>` at each time node.
    pub coeffs: Vec<Vec<f64>>,
    /// `<E, Phi_k>` of the steady lift at each time node.
    pub lift_coeffs: Vec<Vec<f64>>,
}

/// Modal sources `<div F, Phi_k>` at each time node.
pub fn forcing_sources(basis: &StokesEigenbasis, f: &TensorField) -> Result<Vec<Vec<f64>>> {
    match &f.grid {
        Grid::Ball(g) if g.spec() == basis.grid().spec() => {}
        _ => return Err(LabError::Parameter("forcing is not on the eigenbasis grid".into())),
    }
    let g = basis.grid();
    Ok(f.frames
        .par_iter()
        .map(|t| basis.project(&g.tensor_divergence(t)))
        .collect())
}

/// Transposition solve of the Stokes system on `B_R x (t_0, t_end)` against
/// the eigenbasis. Each coefficient `c_k = <U, Phi_k>` obeys
/// `c_k' + lambda_k c_k = -int a . d_n Phi_k + int (a . n) pi_k + <div F, Phi_k>`;
/// the boundary terms equal `lambda_k d_k` for the steady Stokes lift `E` of
/// `a`, which is how they are evaluated.
pub fn veryweak_solve(
    basis: &StokesEigenbasis,
    time_nodes: &[f64],
    a: Option<&BoundaryData>,
    forcing: Option<&TensorField>,
    b0: Option<&VectorField>,
) -> Result<VeryWeakSolution> {
    let grid = Grid::Ball(basis.grid().clone());
    let nt = time_nodes.len();
    if nt < 2 || time_nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::Parameter("need at least two increasing time nodes".into()));
    }
    let nm = basis.len();
    let mut src = vec![vec![0.0; nt]; nm];
    let mut lift_fields: Vec<Option<Vsh>> = vec![None; nt];
    let mut lift_coeffs = vec![vec![0.0; nm]; nt];
    if let Some(bd) = a {
        if bd.a.time_nodes != time_nodes {
            return Err(LabError::Parameter("boundary data time nodes differ".into()));
        }
        let area = 4.0 * std::f64::consts::PI * bd.a.radius * bd.a.radius;
        let scale = bd.scale() + bd.flux_removed / area;
        if bd.max_flux() > 1e-8 * scale * area {
            return Err(LabError::Compatibility(format!(
                "boundary flux {:e} is not zero; apply the mean-flux correction",
                bd.max_flux()
            )));
        }
        let coefs = boundary_vsh(basis, &bd.a)?;
        let lifts: Vec<(Vsh, Vec<f64>)> = coefs.par_iter().map(|c| steady_lift(basis, c)).collect();
        for (ti, (v, d)) in lifts.into_iter().enumerate() {
            for (k, mode) in basis.modes.iter().enumerate() {
                src[k][ti] += mode.eigenvalue * d[k];
            }
            lift_coeffs[ti] = d;
            lift_fields[ti] = Some(v);
        }
    }
    if let Some(f) = forcing {
        if f.time_nodes != time_nodes {
            return Err(LabError::Parameter("forcing time nodes differ".into()));
        }
        let fs = forcing_sources(basis, f)?;
        for (ti, s) in fs.iter().enumerate() {
            for k in 0..nm {
                src[k][ti] += s[k];
            }
        }
    }
    let c0 = match b0 {
        Some(b) => {
            basis.check_field(b)?;
            basis.project(&b.values)
        }
        None => vec![0.0; nm],
    };
    let modal: Vec<Vec<f64>> = (0..nm)
        .into_par_iter()
        .map(|k| integrate_modal(basis.modes[k].eigenvalue, time_nodes, &src[k], c0[k], TIME_ORDER))
        .collect();
    let coeffs: Vec<Vec<f64>> = (0..nt).map(|ti| modal.iter().map(|c| c[ti]).collect()).collect();
    let g = basis.grid();
    let frames: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|ti| {
            let e: Vec<f64> = coeffs[ti].iter().zip(&lift_coeffs[ti]).map(|(c, d)| c - d).collect();
            let mut v = basis.to_vsh(&e);
            if let Some(l) = &lift_fields[ti] {
                for (x, y) in v.a.iter_mut().zip(&l.a) {
                    *x += y;
                }
                for (x, y) in v.b.iter_mut().zip(&l.b) {
                    *x += y;
                }
                for (x, y) in v.c.iter_mut().zip(&l.c) {
                    *x += y;
                }
            }
            g.vsh_synthesize(&v)
        })
        .collect();
    Ok(VeryWeakSolution {
        field: SpaceTimeField::new(grid, time_nodes.to_vec(), frames)?,
        coeffs,
        lift_coeffs,
    })
}

/// Per-time energy balance `||U(t)||^2 + 2 int |grad U|^2` against
/// `-2 int F : grad U`, both accumulated from `t_0`. Defects are relative to
/// the largest value either side reaches.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyDefectReport {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub defects: Vec<f64>,
    pub max_defect: f64,
}

/// Nodal energy check for a solution with zero boundary and initial data.
/// Space integrals use the ball quadrature with spectral gradients;
/// `-int F : grad U = int (div F) . U` since `U` vanishes on the wall. Time
/// integrals use piecewise cubic interpolation of the integrands.
pub fn energy_equality_check(u: &SpaceTimeField, forcing: &TensorField) -> Result<EnergyDefectReport> {
    let g = u.grid.ball()?.clone();
    if !forcing.grid.same_as(&u.grid) || forcing.time_nodes != u.time_nodes {
        return Err(LabError::Parameter("forcing and solution grids differ".into()));
    }
    let per: Vec<(f64, f64, f64)> = (0..u.n_times())
        .into_par_iter()
        .map(|i| {
            let f = &u.frames[i];
            let sq: Vec<f64> = f.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect();
            let e = g.integrate(&sq);
            let d = g.gradient_sq_integral(f);
            let divf = g.tensor_divergence(&forcing.frames[i]);
            let p: Vec<f64> = divf
                .chunks(3)
                .zip(f.chunks(3))
                .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
                .collect();
            (e, d, g.integrate(&p))
        })
        .collect();
    let t = &u.time_nodes;
    let diss = integrate_modal(0.0, t, &per.iter().map(|p| p.1).collect::<Vec<_>>(), 0.0, TIME_ORDER);
    let work = integrate_modal(0.0, t, &per.iter().map(|p| p.2).collect::<Vec<_>>(), 0.0, TIME_ORDER);
    let lhs: Vec<f64> = per.iter().zip(&diss).map(|(p, d)| p.0 + 2.0 * d).collect();
    let rhs: Vec<f64> = work.iter().map(|w| 2.0 * w).collect();
    // Normalized by the peak of either side over the run: near t_0 both
    // sides vanish to high order and a pointwise ratio carries no signal.
    let peak = lhs
        .iter()
        .chain(&rhs)
        .fold(f64::EPSILON, |m, v| m.max(v.abs()));
    let defects: Vec<f64> = lhs.iter().zip(&rhs).map(|(l, r)| (l - r).abs() / peak).collect();
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    Ok(EnergyDefectReport {
        times: t.clone(),
        lhs,
        rhs,
        defects,
        max_defect,
    })
}

/// Settings of the linear lift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub cutoff: CutoffSpec,
    /// Wavenumber band `|k| <= heat_band` of the heat lift.
    pub heat_band: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            cutoff: CutoffSpec::default(),
            heat_band: 4.0,
        }
    }
}

/// `Ubar = U_atilde + Gamma(. - t0) * E(b)` on `B_{r0} x (t0, 0)`.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub ubar: SpaceTimeField,
    /// Very weak part with boundary data `a - H` and the initial remainder.
    pub transposition: SpaceTimeField,
    /// Heat lift `H` evaluated on the ball grid.
    pub heat: SpaceTimeField,
    pub report: LinearLiftReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearLiftReport {
    pub r0: f64,
    pub t0: f64,
    pub a_l4: f64,
    pub b_l4: f64,
    /// `||Ubar||_{L^4(t0, 0; L^6(B_r0))}`.
    pub ubar_norm: f64,
    /// `ubar_norm / (a_l4 + b_l4)`, the sample for the lift constant.
    pub ratio: f64,
    /// Relative change made to `b` to enforce exact solenoidality.
    pub clean_correction: f64,
    pub extension_ratio: f64,
    /// `||b - H(t0)||_{L^2(B_r0)} / ||b||_{L^2(B_r0)}`, left to the very weak part.
    pub initial_remainder: f64,
    /// Flux removed from `a - H` before the very weak solve.
    pub flux_removed: f64,
    pub lift: LiftBoundReport,
    pub retained_fraction: f64,
}

fn l2(grid: &BallGrid, values: &[f64]) -> f64 {
    let q: Vec<f64> = values.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect();
    grid.integrate(&q).max(0.0).sqrt()
}

/// Builds the linear part from slice data: `a` on `dB_r0 x (t0, 0)` (on the
/// basis sphere) and `b` on a unit ball grid with the basis's angular nodes.
pub fn linear_lift(
    basis: &StokesEigenbasis,
    a: &SphereTrace,
    b: &VectorField,
    cfg: &LiftConfig,
) -> Result<LinearSolution> {
    let g = basis.grid().clone();
    let r0 = g.radius();
    if (a.radius - r0).abs() > 1e-12 * r0 {
        return Err(LabError::Parameter("boundary data radius differs from the basis radius".into()));
    }
    let t0 = a.time_nodes[0];
    let times = a.time_nodes.clone();
    let (clean, clean_correction) = solenoidal_clean(b)?;
    let ext = extend_divfree(&clean, &cfg.cutoff)?;
    let heat = heat_propagate(&ext, t0, &times, cfg.heat_band)?;
    let (h_trace, lift) = lift_trace_and_bounds(&heat, &g)?;
    if h_trace.sphere.n_theta() != a.sphere.n_theta() || h_trace.sphere.n_phi() != a.sphere.n_phi() {
        return Err(LabError::Parameter("boundary data sphere differs from the basis sphere".into()));
    }
    let mut rest = a.clone();
    for (f, h) in rest.frames.iter_mut().zip(&h_trace.frames) {
        for (x, y) in f.iter_mut().zip(h) {
            *x -= y;
        }
    }
    let atilde = BoundaryData::new(rest)?;
    let h_field = heat.evaluate(&g)?;
    let b_r0 = b.grid.ball()?.resample(&b.values, 3, &g)?;
    let b0_vals: Vec<f64> = b_r0.iter().zip(&h_field.frames[0]).map(|(x, y)| x - y).collect();
    let initial_remainder = {
        let den = l2(&g, &b_r0);
        if den > 0.0 {
            l2(&g, &b0_vals) / den
        } else {
            0.0
        }
    };
    let b0 = VectorField::new(Grid::Ball(g.clone()), b0_vals)?;
    let vw = veryweak_solve(basis, &times, Some(&atilde), None, Some(&b0))?;
    let ubar = vw.field.axpy(1.0, &h_field)?;
    let ubar_norm = mixed_norm(&ubar, &NormSpec::critical(NormDomain::Full))?;
    let a_l4 = trace_l4_norm(a);
    let b_l4 = b_l4_norm(b)?;
    let den = a_l4 + b_l4;
    let report = LinearLiftReport {
        r0,
        t0,
        a_l4,
        b_l4,
        ubar_norm,
        ratio: if den > 0.0 { ubar_norm / den } else { 0.0 },
        clean_correction,
        extension_ratio: ext.ratio(),
        initial_remainder,
        flux_removed: atilde.flux_removed,
        lift,
        retained_fraction: basis.retained_fraction(&b0.values),
    };
    Ok(LinearSolution {
        ubar,
        transposition: vw.field,
        heat: h_field,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::random_solenoidal_ball;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(l: usize, nr: usize) -> StokesEigenbasis {
        eigen_decompose(&Arc::new(BallGrid::new(l, nr, 1.0).unwrap())).unwrap()
    }

    /// Bisection root of `f` on `[a, b]`.
    fn root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    fn j1(x: f64) -> f64 {
        x.sin() / (x * x) - x.cos() / x
    }

    fn j2(x: f64) -> f64 {
        (3.0 / (x * x) - 1.0) * x.sin() / x - 3.0 * x.cos() / (x * x)
    }

    #[test]
    fn lowest_eigenvalues_match_bessel_zeros() {
        let b = basis(3, 16);
        let z1 = root(j1, 4.0, 5.0);
        let z2 = root(j2, 5.0, 6.5);
        let tor = &b.blocks()[b.block_of(1, Family::Toroidal)];
        let pol = &b.blocks()[b.block_of(1, Family::Poloidal)];
        assert!((tor.eigenvalues[0] - z1 * z1).abs() < 1e-9 * z1 * z1, "{}", tor.eigenvalues[0]);
        assert!((pol.eigenvalues[0] - z2 * z2).abs() < 1e-9 * z2 * z2, "{}", pol.eigenvalues[0]);
        assert!((b.smallest_eigenvalue() - z1 * z1).abs() < 1e-9 * z1 * z1);
    }

    #[test]
    fn eigenfields_are_orthonormal_solenoidal_and_vanish_on_the_wall() {
        let b = basis(4, 14);
        assert!(b.gram_defect() < 1e-10, "gram {}", b.gram_defect());
        assert!(b.wall_trace_max() < 1e-12);
        for k in [0, 7, b.len() / 2, b.len() - 1] {
            let f = b.mode_field(k);
            let scale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let div = b.grid().divergence(&f);
            let dmax = div.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(dmax < 1e-9 * scale * b.modes()[k].eigenvalue.sqrt(), "mode {k}: {dmax:e}");
        }
    }

    #[test]
    fn semigroup_composes_and_decays_eigenmodes() {
        let b = basis(3, 12);
        let g = Grid::Ball(b.grid().clone());
        let k = 5;
        let phi = VectorField::new(g.clone(), b.mode_field(k)).unwrap();
        let out = b.semigroup_apply(&phi, 0.01).unwrap();
        let lam = b.modes()[k].eigenvalue;
        for (x, y) in out.values.iter().zip(&phi.values) {
            assert!((x - (-lam * 0.01).exp() * y).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = VectorField::new(g, random_solenoidal_ball(b.grid(), &mut rng, 3, 3)).unwrap();
        let two = b.semigroup_apply(&b.semigroup_apply(&u, 0.003).unwrap(), 0.004).unwrap();
        let one = b.semigroup_apply(&u, 0.007).unwrap();
        for (x, y) in two.values.iter().zip(&one.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wall_terms_match_lift_projections() {
        // lambda_k <E, Phi_k> = -int a . d_n Phi_k for tangential unit data;
        // holds for Galerkin modes once the radial basis is rich.
        let b = eigen_decompose_sized(&Arc::new(BallGrid::new(3, 40, 1.0).unwrap()), 14).unwrap();
        for blk in b.blocks() {
            let ll = (blk.l * (blk.l + 1)) as f64;
            for n in 0..3 {
                let lhs = blk.eigenvalues[n] * blk.lift_projection[n];
                let rhs = -ll * blk.wall_derivative[n];
                assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0), "l {} n {n}: {lhs} vs {rhs}", blk.l);
                assert!(blk.normal_lift_projection[n].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_data_give_zero_solution_and_eigen_data_decay() {
        let b = basis(3, 12);
        let t: Vec<f64> = (0..21).map(|i| -0.5 + 0.025 * i as f64).collect();
        let s = veryweak_solve(&b, &t, None, None, None).unwrap();
        assert!(s.coeffs.iter().flatten().all(|c| *c == 0.0));
        let k = 3;
        let g = Grid::Ball(b.grid().clone());
        let phi = VectorField::new(g, b.mode_field(k)).unwrap();
        let s = veryweak_solve(&b, &t, None, None, Some(&phi)).unwrap();
        let lam = b.modes()[k].eigenvalue;
        for (i, &tt) in t.iter().enumerate() {
            let e = (-lam * (tt - t[0])).exp();
            assert!((s.coeffs[i][k] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_bank_is_finite_and_exact_on_an_eigenmode() {
        let b = basis(3, 12);
        let k = 0;
        let phi = VectorField::new(Grid::Ball(b.grid().clone()), b.mode_field(k)).unwrap();
        let t = log_times(1e-3, 1.0, 5);
        let bank = smoothing_bank(&b, std::slice::from_ref(&phi), &t).unwrap();
        let lam = b.modes()[k].eigenvalue;
        let ratio = l6_norm(b.grid(), &phi.values) / b_l4_norm(&phi).unwrap();
        let best = t.iter().map(|&s| s.powf(0.125) * (-lam * s).exp() * ratio).fold(0.0, f64::max);
        assert!((bank.sup - best).abs() < 1e-10 * best);
        let rough = rough_fields(&b, 4, 9).unwrap();
        let bank = smoothing_bank(&b, &rough, &t).unwrap();
        assert!(bank.sup.is_finite() && bank.sup > 0.0 && bank.per_sample.len() == 4);
    }

    #[test]
    fn nonzero_flux_is_rejected_until_corrected() {
        let b = basis(2, 8);
        let s = b.grid().sphere().clone();
        let t = vec![0.0, 0.1, 0.2];
        let frames: Vec<Vec<f64>> = t
            .iter()
            .map(|_| (0..s.len()).flat_map(|i| s.normal(i)).collect())
            .collect();
        let tr = SphereTrace::new(1.0, s, t.clone(), frames).unwrap();
        let raw = BoundaryData::uncorrected(tr.clone());
        assert!(matches!(veryweak_solve(&b, &t, Some(&raw), None, None), Err(LabError::Compatibility(_))));
        let fixed = BoundaryData::new(tr).unwrap();
        assert!(fixed.max_flux() < 1e-12);
        let sol = veryweak_solve(&b, &t, Some(&fixed), None, None).unwrap();
        assert!(sol.field.max_abs() < 1e-12);
    }
}
