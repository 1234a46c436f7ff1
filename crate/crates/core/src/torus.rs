//! Fourier collocation on the periodic box `[-pi, pi)^3`.
//!
//! Nodes are `x_j = -pi + 2 pi j / n` with linear index `(i n + j) n + k`.
//! Coefficients follow `f(x) = sum_k f_k e^{i k.x}`, so the stored spectrum is
//! the DFT rescaled by `(-1)^{i1+i2+i3} / n^3`. Nyquist modes are always zero.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub n_per_axis: usize,
    pub dealias_fraction: f64,
}

impl TorusGrid {
    pub fn new(n_per_axis: usize, dealias_fraction: f64) -> Result<Self> {
        if n_per_axis < 4 || n_per_axis % 2 != 0 {
            return Err(LabError::Parameter(format!(
                "torus n_per_axis must be even and >= 4, got {n_per_axis}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(LabError::Parameter(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        Ok(TorusGrid {
            n_per_axis,
            dealias_fraction,
        })
    }

    /// The usual 2/3-rule grid.
    pub fn two_thirds(n_per_axis: usize) -> Result<Self> {
        Self::new(n_per_axis, 2.0 / 3.0)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.n_per_axis, self.dealias_fraction).map(|_| ())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n_per_axis
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_per_axis.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n_per_axis as f64
    }

    #[inline]
    pub fn coordinate(&self, j: usize) -> f64 {
        -PI + self.spacing() * j as f64
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        let n = self.n_per_axis;
        [
            self.coordinate(node / (n * n)),
            self.coordinate((node / n) % n),
            self.coordinate(node % n),
        ]
    }

    /// Signed wavenumber of array index `i`; the Nyquist index maps to `n/2`.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n_per_axis;
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n_per_axis / 2
    }

    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let n = self.n_per_axis;
        [
            self.wavenumber(idx / (n * n)),
            self.wavenumber((idx / n) % n),
            self.wavenumber(idx % n),
        ]
    }

    /// Radius of the spherical dealiasing ball in wavenumber space.
    pub fn dealias_radius(&self) -> f64 {
        self.dealias_fraction * self.n_per_axis as f64 / 2.0
    }

    /// Whether the mode at array index `idx` survives dealiasing.
    pub fn kept(&self, idx: usize) -> bool {
        let n = self.n_per_axis;
        let (a, b, c) = (idx / (n * n), (idx / n) % n, idx % n);
        if self.is_nyquist(a) || self.is_nyquist(b) || self.is_nyquist(c) {
            return false;
        }
        let k = self.wavevector(idx);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        k2 <= self.dealias_radius().powi(2) + 1e-12
    }

    pub fn index_of(&self, k: [i64; 3]) -> Option<usize> {
        let n = self.n_per_axis as i64;
        let mut out = 0usize;
        for &ki in &k {
            if ki.abs() >= n / 2 {
                return None;
            }
            out = out * n as usize + ki.rem_euclid(n) as usize;
        }
        Some(out)
    }

    #[inline]
    fn sign(&self, idx: usize) -> f64 {
        let n = self.n_per_axis;
        if (idx / (n * n) + (idx / n) % n + idx % n) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Cached 1D plans for the 3D transforms of one grid size.
#[derive(Clone)]
pub struct TorusFft {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusFft").field("grid", &self.grid).finish()
    }
}

impl TorusFft {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        TorusFft {
            grid,
            fwd: planner.plan_fft_forward(grid.n_per_axis),
            inv: planner.plan_fft_inverse(grid.n_per_axis),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.n_per_axis;
        let plan = if inverse { &self.inv } else { &self.fwd };
        // Last axis is contiguous.
        plan.process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for stride in [n, n * n] {
            for base in 0..n * n * n {
                // Visit each line once: the base index must have a zero digit
                // along the current axis.
                if (base / stride) % n != 0 {
                    continue;
                }
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                plan.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }

    /// Spectrum of nodal values.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let g = self.grid;
        assert_eq!(values.len(), g.len());
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft3(&mut data, false);
        let scale = 1.0 / g.len() as f64;
        let n = g.n_per_axis;
        for (idx, v) in data.iter_mut().enumerate() {
            let (a, b, c) = (idx / (n * n), (idx / n) % n, idx % n);
            if g.is_nyquist(a) || g.is_nyquist(b) || g.is_nyquist(c) {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v *= g.sign(idx) * scale;
            }
        }
        data
    }

    /// Nodal values of a spectrum (real part).
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let g = self.grid;
        assert_eq!(coeffs.len(), g.len());
        let mut data: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| c * g.sign(idx))
            .collect();
        self.fft3(&mut data, true);
        data.iter().map(|c| c.re).collect()
    }

    /// Spectra of the three components of a node-major vector field.
    pub fn forward_vector(&self, values: &[f64]) -> [Vec<Complex64>; 3] {
        let comps = split_components(values);
        [
            self.forward(&comps[0]),
            self.forward(&comps[1]),
            self.forward(&comps[2]),
        ]
    }

    pub fn inverse_vector(&self, spec: &[Vec<Complex64>; 3]) -> Vec<f64> {
        join_components(&[
            self.inverse(&spec[0]),
            self.inverse(&spec[1]),
            self.inverse(&spec[2]),
        ])
    }
}

pub fn split_components(values: &[f64]) -> [Vec<f64>; 3] {
    let n = values.len() / 3;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for c in 0..3 {
            out[c][i] = values[3 * i + c];
        }
    }
    out
}

pub fn join_components(comps: &[Vec<f64>; 3]) -> Vec<f64> {
    let n = comps[0].len();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[3 * i + c] = comps[c][i];
        }
    }
    out
}

/// Modewise `(I - k k^T / |k|^2)`; the zero mode is left unchanged.
pub fn leray_project_spectrum(grid: &TorusGrid, spec: &mut [Vec<Complex64>; 3]) {
    for idx in 0..grid.len() {
        let k = grid.wavevector(idx);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            continue;
        }
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        let dot = kf[0] * spec[0][idx] + kf[1] * spec[1][idx] + kf[2] * spec[2][idx];
        for c in 0..3 {
            spec[c][idx] -= dot * (kf[c] / k2);
        }
    }
}

/// Spectrum of `div u`.
pub fn divergence_spectrum(grid: &TorusGrid, spec: &[Vec<Complex64>; 3]) -> Vec<Complex64> {
    (0..grid.len())
        .map(|idx| {
            let k = grid.wavevector(idx);
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..3 {
                acc += Complex64::new(0.0, k[c] as f64) * spec[c][idx];
            }
            acc
        })
        .collect()
}

/// Spectrum of `curl u`.
pub fn curl_spectrum(grid: &TorusGrid, spec: &[Vec<Complex64>; 3]) -> [Vec<Complex64>; 3] {
    let mut out = [
        vec![Complex64::new(0.0, 0.0); grid.len()],
        vec![Complex64::new(0.0, 0.0); grid.len()],
        vec![Complex64::new(0.0, 0.0); grid.len()],
    ];
    for idx in 0..grid.len() {
        let k = grid.wavevector(idx);
        let ik = |c: usize| Complex64::new(0.0, k[c] as f64);
        out[0][idx] = ik(1) * spec[2][idx] - ik(2) * spec[1][idx];
        out[1][idx] = ik(2) * spec[0][idx] - ik(0) * spec[2][idx];
        out[2][idx] = ik(0) * spec[1][idx] - ik(1) * spec[0][idx];
    }
    out
}

/// Spectrum of `d/dx_axis` of a scalar.
pub fn derivative_spectrum(grid: &TorusGrid, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
    (0..grid.len())
        .map(|idx| Complex64::new(0.0, grid.wavevector(idx)[axis] as f64) * spec[idx])
        .collect()
}

/// Zeroes every mode outside the dealiasing ball.
pub fn dealias(grid: &TorusGrid, spec: &mut [Complex64]) {
    for (idx, v) in spec.iter_mut().enumerate() {
        if !grid.kept(idx) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Random real solenoidal field supported on `0 < |k| <= k_max`, scaled to
/// root-mean-square speed `rms` over the box.
pub fn random_solenoidal<R: Rng + ?Sized>(
    grid: &TorusGrid,
    rng: &mut R,
    k_max: f64,
    rms: f64,
) -> [Vec<Complex64>; 3] {
    let len = grid.len();
    let mut raw = [
        vec![Complex64::new(0.0, 0.0); len],
        vec![Complex64::new(0.0, 0.0); len],
        vec![Complex64::new(0.0, 0.0); len],
    ];
    for idx in 0..len {
        let k = grid.wavevector(idx);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        for c in raw.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if k2 > 0.0 && k2 <= k_max * k_max + 1e-12 && grid.kept(idx) {
                c[idx] = Complex64::new(re, im);
            }
        }
    }
    // Hermitian part gives a real field.
    let mut spec = raw.clone();
    for idx in 0..len {
        let k = grid.wavevector(idx);
        if let Some(j) = grid.index_of([-k[0], -k[1], -k[2]]) {
            for c in 0..3 {
                spec[c][idx] = 0.5 * (raw[c][idx] + raw[c][j].conj());
            }
        }
    }
    leray_project_spectrum(grid, &mut spec);
    let energy: f64 = spec.iter().flat_map(|c| c.iter()).map(|v| v.norm_sqr()).sum();
    if energy > 0.0 {
        let s = rms / energy.sqrt();
        for c in spec.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
    }
    spec
}

/// A finite trigonometric sum with several coefficient sets over one mode
/// list, evaluated exactly at arbitrary points.
#[derive(Debug, Clone)]
pub struct BandLimited {
    modes: Vec<[i64; 3]>,
    coeffs: Vec<Vec<Complex64>>,
}

impl BandLimited {
    pub fn new(modes: Vec<[i64; 3]>, coeffs: Vec<Vec<Complex64>>) -> Self {
        for c in &coeffs {
            assert_eq!(c.len(), modes.len());
        }
        BandLimited { modes, coeffs }
    }

    /// Collects the modes that are nonzero in any of the given spectra.
    pub fn from_spectra(grid: &TorusGrid, spectra: &[&[Complex64]]) -> Self {
        let mut modes = Vec::new();
        let mut coeffs: Vec<Vec<Complex64>> = vec![Vec::new(); spectra.len()];
        for idx in 0..grid.len() {
            if spectra.iter().any(|s| s[idx].norm_sqr() > 0.0) {
                modes.push(grid.wavevector(idx));
                for (f, s) in spectra.iter().enumerate() {
                    coeffs[f].push(s[idx]);
                }
            }
        }
        BandLimited { modes, coeffs }
    }

    pub fn modes(&self) -> &[[i64; 3]] {
        &self.modes
    }

    pub fn n_fields(&self) -> usize {
        self.coeffs.len()
    }

    /// Real part of each sum at every point; output is field-major.
    ///
    /// Points sharing a `z` coordinate share the inner sum over `k3`, which
    /// makes evaluation on ball and sphere grids separable.
    pub fn evaluate(&self, points: &[[f64; 3]]) -> Vec<Vec<f64>> {
        let nf = self.coeffs.len();
        if self.modes.is_empty() {
            return vec![vec![0.0; points.len()]; nf];
        }
        let kmax = self
            .modes
            .iter()
            .flat_map(|k| k.iter().map(|v| v.unsigned_abs()))
            .max()
            .unwrap_or(0) as i64;
        let width = (2 * kmax + 1) as usize;
        // (k1, k2) pairs and the modes that belong to each.
        let mut pairs: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (m, k) in self.modes.iter().enumerate() {
            pairs.entry((k[0], k[1])).or_default().push(m);
        }
        let pairs: Vec<((i64, i64), Vec<usize>)> = pairs.into_iter().collect();
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            groups.entry(p[2].to_bits()).or_default().push(i);
        }
        let groups: Vec<(f64, Vec<usize>)> =
            groups.into_iter().map(|(b, v)| (f64::from_bits(b), v)).collect();

        let results: Vec<Vec<(usize, Vec<f64>)>> = groups
            .par_iter()
            .map(|(z, members)| {
                let ez: Vec<Complex64> = (-kmax..=kmax)
                    .map(|k| Complex64::from_polar(1.0, k as f64 * z))
                    .collect();
                // Inner sums over k3 for every (k1, k2) pair and field.
                let mut g = vec![Complex64::new(0.0, 0.0); pairs.len() * nf];
                for (p, (_, ms)) in pairs.iter().enumerate() {
                    for &m in ms {
                        let e = ez[(self.modes[m][2] + kmax) as usize];
                        for f in 0..nf {
                            g[p * nf + f] += self.coeffs[f][m] * e;
                        }
                    }
                }
                let mut ex = vec![Complex64::new(0.0, 0.0); width];
                let mut ey = vec![Complex64::new(0.0, 0.0); width];
                let mut out = Vec::with_capacity(members.len());
                for &i in members {
                    let [x, y, _] = points[i];
                    for (j, k) in (-kmax..=kmax).enumerate() {
                        ex[j] = Complex64::from_polar(1.0, k as f64 * x);
                        ey[j] = Complex64::from_polar(1.0, k as f64 * y);
                    }
                    let mut vals = vec![0.0; nf];
                    for (p, ((k1, k2), _)) in pairs.iter().enumerate() {
                        let e = ex[(k1 + kmax) as usize] * ey[(k2 + kmax) as usize];
                        for (f, v) in vals.iter_mut().enumerate() {
                            let c = g[p * nf + f];
                            *v += c.re * e.re - c.im * e.im;
                        }
                    }
                    out.push((i, vals));
                }
                out
            })
            .collect();
        let mut out = vec![vec![0.0; points.len()]; nf];
        for group in results {
            for (i, vals) in group {
                for f in 0..nf {
                    out[f][i] = vals[f];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transforms_round_trip_and_match_a_single_mode() {
        let g = TorusGrid::two_thirds(12).unwrap();
        let fft = TorusFft::new(g);
        // f = cos(2x - y + 3z) has coefficients 1/2 at +-k.
        let vals: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.position(i);
                (2.0 * p[0] - p[1] + 3.0 * p[2]).cos()
            })
            .collect();
        let spec = fft.forward(&vals);
        let i = g.index_of([2, -1, 3]).unwrap();
        let j = g.index_of([-2, 1, -3]).unwrap();
        assert!((spec[i] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((spec[j] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        let back = fft.inverse(&spec);
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn projector_arithmetic_on_one_mode() {
        let g = TorusGrid::two_thirds(8).unwrap();
        let z = || vec![Complex64::new(0.0, 0.0); g.len()];
        let mut spec = [z(), z(), z()];
        let i = g.index_of([1, 1, 0]).unwrap();
        spec[0][i] = Complex64::new(1.0, 0.0);
        leray_project_spectrum(&g, &mut spec);
        assert!((spec[0][i].re - 0.5).abs() < 1e-15);
        assert!((spec[1][i].re + 0.5).abs() < 1e-15);
        assert!(spec[2][i].norm() < 1e-15);
    }

    #[test]
    fn band_limited_evaluation_matches_direct_sum() {
        let g = TorusGrid::two_thirds(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = random_solenoidal(&g, &mut rng, 3.0, 1.0);
        let bl = BandLimited::from_spectra(&g, &[&spec[0], &spec[1], &spec[2]]);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin(), (1.3 * t).cos() * 0.8, if i % 3 == 0 { 0.25 } else { -t.cos() * 0.5 }]
            })
            .collect();
        let vals = bl.evaluate(&pts);
        for (p, pt) in pts.iter().enumerate() {
            for c in 0..3 {
                let mut direct = 0.0;
                for idx in 0..g.len() {
                    let k = g.wavevector(idx);
                    let ph = k[0] as f64 * pt[0] + k[1] as f64 * pt[1] + k[2] as f64 * pt[2];
                    direct += (spec[c][idx] * Complex64::from_polar(1.0, ph)).re;
                }
                assert!((direct - vals[c][p]).abs() < 1e-12);
            }
        }
        // The projected random field is solenoidal and real.
        let div = divergence_spectrum(&g, &spec);
        assert!(div.iter().all(|v| v.norm() < 1e-13));
        let fft = TorusFft::new(g);
        let x = fft.inverse(&spec[0]);
        let again = fft.forward(&x);
        for (a, b) in again.iter().zip(&spec[0]) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
