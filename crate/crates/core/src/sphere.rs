//! Quadrature and real spherical-harmonic transforms on the unit sphere.
//!
//! Nodes are Gauss-Legendre in `mu = cos(theta)` times uniform in `phi`,
//! stored ring-major (`j * n_phi + k`). Real harmonics are orthonormal:
//! `Y_l0 = P_l^0`, `Y_lm = sqrt2 P_l^m cos(m phi)` for `m > 0`,
//! `Y_l,-m = sqrt2 P_l^m sin(m phi)`.
//!
//! Vector fields are split into `A Y xhat + B grad_s Y + C xhat x grad_s Y`,
//! so that `A` carries the radial component and `B`, `C` the spheroidal and
//! toroidal tangential parts.

use std::f64::consts::{PI, SQRT_2};

use crate::quadrature::gauss_legendre;

/// Index of `(l, m)` in a coefficient vector, `-l <= m <= l`.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * (l + 1)) as i64 + m) as usize
}

#[inline]
pub fn coeff_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

#[inline]
fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Gauss-Legendre x uniform quadrature with precomputed harmonic tables up to
/// degree `l_max`.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    l_max: usize,
    n_theta: usize,
    n_phi: usize,
    mu: Vec<f64>,
    sin_theta: Vec<f64>,
    w_theta: Vec<f64>,
    phi: Vec<f64>,
    /// `P_l^m(mu_j)`, ring-major, triangular in (l, m), l <= l_max + 1.
    plm: Vec<f64>,
    /// `d/dtheta P_l^m(mu_j)`, l <= l_max.
    dplm: Vec<f64>,
    cos_m: Vec<f64>,
    sin_m: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(l_max: usize, n_theta: usize, n_phi: usize) -> Self {
        assert!(n_theta > l_max, "n_theta must exceed l_max");
        assert!(n_phi > 2 * l_max, "n_phi must exceed 2 l_max");
        let (mu, w_theta) = gauss_legendre(n_theta);
        // Descending mu so rings run from the north pole southwards.
        let mu: Vec<f64> = mu.into_iter().rev().collect();
        let w_theta: Vec<f64> = w_theta.into_iter().rev().collect();
        let sin_theta: Vec<f64> = mu.iter().map(|m| (1.0 - m * m).sqrt()).collect();
        let phi: Vec<f64> = (0..n_phi).map(|k| 2.0 * PI * k as f64 / n_phi as f64).collect();

        let ntri_ext = tri(l_max + 1, l_max + 1) + 1;
        let ntri = tri(l_max, l_max) + 1;
        let mut plm = vec![0.0; n_theta * ntri_ext];
        let mut dplm = vec![0.0; n_theta * ntri];
        for j in 0..n_theta {
            let p = associated_legendre(l_max + 1, mu[j], sin_theta[j]);
            plm[j * ntri_ext..(j + 1) * ntri_ext].copy_from_slice(&p);
            for l in 0..=l_max {
                for m in 0..=l {
                    // (1 - mu^2) dP_l/dmu = (l+1) mu P_l - c P_{l+1}
                    let c = (((2 * l + 1) * (l + 1 + m) * (l + 1 - m)) as f64 / (2 * l + 3) as f64)
                        .sqrt();
                    let num = (l as f64 + 1.0) * mu[j] * p[tri(l, m)] - c * p[tri(l + 1, m)];
                    dplm[j * ntri + tri(l, m)] = -num / sin_theta[j];
                }
            }
        }
        let mut cos_m = vec![0.0; n_phi * (l_max + 1)];
        let mut sin_m = vec![0.0; n_phi * (l_max + 1)];
        for k in 0..n_phi {
            for m in 0..=l_max {
                cos_m[k * (l_max + 1) + m] = (m as f64 * phi[k]).cos();
                sin_m[k * (l_max + 1) + m] = (m as f64 * phi[k]).sin();
            }
        }
        SphereQuadrature {
            l_max,
            n_theta,
            n_phi,
            mu,
            sin_theta,
            w_theta,
            phi,
            plm,
            dplm,
            cos_m,
            sin_m,
        }
    }

    /// Quadrature exact for spherical polynomials of degree `3 l_max + 5`,
    /// enough for quadratic nonlinear terms tested against degree `l_max + 2`.
    pub fn with_product_margin(l_max: usize) -> Self {
        let n_theta = (3 * l_max + 7) / 2;
        Self::new(l_max, n_theta, 2 * n_theta)
    }

    /// Same nodes, transforms truncated at another degree.
    pub fn with_degree(&self, l_max: usize) -> Self {
        Self::new(l_max, self.n_theta, self.n_phi)
    }

    pub fn mu(&self, ring: usize) -> f64 {
        self.mu[ring]
    }

    pub fn sin_theta(&self, ring: usize) -> f64 {
        self.sin_theta[ring]
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn coeff_len(&self) -> usize {
        coeff_len(self.l_max)
    }

    /// Quadrature weight of node `(j, k)` on the unit sphere.
    #[inline]
    pub fn weight(&self, node: usize) -> f64 {
        self.w_theta[node / self.n_phi] * 2.0 * PI / self.n_phi as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Unit outward normal at a node.
    #[inline]
    pub fn normal(&self, node: usize) -> [f64; 3] {
        let j = node / self.n_phi;
        let k = node % self.n_phi;
        let (s, c) = (self.sin_theta[j], self.mu[j]);
        [s * self.phi[k].cos(), s * self.phi[k].sin(), c]
    }

    /// Local (r, theta, phi) unit frame at a node.
    #[inline]
    pub fn frame(&self, node: usize) -> [[f64; 3]; 3] {
        let j = node / self.n_phi;
        let k = node % self.n_phi;
        let (st, ct) = (self.sin_theta[j], self.mu[j]);
        let (sp, cp) = self.phi[k].sin_cos();
        [
            [st * cp, st * sp, ct],
            [ct * cp, ct * sp, -st],
            [-sp, cp, 0.0],
        ]
    }

    #[inline]
    fn p(&self, j: usize, l: usize, m: usize) -> f64 {
        let ntri_ext = tri(self.l_max + 1, self.l_max + 1) + 1;
        self.plm[j * ntri_ext + tri(l, m)]
    }

    #[inline]
    fn dp(&self, j: usize, l: usize, m: usize) -> f64 {
        let ntri = tri(self.l_max, self.l_max) + 1;
        self.dplm[j * ntri + tri(l, m)]
    }

    /// Value of the real harmonic `Y_lm` at a node.
    pub fn ylm(&self, l: usize, m: i64, node: usize) -> f64 {
        let j = node / self.n_phi;
        let k = node % self.n_phi;
        let am = m.unsigned_abs() as usize;
        let p = self.p(j, l, am);
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => p,
            std::cmp::Ordering::Greater => SQRT_2 * p * self.cos_m[k * (self.l_max + 1) + am],
            std::cmp::Ordering::Less => SQRT_2 * p * self.sin_m[k * (self.l_max + 1) + am],
        }
    }

    fn ring_dft(&self, ring: &[f64], fc: &mut [f64], fs: &mut [f64]) {
        let lp = self.l_max + 1;
        fc.iter_mut().for_each(|v| *v = 0.0);
        fs.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in ring.iter().enumerate() {
            let c = &self.cos_m[k * lp..(k + 1) * lp];
            let s = &self.sin_m[k * lp..(k + 1) * lp];
            for m in 0..lp {
                fc[m] += v * c[m];
                fs[m] += v * s[m];
            }
        }
    }

    fn ring_idft(&self, gc: &[f64], gs: &[f64], ring: &mut [f64]) {
        let lp = self.l_max + 1;
        for (k, out) in ring.iter_mut().enumerate() {
            let c = &self.cos_m[k * lp..(k + 1) * lp];
            let s = &self.sin_m[k * lp..(k + 1) * lp];
            let mut acc = gc[0];
            for m in 1..lp {
                acc += gc[m] * c[m] + gs[m] * s[m];
            }
            *out = acc;
        }
    }

    /// Integral over the unit sphere of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(i, v)| v * self.weight(i)).sum()
    }

    /// Projection of nodal values onto `Y_lm`, `l <= l_max`.
    pub fn analyze_scalar(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.len());
        let lp = self.l_max + 1;
        let mut out = vec![0.0; self.coeff_len()];
        let mut fc = vec![0.0; lp];
        let mut fs = vec![0.0; lp];
        let wphi = 2.0 * PI / self.n_phi as f64;
        for j in 0..self.n_theta {
            self.ring_dft(&values[j * self.n_phi..(j + 1) * self.n_phi], &mut fc, &mut fs);
            let w = self.w_theta[j] * wphi;
            for l in 0..=self.l_max {
                out[lm_index(l, 0)] += w * self.p(j, l, 0) * fc[0];
                for m in 1..=l {
                    let p = w * SQRT_2 * self.p(j, l, m);
                    out[lm_index(l, m as i64)] += p * fc[m];
                    out[lm_index(l, -(m as i64))] += p * fs[m];
                }
            }
        }
        out
    }

    pub fn synthesize_scalar(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.coeff_len());
        let lp = self.l_max + 1;
        let mut out = vec![0.0; self.len()];
        let mut gc = vec![0.0; lp];
        let mut gs = vec![0.0; lp];
        for j in 0..self.n_theta {
            gc.iter_mut().for_each(|v| *v = 0.0);
            gs.iter_mut().for_each(|v| *v = 0.0);
            for l in 0..=self.l_max {
                gc[0] += coeffs[lm_index(l, 0)] * self.p(j, l, 0);
                for m in 1..=l {
                    let p = SQRT_2 * self.p(j, l, m);
                    gc[m] += coeffs[lm_index(l, m as i64)] * p;
                    gs[m] += coeffs[lm_index(l, -(m as i64))] * p;
                }
            }
            self.ring_idft(&gc, &gs, &mut out[j * self.n_phi..(j + 1) * self.n_phi]);
        }
        out
    }

    /// Vector analysis from spherical components `(u_r, u_theta, u_phi)`.
    /// Returns `(A, B, C)`; `B` and `C` vanish for `l = 0`.
    pub fn analyze_vector_spherical(
        &self,
        ur: &[f64],
        ut: &[f64],
        up: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let a = self.analyze_scalar(ur);
        let lp = self.l_max + 1;
        let n = self.coeff_len();
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let (mut tc, mut ts, mut pc, mut ps) =
            (vec![0.0; lp], vec![0.0; lp], vec![0.0; lp], vec![0.0; lp]);
        let wphi = 2.0 * PI / self.n_phi as f64;
        for j in 0..self.n_theta {
            let r = j * self.n_phi..(j + 1) * self.n_phi;
            self.ring_dft(&ut[r.clone()], &mut tc, &mut ts);
            self.ring_dft(&up[r], &mut pc, &mut ps);
            let w = self.w_theta[j] * wphi;
            let st = self.sin_theta[j];
            for l in 1..=self.l_max {
                let ll = (l * (l + 1)) as f64;
                let d0 = self.dp(j, l, 0);
                b[lm_index(l, 0)] += w * d0 * tc[0] / ll;
                c[lm_index(l, 0)] += w * d0 * pc[0] / ll;
                for m in 1..=l {
                    let mf = m as f64;
                    let d = SQRT_2 * self.dp(j, l, m);
                    let q = SQRT_2 * mf * self.p(j, l, m) / st;
                    // m > 0: trig cos; d_phi Y / sin = -q sin
                    b[lm_index(l, m as i64)] += w * (d * tc[m] - q * ps[m]) / ll;
                    c[lm_index(l, m as i64)] += w * (d * pc[m] + q * ts[m]) / ll;
                    // m < 0: trig sin; d_phi Y / sin = q cos
                    b[lm_index(l, -(m as i64))] += w * (d * ts[m] + q * pc[m]) / ll;
                    c[lm_index(l, -(m as i64))] += w * (d * ps[m] - q * tc[m]) / ll;
                }
            }
        }
        (a, b, c)
    }

    /// Inverse of [`analyze_vector_spherical`](Self::analyze_vector_spherical).
    pub fn synthesize_vector_spherical(
        &self,
        a: &[f64],
        b: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ur = self.synthesize_scalar(a);
        let lp = self.l_max + 1;
        let mut ut = vec![0.0; self.len()];
        let mut up = vec![0.0; self.len()];
        let (mut tc, mut ts, mut pc, mut ps) =
            (vec![0.0; lp], vec![0.0; lp], vec![0.0; lp], vec![0.0; lp]);
        for j in 0..self.n_theta {
            for v in [&mut tc, &mut ts, &mut pc, &mut ps] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            let st = self.sin_theta[j];
            for l in 1..=self.l_max {
                let d0 = self.dp(j, l, 0);
                tc[0] += b[lm_index(l, 0)] * d0;
                pc[0] += c[lm_index(l, 0)] * d0;
                for m in 1..=l {
                    let mf = m as f64;
                    let d = SQRT_2 * self.dp(j, l, m);
                    let q = SQRT_2 * mf * self.p(j, l, m) / st;
                    let (bp, cp) = (b[lm_index(l, m as i64)], c[lm_index(l, m as i64)]);
                    let (bn, cn) = (b[lm_index(l, -(m as i64))], c[lm_index(l, -(m as i64))]);
                    // u_theta = B d_theta Y - C d_phi Y / sin
                    tc[m] += bp * d - cn * q;
                    ts[m] += bn * d + cp * q;
                    // u_phi = B d_phi Y / sin + C d_theta Y
                    pc[m] += bn * q + cp * d;
                    ps[m] += -bp * q + cn * d;
                }
            }
            let r = j * self.n_phi..(j + 1) * self.n_phi;
            self.ring_idft(&tc, &ts, &mut ut[r.clone()]);
            self.ring_idft(&pc, &ps, &mut up[r]);
        }
        (ur, ut, up)
    }

    /// Cartesian components to spherical `(u_r, u_theta, u_phi)` at every node.
    pub fn to_spherical(&self, ux: &[f64], uy: &[f64], uz: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut ur = vec![0.0; n];
        let mut ut = vec![0.0; n];
        let mut up = vec![0.0; n];
        for i in 0..n {
            let f = self.frame(i);
            let v = [ux[i], uy[i], uz[i]];
            ur[i] = dot(&f[0], &v);
            ut[i] = dot(&f[1], &v);
            up[i] = dot(&f[2], &v);
        }
        (ur, ut, up)
    }

    pub fn to_cartesian(&self, ur: &[f64], ut: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        let mut uz = vec![0.0; n];
        for i in 0..n {
            let f = self.frame(i);
            for d in 0..3 {
                let v = ur[i] * f[0][d] + ut[i] * f[1][d] + up[i] * f[2][d];
                match d {
                    0 => ux[i] = v,
                    1 => uy[i] = v,
                    _ => uz[i] = v,
                }
            }
        }
        (ux, uy, uz)
    }
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Orthonormal associated Legendre values `P_l^m(mu)` (no Condon-Shortley
/// phase) for `0 <= m <= l <= l_max`, triangular layout. Normalized so that
/// `2 pi int P_l^m(mu)^2 dmu = 1`.
pub fn associated_legendre(l_max: usize, mu: f64, sin_theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; tri(l_max, l_max) + 1];
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * sin_theta;
        }
        p[tri(m, m)] = pmm;
        if m < l_max {
            p[tri(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * mu * pmm;
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let lm1 = lf - 1.0;
            let a_prev = ((4.0 * lm1 * lm1 - 1.0) / (lm1 * lm1 - mf * mf)).sqrt();
            p[tri(l, m)] = a * (mu * p[tri(l - 1, m)] - p[tri(l - 2, m)] / a_prev);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harmonics_are_orthonormal_under_quadrature() {
        let q = SphereQuadrature::new(10, 12, 24);
        let n = q.coeff_len();
        let mut ys = Vec::new();
        for l in 0..=10usize {
            for m in -(l as i64)..=(l as i64) {
                ys.push((0..q.len()).map(|i| q.ylm(l, m, i)).collect::<Vec<_>>());
            }
        }
        for a in 0..n {
            for b in 0..n {
                let g: f64 = (0..q.len()).map(|i| q.weight(i) * ys[a][i] * ys[b][i]).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-12, "gram[{a},{b}] = {g}");
            }
        }
        let area: f64 = q.weights().iter().sum();
        assert!((area - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn scalar_round_trip() {
        let q = SphereQuadrature::with_product_margin(8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c: Vec<f64> = (0..q.coeff_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = q.analyze_scalar(&q.synthesize_scalar(&c));
        for (x, y) in c.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_round_trip_and_cartesian_frame() {
        let q = SphereQuadrature::with_product_margin(7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = q.coeff_len();
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        b[0] = 0.0;
        c[0] = 0.0;
        let (ur, ut, up) = q.synthesize_vector_spherical(&a, &b, &c);
        let (x, y, z) = q.to_cartesian(&ur, &ut, &up);
        let (ur2, ut2, up2) = q.to_spherical(&x, &y, &z);
        let (a2, b2, c2) = q.analyze_vector_spherical(&ur2, &ut2, &up2);
        for i in 0..n {
            assert!((a[i] - a2[i]).abs() < 1e-12);
            assert!((b[i] - b2[i]).abs() < 1e-12, "B {i}: {} vs {}", b[i], b2[i]);
            assert!((c[i] - c2[i]).abs() < 1e-12, "C {i}: {} vs {}", c[i], c2[i]);
        }
        a.clear();
        b.clear();
        c.clear();
    }

    #[test]
    fn gradient_of_y10_matches_closed_form() {
        // Y_10 = sqrt(3/4pi) cos theta, d_theta Y_10 = -sqrt(3/4pi) sin theta.
        let q = SphereQuadrature::new(4, 6, 12);
        let mut b = vec![0.0; q.coeff_len()];
        b[lm_index(1, 0)] = 1.0;
        let zero = vec![0.0; q.coeff_len()];
        let (_, ut, up) = q.synthesize_vector_spherical(&zero, &b, &zero);
        let s = (3.0 / (4.0 * PI)).sqrt();
        for i in 0..q.len() {
            let j = i / q.n_phi();
            assert!((ut[i] + s * q.sin_theta[j]).abs() < 1e-13);
            assert!(up[i].abs() < 1e-13);
        }
    }
}
