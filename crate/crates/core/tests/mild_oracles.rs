use std::sync::Arc;

use nse_lab::ball::BallGrid;
use nse_lab::field::{Grid, SpaceTimeField};
use nse_lab::mild::{bilinear_coeffs, fixed_point_defect, picard_iterate, picard_iterate_from, PicardConfig};
use nse_lab::norms::{mixed_norm, NormDomain, NormSpec};
use nse_lab::quadrature::gauss_legendre_on;
use nse_lab::stokes::{eigen_decompose, StokesEigenbasis};
use nse_lab::LabError;

fn basis() -> StokesEigenbasis {
    let g = Arc::new(BallGrid::new(4, 12, 0.8).unwrap());
    eigen_decompose(&g).unwrap()
}

fn nodes(n: usize) -> Vec<f64> {
    (0..n).map(|i| -0.5 + 0.5 * i as f64 / (n - 1) as f64).collect()
}

fn amp(t: f64) -> f64 {
    1.0 + 0.5 * (3.0 * t).sin()
}

fn field_of(basis: &StokesEigenbasis, t: &[f64], f: impl Fn(f64) -> Vec<f64>) -> SpaceTimeField {
    let frames = t.iter().map(|&s| basis.synthesize(&f(s))).collect();
    SpaceTimeField::new(Grid::Ball(basis.grid().clone()), t.to_vec(), frames).unwrap()
}

fn critical(u: &SpaceTimeField) -> f64 {
    mixed_norm(u, &NormSpec::critical(NormDomain::Full)).unwrap()
}

/// Projected nonlinearity `P div(w (x) w)` of a modal field.
fn forcing(basis: &StokesEigenbasis, c: &[f64]) -> Vec<f64> {
    let w = basis.synthesize(c);
    basis.project(&basis.grid().product_divergence(&w, &w))
}

#[test]
fn single_mode_bilinear_matches_dense_quadrature() {
    let b = basis();
    let t = nodes(257);
    let mut e0 = vec![0.0; b.len()];
    e0[0] = 1.0;
    let d = field_of(&b, &t, |s| e0.iter().map(|v| v * amp(s)).collect());
    let got = bilinear_coeffs(&b, &d, &d).unwrap();
    let p = forcing(&b, &e0);
    let (x, w) = gauss_legendre_on(40, 0.0, 1.0);
    let mut scale = 0.0_f64;
    let mut err = 0.0_f64;
    for (k, mode) in b.modes().iter().enumerate() {
        let lam = mode.eigenvalue;
        let mut c = 0.0;
        for i in 1..t.len() {
            let (a, h) = (t[i - 1], t[i] - t[i - 1]);
            let integral: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| {
                    let s = a + h * x;
                    w * h * (-lam * (t[i] - s)).exp() * amp(s).powi(2)
                })
                .sum();
            c = (-lam * h).exp() * c - p[k] * integral;
            scale = scale.max(c.abs());
            err = err.max((c - got[i][k]).abs());
        }
    }
    assert!(scale > 1e-3);
    assert!(err <= 1e-8 * scale, "max error {err:e} against scale {scale:e}");
}

/// Integrating-factor RK4 for the Galerkin system
/// `c' = -lambda c - P div((V + Ubar) (x) (V + Ubar))`, `c(t0) = 0`.
fn galerkin(b: &StokesEigenbasis, t: &[f64], ubar: &dyn Fn(f64) -> Vec<f64>, sub: usize) -> Vec<Vec<f64>> {
    let lam: Vec<f64> = b.modes().iter().map(|m| m.eigenvalue).collect();
    let rhs = |s: f64, c: &[f64]| -> Vec<f64> {
        let u = ubar(s);
        let w: Vec<f64> = c.iter().zip(&u).map(|(a, b)| a + b).collect();
        forcing(b, &w).into_iter().map(|v| -v).collect()
    };
    let mut c = vec![0.0; b.len()];
    let mut out = vec![c.clone()];
    for i in 1..t.len() {
        let h = (t[i] - t[i - 1]) / sub as f64;
        for j in 0..sub {
            let s = t[i - 1] + j as f64 * h;
            let e = |v: &[f64], tau: f64| -> Vec<f64> { v.iter().zip(&lam).map(|(x, l)| x * (-l * tau).exp()).collect() };
            let add = |a: &[f64], b: &[f64], f: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + f * y).collect() };
            let k1 = rhs(s, &c);
            // Stages live in the rotated frame y(s') = e^{lambda (s' - s)} c(s').
            let k2 = {
                let v = rhs(s + h / 2.0, &e(&add(&c, &k1, h / 2.0), h / 2.0));
                v.iter().zip(&lam).map(|(v, l)| v * (l * h / 2.0).exp()).collect::<Vec<_>>()
            };
            let k3 = {
                let y = add(&c, &k2, h / 2.0);
                let v = rhs(s + h / 2.0, &e(&y, h / 2.0));
                v.iter().zip(&lam).map(|(v, l)| v * (l * h / 2.0).exp()).collect::<Vec<_>>()
            };
            let k4 = {
                let y = add(&c, &k3, h);
                let v = rhs(s + h, &e(&y, h));
                v.iter().zip(&lam).map(|(v, l)| v * (l * h).exp()).collect::<Vec<_>>()
            };
            let y: Vec<f64> = (0..c.len())
                .map(|k| c[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
                .collect();
            c = e(&y, h);
        }
        out.push(c.clone());
    }
    out
}

fn small_ubar(b: &StokesEigenbasis, scale: f64) -> impl Fn(f64) -> Vec<f64> + '_ {
    move |s: f64| {
        let mut c = vec![0.0; b.len()];
        c[0] = scale * amp(s);
        c[3] = 0.5 * scale * (2.0 * s).cos();
        c
    }
}

#[test]
fn picard_matches_galerkin_time_stepping() {
    let b = basis();
    let t = nodes(129);
    // Small constants give a gate wide enough for a visible nonlinearity.
    let cfg = PicardConfig::new(1.0 / 40.0, 1.0 / 40.0);
    let unit = field_of(&b, &t, small_ubar(&b, 1.0));
    let scale = 0.1 * cfg.gate() / critical(&unit);
    let ub = small_ubar(&b, scale);
    let ubar = field_of(&b, &t, &ub);
    let res = picard_iterate(&ubar, &cfg, &b).unwrap();
    let oracle = galerkin(&b, &t, &ub, 8);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..t.len() {
        for k in 0..b.len() {
            num += (res.coeffs[i][k] - oracle[i][k]).powi(2);
            den += oracle[i][k].powi(2);
        }
    }
    let rel = (num / den).sqrt();
    assert!(den > 0.0);
    assert!(rel < 1e-4, "relative L2 distance {rel:e}");
    assert!(res.contraction <= 0.5, "contraction {}", res.contraction);
    assert!(*res.residuals.last().unwrap() <= 1e-8);
    assert!(fixed_point_defect(&b, &res.v, &ubar).unwrap() < 1e-7);
}

#[test]
fn fixed_point_is_unique_in_the_small_ball() {
    let b = basis();
    let t = nodes(65);
    let cfg = PicardConfig::new(1.0 / 40.0, 1.0 / 40.0);
    let unit = field_of(&b, &t, small_ubar(&b, 1.0));
    let ubar = unit.scaled(0.3 * cfg.gate() / critical(&unit));
    let r1 = picard_iterate(&ubar, &cfg, &b).unwrap();
    let guess = field_of(&b, &t, |s| {
        let mut c = vec![0.0; b.len()];
        c[1] = 0.05 * (s + 0.5);
        c[6] = -0.03;
        c
    });
    let r2 = picard_iterate_from(&ubar, &cfg, &b, Some(&guess)).unwrap();
    let d = critical(&r1.v.axpy(-1.0, &r2.v).unwrap());
    assert!(d <= 10.0 * cfg.tolerance * r1.v_norm.max(1e-300), "{d:e}");
    let over = unit.scaled(1.5 * cfg.gate() / critical(&unit));
    match picard_iterate(&over, &cfg, &b) {
        Err(LabError::Smallness { measured, threshold, .. }) => assert!(measured > threshold),
        other => panic!("expected a smallness error, got {other:?}"),
    }
}
