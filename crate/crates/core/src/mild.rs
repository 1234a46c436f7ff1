//! Duhamel fixed point for the perturbed system
//! `dV/dt - Delta V + grad P + div((V + Ubar) (x) (V + Ubar)) = 0` on a ball,
//! `V = 0` on the wall and at the start time.
//!
//! `B(D, E)(t) = -int_{t0}^t e^{-(t-s)A} div(D (x) E)(s) ds` is evaluated per
//! eigenmode: the nonlinearity is formed pointwise on the ball grid,
//! projected onto the basis and integrated with the exponential integrator
//! against a piecewise-cubic source. The fixed point is
//! `V = B(V, V) + L(V) + B(Ubar, Ubar)`, iterated as `V <- B(V + Ubar, V + Ubar)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::SpaceTimeField;
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::quadrature::integrate_modal;
use crate::stokes::{StokesEigenbasis, TIME_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub max_iterations: usize,
    /// Relative `L^4_t L^6_x` size of the last update at which to stop.
    pub tolerance: f64,
    /// Measured bilinear and linear constants.
    pub c0: f64,
    pub c1: f64,
}

impl PicardConfig {
    pub fn new(c0: f64, c1: f64) -> Self {
        PicardConfig {
            max_iterations: 50,
            tolerance: 1e-8,
            c0,
            c1,
        }
    }

    pub fn c2(&self) -> f64 {
        (1.0 / self.c0).min(1.0 / self.c1)
    }

    /// `||Ubar|| < C2 / 4`.
    pub fn gate(&self) -> f64 {
        self.c2() / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) || !(self.c0 > 0.0) || !(self.c1 > 0.0) {
            return Err(LabError::Parameter(format!("invalid Picard configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub v: SpaceTimeField,
    /// Modal coefficients of `V` per time node.
    pub coeffs: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Relative size of each update.
    pub residuals: Vec<f64>,
    /// Geometric mean ratio of successive residuals.
    pub contraction: f64,
    /// `||V||` and `||Ubar||` in `L^4_t L^6_x`.
    pub v_norm: f64,
    pub ubar_norm: f64,
    /// `4 C0 ||Ubar||^2`.
    pub bound: f64,
    pub bound_holds: bool,
}

/// Serializable summary of a [`PicardResult`].
#[derive(Debug, Clone, Serialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub contraction: f64,
    pub v_norm: f64,
    pub ubar_norm: f64,
    pub bound: f64,
    pub bound_holds: bool,
}

impl PicardResult {
    pub fn summary(&self) -> PicardSummary {
        PicardSummary {
            iterations: self.iterations,
            residuals: self.residuals.clone(),
            contraction: self.contraction,
            v_norm: self.v_norm,
            ubar_norm: self.ubar_norm,
            bound: self.bound,
            bound_holds: self.bound_holds,
        }
    }
}

fn check_pair(basis: &StokesEigenbasis, d: &SpaceTimeField, e: &SpaceTimeField) -> Result<()> {
    let g = basis.grid();
    for f in [d, e] {
        match f.grid.ball() {
            Ok(b) if b.spec() == g.spec() => {}
            _ => return Err(LabError::Parameter("field is not on the eigenbasis grid".into())),
        }
    }
    if d.time_nodes != e.time_nodes {
        return Err(LabError::Parameter("fields have different time nodes".into()));
    }
    Ok(())
}

/// Modal coefficients of `B(D, E)` per time node.
pub fn bilinear_coeffs(basis: &StokesEigenbasis, d: &SpaceTimeField, e: &SpaceTimeField) -> Result<Vec<Vec<f64>>> {
    check_pair(basis, d, e)?;
    let g = basis.grid();
    let nt = d.time_nodes.len();
    let src: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|i| basis.project(&g.product_divergence(&d.frames[i], &e.frames[i])))
        .collect();
    let modal: Vec<Vec<f64>> = basis
        .modes()
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let s: Vec<f64> = src.iter().map(|v| -v[k]).collect();
            integrate_modal(m.eigenvalue, &d.time_nodes, &s, 0.0, TIME_ORDER)
        })
        .collect();
    Ok((0..nt).map(|i| modal.iter().map(|c| c[i]).collect()).collect())
}

fn synthesize(basis: &StokesEigenbasis, times: &[f64], coeffs: &[Vec<f64>]) -> Result<SpaceTimeField> {
    let frames = coeffs.par_iter().map(|c| basis.synthesize(c)).collect();
    SpaceTimeField::new(crate::field::Grid::Ball(basis.grid().clone()), times.to_vec(), frames)
}

/// `B(D, E)(t) = -int_{t0}^t e^{-(t-s)A} div(D (x) E) ds`.
pub fn bilinear_b(basis: &StokesEigenbasis, d: &SpaceTimeField, e: &SpaceTimeField) -> Result<SpaceTimeField> {
    let c = bilinear_coeffs(basis, d, e)?;
    synthesize(basis, &d.time_nodes, &c)
}

/// `L(D) = B(D, Ubar) + B(Ubar, D)`.
pub fn linear_l(basis: &StokesEigenbasis, d: &SpaceTimeField, ubar: &SpaceTimeField) -> Result<SpaceTimeField> {
    let x = bilinear_coeffs(basis, d, ubar)?;
    let y = bilinear_coeffs(basis, ubar, d)?;
    let c: Vec<Vec<f64>> = x
        .iter()
        .zip(&y)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect();
    synthesize(basis, &d.time_nodes, &c)
}

fn critical(u: &SpaceTimeField) -> Result<f64> {
    mixed_norm(u, &NormSpec::critical(NormDomain::Full))
}

/// Picard iteration from `V_0 = 0`.
pub fn picard_iterate(ubar: &SpaceTimeField, cfg: &PicardConfig, basis: &StokesEigenbasis) -> Result<PicardResult> {
    picard_iterate_from(ubar, cfg, basis, None)
}

/// Picard iteration from a given initial guess.
pub fn picard_iterate_from(
    ubar: &SpaceTimeField,
    cfg: &PicardConfig,
    basis: &StokesEigenbasis,
    initial: Option<&SpaceTimeField>,
) -> Result<PicardResult> {
    cfg.validate()?;
    let ubar_norm = critical(ubar)?;
    if !(ubar_norm < cfg.gate()) {
        return Err(LabError::Smallness {
            gate: "||Ubar||_{L4 L6} < C2/4".into(),
            measured: ubar_norm,
            threshold: cfg.gate(),
        });
    }
    let times = ubar.time_nodes.clone();
    let nt = times.len();
    let mut v = match initial {
        Some(v0) => {
            check_pair(basis, v0, ubar)?;
            v0.clone()
        }
        None => SpaceTimeField::zeros(ubar.grid.clone(), times.clone()),
    };
    let mut coeffs = vec![vec![0.0; basis.len()]; nt];
    let mut residuals = Vec::new();
    let mut growth = 0;
    let mut converged = false;
    for it in 0..cfg.max_iterations {
        let w = v.axpy(1.0, ubar)?;
        let next_c = bilinear_coeffs(basis, &w, &w)?;
        let next = synthesize(basis, &times, &next_c)?;
        let diff = critical(&next.axpy(-1.0, &v)?)?;
        let size = critical(&next)?;
        let res = if size > 0.0 { diff / size } else { diff };
        v = next;
        coeffs = next_c;
        if let Some(&prev) = residuals.last() {
            if res > prev {
                growth += 1;
            } else {
                growth = 0;
            }
        }
        residuals.push(res);
        if res <= cfg.tolerance || size == 0.0 {
            converged = true;
            break;
        }
        if growth >= 3 {
            return Err(LabError::Divergence {
                iterations: it + 1,
                residuals,
            });
        }
    }
    if !converged {
        return Err(LabError::Divergence {
            iterations: cfg.max_iterations,
            residuals,
        });
    }
    let contraction = contraction_factor(&residuals);
    let v_norm = critical(&v)?;
    let bound = 4.0 * cfg.c0 * ubar_norm * ubar_norm;
    Ok(PicardResult {
        v,
        coeffs,
        iterations: residuals.len(),
        residuals,
        contraction,
        v_norm,
        ubar_norm,
        bound,
        bound_holds: v_norm <= bound * 1.1,
    })
}

/// Geometric mean of successive residual ratios, skipping the first update
/// (which measures the distance from the initial guess).
fn contraction_factor(res: &[f64]) -> f64 {
    let tail: Vec<f64> = res.iter().skip(1).copied().filter(|r| *r > 0.0).collect();
    if tail.len() < 2 {
        return 0.0;
    }
    let n = (tail.len() - 1) as f64;
    (tail[tail.len() - 1] / tail[0]).powf(1.0 / n)
}

/// `||V - B(V, V) - L(V) - B(Ubar, Ubar)|| / ||V||`, the fixed-point defect.
pub fn fixed_point_defect(basis: &StokesEigenbasis, v: &SpaceTimeField, ubar: &SpaceTimeField) -> Result<f64> {
    let w = v.axpy(1.0, ubar)?;
    let image = bilinear_b(basis, &w, &w)?;
    let d = critical(&image.axpy(-1.0, v)?)?;
    let n = critical(v)?;
    Ok(if n > 0.0 { d / n } else { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::BallGrid;
    use crate::field::Grid;
    use crate::stokes::eigen_decompose;
    use std::sync::Arc;

    fn setup() -> (StokesEigenbasis, Vec<f64>) {
        let g = Arc::new(BallGrid::new(4, 12, 0.8).unwrap());
        let t: Vec<f64> = (0..33).map(|i| -0.5 + 0.5 * i as f64 / 32.0).collect();
        (eigen_decompose(&g).unwrap(), t)
    }

    fn mode_in_time(basis: &StokesEigenbasis, t: &[f64], k: usize, amp: f64) -> SpaceTimeField {
        let phi = basis.mode_field(k);
        let frames = t.iter().map(|&s| phi.iter().map(|v| amp * (1.0 + s) * v).collect()).collect();
        SpaceTimeField::new(Grid::Ball(basis.grid().clone()), t.to_vec(), frames).unwrap()
    }

    #[test]
    fn zero_arguments_and_start_time() {
        let (basis, t) = setup();
        let z = SpaceTimeField::zeros(Grid::Ball(basis.grid().clone()), t.clone());
        let e = mode_in_time(&basis, &t, 0, 1.0).axpy(1.0, &mode_in_time(&basis, &t, 5, 0.5)).unwrap();
        assert_eq!(bilinear_b(&basis, &z, &e).unwrap().max_abs(), 0.0);
        let b = bilinear_b(&basis, &e, &e).unwrap();
        assert_eq!(b.frames[0].iter().fold(0.0_f64, |m, v| m.max(v.abs())), 0.0);
        assert!(b.max_abs() > 0.0);
    }

    #[test]
    fn linear_operator_is_symmetrized_bilinear() {
        let (basis, t) = setup();
        let d = mode_in_time(&basis, &t, 2, 1.0);
        let u = mode_in_time(&basis, &t, 7, 0.3);
        let l = linear_l(&basis, &d, &u).unwrap();
        let s = bilinear_b(&basis, &d, &u).unwrap().axpy(1.0, &bilinear_b(&basis, &u, &d).unwrap()).unwrap();
        assert!(l.axpy(-1.0, &s).unwrap().max_abs() <= 1e-12 * s.max_abs());
    }

    #[test]
    fn gate_and_zero_input() {
        let (basis, t) = setup();
        let cfg = PicardConfig::new(2.0, 3.0);
        let z = SpaceTimeField::zeros(Grid::Ball(basis.grid().clone()), t.clone());
        let r = picard_iterate(&z, &cfg, &basis).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.v.max_abs(), 0.0);
        let big = mode_in_time(&basis, &t, 0, 1.0);
        let n = critical(&big).unwrap();
        let scaled = big.scaled(1.5 * cfg.gate() / n);
        assert!(matches!(picard_iterate(&scaled, &cfg, &basis), Err(LabError::Smallness { .. })));
    }
}
