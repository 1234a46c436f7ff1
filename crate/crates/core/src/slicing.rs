//! Pigeonhole selection of a good radius `r0 in (5/8, 7/8)` and start time
//! `t0 in (-1, -3/4)`, and the boundary/initial data `(a, b)` they induce.
//!
//! Radius candidates are the midpoints of 64 equal cells of `(5/8, 7/8)`;
//! time candidates are the frame nodes strictly inside `(-1, -3/4)`. The
//! minimizer is returned, with ties going to the smallest radius and the
//! earliest time.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::field::{trace_on_sphere, SphereTrace, SpaceTimeField, VectorField};
use crate::norms::{mixed_norm, shell_integrals, spatial_integrals, NormDomain, NormSpec};

pub const RADIUS_RANGE: (f64, f64) = (0.625, 0.875);
pub const TIME_RANGE: (f64, f64) = (-1.0, -0.75);
pub const N_RADIUS_CANDIDATES: usize = 64;
/// Slack on the factor-4 pigeonhole certificates.
pub const CERTIFICATE_TOL: f64 = 0.05;

fn q1() -> NormDomain {
    NormDomain::Cylinder {
        radius: 1.0,
        t_start: -1.0,
        t_end: 0.0,
    }
}

/// `int_{Q_1} |u|^4`.
pub fn total_l4_integral(u: &SpaceTimeField) -> Result<f64> {
    Ok(mixed_norm(u, &NormSpec::new(4.0, 4.0, q1())?)?.powi(4))
}

pub fn radius_candidates() -> Vec<f64> {
    let (lo, hi) = RADIUS_RANGE;
    let h = (hi - lo) / N_RADIUS_CANDIDATES as f64;
    (0..N_RADIUS_CANDIDATES).map(|j| lo + (j as f64 + 0.5) * h).collect()
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn certify(kind: &str, value: f64, total: f64) -> Result<()> {
    if value > 4.0 * total * (1.0 + CERTIFICATE_TOL) {
        return Err(LabError::InternalConsistency(format!(
            "{kind} slice integral {value:e} exceeds 4 x total {total:e} beyond tolerance"
        )));
    }
    Ok(())
}

/// Shell in `(5/8, 7/8)` minimizing `int_{-1}^0 int_{|x|=r} |u|^4`.
pub fn select_radius(u: &SpaceTimeField) -> Result<(f64, f64)> {
    let radii = radius_candidates();
    let shells = shell_integrals(u, 4.0, &radii, -1.0, 0.0)?;
    let i = argmin(&shells);
    certify("shell", shells[i], total_l4_integral(u)?)?;
    Ok((radii[i], shells[i]))
}

/// Frame time in `(-1, -3/4)` minimizing `int_{B_1} |u(., t)|^4`.
pub fn select_time(u: &SpaceTimeField) -> Result<(f64, f64)> {
    let (lo, hi) = TIME_RANGE;
    let (t, g) = spatial_integrals(u, 4.0, &q1())?;
    let cand: Vec<(f64, f64)> = t
        .iter()
        .zip(&g)
        .filter(|(&tt, _)| tt > lo && tt < hi)
        .map(|(&tt, &v)| (tt, v))
        .collect();
    if cand.is_empty() {
        return Err(LabError::Domain("no frame node inside (-1, -3/4)".into()));
    }
    let vals: Vec<f64> = cand.iter().map(|c| c.1).collect();
    let i = argmin(&vals);
    certify("time", cand[i].1, total_l4_integral(u)?)?;
    Ok(cand[i])
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSelection {
    pub r0: f64,
    pub t0: f64,
    pub shell_l4_integral: f64,
    pub timeslice_l4_integral: f64,
    pub total_l4_integral: f64,
    /// `||u||_{L^4(Q_1)}`.
    pub l4_norm: f64,
    pub a_l4: f64,
    pub b_l4: f64,
    pub kappa: f64,
    #[serde(skip)]
    pub a: SphereTrace,
    #[serde(skip)]
    pub b: VectorField,
}

impl SliceSelection {
    pub fn shell_factor(&self) -> f64 {
        ratio(self.shell_l4_integral, self.total_l4_integral)
    }

    pub fn time_factor(&self) -> f64 {
        ratio(self.timeslice_l4_integral, self.total_l4_integral)
    }

    /// `kappa / ||u||_{L^4(Q_1)}`, bounded by `2 sqrt 2`.
    pub fn kappa_factor(&self) -> f64 {
        ratio(self.kappa, self.l4_norm)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// `||a||_{L^4(dB_r x (t_start, t_end))}` by the sphere and trapezoid rules.
pub fn trace_l4_norm(a: &SphereTrace) -> f64 {
    let g: Vec<f64> = a
        .frames
        .iter()
        .map(|f| {
            f.chunks(3)
                .enumerate()
                .map(|(i, v)| a.weight(i) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powi(2))
                .sum()
        })
        .collect();
    crate::quadrature::trapezoid(&a.time_nodes, &g).max(0.0).powf(0.25)
}

/// Runs both selections on a field over `Q_1` (ball grid of radius 1) and
/// assembles `a = u|_{dB_r0 x (t0, 0)}`, `b = u(., t0)` and `kappa`.
pub fn build_slice(u: &SpaceTimeField) -> Result<SliceSelection> {
    let ball = u.grid.ball()?;
    if (ball.radius() - 1.0).abs() > 1e-12 {
        return Err(LabError::Parameter("slicing expects a field on the unit ball".into()));
    }
    let total = total_l4_integral(u)?;
    let (r0, shell) = select_radius(u)?;
    let (t0, timeslice) = select_time(u)?;
    let i0 = u
        .time_nodes
        .iter()
        .position(|&t| t == t0)
        .ok_or_else(|| LabError::InternalConsistency("selected time is not a frame node".into()))?;
    let window = u.from_time(t0)?;
    let a = trace_on_sphere(&window, r0)?;
    let b = u.frame(i0);
    let a_l4 = trace_l4_norm(&a);
    let b_l4 = b_l4_norm(&b)?;
    let kappa = a_l4 + b_l4;
    let l4_norm = total.powf(0.25);
    let bound = 2.0 * std::f64::consts::SQRT_2 * l4_norm * (1.0 + CERTIFICATE_TOL);
    if kappa > bound {
        return Err(LabError::InternalConsistency(format!(
            "kappa {kappa:e} exceeds 2 sqrt 2 ||u||_4 = {bound:e}"
        )));
    }
    Ok(SliceSelection {
        r0,
        t0,
        shell_l4_integral: shell,
        timeslice_l4_integral: timeslice,
        total_l4_integral: total,
        l4_norm,
        a_l4,
        b_l4,
        kappa,
        a,
        b,
    })
}

/// `||b||_{L^4(B)}` for a ball-grid snapshot.
pub fn b_l4_norm(b: &VectorField) -> Result<f64> {
    let g = b.grid.ball()?;
    let v: Vec<f64> = b
        .values
        .chunks(3)
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powi(2))
        .collect();
    Ok(g.integrate(&v).max(0.0).powf(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::BallGrid;
    use crate::field::Grid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn field(n_t: usize, f: impl Fn([f64; 3], f64) -> [f64; 3]) -> SpaceTimeField {
        let b = Arc::new(BallGrid::new(4, 10, 1.0).unwrap());
        let t: Vec<f64> = (0..n_t).map(|i| -1.0 + i as f64 / (n_t - 1) as f64).collect();
        let frames = t
            .iter()
            .map(|&tt| b.positions().iter().flat_map(|p| f(*p, tt)).collect())
            .collect();
        SpaceTimeField::new(Grid::Ball(b), t, frames).unwrap()
    }

    #[test]
    fn constant_field_slice() {
        let c = 0.3;
        let u = field(33, |_, _| [c, 0.0, 0.0]);
        let s = build_slice(&u).unwrap();
        assert_eq!(s.r0, radius_candidates()[0]);
        assert!(s.t0 > -1.0 && s.t0 < -0.75);
        // Earliest candidate frame wins the tie.
        assert_eq!(s.t0, u.time_nodes[1]);
        let r0 = s.r0;
        let e = c * ((4.0 * PI * r0 * r0 * (-s.t0)).powf(0.25) + (4.0 * PI / 3.0_f64).powf(0.25));
        assert!((s.kappa - e).abs() < 1e-12, "{} vs {e}", s.kappa);
        assert!(s.kappa <= 2.0 * 2f64.sqrt() * c * (4.0 * PI / 3.0_f64).powf(0.25));
        assert!(s.shell_factor() <= 4.0 && s.time_factor() <= 4.0);
    }

    #[test]
    fn zero_field_and_late_start() {
        let u = field(17, |_, _| [0.0; 3]);
        let s = build_slice(&u).unwrap();
        assert_eq!(s.kappa, 0.0);
        let v = field(17, |p, t| if t < -0.75 { [0.0; 3] } else { [p[1], 0.0, 0.0] });
        let (_, ts) = select_time(&v).unwrap();
        assert_eq!(ts, 0.0);
    }
}
