//! The very weak solve and the linear lift reproduce an exact solution of
//! the unsteady Stokes system from its own boundary and initial data.

use std::sync::Arc;

use nse_lab::ball::BallGrid;
use nse_lab::field::{trace_on_sphere, Grid, SpaceTimeField, VectorField};
use nse_lab::stokes::{eigen_decompose, linear_lift, veryweak_solve, BoundaryData, LiftConfig};

/// Divergence-free solutions of the heat equation; with zero pressure each
/// term solves the Stokes system exactly.
fn exact(p: [f64; 3], t: f64) -> [f64; 3] {
    let e2 = (-2.0 * t).exp();
    let e3 = (-3.0 * t).exp();
    let s1 = 0.5 * e2 * (p[1] + p[2] + 0.3).sin();
    let c2 = 0.3 * e2 * (p[0] - p[2]).cos();
    let c3 = 0.4 * e3 * (p[0] + p[1] + p[2]).cos();
    [
        e2 * p[0].sin() * p[1].cos() + s1 + c3,
        -e2 * p[0].cos() * p[1].sin() + 0.4 * s1 + c2 - c3,
        -0.4 * s1,
    ]
}

fn sample(g: &Arc<BallGrid>, t: &[f64]) -> SpaceTimeField {
    let frames = t
        .iter()
        .map(|&s| g.positions().iter().flat_map(|p| exact(*p, s)).collect())
        .collect();
    SpaceTimeField::new(Grid::Ball(g.clone()), t.to_vec(), frames).unwrap()
}

fn relative_l2(g: &BallGrid, got: &SpaceTimeField, want: &SpaceTimeField) -> f64 {
    let sq = |f: &[f64]| -> Vec<f64> { f.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect() };
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in got.frames.iter().zip(&want.frames) {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        num += g.integrate(&sq(&d));
        den += g.integrate(&sq(b));
    }
    (num / den).sqrt()
}

fn times(t0: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t0 - t0 * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn very_weak_solve_reproduces_an_exact_solution_and_converges() {
    let mut errs = Vec::new();
    for (l, nr, nt) in [(6, 16, 33), (8, 24, 65)] {
        let g = Arc::new(BallGrid::new(l, nr, 0.75).unwrap());
        let basis = eigen_decompose(&g).unwrap();
        let t = times(-0.8, nt);
        let u = sample(&g, &t);
        let a = BoundaryData::new(trace_on_sphere(&u, 0.75).unwrap()).unwrap();
        assert!(a.flux_removed < 1e-12);
        let b0 = VectorField::new(Grid::Ball(g.clone()), u.frames[0].clone()).unwrap();
        let s = veryweak_solve(&basis, &t, Some(&a), None, Some(&b0)).unwrap();
        errs.push(relative_l2(&g, &s.field, &u));
    }
    assert!(errs[0] < 1e-4, "{errs:?}");
    assert!(errs[1] < 1e-6 && errs[1] < errs[0] / 20.0, "{errs:?}");
}

#[test]
fn linear_lift_reproduces_an_exact_solution_from_slice_data() {
    let mut errs = Vec::new();
    for (l, nr, nt) in [(6, 16, 33), (8, 24, 65)] {
        let g1 = Arc::new(BallGrid::new(l, nr, 1.0).unwrap());
        let g = Arc::new(g1.with_radius(0.8));
        let basis = eigen_decompose(&g).unwrap();
        let t = times(-0.9, nt);
        let u = sample(&g1, &t);
        let a = trace_on_sphere(&u, 0.8).unwrap();
        let b = VectorField::new(Grid::Ball(g1.clone()), u.frames[0].clone()).unwrap();
        let s = linear_lift(&basis, &a, &b, &LiftConfig::default()).unwrap();
        assert!(s.report.lift.max_flux < 1e-8);
        errs.push(relative_l2(&g, &s.ubar, &sample(&g, &t)));
    }
    assert!(errs[0] < 2e-4, "{errs:?}");
    assert!(errs[1] < 1e-5 && errs[1] < errs[0], "{errs:?}");
}
