//! DNS against the exact Taylor-Green decay, and the weak-strong pipeline on
//! gated, ungated and trivial data.

use std::sync::Arc;

use nse_lab::ball::BallGrid;
use nse_lab::dns::{energy_norm, generate_solution, InitialCondition};
use nse_lab::field::{Grid, SpaceTimeField};
use nse_lab::presets::SMALL;
use nse_lab::slicing::build_slice;
use nse_lab::wsu::{decompose_and_verify, epsreg_pipeline, ConstantsTable, PipelineConfig};
use nse_lab::LabError;

fn table() -> ConstantsTable {
    ConstantsTable::new(0.058, 0.042, 0.30, 0.22).unwrap()
}

#[test]
fn taylor_green_energy_norm_matches_the_exact_decay() {
    let amp = 0.8;
    let run = generate_solution(&SMALL.dns(InitialCondition::TaylorGreen { amplitude: amp }, 0)).unwrap();
    let g = run.field.grid.ball().unwrap();
    // A (sin x cos y, -cos x sin y, 0) e^{-2 (t - t_start)} solves the
    // equations exactly: the nonlinear term is a pressure gradient.
    let frames = run
        .field
        .time_nodes
        .iter()
        .map(|&t| {
            let d = amp * (-2.0 * (t + 1.0)).exp();
            g.positions()
                .iter()
                .flat_map(|p| [d * p[0].sin() * p[1].cos(), -d * p[0].cos() * p[1].sin(), 0.0])
                .collect()
        })
        .collect();
    let exact = SpaceTimeField::new(run.field.grid.clone(), run.field.time_nodes.clone(), frames).unwrap();
    let m = energy_norm(&exact).unwrap();
    assert!((run.energy.m / m - 1.0).abs() < 0.01, "{} vs {m}", run.energy.m);
    let worst = run
        .field
        .frames
        .iter()
        .zip(&exact.frames)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6 * amp, "{worst}");
    assert!(run.energy.torus_energy_defect < 1e-6);
}

#[test]
fn small_data_decomposes_with_agreement_and_large_data_is_rejected() {
    let run = generate_solution(&SMALL.dns(InitialCondition::Random { k_max: 2.5, amplitude: 0.3 }, 3)).unwrap();
    let s = build_slice(&run.field).unwrap();
    let d = decompose_and_verify(&run.field, &s, &table(), &PipelineConfig::default()).unwrap();
    assert!(d.report.agreement < 0.02, "{}", d.report.agreement);
    assert!(d.report.energy_ratio < 5e-3);
    assert!(d.report.critical_holds);
    assert!(d.report.energy.is_nondecreasing());

    let tight = ConstantsTable::new(0.058, 0.042, 30.0, 0.22).unwrap();
    let e = decompose_and_verify(&run.field, &s, &tight, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(e, LabError::Smallness { .. }), "{e}");
    let e = epsreg_pipeline(&run.field, &table(), &PipelineConfig::default()).unwrap_err();
    assert!(matches!(e, LabError::Smallness { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn zero_field_passes_every_check_with_zero_norms() {
    let g = Arc::new(BallGrid::new(6, 16, 1.0).unwrap());
    let t: Vec<f64> = (0..33).map(|i| -1.0 + i as f64 / 32.0).collect();
    let u = SpaceTimeField::new(Grid::Ball(g.clone()), t.clone(), vec![vec![0.0; 3 * g.len()]; t.len()]).unwrap();
    let r = epsreg_pipeline(&u, &table(), &PipelineConfig::default()).unwrap();
    assert!(r.passed());
    assert_eq!(r.epsilon, 0.0);
    assert_eq!(r.sup_norm_quarter, 0.0);
    assert_eq!(r.decomposition.v_l2, 0.0);
}
