//! Acceptance suite. Each test prints one PASS/FAIL line to stderr.
//!
//! The base resolution is `small` (refined to `medium`); set
//! `NSE_LAB_ACCEPT_PRESET=medium` or `default` for a heavier run.

use std::io::Write;
use std::sync::OnceLock;

use nse_lab::acceptance::{AcceptanceConfig, Suite};
use nse_lab::presets::Resolution;

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let name = std::env::var("NSE_LAB_ACCEPT_PRESET").unwrap_or_else(|_| "small".into());
        let base = Resolution::preset(&name).expect("NSE_LAB_ACCEPT_PRESET must name a preset");
        Suite::new(AcceptanceConfig::new(base, 20240601))
    })
}

fn criterion(id: u8) {
    let out = suite().run(id);
    let _ = writeln!(std::io::stderr(), "{}", out.line());
    assert!(out.passed, "{}", out.line());
}

#[test]
fn c01_pigeonhole_certificates() {
    criterion(1);
}

#[test]
fn c02_extension_and_heat_lift() {
    criterion(2);
}

#[test]
fn c03_stokes_spectrum_semigroup_zero_data() {
    criterion(3);
}

#[test]
fn c04_energy_equality() {
    criterion(4);
}

#[test]
fn c05_smoothing_bank() {
    criterion(5);
}

#[test]
fn c06_picard_iteration() {
    criterion(6);
}

#[test]
fn c07_weak_strong_agreement() {
    criterion(7);
}

#[test]
fn c08_epsilon_regularity() {
    criterion(8);
}

#[test]
fn c09_constants_stability() {
    criterion(9);
}

#[test]
fn c10_determinism_and_format() {
    criterion(10);
}
