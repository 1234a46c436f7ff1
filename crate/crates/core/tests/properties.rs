//! Property tests of invariants that hold for arbitrary inputs.

use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nse_lab::ball::{random_solenoidal_ball, BallGrid};
use nse_lab::experiment::{ExperimentConfig, ResolutionChoice, Stage};
use nse_lab::extension::{extend_divfree, CutoffSpec};
use nse_lab::field::{Grid, SpaceTimeField, VectorField};
use nse_lab::norms::{mixed_norm, NormDomain, NormSpec};
use nse_lab::nsf;
use nse_lab::presets::Resolution;
use nse_lab::stokes::{eigen_decompose, StokesEigenbasis};
use nse_lab::wsu::{fit_envelope, ConstantsTable};

fn grid() -> &'static Arc<BallGrid> {
    static G: OnceLock<Arc<BallGrid>> = OnceLock::new();
    G.get_or_init(|| Arc::new(BallGrid::new(4, 10, 1.0).unwrap()))
}

fn basis() -> &'static StokesEigenbasis {
    static B: OnceLock<StokesEigenbasis> = OnceLock::new();
    B.get_or_init(|| eigen_decompose(grid()).unwrap())
}

fn solenoidal(seed: u64) -> Vec<f64> {
    random_solenoidal_ball(grid(), &mut ChaCha8Rng::seed_from_u64(seed), 4, 4)
}

fn field(seed: u64, nt: usize) -> SpaceTimeField {
    let g = grid();
    let f = solenoidal(seed);
    let t: Vec<f64> = (0..nt).map(|i| -1.0 + i as f64 / (nt - 1) as f64).collect();
    let frames = t.iter().map(|s| f.iter().map(|v| v * (1.0 + s * s)).collect()).collect();
    SpaceTimeField::new(Grid::Ball(g.clone()), t, frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nsf_round_trip_is_bit_exact(seed in any::<u64>(), nt in 2usize..6) {
        let u = field(seed, nt);
        let bytes = nsf::encode_field(&u).unwrap();
        let back = nsf::decode_field(&bytes).unwrap();
        prop_assert!(back.frames.iter().flatten().zip(u.frames.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(nsf::encode_field(&back).unwrap(), bytes);
    }

    #[test]
    fn mixed_norms_are_absolutely_homogeneous(seed in any::<u64>(), s in -20.0f64..20.0, q in 2.0f64..8.0) {
        let u = field(seed, 5);
        for spec in [NormSpec::critical(NormDomain::Full), NormSpec::new(q, q, NormSpec::parabolic(0.5)).unwrap()] {
            let a = mixed_norm(&u.scaled(s), &spec).unwrap();
            let b = s.abs() * mixed_norm(&u, &spec).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{} vs {}", a, b);
        }
    }

    #[test]
    fn extension_is_linear_and_exact_inside(s1 in any::<u64>(), s2 in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = grid();
        let cut = CutoffSpec::default();
        let (f1, f2) = (solenoidal(s1), solenoidal(s2));
        let combo: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
        let e = |f: Vec<f64>| extend_divfree(&VectorField::new(Grid::Ball(g.clone()), f).unwrap(), &cut).unwrap();
        let (e1, e2, ec) = (e(f1), e(f2), e(combo.clone()));
        let scale = ec.annulus.values.iter().chain(&ec.inner.values).fold(1.0f64, |m, v| m.max(v.abs()));
        for (w, p, q) in [(&ec.inner.values, &e1.inner.values, &e2.inner.values), (&ec.annulus.values, &e1.annulus.values, &e2.annulus.values)] {
            for k in 0..w.len() {
                prop_assert!((w[k] - a * p[k] - b * q[k]).abs() <= 1e-10 * scale);
            }
        }
        let back = ec.evaluate_on(g).unwrap();
        let na = g.n_angular();
        for (ir, &r) in g.radii().iter().enumerate() {
            if r <= cut.inner {
                for k in 3 * ir * na..3 * (ir + 1) * na {
                    prop_assert!((back[k] - combo[k]).abs() <= 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn stokes_semigroup_composes_and_contracts(seed in any::<u64>(), t1 in 0.0f64..0.05, t2 in 0.0f64..0.05) {
        let b = basis();
        let u = VectorField::new(Grid::Ball(grid().clone()), solenoidal(seed)).unwrap();
        let two = b.semigroup_apply(&b.semigroup_apply(&u, t1).unwrap(), t2).unwrap();
        let one = b.semigroup_apply(&u, t1 + t2).unwrap();
        let scale = one.max_abs().max(1e-300);
        prop_assert!(two.values.iter().zip(&one.values).all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
        let c = b.project(&u.values);
        let e0: f64 = c.iter().map(|x| x * x).sum();
        let e1: f64 = b.semigroup_coeffs(&c, t1 + t2).iter().map(|x| x * x).sum();
        prop_assert!(e1 <= e0 * (1.0 + 1e-14));
    }

    #[test]
    fn constants_table_derivations_survive_serialization(
        c0 in 1e-3f64..10.0, c1 in 1e-3f64..10.0, k in 1e-3f64..10.0, eta in 1e-3f64..10.0,
    ) {
        let t = ConstantsTable::new(c0, c1, k, eta).unwrap();
        prop_assert_eq!(t.c2(), (1.0 / c0).min(1.0 / c1));
        prop_assert!((t.kappa_bar() - t.c2() / (4.0 * k)).abs() <= 1e-14 * t.kappa_bar());
        prop_assert!((t.c_thm() - k * (1.0 + c0 * t.c2())).abs() <= 1e-14 * t.c_thm());
        let back: ConstantsTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn envelope_is_nonnegative_and_dominates_its_samples(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..5.0, 0.0f64..50.0), 1..12),
    ) {
        let env = fit_envelope(&pts).unwrap();
        prop_assert!(env.coefficients.iter().all(|c| *c >= 0.0) && env.offset >= 0.0);
        for (e, m, s) in pts {
            prop_assert!(env.eval(e, m) >= s - 1e-9 * (1.0 + s));
        }
    }

    #[test]
    fn refinement_grows_every_parameter(n in 4usize..40, l in 2usize..16, extra in 0usize..16, frames in 8usize..512, dt in 1e-4f64..0.1) {
        let r = Resolution { torus_n: 2 * n, l_max: l, n_radial: 2 * l + extra, n_frames: frames, dt };
        prop_assume!(r.validate().is_ok());
        let f = r.refined();
        prop_assert!(f.validate().is_ok());
        prop_assert!(f.torus_n > r.torus_n && f.l_max > r.l_max && f.n_radial > r.n_radial && f.n_frames > r.n_frames && f.dt < r.dt);
    }

    #[test]
    fn experiment_configs_round_trip(seed in any::<u64>(), samples in 1usize..1000, preset in 0usize..3) {
        let mut cfg = ExperimentConfig::new(Stage::ConstantsEstimate { samples });
        cfg.seed = seed;
        cfg.resolution = [ResolutionChoice::Small, ResolutionChoice::Medium, ResolutionChoice::Default][preset];
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
