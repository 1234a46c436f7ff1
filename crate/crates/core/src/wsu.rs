//! Weak-strong decomposition, empirical constants and the epsilon
//! regularity pipeline.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ball::{random_solenoidal_ball, BallGrid};
use crate::dns::{energy_norm, generate_solution, DnsConfig, TorusState};
use crate::error::{LabError, Result};
use crate::field::{trace_on_sphere, Grid, SpaceTimeField, SphereTrace, VectorField};
use crate::mild::{bilinear_coeffs, picard_iterate, PicardConfig, PicardResult};
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::slicing::{b_l4_norm, build_slice, trace_l4_norm, SliceSelection};
use crate::stokes::{eigen_decompose, linear_lift, LiftConfig, LinearSolution, StokesEigenbasis};
use crate::torus::TorusGrid;

/// Relative slack on inequalities that involve estimated constants.
pub const CHECK_TOL: f64 = 0.1;

/// Relative slack on inequalities that only involve quadrature.
pub const QUADRATURE_TOL: f64 = 0.05;

fn critical(u: &SpaceTimeField) -> Result<f64> {
    mixed_norm(u, &NormSpec::critical(NormDomain::Full))
}

/// Grid and time resolution of the reference cylinder used for the
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsResolution {
    pub l_max: usize,
    pub n_radial: usize,
    pub n_frames: usize,
}

impl Default for ConstantsResolution {
    fn default() -> Self {
        ConstantsResolution {
            l_max: 6,
            n_radial: 16,
            n_frames: 49,
        }
    }
}

/// DNS batch that calibrates `eta_bar`: the configured run repeated at
/// each initial amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaCalibration {
    pub dns: DnsConfig,
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub hill_climb_steps: usize,
    pub top_candidates: usize,
    pub resolution: ConstantsResolution,
    /// Reference cylinder `B_radius x (t_start, 0)`.
    pub radius: f64,
    pub t_start: f64,
    /// Spatial dictionary: lowest Stokes modes plus seeded random fields.
    pub dictionary_modes: usize,
    pub dictionary_random: usize,
    /// Number of Legendre time profiles.
    pub dictionary_times: usize,
    /// Number of seeded caloric data sets for the lift constant.
    pub lift_dictionary: usize,
    pub lift: LiftConfig,
    pub eta: EtaCalibration,
}

impl ConstantsConfig {
    pub fn new(sample_count: usize, seed: u64, resolution: ConstantsResolution, eta: EtaCalibration) -> Self {
        ConstantsConfig {
            sample_count,
            seed,
            hill_climb_steps: 40,
            top_candidates: 3,
            resolution,
            radius: 0.75,
            t_start: -0.875,
            dictionary_modes: 3,
            dictionary_random: 3,
            dictionary_times: 2,
            lift_dictionary: 8,
            lift: LiftConfig::default(),
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.resolution;
        if self.sample_count == 0 || self.top_candidates == 0 || self.top_candidates > self.sample_count {
            return Err(LabError::Parameter("need 0 < top_candidates <= sample_count".into()));
        }
        if r.n_frames < 3 || r.l_max < 2 || r.n_radial < 4 {
            return Err(LabError::Parameter(format!("constants resolution {r:?} too coarse")));
        }
        if !(self.radius > 0.0 && self.radius < 1.0) || !(self.t_start < 0.0 && self.t_start >= -1.0) {
            return Err(LabError::Parameter("reference cylinder must lie inside Q_1".into()));
        }
        if self.dictionary_modes + self.dictionary_random == 0 || self.dictionary_times == 0 || self.lift_dictionary == 0 {
            return Err(LabError::Parameter("empty dictionary".into()));
        }
        if self.eta.amplitudes.is_empty() || self.eta.amplitudes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(LabError::Parameter("calibration amplitudes must be positive".into()));
        }
        if self.eta.dns.amplitude() == 0.0 {
            return Err(LabError::Parameter("calibration run has zero initial data".into()));
        }
        self.eta.dns.validate()
    }

    fn times(&self) -> Vec<f64> {
        let n = self.resolution.n_frames - 1;
        (0..=n).map(|i| self.t_start * (1.0 - i as f64 / n as f64)).collect()
    }
}

/// Outcome of one maximized quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotientEstimate {
    /// Best value after hill climbing.
    pub value: f64,
    /// Best value among the random samples.
    pub sampled_max: f64,
    pub sampled_mean: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaProvenance {
    pub runs: usize,
    pub gated: usize,
    /// `(kappa, critical norm, L6(Q_1/2), M (1 + eps), accepted)` per run.
    pub samples: Vec<(f64, f64, f64, f64, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsProvenance {
    pub config: ConstantsConfig,
    pub c0: QuotientEstimate,
    pub c1: QuotientEstimate,
    pub k: QuotientEstimate,
    pub eta: EtaProvenance,
    pub eta_bar_empirical: bool,
}

/// Estimated constants. Only `c0`, `c1`, `k` and `eta_bar` are stored;
/// everything else is derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsTable {
    pub c0: f64,
    pub c1: f64,
    pub k: f64,
    pub eta_bar: f64,
    pub provenance: Option<ConstantsProvenance>,
}

impl ConstantsTable {
    pub fn new(c0: f64, c1: f64, k: f64, eta_bar: f64) -> Result<Self> {
        for (name, v) in [("c0", c0), ("c1", c1), ("k", k), ("eta_bar", eta_bar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LabError::Parameter(format!("constant {name} = {v} must be positive and finite")));
            }
        }
        Ok(ConstantsTable {
            c0,
            c1,
            k,
            eta_bar,
            provenance: None,
        })
    }

    pub fn c2(&self) -> f64 {
        (1.0 / self.c0).min(1.0 / self.c1)
    }

    pub fn kappa_bar(&self) -> f64 {
        self.c2() / (4.0 * self.k)
    }

    pub fn c_thm(&self) -> f64 {
        self.k * (1.0 + self.c0 * self.c2())
    }

    pub fn eps_bar(&self) -> f64 {
        self.eta_bar / (2.0 * SQRT_2 * self.c_thm())
    }

    pub fn picard_config(&self) -> PicardConfig {
        PicardConfig::new(self.c0, self.c1)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    c0: f64,
    c1: f64,
    c2: f64,
    k: f64,
    kappa_bar: f64,
    eta_bar: f64,
    eps_bar: f64,
    c_thm: f64,
    provenance: Option<ConstantsProvenance>,
}

impl Serialize for ConstantsTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableRecord {
            c0: self.c0,
            c1: self.c1,
            c2: self.c2(),
            k: self.k,
            kappa_bar: self.kappa_bar(),
            eta_bar: self.eta_bar,
            eps_bar: self.eps_bar(),
            c_thm: self.c_thm(),
            provenance: self.provenance.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstantsTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = TableRecord::deserialize(d)?;
        let mut t = ConstantsTable::new(r.c0, r.c1, r.k, r.eta_bar).map_err(D::Error::custom)?;
        t.provenance = r.provenance;
        for (name, stored, derived) in [
            ("c2", r.c2, t.c2()),
            ("kappa_bar", r.kappa_bar, t.kappa_bar()),
            ("eps_bar", r.eps_bar, t.eps_bar()),
            ("c_thm", r.c_thm, t.c_thm()),
        ] {
            if stored != derived {
                return Err(D::Error::custom(format!(
                    "stored {name} = {stored:e} disagrees with the value {derived:e} derived from the table"
                )));
            }
        }
        Ok(t)
    }
}

/// Legendre polynomials on `[t_start, t_end]`.
fn legendre_profiles(times: &[f64], n: usize) -> Vec<Vec<f64>> {
    let (a, b) = (times[0], *times.last().unwrap());
    times
        .iter()
        .map(|&t| {
            let x = 2.0 * (t - a) / (b - a) - 1.0;
            let mut p = vec![1.0, x];
            for k in 1..n.saturating_sub(1) {
                let kf = k as f64;
                p.push(((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0));
            }
            p.truncate(n);
            p
        })
        .collect()
}

fn unit_l2(grid: &BallGrid, mut f: Vec<f64>) -> Vec<f64> {
    let q: Vec<f64> = f.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect();
    let n = grid.integrate(&q).sqrt();
    if n > 0.0 {
        f.iter_mut().for_each(|v| *v /= n);
    }
    f
}

/// Separable dictionary `psi_s(x) p_j(t)` with every ordered bilinear
/// product stored in modal form.
struct BilinearDictionary {
    basis: StokesEigenbasis,
    times: Vec<f64>,
    spatial: Vec<Vec<f64>>,
    profiles: Vec<Vec<f64>>,
    /// `products[i * d + j] = B(D_i, D_j)` as coefficient frames.
    products: Vec<Vec<Vec<f64>>>,
}

impl BilinearDictionary {
    fn build(cfg: &ConstantsConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let r = cfg.resolution;
        let g = Arc::new(BallGrid::new(r.l_max, r.n_radial, cfg.radius)?);
        let basis = eigen_decompose(&g)?;
        let times = cfg.times();
        let mut order: Vec<usize> = (0..basis.len()).collect();
        order.sort_by(|&a, &b| basis.modes()[a].eigenvalue.total_cmp(&basis.modes()[b].eigenvalue));
        let mut spatial: Vec<Vec<f64>> = order
            .iter()
            .take(cfg.dictionary_modes)
            .map(|&k| unit_l2(&g, basis.mode_field(k)))
            .collect();
        for _ in 0..cfg.dictionary_random {
            let f = random_solenoidal_ball(&g, rng, 3, 3);
            spatial.push(unit_l2(&g, f));
        }
        let profiles = legendre_profiles(&times, cfg.dictionary_times);
        let mut dict = BilinearDictionary {
            basis,
            times,
            spatial,
            profiles,
            products: Vec::new(),
        };
        let atoms: Vec<SpaceTimeField> = (0..dict.len())
            .map(|i| {
                let mut x = vec![0.0; dict.len()];
                x[i] = 1.0;
                dict.field(&x)
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, usize)> = (0..dict.len()).flat_map(|i| (0..dict.len()).map(move |j| (i, j))).collect();
        dict.products = pairs
            .par_iter()
            .map(|&(i, j)| bilinear_coeffs(&dict.basis, &atoms[i], &atoms[j]))
            .collect::<Result<_>>()?;
        Ok(dict)
    }

    fn len(&self) -> usize {
        self.spatial.len() * self.profiles[0].len()
    }

    /// `sum_{s,j} x[s * n_t + j] psi_s p_j`.
    fn field(&self, x: &[f64]) -> Result<SpaceTimeField> {
        let nt = self.profiles[0].len();
        let npts = self.spatial[0].len();
        let frames = self
            .profiles
            .iter()
            .map(|p| {
                let mut f = vec![0.0; npts];
                for (s, psi) in self.spatial.iter().enumerate() {
                    let c: f64 = (0..nt).map(|j| x[s * nt + j] * p[j]).sum();
                    if c != 0.0 {
                        f.iter_mut().zip(psi).for_each(|(v, w)| *v += c * w);
                    }
                }
                f
            })
            .collect();
        SpaceTimeField::new(Grid::Ball(self.basis.grid().clone()), self.times.clone(), frames)
    }

    /// `sum_{ij} w_ij B(D_i, D_j)` synthesized on the grid.
    fn combine(&self, w: impl Fn(usize, usize) -> f64) -> Result<SpaceTimeField> {
        let d = self.len();
        let nm = self.basis.len();
        let frames = (0..self.times.len())
            .map(|n| {
                let mut c = vec![0.0; nm];
                for i in 0..d {
                    for j in 0..d {
                        let wij = w(i, j);
                        if wij != 0.0 {
                            c.iter_mut().zip(&self.products[i * d + j][n]).for_each(|(v, p)| *v += wij * p);
                        }
                    }
                }
                self.basis.synthesize(&c)
            })
            .collect();
        SpaceTimeField::new(Grid::Ball(self.basis.grid().clone()), self.times.clone(), frames)
    }

    fn quotient(&self, x: &[f64], y: &[f64], symmetric: bool) -> Result<f64> {
        let den = critical(&self.field(x)?)? * critical(&self.field(y)?)?;
        if !(den > 0.0) {
            return Err(LabError::Sampling("dictionary combination has zero norm".into()));
        }
        let num = if symmetric {
            critical(&self.combine(|i, j| x[i] * y[j] + x[j] * y[i])?)?
        } else {
            critical(&self.combine(|i, j| x[i] * y[j])?)?
        };
        Ok(num / den)
    }
}

/// Heat flow of the seeded torus data `TorusState::random`.
pub fn caloric_field(grid: &Arc<BallGrid>, times: &[f64], seed: u64, k_max: f64) -> Result<SpaceTimeField> {
    let tg = TorusGrid::two_thirds(12)?;
    let s0 = TorusState::random(tg, seed, k_max, 1.0, times[0])?;
    let points = grid.positions();
    let frames = times
        .par_iter()
        .map(|&t| {
            let mut s = s0.clone();
            for (i, c) in (0..tg.len()).map(|i| (i, tg.wavevector(i))) {
                let k2 = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) as f64;
                let e = (-k2 * (t - times[0])).exp();
                for comp in s.spectrum.iter_mut() {
                    comp[i] *= e;
                }
            }
            s.evaluate(&points)
        })
        .collect();
    SpaceTimeField::new(Grid::Ball(grid.clone()), times.to_vec(), frames)
}

/// Linear lifts of a caloric dictionary; the lift is linear, so every
/// combination of the data is lifted by the same combination.
struct LiftDictionary {
    ubar: Vec<SpaceTimeField>,
    a: Vec<SphereTrace>,
    b: Vec<VectorField>,
}

impl LiftDictionary {
    fn build(cfg: &ConstantsConfig, seed: u64) -> Result<Self> {
        let r = cfg.resolution;
        let g1 = Arc::new(BallGrid::new(r.l_max, r.n_radial, 1.0)?);
        let basis = eigen_decompose(&Arc::new(g1.with_radius(cfg.radius)))?;
        let times = cfg.times();
        let mut dict = LiftDictionary {
            ubar: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
        };
        for i in 0..cfg.lift_dictionary {
            let k_max = [1.5, 2.5, 3.5][i % 3];
            let u = caloric_field(&g1, &times, seed.wrapping_add(i as u64), k_max)?;
            let a = trace_on_sphere(&u, cfg.radius)?;
            let b = u.frame(0);
            let lin = linear_lift(&basis, &a, &b, &cfg.lift)?;
            dict.ubar.push(lin.ubar);
            dict.a.push(a);
            dict.b.push(b);
        }
        Ok(dict)
    }

    fn quotient(&self, x: &[f64]) -> Result<f64> {
        let mut u = self.ubar[0].scaled(x[0]);
        let mut a = self.a[0].scaled(x[0]);
        let mut b = self.b[0].values.iter().map(|v| x[0] * v).collect::<Vec<_>>();
        for i in 1..x.len() {
            u = u.axpy(x[i], &self.ubar[i])?;
            for (fa, fi) in a.frames.iter_mut().zip(&self.a[i].frames) {
                fa.iter_mut().zip(fi).for_each(|(v, w)| *v += x[i] * w);
            }
            b.iter_mut().zip(&self.b[i].values).for_each(|(v, w)| *v += x[i] * w);
        }
        let den = trace_l4_norm(&a) + b_l4_norm(&VectorField::new(self.b[0].grid.clone(), b)?)?;
        if !(den > 0.0) {
            return Err(LabError::Sampling("lift data combination has zero norm".into()));
        }
        Ok(critical(&u)? / den)
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random sampling of `f` over pairs of unit vectors, then adaptive local
/// hill climbing from the best candidates.
fn maximize(
    dims: (usize, usize),
    cfg: &ConstantsConfig,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<QuotientEstimate> {
    let mut samples = Vec::with_capacity(cfg.sample_count);
    for _ in 0..cfg.sample_count {
        let x = random_unit(rng, dims.0);
        let y = random_unit(rng, dims.1);
        let q = f(&x, &y)?;
        if !q.is_finite() {
            return Err(LabError::Sampling(format!("non-finite quotient {q}")));
        }
        samples.push((q, x, y));
    }
    let sampled_mean = samples.iter().map(|s| s.0).sum::<f64>() / samples.len() as f64;
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sampled_max = samples[0].0;
    let mut best = sampled_max;
    let mut evaluations = samples.len();
    for (mut q, mut x, mut y) in samples.into_iter().take(cfg.top_candidates) {
        let mut sigma = 0.3;
        for _ in 0..cfg.hill_climb_steps {
            let mut step = |v: &[f64]| {
                let mut w: Vec<f64> = v.iter().map(|a| a + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                normalize(&mut w);
                w
            };
            let (nx, ny) = (step(&x), step(&y));
            let nq = f(&nx, &ny)?;
            evaluations += 1;
            if nq > q {
                (q, x, y) = (nq, nx, ny);
                sigma = (sigma * 1.5).min(1.0);
            } else {
                sigma = (sigma * 0.7).max(1e-3);
            }
        }
        best = best.max(q);
    }
    Ok(QuotientEstimate {
        value: best,
        sampled_max,
        sampled_mean,
        evaluations,
    })
}

/// Measures `(kappa, ||U||_crit on the slice, ||U||_{L6(Q_1/2)}, M)`.
fn eta_sample(u: &SpaceTimeField) -> Result<(SliceSelection, f64, f64, f64)> {
    let s = build_slice(u)?;
    let crit = slice_critical_norm(u, &s)?;
    let l6 = mixed_norm(u, &NormSpec::new(6.0, 6.0, NormSpec::parabolic(0.5))?)?;
    Ok((s, crit, l6, energy_norm(u)?))
}

fn slice_critical_norm(u: &SpaceTimeField, s: &SliceSelection) -> Result<f64> {
    mixed_norm(
        u,
        &NormSpec::critical(NormDomain::Cylinder {
            radius: s.r0,
            t_start: s.t0,
            t_end: 0.0,
        }),
    )
}

/// `eta_bar` as the largest critical norm among runs that pass the kappa
/// gate and keep `||U||_{L6(Q_1/2)} <= M (1 + eps)`.
pub fn calibrate_eta_bar(kappa_bar: f64, cal: &EtaCalibration) -> Result<(f64, EtaProvenance)> {
    let mut samples = Vec::new();
    let mut eta: f64 = 0.0;
    let mut gated = 0;
    for &amp in &cal.amplitudes {
        let run = generate_solution(&cal.dns.with_amplitude_scale(amp / cal.dns.amplitude()))?;
        let (sl, crit, l6, m) = eta_sample(&run.field)?;
        let pass_gate = sl.kappa < kappa_bar;
        let bound = m * (1.0 + run.l4_norm);
        let ok = pass_gate && l6 <= bound;
        gated += pass_gate as usize;
        if ok {
            eta = eta.max(crit);
        }
        samples.push((sl.kappa, crit, l6, bound, ok));
    }
    if !(eta > 0.0) {
        return Err(LabError::Sampling("no calibration run passed the kappa gate and the L6 check".into()));
    }
    Ok((
        eta,
        EtaProvenance {
            runs: cal.amplitudes.len(),
            gated,
            samples,
        },
    ))
}

/// Estimates `C0`, `C1`, `K` on the reference cylinder and calibrates
/// `eta_bar` on a DNS batch.
pub fn estimate_constants(cfg: &ConstantsConfig) -> Result<ConstantsTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bil = BilinearDictionary::build(cfg, &mut rng)?;
    let d = bil.len();
    let c0 = maximize((d, d), cfg, &mut rng, |x, y| bil.quotient(x, y, false))?;
    let c1 = maximize((d, d), cfg, &mut rng, |x, y| bil.quotient(x, y, true))?;
    drop(bil);
    let lift = LiftDictionary::build(cfg, rng.random())?;
    let k = maximize((cfg.lift_dictionary, 0), cfg, &mut rng, |x, _| lift.quotient(x))?;
    drop(lift);
    let partial = ConstantsTable::new(c0.value, c1.value, k.value, 1.0)?;
    let (eta_bar, eta) = calibrate_eta_bar(partial.kappa_bar(), &cfg.eta)?;
    let mut t = ConstantsTable::new(c0.value, c1.value, k.value, eta_bar)?;
    t.provenance = Some(ConstantsProvenance {
        config: cfg.clone(),
        c0,
        c1,
        k,
        eta,
        eta_bar_empirical: true,
    });
    Ok(t)
}

/// Samples of `E(t) = sup_{s <= t} 1/2 ||f(s)||^2 + int_{t0}^t ||grad f||^2`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyFunctional {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnergyFunctional {
    pub fn of(f: &SpaceTimeField) -> Result<Self> {
        let g = f.grid.ball()?;
        let half_sq: Vec<f64> = f
            .frames
            .iter()
            .map(|fr| 0.5 * g.integrate(&fr.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect::<Vec<_>>()))
            .collect();
        let grads: Vec<f64> = f.frames.par_iter().map(|fr| g.gradient_sq_integral(fr)).collect();
        let t = &f.time_nodes;
        let mut values = Vec::with_capacity(t.len());
        let (mut sup, mut int) = (0.0_f64, 0.0);
        for i in 0..t.len() {
            if i > 0 {
                int += 0.5 * (t[i] - t[i - 1]) * (grads[i] + grads[i - 1]);
            }
            sup = sup.max(half_sq[i]);
            values.push(sup + int.max(0.0));
        }
        Ok(EnergyFunctional {
            times: t.clone(),
            values,
        })
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Settings of the decomposition stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub lift: LiftConfig,
    pub picard_max_iterations: usize,
    pub picard_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lift: LiftConfig::default(),
            picard_max_iterations: 50,
            picard_tolerance: 1e-8,
        }
    }
}

/// `U = Ubar + V` on `B_r0 x (t0, 0)` with `W = U - Ubar` kept for
/// comparison against `V`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub ubar: LinearSolution,
    pub v: PicardResult,
    pub w: SpaceTimeField,
    pub report: DecompositionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub r0: f64,
    pub t0: f64,
    pub kappa: f64,
    pub kappa_bar: f64,
    /// `||V - W||_{L2(Q)} / max(||V||, ||W||)`.
    pub agreement: f64,
    pub energy: EnergyFunctional,
    /// `E_{V-W}(0) / max(E_V(0), E_W(0))`.
    pub energy_ratio: f64,
    pub v_l2: f64,
    pub w_l2: f64,
    /// `||Ubar + V||_crit`.
    pub critical_norm: f64,
    /// `C_thm kappa (1 + tol)`.
    pub critical_bound: f64,
    pub critical_holds: bool,
    pub picard_iterations: usize,
    pub picard_contraction: f64,
    pub ubar_ratio: f64,
}

fn l2_q(f: &SpaceTimeField) -> Result<f64> {
    mixed_norm(f, &NormSpec::new(2.0, 2.0, NormDomain::Full)?)
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Builds `Ubar`, `V` and `W = U - Ubar` on the selected cylinder.
pub fn decompose_and_verify(
    u: &SpaceTimeField,
    slice: &SliceSelection,
    table: &ConstantsTable,
    cfg: &PipelineConfig,
) -> Result<Decomposition> {
    let kappa_bar = table.kappa_bar();
    if !(slice.kappa < kappa_bar) {
        return Err(LabError::Smallness {
            gate: "kappa < kappa_bar".into(),
            measured: slice.kappa,
            threshold: kappa_bar,
        });
    }
    let g1 = u.grid.ball()?;
    let g = Arc::new(g1.with_radius(slice.r0));
    let basis = eigen_decompose(&g).map_err(|e| e.in_stage("basis"))?;
    let ubar = linear_lift(&basis, &slice.a, &slice.b, &cfg.lift).map_err(|e| e.in_stage("linear lift"))?;
    let mut pc = table.picard_config();
    pc.max_iterations = cfg.picard_max_iterations;
    pc.tolerance = cfg.picard_tolerance;
    let v = picard_iterate(&ubar.ubar, &pc, &basis).map_err(|e| e.in_stage("picard"))?;
    let w = u.from_time(slice.t0)?.resample(&g)?.axpy(-1.0, &ubar.ubar)?;
    let diff = v.v.axpy(-1.0, &w)?;
    let (v_l2, w_l2) = (l2_q(&v.v)?, l2_q(&w)?);
    let energy = EnergyFunctional::of(&diff)?;
    let ev = EnergyFunctional::of(&v.v)?.last();
    let ew = EnergyFunctional::of(&w)?.last();
    let critical_norm = critical(&ubar.ubar.axpy(1.0, &v.v)?)?;
    let critical_bound = table.c_thm() * slice.kappa * (1.0 + CHECK_TOL);
    let report = DecompositionReport {
        r0: slice.r0,
        t0: slice.t0,
        kappa: slice.kappa,
        kappa_bar,
        agreement: rel(l2_q(&diff)?, v_l2.max(w_l2)),
        energy_ratio: rel(energy.last(), ev.max(ew)),
        energy,
        v_l2,
        w_l2,
        critical_norm,
        critical_bound,
        critical_holds: critical_norm <= critical_bound,
        picard_iterations: v.iterations,
        picard_contraction: v.contraction,
        ubar_ratio: ubar.report.ratio,
    };
    Ok(Decomposition { ubar, v, w, report })
}

/// Nonnegative envelope `P(eps, M) = c_1 + c_eps eps + c_M M + c_epsM eps M + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    /// Coefficients of `[1, eps, M, eps M]`, all nonnegative.
    pub coefficients: [f64; 4],
    /// Shift that lifts the fit above every sample.
    pub offset: f64,
    pub residual: f64,
}

impl Envelope {
    pub fn eval(&self, eps: f64, m: f64) -> f64 {
        let c = &self.coefficients;
        c[0] + c[1] * eps + c[2] * m + c[3] * eps * m + self.offset
    }
}

fn features(eps: f64, m: f64) -> [f64; 4] {
    [1.0, eps, m, eps * m]
}

/// Nonnegative least squares over `[1, eps, M, eps M]` by enumerating the
/// active sets, followed by an offset making it an upper envelope.
pub fn fit_envelope(points: &[(f64, f64, f64)]) -> Result<Envelope> {
    if points.is_empty() || points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
        return Err(LabError::Sampling("envelope fit needs finite samples".into()));
    }
    let mut best: Option<([f64; 4], f64)> = None;
    for mask in 1u32..16 {
        let cols: Vec<usize> = (0..4).filter(|c| mask & (1 << c) != 0).collect();
        let a = nalgebra::DMatrix::from_fn(points.len(), cols.len(), |i, j| features(points[i].0, points[i].1)[cols[j]]);
        let b = nalgebra::DVector::from_iterator(points.len(), points.iter().map(|p| p.2));
        let Ok(x) = a.clone().svd(true, true).solve(&b, 1e-12) else {
            continue;
        };
        if x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            continue;
        }
        let res = (&a * &x - &b).norm();
        let mut c = [0.0; 4];
        for (j, &col) in cols.iter().enumerate() {
            c[col] = x[j];
        }
        if best.as_ref().is_none_or(|(_, r)| res < *r - 1e-15) {
            best = Some((c, res));
        }
    }
    let (coefficients, residual) = best.unwrap_or(([0.0; 4], f64::INFINITY));
    let mut env = Envelope {
        coefficients,
        offset: 0.0,
        residual,
    };
    env.offset = points.iter().map(|p| p.2 - env.eval(p.0, p.1)).fold(0.0, f64::max);
    if !residual.is_finite() {
        env.residual = points.iter().map(|p| (p.2 - env.eval(p.0, p.1)).powi(2)).sum::<f64>().sqrt();
    }
    Ok(env)
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl InequalityCheck {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        InequalityCheck {
            name: name.into(),
            lhs,
            rhs,
            passed: lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsRegReport {
    /// `||U||_{L4(Q_1)}`.
    pub epsilon: f64,
    pub eps_bar: f64,
    pub m: f64,
    pub kappa: f64,
    /// `||U||_{L4(t0, 0; L6(B_r0))}`.
    pub critical_norm: f64,
    pub sup_norm_quarter: f64,
    pub l6_norm_half: f64,
    pub checks: Vec<InequalityCheck>,
    pub decomposition: DecompositionReport,
    /// Set by batch runs.
    pub envelope: Option<Envelope>,
    pub eta_bar_empirical: bool,
}

impl EpsRegReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Slicing, decomposition and the three inequality checks on a field over
/// `Q_1`.
pub fn epsreg_pipeline(u: &SpaceTimeField, table: &ConstantsTable, cfg: &PipelineConfig) -> Result<EpsRegReport> {
    let epsilon = mixed_norm(u, &NormSpec::new(4.0, 4.0, NormSpec::parabolic(1.0))?)?;
    let eps_bar = table.eps_bar();
    if !(epsilon < eps_bar) {
        return Err(LabError::Smallness {
            gate: "epsilon < eps_bar".into(),
            measured: epsilon,
            threshold: eps_bar,
        });
    }
    let slice = build_slice(u).map_err(|e| e.in_stage("slicing"))?;
    let dec = decompose_and_verify(u, &slice, table, cfg)?;
    let critical_norm = slice_critical_norm(u, &slice)?;
    let l6 = mixed_norm(u, &NormSpec::new(6.0, 6.0, NormSpec::parabolic(0.5))?)?;
    let sup = mixed_norm(u, &NormSpec::new(f64::INFINITY, f64::INFINITY, NormSpec::parabolic(0.25))?)?;
    let m = energy_norm(u)?;
    let tol = 1.0 + CHECK_TOL;
    let checks = vec![
        InequalityCheck::le("critical norm", critical_norm, 2.0 * SQRT_2 * epsilon * table.c_thm() * tol),
        InequalityCheck::le("reconstructed critical norm", dec.report.critical_norm, dec.report.critical_bound),
        InequalityCheck::le("L6(Q_1/2)", l6, m * (1.0 + epsilon) * tol),
        InequalityCheck {
            name: "sup on Q_1/4 finite".into(),
            lhs: sup,
            rhs: f64::INFINITY,
            passed: sup.is_finite(),
        },
    ];
    Ok(EpsRegReport {
        epsilon,
        eps_bar,
        m,
        kappa: slice.kappa,
        critical_norm,
        sup_norm_quarter: sup,
        l6_norm_half: l6,
        checks,
        decomposition: dec.report,
        envelope: None,
        eta_bar_empirical: true,
    })
}

/// Runs the pipeline over a batch and fits the envelope of the sup norm.
pub fn epsreg_batch(
    fields: &[SpaceTimeField],
    table: &ConstantsTable,
    cfg: &PipelineConfig,
) -> Result<(Vec<EpsRegReport>, Envelope)> {
    let mut reports = fields
        .iter()
        .map(|u| epsreg_pipeline(u, table, cfg))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64, f64)> = reports.iter().map(|r| (r.epsilon, r.m, r.sup_norm_quarter)).collect();
    let env = fit_envelope(&pts)?;
    for r in reports.iter_mut() {
        r.envelope = Some(env.clone());
    }
    Ok((reports, env))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_constants_follow_the_entries() {
        let t = ConstantsTable::new(2.0, 5.0, 1.5, 0.3).unwrap();
        assert_eq!(t.c2(), 0.2);
        assert!((t.kappa_bar() - 0.2 / 6.0).abs() < 1e-15);
        assert!((t.c_thm() - 1.5 * 1.4).abs() < 1e-15);
        assert!((t.eps_bar() - 0.3 / (2.0 * SQRT_2 * 2.1)).abs() < 1e-15);
        assert!(ConstantsTable::new(0.0, 1.0, 1.0, 1.0).is_err());
        let s = serde_json::to_string(&t).unwrap();
        let back: ConstantsTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let tampered = s.replace(&format!("\"c2\":{}", t.c2()), "\"c2\":0.25");
        assert!(serde_json::from_str::<ConstantsTable>(&tampered).is_err());
    }

    #[test]
    fn legendre_profiles_are_orthogonal() {
        let n = 401;
        let t: Vec<f64> = (0..n).map(|i| -0.5 + 0.5 * i as f64 / (n - 1) as f64).collect();
        let p = legendre_profiles(&t, 3);
        let dot = |a: usize, b: usize| {
            let f: Vec<f64> = p.iter().map(|r| r[a] * r[b]).collect();
            crate::quadrature::trapezoid(&t, &f)
        };
        assert!(dot(0, 1).abs() < 1e-12 && dot(1, 2).abs() < 1e-5 && dot(0, 2).abs() < 1e-5);
        assert!((dot(1, 1) - 0.5 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn envelope_recovers_a_nonnegative_polynomial() {
        let pts: Vec<(f64, f64, f64)> = (0..12)
            .map(|i| {
                let e = 0.05 * (1 + i % 4) as f64;
                let m = 0.3 + 0.2 * (i / 4) as f64;
                (e, m, 0.1 + 2.0 * e * m)
            })
            .collect();
        let env = fit_envelope(&pts).unwrap();
        assert!(env.residual < 1e-12);
        assert!((env.coefficients[0] - 0.1).abs() < 1e-10 && (env.coefficients[3] - 2.0).abs() < 1e-10);
        assert!(env.coefficients.iter().all(|c| *c >= 0.0));
        // A decreasing trend cannot be followed with nonnegative coefficients.
        let down: Vec<(f64, f64, f64)> = (1..6).map(|i| (0.1 * i as f64, 1.0, 1.0 - 0.1 * i as f64)).collect();
        let env = fit_envelope(&down).unwrap();
        assert!(env.coefficients.iter().all(|c| *c >= 0.0));
        assert!(down.iter().all(|p| env.eval(p.0, p.1) >= p.2 - 1e-12));
    }

    #[test]
    fn energy_functional_is_monotone_and_zero_for_zero() {
        let g = Arc::new(BallGrid::new(3, 8, 0.8).unwrap());
        let t: Vec<f64> = (0..9).map(|i| -0.5 + 0.0625 * i as f64).collect();
        let z = SpaceTimeField::zeros(Grid::Ball(g.clone()), t.clone());
        let e = EnergyFunctional::of(&z).unwrap();
        assert!(e.values.iter().all(|v| *v == 0.0));
        let frames = t
            .iter()
            .map(|&s| g.positions().iter().flat_map(|p| [p[1] * (1.0 + s.sin()), 0.0, 0.0]).collect())
            .collect();
        let f = SpaceTimeField::new(Grid::Ball(g), t, frames).unwrap();
        let e = EnergyFunctional::of(&f).unwrap();
        assert!(e.is_nondecreasing() && e.last() > 0.0);
    }
}
