//! Pseudo-spectral Navier-Stokes on the torus `[-pi, pi)^3` with unit
//! viscosity, restricted to the unit ball to supply data on `Q_1`.
//!
//! The nonlinearity is taken in divergence form, `-P div(u (x) u)`, with
//! the products formed on the collocation grid and the result truncated to
//! the dealiasing ball. Time stepping is RK4 on the integrating-factor
//! variable `e^{|k|^2 t} u_k`, so the viscous term is exact.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ball::{BallGrid, BallGridSpec};
use crate::error::{LabError, Result};
use crate::field::{Grid, SpaceTimeField};
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::torus::{
    dealias, leray_project_spectrum, BandLimited, TorusFft, TorusGrid,
};

/// Largest admissible `dt sum_i max|u_i| / dx`.
pub const CFL_MAX: f64 = 1.0;

type Spectrum = [Vec<Complex64>; 3];

fn zero_spectrum(n: usize) -> Spectrum {
    let z = vec![Complex64::new(0.0, 0.0); n];
    [z.clone(), z.clone(), z]
}

/// Velocity coefficients `u(x) = sum_k u_k e^{i k.x}` at a time.
#[derive(Debug, Clone)]
pub struct TorusState {
    pub grid: TorusGrid,
    pub spectrum: Spectrum,
    pub time: f64,
}

impl TorusState {
    pub fn zeros(grid: TorusGrid, time: f64) -> Self {
        TorusState {
            grid,
            spectrum: zero_spectrum(grid.len()),
            time,
        }
    }

    /// Checks solenoidality and the reality symmetry `u_{-k} = conj(u_k)`.
    pub fn new(grid: TorusGrid, spectrum: Spectrum, time: f64) -> Result<Self> {
        if spectrum.iter().any(|c| c.len() != grid.len()) {
            return Err(LabError::Parameter("spectrum does not match the torus grid".into()));
        }
        let s = TorusState { grid, spectrum, time };
        let scale = s.max_coefficient().max(f64::MIN_POSITIVE);
        if s.max_divergence() > 1e-13 * scale.max(1.0) {
            return Err(LabError::Solenoidality(format!(
                "spectrum has k.u_k up to {:e}",
                s.max_divergence()
            )));
        }
        if s.reality_defect() > 1e-13 * scale.max(1.0) {
            return Err(LabError::Precondition("spectrum is not Hermitian".into()));
        }
        Ok(s)
    }

    /// `A (sin x cos y, -cos x sin y, 0)`.
    pub fn taylor_green(grid: TorusGrid, amplitude: f64, time: f64) -> Self {
        let mut s = Self::zeros(grid, time);
        let q = Complex64::new(0.25 * amplitude, 0.0);
        // sin x cos y = sum over (+-1, +-1) of -i/4 s1 e^{i(k1 x + k2 y)}.
        for (k1, k2) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
            let idx = grid.index_of([k1, k2, 0]).expect("grid holds |k| = 1");
            s.spectrum[0][idx] = Complex64::new(0.0, -(k1 as f64)) * q;
            s.spectrum[1][idx] = Complex64::new(0.0, k2 as f64) * q;
        }
        s
    }

    /// Seeded solenoidal data on `0 < |k| <= k_max` with box RMS speed
    /// `amplitude`. Coefficients are drawn in a fixed wavevector order, so
    /// the same seed gives the same field on every grid that resolves it.
    pub fn random(grid: TorusGrid, seed: u64, k_max: f64, amplitude: f64, time: f64) -> Result<Self> {
        if k_max > grid.dealias_radius() {
            return Err(LabError::Parameter(format!(
                "k_max {k_max} exceeds the dealiasing radius {}",
                grid.dealias_radius()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Self::zeros(grid, time);
        let kk = k_max.floor() as i64;
        for a in -kk..=kk {
            for b in -kk..=kk {
                for c in -kk..=kk {
                    let draw: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    let k2 = (a * a + b * b + c * c) as f64;
                    // Keep the half space (a, b, c) > 0 lexicographically; the
                    // other half follows from the reality condition.
                    if k2 == 0.0 || k2 > k_max * k_max + 1e-12 || (a, b, c) < (0, 0, 0) {
                        continue;
                    }
                    let v: [Complex64; 3] = std::array::from_fn(|i| Complex64::new(draw[2 * i], draw[2 * i + 1]));
                    let kf = [a as f64, b as f64, c as f64];
                    let dot = v[0] * kf[0] + v[1] * kf[1] + v[2] * kf[2];
                    let i = grid.index_of([a, b, c]).expect("mode inside the grid");
                    let j = grid.index_of([-a, -b, -c]).expect("mode inside the grid");
                    for d in 0..3 {
                        let p = v[d] - dot * (kf[d] / k2);
                        s.spectrum[d][i] = p;
                        s.spectrum[d][j] = p.conj();
                    }
                }
            }
        }
        let e: f64 = s.spectrum.iter().flat_map(|c| c.iter()).map(|v| v.norm_sqr()).sum();
        Ok(if e > 0.0 { s.scaled(amplitude / e.sqrt()) } else { s })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.spectrum.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    fn max_coefficient(&self) -> f64 {
        self.spectrum
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    /// `max_k |k . u_k|`.
    pub fn max_divergence(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let k = self.grid.wavevector(i);
                (0..3)
                    .map(|c| self.spectrum[c][i] * k[c] as f64)
                    .sum::<Complex64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }

    fn reality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.grid.len() {
            let k = self.grid.wavevector(i);
            if let Some(j) = self.grid.index_of([-k[0], -k[1], -k[2]]) {
                for c in 0..3 {
                    worst = worst.max((self.spectrum[c][i] - self.spectrum[c][j].conj()).norm());
                }
            }
        }
        worst
    }

    /// `1/2 int |u|^2` over the box.
    pub fn energy(&self) -> f64 {
        let s: f64 = self.spectrum.iter().flat_map(|c| c.iter()).map(|v| v.norm_sqr()).sum();
        0.5 * (2.0 * PI).powi(3) * s
    }

    /// `int |grad u|^2` over the box.
    pub fn dissipation(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.grid.len() {
            let k = self.grid.wavevector(i);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            s += k2 * (0..3).map(|c| self.spectrum[c][i].norm_sqr()).sum::<f64>();
        }
        (2.0 * PI).powi(3) * s
    }

    /// Share of the energy carried by `|k| > (2/3) k_dealias`.
    pub fn tail_fraction(&self) -> f64 {
        let cut = 2.0 / 3.0 * self.grid.dealias_radius();
        let (mut tail, mut total) = (0.0, 0.0);
        for i in 0..self.grid.len() {
            let k = self.grid.wavevector(i);
            let kn = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            let e: f64 = (0..3).map(|c| self.spectrum[c][i].norm_sqr()).sum();
            total += e;
            if kn > cut {
                tail += e;
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }

    /// Exact trigonometric evaluation at arbitrary points.
    pub fn evaluate(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let s = &self.spectrum;
        let vals = BandLimited::from_spectra(&self.grid, &[&s[0], &s[1], &s[2]]).evaluate(points);
        let mut out = vec![0.0; 3 * points.len()];
        for (i, o) in out.chunks_mut(3).enumerate() {
            for c in 0..3 {
                o[c] = vals[c][i];
            }
        }
        out
    }
}

/// Plans and multipliers for one torus grid.
#[derive(Debug, Clone)]
pub struct Dns {
    fft: TorusFft,
    k2: Vec<f64>,
}

impl Dns {
    pub fn new(grid: TorusGrid) -> Self {
        let k2 = (0..grid.len())
            .map(|i| {
                let k = grid.wavevector(i);
                (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
            })
            .collect();
        Dns {
            fft: TorusFft::new(grid),
            k2,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.fft.grid()
    }

    /// `-P div(u (x) u)` and the CFL speed `max sum_i |u_i|`.
    fn nonlinear(&self, s: &Spectrum) -> (Spectrum, f64) {
        let g = *self.grid();
        let u = [self.fft.inverse(&s[0]), self.fft.inverse(&s[1]), self.fft.inverse(&s[2])];
        let speed = (0..g.len())
            .map(|i| u[0][i].abs() + u[1][i].abs() + u[2][i].abs())
            .fold(0.0, f64::max);
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let prods: Vec<Vec<Complex64>> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let p: Vec<f64> = u[a].iter().zip(&u[b]).map(|(x, y)| x * y).collect();
                self.fft.forward(&p)
            })
            .collect();
        let slot = |a: usize, b: usize| -> &Vec<Complex64> {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            &prods[pairs.iter().position(|&p| p == (a, b)).unwrap()]
        };
        let mut out = zero_spectrum(g.len());
        for j in 0..3 {
            for idx in 0..g.len() {
                let k = g.wavevector(idx);
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..3 {
                    acc += Complex64::new(0.0, k[i] as f64) * slot(i, j)[idx];
                }
                out[j][idx] = -acc;
            }
            dealias(&g, &mut out[j]);
        }
        leray_project_spectrum(&g, &mut out);
        (out, speed)
    }

    fn combine(&self, terms: &[(&Spectrum, f64, f64)]) -> Spectrum {
        // Sum of coef * e^{-|k|^2 tau} * s over the terms (s, coef, tau).
        let n = self.grid().len();
        let mut out = zero_spectrum(n);
        for c in 0..3 {
            for idx in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, coef, tau) in terms {
                    acc += s[c][idx] * (*coef * (-self.k2[idx] * tau).exp());
                }
                out[c][idx] = acc;
            }
        }
        out
    }

    /// One integrating-factor RK4 step; rejects steps violating the CFL bound.
    pub fn step(&self, state: &TorusState, dt: f64) -> Result<TorusState> {
        self.step_with_cfl(state, dt).map(|(s, _)| s)
    }

    /// As [`Dns::step`], also returning the CFL number at the start of the step.
    pub fn step_with_cfl(&self, state: &TorusState, dt: f64) -> Result<(TorusState, f64)> {
        if state.grid != *self.grid() {
            return Err(LabError::Parameter("state grid differs from the solver grid".into()));
        }
        if !(dt > 0.0) {
            return Err(LabError::Parameter(format!("time step {dt} must be positive")));
        }
        let u = &state.spectrum;
        let h = dt;
        let (k1, speed) = self.nonlinear(u);
        let cfl = h * speed / self.grid().spacing();
        if cfl > CFL_MAX {
            return Err(LabError::Stability(format!(
                "CFL number {cfl:.3} exceeds {CFL_MAX} at t = {}",
                state.time
            )));
        }
        let u2 = self.combine(&[(u, 1.0, h / 2.0), (&k1, h / 2.0, h / 2.0)]);
        let (k2, _) = self.nonlinear(&u2);
        let u3 = self.combine(&[(u, 1.0, h / 2.0), (&k2, h / 2.0, 0.0)]);
        let (k3, _) = self.nonlinear(&u3);
        let u4 = self.combine(&[(u, 1.0, h), (&k3, h, h / 2.0)]);
        let (k4, _) = self.nonlinear(&u4);
        let next = self.combine(&[
            (u, 1.0, h),
            (&k1, h / 6.0, h),
            (&k2, h / 3.0, h / 2.0),
            (&k3, h / 3.0, h / 2.0),
            (&k4, h / 6.0, 0.0),
        ]);
        Ok((
            TorusState {
                grid: state.grid,
                spectrum: next,
                time: state.time + h,
            },
            cfl,
        ))
    }
}

/// One step with freshly planned transforms.
pub fn dns_step(state: &TorusState, dt: f64) -> Result<TorusState> {
    Dns::new(state.grid).step(state, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    TaylorGreen { amplitude: f64 },
    /// Seeded solenoidal field on `0 < |k| <= k_max` with box RMS speed `amplitude`.
    Random { k_max: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsConfig {
    pub n_per_axis: usize,
    /// Largest time step; each frame interval is split into an even number
    /// of equal steps no longer than this.
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_frames: usize,
    pub initial: InitialCondition,
    pub seed: u64,
    /// Ball grid of radius one receiving the restriction.
    pub ball: BallGridSpec,
}

impl DnsConfig {
    pub fn validate(&self) -> Result<()> {
        TorusGrid::two_thirds(self.n_per_axis)?;
        BallGrid::from_spec(&self.ball)?;
        if (self.ball.radius - 1.0).abs() > 1e-12 {
            return Err(LabError::Parameter("the DNS restriction ball must have radius 1".into()));
        }
        if !(self.dt > 0.0) || !(self.t_end > self.t_start) || self.n_frames < 2 {
            return Err(LabError::Parameter("invalid DNS time settings".into()));
        }
        Ok(())
    }

    pub fn frame_times(&self) -> Vec<f64> {
        let n = self.n_frames - 1;
        (0..=n)
            .map(|i| {
                if i == n {
                    self.t_end
                } else {
                    self.t_start + (self.t_end - self.t_start) * i as f64 / n as f64
                }
            })
            .collect()
    }

    pub fn initial_state(&self) -> Result<TorusState> {
        let g = TorusGrid::two_thirds(self.n_per_axis)?;
        Ok(match self.initial {
            InitialCondition::Zero => TorusState::zeros(g, self.t_start),
            InitialCondition::TaylorGreen { amplitude } => TorusState::taylor_green(g, amplitude, self.t_start),
            InitialCondition::Random { k_max, amplitude } => {
                TorusState::random(g, self.seed, k_max, amplitude, self.t_start)?
            }
        })
    }

    /// Same run with the initial amplitude multiplied by `s`.
    pub fn with_amplitude_scale(&self, s: f64) -> Self {
        let mut c = *self;
        c.initial = match self.initial {
            InitialCondition::Zero => InitialCondition::Zero,
            InitialCondition::TaylorGreen { amplitude } => InitialCondition::TaylorGreen { amplitude: amplitude * s },
            InitialCondition::Random { k_max, amplitude } => InitialCondition::Random {
                k_max,
                amplitude: amplitude * s,
            },
        };
        c
    }

    pub fn amplitude(&self) -> f64 {
        match self.initial {
            InitialCondition::Zero => 0.0,
            InitialCondition::TaylorGreen { amplitude } | InitialCondition::Random { amplitude, .. } => amplitude,
        }
    }
}

/// Energy bookkeeping of a run.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    /// `(sup_t int_{B_1} |U|^2 + int int_{Q_1} |grad U|^2)^{1/2}`.
    pub m: f64,
    pub sup_ball_energy: f64,
    pub ball_dissipation: f64,
    /// `max_t |E(t) + int_{t_start}^t D - E(t_start)| / E(t_start)` on the torus.
    pub torus_energy_defect: f64,
    /// Largest share of energy beyond two thirds of the dealiasing radius.
    pub max_tail_fraction: f64,
    /// Largest CFL number met.
    pub max_cfl: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct DnsRun {
    pub config: DnsConfig,
    /// The solution restricted to `Q_1`.
    pub field: SpaceTimeField,
    pub energy: EnergyReport,
    /// `||U||_{L^4(Q_1)}`.
    pub l4_norm: f64,
    pub final_state: TorusState,
}

/// Evolves the configured data on `[t_start, t_end]` and stores the
/// restriction of every frame to the unit ball.
pub fn generate_solution(cfg: &DnsConfig) -> Result<DnsRun> {
    cfg.validate()?;
    let ball = Arc::new(BallGrid::from_spec(&cfg.ball)?);
    let points = ball.positions();
    let times = cfg.frame_times();
    let dns = Dns::new(TorusGrid::two_thirds(cfg.n_per_axis)?);
    let mut state = cfg.initial_state()?;
    let e0 = state.energy();
    let mut frames = Vec::with_capacity(times.len());
    frames.push(state.evaluate(&points));
    let mut dissipated = 0.0;
    let mut defect = 0.0_f64;
    let mut tail = state.tail_fraction();
    let mut max_cfl = 0.0_f64;
    let mut steps = 0;
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let mut m = (span / cfg.dt).ceil() as usize;
        m = m.max(2);
        m += m % 2;
        let h = span / m as f64;
        // Composite Simpson for the dissipation over the substeps.
        let mut d = vec![state.dissipation()];
        for _ in 0..m {
            let (next, cfl) = dns.step_with_cfl(&state, h)?;
            max_cfl = max_cfl.max(cfl);
            state = next;
            d.push(state.dissipation());
            steps += 1;
        }
        state.time = w[1];
        dissipated += (0..m / 2)
            .map(|j| h / 3.0 * (d[2 * j] + 4.0 * d[2 * j + 1] + d[2 * j + 2]))
            .sum::<f64>();
        if e0 > 0.0 {
            defect = defect.max((state.energy() + dissipated - e0).abs() / e0);
        }
        tail = tail.max(state.tail_fraction());
        frames.push(state.evaluate(&points));
    }
    let field = SpaceTimeField::new(Grid::Ball(ball.clone()), times.clone(), frames)?;
    let energy = energy_report(&field, defect, tail, max_cfl, steps)?;
    let l4_norm = mixed_norm(
        &field,
        &NormSpec::new(4.0, 4.0, NormDomain::Cylinder {
            radius: 1.0,
            t_start: -1.0,
            t_end: 0.0,
        })?,
    )?;
    Ok(DnsRun {
        config: *cfg,
        field,
        energy,
        l4_norm,
        final_state: state,
    })
}

/// `(sup_t int |U|^2, int int |grad U|^2)` for a field on a ball grid.
pub fn energy_parts(field: &SpaceTimeField) -> Result<(f64, f64)> {
    let g = field.grid.ball()?;
    let sq = |f: &Vec<f64>| -> f64 {
        let v: Vec<f64> = f.chunks(3).map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect();
        g.integrate(&v)
    };
    let sup = field.frames.iter().map(sq).fold(0.0, f64::max);
    let grads: Vec<f64> = field.frames.par_iter().map(|f| g.gradient_sq_integral(f)).collect();
    Ok((sup, crate::quadrature::trapezoid(&field.time_nodes, &grads)))
}

/// The energy norm `M` of a field on a ball grid.
pub fn energy_norm(field: &SpaceTimeField) -> Result<f64> {
    let (sup, diss) = energy_parts(field)?;
    Ok((sup + diss).max(0.0).sqrt())
}

fn energy_report(field: &SpaceTimeField, defect: f64, tail: f64, max_cfl: f64, steps: usize) -> Result<EnergyReport> {
    let (sup, diss) = energy_parts(field)?;
    Ok(EnergyReport {
        m: (sup + diss).max(0.0).sqrt(),
        sup_ball_energy: sup,
        ball_dissipation: diss,
        torus_energy_defect: defect,
        max_tail_fraction: tail,
        max_cfl,
        steps,
    })
}

/// Result of matching `||U||_{L^4(Q_1)}` to a target by rescaling the data.
#[derive(Debug, Clone)]
pub struct TargetedRun {
    pub run: DnsRun,
    pub target: f64,
    pub rounds: usize,
    pub relative_error: f64,
}

/// Secant iteration on the initial amplitude so that `||U||_{L^4(Q_1)}`
/// meets `target` within `1e-3` relative, in at most three reruns after the
/// first.
pub fn generate_with_target(cfg: &DnsConfig, target: f64) -> Result<TargetedRun> {
    if !(target > 0.0) {
        return Err(LabError::Parameter(format!("target norm {target} must be positive")));
    }
    if cfg.amplitude() == 0.0 {
        return Err(LabError::Parameter("cannot rescale zero initial data".into()));
    }
    let a0 = cfg.amplitude();
    let mut run = generate_solution(cfg)?;
    let mut hist = vec![(a0, run.l4_norm)];
    let mut rounds = 0;
    while (run.l4_norm - target).abs() > 1e-3 * target && rounds < 3 {
        let (a1, n1) = *hist.last().unwrap();
        let a = if hist.len() < 2 {
            a1 * target / n1
        } else {
            let (ap, np) = hist[hist.len() - 2];
            if (n1 - np).abs() > 0.0 {
                a1 + (target - n1) * (a1 - ap) / (n1 - np)
            } else {
                a1 * target / n1
            }
        };
        run = generate_solution(&cfg.with_amplitude_scale(a / a0))?;
        hist.push((a, run.l4_norm));
        rounds += 1;
    }
    let relative_error = (run.l4_norm - target).abs() / target;
    Ok(TargetedRun {
        run,
        target,
        rounds,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(initial: InitialCondition) -> DnsConfig {
        DnsConfig {
            n_per_axis: 16,
            dt: 0.02,
            t_start: -1.0,
            t_end: 0.0,
            n_frames: 17,
            initial,
            seed: 3,
            ball: BallGridSpec {
                l_max: 4,
                n_radial: 10,
                radius: 1.0,
            },
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = TorusGrid::two_thirds(16).unwrap();
        let s = dns_step(&TorusState::zeros(g, 0.0), 0.1).unwrap();
        assert_eq!(s.energy(), 0.0);
        let run = generate_solution(&small(InitialCondition::Zero)).unwrap();
        assert_eq!(run.field.max_abs(), 0.0);
        assert_eq!(run.energy.m, 0.0);
    }

    #[test]
    fn taylor_green_decays_exactly() {
        let g = TorusGrid::two_thirds(32).unwrap();
        let dns = Dns::new(g);
        let mut s = TorusState::taylor_green(g, 1.0, 0.0);
        for _ in 0..20 {
            s = dns.step(&s, 0.05).unwrap();
        }
        let idx = g.index_of([1, 1, 0]).unwrap();
        let amp = s.spectrum[0][idx].norm() * 4.0;
        assert!((amp - (-2.0_f64).exp()).abs() < 1e-6 * (-2.0_f64).exp());
    }

    #[test]
    fn random_data_is_solenoidal_and_cfl_is_enforced() {
        let g = TorusGrid::two_thirds(16).unwrap();
        let s = TorusState::random(g, 9, 3.0, 1.0, 0.0).unwrap();
        let fine = TorusState::random(TorusGrid::two_thirds(24).unwrap(), 9, 3.0, 1.0, 0.0).unwrap();
        let p = [[0.1, -0.4, 0.7]];
        let (x, y) = (s.evaluate(&p), fine.evaluate(&p));
        assert!((0..3).all(|c| (x[c] - y[c]).abs() < 1e-13));
        assert!((s.energy() - 0.5 * (2.0 * PI).powi(3)).abs() < 1e-10);
        let checked = TorusState::new(g, s.spectrum.clone(), 0.0).unwrap();
        assert!(checked.max_divergence() < 1e-13);
        let big = s.scaled(200.0);
        assert!(matches!(dns_step(&big, 0.1), Err(LabError::Stability(_))));
    }

    #[test]
    fn energy_balance_converges_at_fourth_order() {
        let base = small(InitialCondition::Random {
            k_max: 2.5,
            amplitude: 0.5,
        });
        let coarse = generate_solution(&base).unwrap();
        let mut fine_cfg = base;
        fine_cfg.dt = base.dt / 2.0;
        let fine = generate_solution(&fine_cfg).unwrap();
        let (a, b) = (coarse.energy.torus_energy_defect, fine.energy.torus_energy_defect);
        assert!(a < 1e-5, "{a:e}");
        assert!(a / b > 10.0, "defects {a:e} -> {b:e}");
        assert!(coarse.energy.m > 0.0 && coarse.l4_norm > 0.0);
    }
}
