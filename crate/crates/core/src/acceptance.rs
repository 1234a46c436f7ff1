//! The acceptance suite: ten property checks run at a base resolution and,
//! where a convergence claim is made, at one refinement step above it.
//!
//! Every criterion returns a [`CriterionOutcome`]; numerical failures inside
//! a criterion are reported as a failed outcome rather than an error.

use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::ball::{random_solenoidal_ball, BallGrid};
use crate::dns::{generate_solution, generate_with_target, InitialCondition};
use crate::error::{LabError, Result};
use crate::extension::{extend_divfree, heat_propagate, lift_trace_and_bounds, CutoffSpec, ExtendedField};
use crate::field::{Grid, SpaceTimeField, TensorField, VectorField};
use crate::mild::{bilinear_coeffs, picard_iterate};
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::nsf;
use crate::presets::Resolution;
use crate::quadrature::gauss_legendre_on;
use crate::slicing::build_slice;
use crate::stokes::{
    eigen_decompose, energy_equality_check, log_times, rough_fields, smoothing_bank, veryweak_solve,
};
use crate::wsu::{
    caloric_field, decompose_and_verify, epsreg_batch, estimate_constants, ConstantsConfig, ConstantsResolution,
    ConstantsTable, EtaCalibration, PipelineConfig,
};

/// Sample counts of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub dns_fields: usize,
    pub extension_fields: usize,
    pub forcings: usize,
    pub rough_fields: usize,
    pub ubar_samples: usize,
    pub wsu_runs: usize,
    pub epsreg_seeds: usize,
    pub constants_samples: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Counts {
            dns_fields: 100,
            extension_fields: 50,
            forcings: 20,
            rough_fields: 50,
            ubar_samples: 20,
            wsu_runs: 10,
            epsreg_seeds: 2,
            constants_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub base: Resolution,
    pub refined: Resolution,
    pub seed: u64,
    pub counts: Counts,
}

impl AcceptanceConfig {
    pub fn new(base: Resolution, seed: u64) -> Self {
        AcceptanceConfig {
            base,
            refined: base.refined(),
            seed,
            counts: Counts::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub summary: String,
    pub metrics: Value,
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.summary,
            self.seconds
        )
    }
}

pub const TITLES: [&str; 10] = [
    "pigeonhole certificates",
    "divergence-free extension and heat lift",
    "Stokes spectrum, semigroup, zero data",
    "energy equality",
    "smoothing bank",
    "Picard iteration",
    "weak-strong agreement",
    "end-to-end epsilon regularity",
    "constants stability",
    "determinism and NSF1 format",
];

/// Lazily shared state: the constants tables are costly and used by four
/// criteria.
pub struct Suite {
    pub cfg: AcceptanceConfig,
    tables: [OnceLock<std::result::Result<ConstantsTable, String>>; 2],
}

struct Check {
    passed: bool,
    summary: String,
    metrics: Value,
}

fn check(passed: bool, summary: String, metrics: Value) -> Result<Check> {
    Ok(Check {
        passed,
        summary,
        metrics,
    })
}

fn fmax(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    fmax(v.iter().map(|x| x.abs()))
}

impl Suite {
    pub fn new(cfg: AcceptanceConfig) -> Self {
        Suite {
            cfg,
            tables: [OnceLock::new(), OnceLock::new()],
        }
    }

    pub fn constants_config(&self, which: usize) -> ConstantsConfig {
        let seed = self.cfg.seed.wrapping_mul(2).wrapping_add(which as u64 + 1);
        constants_config(&self.cfg.base, seed, self.cfg.counts.constants_samples)
    }

    /// Constants table from the first (or second, disjoint) seed.
    pub fn table(&self, which: usize) -> Result<ConstantsTable> {
        self.tables[which]
            .get_or_init(|| estimate_constants(&self.constants_config(which)).map_err(|e| e.to_string()))
            .clone()
            .map_err(|e| LabError::Stage {
                stage: "constants".into(),
                source: Box::new(LabError::Sampling(e)),
            })
    }

    pub fn run(&self, id: u8) -> CriterionOutcome {
        let start = Instant::now();
        let res = match id {
            1 => self.pigeonhole(),
            2 => self.extension(),
            3 => self.spectrum(),
            4 => self.energy(),
            5 => self.smoothing(),
            6 => self.picard(),
            7 => self.agreement(),
            8 => self.epsreg(),
            9 => self.constants(),
            10 => self.determinism(),
            _ => Err(LabError::Parameter(format!("no acceptance criterion {id}"))),
        };
        let (passed, summary, metrics) = match res {
            Ok(c) => (c.passed, c.summary, c.metrics),
            Err(e) => (false, format!("error: {e}"), Value::Null),
        };
        CriterionOutcome {
            id,
            title: TITLES.get(id as usize - 1).unwrap_or(&"unknown").to_string(),
            passed,
            summary,
            metrics,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn run_all(&self) -> Vec<CriterionOutcome> {
        (1..=10).map(|id| self.run(id)).collect()
    }

    fn pigeonhole(&self) -> Result<Check> {
        let n = self.cfg.counts.dns_fields;
        let (mut shell, mut time, mut kappa) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut failures = 0;
        for i in 0..n {
            let amp = 0.1 + 0.2 * (i % 5) as f64;
            let seed = self.cfg.seed.wrapping_mul(1000).wrapping_add(i as u64);
            let run = generate_solution(&self.cfg.base.dns(InitialCondition::Random { k_max: 2.5, amplitude: amp }, seed))?;
            match build_slice(&run.field) {
                Ok(s) => {
                    shell = shell.max(s.shell_factor());
                    time = time.max(s.time_factor());
                    kappa = kappa.max(s.kappa_factor());
                }
                Err(_) => failures += 1,
            }
        }
        let limit = 4.0 * 1.05;
        let klimit = 2.0 * SQRT_2 * 1.05;
        check(
            failures == 0 && shell <= limit && time <= limit && kappa <= klimit,
            format!("{n} runs: max shell factor {shell:.3}, time factor {time:.3} (<= {limit:.2}); max kappa/||U||_4 {kappa:.3} (<= {klimit:.3})"),
            json!({"runs": n, "max_shell_factor": shell, "max_time_factor": time, "max_kappa_factor": kappa, "failures": failures}),
        )
    }

    fn extension(&self) -> Result<Check> {
        let r = self.cfg.base;
        let g = Arc::new(BallGrid::new(r.l_max, r.n_radial, 1.0)?);
        let cut = CutoffSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xe7);
        let n = self.cfg.counts.extension_fields;
        let fields: Vec<VectorField> = (0..n)
            .map(|_| {
                let mut f = random_solenoidal_ball(&g, &mut rng, r.l_max, 4);
                let m = max_abs(&f);
                f.iter_mut().for_each(|v| *v /= m);
                VectorField::new(Grid::Ball(g.clone()), f)
            })
            .collect::<Result<_>>()?;
        let ext: Vec<ExtendedField> = fields.iter().map(|b| extend_divfree(b, &cut)).collect::<Result<_>>()?;
        let (mut div, mut agree, mut lin, mut flux) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        let times: Vec<f64> = (0..9).map(|i| -0.5 + 0.0625 * i as f64).collect();
        for (i, (b, e)) in fields.iter().zip(&ext).enumerate() {
            let gi = e.inner.grid.ball()?;
            let ga = e.annulus.grid.ball()?;
            // Pointwise divergence of both pieces, the jump of E across
            // r = inner and the trace at r = outer.
            let d = max_abs(&gi.divergence(&e.inner.values)).max(max_abs(&ga.divergence(&e.annulus.values)));
            let jump: Vec<f64> = gi
                .trace(&e.inner.values, 3, cut.inner)?
                .iter()
                .zip(ga.trace(&e.annulus.values, 3, cut.inner)?)
                .map(|(a, b)| a - b)
                .collect();
            let outer = ga.trace(&e.annulus.values, 3, cut.outer)?;
            div = div.max(d).max(max_abs(&jump)).max(max_abs(&outer));
            let back = e.evaluate_on(&g)?;
            let na = g.n_angular();
            for (ir, &rad) in g.radii().iter().enumerate() {
                if rad <= cut.inner {
                    for k in 3 * ir * na..3 * (ir + 1) * na {
                        agree = agree.max((back[k] - b.values[k]).abs());
                    }
                }
            }
            let j = (i + 1) % n;
            let (alpha, beta) = (0.7 - 0.01 * i as f64, -1.3);
            let combo: Vec<f64> = b.values.iter().zip(&fields[j].values).map(|(x, y)| alpha * x + beta * y).collect();
            let ec = extend_divfree(&VectorField::new(b.grid.clone(), combo)?, &cut)?;
            for (whole, (p, q)) in [
                (&ec.inner.values, (&e.inner.values, &ext[j].inner.values)),
                (&ec.annulus.values, (&e.annulus.values, &ext[j].annulus.values)),
            ] {
                let scale = max_abs(whole).max(1.0);
                for k in 0..whole.len() {
                    lin = lin.max((whole[k] - alpha * p[k] - beta * q[k]).abs() / scale);
                }
            }
            let r0 = 0.625 + 0.25 * (i as f64 + 0.5) / n as f64;
            let h = heat_propagate(e, times[0], &times, 4.0)?;
            let (_, rep) = lift_trace_and_bounds(&h, &Arc::new(g.with_radius(r0)))?;
            flux = flux.max(rep.max_flux);
        }
        check(
            div <= 1e-8 && agree <= 1e-8 && lin <= 1e-10 && flux <= 1e-8,
            format!("{n} fields (max |b| = 1): div {div:.2e}, agreement {agree:.2e}, linearity {lin:.2e}, lift flux {flux:.2e}"),
            json!({"fields": n, "max_divergence": div, "max_agreement_error": agree, "max_linearity_defect": lin, "max_flux": flux}),
        )
    }

    fn spectrum(&self) -> Result<Check> {
        let z = bisect(|x| x.sin() / (x * x) - x.cos() / x, 4.0, 5.0);
        let exact = z * z;
        let mut errs = Vec::new();
        for r in [self.cfg.base, self.cfg.refined] {
            let b = eigen_decompose(&Arc::new(BallGrid::new(r.l_max, r.n_radial, 1.0)?))?;
            errs.push((b.smallest_eigenvalue() - exact).abs() / exact);
        }
        let b = eigen_decompose(&Arc::new(BallGrid::new(self.cfg.base.l_max, self.cfg.base.n_radial, 1.0)?))?;
        let g = Grid::Ball(b.grid().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5e);
        let mut semi = 0.0_f64;
        for _ in 0..5 {
            let u = VectorField::new(g.clone(), random_solenoidal_ball(b.grid(), &mut rng, 4, 4))?;
            let two = b.semigroup_apply(&b.semigroup_apply(&u, 0.003)?, 0.004)?;
            let one = b.semigroup_apply(&u, 0.007)?;
            let scale = one.max_abs().max(1e-300);
            semi = semi.max(fmax(two.values.iter().zip(&one.values).map(|(x, y)| (x - y).abs())) / scale);
        }
        let t: Vec<f64> = (0..33).map(|i| -0.5 + 0.5 * i as f64 / 32.0).collect();
        let zero = veryweak_solve(&b, &t, None, None, None)?;
        let zmax = fmax(zero.coeffs.iter().flatten().map(|c| c.abs()));
        check(
            errs.iter().all(|e| *e <= 5e-7) && semi <= 1e-12 && zmax <= 1e-12,
            format!(
                "lambda_1 rel. error {:.1e} / {:.1e} (base / refined) vs {exact:.8}; semigroup defect {semi:.1e}; zero-data max coefficient {zmax:.1e}",
                errs[0], errs[1]
            ),
            json!({"bessel_eigenvalue": exact, "relative_errors": errs, "semigroup_defect": semi, "zero_data_max": zmax}),
        )
    }

    fn energy(&self) -> Result<Check> {
        let r = self.cfg.base;
        let g = Arc::new(BallGrid::new(r.l_max, r.n_radial, 0.75)?);
        let basis = eigen_decompose(&g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xf0);
        let n = self.cfg.counts.forcings;
        let nt = r.n_frames + 1;
        let (mut worst, mut worst_order) = (0.0_f64, f64::INFINITY);
        for _ in 0..n {
            let f = RandomForcing::new(&mut rng);
            let mut d = Vec::new();
            for m in [nt, 2 * nt - 1] {
                let t: Vec<f64> = (0..m).map(|i| -0.8 + 0.8 * i as f64 / (m - 1) as f64).collect();
                let frames = t.iter().map(|&s| g.positions().iter().flat_map(|p| f.eval(*p, s)).collect()).collect();
                let tf = TensorField::new(Grid::Ball(g.clone()), t.clone(), frames)?;
                let s = veryweak_solve(&basis, &t, None, Some(&tf), None)?;
                d.push(energy_equality_check(&s.field, &tf)?.max_defect);
            }
            worst = worst.max(d[0]);
            worst_order = worst_order.min((d[0] / d[1]).log2());
        }
        check(
            worst <= 1e-5 && worst_order >= 3.0,
            format!("{n} forcings: max relative defect {worst:.2e} ({nt} nodes), min observed order {worst_order:.2} under dt halving"),
            json!({"forcings": n, "nodes": nt, "max_defect": worst, "min_order": worst_order}),
        )
    }

    fn smoothing(&self) -> Result<Check> {
        let r = self.cfg.base;
        let basis = eigen_decompose(&Arc::new(BallGrid::new(r.l_max, r.n_radial, 1.0)?))?;
        let times = log_times(1e-3, 1.0, 25);
        let n = self.cfg.counts.rough_fields;
        let mut sups = Vec::new();
        for seed in [self.cfg.seed ^ 0xa1, (self.cfg.seed ^ 0xa1).wrapping_add(1_000_003)] {
            sups.push(smoothing_bank(&basis, &rough_fields(&basis, n, seed)?, &times)?.sup);
        }
        let spread = (sups[0] / sups[1] - 1.0).abs();
        check(
            sups.iter().all(|s| s.is_finite() && *s > 0.0) && spread <= 0.1,
            format!("{n} fields per seed: sup {:.4} / {:.4}, spread {:.1}%", sups[0], sups[1], 100.0 * spread),
            json!({"fields": n, "sups": sups, "spread": spread}),
        )
    }

    fn picard(&self) -> Result<Check> {
        let table = self.table(0)?;
        let pc = table.picard_config();
        let gate = pc.gate();
        let r = self.cfg.base;
        let g1 = Arc::new(BallGrid::new(r.l_max, r.n_radial, 1.0)?);
        let g = Arc::new(g1.with_radius(0.75));
        let basis = eigen_decompose(&g)?;
        let m = (r.n_frames * 7) / 8 + 1;
        let t: Vec<f64> = (0..m).map(|i| -0.875 + 0.875 * i as f64 / (m - 1) as f64).collect();
        let n = self.cfg.counts.ubar_samples;
        let (mut worst_res, mut worst_iter, mut worst_ratio, mut worst_contraction) = (0.0_f64, 0usize, 0.0_f64, 0.0_f64);
        let mut ok = true;
        for i in 0..n {
            let u = caloric_field(&g1, &t, self.cfg.seed.wrapping_add(500 + i as u64), [1.5, 2.5, 3.5][i % 3])?.resample(&g)?;
            let frac = 0.02 * 30f64.powf(i as f64 / (n.max(2) - 1) as f64);
            let ubar = u.scaled(frac * gate / critical(&u)?);
            let p = picard_iterate(&ubar, &pc, &basis)?;
            let last = *p.residuals.last().unwrap_or(&0.0);
            let geometric = p.residuals.windows(2).all(|w| w[1] < w[0] || w[1] <= 1e-14);
            ok &= last <= 1e-8 && p.iterations <= 50 && geometric && p.bound_holds;
            worst_res = worst_res.max(last);
            worst_iter = worst_iter.max(p.iterations);
            worst_ratio = worst_ratio.max(p.v_norm / p.bound);
            worst_contraction = worst_contraction.max(p.contraction);
        }
        let u = caloric_field(&g1, &t, self.cfg.seed.wrapping_add(499), 2.5)?.resample(&g)?;
        let over = u.scaled(1.5 * gate / critical(&u)?);
        let ungated = matches!(picard_iterate(&over, &pc, &basis), Err(LabError::Smallness { .. }));
        let oracle = single_mode_oracle_error()?;
        check(
            ok && ungated && oracle <= 1e-8,
            format!(
                "{n} gated samples: max final residual {worst_res:.1e}, max iterations {worst_iter}, max contraction {worst_contraction:.3}, max ||V||/(4 C0 ||Ubar||^2) {worst_ratio:.3}; ungated rejected: {ungated}; single-mode oracle error {oracle:.1e}"
            ),
            json!({"samples": n, "gate": gate, "max_residual": worst_res, "max_iterations": worst_iter, "max_contraction": worst_contraction,
                   "max_bound_ratio": worst_ratio, "ungated_rejected": ungated, "oracle_error": oracle}),
        )
    }

    fn wsu_run(&self, res: Resolution, seed: u64, table: &ConstantsTable) -> Result<(f64, f64)> {
        let run = generate_solution(&res.dns(InitialCondition::Random { k_max: 2.5, amplitude: 0.3 }, seed))?;
        let s = build_slice(&run.field)?;
        let d = decompose_and_verify(&run.field, &s, table, &PipelineConfig::default())?;
        Ok((d.report.agreement, d.report.energy_ratio))
    }

    fn agreement(&self) -> Result<Check> {
        let table = self.table(0)?;
        let n = self.cfg.counts.wsu_runs;
        let mut rows = Vec::new();
        let mut ok = true;
        for i in 0..n {
            let seed = self.cfg.seed.wrapping_mul(7919).wrapping_add(i as u64);
            let (a0, e0) = self.wsu_run(self.cfg.base, seed, &table)?;
            let (a1, e1) = self.wsu_run(self.cfg.refined, seed, &table)?;
            ok &= a0 <= 0.02 && e0 <= 5e-3 && a1 < a0;
            rows.push(json!({"seed": seed, "agreement": [a0, a1], "energy_ratio": [e0, e1]}));
        }
        let worst = |k: &str, j: usize| fmax(rows.iter().map(|r| r[k][j].as_f64().unwrap_or(f64::INFINITY)));
        check(
            ok,
            format!(
                "{n} runs: max agreement {:.2e} -> {:.2e} after refinement (<= 2%), max energy ratio {:.2e} -> {:.2e} (<= 5e-3)",
                worst("agreement", 0),
                worst("agreement", 1),
                worst("energy_ratio", 0),
                worst("energy_ratio", 1)
            ),
            json!({"runs": rows}),
        )
    }

    fn epsreg(&self) -> Result<Check> {
        let table = self.table(0)?;
        let eps_bar = table.eps_bar();
        let factors = [0.2, 0.5, 1.0];
        let mut fields = Vec::new();
        let mut labels = Vec::new();
        for k in 0..self.cfg.counts.epsreg_seeds {
            let seed = self.cfg.seed.wrapping_mul(104_729).wrapping_add(k as u64);
            for f in factors {
                // Keep the largest target strictly inside the gate.
                let target = f * eps_bar * (1.0 - 2e-3);
                let cfg = self.cfg.base.dns(InitialCondition::Random { k_max: 2.5, amplitude: 0.3 }, seed);
                let tr = generate_with_target(&cfg, target)?;
                fields.push(tr.run.field);
                labels.push((seed, f, tr.relative_error));
            }
        }
        let (reports, env) = epsreg_batch(&fields, &table, &PipelineConfig::default())?;
        let mut monotone = true;
        for k in 0..self.cfg.counts.epsreg_seeds {
            let c: Vec<f64> = (0..factors.len()).map(|j| reports[k * factors.len() + j].critical_norm).collect();
            monotone &= c.windows(2).all(|w| w[1] > w[0]);
        }
        let all = reports.iter().all(|r| r.passed());
        let worst_crit = fmax(reports.iter().map(|r| r.checks[0].lhs / r.checks[0].rhs));
        let worst_l6 = fmax(reports.iter().map(|r| r.checks[2].lhs / r.checks[2].rhs));
        check(
            all && monotone,
            format!(
                "{} gated runs at eps/eps_bar in {factors:?} (eps_bar {eps_bar:.4}): max critical/bound {worst_crit:.3}, max L6/bound {worst_l6:.3}, monotone {monotone}; envelope coefficients {:?} + {:.2e}",
                reports.len(),
                env.coefficients,
                env.offset
            ),
            json!({"eps_bar": eps_bar, "runs": labels.iter().zip(&reports).map(|(l, r)| json!({"seed": l.0, "factor": l.1, "target_error": l.2,
                "epsilon": r.epsilon, "m": r.m, "critical_norm": r.critical_norm, "l6": r.l6_norm_half, "sup": r.sup_norm_quarter, "passed": r.passed()})).collect::<Vec<_>>(),
                "envelope": env, "eta_bar_empirical": true}),
        )
    }

    fn constants(&self) -> Result<Check> {
        let a = self.table(0)?;
        let b = self.table(1)?;
        let spread = |x: f64, y: f64| (x - y).abs() / x.min(y);
        let s = [spread(a.c0, b.c0), spread(a.c1, b.c1), spread(a.k, b.k)];
        let mut consistent = true;
        for t in [&a, &b] {
            let back: ConstantsTable = serde_json::from_str(&serde_json::to_string(t)?)?;
            consistent &= back == *t
                && t.c2() == (1.0 / t.c0).min(1.0 / t.c1)
                && t.kappa_bar() == t.c2() / (4.0 * t.k)
                && t.eps_bar() == t.eta_bar / (2.0 * SQRT_2 * t.k * (1.0 + t.c0 * t.c2()));
        }
        check(
            s.iter().all(|v| *v <= 0.15) && consistent,
            format!(
                "seeds {} / {}: C0 {:.4}/{:.4}, C1 {:.4}/{:.4}, K {:.4}/{:.4}; spreads {:.1}%, {:.1}%, {:.1}%; derived entries consistent: {consistent}",
                self.constants_config(0).seed,
                self.constants_config(1).seed,
                a.c0,
                b.c0,
                a.c1,
                b.c1,
                a.k,
                b.k,
                100.0 * s[0],
                100.0 * s[1],
                100.0 * s[2]
            ),
            json!({"tables": [a, b], "spreads": s}),
        )
    }

    fn determinism(&self) -> Result<Check> {
        let cfg = self.cfg.base.dns(InitialCondition::Random { k_max: 2.5, amplitude: 0.4 }, self.cfg.seed);
        let runs = [generate_solution(&cfg)?, generate_solution(&cfg)?];
        let bytes: Vec<Vec<u8>> = runs.iter().map(|r| nsf::encode_field(&r.field)).collect::<Result<_>>()?;
        let reports: Vec<String> = runs
            .iter()
            .map(|r| serde_json::to_string(&json!({"energy": r.energy, "l4": r.l4_norm})))
            .collect::<std::result::Result<_, _>>()?;
        let back = nsf::decode_field(&bytes[0])?;
        let exact = back.time_nodes.iter().zip(&runs[0].field.time_nodes).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.frames.iter().flatten().zip(runs[0].field.frames.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        let same = bytes[0] == bytes[1] && reports[0] == reports[1];
        let reencoded = nsf::encode_field(&back)? == bytes[0];
        check(
            same && exact && reencoded,
            format!(
                "repeat run identical: {same} (digest {}); NSF1 round trip bit-exact: {}",
                &nsf::digest(&bytes[0])[..16],
                exact && reencoded
            ),
            json!({"identical": same, "round_trip": exact && reencoded, "digest": nsf::digest(&bytes[0])}),
        )
    }
}

/// Constants estimation with the eta calibration batch run at `res`.
pub fn constants_config(res: &Resolution, seed: u64, samples: usize) -> ConstantsConfig {
    let dns = res.dns(
        InitialCondition::Random {
            k_max: 2.5,
            amplitude: 0.3,
        },
        seed,
    );
    ConstantsConfig::new(
        samples,
        seed,
        ConstantsResolution::default(),
        EtaCalibration {
            dns,
            amplitudes: vec![0.15, 0.3, 0.6, 1.2],
        },
    )
}

fn critical(u: &SpaceTimeField) -> Result<f64> {
    mixed_norm(u, &NormSpec::critical(NormDomain::Full))
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(a) * f(m) <= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

/// Smooth random forcing vanishing near the wall and at the start time.
struct RandomForcing {
    base: [f64; 9],
    slope: [[f64; 3]; 9],
    wave: [[f64; 3]; 9],
    phase: [f64; 9],
    growth: f64,
}

impl RandomForcing {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        let mut f = RandomForcing {
            base: [0.0; 9],
            slope: [[0.0; 3]; 9],
            wave: [[0.0; 3]; 9],
            phase: [0.0; 9],
            growth: 0.0,
        };
        for c in 0..9 {
            f.base[c] = n();
            f.phase[c] = n();
            for d in 0..3 {
                f.slope[c][d] = n();
                f.wave[c][d] = n();
            }
        }
        f.growth = n();
        f
    }

    fn eval(&self, p: [f64; 3], t: f64) -> [f64; 9] {
        let (t0, span) = (-0.8, 0.8);
        let th = (PI * (t - t0) / span).sin().powi(2) * (1.0 + 0.5 * self.growth * (t - t0));
        let bump = 1.0 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 0.5625;
        let mut out = [0.0; 9];
        for c in 0..9 {
            let dot = |v: &[f64; 3]| v[0] * p[0] + v[1] * p[1] + v[2] * p[2];
            out[c] = th * bump * (self.base[c] + 0.5 * dot(&self.slope[c]) + (dot(&self.wave[c]) + self.phase[c]).cos());
        }
        out
    }
}

/// Largest deviation of the single-mode bilinear term from a dense
/// Gauss-Legendre evaluation of the exact exponential integral.
fn single_mode_oracle_error() -> Result<f64> {
    let b = eigen_decompose(&Arc::new(BallGrid::new(4, 12, 0.8)?))?;
    let t: Vec<f64> = (0..257).map(|i| -0.5 + 0.5 * i as f64 / 256.0).collect();
    let amp = |s: f64| 1.0 + 0.5 * (3.0 * s).sin();
    let phi = b.mode_field(0);
    let frames = t.iter().map(|&s| phi.iter().map(|v| v * amp(s)).collect()).collect();
    let d = SpaceTimeField::new(Grid::Ball(b.grid().clone()), t.clone(), frames)?;
    let got = bilinear_coeffs(&b, &d, &d)?;
    let p = b.project(&b.grid().product_divergence(&phi, &phi));
    let (x, w) = gauss_legendre_on(40, 0.0, 1.0);
    let (mut scale, mut err) = (0.0_f64, 0.0_f64);
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
    Ok(if scale > 0.0 { err / scale } else { err })
}
