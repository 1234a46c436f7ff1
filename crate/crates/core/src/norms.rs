//! Mixed space-time Lebesgue norms and shell (coarea) integrals.
//!
//! Time integrals use the trapezoid rule on the frame nodes, with linear
//! interpolation at window edges that fall between nodes. Space integrals use
//! the ball quadrature (ray interpolation onto a sub-ball when the domain is
//! smaller than the grid) or, on the torus, the uniform rule restricted to
//! nodes inside the ball (first order in the boundary; used for cross-checks
//! only). `L^inf` norms are grid maxima and therefore lower bounds.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ball::BallGrid;
use crate::error::{LabError, Result};
use crate::field::{trace_on_sphere, Grid, SpaceTimeField};
use crate::quadrature::{gauss_legendre_on, trapezoid_window};

mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad exponent {s:?}"))),
        }
    }
}

/// Region of a space-time norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormDomain {
    /// Every grid node and every time node.
    Full,
    /// `B_radius` over every time node.
    Ball { radius: f64 },
    /// `B_radius x (t_start, t_end)`.
    Cylinder { radius: f64, t_start: f64, t_end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    #[serde(with = "exponent")]
    pub s: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub domain: NormDomain,
    #[serde(default)]
    pub critical: bool,
}

impl NormSpec {
    pub fn new(s: f64, q: f64, domain: NormDomain) -> Result<Self> {
        let spec = NormSpec {
            s,
            q,
            domain,
            critical: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `L^4_t L^6_x`, the scale-invariant pairing.
    pub fn critical(domain: NormDomain) -> Self {
        NormSpec {
            s: 4.0,
            q: 6.0,
            domain,
            critical: true,
        }
    }

    /// `Q_r = B_r x (-r^2, 0)`.
    pub fn parabolic(r: f64) -> NormDomain {
        NormDomain::Cylinder {
            radius: r,
            t_start: -r * r,
            t_end: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("s", self.s), ("q", self.q)] {
            if !(p >= 1.0) || p.is_nan() {
                return Err(LabError::Parameter(format!("exponent {name} = {p} must lie in [1, inf]")));
            }
        }
        if self.critical && (2.0 / self.s + 3.0 / self.q - 1.0).abs() > 1e-12 {
            return Err(LabError::Parameter(format!(
                "({}, {}) is flagged critical but 2/s + 3/q != 1",
                self.s, self.q
            )));
        }
        Ok(())
    }
}

/// Per-frame spatial quantity: `int |u|^q` (finite q) or `max |u|`.
enum Spatial {
    Ball(Arc<BallGrid>, Option<Arc<BallGrid>>),
    TorusMask(Vec<usize>, f64),
}

impl Spatial {
    fn new(grid: &Grid, radius: Option<f64>) -> Result<Self> {
        match grid {
            Grid::Ball(b) => match radius {
                None => Ok(Spatial::Ball(b.clone(), None)),
                Some(r) if (r - b.radius()).abs() <= 1e-12 * b.radius() => {
                    Ok(Spatial::Ball(b.clone(), None))
                }
                Some(r) if r > 0.0 && r < b.radius() => {
                    Ok(Spatial::Ball(b.clone(), Some(Arc::new(b.with_radius(r)))))
                }
                Some(r) => Err(LabError::Domain(format!(
                    "ball of radius {r} not inside grid of radius {}",
                    b.radius()
                ))),
            },
            Grid::Torus(t) => {
                let h3 = t.spacing().powi(3);
                match radius {
                    None => Ok(Spatial::TorusMask((0..t.len()).collect(), h3)),
                    Some(r) if r > 0.0 && r < std::f64::consts::PI => {
                        let idx = (0..t.len())
                            .filter(|&i| {
                                let p = t.position(i);
                                p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r * r
                            })
                            .collect();
                        Ok(Spatial::TorusMask(idx, h3))
                    }
                    Some(r) => Err(LabError::Domain(format!("ball of radius {r} not inside torus cell"))),
                }
            }
        }
    }

    fn eval(&self, frame: &[f64], q: f64) -> Result<f64> {
        let mag = |v: &[f64]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let pw = |m: f64| if q == 2.0 { m * m } else { m.powf(q) };
        match self {
            Spatial::Ball(src, target) => {
                let resampled;
                let (g, vals): (&BallGrid, &[f64]) = match target {
                    None => (src, frame),
                    Some(t) => {
                        resampled = src.resample(frame, 3, t)?;
                        (t, &resampled)
                    }
                };
                if q.is_infinite() {
                    Ok(vals.chunks(3).map(mag).fold(0.0, f64::max))
                } else {
                    Ok(vals
                        .chunks(3)
                        .enumerate()
                        .map(|(i, v)| g.weight(i) * pw(mag(v)))
                        .sum())
                }
            }
            Spatial::TorusMask(idx, h3) => {
                let it = idx.iter().map(|&i| mag(&frame[3 * i..3 * i + 3]));
                if q.is_infinite() {
                    Ok(it.fold(0.0, f64::max))
                } else {
                    Ok(h3 * it.map(pw).sum::<f64>())
                }
            }
        }
    }
}

/// Time window `[lo, hi]` of a domain on the field's nodes, checked.
fn time_window(u: &SpaceTimeField, domain: &NormDomain) -> Result<(f64, f64)> {
    let (t_first, t_last) = (u.time_nodes[0], *u.time_nodes.last().unwrap());
    match *domain {
        NormDomain::Cylinder { t_start, t_end, .. } => {
            if !(t_end > t_start) {
                return Err(LabError::Domain(format!("empty time window ({t_start}, {t_end})")));
            }
            let slack = 1e-12 * (1.0 + t_first.abs().max(t_last.abs()));
            if t_start < t_first - slack || t_end > t_last + slack {
                return Err(LabError::Domain(format!(
                    "time window ({t_start}, {t_end}) outside field times [{t_first}, {t_last}]"
                )));
            }
            Ok((t_start.max(t_first), t_end.min(t_last)))
        }
        _ => Ok((t_first, t_last)),
    }
}

fn domain_radius(domain: &NormDomain) -> Result<Option<f64>> {
    match *domain {
        NormDomain::Full => Ok(None),
        NormDomain::Ball { radius } | NormDomain::Cylinder { radius, .. } => {
            if !(radius > 0.0) {
                return Err(LabError::Domain(format!("empty ball of radius {radius}")));
            }
            Ok(Some(radius))
        }
    }
}

/// Indices of frames whose node intervals meet `[lo, hi]`.
fn frame_range(t: &[f64], lo: f64, hi: f64) -> std::ops::Range<usize> {
    let first = t.iter().rposition(|&x| x <= lo).unwrap_or(0);
    let last = t.iter().position(|&x| x >= hi).unwrap_or(t.len() - 1);
    first..last + 1
}

/// `int |u(.,t)|^q dx` (or `max |u|` for `q = inf`) over the spatial part of
/// `domain`, for every frame meeting its time window.
pub fn spatial_integrals(u: &SpaceTimeField, q: f64, domain: &NormDomain) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = time_window(u, domain)?;
    let sp = Spatial::new(&u.grid, domain_radius(domain)?)?;
    let range = frame_range(&u.time_nodes, lo, hi);
    let vals = range
        .clone()
        .into_par_iter()
        .map(|i| sp.eval(&u.frames[i], q))
        .collect::<Result<Vec<_>>>()?;
    Ok((u.time_nodes[range].to_vec(), vals))
}

/// `(int (int |u|^q dx)^{s/q} dt)^{1/s}` over the domain of `spec`.
pub fn mixed_norm(u: &SpaceTimeField, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    let (lo, hi) = time_window(u, &spec.domain)?;
    let (t, g) = spatial_integrals(u, spec.q, &spec.domain)?;
    // Per-frame spatial norm, then the time norm.
    let norm_x: Vec<f64> = if spec.q.is_infinite() {
        g
    } else {
        g.iter().map(|v| v.max(0.0).powf(1.0 / spec.q)).collect()
    };
    if spec.s.is_infinite() {
        let mut m = norm_x
            .iter()
            .zip(&t)
            .filter(|(_, &tt)| tt >= lo && tt <= hi)
            .fold(0.0_f64, |m, (v, _)| m.max(*v));
        for edge in [lo, hi] {
            m = m.max(lerp(&t, &norm_x, edge));
        }
        return Ok(m);
    }
    let h: Vec<f64> = norm_x.iter().map(|v| v.powf(spec.s)).collect();
    Ok(trapezoid_window(&t, &h, lo, hi).max(0.0).powf(1.0 / spec.s))
}

fn lerp(t: &[f64], f: &[f64], x: f64) -> f64 {
    match t.iter().position(|&v| v >= x) {
        Some(0) | None => {
            let i = if x <= t[0] { 0 } else { t.len() - 1 };
            f[i]
        }
        Some(i) => {
            let (a, b) = (t[i - 1], t[i]);
            f[i - 1] + (f[i] - f[i - 1]) * (x - a) / (b - a)
        }
    }
}

/// `int_{t_lo}^{t_hi} int_{|x| = r} |u|^p dS dt` for each radius.
pub fn shell_integrals(u: &SpaceTimeField, p: f64, radii: &[f64], t_lo: f64, t_hi: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0) {
        return Err(LabError::Parameter(format!("exponent {p} must be >= 1")));
    }
    let domain = NormDomain::Cylinder {
        radius: 1.0,
        t_start: t_lo,
        t_end: t_hi,
    };
    let (lo, hi) = time_window(u, &domain)?;
    let range = frame_range(&u.time_nodes, lo, hi);
    let times = &u.time_nodes[range.clone()];
    let per_radius: Vec<Vec<f64>> = match &u.grid {
        Grid::Ball(b) => {
            for &r in radii {
                if !(r > 0.0 && r <= b.radius() * (1.0 + 1e-12)) {
                    return Err(LabError::Domain(format!("shell radius {r} outside the ball")));
                }
            }
            let rows: Vec<Vec<f64>> = radii.iter().map(|&r| b.radial_row(r)).collect();
            let sphere = b.sphere().clone();
            let na = sphere.len();
            // [frame][radius]
            let per_frame: Vec<Vec<f64>> = range
                .clone()
                .into_par_iter()
                .map(|i| {
                    let f = &u.frames[i];
                    rows.iter()
                        .zip(radii)
                        .map(|(row, &r)| {
                            let mut tr = vec![0.0; 3 * na];
                            for (ir, w) in row.iter().enumerate() {
                                if *w == 0.0 {
                                    continue;
                                }
                                for (o, s) in tr.iter_mut().zip(&f[ir * 3 * na..(ir + 1) * 3 * na]) {
                                    *o += w * s;
                                }
                            }
                            r * r
                                * tr.chunks(3)
                                    .enumerate()
                                    .map(|(a, v)| {
                                        sphere.weight(a) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powf(p / 2.0)
                                    })
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect();
            (0..radii.len())
                .map(|k| per_frame.iter().map(|v| v[k]).collect())
                .collect()
        }
        Grid::Torus(_) => {
            let sub = SpaceTimeField::new(
                u.grid.clone(),
                times.to_vec(),
                u.frames[range.clone()].to_vec(),
            )?;
            radii
                .iter()
                .map(|&r| {
                    let tr = trace_on_sphere(&sub, r)?;
                    Ok(tr
                        .frames
                        .iter()
                        .map(|f| {
                            f.chunks(3)
                                .enumerate()
                                .map(|(a, v)| tr.weight(a) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powf(p / 2.0))
                                .sum()
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(per_radius
        .iter()
        .map(|g| trapezoid_window(times, g, lo, hi))
        .collect())
}

/// Shell integrals at Gauss-Legendre radii of `[r_lo, r_hi]`.
#[derive(Debug, Clone, Serialize)]
pub struct ShellProfile {
    pub radii: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

impl ShellProfile {
    /// `(r, int_t int_{|x|=r} |u|^p)` pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.radii.iter().copied().zip(self.values.iter().copied()).collect()
    }

    /// Radial integral of the profile, i.e. the annulus volume integral.
    pub fn integral(&self) -> f64 {
        self.weights.iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
}

/// Coarea profile over the full time span of `u`.
pub fn shell_profile(u: &SpaceTimeField, p: f64, r_lo: f64, r_hi: f64, n_shells: usize) -> Result<ShellProfile> {
    if n_shells < 2 {
        return Err(LabError::Parameter("shell_profile needs at least two shells".into()));
    }
    if !(r_hi > r_lo && r_lo >= 0.0) {
        return Err(LabError::Domain(format!("bad shell range [{r_lo}, {r_hi}]")));
    }
    let (radii, weights) = gauss_legendre_on(n_shells, r_lo, r_hi);
    let t = &u.time_nodes;
    let values = shell_integrals(u, p, &radii, t[0], *t.last().unwrap())?;
    Ok(ShellProfile { radii, weights, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::random_solenoidal_ball;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn constant_field(c: f64, n_t: usize) -> SpaceTimeField {
        let b = Arc::new(BallGrid::new(4, 8, 1.0).unwrap());
        let t: Vec<f64> = (0..n_t).map(|i| -1.0 + i as f64 / (n_t - 1) as f64).collect();
        let f: Vec<f64> = (0..b.len()).flat_map(|_| [0.0, c, 0.0]).collect();
        SpaceTimeField::new(Grid::Ball(b), t, vec![f; n_t]).unwrap()
    }

    #[test]
    fn constant_field_closed_forms() {
        let u = constant_field(2.0, 17);
        let q1 = NormSpec::new(4.0, 4.0, NormSpec::parabolic(1.0)).unwrap();
        let v = mixed_norm(&u, &q1).unwrap();
        assert!((v - 2.0 * (4.0 * PI / 3.0_f64).powf(0.25)).abs() < 1e-12);
        let (r0, t0) = (0.7, -0.83);
        let spec = NormSpec::critical(NormDomain::Cylinder {
            radius: r0,
            t_start: t0,
            t_end: 0.0,
        });
        let v = mixed_norm(&u, &spec).unwrap();
        let e = 2.0 * (4.0 * PI * r0.powi(3) / 3.0).powf(1.0 / 6.0) * (-t0).powf(0.25);
        assert!((v - e).abs() < 1e-12 * e);
        let sup = NormSpec::new(f64::INFINITY, f64::INFINITY, NormDomain::Full).unwrap();
        assert!((mixed_norm(&u, &sup).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bad_specs_and_domains() {
        let u = constant_field(1.0, 5);
        assert!(NormSpec::new(0.5, 2.0, NormDomain::Full).is_err());
        let mut c = NormSpec::critical(NormDomain::Full);
        c.q = 4.0;
        assert!(c.validate().is_err());
        let empty = NormSpec::new(2.0, 2.0, NormDomain::Cylinder { radius: 0.5, t_start: -0.2, t_end: -0.2 }).unwrap();
        assert!(matches!(mixed_norm(&u, &empty), Err(LabError::Domain(_))));
        let outside = NormSpec::new(2.0, 2.0, NormDomain::Ball { radius: 1.5 }).unwrap();
        assert!(mixed_norm(&u, &outside).is_err());
    }

    #[test]
    fn spec_serializes_infinite_exponents() {
        let s = NormSpec::new(f64::INFINITY, 6.0, NormSpec::parabolic(0.25)).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"inf\""));
        let back: NormSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unit_profile_and_annulus_volume() {
        let u = constant_field(1.0, 9);
        let prof = shell_profile(&u, 4.0, 0.5, 0.9, 6).unwrap();
        for (r, v) in prof.points() {
            assert!((v - 4.0 * PI * r * r).abs() < 1e-12);
        }
        assert!(shell_profile(&u, 4.0, 0.5, 0.9, 1).is_err());

        let b = Arc::new(BallGrid::new(6, 16, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f0 = random_solenoidal_ball(&b, &mut rng, 4, 2);
        let f1 = random_solenoidal_ball(&b, &mut rng, 4, 2);
        let u = SpaceTimeField::new(Grid::Ball(b.clone()), vec![0.0, 0.5], vec![f0, f1]).unwrap();
        let prof = shell_profile(&u, 2.0, 0.4, 0.8, 24).unwrap();
        let vol = |r: f64| {
            NormSpec::new(2.0, 2.0, NormDomain::Ball { radius: r })
                .and_then(|s| mixed_norm(&u, &s))
                .unwrap()
                .powi(2)
        };
        let oracle = vol(0.8) - vol(0.4);
        assert!((prof.integral() - oracle).abs() < 1e-6 * oracle, "{} vs {}", prof.integral(), oracle);
    }
}
