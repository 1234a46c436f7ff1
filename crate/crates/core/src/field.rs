//! Field containers on torus, ball and sphere grids, and the geometric
//! operations between them (traces, restriction, divergence, projection).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ball::{BallGrid, BallGridSpec};
use crate::error::{LabError, Result};
use crate::sphere::SphereQuadrature;
use crate::torus::{
    divergence_spectrum, leray_project_spectrum, BandLimited, TorusFft, TorusGrid,
};

/// Where nodal values live.
#[derive(Debug, Clone)]
pub enum Grid {
    Torus(TorusGrid),
    Ball(Arc<BallGrid>),
}

/// Serializable grid description, also used in file headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Torus { n_per_axis: usize, dealias_fraction: f64 },
    Ball { l_max: usize, n_radial: usize, radius: f64 },
    Sphere { l_max: usize, radius: f64 },
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Torus(t) => t.len(),
            Grid::Ball(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spec(&self) -> GridSpec {
        match self {
            Grid::Torus(t) => GridSpec::Torus {
                n_per_axis: t.n_per_axis,
                dealias_fraction: t.dealias_fraction,
            },
            Grid::Ball(b) => {
                let s = b.spec();
                GridSpec::Ball {
                    l_max: s.l_max,
                    n_radial: s.n_radial,
                    radius: s.radius,
                }
            }
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Grid> {
        match *spec {
            GridSpec::Torus {
                n_per_axis,
                dealias_fraction,
            } => Ok(Grid::Torus(TorusGrid::new(n_per_axis, dealias_fraction)?)),
            GridSpec::Ball {
                l_max,
                n_radial,
                radius,
            } => Ok(Grid::Ball(Arc::new(BallGrid::from_spec(&BallGridSpec {
                l_max,
                n_radial,
                radius,
            })?))),
            GridSpec::Sphere { .. } => Err(LabError::Parameter(
                "a sphere grid cannot carry volume fields".into(),
            )),
        }
    }

    pub fn ball(&self) -> Result<&Arc<BallGrid>> {
        match self {
            Grid::Ball(b) => Ok(b),
            Grid::Torus(_) => Err(LabError::Parameter("operation needs a ball grid".into())),
        }
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.spec() == other.spec()
    }
}

/// A three-component field at the nodes of one grid (node-major).
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != 3 * grid.len() {
            return Err(LabError::Parameter(format!(
                "vector field needs {} values, got {}",
                3 * grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Parameter("vector field has non-finite values".into()));
        }
        Ok(VectorField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = 3 * grid.len();
        VectorField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Time-indexed vector fields on a common grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub time_nodes: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

fn check_times(t: &[f64]) -> Result<()> {
    if t.len() < 2 {
        return Err(LabError::Parameter("need at least two time nodes".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Parameter("time nodes must be finite and strictly increasing".into()));
    }
    Ok(())
}

impl SpaceTimeField {
    pub fn new(grid: Grid, time_nodes: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        check_times(&time_nodes)?;
        if frames.len() != time_nodes.len() {
            return Err(LabError::Parameter("one frame per time node required".into()));
        }
        for f in &frames {
            if f.len() != 3 * grid.len() {
                return Err(LabError::Parameter("frame size does not match grid".into()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Parameter("frame has non-finite values".into()));
            }
        }
        Ok(SpaceTimeField {
            grid,
            time_nodes,
            frames,
        })
    }

    pub fn zeros(grid: Grid, time_nodes: Vec<f64>) -> Self {
        let n = 3 * grid.len();
        let frames = vec![vec![0.0; n]; time_nodes.len()];
        SpaceTimeField {
            grid,
            time_nodes,
            frames,
        }
    }

    pub fn n_times(&self) -> usize {
        self.time_nodes.len()
    }

    pub fn frame(&self, i: usize) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            values: self.frames[i].clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for f in out.frames.iter_mut() {
            for v in f.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// `self + s * other` on identical grids and times.
    pub fn axpy(&self, s: f64, other: &SpaceTimeField) -> Result<Self> {
        if !self.grid.same_as(&other.grid) || self.time_nodes != other.time_nodes {
            return Err(LabError::Parameter("fields live on different grids or times".into()));
        }
        let mut out = self.clone();
        for (f, g) in out.frames.iter_mut().zip(&other.frames) {
            for (a, b) in f.iter_mut().zip(g) {
                *a += s * b;
            }
        }
        Ok(out)
    }

    /// Frames with time nodes `>= t_start` (within a relative 1e-12).
    pub fn from_time(&self, t_start: f64) -> Result<Self> {
        let i0 = self
            .time_nodes
            .iter()
            .position(|&t| t >= t_start - 1e-12 * (1.0 + t_start.abs()))
            .ok_or_else(|| LabError::Domain(format!("no frames after t = {t_start}")))?;
        SpaceTimeField::new(
            self.grid.clone(),
            self.time_nodes[i0..].to_vec(),
            self.frames[i0..].to_vec(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Resamples every frame onto another ball grid with the same angular
    /// nodes.
    pub fn resample(&self, target: &Arc<BallGrid>) -> Result<Self> {
        let src = self.grid.ball()?;
        let frames = self
            .frames
            .iter()
            .map(|f| src.resample(f, 3, target))
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(Grid::Ball(target.clone()), self.time_nodes.clone(), frames)
    }
}

/// Time-indexed values on a sphere of radius `radius` (three components per
/// quadrature node). The outward normal is the radial unit vector.
#[derive(Debug, Clone)]
pub struct SphereTrace {
    pub radius: f64,
    pub sphere: Arc<SphereQuadrature>,
    pub time_nodes: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl SphereTrace {
    pub fn new(
        radius: f64,
        sphere: Arc<SphereQuadrature>,
        time_nodes: Vec<f64>,
        frames: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_times(&time_nodes)?;
        if frames.len() != time_nodes.len() || frames.iter().any(|f| f.len() != 3 * sphere.len()) {
            return Err(LabError::Parameter("trace frames do not match sphere nodes".into()));
        }
        Ok(SphereTrace {
            radius,
            sphere,
            time_nodes,
            frames,
        })
    }

    pub fn zeros(radius: f64, sphere: Arc<SphereQuadrature>, time_nodes: Vec<f64>) -> Self {
        let n = 3 * sphere.len();
        let frames = vec![vec![0.0; n]; time_nodes.len()];
        SphereTrace {
            radius,
            sphere,
            time_nodes,
            frames,
        }
    }

    /// Surface weight of a node on the sphere of this radius.
    pub fn weight(&self, node: usize) -> f64 {
        self.radius * self.radius * self.sphere.weight(node)
    }

    /// `int a . n dS` at time index `i`.
    pub fn flux(&self, i: usize) -> f64 {
        let f = &self.frames[i];
        (0..self.sphere.len())
            .map(|a| {
                let n = self.sphere.normal(a);
                self.weight(a) * (f[3 * a] * n[0] + f[3 * a + 1] * n[1] + f[3 * a + 2] * n[2])
            })
            .sum()
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::Sphere {
            l_max: self.sphere.l_max(),
            radius: self.radius,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for f in out.frames.iter_mut() {
            for v in f.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn from_time(&self, t_start: f64) -> Result<Self> {
        let i0 = self
            .time_nodes
            .iter()
            .position(|&t| t >= t_start - 1e-12 * (1.0 + t_start.abs()))
            .ok_or_else(|| LabError::Domain(format!("no trace frames after t = {t_start}")))?;
        SphereTrace::new(
            self.radius,
            self.sphere.clone(),
            self.time_nodes[i0..].to_vec(),
            self.frames[i0..].to_vec(),
        )
    }
}

/// Time-indexed 3x3 tensors (row-major per node).
#[derive(Debug, Clone)]
pub struct TensorField {
    pub grid: Grid,
    pub time_nodes: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn new(grid: Grid, time_nodes: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        check_times(&time_nodes)?;
        if frames.len() != time_nodes.len() || frames.iter().any(|f| f.len() != 9 * grid.len()) {
            return Err(LabError::Parameter("tensor frames do not match grid".into()));
        }
        if frames.iter().flat_map(|f| f.iter()).any(|v| !v.is_finite()) {
            return Err(LabError::Parameter("tensor field has non-finite values".into()));
        }
        Ok(TensorField {
            grid,
            time_nodes,
            frames,
        })
    }
}

fn torus_spectra(grid: &TorusGrid, frame: &[f64]) -> [Vec<Complex64>; 3] {
    TorusFft::new(*grid).forward_vector(frame)
}

fn evaluate_torus_frame(grid: &TorusGrid, frame: &[f64], points: &[[f64; 3]]) -> Vec<f64> {
    let s = torus_spectra(grid, frame);
    let bl = BandLimited::from_spectra(grid, &[&s[0], &s[1], &s[2]]);
    let vals = bl.evaluate(points);
    let mut out = vec![0.0; 3 * points.len()];
    for (i, o) in out.chunks_mut(3).enumerate() {
        for c in 0..3 {
            o[c] = vals[c][i];
        }
    }
    out
}

/// Trace on the sphere of radius `r` with a caller-chosen quadrature.
///
/// Torus fields are evaluated exactly as band-limited series; ball fields
/// are interpolated along rays by the polynomial through all radial nodes
/// (degree `n_radial - 1`), which requires the grid's own sphere nodes.
pub fn trace_on_sphere_with(
    u: &SpaceTimeField,
    r: f64,
    sphere: &Arc<SphereQuadrature>,
) -> Result<SphereTrace> {
    match &u.grid {
        Grid::Torus(t) => {
            if !(r > 0.0 && r < std::f64::consts::PI) {
                return Err(LabError::Domain(format!(
                    "sphere of radius {r} does not fit in the torus cell"
                )));
            }
            let points: Vec<[f64; 3]> = (0..sphere.len())
                .map(|a| {
                    let n = sphere.normal(a);
                    [r * n[0], r * n[1], r * n[2]]
                })
                .collect();
            let frames = u
                .frames
                .iter()
                .map(|f| evaluate_torus_frame(t, f, &points))
                .collect();
            SphereTrace::new(r, sphere.clone(), u.time_nodes.clone(), frames)
        }
        Grid::Ball(b) => {
            if sphere.n_theta() != b.sphere().n_theta() || sphere.n_phi() != b.sphere().n_phi() {
                return Err(LabError::Parameter(
                    "ball traces use the grid's own sphere nodes".into(),
                ));
            }
            let frames = u
                .frames
                .iter()
                .map(|f| b.trace(f, 3, r))
                .collect::<Result<Vec<_>>>()?;
            SphereTrace::new(r, sphere.clone(), u.time_nodes.clone(), frames)
        }
    }
}

/// Trace on the sphere of radius `r`: the ball grid's angular nodes, or for
/// torus fields a sphere rule resolving every retained Fourier mode.
pub fn trace_on_sphere(u: &SpaceTimeField, r: f64) -> Result<SphereTrace> {
    let sphere = match &u.grid {
        Grid::Ball(b) => b.sphere().clone(),
        Grid::Torus(t) => {
            let l = (t.dealias_radius() * r).ceil() as usize + 12;
            Arc::new(SphereQuadrature::with_product_margin(l))
        }
    };
    trace_on_sphere_with(u, r, &sphere)
}

/// Spectral (torus) or harmonic/radial (ball) divergence at the nodes.
pub fn divergence(u: &VectorField) -> Vec<f64> {
    match &u.grid {
        Grid::Torus(t) => {
            let fft = TorusFft::new(*t);
            let s = fft.forward_vector(&u.values);
            fft.inverse(&divergence_spectrum(t, &s))
        }
        Grid::Ball(b) => b.divergence(&u.values),
    }
}

/// Helmholtz-Leray projection of a torus field.
pub fn leray_project(u: &VectorField) -> Result<VectorField> {
    match &u.grid {
        Grid::Torus(t) => {
            let fft = TorusFft::new(*t);
            let mut s = fft.forward_vector(&u.values);
            leray_project_spectrum(t, &mut s);
            Ok(VectorField {
                grid: u.grid.clone(),
                values: fft.inverse_vector(&s),
            })
        }
        Grid::Ball(_) => Err(LabError::Parameter("leray_project needs a torus grid".into())),
    }
}

/// Band-limited evaluation of a torus field at every node of `ball`.
pub fn restrict_to_ball(u: &SpaceTimeField, ball: &Arc<BallGrid>) -> Result<SpaceTimeField> {
    let t = match &u.grid {
        Grid::Torus(t) => *t,
        Grid::Ball(_) => return Err(LabError::Parameter("restrict_to_ball needs a torus field".into())),
    };
    if ball.radius() >= std::f64::consts::PI {
        return Err(LabError::Domain("ball does not fit in the torus cell".into()));
    }
    let points = ball.positions();
    let frames = u
        .frames
        .iter()
        .map(|f| evaluate_torus_frame(&t, f, &points))
        .collect();
    SpaceTimeField::new(Grid::Ball(ball.clone()), u.time_nodes.clone(), frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::random_solenoidal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn torus_field(g: TorusGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
        (0..g.len()).flat_map(|i| f(g.position(i))).collect()
    }

    #[test]
    fn constant_and_linear_traces() {
        let b = Arc::new(BallGrid::new(4, 8, 1.0).unwrap());
        let ones: Vec<f64> = (0..b.len()).flat_map(|_| [1.0, 0.0, 0.0]).collect();
        let x: Vec<f64> = b.positions().into_iter().flatten().collect();
        let u = SpaceTimeField::new(Grid::Ball(b.clone()), vec![0.0, 1.0], vec![ones, x]).unwrap();
        let tr = trace_on_sphere(&u, 0.5).unwrap();
        for a in 0..b.n_angular() {
            let n = b.sphere().normal(a);
            assert!((tr.frames[0][3 * a] - 1.0).abs() < 1e-13);
            for c in 0..3 {
                assert!((tr.frames[1][3 * a + c] - 0.5 * n[c]).abs() < 1e-13);
            }
        }
        assert!(trace_on_sphere(&u, 1.2).is_err());
    }

    #[test]
    fn torus_trace_matches_closed_form_evaluation() {
        let g = TorusGrid::two_thirds(16).unwrap();
        // u = (sin y cos z, 0, cos(x + 2y)) is band-limited.
        let f = |p: [f64; 3]| [p[1].sin() * p[2].cos(), 0.0, (p[0] + 2.0 * p[1]).cos()];
        let vals = torus_field(g, f);
        let u = SpaceTimeField::new(Grid::Torus(g), vec![0.0, 1.0], vec![vals.clone(), vals]).unwrap();
        let tr = trace_on_sphere(&u, 0.75).unwrap();
        for a in 0..tr.sphere.len() {
            let n = tr.sphere.normal(a);
            let e = f([0.75 * n[0], 0.75 * n[1], 0.75 * n[2]]);
            for c in 0..3 {
                assert!((tr.frames[1][3 * a + c] - e[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn torus_divergence_and_projection() {
        let g = TorusGrid::two_thirds(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_solenoidal(&g, &mut rng, 4.0, 1.0);
        let fft = TorusFft::new(g);
        let u = VectorField::new(Grid::Torus(g), fft.inverse_vector(&s)).unwrap();
        assert!(divergence(&u).iter().all(|v| v.abs() < 1e-12));
        let p = leray_project(&u).unwrap();
        for (a, b) in p.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-14);
        }
        // Gradient of a trigonometric potential projects to zero.
        let grad = torus_field(g, |p| {
            [2.0 * (2.0 * p[0]).cos() * p[1].sin(), (2.0 * p[0]).sin() * p[1].cos(), 0.0]
        });
        let pg = leray_project(&VectorField::new(Grid::Torus(g), grad).unwrap()).unwrap();
        assert!(pg.max_abs() < 1e-13);
    }

    #[test]
    fn restriction_of_a_single_mode_is_exact() {
        let g = TorusGrid::two_thirds(12).unwrap();
        let f = |p: [f64; 3]| [0.0, (p[0] - p[2]).sin(), 1.0];
        let vals = torus_field(g, f);
        let u = SpaceTimeField::new(Grid::Torus(g), vec![0.0, 1.0], vec![vals.clone(), vals]).unwrap();
        let b = Arc::new(BallGrid::new(4, 8, 1.0).unwrap());
        let r = restrict_to_ball(&u, &b).unwrap();
        for (i, p) in b.positions().iter().enumerate() {
            let e = f(*p);
            for c in 0..3 {
                assert!((r.frames[0][3 * i + c] - e[c]).abs() < 1e-12);
            }
        }
    }
}
