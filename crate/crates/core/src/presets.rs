//! Named resolutions shared by the CLI and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::ball::BallGridSpec;
use crate::dns::{DnsConfig, InitialCondition};
use crate::error::{LabError, Result};

/// Torus, ball and time resolution of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub torus_n: usize,
    pub l_max: usize,
    pub n_radial: usize,
    /// Uniform frames on `[-1, 0]`.
    pub n_frames: usize,
    /// Largest DNS step.
    pub dt: f64,
}

pub const SMALL: Resolution = Resolution {
    torus_n: 16,
    l_max: 8,
    n_radial: 24,
    n_frames: 64,
    dt: 0.02,
};

pub const MEDIUM: Resolution = Resolution {
    torus_n: 24,
    l_max: 10,
    n_radial: 32,
    n_frames: 128,
    dt: 0.01,
};

pub const DEFAULT: Resolution = Resolution {
    torus_n: 48,
    l_max: 12,
    n_radial: 48,
    n_frames: 256,
    dt: 0.005,
};

impl Resolution {
    pub fn preset(name: &str) -> Result<Resolution> {
        match name {
            "small" => Ok(SMALL),
            "medium" => Ok(MEDIUM),
            "default" => Ok(DEFAULT),
            other => Err(LabError::Parameter(format!(
                "unknown resolution preset `{other}` (expected small, medium or default)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.torus_n < 8 || self.torus_n % 2 != 0 {
            return Err(LabError::Parameter(format!("torus_n {} must be even and >= 8", self.torus_n)));
        }
        if self.l_max < 2 || self.n_radial < 2 * self.l_max {
            return Err(LabError::Parameter("ball grid needs l_max >= 2 and n_radial >= 2 l_max".into()));
        }
        if self.n_frames < 8 || !(self.dt > 0.0) {
            return Err(LabError::Parameter("need at least 8 frames and a positive dt".into()));
        }
        Ok(())
    }

    /// One refinement step: every resolution parameter grows.
    pub fn refined(&self) -> Resolution {
        if *self == SMALL {
            return MEDIUM;
        }
        if *self == MEDIUM {
            return DEFAULT;
        }
        let n = self.torus_n * 3 / 2;
        Resolution {
            torus_n: n + n % 2,
            l_max: self.l_max + 2,
            n_radial: self.n_radial + 8,
            n_frames: 2 * self.n_frames,
            dt: 0.5 * self.dt,
        }
    }

    pub fn ball(&self) -> BallGridSpec {
        BallGridSpec {
            l_max: self.l_max,
            n_radial: self.n_radial,
            radius: 1.0,
        }
    }

    /// DNS on `[-1, 0]` at this resolution.
    pub fn dns(&self, initial: InitialCondition, seed: u64) -> DnsConfig {
        DnsConfig {
            n_per_axis: self.torus_n,
            dt: self.dt,
            t_start: -1.0,
            t_end: 0.0,
            n_frames: self.n_frames,
            initial,
            seed,
            ball: self.ball(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_refine_upwards() {
        for name in ["small", "medium", "default"] {
            let r = Resolution::preset(name).unwrap();
            r.validate().unwrap();
            let f = r.refined();
            f.validate().unwrap();
            assert!(f.torus_n > r.torus_n && f.l_max > r.l_max && f.n_frames > r.n_frames && f.dt < r.dt);
            r.dns(InitialCondition::Zero, 0).validate().unwrap();
        }
        assert_eq!(SMALL.refined(), MEDIUM);
        assert!(Resolution::preset("huge").is_err());
    }
}
