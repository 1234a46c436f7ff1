//! NSF1: a one-line JSON header followed by little-endian `f64` payload.
//!
//! The payload holds the time nodes, then every frame in node-major order
//! with three components per node. Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::field::{Grid, GridSpec, SpaceTimeField, SphereTrace};
use crate::sphere::SphereQuadrature;

pub const MAGIC: &str = "NSF1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsfHeader {
    pub version: u32,
    pub grid: GridSpec,
    pub byte_order: String,
    pub components: usize,
    pub nodes: usize,
    pub times: usize,
    /// Angular layout of sphere traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere_nodes: Option<(usize, usize)>,
}

/// Either payload an NSF1 file can carry.
#[derive(Debug, Clone)]
pub enum NsfData {
    Field(SpaceTimeField),
    Trace(SphereTrace),
}

fn encode(header: &NsfHeader, times: &[f64], frames: &[Vec<f64>]) -> Result<Vec<u8>> {
    let json = serde_json::to_string(header)?;
    let n = 8 * (times.len() + frames.iter().map(Vec::len).sum::<usize>());
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 2 + n);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b' ');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for v in times.iter().chain(frames.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_field(u: &SpaceTimeField) -> Result<Vec<u8>> {
    let header = NsfHeader {
        version: VERSION,
        grid: u.grid.spec(),
        byte_order: "LE".into(),
        components: 3,
        nodes: u.grid.len(),
        times: u.n_times(),
        sphere_nodes: None,
    };
    encode(&header, &u.time_nodes, &u.frames)
}

pub fn encode_trace(a: &SphereTrace) -> Result<Vec<u8>> {
    let header = NsfHeader {
        version: VERSION,
        grid: a.grid_spec(),
        byte_order: "LE".into(),
        components: 3,
        nodes: a.sphere.len(),
        times: a.time_nodes.len(),
        sphere_nodes: Some((a.sphere.n_theta(), a.sphere.n_phi())),
    };
    encode(&header, &a.time_nodes, &a.frames)
}

pub fn decode(bytes: &[u8]) -> Result<NsfData> {
    let bad = |m: &str| LabError::Format(m.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let json = line
        .strip_prefix(MAGIC)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| bad("missing NSF1 magic"))?;
    let h: NsfHeader = serde_json::from_str(json).map_err(|e| LabError::Format(format!("bad header: {e}")))?;
    if h.version != VERSION {
        return Err(LabError::Format(format!("unsupported NSF1 version {}", h.version)));
    }
    if h.byte_order != "LE" || h.components != 3 || h.times == 0 {
        return Err(bad("unsupported byte order, component count or empty time axis"));
    }
    let body = &bytes[nl + 1..];
    let frame_len = 3 * h.nodes;
    let expected = h
        .times
        .checked_mul(frame_len + 1)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("header sizes overflow"))?;
    if body.len() != expected {
        return Err(LabError::Format(format!("payload has {} bytes, header implies {expected}", body.len())));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let times = vals[..h.times].to_vec();
    let frames: Vec<Vec<f64>> = vals[h.times..].chunks(frame_len.max(1)).map(<[f64]>::to_vec).collect();
    match h.grid {
        GridSpec::Sphere { l_max, radius } => {
            let (nt, np) = h.sphere_nodes.ok_or_else(|| bad("sphere trace without node layout"))?;
            let sphere = Arc::new(SphereQuadrature::new(l_max, nt, np));
            if sphere.len() != h.nodes {
                return Err(bad("sphere layout disagrees with node count"));
            }
            Ok(NsfData::Trace(SphereTrace::new(radius, sphere, times, frames)?))
        }
        spec => {
            let grid = Grid::from_spec(&spec)?;
            if grid.len() != h.nodes {
                return Err(bad("grid disagrees with node count"));
            }
            Ok(NsfData::Field(SpaceTimeField::new(grid, times, frames)?))
        }
    }
}

pub fn decode_field(bytes: &[u8]) -> Result<SpaceTimeField> {
    match decode(bytes)? {
        NsfData::Field(u) => Ok(u),
        NsfData::Trace(_) => Err(LabError::Format("expected a volume field, found a sphere trace".into())),
    }
}

pub fn decode_trace(bytes: &[u8]) -> Result<SphereTrace> {
    match decode(bytes)? {
        NsfData::Trace(a) => Ok(a),
        NsfData::Field(_) => Err(LabError::Format("expected a sphere trace, found a volume field".into())),
    }
}

pub fn read_file(path: &Path) -> Result<NsfData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| LabError::Parameter(format!("no file name in {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// Hex SHA-256 of a byte string.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::BallGrid;
    use crate::field::trace_on_sphere;

    fn sample() -> SpaceTimeField {
        let g = Arc::new(BallGrid::new(3, 6, 1.0).unwrap());
        let t = vec![-1.0, -0.5, 0.1 + 0.2];
        let frames = t
            .iter()
            .map(|&s| g.positions().iter().flat_map(|p| [p[0] * s, (p[1] + s).sin(), 1.0 / 3.0]).collect())
            .collect();
        SpaceTimeField::new(Grid::Ball(g), t, frames).unwrap()
    }

    #[test]
    fn field_and_trace_round_trip_bit_exactly() {
        let u = sample();
        let bytes = encode_field(&u).unwrap();
        assert!(bytes.starts_with(b"NSF1 {\"version\":1"));
        let back = decode_field(&bytes).unwrap();
        assert_eq!(back.grid.spec(), u.grid.spec());
        assert_eq!(back.time_nodes.iter().map(|t| t.to_bits()).collect::<Vec<_>>(), u.time_nodes.iter().map(|t| t.to_bits()).collect::<Vec<_>>());
        assert!(back.frames.iter().flatten().zip(u.frames.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(encode_field(&back).unwrap(), bytes);
        let a = trace_on_sphere(&u, 0.6).unwrap();
        let tb = encode_trace(&a).unwrap();
        let ab = decode_trace(&tb).unwrap();
        assert_eq!(encode_trace(&ab).unwrap(), tb);
        assert!(decode_field(&tb).is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode_field(&sample()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(LabError::Format(_))));
        assert!(matches!(decode(b"NSF2 {}\n"), Err(LabError::Format(_))));
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut v2 = String::from_utf8(bytes[..nl].to_vec()).unwrap().replace("\"version\":1", "\"version\":2").into_bytes();
        v2.extend_from_slice(&bytes[nl..]);
        assert!(matches!(decode(&v2), Err(LabError::Format(_))));
    }

    #[test]
    fn atomic_write_replaces_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(digest(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
