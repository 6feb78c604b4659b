//! Binary weight container:
//!
//! ```text
//! "PEMW" | u32 version | config block | u64 tensor count | u64 len per tensor | f64 data
//! ```
//!
//! All integers and floats are little-endian. The config block is ten `u32`
//! fields followed by `d_max` as `f64`. A JSON sidecar repeats the config and
//! the tensor table for human inspection.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{Arch, PemConfig, PemWeights, RotationHead};
use crate::config::Configurable;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PEMW";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_weights<W: Write>(mut out: W, w: &PemWeights) -> Result<()> {
    let c = &w.config;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let fields = [
        c.num_keypoints,
        c.d_model,
        c.coord_hidden,
        c.layers,
        c.heads,
        c.ff_dim,
        c.head_hidden,
        c.head_layers,
    ];
    for f in fields {
        let f = u32::try_from(f).map_err(|_| Error::Format(format!("config field {f} exceeds u32")))?;
        out.write_all(&f.to_le_bytes())?;
    }
    out.write_all(&c.arch.code().to_le_bytes())?;
    out.write_all(&c.rotation.code().to_le_bytes())?;
    out.write_all(&c.d_max.to_le_bytes())?;
    out.write_all(&(w.layout.tensors.len() as u64).to_le_bytes())?;
    for t in &w.layout.tensors {
        out.write_all(&(t.len() as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(w.data.len() * 8);
    for v in &w.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

pub fn read_weights<R: Read>(mut input: R) -> Result<PemWeights> {
    if &read_array::<4, _>(&mut input)? != MAGIC {
        return Err(Error::Format("not a PEMW checkpoint".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut f = [0usize; 8];
    for v in &mut f {
        *v = read_u32(&mut input)? as usize;
    }
    let arch = Arch::from_code(read_u32(&mut input)?)?;
    let rotation = RotationHead::from_code(read_u32(&mut input)?)?;
    let d_max = f64::from_le_bytes(read_array(&mut input)?);
    let config = PemConfig {
        num_keypoints: f[0],
        d_model: f[1],
        coord_hidden: f[2],
        layers: f[3],
        heads: f[4],
        ff_dim: f[5],
        head_hidden: f[6],
        head_layers: f[7],
        d_max,
        arch,
        rotation,
    };
    config.validate().map_err(|e| Error::Format(format!("bad config block: {e}")))?;
    let layout = super::params::Layout::new(&config);
    let count = read_u64(&mut input)? as usize;
    if count != layout.tensors.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", layout.tensors.len())));
    }
    for t in &layout.tensors {
        let len = read_u64(&mut input)? as usize;
        if len != t.len() {
            return Err(Error::Format(format!("tensor {} has {len} values, expected {}", t.name, t.len())));
        }
    }
    let mut raw = vec![0u8; layout.total * 8];
    input.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated tensor data: {e}")))?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    PemWeights::from_parts(config, data)
}

/// Human-readable description written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub num_keypoints: usize,
    pub d_model: usize,
    pub coord_hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub d_max: f64,
    pub arch: String,
    pub rotation: String,
    pub num_params: usize,
    pub tensors: Vec<(String, [usize; 2])>,
}

impl CheckpointMeta {
    pub fn of(w: &PemWeights) -> Self {
        let c = &w.config;
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            num_keypoints: c.num_keypoints,
            d_model: c.d_model,
            coord_hidden: c.coord_hidden,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            head_hidden: c.head_hidden,
            head_layers: c.head_layers,
            d_max: c.d_max,
            arch: c.arch.name().into(),
            rotation: c.rotation.name().into(),
            num_params: w.num_params(),
            tensors: w.layout.tensors.iter().map(|t| (t.name.clone(), [t.rows, t.cols])).collect(),
        }
    }
}

/// `weights.pemw` → `weights.pemw.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its sidecar, each through a temporary file that
/// is renamed into place only once complete.
pub fn save_weights(path: &Path, w: &PemWeights) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut out = std::io::BufWriter::new(tmp.as_file_mut());
    write_weights(&mut out, w)?;
    out.flush()?;
    drop(out);
    let mut side = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(side.as_file_mut(), &CheckpointMeta::of(w))?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    side.persist(sidecar_path(path)).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PemWeights> {
    read_weights(std::io::BufReader::new(std::fs::File::open(path)?))
}
