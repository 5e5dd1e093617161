//! Binary checkpoint, all little-endian:
//!
//! ```text
//! "NSH1" | u32 version | u32 input_dim | u32 hidden_layers | u32 width
//! | u32 activation tag (0 sine, 1 softplus) | f64 omega0 or beta
//! | f64 center[input_dim] | f64 scale | f64 parameters...
//! ```
//!
//! Parameters are stored layer by layer, row-major weights then biases.

use std::io::Write;
use std::path::Path;

use super::{Activation, Architecture, SineNetwork};
use crate::error::{Error, Result};
use crate::geometry::NormalizationTransform;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSH1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(net: &SineNetwork) -> Vec<u8> {
    let a = &net.arch;
    let mut out = Vec::with_capacity(40 + 8 * (a.input_dim + net.params.len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        a.input_dim as u32,
        a.hidden_layers as u32,
        a.width as u32,
        a.activation.tag(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&a.activation.parameter().to_le_bytes());
    for c in net.transform.center() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&net.transform.scale().to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Truncated(format!("missing {what} at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SineNetwork> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| Error::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let input_dim = r.u32("input_dim")? as usize;
    let hidden_layers = r.u32("hidden_layers")? as usize;
    let width = r.u32("width")? as usize;
    let tag = r.u32("activation tag")?;
    let param = r.f64("activation parameter")?;
    let activation = match tag {
        0 => Activation::Sine { omega0: param },
        1 => Activation::Softplus { beta: param },
        t => return Err(Error::InvalidArchitecture(format!("unknown activation tag {t}"))),
    };
    let arch = Architecture {
        input_dim,
        hidden_layers,
        width,
        activation,
    };
    arch.validate()?;
    let center = (0..input_dim)
        .map(|_| r.f64("transform center"))
        .collect::<Result<Vec<_>>>()?;
    let scale = r.f64("transform scale")?;
    let transform = NormalizationTransform::new(center, scale)?;
    let count = arch.parameter_count();
    let params = r
        .take(count * 8, "parameters")?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Truncated(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.pos
        )));
    }
    SineNetwork::from_parameters(arch, params, transform)
}

/// Writes through a temporary file and renames, so readers never observe a
/// partially written checkpoint.
pub fn save_model(net: &SineNetwork, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub fn load_model(path: &Path) -> Result<SineNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
