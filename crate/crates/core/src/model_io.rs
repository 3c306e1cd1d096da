//! Flat little-endian container for [`LinearModel`].
//!
//! ```text
//! "WHLM" | version u32 | k u64 | L u64 | width u64 | seed u64 | c f64
//! L blocks of k*k f64 (row-major) | L f64 log gains
//! k f64 anchor input | k f64 anchor output
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{LinearModel, NetConfig};

pub const MAGIC: &[u8; 4] = b"WHLM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 5;

pub fn encode_model(model: &LinearModel) -> Vec<u8> {
    let k = model.input_dim();
    let l = model.depth();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (l * k * k + l + 2 * k));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&(l as u64).to_le_bytes());
    out.extend_from_slice(&(model.config.width as u64).to_le_bytes());
    out.extend_from_slice(&model.config.seed.to_le_bytes());
    out.extend_from_slice(&model.config.layer_scale_c.to_le_bytes());
    let floats = model
        .layers
        .iter()
        .flatten()
        .chain(&model.log_norm_gains)
        .chain(&model.anchor_input)
        .chain(&model.anchor_output);
    for x in floats {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated: need {n} more bytes"),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Parse {
            offset: at,
            message: format!("count {v} does not fit in memory"),
        })
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<LinearModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected \"WHLM\"".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let k = r.usize()?;
    let depth = r.usize()?;
    let width = r.usize()?;
    let seed = r.u64()?;
    let layer_scale_c = r.f64()?;
    let config = NetConfig {
        input_dim: k,
        width,
        depth,
        seed,
        layer_scale_c,
    };
    config.validate().map_err(|e| Error::Parse {
        offset: 8,
        message: format!("invalid header: {e}"),
    })?;
    let payload = k
        .checked_mul(k)
        .and_then(|kk| kk.checked_mul(depth))
        .and_then(|m| m.checked_add(depth + 2 * k))
        .and_then(|m| m.checked_mul(8));
    match payload {
        Some(p) if p == bytes.len() - HEADER_LEN => {}
        _ => {
            return Err(Error::Parse {
                offset: HEADER_LEN,
                message: "payload length does not match header".into(),
            })
        }
    }
    let layers = (0..depth)
        .map(|_| r.floats(k * k))
        .collect::<Result<Vec<_>>>()?;
    let log_norm_gains = r.floats(depth)?;
    let anchor_input = r.floats(k)?;
    let anchor_output = r.floats(k)?;
    Ok(LinearModel {
        config,
        anchor_input,
        layers,
        log_norm_gains,
        anchor_output,
    })
}

pub fn save_model(model: &LinearModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LinearModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
