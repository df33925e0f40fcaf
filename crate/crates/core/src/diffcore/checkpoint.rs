//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SNASCKP1"
//! version  u32      format version (currently 1)
//! component, meta   length-prefixed utf-8 strings
//! n_params u32
//! per parameter (sorted by name):
//!   name   length-prefixed utf-8
//!   ndim   u32, then each dim as u32
//!   data   numel * f64 raw little-endian
//! opt_flag u8 (0 = absent, 1 = present)
//! if present: lr f64, step u64, then per parameter m and v blobs
//! crc32    u32 over everything before it
//! ```
//!
//! Parameters round-trip bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::diffcore::{OptimizerState, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SNASCKP1";
pub const FORMAT_VERSION: u32 = 1;

/// A deserialized checkpoint: parameters, optional optimizer state, the
/// component tag ("generator" / "predictor"), and a free-form metadata blob.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub component: String,
    pub meta_json: String,
}

pub fn save(
    path: &Path,
    params: &ParamStore,
    optimizer: Option<&OptimizerState>,
    component: &str,
    meta_json: &str,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_str(&mut buf, component);
    write_str(&mut buf, meta_json);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        write_str(&mut buf, name);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    match optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.lr.to_le_bytes());
            buf.extend_from_slice(&opt.step.to_le_bytes());
            for (name, t) in params.iter() {
                let m = opt.m.get(name).ok_or_else(|| Error::UnknownParam {
                    name: name.to_string(),
                })?;
                let v = opt.v.get(name).ok_or_else(|| Error::UnknownParam {
                    name: name.to_string(),
                })?;
                if m.len() != t.numel() || v.len() != t.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "checkpoint_save",
                        lhs: t.shape().to_vec(),
                        rhs: vec![m.len()],
                    });
                }
                for &x in m {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                for &x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 8 {
        return Err(corrupt("file too short"));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored_crc {
        return Err(corrupt("crc32 mismatch"));
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
        path,
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let component = r.string()?;
    let meta_json = r.string()?;
    let n_params = r.u32()? as usize;
    let mut params = ParamStore::new();
    let mut order = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel)?;
        params.register(&name, Tensor::from_vec(shape, data)?)?;
        order.push(name);
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let lr = r.f64()?;
            let step = r.u64()?;
            let mut opt = OptimizerState::new(&params, lr);
            opt.step = step;
            for name in &order {
                let numel = params.get(name)?.numel();
                let m = r.f64s(numel)?;
                let v = r.f64s(numel)?;
                opt.m.insert(name.clone(), m);
                opt.v.insert(name.clone(), v);
            }
            Some(opt)
        }
        _ => return Err(corrupt("bad optimizer flag")),
    };
    if r.pos != payload.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Checkpoint {
        params,
        optimizer,
        component,
        meta_json,
    })
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt {
                path: self.path.display().to_string(),
                reason: "unexpected end of file".to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt {
            path: self.path.display().to_string(),
            reason: "invalid utf-8".to_string(),
        })
    }
}
