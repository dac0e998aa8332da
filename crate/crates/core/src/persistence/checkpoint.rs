//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "SQULCKPT"
//! version   u32      1
//! length    u64      payload byte count
//! payload   length bytes
//!   config    vocab u32, context u32, d_model u32, heads u32, layers u32,
//!             tie u8, eps f64, seed u64
//!   tensors   count u32, then per tensor (canonical order):
//!             name_len u32, name utf-8, ndim u32, dims u32 × ndim, values f32 × ∏dims
//!   optimizer flag u8; when 1: lr f64, beta1 f64, beta2 f64, eps f64,
//!             weight_decay f64, step u64, count u32, then per parameter:
//!             name_len u32, name utf-8, len u32, m f32 × len, v f32 × len
//! checksum  32 bytes SHA-256 of payload
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::model::{ModelConfig, TransformerModel};
use crate::trainer::{AdamWConfig, Moments, OptimizerState};

pub const MAGIC: &[u8; 8] = b"SQULCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TransformerModel,
    pub optimizer: Option<OptimizerState>,
}

/// The exact bytes [`save_checkpoint`] writes.
pub fn encode_checkpoint(model: &TransformerModel, optimizer: Option<&OptimizerState>) -> Result<Vec<u8>> {
    let mut p = Vec::new();
    let c = model.config();
    for v in [c.vocab_size, c.context_len, c.d_model, c.n_heads, c.n_layers] {
        put_u32(&mut p, v)?;
    }
    p.push(u8::from(c.tie_embeddings));
    p.extend_from_slice(&c.eps_ln.to_le_bytes());
    p.extend_from_slice(&c.seed.to_le_bytes());

    put_u32(&mut p, model.parameters().len())?;
    for (name, t) in model.parameters() {
        put_str(&mut p, name)?;
        put_u32(&mut p, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut p, d)?;
        }
        put_f32s(&mut p, t.data());
    }

    match optimizer {
        None => p.push(0),
        Some(o) => {
            p.push(1);
            let h = o.hyper;
            for v in [h.lr, h.beta1, h.beta2, h.eps, h.weight_decay] {
                p.extend_from_slice(&v.to_le_bytes());
            }
            p.extend_from_slice(&o.step().to_le_bytes());
            put_u32(&mut p, o.moments().len())?;
            for (name, m) in o.moments() {
                put_str(&mut p, name)?;
                put_u32(&mut p, m.m.len())?;
                put_f32s(&mut p, &m.m);
                put_f32s(&mut p, &m.v);
            }
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + p.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out.extend_from_slice(&Sha256::digest(&p));
    Ok(out)
}

/// Writes a checkpoint atomically: the bytes go to a temporary file in the
/// target directory, which is then renamed over `path`.
pub fn save_checkpoint(model: &TransformerModel, optimizer: Option<&OptimizerState>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, optimizer)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let integrity = |reason: String| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(integrity("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN as u64).checked_add(len).and_then(|n| n.checked_add(CHECKSUM_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(integrity(format!(
            "file is {} bytes, header promises {} payload bytes",
            bytes.len(),
            len
        )));
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - CHECKSUM_LEN];
    if Sha256::digest(payload).as_slice() != &bytes[bytes.len() - CHECKSUM_LEN..] {
        return Err(integrity("checksum mismatch".into()));
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let parse = |e: String| integrity(e);
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32().map_err(parse)? as usize;
    }
    let tie = match r.u8().map_err(parse)? {
        0 => false,
        1 => true,
        b => return Err(parse(format!("bad tie flag {b}"))),
    };
    let config = ModelConfig {
        vocab_size: dims[0],
        context_len: dims[1],
        d_model: dims[2],
        n_heads: dims[3],
        n_layers: dims[4],
        tie_embeddings: tie,
        eps_ln: r.f64().map_err(parse)?,
        seed: r.u64().map_err(parse)?,
    };
    config.validate()?;

    let n = r.u32().map_err(parse)? as usize;
    let mut tensors = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = r.string().map_err(parse)?;
        let ndim = r.u32().map_err(parse)? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>().map_err(parse)?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| parse("tensor too large".into()))?;
        let data = r.f32s(count).map_err(parse)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    let model = TransformerModel::from_parameters(config, tensors)?;

    let optimizer = match r.u8().map_err(parse)? {
        0 => None,
        1 => {
            let mut h = [0f64; 5];
            for v in &mut h {
                *v = r.f64().map_err(parse)?;
            }
            let hyper = AdamWConfig {
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                eps: h[3],
                weight_decay: h[4],
            };
            let step = r.u64().map_err(parse)?;
            let count = r.u32().map_err(parse)? as usize;
            let mut moments = BTreeMap::new();
            for _ in 0..count {
                let name = r.string().map_err(parse)?;
                let len = r.u32().map_err(parse)? as usize;
                let expected = model.param(&name).map(Tensor::len);
                if expected != Some(len) {
                    return Err(Error::Shape(format!(
                        "optimizer state for {name} has {len} values, model expects {expected:?}"
                    )));
                }
                let m = r.f32s(len).map_err(parse)?;
                let v = r.f32s(len).map_err(parse)?;
                moments.insert(name, Moments { m, v });
            }
            Some(OptimizerState::from_parts(hyper, step, moments))
        }
        b => return Err(parse(format!("bad optimizer flag {b}"))),
    };
    if r.pos != payload.len() {
        return Err(parse(format!("{} trailing payload bytes", payload.len() - r.pos)));
    }
    Ok(Checkpoint { model, optimizer })
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit the checkpoint's u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.reserve(xs.len() * 4);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("payload ends early at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
