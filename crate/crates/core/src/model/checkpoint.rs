//! `SVCK` checkpoint files.

use super::network::{Model, ModelConfig};
use super::optim::AdamW;
use super::ModelError;
use std::path::Path;

pub const SVCK_MAGIC: &[u8; 4] = b"SVCK";
pub const SVCK_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::CorruptFile("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, ModelError> {
        Ok(self.u32()? as usize)
    }
}

pub fn to_bytes(model: &Model, opt: &AdamW) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(SVCK_MAGIC);
    out.extend_from_slice(&SVCK_VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.n_heads,
        c.n_encoder_layers,
        c.n_decoder_layers,
        c.n_reaction_types,
        c.max_seq_len,
        c.fingerprint_dim,
        c.d_ff,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&opt.lr.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.rows as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols as u32).to_le_bytes());
    }
    let sections = [
        model.params.iter().map(|p| p.data.as_slice()).collect::<Vec<_>>(),
        opt.m.iter().map(|m| m.as_slice()).collect(),
        opt.v.iter().map(|v| v.as_slice()).collect(),
    ];
    for section in sections {
        for t in section {
            for &x in t {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, AdamW), ModelError> {
    if bytes.len() < 12 || &bytes[..4] != SVCK_MAGIC {
        return Err(ModelError::CorruptFile("not an SVCK checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SVCK_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: SVCK_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(ModelError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let config = ModelConfig {
        d_model: r.usize()?,
        n_heads: r.usize()?,
        n_encoder_layers: r.usize()?,
        n_decoder_layers: r.usize()?,
        n_reaction_types: r.usize()?,
        max_seq_len: r.usize()?,
        fingerprint_dim: r.usize()?,
        d_ff: r.usize()?,
        seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| ModelError::CorruptFile(format!("config block: {e}")))?;
    if config.d_model > 4096 || config.n_encoder_layers + config.n_decoder_layers > 256 {
        return Err(ModelError::CorruptFile("implausible config block".into()));
    }
    let step = r.u64()?;
    let lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let mut model = Model::new(config)?;
    let count = r.usize()?;
    if count != model.params.len() {
        return Err(ModelError::CorruptFile(format!(
            "{count} tensors, config implies {}",
            model.params.len()
        )));
    }
    for p in &model.params {
        let (rows, cols) = (r.usize()?, r.usize()?);
        if (rows, cols) != (p.rows, p.cols) {
            return Err(ModelError::CorruptFile("tensor shape does not match config".into()));
        }
    }
    let mut opt = AdamW::new(&model.params, lr);
    opt.step = step;
    let read_into = |r: &mut Reader, dst: &mut [f64]| -> Result<(), ModelError> {
        let raw = r.take(dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if !x.is_finite() {
                return Err(ModelError::CorruptFile("non-finite value".into()));
            }
            *d = x as f64;
        }
        Ok(())
    };
    for p in model.params.iter_mut() {
        read_into(&mut r, &mut p.data)?;
    }
    for m in opt.m.iter_mut() {
        read_into(&mut r, m)?;
    }
    for v in opt.v.iter_mut() {
        read_into(&mut r, v)?;
    }
    if r.pos != body.len() {
        return Err(ModelError::CorruptFile("trailing bytes".into()));
    }
    Ok((model, opt))
}

pub fn save_checkpoint(model: &Model, opt: &AdamW, path: &Path) -> Result<(), ModelError> {
    crate::io::write_atomic(path, &to_bytes(model, opt)).map_err(|e| ModelError::Io(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, AdamW), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
