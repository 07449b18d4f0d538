//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DSRL"
//! version u32      currently 1
//! arch    7 × u32  layers, width, heads, ffn width, max context,
//!                  vocab size, parameter count
//! params  P × f32  flat parameter vector in canonical order
//! [OPT1]  4 bytes tag, P × f32 first moments, P × f32 second moments,
//!         u64 optimizer step counter              (optional section)
//! [TRN1]  4 bytes tag, u64 trainer step           (optional section)
//! ```
//!
//! Sections appear in the order above; each may be absent. Trailing bytes
//! beyond the last section are rejected. Round-tripping is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Architecture, PolicyParams};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DSRL";
const OPT_TAG: &[u8; 4] = b"OPT1";
const TRAINER_TAG: &[u8; 4] = b"TRN1";

/// Adam-style optimizer state as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
    /// Number of optimizer updates performed.
    pub step: u64,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: PolicyParams<f32>,
    pub optimizer: Option<OptimizerSnapshot>,
    pub trainer_step: Option<u64>,
}

impl Checkpoint {
    /// Returns the parameters if the stored architecture matches `expected`.
    pub fn expect_arch(&self, expected: &Architecture) -> Result<&PolicyParams<f32>> {
        if self.params.arch() != expected {
            return Err(Error::ArchitectureMismatch {
                found: format!("{:?}", self.params.arch()),
                expected: format!("{expected:?}"),
            });
        }
        Ok(&self.params)
    }
}

pub fn save_checkpoint(
    path: &Path,
    params: &PolicyParams<f32>,
    optimizer: Option<&OptimizerSnapshot>,
    trainer_step: Option<u64>,
) -> Result<()> {
    let arch = params.arch();
    let count = params.param_count();
    if let Some(opt) = optimizer {
        if opt.first_moment.len() != count || opt.second_moment.len() != count {
            return Err(Error::Checkpoint(format!(
                "optimizer moment length {}/{} does not match parameter count {count}",
                opt.first_moment.len(),
                opt.second_moment.len()
            )));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for field in [
        arch.layers,
        arch.width,
        arch.heads,
        arch.ffn_width,
        arch.max_context,
        arch.vocab_size,
        count,
    ] {
        out.write_all(&(field as u32).to_le_bytes())?;
    }
    for &v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    if let Some(opt) = optimizer {
        out.write_all(OPT_TAG)?;
        for &m in &opt.first_moment {
            out.write_all(&m.to_le_bytes())?;
        }
        for &m in &opt.second_moment {
            out.write_all(&m.to_le_bytes())?;
        }
        out.write_all(&opt.step.to_le_bytes())?;
    }
    if let Some(step) = trainer_step {
        out.write_all(TRAINER_TAG)?;
        out.write_all(&step.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(4 * n, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn peek_tag(&self, tag: &[u8; 4]) -> bool {
        self.data[self.pos..].starts_with(tag)
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let arch = Architecture {
        layers: cur.u32("layers")? as usize,
        width: cur.u32("width")? as usize,
        heads: cur.u32("heads")? as usize,
        ffn_width: cur.u32("ffn width")? as usize,
        max_context: cur.u32("max context")? as usize,
        vocab_size: cur.u32("vocab size")? as usize,
    };
    arch.validate()
        .map_err(|e| Error::Checkpoint(format!("invalid stored architecture: {e}")))?;
    let count = cur.u32("parameter count")? as usize;
    if count != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "stored parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let values = cur.f32_vec(count, "parameters")?;
    let params = PolicyParams::from_flat(arch, values)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut optimizer = None;
    if !cur.done() && cur.peek_tag(OPT_TAG) {
        cur.take(4, "optimizer tag")?;
        let first_moment = cur.f32_vec(count, "first moments")?;
        let second_moment = cur.f32_vec(count, "second moments")?;
        let step = cur.u64("optimizer step")?;
        optimizer = Some(OptimizerSnapshot { first_moment, second_moment, step });
    }
    let mut trainer_step = None;
    if !cur.done() && cur.peek_tag(TRAINER_TAG) {
        cur.take(4, "trainer tag")?;
        trainer_step = Some(cur.u64("trainer step")?);
    }
    if !cur.done() {
        return Err(Error::Checkpoint(format!(
            "unexpected trailing bytes at offset {}",
            cur.pos
        )));
    }
    Ok(Checkpoint { params, optimizer, trainer_step })
}
