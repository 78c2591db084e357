use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BSSL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized weights: `"BSSL"`, version `u32`, spec block (`u64` length +
/// UTF-8 text), parameter block (`u64` count + `f64` values), step `u64`,
/// seed `u64`. All integers and floats little-endian.
///
/// The spec text is opaque here; models and embedding tables each define
/// their own `key=value` vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub spec_text: String,
    pub params: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl ModelCheckpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u64::<LittleEndian>(self.spec_text.len() as u64)?;
        w.write_all(self.spec_text.as_bytes())?;
        w.write_u64::<LittleEndian>(self.params.len() as u64)?;
        for &p in &self.params {
            w.write_f64::<LittleEndian>(p)?;
        }
        w.write_u64::<LittleEndian>(self.step)?;
        w.write_u64::<LittleEndian>(self.seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + self.spec_text.len() + 8 * self.params.len());
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |what: &str| NnError::Checkpoint(what.to_string());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("missing BSSL magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let spec_len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        if spec_len > bytes.len() {
            return Err(bad("spec block longer than file"));
        }
        let mut spec = vec![0u8; spec_len];
        r.read_exact(&mut spec).map_err(|_| bad("truncated spec block"))?;
        let spec_text = String::from_utf8(spec).map_err(|_| bad("spec block is not UTF-8"))?;
        let count = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated parameter block"))? as usize;
        if count.saturating_mul(8) > bytes.len() {
            return Err(bad("parameter count exceeds file size"));
        }
        let params = (0..count)
            .map(|_| r.read_f64::<LittleEndian>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("truncated parameter block"))?;
        let step = r.read_u64::<LittleEndian>().map_err(|_| bad("missing step"))?;
        let seed = r.read_u64::<LittleEndian>().map_err(|_| bad("missing seed"))?;
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after seed"));
        }
        Ok(Self {
            spec_text,
            params,
            step,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
