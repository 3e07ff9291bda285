//! Binary field snapshots.
//!
//! Layout, all little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CHSNAP1\n` |
//! | 8     | `u64` number of coefficients |
//! | 8     | `u64` step index |
//! | 8     | `f64` time |
//! | 8 * k | `f64` coefficients |

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::space::Field;
use crate::stepper::{MemoryTruth, TruthSource};

pub const MAGIC: &[u8; 8] = b"CHSNAP1\n";
const HEADER: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: Field,
}

pub fn encode(step: usize, t: f64, field: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(field.len() as u64).to_le_bytes());
    out.extend_from_slice(&(step as u64).to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.coeffs() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a snapshot, rejecting truncation, trailing bytes and non-finite data.
pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    let bad = |m: String| Err(Error::Snapshot(m));
    if bytes.len() < HEADER {
        return bad(format!("{} bytes is shorter than the {HEADER}-byte header", bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return bad("bad magic".into());
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8-byte slice") };
    let count = u64::from_le_bytes(word(1));
    let step = u64::from_le_bytes(word(2));
    let t = f64::from_le_bytes(word(3));
    let payload = (bytes.len() - HEADER) as u64;
    if !payload.is_multiple_of(8) || payload / 8 != count {
        return bad(format!("header announces {count} coefficients but the payload holds {payload} bytes"));
    }
    let step = usize::try_from(step).map_err(|_| Error::Snapshot(format!("step {step} does not fit in usize")))?;
    if !(t.is_finite() && t >= 0.0) {
        return bad(format!("time {t} is not a finite non-negative number"));
    }
    let coeffs: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if coeffs.iter().any(|v| !v.is_finite()) {
        return bad("non-finite coefficient".into());
    }
    Ok(Snapshot {
        step,
        t,
        field: Field::from_coeffs(coeffs),
    })
}

pub fn write_snapshot(path: &Path, step: usize, t: f64, field: &Field) -> Result<()> {
    fs::write(path, encode(step, t, field)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Snapshot(m) => Error::Snapshot(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// A trajectory stored as one snapshot file per step under a directory.
#[derive(Debug, Clone)]
pub struct DiskTruth {
    dir: PathBuf,
    n_dofs: usize,
    last_step: usize,
}

const KEY_FILE: &str = "truth_key";

impl DiskTruth {
    pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
        dir.join(format!("step_{step:06}.chs"))
    }

    /// Writes a full trajectory and its key, replacing stale files.
    pub fn persist(dir: &Path, key: &str, dt: f64, fields: &[Field]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let key_path = dir.join(KEY_FILE);
        // Drop the key first so a crash mid-write never leaves a valid-looking store.
        if key_path.exists() {
            fs::remove_file(&key_path).map_err(|e| Error::io(&key_path, e))?;
        }
        for (step, f) in fields.iter().enumerate() {
            write_snapshot(&Self::snapshot_path(dir, step), step, step as f64 * dt, f)?;
        }
        fs::write(&key_path, key).map_err(|e| Error::io(&key_path, e))?;
        let n_dofs = fields.first().map_or(0, Field::len);
        Ok(DiskTruth {
            dir: dir.to_path_buf(),
            n_dofs,
            last_step: fields.len().saturating_sub(1),
        })
    }

    /// Opens a store written by [`DiskTruth::persist`]; `None` if the key is
    /// missing or differs, or fewer than `last_step + 1` snapshots exist.
    pub fn open(dir: &Path, key: &str, n_dofs: usize, last_step: usize) -> Result<Option<Self>> {
        let key_path = dir.join(KEY_FILE);
        match fs::read_to_string(&key_path) {
            Ok(k) if k.trim() == key => {}
            Ok(_) => return Ok(None),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(key_path, e)),
        }
        if !(0..=last_step).all(|s| Self::snapshot_path(dir, s).is_file()) {
            return Ok(None);
        }
        Ok(Some(DiskTruth {
            dir: dir.to_path_buf(),
            n_dofs,
            last_step,
        }))
    }

    /// Reads every snapshot into memory.
    pub fn load(&self) -> Result<MemoryTruth> {
        let fields = (0..=self.last_step).map(|s| self.snapshot(s)).collect::<Result<Vec<_>>>()?;
        Ok(MemoryTruth { fields })
    }
}

impl TruthSource for DiskTruth {
    fn last_step(&self) -> usize {
        self.last_step
    }

    fn snapshot(&self, step: usize) -> Result<Field> {
        if step > self.last_step {
            return Err(Error::MissingSnapshot(step));
        }
        let path = Self::snapshot_path(&self.dir, step);
        let snap = read_snapshot(&path)?;
        if snap.step != step {
            return Err(Error::Snapshot(format!("{} holds step {}", path.display(), snap.step)));
        }
        if snap.field.len() != self.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs,
                got: snap.field.len(),
            });
        }
        Ok(snap.field)
    }
}
