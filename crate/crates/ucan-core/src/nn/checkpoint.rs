//! Model checkpoints and training-history CSV.
//!
//! Checkpoint layout: magic "UCNN", version u16 LE, topology hash u64 LE,
//! then each parametric layer's weights and biases as little-endian f32 in
//! declaration order. Optimizer moments are not persisted; a loaded model
//! starts with fresh Adam state.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EpochStats, NetworkParams, Plan};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic { found: [u8; 4] },
    UnsupportedVersion { found: u16 },
    SpecMismatch { expected: u64, found: u64 },
    Truncated,
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint i/o error: {e}"),
            CheckpointError::BadMagic { found } => {
                write!(f, "bad checkpoint magic {found:?}, expected \"UCNN\"")
            }
            CheckpointError::UnsupportedVersion { found } => {
                write!(f, "unsupported checkpoint version {found}")
            }
            CheckpointError::SpecMismatch { expected, found } => write!(
                f,
                "checkpoint topology hash {found:#x} does not match the requested \
                 architecture {expected:#x}"
            ),
            CheckpointError::Truncated => write!(f, "checkpoint ended mid-tensor"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub fn save_checkpoint(
    path: &Path,
    plan: &Plan,
    params: &NetworkParams<f32>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&plan.spec_hash().to_le_bytes())?;
    for t in &params.layers {
        for &v in t.w.iter().chain(&t.b) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, plan: &Plan) -> Result<NetworkParams<f32>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Truncated)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)
        .map_err(|_| CheckpointError::Truncated)?;
    let version = u16::from_le_bytes(b2);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| CheckpointError::Truncated)?;
    let found = u64::from_le_bytes(b8);
    let expected = plan.spec_hash();
    if found != expected {
        return Err(CheckpointError::SpecMismatch { expected, found });
    }

    let mut params = NetworkParams::<f32>::init(plan, 0);
    for t in &mut params.layers {
        for v in t.w.iter_mut().chain(t.b.iter_mut()) {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)
                .map_err(|_| CheckpointError::Truncated)?;
            *v = f32::from_le_bytes(b4);
        }
    }
    for (m1, m2) in params.moment1.iter_mut().zip(params.moment2.iter_mut()) {
        m1.w.iter_mut().for_each(|v| *v = 0.0);
        m1.b.iter_mut().for_each(|v| *v = 0.0);
        m2.w.iter_mut().for_each(|v| *v = 0.0);
        m2.b.iter_mut().for_each(|v| *v = 0.0);
    }
    params.step = 0;
    Ok(params)
}

/// Epoch history as CSV: epoch, train_loss, train_acc, val_acc.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,train_acc,val_acc")?;
    for h in history {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6}",
            h.epoch, h.train_loss, h.train_acc, h.val_acc
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::super::{reduced_network, ucan_network, NetworkParams, Plan};
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("ucan-core-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn checkpoint_round_trips_weights() {
        let plan = Plan::compile(&reduced_network());
        let params = NetworkParams::<f32>::init(&plan, 77);
        let path = tmp("model.ucnn");
        save_checkpoint(&path, &plan, &params).unwrap();
        let loaded = load_checkpoint(&path, &plan).unwrap();
        assert_eq!(loaded.layers, params.layers);
        assert_eq!(loaded.step, 0);
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let reduced = Plan::compile(&reduced_network());
        let full = Plan::compile(&ucan_network());
        let params = NetworkParams::<f32>::init(&reduced, 1);
        let path = tmp("mismatch.ucnn");
        save_checkpoint(&path, &reduced, &params).unwrap();
        assert!(matches!(
            load_checkpoint(&path, &full),
            Err(CheckpointError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn garbage_is_rejected() {
        let path = tmp("garbage.ucnn");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        let plan = Plan::compile(&reduced_network());
        assert!(matches!(
            load_checkpoint(&path, &plan),
            Err(CheckpointError::BadMagic { .. })
        ));
    }
}
