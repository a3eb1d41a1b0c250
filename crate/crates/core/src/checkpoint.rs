//! Checkpoint archive: preset identity, environment-step counter, and every
//! named parameter tensor together with its RMSProp accumulator.
//!
//! Layout (little-endian): magic, preset-name string, action count,
//! step counter, tensor count, then per tensor its name and two tensor
//! blobs (value, accumulator) in the shared rank/dims/f64 encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::SharedParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CKPT0001";

pub struct Checkpoint {
    pub preset_name: String,
    pub n_act: usize,
    pub env_steps: u64,
    pub tensors: Vec<(String, Tensor, Tensor)>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Other(format!("checkpoint string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Other(format!("checkpoint string not utf-8: {e}")))
}

pub fn save(path: &Path, store: &SharedParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_str(&mut w, &store.preset().name)?;
    w.write_all(&(store.preset().n_act as u64).to_le_bytes())?;
    w.write_all(&store.env_steps().to_le_bytes())?;
    let state = store.export_state();
    w.write_all(&(state.len() as u64).to_le_bytes())?;
    for (name, value, ms) in &state {
        write_str(&mut w, name)?;
        value.save(&mut w)?;
        ms.save(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ResumeMismatch(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let preset_name = read_str(&mut r)?;
    let n_act = read_u64(&mut r)? as usize;
    let env_steps = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let value = Tensor::load(&mut r)?;
        let ms = Tensor::load(&mut r)?;
        tensors.push((name, value, ms));
    }
    Ok(Checkpoint { preset_name, n_act, env_steps, tensors })
}

/// Loads a checkpoint into an existing store, checking preset identity.
pub fn restore(path: &Path, store: &SharedParamStore) -> Result<u64> {
    let ck = load(path)?;
    if ck.preset_name != store.preset().name || ck.n_act != store.preset().n_act {
        return Err(Error::ResumeMismatch(format!(
            "checkpoint was written for preset {}/{} actions, run uses {}/{}",
            ck.preset_name,
            ck.n_act,
            store.preset().name,
            store.preset().n_act
        )));
    }
    store.import_state(&ck.tensors)?;
    store.set_env_steps(ck.env_steps);
    Ok(ck.env_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ArchPreset, NetworkParams};
    use crate::optim::RmsPropConfig;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("checkpoint-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn tiny_store(seed: u64) -> SharedParamStore {
        let preset = ArchPreset::tiny(5);
        let params = NetworkParams::init(preset, false, seed).unwrap();
        SharedParamStore::new(params, RmsPropConfig::default())
    }

    #[test]
    fn save_restore_round_trip_is_exact() {
        let store = tiny_store(3);
        // perturb the optimizer state so accumulators are nonzero
        let mut grads = store.snapshot();
        for (_, t) in grads.iter_mut() {
            let n = t.len();
            t.grad_mut().copy_from_slice(&vec![0.01; n]);
        }
        store.apply_gradients(&grads).unwrap();
        store.set_env_steps(12345);

        let path = tmp("round_trip.ckpt");
        save(&path, &store).unwrap();

        let fresh = tiny_store(999);
        let steps = restore(&path, &fresh).unwrap();
        assert_eq!(steps, 12345);
        assert_eq!(fresh.env_steps(), 12345);
        let a = store.export_state();
        let b = fresh.export_state();
        for ((na, va, ma), (nb, vb, mb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(va.data(), vb.data());
            assert_eq!(ma.data(), mb.data());
        }
    }

    #[test]
    fn preset_mismatch_is_rejected() {
        let store = tiny_store(0);
        let path = tmp("preset.ckpt");
        save(&path, &store).unwrap();

        let preset = ArchPreset::desk(5);
        let params = NetworkParams::init(preset, false, 0).unwrap();
        let other = SharedParamStore::new(params, RmsPropConfig::default());
        assert!(matches!(restore(&path, &other), Err(Error::ResumeMismatch(_))));
    }

    #[test]
    fn garbage_file_is_rejected() {
        let path = tmp("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }
}
