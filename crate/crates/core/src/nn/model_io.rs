//! Model file format: 8-byte magic "BFNN0001", a length-prefixed JSON
//! manifest (architecture, hyperparameters, blob directory), then the
//! parameter blobs as little-endian f64 in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
use super::{NetArch, NetParams, HUBER_DELTA};

const MODEL_MAGIC: &[u8; 8] = b"BFNN0001";

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    n_users: usize,
    n_rx: usize,
    leaky_slope: f64,
    bn_eps: f64,
    bn_momentum: f64,
    huber_delta: f64,
    /// Statistics source during sum-rate fine-tuning.
    unsupervised_bn_mode: String,
    includes_running_stats: bool,
    blobs: Vec<BlobEntry>,
}

pub fn save_model(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let fields = params.fields();
    let manifest = Manifest {
        n_users: params.arch.n_users,
        n_rx: params.arch.n_rx,
        leaky_slope: LEAKY_SLOPE,
        bn_eps: BN_EPS,
        bn_momentum: BN_MOMENTUM,
        huber_delta: HUBER_DELTA,
        unsupervised_bn_mode: "batch".to_string(),
        includes_running_stats: true,
        blobs: fields
            .iter()
            .map(|(name, f)| BlobEntry {
                name: name.to_string(),
                len: f.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, f) in fields {
        for &v in f {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadFormat(format!(
            "bad model magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let mut json = vec![0u8; u32::from_le_bytes(len_buf) as usize];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    let arch = NetArch {
        n_users: manifest.n_users,
        n_rx: manifest.n_rx,
    };
    let mut params = NetParams::init(arch, 0).zeros_like();
    {
        let mut fields = params.fields_mut();
        if manifest.blobs.len() != fields.len() {
            return Err(Error::BadFormat(format!(
                "expected {} blobs, manifest has {}",
                fields.len(),
                manifest.blobs.len()
            )));
        }
        for (entry, (name, field)) in manifest.blobs.iter().zip(fields.iter_mut()) {
            if entry.name != *name || entry.len != field.len() {
                return Err(Error::BadFormat(format!(
                    "blob {} (len {}) does not match expected {} (len {})",
                    entry.name,
                    entry.len,
                    name,
                    field.len()
                )));
            }
            for v in field.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetArch;

    #[test]
    fn model_roundtrip_is_bit_exact() {
        let p = NetParams::init(NetArch { n_users: 2, n_rx: 2 }, 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bfnn");
        save_model(&p, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bfnn");
        std::fs::write(&path, b"NOTMAGIC????????").unwrap();
        assert!(matches!(load_model(&path), Err(Error::BadFormat(_))));
    }
}
