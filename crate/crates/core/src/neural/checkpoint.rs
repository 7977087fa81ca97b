//! Versioned binary checkpoints: magic `VDMN`, version, config block and
//! the parameters as little-endian `f32`.

use std::path::Path;

use super::net::{MaskNet, MaskNetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VDMN";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 4 + 8 + 8;

pub fn checkpoint_bytes(net: &MaskNet<f32>) -> Vec<u8> {
    let c = net.config();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * net.params().len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.q_channels, c.bins, c.hidden_freq, c.hidden_time] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf
}

pub fn save_checkpoint(net: &MaskNet<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<MaskNet<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a VDMN checkpoint"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let config = MaskNetConfig {
        q_channels: u32_at(8) as usize,
        bins: u32_at(12) as usize,
        hidden_freq: u32_at(16) as usize,
        hidden_time: u32_at(20) as usize,
        seed: u64_at(24),
    };
    config
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let count = u64_at(32) as usize;
    if count != config.param_count() {
        return Err(Error::format(
            path,
            format!("{count} parameters stored, config needs {}", config.param_count()),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::format(
            path,
            format!("payload of {} bytes, expected {}", payload.len(), 4 * count),
        ));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MaskNet::from_params(config, params).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<MaskNet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::net::Features;

    fn net() -> MaskNet<f32> {
        MaskNet::new(MaskNetConfig {
            q_channels: 2,
            bins: 5,
            hidden_freq: 3,
            hidden_time: 4,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.vdmn");
        let n = net();
        save_checkpoint(&n, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), n.config());
        assert!(back.params().iter().zip(n.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let x = Features::<f32> {
            bins: 5,
            frames: 3,
            width: 4,
            data: (0..60).map(|k| (k as f32 * 0.37).sin()).collect(),
            sigma: 1.0,
        };
        assert_eq!(n.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let bytes = checkpoint_bytes(&net());
        let p = Path::new("mem");
        assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 1], p), Err(Error::Format { .. })));
        assert!(matches!(parse_checkpoint(&bytes[..10], p), Err(Error::Format { .. })));
        let mut wrong = bytes.clone();
        wrong[4] = 7;
        assert!(matches!(parse_checkpoint(&wrong, p), Err(Error::Format { .. })));
        let mut mismatched = bytes;
        mismatched[16] = 4;
        assert!(matches!(parse_checkpoint(&mismatched, p), Err(Error::Format { .. })));
    }
}
