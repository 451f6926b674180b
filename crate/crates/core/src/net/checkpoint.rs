//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes   "BSCKPT\0\0"
//! version   u32       1
//! header    u32 length + UTF-8 JSON (training config, epoch bookkeeping, layout)
//! tensors   u32 count, then per tensor:
//!             u16 name length, name, u8 rank, u64 dims[rank], f64 values
//! ```
//!
//! Network tensors come first, followed by the optimizer's first and second
//! moments (named `m/<param>` and `v/<param>`) when optimizer state is saved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::network::{Mode, MtlNetwork};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BSCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Epoch the next training run starts at.
    pub next_epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    pub net: MtlNetwork,
    pub optimizer: Option<AdamW>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    next_epoch: usize,
    best_epoch: Option<usize>,
    best_val_f1: Option<f64>,
    in_channels: usize,
    mode: Mode,
    optimizer_step: Option<u64>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        config: ck.config.clone(),
        next_epoch: ck.next_epoch,
        best_epoch: ck.best_epoch,
        best_val_f1: ck.best_val_f1,
        in_channels: ck.net.in_channels(),
        mode: ck.net.mode(),
        optimizer_step: ck.optimizer.as_ref().map(|o| o.t),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let names = ck.net.param_names();
    let shapes = ck.net.param_shapes();
    let params = ck.net.params();
    let n_opt = if ck.optimizer.is_some() { 2 } else { 0 };
    out.extend_from_slice(&((names.len() * (1 + n_opt)) as u32).to_le_bytes());
    for ((name, shape), p) in names.iter().zip(&shapes).zip(&params) {
        put_tensor(&mut out, name, shape, p);
    }
    if let Some(opt) = &ck.optimizer {
        for (prefix, moments) in [("m", &opt.m), ("v", &opt.v)] {
            for ((name, shape), t) in names.iter().zip(&shapes).zip(moments) {
                put_tensor(&mut out, &format!("{prefix}/{name}"), shape, t);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u16()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} of shape {shape:?} exceeds the file")))?;
        let bytes = self.take(count * 8)?;
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, shape, values))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let mut net = MtlNetwork::zeros(header.in_channels, header.mode);
    let names = net.param_names();
    let shapes = net.param_shapes();
    let count = r.u32()? as usize;
    let expected = names.len() * if header.optimizer_step.is_some() { 3 } else { 1 };
    if count != expected {
        return Err(Error::Checkpoint(format!("expected {expected} tensors, found {count}")));
    }
    let mut read_set = |prefix: &str| -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .zip(&shapes)
            .map(|(name, shape)| {
                let want = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
                let (got, got_shape, values) = r.tensor()?;
                if got != want || &got_shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "expected tensor {want} {shape:?}, found {got} {got_shape:?}"
                    )));
                }
                Ok(values)
            })
            .collect()
    };
    let params = read_set("")?;
    for (dst, src) in net.params_mut().into_iter().zip(&params) {
        dst.copy_from_slice(src);
    }
    let optimizer = match header.optimizer_step {
        Some(t) => {
            let m = read_set("m")?;
            let v = read_set("v")?;
            Some(AdamW {
                config: header.config.optimizer,
                t,
                m,
                v,
            })
        }
        None => None,
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        config: header.config,
        next_epoch: header.next_epoch,
        best_epoch: header.best_epoch,
        best_val_f1: header.best_val_f1,
        net,
        optimizer,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::AdamWConfig;

    fn checkpoint(mode: Mode, with_opt: bool) -> Checkpoint {
        let net = MtlNetwork::new(5, mode, 11);
        let mut opt = AdamW::for_network(AdamWConfig::default(), &net);
        opt.t = 7;
        opt.m.iter_mut().flatten().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        opt.v.iter_mut().flatten().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-6);
        Checkpoint {
            config: TrainConfig {
                mode,
                ..Default::default()
            },
            next_epoch: 3,
            best_epoch: Some(1),
            best_val_f1: Some(0.75),
            net,
            optimizer: with_opt.then_some(opt),
        }
    }

    #[test]
    fn round_trip() {
        for (mode, opt) in [(Mode::Mtl, true), (Mode::Stl, false), (Mode::Stl, true)] {
            let ck = checkpoint(mode, opt);
            let bytes = encode_checkpoint(&ck).unwrap();
            assert_eq!(&bytes[..8], MAGIC);
            assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode_checkpoint(&checkpoint(Mode::Mtl, true)).unwrap();
        for cut in [0, 5, 13, 100, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))));
        }
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Checkpoint(_))));
    }
}
