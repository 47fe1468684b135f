//! Binary checkpoints.
//!
//! Layout: magic `KNMNCKPT`, format version (u32 LE), header length (u64
//! LE), JSON header (dims, counters, layer specs, Adam step counters), then
//! every array as little-endian f64 in canonical order (per network: each
//! param's value, first moment, second moment; then batch-norm running
//! mean/var), then a SHA-256 digest of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::KnowManModel;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Parameterized};

const MAGIC: &[u8; 8] = b"KNMNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct NetHeader {
    input_dim: usize,
    specs: Vec<LayerSpec>,
    param_steps: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n_classes: usize,
    n_lfs: usize,
    seed: u64,
    main_steps: u64,
    d_steps: u64,
    fs: NetHeader,
    clf: NetHeader,
    disc: Option<NetHeader>,
}

fn net_header(net: &Network) -> NetHeader {
    NetHeader {
        input_dim: net.input_dim(),
        specs: net.specs(),
        param_steps: net.params().iter().map(|p| p.step).collect(),
    }
}

fn push_arrays(net: &Network, out: &mut Vec<u8>) {
    for p in net.params() {
        for arr in [&p.value, &p.m, &p.v] {
            for x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    for buf in net.buffers() {
        for x in buf {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn checkpoint_bytes(model: &KnowManModel) -> Vec<u8> {
    let header = Header {
        n_classes: model.n_classes,
        n_lfs: model.n_lfs,
        seed: model.seed,
        main_steps: model.main_steps,
        d_steps: model.d_steps,
        fs: net_header(&model.fs),
        clf: net_header(&model.clf),
        disc: model.disc.as_ref().map(net_header),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    push_arrays(&model.fs, &mut out);
    push_arrays(&model.clf, &mut out);
    if let Some(d) = &model.disc {
        push_arrays(d, &mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_checkpoint(model: &KnowManModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, checkpoint_bytes(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<KnowManModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<()> {
        let src = self.take(dst.len() * 8)?;
        for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

fn read_network(h: &NetHeader, r: &mut Reader) -> Result<Network> {
    let mut net = Network::new(h.input_dim, &h.specs, 0)?;
    if net.params().len() != h.param_steps.len() {
        return Err(Error::Checkpoint("param count does not match layer specs".into()));
    }
    for (p, &step) in net.params_mut().into_iter().zip(&h.param_steps) {
        r.fill(&mut p.value)?;
        r.fill(&mut p.m)?;
        r.fill(&mut p.v)?;
        p.step = step;
    }
    for buf in net.buffers_mut() {
        r.fill(buf)?;
    }
    Ok(net)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<KnowManModel> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a knowman checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let fs = read_network(&header.fs, &mut r)?;
    let clf = read_network(&header.clf, &mut r)?;
    let disc = header
        .disc
        .as_ref()
        .map(|h| read_network(h, &mut r))
        .transpose()?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after arrays".into()));
    }
    Ok(KnowManModel {
        fs,
        clf,
        disc,
        n_classes: header.n_classes,
        n_lfs: header.n_lfs,
        seed: header.seed,
        main_steps: header.main_steps,
        d_steps: header.d_steps,
    })
}
