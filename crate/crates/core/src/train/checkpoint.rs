//! Single-file checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! "LFS-CKPT"            8 bytes magic
//! version               u32
//! header length         u64
//! header                JSON: config, step, rng, sampler, meta, blob table
//! payload               f32 values of every blob, in table order
//! sha256                32 bytes over everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainState};
use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LFS-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: u128,
}

#[derive(Debug, Serialize, Deserialize)]
struct Blob {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    rng: RngState,
    sampler: BatchSampler,
    adam_g_steps: u64,
    adam_d_steps: u64,
    meta: BTreeMap<String, String>,
    blobs: Vec<Blob>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn tensors(state: &TrainState) -> Vec<(String, &Tensor<f32>)> {
    let mut out = state.named_parameters();
    for (prefix, opt) in [("adam_g", &state.opt_g), ("adam_d", &state.opt_d)] {
        for (i, m) in opt.m.iter().enumerate() {
            out.push((format!("{prefix}.m.{i}"), m));
        }
        for (i, v) in opt.v.iter().enumerate() {
            out.push((format!("{prefix}.v.{i}"), v));
        }
    }
    out
}

fn tensors_mut(state: &mut TrainState) -> Vec<&mut Tensor<f32>> {
    let mut out = state.generator.parameters_mut();
    out.extend(state.discriminator.parameters_mut());
    out.extend(state.mapper.parameters_mut());
    for opt in [&mut state.opt_g, &mut state.opt_d] {
        out.extend(opt.m.iter_mut());
        out.extend(opt.v.iter_mut());
    }
    out
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let named = tensors(state);
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        rng: RngState {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos(),
        },
        sampler: state.sampler.clone(),
        adam_g_steps: state.opt_g.t,
        adam_d_steps: state.opt_d.t,
        meta: state.meta.clone(),
        blobs: named
            .iter()
            .map(|(name, t)| Blob {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in &named {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 8 + 4 + 8 + 32 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic; not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or corrupted file)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| corrupt(format!("header: {e}")))?;

    let mut state = TrainState::new(header.config)?;
    let expected: Vec<(String, Vec<usize>)> = tensors(&state)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != header.blobs.len() {
        return Err(corrupt(format!(
            "expected {} tensors, file has {}",
            expected.len(),
            header.blobs.len()
        )));
    }
    for ((name, shape), blob) in expected.iter().zip(&header.blobs) {
        if name != &blob.name || shape != &blob.shape {
            return Err(corrupt(format!(
                "tensor {} {:?} does not match model slot {name} {shape:?}",
                blob.name, blob.shape
            )));
        }
    }
    let payload = &body[header_end..];
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != total * 4 {
        return Err(corrupt(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            total * 4
        )));
    }
    let mut chunks = payload.chunks_exact(4);
    for t in tensors_mut(&mut state) {
        for v in t.data_mut() {
            *v = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(header.rng.word_pos);
    state.rng = rng;
    state.step = header.step;
    state.sampler = header.sampler;
    state.opt_g.t = header.adam_g_steps;
    state.opt_d.t = header.adam_d_steps;
    state.meta = header.meta;
    Ok(state)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state);
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::MapperConfig;
    use crate::networks::{DiscriminatorConfig, GeneratorConfig};

    fn tiny() -> TrainState {
        TrainState::new(TrainConfig {
            batch_size: 2,
            mapper: MapperConfig {
                hidden_sizes: vec![8],
                ..MapperConfig::default()
            },
            generator: GeneratorConfig {
                base_channels: 4,
                n_downsample: 1,
                n_res_blocks: 1,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                base_channels: 4,
                n_layers: 2,
                ..DiscriminatorConfig::default()
            },
            ..TrainConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_every_tensor() {
        let mut s = tiny();
        s.meta.insert("note".into(), "x".into());
        s.step = 7;
        let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        for ((n1, a), (n2, b)) in tensors(&s).into_iter().zip(tensors(&back)) {
            assert_eq!(n1, n2);
            assert_eq!(a, b);
        }
        assert_eq!(back.step, 7);
        assert_eq!(back.meta, s.meta);
        assert_eq!(back.rng, s.rng);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_checkpoint(&tiny());
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = encode_checkpoint(&tiny());
        bytes[8] = 99;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode_checkpoint(&tiny());
        let i = bytes.len() - 40;
        bytes[i] ^= 1;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("checksum"));
    }
}
