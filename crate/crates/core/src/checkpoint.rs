//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TSSR"  u32 version
//! u64 vocabulary hash
//! u64 |V|  u64 d_e  u64 d_h  u64 L  u8 head input (0 top, 1 all)
//! u64 parameter count
//! u32 tensor count, then per tensor:
//!     u32 name length, name bytes, u32 rank, rank × u64 dims, f32 data
//! u8 optimizer present; if 1:
//!     u64 step, f64 lr, f64 β1, f64 β2, f64 ε
//!     u32 tensor count, tensors named "adam.m.<param>" / "adam.v.<param>"
//! u64 seed, u64 × 2 RNG word position (low, high)
//! ```
//!
//! Parameter tensors are the actor's, optionally followed by the critic's.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::optim::{Adam, AdamConfig};
use crate::policy::{Actor, ActorCritic, Critic, HeadInput, ModelDims, Params, Tensor};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"TSSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was built for a different vocabulary (hash {found:016x}, expected {expected:016x})")]
    VocabMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab_hash: u64,
    pub actor: Actor<f32>,
    pub critic: Option<Critic<f32>>,
    /// Laid out like the actor, or like actor plus critic when a critic is
    /// present.
    pub adam: Option<Adam<f32>>,
    pub seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn from_actor(vocab: &Vocabulary, actor: Actor<f32>, adam: Option<Adam<f32>>, seed: u64) -> Self {
        Self {
            vocab_hash: vocab.content_hash(),
            actor,
            critic: None,
            adam,
            seed,
            rng_word_pos: 0,
        }
    }

    pub fn from_model(vocab: &Vocabulary, model: ActorCritic<f32>, adam: Option<Adam<f32>>, seed: u64) -> Self {
        Self {
            vocab_hash: vocab.content_hash(),
            actor: model.actor,
            critic: Some(model.critic),
            adam,
            seed,
            rng_word_pos: 0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.actor.dims
    }

    pub fn parameter_count(&self) -> usize {
        self.actor.parameter_count() + self.critic.as_ref().map_or(0, |c| c.parameter_count())
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), CheckpointError> {
        let expected = vocab.content_hash();
        if self.vocab_hash != expected {
            return Err(CheckpointError::VocabMismatch {
                expected,
                found: self.vocab_hash,
            });
        }
        Ok(())
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = self.actor.tensors();
        if let Some(c) = &self.critic {
            out.extend(c.tensors());
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.dims();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.vocab_hash.to_le_bytes())?;
        for x in [d.vocab, d.embed, d.hidden, d.layers] {
            w.write_all(&(x as u64).to_le_bytes())?;
        }
        w.write_all(&[head_code(d.head_input)])?;
        w.write_all(&(self.parameter_count() as u64).to_le_bytes())?;
        let tensors = self.named_tensors();
        write_tensors(&mut w, tensors.iter().map(|(n, t)| (n.clone(), *t)))?;
        match &self.adam {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.step.to_le_bytes())?;
                let c = adam.config;
                for x in [c.lr, c.beta1, c.beta2, c.eps] {
                    w.write_all(&x.to_le_bytes())?;
                }
                let m = tensors.iter().zip(&adam.m).map(|((n, _), t)| (format!("adam.m.{n}"), t));
                let v = tensors.iter().zip(&adam.v).map(|((n, _), t)| (format!("adam.v.{n}"), t));
                let all: Vec<(String, &Tensor<f32>)> = m.chain(v).collect();
                write_tensors(&mut w, all.into_iter())?;
            }
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.rng_word_pos as u64).to_le_bytes())?;
        w.write_all(&((self.rng_word_pos >> 64) as u64).to_le_bytes())?;
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let vocab_hash = read_u64(&mut r)?;
        let mut dim = [0usize; 4];
        for x in &mut dim {
            *x = read_len(&mut r)?;
        }
        let head_input = match read_u8(&mut r)? {
            0 => HeadInput::TopHidden,
            1 => HeadInput::AllLayers,
            x => return Err(CheckpointError::Format(format!("head input code {x}"))),
        };
        let dims = ModelDims {
            vocab: dim[0],
            embed: dim[1],
            hidden: dim[2],
            layers: dim[3],
            head_input,
        };
        if dims.vocab == 0 || dims.embed == 0 || dims.hidden == 0 || dims.layers == 0 || dims.layers > 64 {
            return Err(CheckpointError::Format("implausible model dimensions".into()));
        }
        let count = read_u64(&mut r)?;
        let tensors = read_tensors(&mut r)?;

        let mut actor = Actor::<f32>::zeros(dims);
        let actor_len = actor.tensors().len();
        let mut rest = fill(&mut actor, &tensors)?;
        let critic = if rest.is_empty() {
            None
        } else {
            let mut c = Critic::<f32>::zeros(dims);
            rest = fill(&mut c, rest)?;
            if !rest.is_empty() {
                return Err(CheckpointError::Format("trailing parameter tensors".into()));
            }
            Some(c)
        };
        let mut ck = Self {
            vocab_hash,
            actor,
            critic,
            adam: None,
            seed: 0,
            rng_word_pos: 0,
        };
        if ck.parameter_count() as u64 != count {
            return Err(CheckpointError::Format(format!(
                "header reports {count} parameters, tensors hold {}",
                ck.parameter_count()
            )));
        }

        match read_u8(&mut r)? {
            0 => {}
            1 => {
                let step = read_u64(&mut r)?;
                let mut f = [0f64; 4];
                for x in &mut f {
                    *x = f64::from_le_bytes(read_array(&mut r)?);
                }
                let config = AdamConfig {
                    lr: f[0],
                    beta1: f[1],
                    beta2: f[2],
                    eps: f[3],
                };
                let moments = read_tensors(&mut r)?;
                let n = actor_len + ck.critic.as_ref().map_or(0, |c| c.tensors().len());
                if moments.len() != 2 * n {
                    return Err(CheckpointError::Format("optimizer state does not match parameters".into()));
                }
                let names: Vec<String> = ck.named_tensors().into_iter().map(|(n, _)| n).collect();
                let shapes: Vec<Vec<usize>> = ck.named_tensors().iter().map(|(_, t)| t.shape.clone()).collect();
                let take = |prefix: &str, part: &[(String, Tensor<f32>)]| {
                    part.iter()
                        .zip(names.iter().zip(&shapes))
                        .map(|((name, t), (expected, shape))| {
                            if *name != format!("{prefix}{expected}") || t.shape != *shape {
                                return Err(CheckpointError::Format(format!("unexpected optimizer tensor {name}")));
                            }
                            Ok(t.clone())
                        })
                        .collect::<Result<Vec<_>, _>>()
                };
                let m = take("adam.m.", &moments[..n])?;
                let v = take("adam.v.", &moments[n..])?;
                ck.adam = Some(Adam { config, step, m, v });
            }
            x => return Err(CheckpointError::Format(format!("optimizer flag {x}"))),
        }
        ck.seed = read_u64(&mut r)?;
        let lo = read_u64(&mut r)? as u128;
        let hi = read_u64(&mut r)? as u128;
        ck.rng_word_pos = lo | (hi << 64);
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let w = BufWriter::new(File::create(path)?);
        self.write_to(w)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Actor and critic; the critic is required.
    pub fn model(&self) -> Option<ActorCritic<f32>> {
        Some(ActorCritic {
            actor: self.actor.clone(),
            critic: self.critic.clone()?,
        })
    }
}

fn head_code(h: HeadInput) -> u8 {
    match h {
        HeadInput::TopHidden => 0,
        HeadInput::AllLayers => 1,
    }
}

fn write_tensors<'a>(
    w: &mut impl Write,
    tensors: impl ExactSizeIterator<Item = (String, &'a Tensor<f32>)>,
) -> io::Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.data.len());
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_tensors(r: &mut impl Read) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = read_u32(r)? as usize;
        if len > 1024 {
            return Err(CheckpointError::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_len(r)?);
        }
        let size = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&s| s <= 1 << 32)
            .ok_or_else(|| CheckpointError::Format(format!("tensor {name} is too large")))?;
        let mut bytes = vec![0u8; 4 * size];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    Ok(out)
}

/// Copies the leading tensors of `src` into `dst` after checking names and
/// shapes; returns the unused remainder.
fn fill<'a, P: Params<f32>>(
    dst: &mut P,
    src: &'a [(String, Tensor<f32>)],
) -> Result<&'a [(String, Tensor<f32>)], CheckpointError> {
    let expected: Vec<(String, Vec<usize>)> = dst.tensors().iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect();
    if src.len() < expected.len() {
        return Err(CheckpointError::Format("missing parameter tensors".into()));
    }
    for (slot, ((name, shape), (found, t))) in dst.tensors_mut().into_iter().zip(expected.iter().zip(src)) {
        if found != name || t.shape != *shape {
            return Err(CheckpointError::Format(format!(
                "expected tensor {name} {shape:?}, found {found} {:?}",
                t.shape
            )));
        }
        *slot = t.clone();
    }
    Ok(&src[expected.len()..])
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_len(r: &mut impl Read) -> Result<usize, CheckpointError> {
    usize::try_from(read_u64(r)?).map_err(|_| CheckpointError::Format("length overflows".into()))
}
