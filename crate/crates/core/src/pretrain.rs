//! Maximum-likelihood pretraining with the confidence penalty.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::optim::{clip_grad_norm, Adam, AdamConfig, OptimError};
use crate::policy::loss::{mle_loss, LossError};
use crate::policy::math::log_softmax;
use crate::policy::{Actor, ActorTrace, Dropout, ModelDims, Params, PolicyError, Real};
use crate::tssr::item_rng;
use crate::vocab::{Vocabulary, BOS_INDEX, EOS_INDEX, PAD_INDEX};

/// Fixed padded length of a pretraining row, [BOS] and [EOS] included.
pub const ROW_LEN: usize = 60;

/// Rows per gradient-accumulation chunk. Gradients are summed within a chunk
/// and then across chunks in index order, so the result does not depend on
/// the number of worker threads.
const CHUNK: usize = 8;

const DROPOUT_STREAM_SALT: u64 = 0x5eed_d409_0000_0001;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("line {line}: cannot tokenize at byte {position}")]
    Tokenize { line: usize, position: usize },
    #[error("no usable training rows")]
    EmptyCorpus,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid pretraining configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub beta: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-3,
            clip_norm: 10.0,
            epochs: 1,
            batch_size: 256,
            dropout: 0.2,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: &str| Err(PretrainError::Config(m.into()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Token rows padded to [`ROW_LEN`] with a mask that is 0 exactly at [PAD].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainBatch {
    pub tokens: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl PretrainBatch {
    /// Wraps each content sequence as `[BOS] seq [EOS] [PAD]…`.
    pub fn new(rows: &[&[usize]]) -> Self {
        let mut tokens = Vec::with_capacity(rows.len());
        let mut mask = Vec::with_capacity(rows.len());
        for row in rows {
            assert!(row.len() + 2 <= ROW_LEN, "row too long for the padded length");
            let mut t = Vec::with_capacity(ROW_LEN);
            t.push(BOS_INDEX);
            t.extend_from_slice(row);
            t.push(EOS_INDEX);
            let used = t.len();
            t.resize(ROW_LEN, PAD_INDEX);
            mask.push((0..ROW_LEN).map(|i| i < used).collect());
            tokens.push(t);
        }
        Self { tokens, mask }
    }

    fn used(&self, row: usize) -> usize {
        self.mask[row].iter().filter(|&&m| m).count()
    }
}

/// Tokenized corpus rows that fit the padded length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub rows: Vec<Vec<usize>>,
    /// Lines longer than `ROW_LEN - 2` tokens.
    pub skipped: usize,
}

pub fn encode_corpus<I, S>(lines: I, vocab: &Vocabulary) -> Result<EncodedCorpus, PretrainError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (n, line) in lines.into_iter().enumerate() {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        let tokens = vocab.tokenize(line).map_err(|e| PretrainError::Tokenize {
            line: n + 1,
            position: e.position,
        })?;
        if tokens.len() + 2 > ROW_LEN {
            skipped += 1;
        } else {
            rows.push(tokens);
        }
    }
    Ok(EncodedCorpus { rows, skipped })
}

/// Loss of one padded batch and its gradient. With `dropout` set, row `i`
/// draws its masks from stream `first_row + i` of the given seed.
pub fn batch_objective<T: Real>(
    actor: &Actor<T>,
    batch: &PretrainBatch,
    beta: f64,
    dropout: Option<(f64, u64, u64)>,
) -> Result<(f64, Actor<T>), PretrainError> {
    let traces: Vec<ActorTrace<T>> = (0..batch.tokens.len())
        .into_par_iter()
        .map(|r| {
            let used = batch.used(r);
            let tokens = &batch.tokens[r][..used];
            match dropout {
                Some((rate, seed, first_row)) => {
                    let mut rng = item_rng(seed ^ DROPOUT_STREAM_SALT, first_row + r as u64);
                    let mut d = Dropout { rate, rng: &mut rng };
                    actor.trace(tokens, Some(&mut d))
                }
                None => actor.trace::<rand_chacha::ChaCha8Rng>(tokens, None),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut logits = Vec::new();
    let mut targets = Vec::new();
    let mut bounds = Vec::with_capacity(traces.len());
    for (r, trace) in traces.iter().enumerate() {
        let start = logits.len();
        logits.extend(trace.logits.iter().cloned());
        targets.extend_from_slice(&batch.tokens[r][1..=trace.logits.len()]);
        bounds.push(start..logits.len());
    }
    let mask = vec![true; logits.len()];
    let (loss, dlogits) = mle_loss(&logits, &targets, &mask, beta)?;

    let grads = accumulate(actor, traces.len(), |r, g| {
        actor.backward(&traces[r], &dlogits[bounds[r].clone()], g);
    });
    Ok((loss, grads))
}

/// Sums per-item gradient contributions in a thread-count independent order.
pub(crate) fn accumulate<T: Real, P, F>(zero: &P, items: usize, f: F) -> P
where
    P: Params<T> + Clone + Send + Sync,
    F: Fn(usize, &mut P) + Sync,
{
    let blank = {
        let mut z = zero.clone();
        z.fill_zero();
        z
    };
    let chunks: Vec<P> = (0..items.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = blank.clone();
            for i in c * CHUNK..((c + 1) * CHUNK).min(items) {
                f(i, &mut g);
            }
            g
        })
        .collect();
    let mut total = blank;
    for c in &chunks {
        total.add_assign(c);
    }
    total
}

/// Mean per-token negative log-likelihood and confidence-penalized loss of
/// `rows` under `actor`, without dropout.
pub fn evaluate<T: Real>(actor: &Actor<T>, rows: &[Vec<usize>], beta: f64) -> Result<(f64, f64), PretrainError> {
    let per_row: Vec<(f64, f64, usize)> = rows
        .par_iter()
        .map(|row| {
            let mut tokens = Vec::with_capacity(row.len() + 2);
            tokens.push(BOS_INDEX);
            tokens.extend_from_slice(row);
            tokens.push(EOS_INDEX);
            let trace = actor.trace::<rand_chacha::ChaCha8Rng>(&tokens, None)?;
            let mut nll = 0.0;
            let mut penalized = 0.0;
            for (t, z) in trace.logits.iter().enumerate() {
                let lp = log_softmax(z);
                let neg_entropy: f64 = lp.iter().map(|&l| l.as_f64().exp() * l.as_f64()).sum();
                let ce = -lp[tokens[t + 1]].as_f64();
                nll += ce;
                penalized += ce + beta * neg_entropy;
            }
            Ok((nll, penalized, trace.logits.len()))
        })
        .collect::<Result<_, PretrainError>>()?;
    let count: usize = per_row.iter().map(|r| r.2).sum();
    if count == 0 {
        return Err(PretrainError::EmptyCorpus);
    }
    let nll: f64 = per_row.iter().map(|r| r.0).sum();
    let penalized: f64 = per_row.iter().map(|r| r.1).sum();
    Ok((nll / count as f64, penalized / count as f64))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub actor: Actor<f32>,
    pub adam: Adam<f32>,
    /// Training loss of every batch in order.
    pub losses: Vec<f64>,
}

/// Shuffled epochs of next-token training from a fresh initialization.
/// `on_step(step, loss)` is called after every optimizer step.
pub fn pretrain(
    rows: &[Vec<usize>],
    dims: ModelDims,
    config: &PretrainConfig,
    seed: u64,
    mut on_step: impl FnMut(u64, f64),
) -> Result<PretrainOutcome, PretrainError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let mut actor = Actor::<f32>::init(dims, &mut item_rng(seed, 0));
    let mut adam = Adam::new(&actor, AdamConfig::with_lr(config.lr));
    let mut order_rng = item_rng(seed, 1);
    let mut losses = Vec::new();
    let mut rows_seen = 0u64;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch_rows: Vec<&[usize]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let batch = PretrainBatch::new(&batch_rows);
            let dropout = (config.dropout > 0.0).then_some((config.dropout, seed, rows_seen));
            let (loss, mut grads) = batch_objective(&actor, &batch, config.beta, dropout)?;
            clip_grad_norm(&mut grads, config.clip_norm);
            adam.step(&mut actor, &grads)?;
            rows_seen += chunk.len() as u64;
            losses.push(loss);
            on_step(adam.step, loss);
        }
    }
    Ok(PretrainOutcome { actor, adam, losses })
}
