//! GRU actor and critic with exact gradients by backpropagation through time.
//!
//! Both networks embed the previous token, run a stack of GRU layers and read
//! out from the top layer. The actor's head sees the concatenation of the top
//! layer's output and hidden state (identical vectors for a GRU) or, as a
//! variant, the top output next to every layer's hidden state. The critic adds
//! a one-hidden-layer tanh MLP producing a scalar value.
//!
//! Gate layout follows the common `[reset; update; candidate]` stacking with
//! separate input and recurrent biases:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

pub mod loss;
pub mod math;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::vocab::{BOS_INDEX, EOS_INDEX};
use math::{dot, log_softmax, matvec, matvec_t_acc, outer_acc, sigmoid};

/// Floating-point element type of parameters and activations.
pub trait Real:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("sequence must start with [BOS]")]
    MissingBos,
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            shape: vec![rows, cols],
            data: (0..rows * cols)
                .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
                .collect(),
        }
    }

    /// `blocks` stacked square orthogonal matrices of side `n`.
    fn orthogonal_blocks<R: Rng + ?Sized>(blocks: usize, n: usize, rng: &mut R) -> Self {
        let mut data = Vec::with_capacity(blocks * n * n);
        for _ in 0..blocks {
            data.extend(orthogonal(n, rng).into_iter().map(T::from_f64));
        }
        Self {
            shape: vec![blocks * n, n],
            data,
        }
    }
}

/// Random orthogonal matrix: modified Gram–Schmidt on a Gaussian matrix.
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= proj * b;
                }
            }
            let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|a| *a /= norm);
        }
        if ok {
            return rows.concat();
        }
    }
}

/// Which hidden states the actor head reads next to the top-layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadInput {
    /// `[output; top hidden]`, width `2·d_h`.
    TopHidden,
    /// `[output; h_1; …; h_L]`, width `d_h + L·d_h`.
    AllLayers,
}

impl HeadInput {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TopHidden => "top",
            Self::AllLayers => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top" => Some(Self::TopHidden),
            "all" => Some(Self::AllLayers),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_input: HeadInput,
}

impl ModelDims {
    /// Embedding width defaults to twice the vocabulary size.
    pub fn new(vocab: usize, hidden: usize, layers: usize) -> Self {
        Self {
            vocab,
            embed: 2 * vocab,
            hidden,
            layers,
            head_input: HeadInput::TopHidden,
        }
    }

    pub fn head_width(&self) -> usize {
        match self.head_input {
            HeadInput::TopHidden => 2 * self.hidden,
            HeadInput::AllLayers => self.hidden * (1 + self.layers),
        }
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed
        } else {
            self.hidden
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

/// Embedding plus GRU stack, shared in shape by actor and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub embedding: Tensor<T>,
    pub layers: Vec<GruLayer<T>>,
}

/// Per-layer recurrent state, zero at episode start.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub layers: Vec<Vec<T>>,
}

impl<T: Real> HiddenState<T> {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            layers: vec![vec![T::zero(); dims.hidden]; dims.layers],
        }
    }

    pub fn top(&self) -> &[T] {
        self.layers.last().expect("at least one layer")
    }
}

/// Activations of one layer at one step, kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache<T> {
    x: Vec<T>,
    mask: Option<Vec<T>>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
    h: Vec<T>,
}

/// Forward activations over a teacher-forced input sequence.
#[derive(Debug, Clone)]
pub struct BackboneTrace<T> {
    tokens: Vec<usize>,
    steps: Vec<Vec<LayerCache<T>>>,
}

impl<T: Real> BackboneTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn hidden(&self, t: usize, layer: usize) -> &[T] {
        &self.steps[t][layer].h
    }

    fn top(&self, t: usize) -> &[T] {
        &self.steps[t].last().expect("at least one layer").h
    }
}

/// Dropout applied during pretraining to embeddings and between layers.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, d: &mut Dropout<'_, R>) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - d.rate));
    (0..len)
        .map(|_| if d.rng.gen::<f64>() < d.rate { T::zero() } else { keep })
        .collect()
}

impl<T: Real> GruLayer<T> {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    fn hidden(&self) -> usize {
        self.w_hh.shape[1]
    }

    /// Returns `(r, z, n, hn, h')`.
    #[allow(clippy::type_complexity)]
    fn forward(&self, x: &[T], h: &[T]) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let d = self.hidden();
        let mut gi = vec![T::zero(); 3 * d];
        let mut gh = vec![T::zero(); 3 * d];
        matvec(&self.w_ih.data, &self.b_ih.data, x, &mut gi);
        matvec(&self.w_hh.data, &self.b_hh.data, h, &mut gh);
        let mut r = vec![T::zero(); d];
        let mut z = vec![T::zero(); d];
        let mut n = vec![T::zero(); d];
        let mut h_new = vec![T::zero(); d];
        let hn = gh[2 * d..].to_vec();
        for j in 0..d {
            r[j] = sigmoid(gi[j] + gh[j]);
            z[j] = sigmoid(gi[d + j] + gh[d + j]);
            n[j] = (gi[2 * d + j] + r[j] * hn[j]).tanh();
            h_new[j] = (T::one() - z[j]) * n[j] + z[j] * h[j];
        }
        (r, z, n, hn, h_new)
    }

    /// Accumulates parameter gradients for one step and returns
    /// `(d input, d previous hidden)`.
    fn backward(&self, c: &LayerCache<T>, dh: &[T], grad: &mut GruLayer<T>) -> (Vec<T>, Vec<T>) {
        let d = self.hidden();
        let one = T::one();
        let mut gi = vec![T::zero(); 3 * d];
        let mut gh = vec![T::zero(); 3 * d];
        let mut dh_prev = vec![T::zero(); d];
        for j in 0..d {
            let dn = dh[j] * (one - c.z[j]);
            let dz = dh[j] * (c.h_prev[j] - c.n[j]);
            dh_prev[j] = dh[j] * c.z[j];
            let dn_pre = dn * (one - c.n[j] * c.n[j]);
            let dr = dn_pre * c.hn[j];
            let dr_pre = dr * c.r[j] * (one - c.r[j]);
            let dz_pre = dz * c.z[j] * (one - c.z[j]);
            gi[j] = dr_pre;
            gi[d + j] = dz_pre;
            gi[2 * d + j] = dn_pre;
            gh[j] = dr_pre;
            gh[d + j] = dz_pre;
            gh[2 * d + j] = dn_pre * c.r[j];
        }
        outer_acc(&mut grad.w_ih.data, &gi, &c.x);
        outer_acc(&mut grad.w_hh.data, &gh, &c.h_prev);
        for (b, g) in grad.b_ih.data.iter_mut().zip(&gi) {
            *b += *g;
        }
        for (b, g) in grad.b_hh.data.iter_mut().zip(&gh) {
            *b += *g;
        }
        let mut dx = vec![T::zero(); c.x.len()];
        matvec_t_acc(&self.w_ih.data, &gi, &mut dx);
        matvec_t_acc(&self.w_hh.data, &gh, &mut dh_prev);
        (dx, dh_prev)
    }
}

impl<T: Real> Backbone<T> {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            embedding: Tensor::zeros(&[dims.vocab, dims.embed]),
            layers: (0..dims.layers)
                .map(|l| GruLayer::zeros(dims.layer_input(l), dims.hidden))
                .collect(),
        }
    }

    /// Xavier-uniform embedding and input weights, orthogonal recurrent
    /// weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let embedding = Tensor::xavier(dims.vocab, dims.embed, rng);
        let layers = (0..dims.layers)
            .map(|l| GruLayer {
                w_ih: Tensor::xavier(3 * dims.hidden, dims.layer_input(l), rng),
                w_hh: Tensor::orthogonal_blocks(3, dims.hidden, rng),
                b_ih: Tensor::zeros(&[3 * dims.hidden]),
                b_hh: Tensor::zeros(&[3 * dims.hidden]),
            })
            .collect();
        Self { embedding, layers }
    }

    fn vocab(&self) -> usize {
        self.embedding.shape[0]
    }

    fn check_token(&self, token: usize) -> Result<(), PolicyError> {
        if token < self.vocab() {
            Ok(())
        } else {
            Err(PolicyError::TokenOutOfRange {
                token,
                vocab: self.vocab(),
            })
        }
    }

    /// One inference step; updates `state` in place.
    pub fn step(&self, state: &mut HiddenState<T>, token: usize) -> Result<(), PolicyError> {
        self.check_token(token)?;
        let mut x = self.embedding.row(token).to_vec();
        for (layer, h) in self.layers.iter().zip(state.layers.iter_mut()) {
            let (_, _, _, _, h_new) = layer.forward(&x, h);
            *h = h_new;
            x.clone_from(h);
        }
        Ok(())
    }

    /// Teacher-forced pass from a zero state, caching activations.
    pub fn trace<R: Rng + ?Sized>(
        &self,
        tokens: &[usize],
        mut dropout: Option<&mut Dropout<'_, R>>,
    ) -> Result<BackboneTrace<T>, PolicyError> {
        let hidden = self.layers[0].hidden();
        let mut state = vec![vec![T::zero(); hidden]; self.layers.len()];
        let mut steps = Vec::with_capacity(tokens.len());
        for &token in tokens {
            self.check_token(token)?;
            let mut input = self.embedding.row(token).to_vec();
            let mut caches = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let mask = dropout.as_deref_mut().map(|d| dropout_mask(input.len(), d));
                let x: Vec<T> = match &mask {
                    Some(m) => input.iter().zip(m).map(|(a, b)| *a * *b).collect(),
                    None => input,
                };
                let (r, z, n, hn, h) = layer.forward(&x, &state[l]);
                let h_prev = std::mem::replace(&mut state[l], h.clone());
                input = h.clone();
                caches.push(LayerCache {
                    x,
                    mask,
                    h_prev,
                    r,
                    z,
                    n,
                    hn,
                    h,
                });
            }
            steps.push(caches);
        }
        Ok(BackboneTrace {
            tokens: tokens.to_vec(),
            steps,
        })
    }

    /// Backpropagation through time. `dh_out[t]` holds the loss gradient with
    /// respect to every layer's hidden output at step `t`, layer-major.
    pub fn backward(&self, trace: &BackboneTrace<T>, dh_out: &[Vec<T>], grad: &mut Backbone<T>) {
        let hidden = self.layers[0].hidden();
        let depth = self.layers.len();
        let mut carry = vec![vec![T::zero(); hidden]; depth];
        for t in (0..trace.len()).rev() {
            let mut from_above: Option<Vec<T>> = None;
            for l in (0..depth).rev() {
                let cache = &trace.steps[t][l];
                let mut dh = carry[l].clone();
                for (a, b) in dh.iter_mut().zip(&dh_out[t][l * hidden..(l + 1) * hidden]) {
                    *a += *b;
                }
                if let Some(above) = from_above.take() {
                    for (a, b) in dh.iter_mut().zip(above) {
                        *a += b;
                    }
                }
                let (mut dx, dh_prev) = self.layers[l].backward(cache, &dh, &mut grad.layers[l]);
                carry[l] = dh_prev;
                if let Some(mask) = &cache.mask {
                    for (a, m) in dx.iter_mut().zip(mask) {
                        *a *= *m;
                    }
                }
                if l == 0 {
                    let row = grad.embedding.row_mut(trace.tokens[t]);
                    for (a, b) in row.iter_mut().zip(&dx) {
                        *a += *b;
                    }
                } else {
                    from_above = Some(dx);
                }
            }
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.embedding"), &self.embedding));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.gru.{l}.w_ih"), &layer.w_ih));
            out.push((format!("{prefix}.gru.{l}.w_hh"), &layer.w_hh));
            out.push((format!("{prefix}.gru.{l}.b_ih"), &layer.b_ih));
            out.push((format!("{prefix}.gru.{l}.b_hh"), &layer.b_hh));
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.embedding);
        for layer in &mut self.layers {
            out.push(&mut layer.w_ih);
            out.push(&mut layer.w_hh);
            out.push(&mut layer.b_ih);
            out.push(&mut layer.b_hh);
        }
    }
}

/// Named parameter tensors in a fixed order.
pub trait Params<T: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// `self += other` elementwise; both must share a layout.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let theirs: Vec<Vec<T>> = other.tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Token generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor<T> {
    pub dims: ModelDims,
    pub backbone: Backbone<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

/// Forward activations of the actor over a teacher-forced sequence.
#[derive(Debug, Clone)]
pub struct ActorTrace<T> {
    pub backbone: BackboneTrace<T>,
    pub logits: Vec<Vec<T>>,
}

/// A sampled episode: `tokens` starts with [BOS]; one log-prob and entropy per
/// sampled token.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence<T> {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<T>,
    pub entropies: Vec<T>,
}

impl<T: Real> Actor<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            backbone: Backbone::zeros(&dims),
            head_w: Tensor::zeros(&[dims.vocab, dims.head_width()]),
            head_b: Tensor::zeros(&[dims.vocab]),
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let backbone = Backbone::init(&dims, rng);
        Self {
            dims,
            backbone,
            head_w: Tensor::xavier(dims.vocab, dims.head_width(), rng),
            head_b: Tensor::zeros(&[dims.vocab]),
        }
    }

    pub fn cast<U: Real>(&self) -> Actor<U> {
        let mut out = Actor::<U>::zeros(self.dims);
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    fn head_input(&self, layers: &[&[T]]) -> Vec<T> {
        let top = *layers.last().expect("at least one layer");
        let mut u = Vec::with_capacity(self.dims.head_width());
        u.extend_from_slice(top);
        match self.dims.head_input {
            HeadInput::TopHidden => u.extend_from_slice(top),
            HeadInput::AllLayers => layers.iter().for_each(|h| u.extend_from_slice(h)),
        }
        u
    }

    fn logits_from(&self, layers: &[&[T]]) -> Vec<T> {
        let u = self.head_input(layers);
        let mut logits = vec![T::zero(); self.dims.vocab];
        matvec(&self.head_w.data, &self.head_b.data, &u, &mut logits);
        logits
    }

    /// Embeds `token`, advances `state` and returns next-token logits.
    pub fn forward_step(&self, state: &mut HiddenState<T>, token: usize) -> Result<Vec<T>, PolicyError> {
        self.backbone.step(state, token)?;
        let layers: Vec<&[T]> = state.layers.iter().map(Vec::as_slice).collect();
        Ok(self.logits_from(&layers))
    }

    /// Multinomial sampling from [BOS] until [EOS] or `t_max` tokens
    /// including [BOS] and [EOS].
    pub fn sample_sequence<R: Rng + ?Sized>(&self, rng: &mut R, t_max: usize) -> SampledSequence<T> {
        let mut state = HiddenState::zeros(&self.dims);
        let mut tokens = vec![BOS_INDEX];
        let mut log_probs = Vec::new();
        let mut entropies = Vec::new();
        while tokens.len() < t_max {
            let prev = *tokens.last().expect("non-empty");
            let logits = self.forward_step(&mut state, prev).expect("sampled tokens are in range");
            let lp = log_softmax(&logits);
            let action = sample_categorical(&lp, rng);
            log_probs.push(lp[action]);
            entropies.push(math::entropy(&lp));
            tokens.push(action);
            if action == EOS_INDEX {
                break;
            }
        }
        SampledSequence {
            tokens,
            log_probs,
            entropies,
        }
    }

    /// Teacher-forced pass over `tokens[..n-1]`; the logits at step `t`
    /// predict `tokens[t+1]`.
    pub fn trace<R: Rng + ?Sized>(
        &self,
        tokens: &[usize],
        dropout: Option<&mut Dropout<'_, R>>,
    ) -> Result<ActorTrace<T>, PolicyError> {
        if tokens.first() != Some(&BOS_INDEX) {
            return Err(PolicyError::MissingBos);
        }
        let inputs = &tokens[..tokens.len() - 1];
        let backbone = self.backbone.trace(inputs, dropout)?;
        let logits = (0..backbone.len())
            .map(|t| {
                let layers: Vec<&[T]> = (0..self.dims.layers).map(|l| backbone.hidden(t, l)).collect();
                self.logits_from(&layers)
            })
            .collect();
        Ok(ActorTrace { backbone, logits })
    }

    /// Log-probabilities of the realized tokens and full-distribution
    /// entropies at every step.
    pub fn logprob_entropy(&self, tokens: &[usize]) -> Result<(Vec<T>, Vec<T>), PolicyError> {
        let trace = self.trace::<rand_chacha::ChaCha8Rng>(tokens, None)?;
        let mut log_probs = Vec::with_capacity(trace.logits.len());
        let mut entropies = Vec::with_capacity(trace.logits.len());
        for (t, logits) in trace.logits.iter().enumerate() {
            let lp = log_softmax(logits);
            log_probs.push(lp[tokens[t + 1]]);
            entropies.push(math::entropy(&lp));
        }
        Ok((log_probs, entropies))
    }

    /// Accumulates parameter gradients given `dlogits[t]`.
    pub fn backward(&self, trace: &ActorTrace<T>, dlogits: &[Vec<T>], grad: &mut Actor<T>) {
        let h = self.dims.hidden;
        let depth = self.dims.layers;
        let mut dh_out = Vec::with_capacity(trace.logits.len());
        for (t, dl) in dlogits.iter().enumerate() {
            let layers: Vec<&[T]> = (0..depth).map(|l| trace.backbone.hidden(t, l)).collect();
            let u = self.head_input(&layers);
            outer_acc(&mut grad.head_w.data, dl, &u);
            for (b, g) in grad.head_b.data.iter_mut().zip(dl) {
                *b += *g;
            }
            let mut du = vec![T::zero(); u.len()];
            matvec_t_acc(&self.head_w.data, dl, &mut du);
            let mut dh = vec![T::zero(); depth * h];
            let top = (depth - 1) * h;
            for j in 0..h {
                dh[top + j] += du[j];
            }
            match self.dims.head_input {
                HeadInput::TopHidden => {
                    for j in 0..h {
                        dh[top + j] += du[h + j];
                    }
                }
                HeadInput::AllLayers => {
                    for (a, b) in dh.iter_mut().zip(&du[h..]) {
                        *a += *b;
                    }
                }
            }
            dh_out.push(dh);
        }
        self.backbone.backward(&trace.backbone, &dh_out, &mut grad.backbone);
    }
}

impl<T: Real> Params<T> for Actor<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.backbone.tensors("actor", &mut out);
        out.push(("actor.head.w".into(), &self.head_w));
        out.push(("actor.head.b".into(), &self.head_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.backbone.tensors_mut(&mut out);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

/// Draws an index from a log-probability vector with one uniform variate.
pub fn sample_categorical<T: Real, R: Rng + ?Sized>(log_probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        let p = lp.as_f64().exp();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Value estimator: its own backbone plus a tanh MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    pub dims: ModelDims,
    pub backbone: Backbone<T>,
    pub value_w1: Tensor<T>,
    pub value_b1: Tensor<T>,
    pub value_w2: Tensor<T>,
    pub value_b2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct CriticTrace<T> {
    pub backbone: BackboneTrace<T>,
    hidden: Vec<Vec<T>>,
    pub values: Vec<T>,
}

impl<T: Real> Critic<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        let h = dims.hidden;
        Self {
            dims,
            backbone: Backbone::zeros(&dims),
            value_w1: Tensor::zeros(&[h, h]),
            value_b1: Tensor::zeros(&[h]),
            value_w2: Tensor::zeros(&[1, h]),
            value_b2: Tensor::zeros(&[1]),
        }
    }

    /// Copies the actor's backbone and draws a fresh value head.
    pub fn from_actor<R: Rng + ?Sized>(actor: &Actor<T>, rng: &mut R) -> Self {
        let h = actor.dims.hidden;
        Self {
            dims: actor.dims,
            backbone: actor.backbone.clone(),
            value_w1: Tensor::xavier(h, h, rng),
            value_b1: Tensor::zeros(&[h]),
            value_w2: Tensor::xavier(1, h, rng),
            value_b2: Tensor::zeros(&[1]),
        }
    }

    pub fn cast<U: Real>(&self) -> Critic<U> {
        let mut out = Critic::<U>::zeros(self.dims);
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Returns the head's hidden activation and the value.
    fn head(&self, top: &[T]) -> (Vec<T>, T) {
        let mut v1 = vec![T::zero(); self.dims.hidden];
        matvec(&self.value_w1.data, &self.value_b1.data, top, &mut v1);
        v1.iter_mut().for_each(|a| *a = a.tanh());
        let v = self.value_b2.data[0] + dot(&self.value_w2.data, &v1);
        (v1, v)
    }

    /// Advances `state` with `token` and returns the value of the prefix
    /// ending in it.
    pub fn value_step(&self, state: &mut HiddenState<T>, token: usize) -> Result<T, PolicyError> {
        self.backbone.step(state, token)?;
        Ok(self.head(state.top()).1)
    }

    /// Value of a prefix starting with [BOS].
    pub fn value(&self, prefix: &[usize]) -> Result<T, PolicyError> {
        if prefix.first() != Some(&BOS_INDEX) {
            return Err(PolicyError::MissingBos);
        }
        let mut state = HiddenState::zeros(&self.dims);
        let mut v = T::zero();
        for &token in prefix {
            v = self.value_step(&mut state, token)?;
        }
        Ok(v)
    }

    /// Values of every prefix `tokens[..=t]`.
    pub fn trace(&self, tokens: &[usize]) -> Result<CriticTrace<T>, PolicyError> {
        if tokens.first() != Some(&BOS_INDEX) {
            return Err(PolicyError::MissingBos);
        }
        let backbone = self.backbone.trace::<rand_chacha::ChaCha8Rng>(tokens, None)?;
        let (hidden, values) = (0..backbone.len()).map(|t| self.head(backbone.top(t))).unzip();
        Ok(CriticTrace {
            backbone,
            hidden,
            values,
        })
    }

    pub fn backward(&self, trace: &CriticTrace<T>, dvalues: &[T], grad: &mut Critic<T>) {
        let h = self.dims.hidden;
        let depth = self.dims.layers;
        let mut dh_out = Vec::with_capacity(dvalues.len());
        for (t, &dv) in dvalues.iter().enumerate() {
            let mut dh = vec![T::zero(); depth * h];
            if dv != T::zero() {
                let v1 = &trace.hidden[t];
                math::axpy(&mut grad.value_w2.data, dv, v1);
                grad.value_b2.data[0] += dv;
                let dpre: Vec<T> = v1
                    .iter()
                    .zip(&self.value_w2.data)
                    .map(|(&a, &w)| dv * w * (T::one() - a * a))
                    .collect();
                let top = trace.backbone.top(t);
                outer_acc(&mut grad.value_w1.data, &dpre, top);
                for (b, g) in grad.value_b1.data.iter_mut().zip(&dpre) {
                    *b += *g;
                }
                matvec_t_acc(&self.value_w1.data, &dpre, &mut dh[(depth - 1) * h..]);
            }
            dh_out.push(dh);
        }
        self.backbone.backward(&trace.backbone, &dh_out, &mut grad.backbone);
    }
}

impl<T: Real> Params<T> for Critic<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.backbone.tensors("critic", &mut out);
        out.push(("critic.value.w1".into(), &self.value_w1));
        out.push(("critic.value.b1".into(), &self.value_b1));
        out.push(("critic.value.w2".into(), &self.value_w2));
        out.push(("critic.value.b2".into(), &self.value_b2));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.backbone.tensors_mut(&mut out);
        out.push(&mut self.value_w1);
        out.push(&mut self.value_b1);
        out.push(&mut self.value_w2);
        out.push(&mut self.value_b2);
        out
    }
}

/// Actor and critic optimized together.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub actor: Actor<T>,
    pub critic: Critic<T>,
}

impl<T: Real> ActorCritic<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            actor: Actor::zeros(dims),
            critic: Critic::zeros(dims),
        }
    }

    pub fn cast<U: Real>(&self) -> ActorCritic<U> {
        ActorCritic {
            actor: self.actor.cast(),
            critic: self.critic.cast(),
        }
    }
}

impl<T: Real> Params<T> for ActorCritic<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.actor.tensors();
        out.extend(self.critic.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.actor.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests;
