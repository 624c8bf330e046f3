//! Dense kernels over slices. Reductions use a fixed lane layout so results do
//! not depend on the target's vector width.

use super::Real;

const LANES: usize = 8;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES * LANES;
    for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += *x * *y;
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// `y += alpha * x`
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * *b;
    }
}

/// `out[i] = bias[i] + W[i] · x` for a row-major `W` with `x.len()` columns.
pub fn matvec<T: Real>(w: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = bias[i] + dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `out += Wᵀ g` for a row-major `W` with `out.len()` columns.
pub fn matvec_t_acc<T: Real>(w: &[T], g: &[T], out: &mut [T]) {
    let cols = out.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi != T::zero() {
            axpy(out, gi, &w[i * cols..(i + 1) * cols]);
        }
    }
}

/// `dW += g ⊗ x`
pub fn outer_acc<T: Real>(dw: &mut [T], g: &[T], x: &[T]) {
    let cols = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi != T::zero() {
            axpy(&mut dw[i * cols..(i + 1) * cols], gi, x);
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).fold(T::zero(), |a, b| a + b);
    let log_z = max + sum.ln();
    logits.iter().map(|&z| z - log_z).collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    log_softmax(logits).into_iter().map(T::exp).collect()
}

/// Entropy `-Σ p log p` from log-probabilities.
pub fn entropy<T: Real>(log_probs: &[T]) -> T {
    -log_probs
        .iter()
        .map(|&lp| lp.exp() * lp)
        .fold(T::zero(), |a, b| a + b)
}
