//! Training losses with their gradients with respect to logits and values.

use thiserror::Error;

use super::math::{entropy, log_softmax};
use super::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("mask selects no positions")]
    EmptyMask,
    #[error("non-finite {what} at transition {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("length mismatch: {0}")]
    Shape(String),
}

/// Masked cross entropy with a confidence penalty,
/// `(1/Σm) Σ m_t [−log p_t(y_t) + β Σ_i p_t(i) log p_t(i)]`.
///
/// Returns the loss and its gradient with respect to every step's logits
/// (zero at masked positions).
pub fn mle_loss<T: Real>(
    logits: &[Vec<T>],
    targets: &[usize],
    mask: &[bool],
    beta: f64,
) -> Result<(f64, Vec<Vec<T>>), LossError> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(LossError::Shape(format!(
            "{} logits, {} targets, {} mask entries",
            logits.len(),
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(LossError::EmptyMask);
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (index, ((z, &y), &m)) in logits.iter().zip(targets).zip(mask).enumerate() {
        if !m {
            grads.push(vec![T::zero(); z.len()]);
            continue;
        }
        let lp = log_softmax(z);
        let neg_entropy = -entropy(&lp).as_f64();
        let loss = -lp[y].as_f64() + beta * neg_entropy;
        if !loss.is_finite() {
            return Err(LossError::NonFinite { what: "loss", index });
        }
        total += loss;
        let g = lp
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let p = l.as_f64().exp();
                let onehot = if i == y { 1.0 } else { 0.0 };
                T::from_f64(scale * (p - onehot + beta * p * (l.as_f64() - neg_entropy)))
            })
            .collect();
        grads.push(g);
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoCoefficients {
    /// Ratio clip ε.
    pub clip: f64,
    /// Value clip radius ε_v.
    pub value_clip: f64,
    pub c_v: f64,
    pub c_s: f64,
}

/// Frozen rollout quantities of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoTarget {
    pub action: usize,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLoss {
    pub total: f64,
    /// Mean clipped surrogate `E[min(r Â, clip(r) Â)]`.
    pub clip_term: f64,
    /// Mean clipped value loss.
    pub value_term: f64,
    /// Mean policy entropy.
    pub entropy_term: f64,
    /// Fraction of transitions whose ratio left the clip range.
    pub clip_fraction: f64,
}

/// `−E[min(r Â, clip(r,1−ε,1+ε) Â)] + c_v E[L_v] − c_s E[H]` over all
/// transitions, with gradients for each step's logits and value.
#[allow(clippy::type_complexity)]
pub fn ppo_loss<T: Real>(
    logits: &[Vec<T>],
    values: &[T],
    targets: &[PpoTarget],
    coef: &PpoCoefficients,
) -> Result<(PpoLoss, Vec<Vec<T>>, Vec<T>), LossError> {
    if logits.len() != targets.len() || values.len() != targets.len() {
        return Err(LossError::Shape(format!(
            "{} logits, {} values, {} targets",
            logits.len(),
            values.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Ok((PpoLoss::default(), Vec::new(), Vec::new()));
    }
    let n = targets.len() as f64;
    let mut out = PpoLoss::default();
    let mut clipped = 0usize;
    let mut dlogits = Vec::with_capacity(targets.len());
    let mut dvalues = Vec::with_capacity(targets.len());
    for (index, ((z, &v), tg)) in logits.iter().zip(values).zip(targets).enumerate() {
        let lp = log_softmax(z);
        let logp = lp[tg.action].as_f64();
        let ratio = (logp - tg.log_prob_old).exp();
        if !ratio.is_finite() {
            return Err(LossError::NonFinite { what: "ratio", index });
        }
        let a = tg.advantage;
        let clipped_ratio = ratio.clamp(1.0 - coef.clip, 1.0 + coef.clip);
        let unclipped_obj = ratio * a;
        let clipped_obj = clipped_ratio * a;
        if clipped_ratio != ratio {
            clipped += 1;
        }
        // The unclipped branch carries the gradient whenever it is the minimum.
        let d_obj_d_ratio = if unclipped_obj <= clipped_obj { a } else { 0.0 };
        let h = entropy(&lp).as_f64();

        let v = v.as_f64();
        let err = v - tg.ret;
        let v_clipped = tg.value_old + (v - tg.value_old).clamp(-coef.value_clip, coef.value_clip);
        let err_clipped = v_clipped - tg.ret;
        let value_loss = (err * err).max(err_clipped * err_clipped);
        let d_value = if err * err >= err_clipped * err_clipped { 2.0 * err } else { 0.0 };
        if !value_loss.is_finite() {
            return Err(LossError::NonFinite { what: "value", index });
        }

        out.clip_term += unclipped_obj.min(clipped_obj);
        out.value_term += value_loss;
        out.entropy_term += h;

        let g = lp
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let l = l.as_f64();
                let p = l.exp();
                let onehot = if i == tg.action { 1.0 } else { 0.0 };
                // d ratio / dz = ratio (onehot − p); dH/dz = −p (log p + H).
                let d_clip = d_obj_d_ratio * ratio * (onehot - p);
                let d_entropy = -p * (l + h);
                T::from_f64((-d_clip - coef.c_s * d_entropy) / n)
            })
            .collect();
        dlogits.push(g);
        dvalues.push(T::from_f64(coef.c_v * d_value / n));
    }
    out.clip_term /= n;
    out.value_term /= n;
    out.entropy_term /= n;
    out.clip_fraction = clipped as f64 / n;
    out.total = -out.clip_term + coef.c_v * out.value_term - coef.c_s * out.entropy_term;
    Ok((out, dlogits, dvalues))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const COEF: PpoCoefficients = PpoCoefficients {
        clip: 0.2,
        value_clip: 0.2,
        c_v: 0.5,
        c_s: 0.01,
    };

    fn target(action: usize, log_prob_old: f64, advantage: f64) -> PpoTarget {
        PpoTarget {
            action,
            log_prob_old,
            value_old: 0.0,
            advantage,
            ret: 0.0,
        }
    }

    #[test]
    fn uniform_logits_give_point_nine_log_v() {
        let v = 7usize;
        let logits = vec![vec![0.0f64; v]; 3];
        let (loss, _) = mle_loss(&logits, &[1, 2, 3], &[true; 3], 0.1).unwrap();
        assert_abs_diff_eq!(loss, 0.9 * (v as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_small_loss() {
        let mut z = vec![-10.0f64; 5];
        z[2] = 10.0;
        let (loss, _) = mle_loss(&[z.clone()], &[2], &[true], 0.1).unwrap();
        assert!(loss.abs() < 1e-6, "{loss}");
        // Without the penalty the cross entropy vanishes from above; with it
        // the entropy term dominates near one-hot and the limit is approached
        // from below.
        let (ce, _) = mle_loss(&[z], &[2], &[true], 0.0).unwrap();
        assert!(ce > 0.0 && ce < 1e-7, "{ce}");
    }

    #[test]
    fn masked_positions_are_ignored() {
        let a = vec![vec![0.3f64, -0.1, 0.7], vec![1.0, 2.0, 3.0]];
        let b = vec![vec![0.3f64, -0.1, 0.7], vec![0.0, 0.0, 0.0]];
        let mask = [true, false];
        let (la, ga) = mle_loss(&a, &[0, 1], &mask, 0.1).unwrap();
        let (lb, gb) = mle_loss(&b, &[0, 1], &mask, 0.1).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
        assert!(ga[1].iter().all(|&g| g == 0.0));
        assert_eq!(mle_loss(&a, &[0, 1], &[false, false], 0.1), Err(LossError::EmptyMask));
    }

    #[test]
    fn surrogate_arithmetic() {
        let logits = vec![vec![0.0f64, 0.0]];
        let logp = (0.5f64).ln();
        // r = 1.5 with Â = +1 → min(1.5, 1.2) = 1.2
        let (l, g, _) = ppo_loss(&logits, &[0.0], &[target(0, logp - 1.5f64.ln(), 1.0)], &COEF).unwrap();
        assert_abs_diff_eq!(l.clip_term, 1.2, epsilon = 1e-12);
        assert_eq!(l.clip_fraction, 1.0);
        // Clipped branch active: only the entropy term moves the logits.
        let h_only = g[0][0] + g[0][1];
        assert_abs_diff_eq!(h_only, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0][0], 0.0, epsilon = 1e-15);
        // r = 0.5 with Â = −1 → min(−0.5, −0.8) = −0.8
        let (l, _, _) = ppo_loss(&logits, &[0.0], &[target(0, logp - 0.5f64.ln(), -1.0)], &COEF).unwrap();
        assert_abs_diff_eq!(l.clip_term, -0.8, epsilon = 1e-12);
    }

    #[test]
    fn identity_policy_surrogate_is_mean_advantage() {
        let logits = vec![vec![0.1f64, -0.4, 0.9], vec![0.0, 0.2, -0.3]];
        let lp0 = log_softmax(&logits[0]);
        let lp1 = log_softmax(&logits[1]);
        let targets = [
            PpoTarget {
                action: 2,
                log_prob_old: lp0[2],
                value_old: 0.3,
                advantage: 0.7,
                ret: 0.35,
            },
            PpoTarget {
                action: 0,
                log_prob_old: lp1[0],
                value_old: -0.2,
                advantage: -0.1,
                ret: 0.1,
            },
        ];
        let values = [0.3, -0.2];
        let (l, _, _) = ppo_loss(&logits, &values, &targets, &COEF).unwrap();
        assert_abs_diff_eq!(l.clip_term, 0.3, epsilon = 1e-12);
        let unclipped = ((0.3f64 - 0.35).powi(2) + (-0.2f64 - 0.1).powi(2)) / 2.0;
        assert_abs_diff_eq!(l.value_term, unclipped, epsilon = 1e-12);
        assert_eq!(l.clip_fraction, 0.0);
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform() {
        let logits = vec![vec![0.0f64; 6]];
        let lp = log_softmax(&logits[0]);
        let t = PpoTarget {
            action: 1,
            log_prob_old: lp[1],
            value_old: 0.0,
            advantage: 0.0,
            ret: 0.0,
        };
        let (_, g, dv) = ppo_loss(&logits, &[0.0], &[t], &COEF).unwrap();
        assert!(g[0].iter().all(|x| x.abs() < 1e-15));
        assert_eq!(dv[0], 0.0);
    }

    #[test]
    fn non_finite_ratio_is_reported() {
        let logits = vec![vec![0.0f64, 0.0]];
        let t = target(0, -1e6, 1.0);
        assert_eq!(
            ppo_loss(&logits, &[0.0], &[t], &COEF).unwrap_err(),
            LossError::NonFinite { what: "ratio", index: 0 }
        );
    }
}
