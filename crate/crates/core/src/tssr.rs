//! The two-stage swap reward.
//!
//! Stage one repairs syntax by single-token substitution, stage two lowers the
//! chemistry problem count the same way, and both feed the terminal reward
//! `R(s)`. Every random choice goes through the caller's RNG handle, so a
//! sequence scored twice with the same stream gets the same breakdown.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chemcheck::detect_problems;
use crate::molparse::{LexTable, MolGraph};
use crate::vocab::{TokenPriors, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TssrError {
    #[error("k_subst = {k} exceeds the {support} tokens with positive prior")]
    BudgetTooLarge { k: usize, support: usize },
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("priors cover {priors} tokens but the vocabulary has {vocab}")]
    PriorsMismatch { priors: usize, vocab: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TssrConfig {
    pub k_subst: usize,
    pub lambda_swap: f64,
    pub lambda_err: f64,
    pub lambda_dist: f64,
    pub e_max: usize,
}

impl Default for TssrConfig {
    fn default() -> Self {
        Self {
            k_subst: 8,
            lambda_swap: 0.20,
            lambda_err: 0.50,
            lambda_dist: 0.30,
            e_max: 12,
        }
    }
}

impl TssrConfig {
    pub fn validate(&self) -> Result<(), TssrError> {
        let weights = [self.lambda_swap, self.lambda_err, self.lambda_dist];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TssrError::Config("reward weights must be non-negative".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(TssrError::Config("reward weights must sum to 1".into()));
        }
        if self.k_subst == 0 {
            return Err(TssrError::Config("k_subst must be at least 1".into()));
        }
        if self.e_max == 0 {
            return Err(TssrError::Config("e_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardPath {
    ValidDirect,
    RepairedFromInvalid,
    Unrepairable,
}

impl RewardPath {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ValidDirect => "valid",
            Self::RepairedFromInvalid => "repaired",
            Self::Unrepairable => "unrepairable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub f_swap: f64,
    pub f_err: f64,
    pub f_dist: f64,
    pub n_fail_stage1: usize,
    pub n_fail_stage2: usize,
    pub path: RewardPath,
    pub reward: f64,
    /// Final sequence after both stages; unset when unrepairable.
    pub repaired_sequence: Option<Vec<usize>>,
    /// Problem count of the first parseable sequence; unset when unrepairable.
    pub initial_errors: Option<usize>,
    pub final_errors: Option<usize>,
    /// Substitutions kept across both stages.
    pub accepted_swaps: usize,
}

/// Outcome of stage one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxFix {
    pub repaired: Option<Vec<usize>>,
    pub n_fail: usize,
}

/// Outcome of stage two.
#[derive(Debug, Clone, PartialEq)]
pub struct ChemReduction {
    pub n_fail: usize,
    pub f_err: f64,
    pub f_dist: f64,
    pub sequence: Vec<usize>,
    pub initial_errors: usize,
    pub final_errors: usize,
    pub accepted: usize,
}

/// Deterministic RNG for scoring item `index` of a batch under `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Reward evaluator bound to one vocabulary, prior and configuration.
#[derive(Debug, Clone)]
pub struct Tssr {
    lex: LexTable,
    priors: Vec<f64>,
    support: usize,
    config: TssrConfig,
}

impl Tssr {
    pub fn new(vocab: &Vocabulary, priors: &TokenPriors, config: TssrConfig) -> Result<Self, TssrError> {
        config.validate()?;
        if priors.len() != vocab.len() {
            return Err(TssrError::PriorsMismatch {
                priors: priors.len(),
                vocab: vocab.len(),
            });
        }
        let support = priors.support_size();
        if config.k_subst > support {
            return Err(TssrError::BudgetTooLarge {
                k: config.k_subst,
                support,
            });
        }
        Ok(Self {
            lex: LexTable::new(vocab),
            priors: priors.probs().to_vec(),
            support,
            config,
        })
    }

    pub fn config(&self) -> &TssrConfig {
        &self.config
    }

    pub fn lex(&self) -> &LexTable {
        &self.lex
    }

    pub fn parse(&self, seq: &[usize]) -> Option<MolGraph> {
        if seq.is_empty() {
            return None;
        }
        self.lex.parse(seq).ok()
    }

    /// Draws `k` distinct tokens one at a time, each proportional to its prior
    /// among the tokens not yet drawn.
    pub fn sample_no_dup<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>, TssrError> {
        sample_no_dup(&self.priors, k, rng).ok_or(TssrError::BudgetTooLarge {
            k,
            support: self.support,
        })
    }

    fn candidates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        sample_no_dup(&self.priors, self.config.k_subst, rng).expect("budget checked at construction")
    }

    /// Stage one: visit positions in shuffled order and return the first
    /// single-token substitution that parses.
    pub fn try_syntax_fix<R: Rng + ?Sized>(&self, seq: &[usize], rng: &mut R) -> SyntaxFix {
        let mut positions: Vec<usize> = (0..seq.len()).collect();
        positions.shuffle(rng);
        let mut work = seq.to_vec();
        let mut n_fail = 0;
        for i in positions {
            let original = seq[i];
            for c in self.candidates(rng) {
                if c == original {
                    continue;
                }
                work[i] = c;
                if self.lex.parse(&work).is_ok() {
                    return SyntaxFix {
                        repaired: Some(work),
                        n_fail,
                    };
                }
                n_fail += 1;
            }
            work[i] = original;
        }
        SyntaxFix {
            repaired: None,
            n_fail,
        }
    }

    /// Stage two: one shuffled pass that keeps any substitution strictly
    /// lowering the problem count, moving to the next position after each
    /// acceptance and stopping once no problems remain.
    ///
    /// # Panics
    /// If `seq` does not parse.
    pub fn try_reduce_chem_problems<R: Rng + ?Sized>(&self, seq: &[usize], rng: &mut R) -> ChemReduction {
        let graph = self.lex.parse(seq).expect("stage two needs a parseable sequence");
        let e0 = detect_problems(&graph).count();
        let mut best = seq.to_vec();
        if e0 == 0 {
            return ChemReduction {
                n_fail: 0,
                f_err: 0.0,
                f_dist: 1.0,
                sequence: best,
                initial_errors: 0,
                final_errors: 0,
                accepted: 0,
            };
        }
        let mut e_star = e0;
        let mut n_fail = 0;
        let mut accepted = 0;
        let mut positions: Vec<usize> = (0..seq.len()).collect();
        positions.shuffle(rng);
        'positions: for i in positions {
            let original = best[i];
            for c in self.candidates(rng) {
                if c == original {
                    continue;
                }
                best[i] = c;
                let improved = match self.lex.parse(&best) {
                    Ok(g) => {
                        let e = detect_problems(&g).count();
                        (e < e_star).then_some(e)
                    }
                    Err(_) => None,
                };
                match improved {
                    Some(e) => {
                        e_star = e;
                        accepted += 1;
                        if e_star == 0 {
                            break 'positions;
                        }
                        continue 'positions;
                    }
                    None => {
                        best[i] = original;
                        n_fail += 1;
                    }
                }
            }
        }
        ChemReduction {
            n_fail,
            f_err: f_err(e0, e_star),
            f_dist: f_dist(e_star, self.config.e_max),
            sequence: best,
            initial_errors: e0,
            final_errors: e_star,
            accepted,
        }
    }

    /// Terminal reward of a finished sequence (specials already stripped).
    pub fn reward<R: Rng + ?Sized>(&self, seq: &[usize], rng: &mut R) -> RewardBreakdown {
        let cfg = &self.config;
        let combine = |f_swap: f64, f_err: f64, f_dist: f64| {
            cfg.lambda_swap * f_swap + cfg.lambda_err * f_err + cfg.lambda_dist * f_dist
        };
        if seq.is_empty() {
            return unrepairable(0);
        }
        if self.lex.parse(seq).is_ok() {
            let chem = self.try_reduce_chem_problems(seq, rng);
            let f_swap = f_swap(chem.n_fail);
            return RewardBreakdown {
                f_swap,
                f_err: chem.f_err,
                f_dist: chem.f_dist,
                n_fail_stage1: 0,
                n_fail_stage2: chem.n_fail,
                path: RewardPath::ValidDirect,
                reward: combine(f_swap, chem.f_err, chem.f_dist),
                repaired_sequence: Some(chem.sequence),
                initial_errors: Some(chem.initial_errors),
                final_errors: Some(chem.final_errors),
                accepted_swaps: chem.accepted,
            };
        }
        let fix = self.try_syntax_fix(seq, rng);
        let Some(repaired) = fix.repaired else {
            return unrepairable(fix.n_fail);
        };
        let chem = self.try_reduce_chem_problems(&repaired, rng);
        let f_swap = f_swap(fix.n_fail + chem.n_fail);
        RewardBreakdown {
            f_swap,
            f_err: chem.f_err,
            f_dist: chem.f_dist,
            n_fail_stage1: fix.n_fail,
            n_fail_stage2: chem.n_fail,
            path: RewardPath::RepairedFromInvalid,
            reward: -0.5 + combine(f_swap, chem.f_err, chem.f_dist),
            repaired_sequence: Some(chem.sequence),
            initial_errors: Some(chem.initial_errors),
            final_errors: Some(chem.final_errors),
            accepted_swaps: 1 + chem.accepted,
        }
    }
}

fn unrepairable(n_fail: usize) -> RewardBreakdown {
    RewardBreakdown {
        f_swap: f_swap(n_fail),
        f_err: 0.0,
        f_dist: 0.0,
        n_fail_stage1: n_fail,
        n_fail_stage2: 0,
        path: RewardPath::Unrepairable,
        reward: -1.0,
        repaired_sequence: None,
        initial_errors: None,
        final_errors: None,
        accepted_swaps: 0,
    }
}

pub fn f_swap(n_fail: usize) -> f64 {
    1.0 / (1.0 + n_fail as f64)
}

pub fn f_err(e0: usize, e_star: usize) -> f64 {
    (e0 as f64 - e_star as f64) / e0.max(1) as f64
}

/// Distance-to-validity with `e_star` clamped at `e_max`.
pub fn f_dist(e_star: usize, e_max: usize) -> f64 {
    1.0 - e_star.min(e_max) as f64 / e_max as f64
}

/// Sequential weighted sampling without replacement over `weights`; `None`
/// when fewer than `k` entries have positive weight.
pub fn sample_no_dup<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let mut pool: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (i, w))
        .collect();
    if k > pool.len() {
        return None;
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = pool.iter().map(|&(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (j, &(_, w)) in pool.iter().enumerate() {
            if u < w {
                pick = j;
                break;
            }
            u -= w;
        }
        out.push(pool.remove(pick).0);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocabulary, compute_priors};
    use approx::assert_abs_diff_eq;

    fn setup(corpus: &[&str], k: usize) -> (Vocabulary, Tssr) {
        let v = build_vocabulary(corpus.iter().copied()).unwrap();
        let p = compute_priors(corpus.iter().copied(), &v).unwrap();
        let cfg = TssrConfig {
            k_subst: k,
            ..TssrConfig::default()
        };
        let t = Tssr::new(&v, &p, cfg).unwrap();
        (v, t)
    }

    const CORPUS: &[&str] = &["CC(C)O", "c1ccccc1N", "C1CC1=O", "CC#N", "Cn1cccc1"];

    #[test]
    fn formula_helpers() {
        assert_eq!(f_err(2, 0), 1.0);
        assert_eq!(f_dist(0, 12), 1.0);
        assert_eq!(f_err(2, 1), 0.5);
        assert_abs_diff_eq!(f_dist(1, 12), 1.0 - 1.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f_dist(1, 12), 0.91667, epsilon = 1e-5);
        assert_eq!(f_dist(40, 12), 0.0);
        assert_eq!(f_swap(3), 0.25);
        assert_eq!(f_err(0, 0), 0.0);
    }

    #[test]
    fn pristine_molecule_scores_half() {
        let (v, t) = setup(CORPUS, 4);
        let seq = v.tokenize("CC(C)O").unwrap();
        let b = t.reward(&seq, &mut item_rng(1, 0));
        assert_eq!(b.path, RewardPath::ValidDirect);
        assert_eq!((b.f_swap, b.f_err, b.f_dist), (1.0, 0.0, 1.0));
        assert_abs_diff_eq!(b.reward, 0.5, epsilon = 1e-15);
        assert_eq!(b.accepted_swaps, 0);
    }

    #[test]
    fn repaired_reward_formula() {
        let cfg = TssrConfig::default();
        let r = -0.5 + cfg.lambda_swap * f_swap(3) + cfg.lambda_err * f_err(2, 0) + cfg.lambda_dist * f_dist(0, 12);
        assert_abs_diff_eq!(r, 0.35, epsilon = 1e-12);
    }

    #[test]
    fn unrepairable_and_empty() {
        let (v, t) = setup(&["C(C)", "CC"], 3);
        let b = t.reward(&[], &mut item_rng(0, 0));
        assert_eq!((b.path, b.reward), (RewardPath::Unrepairable, -1.0));
        let seq = v.tokenize("((((((").unwrap();
        let fix = t.try_syntax_fix(&seq, &mut item_rng(0, 0));
        assert!(fix.repaired.is_none());
        let b = t.reward(&seq, &mut item_rng(0, 1));
        assert_eq!((b.path, b.reward), (RewardPath::Unrepairable, -1.0));
    }

    #[test]
    fn open_branch_is_repaired_at_full_budget() {
        let (v, t) = setup(&["C(C)", "CC"], 3);
        let seq = v.tokenize("C(C").unwrap();
        for s in 0..20 {
            let fix = t.try_syntax_fix(&seq, &mut item_rng(s, 0));
            let repaired = fix.repaired.expect("repairable");
            assert!(t.parse(&repaired).is_some());
            let diff = repaired.iter().zip(&seq).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn stage_two_fixes_a_kekulization_failure() {
        // Methyl on the ring nitrogen leaves one carbon without a partner;
        // n -> c gives toluene.
        let (v, t) = setup(&["Cn1ccccc1", "c1ccccc1"], 4);
        let seq = v.tokenize("Cn1ccccc1").unwrap();
        let mut fixed = 0;
        for s in 0..50 {
            let r = t.try_reduce_chem_problems(&seq, &mut item_rng(s, 0));
            assert_eq!(r.initial_errors, 1);
            assert!(r.final_errors <= r.initial_errors);
            if r.final_errors == 0 {
                fixed += 1;
                assert_eq!((r.f_err, r.f_dist), (1.0, 1.0));
                assert_eq!(r.accepted, 1);
            }
        }
        assert!(fixed > 0);
    }

    #[test]
    fn stage_two_on_sound_input_is_the_base_case() {
        let (v, t) = setup(CORPUS, 4);
        let seq = v.tokenize("CC#N").unwrap();
        let r = t.try_reduce_chem_problems(&seq, &mut item_rng(3, 3));
        assert_eq!((r.n_fail, r.f_err, r.f_dist), (0, 0.0, 1.0));
        assert_eq!(r.sequence, seq);
    }

    #[test]
    fn same_stream_same_breakdown() {
        let (v, t) = setup(CORPUS, 4);
        let seq = v.tokenize("C1CC(=O").unwrap();
        let a = t.reward(&seq, &mut item_rng(9, 4));
        let b = t.reward(&seq, &mut item_rng(9, 4));
        assert_eq!(a, b);
    }

    #[test]
    fn budget_and_config_validation() {
        let v = build_vocabulary(["CO"]).unwrap();
        let p = compute_priors(["CO"], &v).unwrap();
        assert!(matches!(
            Tssr::new(&v, &p, TssrConfig { k_subst: 3, ..TssrConfig::default() }),
            Err(TssrError::BudgetTooLarge { k: 3, support: 2 })
        ));
        let bad = TssrConfig {
            lambda_swap: 0.5,
            ..TssrConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_no_dup_draws_distinct_positive_tokens() {
        let w = [0.0, 0.0, 0.0, 0.5, 0.25, 0.0, 0.25];
        let mut rng = item_rng(5, 0);
        for _ in 0..10_000 {
            let s = sample_no_dup(&w, 3, &mut rng).unwrap();
            let mut sorted = s.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, [3, 4, 6]);
        }
        assert!(sample_no_dup(&w, 4, &mut rng).is_none());
        for _ in 0..100_000 {
            let s = sample_no_dup(&w, 2, &mut rng).unwrap();
            assert!(!s.contains(&5));
        }
    }

    #[test]
    fn first_draw_follows_priors() {
        let w = [0.0, 0.0, 0.0, 0.4, 0.25, 0.15, 0.1, 0.06, 0.04];
        let n = 100_000;
        let mut counts = [0usize; 9];
        let mut rng = item_rng(17, 0);
        for _ in 0..n {
            counts[sample_no_dup(&w, 1, &mut rng).unwrap()[0]] += 1;
        }
        let chi2: f64 = (3..9)
            .map(|i| {
                let expected = w[i] * n as f64;
                (counts[i] as f64 - expected).powi(2) / expected
            })
            .sum();
        // 99th percentile of chi-square with 5 degrees of freedom.
        assert!(chi2 < 15.086, "chi2 = {chi2}");
    }
}
