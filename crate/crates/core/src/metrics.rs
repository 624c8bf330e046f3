//! Evaluation metrics: validity, novelty, uniqueness, repair statistics,
//! fingerprint diversity, scaffolds, peak reward, throughput and a
//! two-proportion significance test.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::chemcheck::{cycle_bonds, detect_problems, hydrogen_counts};
use crate::molparse::{canonicalize, parse_smiles, Bond, BondOrder, MolGraph};
use crate::tssr::{RewardBreakdown, RewardPath};
use crate::vocab::split_smiles;

pub const FP_BITS: usize = 2048;
const FP_WORDS: usize = FP_BITS / 64;
pub const FP_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no items to evaluate")]
    Empty,
    #[error("need at least {needed} items, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("elapsed time must be positive")]
    NonPositiveSeconds,
    #[error("zero denominator")]
    ZeroDenominator,
}

/// Folded circular-substructure bit set.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint([u64; FP_WORDS]);

impl std::fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fingerprint({} bits)", self.count())
    }
}

impl Fingerprint {
    pub fn empty() -> Self {
        Self([0; FP_WORDS])
    }

    pub fn set(&mut self, bit: usize) {
        self.0[bit / 64] |= 1 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        self.0[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    pub fn bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..FP_BITS).filter(|&b| self.contains(b))
    }
}

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hash_seq(items: impl IntoIterator<Item = u64>) -> u64 {
    items.into_iter().fold(0x51_7cc1_b727_220a, |h, x| mix(h ^ mix(x)))
}

fn bond_code(order: BondOrder) -> u64 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Circular fingerprint of radius [`FP_RADIUS`] folded into [`FP_BITS`] bits.
/// Atom invariants are element, heavy degree, charge, aromaticity and total
/// hydrogen count; each round hashes an atom's identifier with the sorted
/// (bond, neighbour identifier) pairs.
pub fn fingerprint(g: &MolGraph) -> Fingerprint {
    let adj = g.adjacency();
    let hs = hydrogen_counts(g);
    let mut ids: Vec<u64> = g
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            hash_seq([
                u64::from(a.element),
                adj[i].len() as u64,
                a.charge as i64 as u64,
                u64::from(a.aromatic),
                u64::from(hs[i]),
            ])
        })
        .collect();
    let mut fp = Fingerprint::empty();
    for radius in 0..=FP_RADIUS {
        if radius > 0 {
            ids = (0..ids.len())
                .map(|i| {
                    let mut env: Vec<(u64, u64)> = adj[i]
                        .iter()
                        .map(|&(j, b)| (bond_code(g.bonds[b].order), ids[j]))
                        .collect();
                    env.sort_unstable();
                    hash_seq(
                        [radius as u64, ids[i]]
                            .into_iter()
                            .chain(env.into_iter().flat_map(|(b, id)| [b, id])),
                    )
                })
                .collect();
        }
        for &id in &ids {
            fp.set((id % FP_BITS as u64) as usize);
        }
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut and, mut or) = (0u32, 0u32);
    for (x, y) in a.0.iter().zip(&b.0) {
        and += (x & y).count_ones();
        or += (x | y).count_ones();
    }
    if or == 0 {
        1.0
    } else {
        f64::from(and) / f64::from(or)
    }
}

fn max_similarity(fp: &Fingerprint, others: &[Fingerprint], skip: Option<usize>) -> f64 {
    others
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .map(|(_, o)| tanimoto(fp, o))
        .fold(0.0, f64::max)
}

/// Mean over molecules of `1 − max Tanimoto` to any other molecule.
pub fn nn_diversity(fps: &[Fingerprint]) -> Result<f64, MetricsError> {
    if fps.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            found: fps.len(),
        });
    }
    let distances: Vec<f64> = (0..fps.len())
        .into_par_iter()
        .map(|i| 1.0 - max_similarity(&fps[i], fps, Some(i)))
        .collect();
    Ok(distances.iter().sum::<f64>() / fps.len() as f64)
}

/// Ring systems plus linkers: non-ring atoms of degree at most one are removed
/// until none remain. Empty for acyclic molecules.
pub fn murcko_scaffold(g: &MolGraph) -> MolGraph {
    let ring_bond = cycle_bonds(g, |_| true);
    let n = g.atoms.len();
    let mut in_ring = vec![false; n];
    for (b, &r) in g.bonds.iter().zip(&ring_bond) {
        if r {
            in_ring[b.a] = true;
            in_ring[b.b] = true;
        }
    }
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = g.adjacency().iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| !in_ring[i] && degree[i] <= 1).collect();
    let adj = g.adjacency();
    while let Some(i) = queue.pop() {
        if !alive[i] {
            continue;
        }
        alive[i] = false;
        for &(j, _) in &adj[i] {
            if alive[j] {
                degree[j] -= 1;
                if !in_ring[j] && degree[j] <= 1 {
                    queue.push(j);
                }
            }
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut atoms = Vec::new();
    for i in (0..n).filter(|&i| alive[i]) {
        index[i] = atoms.len();
        atoms.push(g.atoms[i]);
    }
    let bonds = g
        .bonds
        .iter()
        .filter(|b| alive[b.a] && alive[b.b])
        .map(|b| Bond {
            a: index[b.a],
            b: index[b.b],
            order: b.order,
        })
        .collect();
    MolGraph { atoms, bonds }
}

/// Distinct non-empty scaffolds in canonical-string order.
pub fn unique_scaffolds<'a>(graphs: impl IntoIterator<Item = &'a MolGraph>) -> Vec<(String, MolGraph)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for g in graphs {
        let s = murcko_scaffold(g);
        if s.atoms.is_empty() {
            continue;
        }
        let key = canonicalize(&s);
        if seen.insert(key.clone()) {
            out.push((key, s));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaffoldStats {
    pub count: usize,
    /// Mean over generated scaffolds of the best Tanimoto match among the
    /// reference scaffolds.
    pub similarity: f64,
    /// False when the reference has no scaffolds.
    pub similarity_defined: bool,
}

/// Scaffold count and similarity given reference scaffold fingerprints.
pub fn scaffold_stats_against(generated: &[MolGraph], reference: &[Fingerprint]) -> Result<ScaffoldStats, MetricsError> {
    if generated.is_empty() {
        return Err(MetricsError::Empty);
    }
    let scaffolds = unique_scaffolds(generated);
    if reference.is_empty() || scaffolds.is_empty() {
        return Ok(ScaffoldStats {
            count: scaffolds.len(),
            similarity: 0.0,
            similarity_defined: !reference.is_empty(),
        });
    }
    let best: Vec<f64> = scaffolds
        .par_iter()
        .map(|(_, s)| max_similarity(&fingerprint(s), reference, None))
        .collect();
    Ok(ScaffoldStats {
        count: scaffolds.len(),
        similarity: best.iter().sum::<f64>() / best.len() as f64,
        similarity_defined: true,
    })
}

pub fn scaffold_stats(generated: &[MolGraph], reference: &[MolGraph]) -> Result<ScaffoldStats, MetricsError> {
    let fps: Vec<Fingerprint> = unique_scaffolds(reference).iter().map(|(_, s)| fingerprint(s)).collect();
    scaffold_stats_against(generated, &fps)
}

/// Training-set data that evaluation compares against.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub canonical: HashSet<String>,
    pub scaffolds: Vec<Fingerprint>,
}

impl Reference {
    /// Unparseable lines are ignored.
    pub fn from_smiles<S: AsRef<str> + Sync>(lines: &[S]) -> Self {
        let graphs: Vec<MolGraph> = lines
            .par_iter()
            .filter_map(|l| parse_smiles(l.as_ref()).ok())
            .collect();
        let canonical = graphs.par_iter().map(canonicalize).collect::<Vec<_>>().into_iter().collect();
        let scaffolds = unique_scaffolds(&graphs).iter().map(|(_, s)| fingerprint(s)).collect();
        Self { canonical, scaffolds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairStats {
    /// Mean accepted substitutions per sequence.
    pub swap_count: f64,
    /// Share of sequences repaired from an unparseable state.
    pub fix_rate: f64,
    /// Mean initial problem count over sequences that parse after Stage One.
    pub chem_err_mean: f64,
}

pub fn repair_stats(breakdowns: &[RewardBreakdown]) -> Result<RepairStats, MetricsError> {
    if breakdowns.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = breakdowns.len() as f64;
    let swaps: usize = breakdowns.iter().map(|b| b.accepted_swaps).sum();
    let fixed = breakdowns
        .iter()
        .filter(|b| b.path == RewardPath::RepairedFromInvalid)
        .count();
    let e0: Vec<usize> = breakdowns.iter().filter_map(|b| b.initial_errors).collect();
    let chem_err_mean = if e0.is_empty() {
        0.0
    } else {
        e0.iter().sum::<usize>() as f64 / e0.len() as f64
    };
    Ok(RepairStats {
        swap_count: swaps as f64 / n,
        fix_rate: fixed as f64 / n,
        chem_err_mean,
    })
}

pub fn peak_reward(returns: &[f64]) -> Result<f64, MetricsError> {
    returns
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(MetricsError::Empty)
}

/// Tokens per second, `N_g · B · L / T`.
pub fn throughput(n_updates: u64, batch: usize, mean_length: f64, seconds: f64) -> Result<f64, MetricsError> {
    if !(seconds > 0.0) {
        return Err(MetricsError::NonPositiveSeconds);
    }
    Ok(n_updates as f64 * batch as f64 * mean_length / seconds)
}

/// Pooled two-proportion z statistic for `k1/n1` against `k2/n2` and whether
/// `|z| > 1.96`.
pub fn two_proportion_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<(f64, bool), MetricsError> {
    if n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2 {
        return Err(MetricsError::ZeroDenominator);
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se == 0.0 { 0.0 } else { (p2 - p1) / se };
    Ok((z, z.abs() > 1.96))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_gen: usize,
    pub n_syntactic_valid: usize,
    pub n_chem_valid: usize,
    /// Chemically valid samples absent from the training set, duplicates
    /// counted.
    pub n_novel: usize,
    /// Same, among syntactically valid samples.
    pub n_novel_syntactic: usize,
    /// Distinct canonical forms among chemically valid samples.
    pub n_unique: usize,
    pub validity: f64,
    pub chem_validity: f64,
    pub novelty: f64,
    pub novelty_syntactic: f64,
    pub novelty_defined: bool,
    pub uniqueness: f64,
    pub swap_count: f64,
    pub fix_rate: f64,
    pub chem_err_mean: f64,
    pub nn_diversity: f64,
    pub nn_diversity_defined: bool,
    pub scaffold_count: usize,
    pub scaffold_similarity: f64,
    pub scaffold_similarity_defined: bool,
    pub mean_length: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

struct Judged {
    graph: Option<MolGraph>,
    chem_valid: bool,
    canonical: Option<String>,
    length: usize,
}

/// Sample-level metrics against `reference`. Repair statistics are left at 0
/// until [`MetricsReport::with_repair`] fills them in.
pub fn evaluate<S: AsRef<str> + Sync>(samples: &[S], reference: &Reference) -> Result<MetricsReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let judged: Vec<Judged> = samples
        .par_iter()
        .map(|s| {
            let s = s.as_ref();
            let length = split_smiles(s).map_or(s.chars().count(), |t| t.len());
            match parse_smiles(s) {
                Ok(g) => Judged {
                    chem_valid: detect_problems(&g).is_valid(),
                    canonical: Some(canonicalize(&g)),
                    graph: Some(g),
                    length,
                },
                Err(_) => Judged {
                    graph: None,
                    chem_valid: false,
                    canonical: None,
                    length,
                },
            }
        })
        .collect();

    let n_gen = judged.len();
    let n_syntactic_valid = judged.iter().filter(|j| j.graph.is_some()).count();
    let n_chem_valid = judged.iter().filter(|j| j.chem_valid).count();
    let is_novel = |j: &Judged| j.canonical.as_ref().is_some_and(|c| !reference.canonical.contains(c));
    let n_novel = judged.iter().filter(|j| j.chem_valid && is_novel(j)).count();
    let n_novel_syntactic = judged.iter().filter(|j| is_novel(j)).count();

    let mut seen = HashSet::new();
    let mut unique_graphs = Vec::new();
    for j in judged.iter().filter(|j| j.chem_valid) {
        if seen.insert(j.canonical.as_deref().expect("valid samples are canonicalized")) {
            unique_graphs.push(j.graph.clone().expect("valid samples parse"));
        }
    }
    let n_unique = unique_graphs.len();

    let fps: Vec<Fingerprint> = unique_graphs.par_iter().map(fingerprint).collect();
    let (nn, nn_defined) = match nn_diversity(&fps) {
        Ok(d) => (d, true),
        Err(_) => (0.0, false),
    };
    let scaffolds = if unique_graphs.is_empty() {
        ScaffoldStats {
            count: 0,
            similarity: 0.0,
            similarity_defined: false,
        }
    } else {
        scaffold_stats_against(&unique_graphs, &reference.scaffolds)?
    };

    Ok(MetricsReport {
        n_gen,
        n_syntactic_valid,
        n_chem_valid,
        n_novel,
        n_novel_syntactic,
        n_unique,
        validity: ratio(n_syntactic_valid, n_gen),
        chem_validity: ratio(n_chem_valid, n_gen),
        novelty: ratio(n_novel, n_chem_valid),
        novelty_syntactic: ratio(n_novel_syntactic, n_syntactic_valid),
        novelty_defined: n_chem_valid > 0,
        uniqueness: ratio(n_unique, n_chem_valid),
        swap_count: 0.0,
        fix_rate: 0.0,
        chem_err_mean: 0.0,
        nn_diversity: nn,
        nn_diversity_defined: nn_defined,
        scaffold_count: scaffolds.count,
        scaffold_similarity: scaffolds.similarity,
        scaffold_similarity_defined: scaffolds.similarity_defined,
        mean_length: judged.iter().map(|j| j.length).sum::<usize>() as f64 / n_gen as f64,
    })
}

impl MetricsReport {
    pub fn with_repair(mut self, stats: RepairStats) -> Self {
        self.swap_count = stats.swap_count;
        self.fix_rate = stats.fix_rate;
        self.chem_err_mean = stats.chem_err_mean;
        self
    }

    /// `key = value` lines; real-valued entries with 6 decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut int = |k: &str, v: usize| {
            let _ = writeln!(out, "{k} = {v}");
        };
        int("n_gen", self.n_gen);
        int("n_syntactic_valid", self.n_syntactic_valid);
        int("n_chem_valid", self.n_chem_valid);
        int("n_novel", self.n_novel);
        int("n_novel_syntactic", self.n_novel_syntactic);
        int("n_unique", self.n_unique);
        int("scaffold_count", self.scaffold_count);
        int("novelty_defined", usize::from(self.novelty_defined));
        int("nn_diversity_defined", usize::from(self.nn_diversity_defined));
        int("scaffold_similarity_defined", usize::from(self.scaffold_similarity_defined));
        for (k, v) in [
            ("validity", self.validity),
            ("chem_validity", self.chem_validity),
            ("novelty", self.novelty),
            ("novelty_syntactic", self.novelty_syntactic),
            ("uniqueness", self.uniqueness),
            ("swap_count", self.swap_count),
            ("fix_rate", self.fix_rate),
            ("chem_err_mean", self.chem_err_mean),
            ("nn_diversity", self.nn_diversity),
            ("scaffold_similarity", self.scaffold_similarity),
            ("mean_length", self.mean_length),
        ] {
            let _ = writeln!(out, "{k} = {v:.6}");
        }
        out
    }
}
