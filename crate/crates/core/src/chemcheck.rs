//! Sanitization diagnostics: the problem list `E(m)` of a parsed molecule.
//!
//! Checks run in a fixed order: aromatic ring membership, kekulization of the
//! aromatic systems, valence, and supported charges. Each offending atom yields
//! one problem per category, so the count is a number of problem instances.

use std::fmt;

use crate::element;
use crate::molparse::{Atom, Bond, BondOrder, MolGraph};

/// Number of problem categories in the fixed enumeration.
pub const MAX_CATEGORIES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProblemCategory {
    ValenceExceeded,
    KekulizationFailure,
    AromaticAtomNotInRing,
    /// Kept in the enumeration; non-ring aromatic bonds between two
    /// ring-resident aromatic atoms are read as single bonds, so no check
    /// emits it.
    AromaticBondOutsideRing,
    BadCharge,
    Reserved6,
    Reserved7,
    Reserved8,
    Reserved9,
    Reserved10,
    Reserved11,
    Reserved12,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChemProblem {
    pub category: ProblemCategory,
    pub atom: Option<usize>,
    pub message: String,
}

impl fmt::Display for ChemProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.atom {
            Some(a) => write!(f, "{:?} at atom {a}: {}", self.category, self.message),
            None => write!(f, "{:?}: {}", self.category, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub problems: Vec<ChemProblem>,
}

impl Diagnostics {
    pub fn count(&self) -> usize {
        self.problems.len()
    }

    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Per-bond orders after kekulization: every ring aromatic bond is 1 or 2,
/// other bonds keep their base valence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kekulization {
    pub bond_orders: Vec<u8>,
}

/// Aromatic atoms that require a double bond but could not receive one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KekulizeFailure {
    pub atoms: Vec<usize>,
    /// Best partial assignment (unmatched atoms keep single bonds).
    pub partial: Kekulization,
}

/// Ring structure of the aromatic-bond subgraph.
struct AromaticRings {
    /// Aromatic bond that lies on a cycle of aromatic bonds.
    ring_bond: Vec<bool>,
    /// Aromatic atom with at least one ring aromatic bond.
    ring_atom: Vec<bool>,
}

fn aromatic_rings(graph: &MolGraph) -> AromaticRings {
    let ring_bond = cycle_bonds(graph, |b| b.order == BondOrder::Aromatic);
    let mut ring_atom = vec![false; graph.atoms.len()];
    for (i, b) in graph.bonds.iter().enumerate() {
        if ring_bond[i] {
            ring_atom[b.a] = true;
            ring_atom[b.b] = true;
        }
    }
    AromaticRings {
        ring_bond,
        ring_atom,
    }
}

/// Bonds that lie on a cycle of the subgraph formed by the bonds accepted by
/// `keep`; false for every other bond.
pub fn cycle_bonds(graph: &MolGraph, keep: impl Fn(&Bond) -> bool) -> Vec<bool> {
    let n = graph.atoms.len();
    let mut adj = vec![Vec::new(); n];
    let mut kept = vec![false; graph.bonds.len()];
    for (i, b) in graph.bonds.iter().enumerate() {
        if keep(b) {
            kept[i] = true;
            adj[b.a].push((b.b, i));
            adj[b.b].push((b.a, i));
        }
    }
    // Bridge finding (Tarjan low-link), iterative.
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; graph.bonds.len()];
    let mut time = 0;
    for start in 0..n {
        if disc[start] != usize::MAX || adj[start].is_empty() {
            continue;
        }
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(start, None, 0)];
        disc[start] = time;
        low[start] = time;
        time += 1;
        while let Some(&mut (v, parent, ref mut cursor)) = stack.last_mut() {
            if *cursor < adj[v].len() {
                let (w, bond) = adj[v][*cursor];
                *cursor += 1;
                if Some(bond) == parent {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = time;
                    low[w] = time;
                    time += 1;
                    stack.push((w, Some(bond), 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let (Some(bond), Some(&(u, _, _))) = (parent, stack.last()) {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        is_bridge[bond] = true;
                    }
                }
            }
        }
    }
    kept.iter().zip(&is_bridge).map(|(&k, &b)| k && !b).collect()
}

fn valences(atom: &Atom) -> Option<&'static [u8]> {
    element::charged_valences(atom.element, atom.charge)
}

/// Whether a ring-resident aromatic atom must take one double bond.
fn needs_double(graph: &MolGraph, atom: usize, rings: &AromaticRings) -> bool {
    let a = &graph.atoms[atom];
    let Some(allowed) = valences(a) else {
        return false;
    };
    let used: u32 = graph
        .bonds
        .iter()
        .enumerate()
        .filter(|(_, b)| b.a == atom || b.b == atom)
        .map(|(i, b)| {
            if rings.ring_bond[i] {
                1
            } else {
                u32::from(b.order.base_valence())
            }
        })
        .sum::<u32>()
        + u32::from(a.hydrogens.unwrap_or(0));
    let Some(&valence) = allowed.iter().find(|&&v| u32::from(v) >= used) else {
        return false;
    };
    u32::from(valence) > used
}

/// Total hydrogen count per atom: the bracket count for bracket atoms,
/// otherwise the gap to the smallest default valence that fits the bonds, an
/// aromatic atom that needs a double bond being credited with one.
pub fn hydrogen_counts(graph: &MolGraph) -> Vec<u8> {
    let rings = aromatic_rings(graph);
    let mut used = vec![0u32; graph.atoms.len()];
    for (i, b) in graph.bonds.iter().enumerate() {
        let order = if rings.ring_bond[i] { 1 } else { u32::from(b.order.base_valence()) };
        used[b.a] += order;
        used[b.b] += order;
    }
    graph
        .atoms
        .iter()
        .enumerate()
        .map(|(i, atom)| {
            if let Some(h) = atom.hydrogens {
                return h;
            }
            let total = used[i] + u32::from(rings.ring_atom[i] && needs_double(graph, i, &rings));
            valences(atom)
                .and_then(|allowed| allowed.iter().find(|&&v| u32::from(v) >= total))
                .map_or(0, |&v| (u32::from(v) - total) as u8)
        })
        .collect()
}

/// Assigns alternating single/double bonds to the ring aromatic bonds.
///
/// Atoms with free valence after counting every aromatic bond as single must
/// receive exactly one double bond; saturated atoms (`[nH]`, substituted `n`,
/// `o`, `s`, `c(=O)`) act as donors and take none. The assignment is a maximum
/// matching on the subgraph of atoms that need a double bond.
pub fn kekulize(graph: &MolGraph) -> Result<Kekulization, KekulizeFailure> {
    let rings = aromatic_rings(graph);
    kekulize_with(graph, &rings)
}

fn kekulize_with(graph: &MolGraph, rings: &AromaticRings) -> Result<Kekulization, KekulizeFailure> {
    let n = graph.atoms.len();
    let need: Vec<bool> = (0..n)
        .map(|i| rings.ring_atom[i] && needs_double(graph, i, rings))
        .collect();
    let mut adj = vec![Vec::new(); n];
    for (i, b) in graph.bonds.iter().enumerate() {
        if rings.ring_bond[i] && need[b.a] && need[b.b] {
            adj[b.a].push(b.b);
            adj[b.b].push(b.a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mate = maximum_matching(&adj);
    let mut bond_orders: Vec<u8> = graph.bonds.iter().map(|b| b.order.base_valence()).collect();
    for (i, b) in graph.bonds.iter().enumerate() {
        if rings.ring_bond[i] && mate[b.a] == Some(b.b) {
            bond_orders[i] = 2;
        }
    }
    let unmatched: Vec<usize> = (0..n).filter(|&i| need[i] && mate[i].is_none()).collect();
    let assignment = Kekulization { bond_orders };
    if unmatched.is_empty() {
        Ok(assignment)
    } else {
        Err(KekulizeFailure {
            atoms: unmatched,
            partial: assignment,
        })
    }
}

/// Maximum cardinality matching on a general graph (Edmonds' blossom
/// algorithm). Deterministic for a given adjacency order.
pub fn maximum_matching(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let n = adj.len();
    let mut mate: Vec<Option<usize>> = vec![None; n];
    // Greedy start keeps the search short on ring systems.
    for v in 0..n {
        if mate[v].is_none() {
            if let Some(&w) = adj[v].iter().find(|&&w| mate[w].is_none()) {
                mate[v] = Some(w);
                mate[w] = Some(v);
            }
        }
    }
    for root in 0..n {
        if mate[root].is_none() && !adj[root].is_empty() {
            if let Some(end) = find_augmenting_path(adj, &mate, root) {
                augment(&mut mate, &end.parent, end.vertex);
            }
        }
    }
    mate
}

struct PathEnd {
    vertex: usize,
    parent: Vec<Option<usize>>,
}

fn find_augmenting_path(adj: &[Vec<usize>], mate: &[Option<usize>], root: usize) -> Option<PathEnd> {
    let n = adj.len();
    let mut used = vec![false; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut base: Vec<usize> = (0..n).collect();
    let mut queue = std::collections::VecDeque::new();
    used[root] = true;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        for &to in &adj[v] {
            if base[v] == base[to] || mate[v] == Some(to) {
                continue;
            }
            if to == root || mate[to].is_some_and(|m| parent[m].is_some()) {
                let cur = lowest_common_ancestor(mate, &base, &parent, v, to);
                let mut blossom = vec![false; n];
                mark_path(mate, &base, &mut parent, &mut blossom, v, cur, to);
                mark_path(mate, &base, &mut parent, &mut blossom, to, cur, v);
                for i in 0..n {
                    if blossom[base[i]] {
                        base[i] = cur;
                        if !used[i] {
                            used[i] = true;
                            queue.push_back(i);
                        }
                    }
                }
            } else if parent[to].is_none() {
                parent[to] = Some(v);
                match mate[to] {
                    None => return Some(PathEnd { vertex: to, parent }),
                    Some(m) => {
                        used[m] = true;
                        queue.push_back(m);
                    }
                }
            }
        }
    }
    None
}

fn lowest_common_ancestor(
    mate: &[Option<usize>],
    base: &[usize],
    parent: &[Option<usize>],
    a: usize,
    b: usize,
) -> usize {
    let mut seen = vec![false; mate.len()];
    let mut a = a;
    loop {
        a = base[a];
        seen[a] = true;
        match mate[a].and_then(|m| parent[m]) {
            Some(p) => a = p,
            None => break,
        }
    }
    let mut b = b;
    loop {
        b = base[b];
        if seen[b] {
            return b;
        }
        b = parent[mate[b].expect("matched on path")].expect("parent on path");
    }
}

fn mark_path(
    mate: &[Option<usize>],
    base: &[usize],
    parent: &mut [Option<usize>],
    blossom: &mut [bool],
    mut v: usize,
    b: usize,
    mut child: usize,
) {
    while base[v] != b {
        let m = mate[v].expect("matched inside blossom");
        blossom[base[v]] = true;
        blossom[base[m]] = true;
        parent[v] = Some(child);
        child = m;
        v = parent[m].expect("parent inside blossom");
    }
}

fn augment(mate: &mut [Option<usize>], parent: &[Option<usize>], mut v: usize) {
    loop {
        let pv = parent[v].expect("path to root");
        let ppv = mate[pv];
        mate[v] = Some(pv);
        mate[pv] = Some(v);
        match ppv {
            Some(next) => v = next,
            None => break,
        }
    }
}

/// Computes the problem list for a parsed molecule.
pub fn detect_problems(graph: &MolGraph) -> Diagnostics {
    let rings = aromatic_rings(graph);
    let mut problems = Vec::new();

    for (i, atom) in graph.atoms.iter().enumerate() {
        if atom.aromatic && !rings.ring_atom[i] {
            problems.push(ChemProblem {
                category: ProblemCategory::AromaticAtomNotInRing,
                atom: Some(i),
                message: format!("non-ring atom {i} marked aromatic"),
            });
        }
    }

    let kekule = match kekulize_with(graph, &rings) {
        Ok(k) => k,
        Err(failure) => {
            for &i in &failure.atoms {
                problems.push(ChemProblem {
                    category: ProblemCategory::KekulizationFailure,
                    atom: Some(i),
                    message: format!("aromatic atom {i} cannot take a double bond"),
                });
            }
            failure.partial
        }
    };

    let mut totals = vec![0u32; graph.atoms.len()];
    for (b, &order) in graph.bonds.iter().zip(&kekule.bond_orders) {
        totals[b.a] += u32::from(order);
        totals[b.b] += u32::from(order);
    }
    for (i, atom) in graph.atoms.iter().enumerate() {
        let total = totals[i] + u32::from(atom.hydrogens.unwrap_or(0));
        match valences(atom) {
            Some(allowed) => {
                let max = allowed.iter().copied().max().unwrap_or(0);
                if total > u32::from(max) {
                    problems.push(ChemProblem {
                        category: ProblemCategory::ValenceExceeded,
                        atom: Some(i),
                        message: format!(
                            "explicit valence {total} on {} exceeds {max}",
                            atom.symbol()
                        ),
                    });
                }
            }
            None => problems.push(ChemProblem {
                category: ProblemCategory::BadCharge,
                atom: Some(i),
                message: format!("charge {} unsupported on {}", atom.charge, atom.symbol()),
            }),
        }
    }

    problems.sort_by_key(|p| (p.category, p.atom));
    Diagnostics { problems }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molparse::parse_smiles;

    fn problems(s: &str) -> Vec<(ProblemCategory, Option<usize>)> {
        detect_problems(&parse_smiles(s).unwrap())
            .problems
            .into_iter()
            .map(|p| (p.category, p.atom))
            .collect()
    }

    /// Maximum matching size by exhaustive search over edge subsets.
    fn brute_force_matching(adj: &[Vec<usize>]) -> usize {
        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect();
        fn go(edges: &[(usize, usize)], used: &mut Vec<bool>) -> usize {
            let Some((&(a, b), rest)) = edges.split_first() else {
                return 0;
            };
            let skip = go(rest, used);
            if used[a] || used[b] {
                return skip;
            }
            used[a] = true;
            used[b] = true;
            let take = 1 + go(rest, used);
            used[a] = false;
            used[b] = false;
            skip.max(take)
        }
        go(&edges, &mut vec![false; adj.len()])
    }

    #[test]
    fn hydrogen_counts_follow_default_valences() {
        let h = |s: &str| hydrogen_counts(&parse_smiles(s).unwrap());
        assert_eq!(h("CCO"), [3, 2, 1]);
        assert_eq!(h("C=O"), [2, 0]);
        assert_eq!(h("c1ccccc1"), [1; 6]);
        assert_eq!(h("Cc1ccccc1"), [3, 0, 1, 1, 1, 1, 1]);
        assert_eq!(h("c1cc[nH]c1"), [1, 1, 1, 1, 1]);
        assert_eq!(h("c1ccoc1"), [1, 1, 1, 0, 1]);
        assert_eq!(h("[NH4+]"), [4]);
        assert_eq!(h("CS(=O)(=O)C"), [3, 0, 0, 0, 3]);
    }

    #[test]
    fn sound_molecules_have_no_problems() {
        for s in [
            "CCO",
            "c1ccccc1",
            "c1ccncc1",
            "c1cc[nH]c1",
            "Cn1cccc1",
            "o1cccc1",
            "s1cccc1",
            "O=c1cc[nH]c(=O)[nH]1",
            "c1ccc2ccccc2c1",
            "c1ccccc1-c1ccccc1",
            "c1ccccc1c1ccccc1",
            "C[N+](C)(C)C",
            "CC(=O)[O-]",
            "CS(=O)(=O)C",
            "c1ccc2[nH]ccc2c1",
            "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
        ] {
            assert_eq!(problems(s), [], "{s}");
        }
    }

    #[test]
    fn five_bonds_on_carbon() {
        assert_eq!(
            problems("C(C)(C)(C)(C)C"),
            [(ProblemCategory::ValenceExceeded, Some(0))]
        );
    }

    #[test]
    fn aromatic_chain_atoms_are_not_in_ring() {
        assert_eq!(
            problems("cc"),
            [
                (ProblemCategory::AromaticAtomNotInRing, Some(0)),
                (ProblemCategory::AromaticAtomNotInRing, Some(1))
            ]
        );
    }

    #[test]
    fn kekulization_examples() {
        assert!(kekulize(&parse_smiles("c1ccccc1").unwrap()).is_ok());
        assert!(kekulize(&parse_smiles("c1ccncc1").unwrap()).is_ok());
        // Four-membered all-carbon ring has the perfect matching {01, 23}.
        assert!(kekulize(&parse_smiles("c1ccc1").unwrap()).is_ok());
        let err = kekulize(&parse_smiles("c1cccc1").unwrap()).unwrap_err();
        assert_eq!(err.atoms.len(), 1);
        let err = kekulize(&parse_smiles("Cn1ccccc1").unwrap()).unwrap_err();
        assert_eq!(err.atoms.len(), 1);
        assert_eq!(
            problems("c1ccnc1"),
            [(ProblemCategory::KekulizationFailure, Some(4))]
        );
    }

    #[test]
    fn kekule_bond_orders_alternate() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let k = kekulize(&g).unwrap();
        assert_eq!(k.bond_orders.iter().filter(|&&o| o == 2).count(), 3);
    }

    #[test]
    fn charges_and_valence() {
        assert_eq!(problems("[N+](C)(C)(C)(C)C"), [(ProblemCategory::ValenceExceeded, Some(0))]);
        assert_eq!(problems("C[O-]"), []);
        assert_eq!(problems("C=[O-]"), [(ProblemCategory::ValenceExceeded, Some(1))]);
        assert_eq!(problems("[C+5]"), [(ProblemCategory::BadCharge, Some(0))]);
        assert_eq!(problems("[CH5]"), [(ProblemCategory::ValenceExceeded, Some(0))]);
    }

    #[test]
    fn edmonds_matches_brute_force_on_small_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let n = rng.gen_range(1..=12);
            let p = rng.gen_range(0.1..0.6);
            let mut adj = vec![Vec::new(); n];
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(p) {
                        adj[a].push(b);
                        adj[b].push(a);
                    }
                }
            }
            let mate = maximum_matching(&adj);
            for (v, m) in mate.iter().enumerate() {
                if let Some(w) = m {
                    assert_eq!(mate[*w], Some(v));
                    assert!(adj[v].contains(w));
                }
            }
            let size = mate.iter().filter(|m| m.is_some()).count() / 2;
            assert_eq!(size, brute_force_matching(&adj), "{adj:?}");
        }
    }
}
