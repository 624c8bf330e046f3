//! Canonical SMILES via invariant refinement and tie-breaking.
//!
//! Atoms start from a local invariant (element, aromaticity, charge, bracket
//! hydrogens, degree) and are refined by the multiset of (bond order,
//! neighbour class) pairs until the partition stops splitting. Remaining ties
//! are broken by trying each member of the first tied class and keeping the
//! lexicographically smallest output, so atoms that refinement cannot tell
//! apart still yield an input-order independent string.

use super::{Atom, BondOrder, MolGraph};
use crate::element;

/// Upper bound on completed tie-break branches per molecule. Beyond it the
/// search commits to the first member of each tied class.
const BRANCH_BUDGET: usize = 256;

pub fn canonicalize(graph: &MolGraph) -> String {
    if graph.atoms.is_empty() {
        return String::new();
    }
    let adj = graph.adjacency();
    let initial = refine(graph, &adj, initial_classes(graph, &adj));
    let mut budget = BRANCH_BUDGET;
    search(graph, &adj, initial, &mut budget)
}

fn initial_classes(graph: &MolGraph, adj: &[Vec<(usize, usize)>]) -> Vec<u32> {
    let keys: Vec<_> = graph
        .atoms
        .iter()
        .zip(adj)
        .map(|(a, nbrs)| {
            (
                a.element,
                a.aromatic,
                a.charge,
                a.hydrogens.map_or(-1, i16::from),
                nbrs.len(),
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0u32; keys.len()];
    let mut rank = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            rank += 1;
        }
        ranks[order[w]] = rank;
    }
    ranks
}

fn class_count(ranks: &[u32]) -> usize {
    ranks.iter().max().map_or(0, |&m| m as usize + 1)
}

fn order_code(order: BondOrder) -> u8 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

fn refine(graph: &MolGraph, adj: &[Vec<(usize, usize)>], mut ranks: Vec<u32>) -> Vec<u32> {
    loop {
        let keys: Vec<(u32, Vec<(u8, u32)>)> = adj
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let mut env: Vec<(u8, u32)> = nbrs
                    .iter()
                    .map(|&(n, b)| (order_code(graph.bonds[b].order), ranks[n]))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = dense_ranks(&keys);
        if class_count(&next) == class_count(&ranks) {
            return next;
        }
        ranks = next;
    }
}

fn search(
    graph: &MolGraph,
    adj: &[Vec<(usize, usize)>],
    ranks: Vec<u32>,
    budget: &mut usize,
) -> String {
    let n = ranks.len();
    if class_count(&ranks) == n {
        *budget = budget.saturating_sub(1);
        return write_smiles(graph, adj, &ranks);
    }
    let mut sizes = vec![0usize; n];
    for &r in &ranks {
        sizes[r as usize] += 1;
    }
    let tied = sizes.iter().position(|&s| s > 1).expect("a tied class") as u32;
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied).collect();
    let mut best: Option<String> = None;
    for (k, &m) in members.iter().enumerate() {
        if k > 0 && *budget == 0 {
            break;
        }
        let split: Vec<u32> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| if r > tied || (r == tied && i != m) { 2 * r + 1 } else { 2 * r })
            .collect();
        let split = refine(graph, adj, dense_ranks(&split));
        let candidate = search(graph, adj, split, budget);
        if best.as_ref().is_none_or(|b| candidate < *b) {
            best = Some(candidate);
        }
    }
    best.expect("at least one member")
}

/// Emits SMILES with a depth-first walk that always visits lower-ranked
/// neighbours first. Disconnected fragments are joined with `.` in order of
/// their lowest-ranked atom.
fn write_smiles(graph: &MolGraph, adj: &[Vec<(usize, usize)>], ranks: &[u32]) -> String {
    let n = graph.atoms.len();
    let sorted_adj: Vec<Vec<(usize, usize)>> = adj
        .iter()
        .map(|nbrs| {
            let mut v = nbrs.clone();
            v.sort_by_key(|&(nbr, _)| ranks[nbr]);
            v
        })
        .collect();
    let mut roots: Vec<usize> = (0..n).collect();
    roots.sort_by_key(|&i| ranks[i]);

    let mut visited = vec![false; n];
    let mut closure_seen = vec![false; graph.bonds.len()];
    // Ring closures per atom, in discovery order: (bond, partner, opens here).
    let mut ring_marks: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut components = Vec::new();

    for &root in &roots {
        if visited[root] {
            continue;
        }
        components.push(root);
        // Iterative DFS: (atom, parent bond, next neighbour cursor).
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        visited[root] = true;
        while let Some(frame) = stack.last_mut() {
            let (atom, parent_bond, cursor) = *frame;
            if cursor == sorted_adj[atom].len() {
                stack.pop();
                continue;
            }
            frame.2 += 1;
            let (nbr, bond) = sorted_adj[atom][cursor];
            if Some(bond) == parent_bond {
                continue;
            }
            if visited[nbr] {
                if !closure_seen[bond] {
                    closure_seen[bond] = true;
                    ring_marks[nbr].push((bond, atom, true));
                    ring_marks[atom].push((bond, nbr, false));
                }
            } else {
                visited[nbr] = true;
                children[atom].push((nbr, bond));
                stack.push((nbr, Some(bond), 0));
            }
        }
    }

    let mut out = String::new();
    let mut digits: Vec<Option<usize>> = vec![None; 10];
    let mut bond_digit = vec![0usize; graph.bonds.len()];
    for (k, &root) in components.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        emit(
            graph,
            root,
            &children,
            &ring_marks,
            &mut digits,
            &mut bond_digit,
            &mut out,
        );
    }
    out
}

fn emit(
    graph: &MolGraph,
    root: usize,
    children: &[Vec<(usize, usize)>],
    ring_marks: &[Vec<(usize, usize, bool)>],
    digits: &mut [Option<usize>],
    bond_digit: &mut [usize],
    out: &mut String,
) {
    enum Step {
        Atom(usize, Option<usize>),
        Open,
        Close,
    }
    let mut work = vec![Step::Atom(root, None)];
    while let Some(step) = work.pop() {
        let (atom, via) = match step {
            Step::Open => {
                out.push('(');
                continue;
            }
            Step::Close => {
                out.push(')');
                continue;
            }
            Step::Atom(atom, via) => (atom, via),
        };
        if let Some(bond) = via {
            out.push_str(bond_symbol(graph, bond));
        }
        write_atom(&graph.atoms[atom], out);

        let mut freed = Vec::new();
        for &(bond, _, _) in ring_marks[atom].iter().filter(|m| !m.2) {
            let d = bond_digit[bond];
            push_digit(d, out);
            freed.push(d);
        }
        for &(bond, _, _) in ring_marks[atom].iter().filter(|m| m.2) {
            let d = (1..digits.len())
                .chain(std::iter::once(0))
                .find(|&d| digits[d].is_none() && !freed.contains(&d))
                .unwrap_or(0);
            digits[d] = Some(bond);
            bond_digit[bond] = d;
            out.push_str(bond_symbol(graph, bond));
            push_digit(d, out);
        }
        for d in freed {
            digits[d] = None;
        }

        if let Some((&(last, last_bond), rest)) = children[atom].split_last() {
            work.push(Step::Atom(last, Some(last_bond)));
            for &(child, bond) in rest.iter().rev() {
                work.push(Step::Close);
                work.push(Step::Atom(child, Some(bond)));
                work.push(Step::Open);
            }
        }
    }
}

fn push_digit(d: usize, out: &mut String) {
    out.push(char::from(b'0' + d as u8));
}

fn bond_symbol(graph: &MolGraph, bond: usize) -> &'static str {
    let b = &graph.bonds[bond];
    match b.order {
        BondOrder::Single if graph.atoms[b.a].aromatic && graph.atoms[b.b].aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

pub(crate) fn write_atom(atom: &Atom, out: &mut String) {
    let el = element::by_number(atom.element);
    let symbol = el.map_or("*", |e| e.symbol);
    let organic = el.is_some_and(|e| e.organic);
    if atom.hydrogens.is_none() && atom.charge == 0 && organic {
        if atom.aromatic {
            out.push_str(&symbol.to_ascii_lowercase());
        } else {
            out.push_str(symbol);
        }
        return;
    }
    out.push('[');
    if atom.aromatic {
        out.push_str(&symbol.to_ascii_lowercase());
    } else {
        out.push_str(symbol);
    }
    match atom.hydrogens.unwrap_or(0) {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        q if q > 0 => out.push_str(&format!("+{q}")),
        q => out.push_str(&format!("-{}", -q)),
    }
    out.push(']');
}
