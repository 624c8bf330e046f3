//! Token-level SMILES parsing into molecular graphs.
//!
//! Parsing decides syntactic validity only: the graph is built without any
//! valence or aromaticity checks (those live in [`crate::chemcheck`]).

mod canon;

use std::fmt;

use crate::element;
use crate::vocab::{split_smiles, Vocabulary};

pub use canon::canonicalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum when aromatic bonds count as single.
    pub fn base_valence(self) -> u8 {
        match self {
            Self::Single | Self::Aromatic => 1,
            Self::Double => 2,
            Self::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Atomic number.
    pub element: u8,
    pub aromatic: bool,
    pub charge: i8,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms
    /// whose hydrogens are implicit.
    pub hydrogens: Option<u8>,
}

impl Atom {
    pub fn organic(element: u8, aromatic: bool) -> Self {
        Self {
            element,
            aromatic,
            charge: 0,
            hydrogens: None,
        }
    }

    pub fn symbol(&self) -> &'static str {
        element::by_number(self.element).map_or("*", |e| e.symbol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Per-atom `(neighbour, bond index)` lists in bond order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, bond) in self.bonds.iter().enumerate() {
            adj[bond.a].push((bond.b, i));
            adj[bond.b].push((bond.a, i));
        }
        adj
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds
            .iter()
            .position(|bond| (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`; bond list order
    /// is shuffled accordingly by sorting on the new endpoints.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| {
                let (a, c) = (perm[b.a], perm[b.b]);
                Bond {
                    a: a.max(c),
                    b: a.min(c),
                    order: b.order,
                }
            })
            .collect();
        bonds.sort_by_key(|b| (b.a, b.b));
        MolGraph { atoms, bonds }
    }

    /// Checks the structural invariants: indices in range, no self or
    /// duplicate bonds, aromatic bonds only between aromatic atoms.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.bonds.iter().all(|b| {
            b.a < self.atoms.len()
                && b.b < self.atoms.len()
                && b.a != b.b
                && seen.insert((b.a.min(b.b), b.a.max(b.b)))
                && (b.order != BondOrder::Aromatic
                    || (self.atoms[b.a].aromatic && self.atoms[b.b].aromatic))
        })
    }
}

/// The syntactic role of a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lexeme {
    Atom(Atom),
    Bond(BondOrder),
    BranchOpen,
    BranchClose,
    RingDigit(u8),
    Dot,
    /// Special tokens and anything that is not SMILES.
    Invalid,
}

impl Lexeme {
    /// Classifies one token symbol.
    pub fn from_symbol(symbol: &str) -> Self {
        match symbol {
            "(" => return Self::BranchOpen,
            ")" => return Self::BranchClose,
            "." => return Self::Dot,
            "-" | "/" | "\\" => return Self::Bond(BondOrder::Single),
            "=" => return Self::Bond(BondOrder::Double),
            "#" => return Self::Bond(BondOrder::Triple),
            ":" => return Self::Bond(BondOrder::Aromatic),
            _ => {}
        }
        let bytes = symbol.as_bytes();
        if bytes.len() == 1 && bytes[0].is_ascii_digit() {
            return Self::RingDigit(bytes[0] - b'0');
        }
        if let Some(inner) = symbol.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            return parse_bracket(inner).map_or(Self::Invalid, Self::Atom);
        }
        if let Some(e) = element::by_symbol(symbol).filter(|e| e.organic) {
            return Self::Atom(Atom::organic(e.number, false));
        }
        if symbol.len() == 1 {
            if let Some(e) = element::by_aromatic_symbol(symbol).filter(|e| e.organic) {
                return Self::Atom(Atom::organic(e.number, true));
            }
        }
        Self::Invalid
    }
}

/// Parses the inside of a bracket atom: isotope, symbol, chirality, hydrogen
/// count, charge and atom class. Isotope, chirality and class are discarded.
fn parse_bracket(inner: &str) -> Option<Atom> {
    let b = inner.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let (element, aromatic, len) = bracket_symbol(&inner[i..])?;
    i += len;
    while i < b.len() && b[i] == b'@' {
        i += 1;
    }
    let mut hydrogens = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        hydrogens = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            hydrogens = b[i] - b'0';
            i += 1;
        }
    }
    let mut charge: i8 = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign: i8 = if b[i] == b'+' { 1 } else { -1 };
        let mut magnitude = 1i8;
        i += 1;
        if i < b.len() && b[i].is_ascii_digit() {
            magnitude = (b[i] - b'0') as i8;
            i += 1;
        } else {
            while i < b.len() && b[i] == b[i - 1] && magnitude < 9 {
                magnitude += 1;
                i += 1;
            }
        }
        charge = sign * magnitude;
    }
    if i < b.len() && b[i] == b':' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    (i == b.len()).then_some(Atom {
        element,
        aromatic,
        charge,
        hydrogens: Some(hydrogens),
    })
}

fn bracket_symbol(s: &str) -> Option<(u8, bool, usize)> {
    let first = *s.as_bytes().first()?;
    if first.is_ascii_uppercase() {
        if let Some(two) = s.get(..2) {
            if two.as_bytes()[1].is_ascii_lowercase() {
                if let Some(e) = element::by_symbol(two) {
                    return Some((e.number, false, 2));
                }
            }
        }
        return element::by_symbol(&s[..1]).map(|e| (e.number, false, 1));
    }
    if first.is_ascii_lowercase() {
        if let Some(two) = s.get(..2) {
            if let Some(e) = element::by_aromatic_symbol(two) {
                return Some((e.number, true, 2));
            }
        }
        return element::by_aromatic_symbol(&s[..1]).map(|e| (e.number, true, 1));
    }
    None
}

/// Precomputed lexemes for every index of a vocabulary.
#[derive(Debug, Clone)]
pub struct LexTable {
    lexemes: Vec<Lexeme>,
}

impl LexTable {
    pub fn new(vocab: &Vocabulary) -> Self {
        let lexemes = vocab
            .tokens()
            .iter()
            .map(|t| {
                if Vocabulary::is_special(t.index) {
                    Lexeme::Invalid
                } else {
                    Lexeme::from_symbol(&t.symbol)
                }
            })
            .collect();
        Self { lexemes }
    }

    pub fn lexeme(&self, index: usize) -> Lexeme {
        self.lexemes[index]
    }

    /// Vocabulary size.
    pub fn len(&self) -> usize {
        self.lexemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexemes.is_empty()
    }

    /// Parses a sequence of vocabulary indices.
    pub fn parse(&self, tokens: &[usize]) -> Result<MolGraph, ParseFailure> {
        parse(tokens.iter().map(|&t| self.lexemes[t]))
    }
}

/// Tokenizes a raw SMILES string without a vocabulary and parses it.
/// Unterminated brackets are reported as a bad token at that position.
pub fn parse_smiles(smiles: &str) -> Result<MolGraph, ParseFailure> {
    let pieces = split_smiles(smiles).map_err(|byte| ParseFailure {
        kind: ParseFailureKind::BadTokenPosition,
        position: split_smiles(&smiles[..byte]).map_or(0, |p| p.len()),
    })?;
    parse(pieces.into_iter().map(Lexeme::from_symbol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseFailureKind {
    UnbalancedBranch,
    EmptyBranch,
    UnclosedRing,
    DanglingBond,
    BadTokenPosition,
}

/// Why a token sequence is not a molecule; `position` indexes the first
/// offending token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub position: usize,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at token {}", self.kind, self.position)
    }
}

impl std::error::Error for ParseFailure {}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Last {
    Start,
    Atom,
    Open,
    Close,
    Ring,
    Bond,
    Dot,
}

struct RingOpening {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

/// Walks the lexemes and builds the graph.
///
/// Atoms chain with an implicit single bond, or an aromatic one between two
/// aromatic atoms. An explicit bond applies to the next atom or ring closure.
/// When both ends of a ring closure carry a bond symbol they must agree.
pub fn parse(lexemes: impl IntoIterator<Item = Lexeme>) -> Result<MolGraph, ParseFailure> {
    use ParseFailureKind::*;
    let fail = |kind, position| Err(ParseFailure { kind, position });

    let mut graph = MolGraph::default();
    let mut current: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut bond_after_open = false;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: [Option<RingOpening>; 10] = Default::default();
    let mut last = Last::Start;
    let mut end = 0;

    for (pos, lexeme) in lexemes.into_iter().enumerate() {
        end = pos + 1;
        match lexeme {
            Lexeme::Atom(atom) => {
                let idx = graph.atoms.len();
                graph.atoms.push(atom);
                if let Some(prev) = current.filter(|_| last != Last::Dot) {
                    let order = match pending.take() {
                        Some((order, bond_pos)) => {
                            if order == BondOrder::Aromatic
                                && !(atom.aromatic && graph.atoms[prev].aromatic)
                            {
                                return fail(BadTokenPosition, bond_pos);
                            }
                            order
                        }
                        None => implicit_order(&graph.atoms[prev], &atom),
                    };
                    graph.bonds.push(Bond {
                        a: prev,
                        b: idx,
                        order,
                    });
                }
                current = Some(idx);
                last = Last::Atom;
            }
            Lexeme::Bond(order) => match last {
                Last::Atom | Last::Ring | Last::Close | Last::Open => {
                    bond_after_open = last == Last::Open;
                    pending = Some((order, pos));
                    last = Last::Bond;
                }
                Last::Bond => return fail(DanglingBond, pending.map_or(pos, |p| p.1)),
                Last::Start | Last::Dot => return fail(BadTokenPosition, pos),
            },
            Lexeme::BranchOpen => match last {
                Last::Atom | Last::Ring | Last::Close => {
                    branches.push((current.expect("atom precedes branch"), pos));
                    last = Last::Open;
                }
                Last::Bond => return fail(DanglingBond, pending.map_or(pos, |p| p.1)),
                Last::Start | Last::Open | Last::Dot => return fail(BadTokenPosition, pos),
            },
            Lexeme::BranchClose => match last {
                _ if branches.is_empty() => return fail(UnbalancedBranch, pos),
                Last::Open => return fail(EmptyBranch, pos),
                Last::Bond => return fail(DanglingBond, pending.map_or(pos, |p| p.1)),
                Last::Dot | Last::Start => return fail(BadTokenPosition, pos),
                Last::Atom | Last::Ring | Last::Close => {
                    let (atom, _) = branches.pop().expect("non-empty");
                    current = Some(atom);
                    last = Last::Close;
                }
            },
            Lexeme::RingDigit(d) => {
                match last {
                    Last::Atom | Last::Ring | Last::Close => {}
                    Last::Bond if !bond_after_open => {}
                    _ => return fail(BadTokenPosition, pos),
                }
                let atom = current.expect("atom precedes ring digit");
                let here = pending.take().map(|p| p.0);
                match rings[d as usize].take() {
                    Some(open) => {
                        if open.atom == atom || graph.bond_between(open.atom, atom).is_some() {
                            return fail(BadTokenPosition, pos);
                        }
                        let order = match (open.order, here) {
                            (Some(a), Some(b)) if a != b => return fail(DanglingBond, pos),
                            (Some(o), _) | (None, Some(o)) => o,
                            (None, None) => {
                                implicit_order(&graph.atoms[open.atom], &graph.atoms[atom])
                            }
                        };
                        if order == BondOrder::Aromatic
                            && !(graph.atoms[open.atom].aromatic && graph.atoms[atom].aromatic)
                        {
                            return fail(BadTokenPosition, pos);
                        }
                        graph.bonds.push(Bond {
                            a: open.atom,
                            b: atom,
                            order,
                        });
                    }
                    None => {
                        rings[d as usize] = Some(RingOpening {
                            atom,
                            order: here,
                            position: pos,
                        });
                    }
                }
                last = Last::Ring;
            }
            Lexeme::Dot => match last {
                Last::Atom | Last::Ring | Last::Close => last = Last::Dot,
                Last::Bond => return fail(DanglingBond, pending.map_or(pos, |p| p.1)),
                _ => return fail(BadTokenPosition, pos),
            },
            Lexeme::Invalid => return fail(BadTokenPosition, pos),
        }
    }

    match last {
        Last::Start => return fail(BadTokenPosition, 0),
        Last::Bond => return fail(DanglingBond, pending.map_or(end, |p| p.1)),
        Last::Dot => return fail(BadTokenPosition, end - 1),
        _ => {}
    }
    let unclosed_branch = branches.first().map(|&(_, pos)| (UnbalancedBranch, pos));
    let unclosed_ring = rings
        .iter()
        .flatten()
        .map(|r| (UnclosedRing, r.position))
        .min_by_key(|&(_, pos)| pos);
    if let Some((kind, position)) = [unclosed_branch, unclosed_ring]
        .into_iter()
        .flatten()
        .min_by_key(|&(_, pos)| pos)
    {
        return fail(kind, position);
    }
    Ok(graph)
}

fn implicit_order(a: &Atom, b: &Atom) -> BondOrder {
    if a.aromatic && b.aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

#[cfg(test)]
mod tests {
    use super::ParseFailureKind::*;
    use super::*;

    fn failure(s: &str) -> (ParseFailureKind, usize) {
        let f = parse_smiles(s).expect_err(s);
        (f.kind, f.position)
    }

    #[test]
    fn unclosed_branch() {
        assert_eq!(failure("C(C"), (UnbalancedBranch, 1));
        assert_eq!(failure("C(C(C"), (UnbalancedBranch, 1));
        assert_eq!(failure("C)"), (UnbalancedBranch, 1));
    }

    #[test]
    fn cyclopropane() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 3);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert!(g.is_well_formed());
    }

    #[test]
    fn ring_and_bond_failures() {
        assert_eq!(failure("C1CC"), (UnclosedRing, 1));
        assert_eq!(failure("=C"), (BadTokenPosition, 0));
        assert_eq!(failure("1CC"), (BadTokenPosition, 0));
        assert_eq!(failure(")C"), (UnbalancedBranch, 0));
        assert_eq!(failure("(C)"), (BadTokenPosition, 0));
        assert_eq!(failure("C="), (DanglingBond, 1));
        assert_eq!(failure("C-=C"), (DanglingBond, 1));
        assert_eq!(failure("C()"), (EmptyBranch, 2));
        assert_eq!(failure("C((C))"), (BadTokenPosition, 2));
        assert_eq!(failure("C(=)C"), (DanglingBond, 2));
        assert_eq!(failure("C11"), (BadTokenPosition, 2));
        assert_eq!(failure("C12CC12"), (BadTokenPosition, 6));
        assert_eq!(failure("C=1CC#1"), (DanglingBond, 6));
        assert_eq!(failure("C1(C"), (UnclosedRing, 1));
        assert_eq!(failure("C."), (BadTokenPosition, 1));
        assert_eq!(failure(""), (BadTokenPosition, 0));
        assert_eq!(failure("C[Xx]"), (BadTokenPosition, 1));
    }

    #[test]
    fn accepted_corner_cases() {
        for s in [
            "C(C)1CC1",
            "C=1CC1",
            "C=1CC=1",
            "c1ccccc1c1ccccc1",
            "C(C)(C)",
            "C12CC(C1)C2",
            "O=c1cc[nH]c(=O)[nH]1",
            "CC.O",
            "[13CH3][N+](C)(C)[O-]",
            "F/C=C/F",
        ] {
            let g = parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert!(g.is_well_formed(), "{s}");
        }
    }

    #[test]
    fn ring_closure_order_from_either_side() {
        let g = parse_smiles("C=1CC1").unwrap();
        assert_eq!(g.bonds[2].order, BondOrder::Double);
        let g = parse_smiles("C1CC=1").unwrap();
        assert_eq!(g.bonds[2].order, BondOrder::Double);
        let g = parse_smiles("c1ccccc1").unwrap();
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn bracket_atoms() {
        let Lexeme::Atom(a) = Lexeme::from_symbol("[nH]") else { panic!() };
        assert_eq!((a.element, a.aromatic, a.hydrogens, a.charge), (7, true, Some(1), 0));
        let Lexeme::Atom(a) = Lexeme::from_symbol("[NH3+]") else { panic!() };
        assert_eq!((a.hydrogens, a.charge), (Some(3), 1));
        let Lexeme::Atom(a) = Lexeme::from_symbol("[O-]") else { panic!() };
        assert_eq!((a.element, a.charge), (8, -1));
        let Lexeme::Atom(a) = Lexeme::from_symbol("[Fe++]") else {
            // iron is not in the table
            assert_eq!(Lexeme::from_symbol("[Fe++]"), Lexeme::Invalid);
            return;
        };
        panic!("unexpected {a:?}");
    }

    #[test]
    fn explicit_aromatic_bond_needs_aromatic_atoms() {
        assert_eq!(failure("C:C"), (BadTokenPosition, 1));
        assert!(parse_smiles("c1:c:c:c:c:c:1").is_ok());
    }
}
