use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tssr_core::chemcheck::detect_problems;
use tssr_core::molparse::{canonicalize, parse_smiles};

fn corpus() -> Vec<String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/moses_train_10k.smi");
    std::fs::read_to_string(path)
        .expect("corpus file")
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn every_corpus_line_parses() {
    for line in corpus() {
        assert!(parse_smiles(&line).is_ok(), "{line}");
    }
}

#[test]
fn corpus_is_chemically_sound() {
    let lines = corpus();
    let bad: Vec<&String> = lines
        .iter()
        .filter(|l| !detect_problems(&parse_smiles(l).unwrap()).is_valid())
        .collect();
    let rate = 1.0 - bad.len() as f64 / lines.len() as f64;
    assert!(rate >= 0.95, "sound fraction {rate}; first: {:?}", &bad[..bad.len().min(5)]);
}

#[test]
fn canonical_form_is_idempotent_and_reparses_to_same_problems() {
    for line in corpus().iter().take(2000) {
        let g = parse_smiles(line).unwrap();
        let c = canonicalize(&g);
        let g2 = parse_smiles(&c).unwrap_or_else(|e| panic!("{line} -> {c}: {e}"));
        assert_eq!(g2.atoms.len(), g.atoms.len(), "{line} -> {c}");
        assert_eq!(g2.bonds.len(), g.bonds.len(), "{line} -> {c}");
        assert_eq!(canonicalize(&g2), c, "{line}");
        assert_eq!(detect_problems(&g2).count(), detect_problems(&g).count(), "{line}");
    }
}

#[test]
fn canonical_form_ignores_atom_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for line in corpus().iter().take(1000) {
        let g = parse_smiles(line).unwrap();
        let c = canonicalize(&g);
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..g.atoms.len()).collect();
            perm.shuffle(&mut rng);
            assert_eq!(canonicalize(&g.permuted(&perm)), c, "{line}");
        }
    }
}

#[test]
fn distinct_spellings_share_a_canonical_form() {
    let pairs = [
        ("OCC", "CCO"),
        ("c1ccccc1C", "Cc1ccccc1"),
        ("C1CC1C(=O)O", "OC(=O)C1CC1"),
        ("n1ccccc1", "c1ccncc1"),
    ];
    for (a, b) in pairs {
        assert_eq!(
            canonicalize(&parse_smiles(a).unwrap()),
            canonicalize(&parse_smiles(b).unwrap()),
            "{a} vs {b}"
        );
    }
    let set: HashSet<String> = ["CCO", "CCN", "COC"]
        .iter()
        .map(|s| canonicalize(&parse_smiles(s).unwrap()))
        .collect();
    assert_eq!(set.len(), 3);
}
