use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tssr_core::metrics::{
    fingerprint, murcko_scaffold, nn_diversity, scaffold_stats, tanimoto, unique_scaffolds, Fingerprint, FP_BITS,
};
use tssr_core::molparse::{canonicalize, parse_smiles, MolGraph};

fn corpus_graphs(n: usize) -> Vec<MolGraph> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/moses_train_10k.smi");
    std::fs::read_to_string(path)
        .expect("corpus file")
        .lines()
        .take(n)
        .map(|l| parse_smiles(l).unwrap())
        .collect()
}

/// Bit-by-bit set arithmetic, independent of the word-level implementation.
fn tanimoto_by_bits(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let (mut and, mut or) = (0, 0);
    for bit in 0..FP_BITS {
        let (x, y) = (a.contains(bit), b.contains(bit));
        and += usize::from(x && y);
        or += usize::from(x || y);
    }
    if or == 0 {
        1.0
    } else {
        and as f64 / or as f64
    }
}

#[test]
fn fingerprints_and_scaffolds_ignore_atom_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for g in corpus_graphs(100) {
        let fp = fingerprint(&g);
        assert!(fp.count() >= 1);
        let scaffold = murcko_scaffold(&g);
        let key = if scaffold.atoms.is_empty() { String::new() } else { canonicalize(&scaffold) };
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..g.atoms.len()).collect();
            perm.shuffle(&mut rng);
            let p = g.permuted(&perm);
            assert_eq!(fingerprint(&p), fp, "{}", canonicalize(&g));
            let s = murcko_scaffold(&p);
            let k = if s.atoms.is_empty() { String::new() } else { canonicalize(&s) };
            assert_eq!(k, key);
        }
    }
}

#[test]
fn nearest_neighbour_diversity_matches_pairwise_oracle() {
    let fps: Vec<Fingerprint> = corpus_graphs(200).iter().map(fingerprint).collect();
    let n = fps.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut best: f64 = 0.0;
        for j in 0..n {
            if i != j {
                let t = tanimoto_by_bits(&fps[i], &fps[j]);
                assert_eq!(t, tanimoto(&fps[i], &fps[j]));
                best = best.max(t);
            }
        }
        total += 1.0 - best;
    }
    assert_eq!(nn_diversity(&fps).unwrap(), total / n as f64);
}

#[test]
fn scaffold_similarity_matches_pairwise_oracle() {
    let graphs = corpus_graphs(400);
    for (k, chunk) in graphs.chunks(20).enumerate() {
        let (generated, reference) = chunk.split_at(10);
        let stats = scaffold_stats(generated, reference).unwrap();

        let gen_scaffolds = unique_scaffolds(generated);
        let ref_fps: Vec<Fingerprint> = unique_scaffolds(reference).iter().map(|(_, s)| fingerprint(s)).collect();
        assert_eq!(stats.count, gen_scaffolds.len(), "chunk {k}");
        let mut total = 0.0;
        for (_, s) in &gen_scaffolds {
            let fp = fingerprint(s);
            total += ref_fps.iter().map(|r| tanimoto_by_bits(&fp, r)).fold(0.0, f64::max);
        }
        let expected = if gen_scaffolds.is_empty() { 0.0 } else { total / gen_scaffolds.len() as f64 };
        assert_eq!(stats.similarity, expected, "chunk {k}");

        let own = scaffold_stats(generated, generated).unwrap();
        if own.count > 0 {
            assert_eq!(own.similarity, 1.0);
        }
    }
}
