//! SMILES tokenization, corpus-driven vocabularies and token priors.
//!
//! Tokens are single characters except for the two-letter organic halogens
//! (`Cl`, `Br`) and complete bracket expressions such as `[nH]`. The three
//! special tokens always occupy indices 0..3.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const PAD: &str = "[PAD]";

pub const BOS_INDEX: usize = 0;
pub const EOS_INDEX: usize = 1;
pub const PAD_INDEX: usize = 2;

/// No vocabulary token matches at `position` (byte offset into the input).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no vocabulary token matches at byte {position}")]
pub struct TokenizeError {
    pub position: usize,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: cannot tokenize at byte {position}")]
    Untokenizable { line: usize, position: usize },
    #[error("corpus has no non-special tokens to count")]
    ZeroCount,
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
    #[error("priors file line {line}: {message}")]
    BadPriors { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub symbol: String,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    lookup: HashMap<String, usize>,
    max_token_len: usize,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    /// Builds a vocabulary from symbols in index order. The first three must be
    /// the special tokens.
    pub fn from_symbols<S: Into<String>>(
        symbols: impl IntoIterator<Item = S>,
    ) -> Result<Self, VocabError> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 3
            || symbols[BOS_INDEX] != BOS
            || symbols[EOS_INDEX] != EOS
            || symbols[PAD_INDEX] != PAD
        {
            return Err(VocabError::Malformed(
                "special tokens must come first as [BOS], [EOS], [PAD]".into(),
            ));
        }
        let mut lookup = HashMap::with_capacity(symbols.len());
        let mut tokens = Vec::with_capacity(symbols.len());
        let mut max_token_len = 1;
        for (index, symbol) in symbols.into_iter().enumerate() {
            if symbol.is_empty() {
                return Err(VocabError::Malformed(format!("empty token at index {index}")));
            }
            if lookup.contains_key(&symbol) {
                return Err(VocabError::Malformed(format!("duplicate token {symbol:?}")));
            }
            if index > PAD_INDEX {
                lookup.insert(symbol.clone(), index);
                max_token_len = max_token_len.max(symbol.len());
            }
            tokens.push(Token { symbol, index });
        }
        Ok(Self {
            tokens,
            lookup,
            max_token_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.tokens[index].symbol
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        match symbol {
            BOS => Some(BOS_INDEX),
            EOS => Some(EOS_INDEX),
            PAD => Some(PAD_INDEX),
            _ => self.lookup.get(symbol).copied(),
        }
    }

    pub fn is_special(index: usize) -> bool {
        index <= PAD_INDEX
    }

    /// Indices of all non-special tokens.
    pub fn content_indices(&self) -> std::ops::Range<usize> {
        PAD_INDEX + 1..self.tokens.len()
    }

    /// Greedy longest-match tokenization. Special tokens are never matched.
    pub fn tokenize(&self, s: &str) -> Result<Vec<usize>, TokenizeError> {
        let mut out = Vec::with_capacity(s.len());
        let mut pos = 0;
        while pos < s.len() {
            let rest = &s[pos..];
            let longest = self.max_token_len.min(rest.len());
            let hit = (1..=longest).rev().find_map(|len| {
                rest.get(..len)
                    .and_then(|piece| self.lookup.get(piece))
                    .map(|&index| (index, len))
            });
            match hit {
                Some((index, len)) => {
                    out.push(index);
                    pos += len;
                }
                None => return Err(TokenizeError { position: pos }),
            }
        }
        Ok(out)
    }

    /// Concatenates token symbols, skipping special tokens.
    pub fn detokenize(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter(|&&i| !Self::is_special(i))
            .map(|&i| self.symbol(i))
            .collect()
    }

    /// Stable 64-bit fingerprint of the ordered token list.
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.symbol.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    /// One token per line in index order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for token in &self.tokens {
            writeln!(w, "{}", token.symbol)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, VocabError> {
        let mut symbols = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if !line.is_empty() {
                symbols.push(line.to_string());
            }
        }
        Self::from_symbols(symbols)
    }
}

/// Splits a SMILES string into raw tokens without a vocabulary: bracket
/// expressions, `Cl`, `Br`, and otherwise single characters.
///
/// Fails with the byte offset of an unterminated bracket or a whitespace
/// character.
pub fn split_smiles(s: &str) -> Result<Vec<&str>, usize> {
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some((start, ch)) = chars.next() {
        if ch.is_whitespace() {
            return Err(start);
        }
        let end = match ch {
            '[' => match s[start..].find(']') {
                Some(close) => {
                    let end = start + close + 1;
                    while chars.peek().is_some_and(|&(i, _)| i < end) {
                        chars.next();
                    }
                    end
                }
                None => return Err(start),
            },
            'C' if chars.peek().is_some_and(|&(_, c)| c == 'l') => {
                chars.next();
                start + 2
            }
            'B' if chars.peek().is_some_and(|&(_, c)| c == 'r') => {
                chars.next();
                start + 2
            }
            _ => start + ch.len_utf8(),
        };
        out.push(&s[start..end]);
    }
    Ok(out)
}

/// Collects every token appearing in the corpus. Specials come first, the rest
/// in byte-lexicographic order. Blank lines are ignored.
pub fn build_vocabulary<I, S>(corpus: I) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = std::collections::BTreeSet::new();
    let mut lines = 0usize;
    for (n, line) in corpus.into_iter().enumerate() {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        lines += 1;
        let pieces = split_smiles(line).map_err(|position| VocabError::Untokenizable {
            line: n + 1,
            position,
        })?;
        for piece in pieces {
            if piece != BOS && piece != EOS && piece != PAD {
                seen.insert(piece.to_string());
            }
        }
    }
    if lines == 0 {
        return Err(VocabError::EmptyCorpus);
    }
    let symbols = [BOS, EOS, PAD]
        .into_iter()
        .map(String::from)
        .chain(seen);
    Vocabulary::from_symbols(symbols)
}

/// Empirical token frequencies with zero mass on the special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPriors {
    probs: Vec<f64>,
}

impl TokenPriors {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, VocabError> {
        let bad = |message: &str| VocabError::BadPriors {
            line: 0,
            message: message.to_string(),
        };
        if probs.len() <= PAD_INDEX {
            return Err(bad("fewer entries than special tokens"));
        }
        if probs[..=PAD_INDEX].iter().any(|&p| p != 0.0) {
            return Err(bad("special tokens must have zero probability"));
        }
        if probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(bad("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad("probabilities do not sum to 1"));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of tokens with strictly positive probability.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    /// `token<TAB>probability` lines in vocabulary order, 17 significant digits.
    pub fn write_to(&self, vocab: &Vocabulary, mut w: impl Write) -> std::io::Result<()> {
        for (token, &p) in vocab.tokens().iter().zip(&self.probs) {
            writeln!(w, "{}\t{}", token.symbol, format_probability(p))?;
        }
        Ok(())
    }

    pub fn read_from(vocab: &Vocabulary, r: impl BufRead) -> Result<Self, VocabError> {
        let mut probs = vec![f64::NAN; vocab.len()];
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| VocabError::BadPriors {
                line: n + 1,
                message,
            };
            let (symbol, value) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected token<TAB>probability".into()))?;
            let index = vocab
                .index_of(symbol)
                .ok_or_else(|| bad(format!("token {symbol:?} not in vocabulary")))?;
            probs[index] = value
                .parse()
                .map_err(|e| bad(format!("bad probability {value:?}: {e}")))?;
        }
        if let Some(missing) = probs.iter().position(|p| p.is_nan()) {
            return Err(VocabError::BadPriors {
                line: 0,
                message: format!("missing entry for token {:?}", vocab.symbol(missing)),
            });
        }
        Self::from_probs(probs)
    }
}

fn format_probability(p: f64) -> String {
    if p == 0.0 {
        return "0.0000000000000000".to_string();
    }
    let decimals = (16 - p.log10().floor() as i64).max(16) as usize;
    format!("{p:.decimals$}")
}

/// Counts tokens over the corpus; `probs[t] = count(t) / total`, specials excluded.
pub fn compute_priors<I, S>(corpus: I, vocab: &Vocabulary) -> Result<TokenPriors, VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = vec![0u64; vocab.len()];
    for (n, line) in corpus.into_iter().enumerate() {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        let indices = vocab
            .tokenize(line)
            .map_err(|e| VocabError::Untokenizable {
                line: n + 1,
                position: e.position,
            })?;
        for index in indices {
            counts[index] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(VocabError::ZeroCount);
    }
    let probs = counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    Ok(TokenPriors { probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(corpus: &[&str]) -> Vocabulary {
        build_vocabulary(corpus.iter().copied()).unwrap()
    }

    #[test]
    fn chlorobenzene_keeps_cl_whole() {
        let v = vocab(&["Clc1ccccc1"]);
        let ids = v.tokenize("Clc1ccccc1").unwrap();
        let symbols: Vec<_> = ids.iter().map(|&i| v.symbol(i)).collect();
        assert_eq!(symbols, ["Cl", "c", "1", "c", "c", "c", "c", "c", "1"]);
        assert!(v.index_of("Cl").is_some());
        assert!(v.index_of("l").is_none());
    }

    #[test]
    fn empty_and_simple_strings() {
        let v = vocab(&["C#N"]);
        assert!(v.tokenize("").unwrap().is_empty());
        let symbols: Vec<_> = v
            .tokenize("C#N")
            .unwrap()
            .into_iter()
            .map(|i| v.symbol(i).to_string())
            .collect();
        assert_eq!(symbols, ["C", "#", "N"]);
    }

    #[test]
    fn tokenize_error_reports_position() {
        let v = vocab(&["CC"]);
        assert_eq!(v.tokenize("CCO"), Err(TokenizeError { position: 2 }));
    }

    #[test]
    fn vocabulary_is_sorted_union_with_specials_first() {
        let v = vocab(&["CC", "CO"]);
        let symbols: Vec<_> = v.tokens().iter().map(|t| t.symbol.as_str()).collect();
        assert_eq!(symbols, [BOS, EOS, PAD, "C", "O"]);
        assert_eq!(vocab(&["CC", "CO", "CC", "CO"]), v);
    }

    #[test]
    fn bracket_atoms_are_single_tokens() {
        let v = vocab(&["c1cc[nH]c1", "C[N+](C)(C)C"]);
        assert!(v.index_of("[nH]").is_some());
        assert!(v.index_of("[N+]").is_some());
        assert_eq!(v.detokenize(&v.tokenize("c1cc[nH]c1").unwrap()), "c1cc[nH]c1");
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_vocabulary(Vec::<String>::new()),
            Err(VocabError::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocabulary(["CC", "C[nH"]),
            Err(VocabError::Untokenizable { line: 2, position: 1 })
        ));
    }

    #[test]
    fn priors_are_exact_frequencies() {
        let v = vocab(&["CC", "CO"]);
        let p = compute_priors(["CC", "CO"], &v).unwrap();
        assert_eq!(p.prob(v.index_of("C").unwrap()), 0.75);
        assert_eq!(p.prob(v.index_of("O").unwrap()), 0.25);
        for special in [BOS_INDEX, EOS_INDEX, PAD_INDEX] {
            assert_eq!(p.prob(special), 0.0);
        }
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn priors_need_tokens() {
        let v = vocab(&["CC"]);
        assert!(matches!(compute_priors([""], &v), Err(VocabError::ZeroCount)));
    }

    #[test]
    fn files_round_trip() {
        let v = vocab(&["Clc1ccccc1", "CC(=O)[O-]"]);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("[BOS]\n[EOS]\n[PAD]\n"));
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());

        let p = compute_priors(["Clc1ccccc1", "CC(=O)[O-]"], &v).unwrap();
        let mut buf = Vec::new();
        p.write_to(&v, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for line in text.lines().skip(3) {
            let value = line.split('\t').nth(1).unwrap();
            let digits = value.trim_start_matches("0.").trim_start_matches('0');
            assert!(digits.len() >= 12, "{value}");
        }
        assert_eq!(TokenPriors::read_from(&v, &buf[..]).unwrap(), p);
    }
}
