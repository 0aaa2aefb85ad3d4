//! Shortlex enumeration of words over a rational generating set.

use rustc_hash::FxHashSet;

use crate::arith::{ArithError, RationalMatrix, ResidueMatrix};

/// A word over generator indices together with its value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub letters: Vec<usize>,
    pub value: RationalMatrix,
}

/// Generator indices joined by `.`; the empty word is `""`.
pub fn word_string(letters: &[usize]) -> String {
    letters
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(".")
}

pub fn parse_word(s: &str) -> Option<Vec<usize>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split('.').map(|t| t.parse().ok()).collect()
}

/// Left-to-right product of the named generators.
pub fn evaluate(gens: &[RationalMatrix], letters: &[usize]) -> RationalMatrix {
    let n = gens.first().map_or(0, |g| g.n());
    letters
        .iter()
        .fold(RationalMatrix::identity(n), |acc, &l| acc.mul(&gens[l]))
}

/// Words over `gens` in shortlex order (length first, then lexicographic by
/// generator index), up to a maximal length.
#[derive(Clone, Debug)]
pub struct WordSource {
    gens: Vec<RationalMatrix>,
    max_len: usize,
}

impl WordSource {
    pub fn new(gens: Vec<RationalMatrix>, max_len: usize) -> Self {
        WordSource { gens, max_len }
    }

    pub fn generators(&self) -> &[RationalMatrix] {
        &self.gens
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// All words of length `1..=max_len` that contain no adjacent cancelling
    /// pair `g h` with `g h = I`.
    pub fn words(&self) -> Vec<Word> {
        let k = self.gens.len();
        let cancels: Vec<Vec<bool>> = (0..k)
            .map(|a| (0..k).map(|b| self.gens[a].mul(&self.gens[b]).is_identity()).collect())
            .collect();
        let mut out = Vec::new();
        let mut level: Vec<Word> = vec![Word {
            letters: Vec::new(),
            value: RationalMatrix::identity(self.gens.first().map_or(0, |g| g.n())),
        }];
        for _ in 0..self.max_len {
            let mut next = Vec::new();
            for w in &level {
                for j in 0..k {
                    if let Some(&last) = w.letters.last() {
                        if cancels[last][j] {
                            continue;
                        }
                    }
                    let mut letters = w.letters.clone();
                    letters.push(j);
                    next.push(Word {
                        letters,
                        value: w.value.mul(&self.gens[j]),
                    });
                }
            }
            out.extend(next.iter().cloned());
            level = next;
        }
        out
    }

    /// Shortlex words whose reductions mod `m` are pairwise distinct and not
    /// the identity, paired with those reductions.
    pub fn distinct_mod(&self, m: u64) -> Result<Vec<(Word, ResidueMatrix)>, ArithError> {
        let mut seen = FxHashSet::default();
        let mut out = Vec::new();
        for w in self.words() {
            let r = w.value.reduce_mod(m)?;
            if r.is_identity() || !seen.insert(r.encoding()) {
                continue;
            }
            out.push((w, r));
        }
        Ok(out)
    }
}
