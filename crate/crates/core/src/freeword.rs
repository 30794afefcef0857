//! Words in a free group, their evaluation as word maps, letter-disjoint
//! convolution and the three random-word models.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matgroup::{FiniteGroup, GroupTable, Mat};
use crate::rng::lab_rng;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("letter {letter} is outside the alphabet of rank {rank}")]
    BadLetter { letter: i32, rank: usize },
    #[error("word text contains unsupported character `{0}` (use a-d, A-D for inverses, or 1 for the empty word)")]
    BadCharacter(char),
    #[error("word of rank {rank} needs {rank} arguments, got {given}")]
    ArityMismatch { rank: usize, given: usize },
    #[error("tuple entry {0} is not an element of the group")]
    NotInGroup(Mat),
}

/// A freely reduced word over letters `1..=rank`; negative entries are
/// inverse letters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word {
    rank: usize,
    letters: Vec<i32>,
}

/// Appends `s` to a reduced sequence, cancelling against the tail.
fn push_reduced(out: &mut Vec<i32>, s: i32) {
    if out.last() == Some(&-s) {
        out.pop();
    } else {
        out.push(s);
    }
}

impl Word {
    pub fn empty(rank: usize) -> Self {
        Self {
            rank,
            letters: Vec::new(),
        }
    }

    /// Freely reduces a raw signed-letter sequence.
    pub fn reduce(rank: usize, raw: &[i32]) -> Result<Self, WordError> {
        let mut letters = Vec::with_capacity(raw.len());
        for &s in raw {
            if s == 0 || s.unsigned_abs() as usize > rank {
                return Err(WordError::BadLetter { letter: s, rank });
            }
            push_reduced(&mut letters, s);
        }
        Ok(Self { rank, letters })
    }

    /// Parses the text form: `a..d` are generators, `A..D` their inverses,
    /// and `1` (or an empty string) is the empty word. The rank is the
    /// highest letter used, at least 1.
    pub fn parse(text: &str) -> Result<Self, WordError> {
        let text = text.trim();
        if text.is_empty() || text == "1" {
            return Ok(Self::empty(1));
        }
        let mut raw = Vec::with_capacity(text.len());
        for ch in text.chars() {
            let s = match ch {
                'a'..='d' => (ch as u8 - b'a' + 1) as i32,
                'A'..='D' => -((ch as u8 - b'A' + 1) as i32),
                _ => return Err(WordError::BadCharacter(ch)),
            };
            raw.push(s);
        }
        let rank = raw.iter().map(|s| s.unsigned_abs() as usize).max().unwrap_or(1);
        Self::reduce(rank, &raw)
    }

    /// Same word viewed in a free group of (at least) `rank` letters.
    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = self.rank.max(rank);
        self
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn letters(&self) -> &[i32] {
        &self.letters
    }

    /// Word length of the reduced form.
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Self {
            rank: self.rank,
            letters: self.letters.iter().rev().map(|s| -s).collect(),
        }
    }

    /// Product in the free group (same alphabet).
    pub fn concat(&self, other: &Word) -> Self {
        let mut letters = self.letters.clone();
        for &s in &other.letters {
            push_reduced(&mut letters, s);
        }
        Self {
            rank: self.rank.max(other.rank),
            letters,
        }
    }

    /// Letter-disjoint concatenation: the letters of `other` are shifted
    /// past this word's alphabet.
    pub fn convolve(&self, other: &Word) -> Self {
        let shift = self.rank as i32;
        let mut letters = self.letters.clone();
        letters.extend(other.letters.iter().map(|&s| s + s.signum() * shift));
        Self {
            rank: self.rank + other.rank,
            letters,
        }
    }

    /// `t`-fold letter-disjoint self-convolution (`t >= 1`).
    pub fn convolution_power(&self, t: usize) -> Self {
        let mut w = self.clone();
        for _ in 1..t.max(1) {
            w = w.convolve(self);
        }
        w
    }

    /// Sorted letters (1-based) that actually occur.
    pub fn support(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self.letters.iter().map(|s| s.unsigned_abs() as usize).collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Evaluates the word map on a tuple of matrices, left to right.
    pub fn evaluate(&self, tuple: &[Mat], g: &GroupTable) -> Result<Mat, WordError> {
        if tuple.len() < self.rank {
            return Err(WordError::ArityMismatch {
                rank: self.rank,
                given: tuple.len(),
            });
        }
        for m in &tuple[..self.rank] {
            if g.index_of(m).is_none() {
                return Err(WordError::NotInGroup(*m));
            }
        }
        let p = g.p();
        let mut acc = Mat::IDENTITY;
        for &s in &self.letters {
            let m = tuple[s.unsigned_abs() as usize - 1];
            let m = if s > 0 { m } else { m.inverse(p).expect("invertible") };
            acc = acc.mul(&m, p);
        }
        Ok(g.canonical(&acc))
    }

    /// Evaluates on raw matrices over F_p without a group table.
    pub fn evaluate_matrices(&self, tuple: &[Mat], p: u32) -> Mat {
        let mut acc = Mat::IDENTITY;
        for &s in &self.letters {
            let m = tuple[s.unsigned_abs() as usize - 1];
            let m = if s > 0 { m } else { m.inverse(p).expect("invertible") };
            acc = acc.mul(&m, p);
        }
        acc
    }

    /// Evaluates on group ordinals in any finite group.
    pub fn evaluate_in<G: FiniteGroup>(&self, tuple: &[usize], g: &G) -> Result<usize, WordError> {
        if tuple.len() < self.rank {
            return Err(WordError::ArityMismatch {
                rank: self.rank,
                given: tuple.len(),
            });
        }
        Ok(self.letters.iter().fold(g.identity(), |acc, &s| {
            let x = tuple[s.unsigned_abs() as usize - 1];
            g.mul(acc, if s > 0 { x } else { g.inv(x) })
        }))
    }

    /// Commutator `[x, y] = x y x⁻¹ y⁻¹` on two letters.
    pub fn commutator() -> Self {
        Self::reduce(2, &[1, 2, -1, -2]).expect("valid")
    }

    /// Splits the word into maximal consecutive blocks whose letter sets
    /// are pairwise disjoint, so the word map is the convolution of the
    /// blocks' word maps.
    pub fn disjoint_blocks(&self) -> Vec<Word> {
        let n = self.letters.len();
        if n == 0 {
            return vec![self.clone()];
        }
        let mut last = vec![0usize; self.rank + 1];
        for (i, s) in self.letters.iter().enumerate() {
            last[s.unsigned_abs() as usize] = i;
        }
        let mut blocks = Vec::new();
        let mut start = 0;
        let mut end = 0;
        for (i, s) in self.letters.iter().enumerate() {
            end = end.max(last[s.unsigned_abs() as usize]);
            if i == end {
                blocks.push(self.letters[start..=i].to_vec());
                start = i + 1;
            }
        }
        blocks
            .into_iter()
            .map(|letters| Word {
                rank: self.rank,
                letters,
            })
            .collect()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return f.write_str("1");
        }
        for &s in &self.letters {
            let idx = s.unsigned_abs() as u8 - 1;
            let ch = if idx < 26 {
                if s > 0 {
                    (b'a' + idx) as char
                } else {
                    (b'A' + idx) as char
                }
            } else {
                '?'
            };
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

/// Random word models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordModel {
    /// Each letter uniform over the 2r signed letters.
    NonReduced,
    /// Uniform over reduced words of exactly the given length.
    Reduced,
    /// Reduced model with length uniform in `[c1·ℓ, c2·ℓ]`.
    Interval { c1: f64, c2: f64 },
}

fn random_signed_letter<R: Rng + ?Sized>(rank: usize, rng: &mut R) -> i32 {
    signed_letter_at(rng.random_range(0..2 * rank), rank)
}

/// `len` letters, each uniform over the 2r signed letters, unreduced.
pub fn sample_raw<R: Rng + ?Sized>(rank: usize, len: usize, rng: &mut R) -> Vec<i32> {
    (0..len).map(|_| random_signed_letter(rank, rng)).collect()
}

fn signed_letter_at(slot: usize, rank: usize) -> i32 {
    if slot < rank {
        slot as i32 + 1
    } else {
        -((slot - rank) as i32 + 1)
    }
}

fn slot_of(s: i32, rank: usize) -> usize {
    if s > 0 {
        s as usize - 1
    } else {
        rank + (-s) as usize - 1
    }
}

fn sample_reduced<R: Rng + ?Sized>(rank: usize, len: usize, rng: &mut R) -> Vec<i32> {
    let mut out: Vec<i32> = Vec::with_capacity(len);
    for _ in 0..len {
        let s = match out.last() {
            None => random_signed_letter(rank, rng),
            Some(&prev) => {
                // uniform over the 2r-1 letters other than prev⁻¹
                let forbidden = slot_of(-prev, rank);
                let u = rng.random_range(0..2 * rank - 1);
                signed_letter_at(if u >= forbidden { u + 1 } else { u }, rank)
            }
        };
        out.push(s);
    }
    out
}

/// Samples one word under `model` and returns its free reduction.
pub fn sample_word<R: Rng + ?Sized>(model: WordModel, rank: usize, len: usize, rng: &mut R) -> Word {
    let raw = match model {
        WordModel::NonReduced => sample_raw(rank, len, rng),
        WordModel::Reduced => sample_reduced(rank, len, rng),
        WordModel::Interval { c1, c2 } => {
            let lo = (c1 * len as f64).ceil().max(0.0) as usize;
            let hi = (c2 * len as f64).floor().max(lo as f64) as usize;
            let l = rng.random_range(lo..=hi);
            sample_reduced(rank, l, rng)
        }
    };
    Word::reduce(rank, &raw).expect("sampled letters are in range")
}

pub fn sample_word_seeded(model: WordModel, rank: usize, len: usize, seed: u64) -> Word {
    sample_word(model, rank, len, &mut lab_rng(seed))
}

/// Whether a raw letter sequence is trivial in the free group.
pub fn is_trivial(raw: &[i32]) -> bool {
    let mut stack: Vec<i32> = Vec::with_capacity(raw.len());
    for &s in raw {
        push_reduced(&mut stack, s);
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgroup::GroupKind;
    use crate::rng::lab_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn reduction_examples() {
        assert!(Word::reduce(1, &[1, -1]).unwrap().is_empty());
        let w = Word::reduce(2, &[1, 2, -1, -2]).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.letters(), &[1, 2, -1, -2]);
        let w = Word::reduce(2, &[1, 2, -2, 1]).unwrap();
        assert_eq!(w.letters(), &[1, 1]);
        assert_eq!(
            Word::reduce(2, &[3]),
            Err(WordError::BadLetter { letter: 3, rank: 2 })
        );
        assert!(Word::reduce(2, &[0]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let w = Word::parse("abAB").unwrap();
        assert_eq!(w, Word::commutator());
        assert_eq!(w.to_string(), "abAB");
        assert_eq!(Word::parse("aA").unwrap().to_string(), "1");
        assert_eq!(Word::parse("1").unwrap().len(), 0);
        assert_eq!(Word::parse("abx"), Err(WordError::BadCharacter('x')));
        assert_eq!(Word::parse("cd").unwrap().rank(), 4);
    }

    #[test]
    fn evaluation_examples() {
        let g = GroupTable::enumerate(GroupKind::SL2, 5).unwrap();
        let x = Word::parse("a").unwrap().with_rank(2);
        let s = Mat::from_rows([[0, 1], [-1, 0]], 5);
        let u = Mat::from_rows([[1, 1], [0, 1]], 5);
        assert_eq!(x.evaluate(&[s, u], &g).unwrap(), s);
        // commuting pair
        let u2 = u.mul(&u, 5);
        assert_eq!(Word::commutator().evaluate(&[u, u2], &g).unwrap(), Mat::IDENTITY);
        let sq = Word::parse("aa").unwrap();
        assert_eq!(sq.evaluate(&[s], &g).unwrap(), Mat::from_rows([[-1, 0], [0, -1]], 5));
        assert_eq!(Word::empty(2).evaluate(&[s, u], &g).unwrap(), Mat::IDENTITY);
        assert!(matches!(
            Word::commutator().evaluate(&[s], &g),
            Err(WordError::ArityMismatch { rank: 2, given: 1 })
        ));
    }

    #[test]
    fn convolution_examples() {
        let c = Word::commutator();
        let cc = c.convolve(&c);
        assert_eq!(cc.rank(), 4);
        assert_eq!(cc.len(), 8);
        assert_eq!(cc.to_string(), "abABcdCD");
        let e = Word::empty(1);
        let x = Word::parse("a").unwrap();
        assert_eq!(e.convolve(&x).letters(), &[2]);
        assert_eq!(x.convolve(&x).letters(), &[1, 2]);
        assert_eq!(cc.disjoint_blocks().len(), 2);
        assert_eq!(Word::parse("abAB").unwrap().disjoint_blocks().len(), 1);
        assert_eq!(Word::parse("aabc").unwrap().disjoint_blocks().len(), 3);
    }

    #[test]
    fn reduced_word_count() {
        // all reduced words of length 3 over rank 2 appear: 4·3·3 = 36
        let mut rng = lab_rng(3);
        let mut seen = HashSet::new();
        for _ in 0..20_000 {
            let w = sample_word(WordModel::Reduced, 2, 3, &mut rng);
            assert_eq!(w.len(), 3);
            seen.insert(w);
        }
        assert_eq!(seen.len(), 2 * 2 * 3 * 3);
    }

    #[test]
    fn nonreduced_short_words() {
        let mut rng = lab_rng(11);
        let n = 100_000;
        let mut counts: HashMap<Word, usize> = HashMap::new();
        let mut empty = 0;
        for _ in 0..n {
            *counts.entry(sample_word(WordModel::NonReduced, 2, 1, &mut rng)).or_default() += 1;
            if sample_word(WordModel::NonReduced, 2, 2, &mut rng).is_empty() {
                empty += 1;
            }
        }
        assert_eq!(counts.len(), 4);
        let expected = 0.25 * n as f64;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma);
        }
        assert!((empty as f64 - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn reduced_model_letter_frequencies() {
        // after letter `a`, the next letter is uniform over {a, b, B}
        let mut rng = lab_rng(5);
        let n = 100_000;
        let mut follow: HashMap<i32, usize> = HashMap::new();
        let mut firsts: HashMap<i32, usize> = HashMap::new();
        let mut total_follow = 0;
        for _ in 0..n {
            let w = sample_word(WordModel::Reduced, 2, 2, &mut rng);
            *firsts.entry(w.letters()[0]).or_default() += 1;
            if w.letters()[0] == 1 {
                *follow.entry(w.letters()[1]).or_default() += 1;
                total_follow += 1;
            }
        }
        assert_eq!(firsts.len(), 4);
        let sig = (n as f64 * 0.25 * 0.75).sqrt();
        for (_, c) in firsts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sig);
        }
        assert_eq!(follow.len(), 3);
        assert!(!follow.contains_key(&-1));
        let t = total_follow as f64;
        let sig = (t * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for (_, c) in follow {
            assert!((c as f64 - t / 3.0).abs() < 3.0 * sig);
        }
    }

    #[test]
    fn interval_model_lengths() {
        let mut rng = lab_rng(9);
        for _ in 0..500 {
            let w = sample_word(WordModel::Interval { c1: 0.5, c2: 1.5 }, 2, 10, &mut rng);
            assert!((5..=15).contains(&w.len()));
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let a = sample_word_seeded(WordModel::Reduced, 3, 20, 42);
        let b = sample_word_seeded(WordModel::Reduced, 3, 20, 42);
        assert_eq!(a, b);
    }

    fn raw_word(rank: usize, max_len: usize) -> impl Strategy<Value = Vec<i32>> {
        let r = rank as i32;
        prop::collection::vec((1..=r, any::<bool>()).prop_map(|(l, inv)| if inv { -l } else { l }), 0..max_len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reduce_is_idempotent_and_evaluation_invariant(raw in raw_word(2, 24), seed in any::<u64>()) {
            let g = GroupTable::enumerate(GroupKind::SL2, 5).unwrap();
            let w = Word::reduce(2, &raw).unwrap();
            prop_assert_eq!(Word::reduce(2, w.letters()).unwrap(), w.clone());
            prop_assert!(w.letters().windows(2).all(|p| p[0] != -p[1]));
            let mut rng = lab_rng(seed);
            let t = [g.element(rng.random_range(0..g.order())), g.element(rng.random_range(0..g.order()))];
            let unreduced = Word { rank: 2, letters: raw.clone() };
            prop_assert_eq!(unreduced.evaluate(&t, &g).unwrap(), w.evaluate(&t, &g).unwrap());
            prop_assert_eq!(is_trivial(&raw), w.is_empty());
        }

        #[test]
        fn convolution_evaluates_to_product(r1 in raw_word(2, 12), r2 in raw_word(3, 12), seed in any::<u64>()) {
            let g = GroupTable::enumerate(GroupKind::PGL2, 7).unwrap();
            let w1 = Word::reduce(2, &r1).unwrap();
            let w2 = Word::reduce(3, &r2).unwrap();
            let w = w1.convolve(&w2);
            prop_assert_eq!(w.len(), w1.len() + w2.len());
            let mut rng = lab_rng(seed);
            let t: Vec<Mat> = (0..5).map(|_| g.element(rng.random_range(0..g.order()))).collect();
            let lhs = w.evaluate(&t, &g).unwrap();
            let rhs = g.mul_mat(&w1.evaluate(&t[..2], &g).unwrap(), &w2.evaluate(&t[2..], &g).unwrap());
            prop_assert_eq!(lhs, rhs);
        }
    }
}
