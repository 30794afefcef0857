//! Word measures and other probability measures on an enumerated group.
//!
//! Exact measures carry integer counts over a common total (for a word
//! measure the total is `|G|^r`); everything downstream of the counts,
//! such as norms and mixing times, is computed in double precision.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freeword::Word;
use crate::matgroup::{
    conjugacy_classes, ClassData, FiniteGroup, GroupError, GroupKind, GroupTable, Mat,
    StructureConstants,
};
use crate::rng::{shard_rng, RNG_ALGORITHM};

/// Default cap on word-map evaluations for exhaustive enumeration.
pub const DEFAULT_EVAL_BUDGET: u128 = 400_000_000;

/// Fixed shard count for Monte-Carlo sampling; independent of thread count.
pub const MC_SHARDS: u64 = 64;

pub const MIXING_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("exhaustive enumeration needs {needed} evaluations, above the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("measures live on different groups ({0} vs {1})")]
    GroupMismatch(String, String),
    #[error("cannot combine exact and Monte-Carlo measures")]
    ProvenanceMismatch,
    #[error("exact counts overflow 128 bits")]
    Overflow,
    #[error("measure is not constant on conjugacy classes")]
    NotInvariant,
    #[error("matrix {0} is not in the group")]
    NotInGroup(Mat),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// An enumerated group with its conjugacy classes and class structure
/// constants, shared by every measure on it.
#[derive(Debug)]
pub struct GroupContext {
    pub group: GroupTable,
    pub classes: ClassData,
    pub constants: StructureConstants,
    inverse_mats: Vec<Mat>,
}

impl GroupContext {
    pub fn new(kind: GroupKind, p: u64) -> Result<Arc<Self>, GroupError> {
        Ok(Self::from_table(GroupTable::enumerate(kind, p)?))
    }

    pub fn from_table(group: GroupTable) -> Arc<Self> {
        let classes = conjugacy_classes(&group);
        let constants = StructureConstants::compute(&group, &classes);
        let inverse_mats = (0..group.order()).map(|i| group.element(group.inv(i))).collect();
        Arc::new(Self {
            group,
            classes,
            constants,
            inverse_mats,
        })
    }

    pub fn order(&self) -> usize {
        self.group.order()
    }

    pub fn label(&self) -> String {
        self.group.label()
    }

    pub fn k(&self) -> usize {
        self.classes.k()
    }

    /// Class index of a matrix.
    pub fn class_of_mat(&self, m: &Mat) -> Result<usize, MeasureError> {
        let i = self.group.index_of(m).ok_or(MeasureError::NotInGroup(*m))?;
        Ok(self.classes.class_of[i] as usize)
    }

    /// `p^((r-1)·dim G)`, the Lang–Weil normalisation of a fiber of an
    /// `r`-letter word map.
    pub fn lang_weil_scale(&self, rank: usize) -> f64 {
        (self.group.p() as f64).powi((rank as i32 - 1) * self.group.kind().dimension() as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indexing {
    Element,
    Class,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Masses {
    /// Nonnegative counts summing to `total`.
    Exact { counts: Vec<u128>, total: u128 },
    /// Probabilities.
    Float(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    MonteCarlo {
        samples: u64,
        seed: u64,
        rng: String,
    },
    /// Floating-point arithmetic on other measures (e.g. convolution powers).
    Computed,
}

/// A probability measure on a [`GroupContext`]. Class-indexed masses are
/// totals over each conjugacy class.
#[derive(Debug, Clone)]
pub struct Measure {
    ctx: Arc<GroupContext>,
    indexing: Indexing,
    masses: Masses,
    provenance: Provenance,
    word: Option<Word>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(Norm::L1),
            "2" => Ok(Norm::L2),
            "inf" | "infinity" | "oo" => Ok(Norm::Inf),
            _ => Err(format!("unknown norm `{s}` (expected 1, 2 or inf)")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::Inf => "inf",
        })
    }
}

impl Measure {
    pub fn uniform(ctx: &Arc<GroupContext>) -> Self {
        Self::exact_classes(
            ctx,
            ctx.classes.sizes.iter().map(|&s| s as u128).collect(),
            ctx.order() as u128,
            None,
        )
    }

    pub fn delta_identity(ctx: &Arc<GroupContext>) -> Self {
        let mut counts = vec![0u128; ctx.k()];
        counts[0] = 1;
        Self::exact_classes(ctx, counts, 1, None)
    }

    pub fn exact_classes(ctx: &Arc<GroupContext>, counts: Vec<u128>, total: u128, word: Option<Word>) -> Self {
        debug_assert_eq!(counts.iter().sum::<u128>(), total);
        Self {
            ctx: Arc::clone(ctx),
            indexing: Indexing::Class,
            masses: Masses::Exact { counts, total },
            provenance: Provenance::Exact,
            word,
        }
    }

    /// Element-indexed exact measure from per-element counts.
    pub fn exact_elements(ctx: &Arc<GroupContext>, counts: Vec<u128>) -> Self {
        assert_eq!(counts.len(), ctx.order());
        let total = counts.iter().sum();
        Self {
            ctx: Arc::clone(ctx),
            indexing: Indexing::Element,
            masses: Masses::Exact { counts, total },
            provenance: Provenance::Exact,
            word: None,
        }
    }

    /// Element-indexed measure from per-element probabilities.
    pub fn float_elements(ctx: &Arc<GroupContext>, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), ctx.order());
        Self {
            ctx: Arc::clone(ctx),
            indexing: Indexing::Element,
            masses: Masses::Float(probs),
            provenance: Provenance::Computed,
            word: None,
        }
    }

    pub fn context(&self) -> &Arc<GroupContext> {
        &self.ctx
    }

    pub fn indexing(&self) -> Indexing {
        self.indexing
    }

    pub fn masses(&self) -> &Masses {
        &self.masses
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn word(&self) -> Option<&Word> {
        self.word.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.masses, Masses::Exact { .. })
    }

    /// Exact counts and total, if this measure is exact.
    pub fn exact_counts(&self) -> Option<(&[u128], u128)> {
        match &self.masses {
            Masses::Exact { counts, total } => Some((counts, *total)),
            Masses::Float(_) => None,
        }
    }

    fn raw_masses_f64(&self) -> Vec<f64> {
        match &self.masses {
            Masses::Exact { counts, total } => counts.iter().map(|&c| c as f64 / *total as f64).collect(),
            Masses::Float(v) => v.clone(),
        }
    }

    /// Total mass of each conjugacy class. Fails for element-indexed
    /// measures that are not constant on classes.
    pub fn class_masses(&self) -> Result<Vec<f64>, MeasureError> {
        match self.indexing {
            Indexing::Class => Ok(self.raw_masses_f64()),
            Indexing::Element => {
                let m = self.to_class_indexed()?;
                Ok(m.raw_masses_f64())
            }
        }
    }

    /// Converts an element-indexed measure to class-indexed, checking it is
    /// constant on classes (exactly for exact counts).
    pub fn to_class_indexed(&self) -> Result<Measure, MeasureError> {
        if self.indexing == Indexing::Class {
            return Ok(self.clone());
        }
        let cd = &self.ctx.classes;
        let k = cd.k();
        let masses = match &self.masses {
            Masses::Exact { counts, total } => {
                for (x, &c) in counts.iter().enumerate() {
                    if c != counts[cd.reps[cd.class_of[x] as usize]] {
                        return Err(MeasureError::NotInvariant);
                    }
                }
                let mut out = vec![0u128; k];
                for (x, &c) in counts.iter().enumerate() {
                    out[cd.class_of[x] as usize] += c;
                }
                Masses::Exact { counts: out, total: *total }
            }
            Masses::Float(v) => {
                for (x, &m) in v.iter().enumerate() {
                    let r = v[cd.reps[cd.class_of[x] as usize]];
                    if (m - r).abs() > 1e-12 * r.abs().max(1e-300) && (m - r).abs() > 1e-15 {
                        return Err(MeasureError::NotInvariant);
                    }
                }
                let mut out = vec![0f64; k];
                for (x, &m) in v.iter().enumerate() {
                    out[cd.class_of[x] as usize] += m;
                }
                Masses::Float(out)
            }
        };
        Ok(Measure {
            ctx: Arc::clone(&self.ctx),
            indexing: Indexing::Class,
            masses,
            provenance: self.provenance.clone(),
            word: self.word.clone(),
        })
    }

    /// Expands to one mass per element.
    pub fn to_element_indexed(&self) -> Measure {
        if self.indexing == Indexing::Element {
            return self.clone();
        }
        let cd = &self.ctx.classes;
        let masses = match &self.masses {
            Masses::Exact { counts, total } => {
                // per-element count = class total / class size, exact for
                // conjugation-invariant measures; otherwise scale the total
                let divisible = counts.iter().zip(&cd.sizes).all(|(&c, &s)| c % s as u128 == 0);
                if divisible {
                    Masses::Exact {
                        counts: cd.class_of.iter().map(|&c| counts[c as usize] / cd.sizes[c as usize] as u128).collect(),
                        total: *total,
                    }
                } else {
                    Masses::Float(
                        cd.class_of
                            .iter()
                            .map(|&c| counts[c as usize] as f64 / (cd.sizes[c as usize] as f64 * *total as f64))
                            .collect(),
                    )
                }
            }
            Masses::Float(v) => Masses::Float(
                cd.class_of.iter().map(|&c| v[c as usize] / cd.sizes[c as usize] as f64).collect(),
            ),
        };
        Measure {
            ctx: Arc::clone(&self.ctx),
            indexing: Indexing::Element,
            masses,
            provenance: self.provenance.clone(),
            word: self.word.clone(),
        }
    }

    /// Floating-point copy (same indexing).
    pub fn to_float(&self) -> Measure {
        let mut m = self.clone();
        if let Masses::Exact { .. } = m.masses {
            m.masses = Masses::Float(self.raw_masses_f64());
        }
        m
    }

    /// Density `f = |G|·μ` evaluated per class (class-indexed) or per
    /// element, paired with the multiplicity of each entry.
    fn density_with_weights(&self) -> Vec<(f64, f64)> {
        let n = self.ctx.order() as f64;
        let raw = self.raw_masses_f64();
        match self.indexing {
            Indexing::Class => raw
                .iter()
                .zip(&self.ctx.classes.sizes)
                .map(|(&m, &s)| (n * m / s as f64, s as f64))
                .collect(),
            Indexing::Element => raw.iter().map(|&m| (n * m, 1.0)).collect(),
        }
    }

    /// Largest mass of a single element.
    pub fn max_element_mass(&self) -> f64 {
        let n = self.ctx.order() as f64;
        self.density_with_weights().iter().map(|(f, _)| f / n).fold(0.0, f64::max)
    }

    /// Mass of a single element.
    pub fn element_mass(&self, m: &Mat) -> Result<f64, MeasureError> {
        let i = self.ctx.group.index_of(m).ok_or(MeasureError::NotInGroup(*m))?;
        Ok(match self.indexing {
            Indexing::Element => self.raw_masses_f64()[i],
            Indexing::Class => {
                let c = self.ctx.classes.class_of[i] as usize;
                self.raw_masses_f64()[c] / self.ctx.classes.sizes[c] as f64
            }
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.raw_masses_f64().iter().sum()
    }

    pub fn export(&self) -> MeasureExport {
        let cd = &self.ctx.classes;
        let m = self.to_class_indexed().unwrap_or_else(|_| self.clone());
        let (counts, total) = match &m.masses {
            Masses::Exact { counts, total } => (Some(counts.clone()), Some(*total)),
            Masses::Float(_) => (None, None),
        };
        let raw = m.raw_masses_f64();
        let classes = if m.indexing == Indexing::Class {
            (0..cd.k())
                .map(|c| ClassMassExport {
                    class: c,
                    representative: self.ctx.group.element(cd.reps[c]).rows(),
                    size: cd.sizes[c],
                    count: counts.as_ref().map(|v| v[c].to_string()),
                    mass: raw[c],
                })
                .collect()
        } else {
            (0..self.ctx.order())
                .map(|x| ClassMassExport {
                    class: cd.class_of[x] as usize,
                    representative: self.ctx.group.element(x).rows(),
                    size: 1,
                    count: counts.as_ref().map(|v| v[x].to_string()),
                    mass: raw[x],
                })
                .collect()
        };
        MeasureExport {
            schema_version: crate::SCHEMA_VERSION,
            group: self.ctx.label(),
            order: self.ctx.order(),
            word: self.word.as_ref().map(Word::to_string),
            mode: m.indexing,
            total: total.map(|t| t.to_string()),
            classes,
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMassExport {
    pub class: usize,
    pub representative: [[u32; 2]; 2],
    pub size: usize,
    /// Exact count as a decimal string (128-bit values exceed JSON numbers).
    pub count: Option<String>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureExport {
    pub schema_version: u32,
    pub group: String,
    pub order: usize,
    pub word: Option<String>,
    pub mode: Indexing,
    pub total: Option<String>,
    pub classes: Vec<ClassMassExport>,
    pub provenance: Provenance,
}

/// Compiled word: letters renumbered onto `0..support` with inverse flags.
struct Compiled {
    letters: Vec<(usize, bool)>,
    arity: usize,
}

fn compile(w: &Word) -> Compiled {
    let support = w.support();
    let letters = w
        .letters()
        .iter()
        .map(|&s| {
            let pos = support.binary_search(&(s.unsigned_abs() as usize)).expect("in support");
            (pos, s < 0)
        })
        .collect();
    Compiled {
        letters,
        arity: support.len(),
    }
}

impl Compiled {
    #[inline]
    fn eval(&self, ctx: &GroupContext, tuple: &[usize]) -> usize {
        let p = ctx.group.p();
        let elems = ctx.group.elements();
        let mut acc = Mat::IDENTITY;
        for &(pos, inv) in &self.letters {
            let x = tuple[pos];
            let m = if inv { &ctx.inverse_mats[x] } else { &elems[x] };
            acc = acc.mul(m, p);
        }
        ctx.group.index_of(&acc).expect("closed under multiplication")
    }
}

fn checked_pow(base: u128, e: usize) -> Option<u128> {
    (0..e).try_fold(1u128, |acc, _| acc.checked_mul(base))
}

/// Iterates every tuple in `order^len` (odometer), calling `f` on each.
fn for_each_tuple(order: usize, prefix: &mut Vec<usize>, len: usize, f: &mut impl FnMut(&[usize])) {
    let start = prefix.len();
    prefix.resize(start + len, 0);
    loop {
        f(prefix);
        let mut i = prefix.len();
        loop {
            if i == start {
                prefix.truncate(start);
                return;
            }
            i -= 1;
            prefix[i] += 1;
            if prefix[i] < order {
                break;
            }
            prefix[i] = 0;
        }
    }
}

/// Class totals `#{tuples over the support letters : w(tuple) ∈ C}` for a
/// single block, with the first letter restricted to class
/// representatives and weighted by class size.
fn block_counts_accelerated(ctx: &GroupContext, w: &Word) -> Vec<u128> {
    let cw = compile(w);
    let k = ctx.k();
    let n = ctx.order();
    let cd = &ctx.classes;
    if cw.arity == 0 {
        let mut v = vec![0u128; k];
        v[0] = 1;
        return v;
    }
    let tasks: Vec<(usize, usize)> = if cw.arity >= 2 {
        (0..k).flat_map(|c| (0..n).map(move |x| (c, x))).collect()
    } else {
        (0..k).map(|c| (c, 0)).collect()
    };
    tasks
        .par_iter()
        .fold(
            || vec![0u128; k],
            |mut acc, &(c, x)| {
                let weight = cd.sizes[c] as u128;
                let mut local = vec![0u64; k];
                let mut prefix = if cw.arity >= 2 { vec![cd.reps[c], x] } else { vec![cd.reps[c]] };
                let rest = cw.arity - prefix.len();
                for_each_tuple(n, &mut prefix, rest, &mut |t| {
                    local[cd.class_of[cw.eval(ctx, t)] as usize] += 1;
                });
                for (a, l) in acc.iter_mut().zip(local) {
                    *a += weight * l as u128;
                }
                acc
            },
        )
        .reduce(|| vec![0u128; k], add_vectors)
}

/// Full loop over every tuple; kept as an independent check of the
/// class-representative shortcut.
fn block_counts_naive(ctx: &GroupContext, w: &Word) -> Vec<u128> {
    let cw = compile(w);
    let k = ctx.k();
    let n = ctx.order();
    if cw.arity == 0 {
        let mut v = vec![0u128; k];
        v[0] = 1;
        return v;
    }
    (0..n)
        .into_par_iter()
        .fold(
            || vec![0u128; k],
            |mut acc, x| {
                let mut prefix = vec![x];
                for_each_tuple(n, &mut prefix, cw.arity - 1, &mut |t| {
                    acc[ctx.classes.class_of[cw.eval(ctx, t)] as usize] += 1;
                });
                acc
            },
        )
        .reduce(|| vec![0u128; k], add_vectors)
}

fn add_vectors(mut a: Vec<u128>, b: Vec<u128>) -> Vec<u128> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

pub fn word_measure_exact(w: &Word, ctx: &Arc<GroupContext>) -> Result<Measure, MeasureError> {
    word_measure_exact_with_budget(w, ctx, DEFAULT_EVAL_BUDGET)
}

/// Exact word measure `τ_w(C) = #{tuples : w(tuple) ∈ C} / |G|^r`.
///
/// The word is split into letter-disjoint blocks whose measures are
/// convolved; each block is enumerated with the class-representative
/// shortcut, costing `k·|G|^(s-1)` evaluations for `s` distinct letters.
pub fn word_measure_exact_with_budget(
    w: &Word,
    ctx: &Arc<GroupContext>,
    budget: u128,
) -> Result<Measure, MeasureError> {
    let n = ctx.order() as u128;
    let blocks = w.disjoint_blocks();
    let mut needed: u128 = 0;
    for b in &blocks {
        let s = b.support().len();
        let cost = if s == 0 {
            1
        } else {
            checked_pow(n, s - 1)
                .and_then(|c| c.checked_mul(ctx.k() as u128))
                .unwrap_or(u128::MAX)
        };
        needed = needed.saturating_add(cost);
    }
    if needed > budget {
        return Err(MeasureError::BudgetExceeded { needed, budget });
    }
    let mut result: Option<Measure> = None;
    let mut used_letters = 0;
    for b in &blocks {
        let s = b.support().len();
        used_letters += s;
        let counts = block_counts_accelerated(ctx, b);
        let total = checked_pow(n, s).ok_or(MeasureError::Overflow)?;
        let m = Measure::exact_classes(ctx, counts, total, None);
        result = Some(match result {
            None => m,
            Some(acc) => convolve_measures(&acc, &m)?,
        });
    }
    let mut m = result.expect("at least one block");
    let free = w.rank().saturating_sub(used_letters);
    let scale = checked_pow(n, free).ok_or(MeasureError::Overflow)?;
    if let Masses::Exact { counts, total } = &mut m.masses {
        for c in counts.iter_mut() {
            *c = c.checked_mul(scale).ok_or(MeasureError::Overflow)?;
        }
        *total = total.checked_mul(scale).ok_or(MeasureError::Overflow)?;
    }
    m.word = Some(w.clone());
    Ok(m)
}

/// Exhaustive double (or higher) loop over all of `G^s` without any
/// shortcut. Used to cross-check [`word_measure_exact`].
pub fn word_measure_naive(w: &Word, ctx: &Arc<GroupContext>, budget: u128) -> Result<Measure, MeasureError> {
    let n = ctx.order() as u128;
    let s = w.support().len();
    let needed = checked_pow(n, s).unwrap_or(u128::MAX);
    if needed > budget {
        return Err(MeasureError::BudgetExceeded { needed, budget });
    }
    let counts = block_counts_naive(ctx, w);
    let scale = checked_pow(n, w.rank() - s).ok_or(MeasureError::Overflow)?;
    let counts = counts.into_iter().map(|c| c * scale).collect();
    let total = needed.checked_mul(scale).ok_or(MeasureError::Overflow)?;
    Ok(Measure::exact_classes(ctx, counts, total, Some(w.clone())))
}

/// Monte-Carlo estimate of a word measure from `samples` uniform tuples.
/// Sampling is split over a fixed number of shards seeded `seed + shard`,
/// so the output does not depend on the thread count.
pub fn word_measure_mc(w: &Word, ctx: &Arc<GroupContext>, samples: u64, seed: u64) -> Measure {
    let cw = compile(w);
    let k = ctx.k();
    let n = ctx.order();
    let counts = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let quota = samples / MC_SHARDS + u64::from(shard < samples % MC_SHARDS);
            let mut rng = shard_rng(seed, shard);
            let mut local = vec![0u128; k];
            let mut tuple = vec![0usize; cw.arity];
            for _ in 0..quota {
                for t in tuple.iter_mut() {
                    *t = rng.random_range(0..n);
                }
                local[ctx.classes.class_of[cw.eval(ctx, &tuple)] as usize] += 1;
            }
            local
        })
        .reduce(|| vec![0u128; k], add_vectors);
    Measure {
        ctx: Arc::clone(ctx),
        indexing: Indexing::Class,
        masses: Masses::Float(counts.iter().map(|&c| c as f64 / samples as f64).collect()),
        provenance: Provenance::MonteCarlo {
            samples,
            seed,
            rng: RNG_ALGORITHM.to_string(),
        },
        word: Some(w.clone()),
    }
}

/// `(μ*ν)(g) = Σ_h μ(h) ν(h⁻¹g)`. Exact inputs give exact output.
pub fn convolve_measures(mu: &Measure, nu: &Measure) -> Result<Measure, MeasureError> {
    if !Arc::ptr_eq(&mu.ctx, &nu.ctx) && mu.ctx.label() != nu.ctx.label() {
        return Err(MeasureError::GroupMismatch(mu.ctx.label(), nu.ctx.label()));
    }
    if mu.is_exact() != nu.is_exact() {
        return Err(MeasureError::ProvenanceMismatch);
    }
    let ctx = &mu.ctx;
    let provenance = match (&mu.provenance, &nu.provenance) {
        (Provenance::Exact, Provenance::Exact) => Provenance::Exact,
        _ => Provenance::Computed,
    };
    let word = match (&mu.word, &nu.word) {
        (Some(a), Some(b)) => Some(a.convolve(b)),
        _ => None,
    };
    let masses = match (mu.indexing, nu.indexing) {
        (Indexing::Class, Indexing::Class) => convolve_classes(ctx, &mu.masses, &nu.masses)?,
        _ => {
            let a = mu.to_element_indexed();
            let b = nu.to_element_indexed();
            if a.is_exact() != b.is_exact() {
                convolve_elements(ctx, &a.to_float().masses, &b.to_float().masses)?
            } else {
                convolve_elements(ctx, &a.masses, &b.masses)?
            }
        }
    };
    let indexing = if mu.indexing == Indexing::Class && nu.indexing == Indexing::Class {
        Indexing::Class
    } else {
        Indexing::Element
    };
    Ok(Measure {
        ctx: Arc::clone(ctx),
        indexing,
        masses,
        provenance,
        word,
    })
}

fn convolve_classes(ctx: &GroupContext, a: &Masses, b: &Masses) -> Result<Masses, MeasureError> {
    let cd = &ctx.classes;
    let sc = &ctx.constants;
    let k = cd.k();
    match (a, b) {
        (Masses::Exact { counts: ca, total: ta }, Masses::Exact { counts: cb, total: tb }) => {
            let per = |c: &[u128]| -> Result<Vec<u128>, MeasureError> {
                c.iter()
                    .zip(&cd.sizes)
                    .map(|(&v, &s)| {
                        if v % s as u128 == 0 {
                            Ok(v / s as u128)
                        } else {
                            Err(MeasureError::NotInvariant)
                        }
                    })
                    .collect()
            };
            let (na, nb) = (per(ca)?, per(cb)?);
            let mut out = vec![0u128; k];
            for (t, slot) in out.iter_mut().enumerate() {
                let mut s: u128 = 0;
                for i in 0..k {
                    if na[i] == 0 {
                        continue;
                    }
                    for j in 0..k {
                        let a_ijt = sc.get(i, j, t) as u128;
                        if a_ijt == 0 || nb[j] == 0 {
                            continue;
                        }
                        let term = na[i]
                            .checked_mul(nb[j])
                            .and_then(|x| x.checked_mul(a_ijt))
                            .ok_or(MeasureError::Overflow)?;
                        s = s.checked_add(term).ok_or(MeasureError::Overflow)?;
                    }
                }
                *slot = s.checked_mul(cd.sizes[t] as u128).ok_or(MeasureError::Overflow)?;
            }
            let total = ta.checked_mul(*tb).ok_or(MeasureError::Overflow)?;
            Ok(Masses::Exact { counts: out, total })
        }
        _ => {
            let fa = float_of(a);
            let fb = float_of(b);
            let pa: Vec<f64> = fa.iter().zip(&cd.sizes).map(|(m, &s)| m / s as f64).collect();
            let pb: Vec<f64> = fb.iter().zip(&cd.sizes).map(|(m, &s)| m / s as f64).collect();
            let out = (0..k)
                .map(|t| {
                    let mut s = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            s += pa[i] * pb[j] * sc.get(i, j, t) as f64;
                        }
                    }
                    s * cd.sizes[t] as f64
                })
                .collect();
            Ok(Masses::Float(out))
        }
    }
}

fn float_of(m: &Masses) -> Vec<f64> {
    match m {
        Masses::Exact { counts, total } => counts.iter().map(|&c| c as f64 / *total as f64).collect(),
        Masses::Float(v) => v.clone(),
    }
}

fn convolve_elements(ctx: &GroupContext, a: &Masses, b: &Masses) -> Result<Masses, MeasureError> {
    let g = &ctx.group;
    let n = g.order();
    match (a, b) {
        (Masses::Exact { counts: ca, total: ta }, Masses::Exact { counts: cb, total: tb }) => {
            let mut out = vec![0u128; n];
            for (h, &x) in ca.iter().enumerate() {
                if x == 0 {
                    continue;
                }
                for (y, &z) in cb.iter().enumerate() {
                    if z == 0 {
                        continue;
                    }
                    let term = x.checked_mul(z).ok_or(MeasureError::Overflow)?;
                    let slot = &mut out[g.mul(h, y)];
                    *slot = slot.checked_add(term).ok_or(MeasureError::Overflow)?;
                }
            }
            let total = ta.checked_mul(*tb).ok_or(MeasureError::Overflow)?;
            Ok(Masses::Exact { counts: out, total })
        }
        _ => {
            let fa = float_of(a);
            let fb = float_of(b);
            let mut out = vec![0f64; n];
            for (h, &x) in fa.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (y, &z) in fb.iter().enumerate() {
                    out[g.mul(h, y)] += x * z;
                }
            }
            Ok(Masses::Float(out))
        }
    }
}

/// `‖μ − μ_G‖_q = ‖f_μ − 1‖_q` with the normalised counting measure.
pub fn lq_distance(mu: &Measure, q: Norm) -> f64 {
    let n = mu.ctx.order() as f64;
    let dens = mu.density_with_weights();
    match q {
        Norm::L1 => dens.iter().map(|(f, w)| w * (f - 1.0).abs()).sum::<f64>() / n,
        Norm::L2 => (dens.iter().map(|(f, w)| w * (f - 1.0).powi(2)).sum::<f64>() / n).sqrt(),
        Norm::Inf => dens.iter().map(|(f, _)| (f - 1.0).abs()).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MixingOutcome {
    Mixed { t: u32, distance: f64 },
    NotReached { t_max: u32, last_distance: f64 },
}

impl MixingOutcome {
    pub fn steps(&self) -> Option<u32> {
        match self {
            MixingOutcome::Mixed { t, .. } => Some(*t),
            MixingOutcome::NotReached { .. } => None,
        }
    }
}

/// Least `t <= t_max` with `‖μ^{*t} − μ_G‖_q < threshold`.
pub fn mixing_time(mu: &Measure, q: Norm, t_max: u32, threshold: f64) -> MixingOutcome {
    let base = mu.to_float();
    let mut cur = base.clone();
    let mut last = f64::NAN;
    for t in 1..=t_max {
        last = lq_distance(&cur, q);
        if last < threshold {
            return MixingOutcome::Mixed { t, distance: last };
        }
        if t < t_max {
            cur = convolve_measures(&cur, &base).expect("same group, both float");
        }
    }
    MixingOutcome::NotReached {
        t_max,
        last_distance: last,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberCount {
    pub count: u128,
    /// `count / p^((r-1)·dim G)`.
    pub lang_weil_ratio: f64,
}

/// Exact `|w⁻¹(g)|` and its Lang–Weil ratio.
pub fn fiber_count(w: &Word, ctx: &Arc<GroupContext>, g: &Mat) -> Result<FiberCount, MeasureError> {
    let tau = word_measure_exact(w, ctx)?;
    fiber_count_from_measure(&tau, g)
}

pub fn fiber_count_from_measure(tau: &Measure, g: &Mat) -> Result<FiberCount, MeasureError> {
    let ctx = &tau.ctx;
    let c = ctx.class_of_mat(g)?;
    let counts = fiber_counts_by_class(tau).ok_or(MeasureError::ProvenanceMismatch)?;
    Ok(counts[c])
}

/// Exact fiber size over each class representative, for a class-indexed
/// exact word measure.
pub fn fiber_counts_by_class(tau: &Measure) -> Option<Vec<FiberCount>> {
    let ctx = &tau.ctx;
    let (counts, _) = tau.to_class_indexed().ok()?.exact_counts().map(|(c, t)| (c.to_vec(), t))?;
    let rank = tau.word.as_ref().map_or(1, Word::rank);
    let scale = ctx.lang_weil_scale(rank);
    Some(
        counts
            .iter()
            .zip(&ctx.classes.sizes)
            .map(|(&c, &s)| {
                let count = c / s as u128;
                FiberCount {
                    count,
                    lang_weil_ratio: count as f64 / scale,
                }
            })
            .collect(),
    )
}

/// A split regular semisimple element `diag(u, u⁻¹)` with `u` the least
/// primitive root mod p; a deterministic generic fiber.
pub fn generic_element(ctx: &GroupContext) -> Mat {
    let f = crate::ffield::PrimeField::new(ctx.group.p() as u64).expect("odd prime");
    let u = f.primitive_root();
    let ui = f.inv(u).expect("nonzero");
    ctx.group.canonical(&Mat([u.value() as u32, 0, 0, ui.value() as u32]))
}

/// `Pr[|C_G(w(g))| > |G|^δ]`.
pub fn centralizer_tail(tau: &Measure, delta: f64) -> Result<f64, MeasureError> {
    let ctx = &tau.ctx;
    let masses = tau.class_masses()?;
    let threshold = (ctx.order() as f64).powf(delta);
    Ok(masses
        .iter()
        .zip(&ctx.classes.centralizer_sizes)
        .filter(|(_, &c)| c as f64 > threshold)
        .map(|(m, _)| m)
        .sum())
}

/// `ε̂ = −log(max_g τ(g)) / log|G|`.
pub fn word_exponent(tau: &Measure) -> f64 {
    let n = tau.ctx.order() as f64;
    -tau.max_element_mass().ln() / n.ln()
}
