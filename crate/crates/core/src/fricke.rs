//! Trace polynomials of two-generator words in SL2, the equations of
//! one-relator character varieties, and point counts over F_p.
//!
//! Coordinates are `x = tr A`, `y = tr B`, `z = tr AB`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cayley::slope;
use crate::ffield::PrimeField;
use crate::freeword::{sample_word, Word, WordModel};
use crate::matgroup::Mat;
use crate::rng::{lab_rng, shard_rng, RNG_ALGORITHM};

/// Default cap on evaluated points per prime (`499³` fits).
pub const DEFAULT_POINT_BUDGET: u128 = 125_000_000;
pub const ORACLE_PRIMES: [u64; 2] = [101, 103];
pub const ORACLE_PAIRS: usize = 1000;
pub const MAX_TRACE_WORD_LEN: usize = 64;
pub const MIN_DIM_POINTS: usize = 8;
pub const MIN_COMPONENT_WINDOW: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrickeError {
    #[error("trace polynomials need a word in at most two letters (got rank {0})")]
    ArityUnsupported(usize),
    #[error("word of length {0} exceeds the trace-polynomial limit of {MAX_TRACE_WORD_LEN}")]
    WordTooLong(usize),
    #[error("trace polynomial coefficient overflow")]
    Overflow,
    #[error("trace polynomial of `{word}` fails the numeric check at p = {p}: A = {a}, B = {b}, tr w(A,B) = {expected}, polynomial gives {got}")]
    OracleMismatch {
        word: String,
        p: u64,
        a: Mat,
        b: Mat,
        expected: u64,
        got: u64,
    },
    #[error("point count needs {needed} evaluations, above the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("need at least {need} usable primes, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid variety: {0}")]
    BadSpec(String),
}

/// Integer polynomial in `x, y, z`; zero coefficients are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TracePoly {
    terms: BTreeMap<[u32; 3], i128>,
}

impl TracePoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: i128) -> Self {
        let mut p = Self::zero();
        p.add_term([0, 0, 0], c);
        p
    }

    /// The coordinate `x` (0), `y` (1) or `z` (2).
    pub fn var(i: usize) -> Self {
        let mut e = [0; 3];
        e[i] = 1;
        let mut p = Self::zero();
        p.add_term(e, 1);
        p
    }

    pub fn from_terms(terms: &[([u32; 3], i128)]) -> Self {
        let mut p = Self::zero();
        for &(e, c) in terms {
            p.add_term(e, c);
        }
        p
    }

    fn add_term(&mut self, e: [u32; 3], c: i128) {
        if c == 0 {
            return;
        }
        let slot = self.terms.entry(e).or_insert(0);
        *slot += c;
        if *slot == 0 {
            self.terms.remove(&e);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; 3], &i128)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Highest exponent of variable `i`.
    pub fn degree_in(&self, i: usize) -> u32 {
        self.terms.keys().map(|e| e[i]).max().unwrap_or(0)
    }

    /// Number of variables actually used (1 + highest index present).
    pub fn vars_used(&self) -> usize {
        (0..3).rev().find(|&i| self.degree_in(i) > 0).map_or(0, |i| i + 1)
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, FrickeError> {
        let mut out = self.clone();
        for (&e, &c) in &other.terms {
            let slot = out.terms.entry(e).or_insert(0);
            *slot = slot.checked_add(c).ok_or(FrickeError::Overflow)?;
            if *slot == 0 {
                out.terms.remove(&e);
            }
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, FrickeError> {
        self.checked_add(&other.checked_scale(-1)?)
    }

    pub fn checked_scale(&self, k: i128) -> Result<Self, FrickeError> {
        let mut out = Self::zero();
        for (&e, &c) in &self.terms {
            out.add_term(e, c.checked_mul(k).ok_or(FrickeError::Overflow)?);
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, FrickeError> {
        let mut out = Self::zero();
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                let c = ca.checked_mul(cb).ok_or(FrickeError::Overflow)?;
                let slot = out.terms.entry(e).or_insert(0);
                *slot = slot.checked_add(c).ok_or(FrickeError::Overflow)?;
                if *slot == 0 {
                    out.terms.remove(&e);
                }
            }
        }
        Ok(out)
    }

    /// Multiplies by the coordinate `i` (cheap shift of exponents).
    fn times_var(&self, i: usize) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|(e, &c)| {
                    let mut e = *e;
                    e[i] += 1;
                    (e, c)
                })
                .collect(),
        }
    }

    pub fn eval_i128(&self, pt: [i128; 3]) -> Option<i128> {
        let mut acc: i128 = 0;
        for (e, &c) in &self.terms {
            let mut t = c;
            for (v, &k) in pt.iter().zip(e) {
                t = t.checked_mul(v.checked_pow(k)?)?;
            }
            acc = acc.checked_add(t)?;
        }
        Some(acc)
    }

    /// Value at `pt` modulo `p`; coordinates are residues in `0..p`.
    pub fn eval_mod(&self, p: u64, pt: [u64; 3]) -> u64 {
        let pm = p as u128;
        let mut acc: u128 = 0;
        for (e, &c) in &self.terms {
            let mut t = c.rem_euclid(p as i128) as u128;
            for (&v, &k) in pt.iter().zip(e) {
                for _ in 0..k {
                    t = t * v as u128 % pm;
                }
            }
            acc = (acc + t) % pm;
        }
        acc as u64
    }

    /// Coefficients modulo `p` as `(exponents, residue)`.
    fn reduced_mod(&self, p: u64) -> Vec<([u32; 3], u64)> {
        self.terms
            .iter()
            .map(|(&e, &c)| (e, c.rem_euclid(p as i128) as u64))
            .filter(|&(_, c)| c != 0)
            .collect()
    }
}

impl fmt::Display for TracePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut keys: Vec<&[u32; 3]> = self.terms.keys().collect();
        keys.sort_by(|a, b| {
            let da: u32 = a.iter().sum();
            let db: u32 = b.iter().sum();
            db.cmp(&da).then(b.cmp(a))
        });
        for (n, e) in keys.into_iter().enumerate() {
            let c = self.terms[e];
            let monomial: Vec<String> = ["x", "y", "z"]
                .iter()
                .zip(e)
                .filter(|(_, &k)| k > 0)
                .map(|(v, &k)| if k == 1 { v.to_string() } else { format!("{v}^{k}") })
                .collect();
            let sign = if c < 0 { "-" } else { "+" };
            if n == 0 {
                if c < 0 {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let a = c.unsigned_abs();
            if monomial.is_empty() {
                write!(f, "{a}")?;
            } else {
                if a != 1 {
                    write!(f, "{a}*")?;
                }
                f.write_str(&monomial.join("*"))?;
            }
        }
        Ok(())
    }
}

impl Serialize for TracePoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// A syllable `g^e` with `g` = 0 for `a`, 1 for `b`.
type Syllable = (u8, i32);

fn push_syllable(out: &mut Vec<Syllable>, (g, e): Syllable) {
    if e == 0 {
        return;
    }
    match out.last_mut() {
        Some(last) if last.0 == g => {
            last.1 += e;
            if last.1 == 0 {
                out.pop();
            }
        }
        _ => out.push((g, e)),
    }
}

/// Freely and cyclically reduced syllable form.
fn normalize(input: impl IntoIterator<Item = Syllable>) -> Vec<Syllable> {
    let mut out = Vec::new();
    for s in input {
        push_syllable(&mut out, s);
    }
    while out.len() >= 2 && out[0].0 == out[out.len() - 1].0 {
        let last = out.pop().expect("nonempty");
        out[0].1 += last.1;
        if out[0].1 == 0 {
            out.remove(0);
        }
    }
    out
}

/// Least rotation of the word or of its inverse; both have the same trace.
fn canonical(syl: &[Syllable]) -> Vec<Syllable> {
    let inv: Vec<Syllable> = syl.iter().rev().map(|&(g, e)| (g, -e)).collect();
    let mut best: Option<Vec<Syllable>> = None;
    for seq in [syl, &inv[..]] {
        for r in 0..seq.len() {
            let cand: Vec<Syllable> = seq[r..].iter().chain(&seq[..r]).copied().collect();
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        }
    }
    best.unwrap_or_default()
}

/// `T_n(t)` with `T_0 = 2`, `T_1 = t`, `T_n = t·T_{n−1} − T_{n−2}`, so
/// `tr(M^n) = T_n(tr M)` on SL2.
fn chebyshev(n: u32, var: usize) -> Result<TracePoly, FrickeError> {
    let mut prev = TracePoly::constant(2);
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = TracePoly::var(var);
    for _ in 1..n {
        let next = cur.times_var(var).checked_sub(&prev)?;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Memoised trace rewriting using `A + A⁻¹ = tr(A)·I`.
#[derive(Default)]
pub struct TraceEngine {
    memo: HashMap<Vec<Syllable>, TracePoly>,
}

impl TraceEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// `P_w` without the numeric check.
    pub fn trace_poly_unchecked(&mut self, w: &Word) -> Result<TracePoly, FrickeError> {
        if w.rank() > 2 {
            return Err(FrickeError::ArityUnsupported(w.rank()));
        }
        if w.len() > MAX_TRACE_WORD_LEN {
            return Err(FrickeError::WordTooLong(w.len()));
        }
        self.trace(w.letters().iter().map(|&s| ((s.unsigned_abs() - 1) as u8, s.signum())).collect())
    }

    fn trace(&mut self, syl: Vec<Syllable>) -> Result<TracePoly, FrickeError> {
        let syl = normalize(syl);
        match syl.len() {
            0 => return Ok(TracePoly::constant(2)),
            1 => return chebyshev(syl[0].1.unsigned_abs(), syl[0].0 as usize),
            _ => {}
        }
        let key = canonical(&syl);
        if let Some(p) = self.memo.get(&key) {
            return Ok(p.clone());
        }
        let (pivot, max_abs) = syl
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.1.unsigned_abs()))
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let result = if max_abs >= 2 {
            let rot: Vec<Syllable> = syl[pivot..].iter().chain(&syl[..pivot]).copied().collect();
            let (g, n) = rot[0];
            let rest = &rot[1..];
            let with = |e: i32| std::iter::once((g, e)).chain(rest.iter().copied()).collect::<Vec<_>>();
            let (near, far) = if n >= 2 { (n - 1, n - 2) } else { (n + 1, n + 2) };
            self.trace(with(near))?.times_var(g as usize).checked_sub(&self.trace(with(far))?)?
        } else if syl.iter().all(|s| s.1 == 1) || syl.iter().all(|s| s.1 == -1) {
            // (ab)^m or its inverse
            chebyshev(syl.len() as u32 / 2, 2)?
        } else {
            let i = syl.iter().position(|s| s.1 == -1).expect("mixed signs");
            let rot: Vec<Syllable> = syl[i..].iter().chain(&syl[..i]).copied().collect();
            let g = rot[0].0;
            let rest: Vec<Syllable> = rot[1..].to_vec();
            let flipped = std::iter::once((g, 1)).chain(rest.iter().copied()).collect();
            self.trace(rest)?.times_var(g as usize).checked_sub(&self.trace(flipped)?)?
        };
        self.memo.insert(key, result.clone());
        Ok(result)
    }

    /// `P_w`, validated against direct matrix evaluation.
    pub fn trace_poly(&mut self, w: &Word) -> Result<TracePoly, FrickeError> {
        let poly = self.trace_poly_unchecked(w)?;
        validate(w, &poly, ORACLE_PAIRS, 0x7ace)?;
        Ok(poly)
    }
}

/// `P_w` with `tr w(A,B) = P_w(tr A, tr B, tr AB)` on SL2; checked on
/// random pairs at two primes before being returned.
pub fn trace_poly(w: &Word) -> Result<TracePoly, FrickeError> {
    TraceEngine::new().trace_poly(w)
}

/// Uniform element of SL2(F_p): a random invertible matrix with its first
/// row divided by the determinant.
pub fn random_sl2<R: Rng + ?Sized>(p: u64, rng: &mut R) -> Mat {
    let f = PrimeField::new(p).expect("odd prime");
    loop {
        let e: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..p));
        let m = Mat(e.map(|v| v as u32));
        let det = m.det(p as u32) as u64;
        if det == 0 {
            continue;
        }
        let di = f.inv(f.from_u64(det)).expect("nonzero").value();
        return Mat([
            (e[0] * di % p) as u32,
            (e[1] * di % p) as u32,
            e[2] as u32,
            e[3] as u32,
        ]);
    }
}

/// Compares the polynomial with matrix traces on `pairs` random SL2 pairs
/// for each oracle prime.
pub fn validate(w: &Word, poly: &TracePoly, pairs: usize, seed: u64) -> Result<(), FrickeError> {
    for (i, &p) in ORACLE_PRIMES.iter().enumerate() {
        let mut rng = shard_rng(seed, i as u64);
        let pu = p as u32;
        for _ in 0..pairs {
            let a = random_sl2(p, &mut rng);
            let b = random_sl2(p, &mut rng);
            let expected = w.evaluate_matrices(&[a, b], pu).trace(pu) as u64;
            let pt = [a.trace(pu) as u64, b.trace(pu) as u64, a.mul(&b, pu).trace(pu) as u64];
            let got = poly.eval_mod(p, pt);
            if got != expected {
                return Err(FrickeError::OracleMismatch {
                    word: w.to_string(),
                    p,
                    a,
                    b,
                    expected,
                    got,
                });
            }
        }
    }
    Ok(())
}

/// An affine variety in up to three coordinates: common zeros of
/// `equations` where every `inequation` is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarietySpec {
    pub label: String,
    pub nvars: usize,
    pub equations: Vec<TracePoly>,
    pub inequations: Vec<TracePoly>,
    /// Strike points whose coordinates all lie in `{0, ±1, ±√2, (1±√5)/2}`.
    pub exclude_box: bool,
}

impl VarietySpec {
    pub fn diagnostic(label: &str, nvars: usize, equations: Vec<TracePoly>) -> Result<Self, FrickeError> {
        let spec = Self {
            label: label.to_string(),
            nvars,
            equations,
            inequations: Vec::new(),
            exclude_box: false,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), FrickeError> {
        if !(1..=3).contains(&self.nvars) {
            return Err(FrickeError::BadSpec(format!("{} variables", self.nvars)));
        }
        if let Some(p) = self
            .equations
            .iter()
            .chain(&self.inequations)
            .find(|p| p.vars_used() > self.nvars)
        {
            return Err(FrickeError::BadSpec(format!("{p} uses more than {} variables", self.nvars)));
        }
        Ok(())
    }
}

/// `{x² + 1 = 0}`
pub fn spec_x2_plus_1() -> VarietySpec {
    let x2 = TracePoly::from_terms(&[([2, 0, 0], 1)]);
    VarietySpec::diagnostic("x^2+1", 1, vec![x2.checked_add(&TracePoly::constant(1)).unwrap()]).unwrap()
}

/// `{x² − 2 = 0}`
pub fn spec_x2_minus_2() -> VarietySpec {
    VarietySpec::diagnostic("x^2-2", 1, vec![TracePoly::from_terms(&[([2, 0, 0], 1), ([0, 0, 0], -2)])]).unwrap()
}

/// `{(x² + 1)(x² − 2) = 0}`
pub fn spec_product() -> VarietySpec {
    let a = &spec_x2_plus_1().equations[0];
    let b = &spec_x2_minus_2().equations[0];
    VarietySpec::diagnostic("(x^2+1)(x^2-2)", 1, vec![a.checked_mul(b).unwrap()]).unwrap()
}

/// `{x² + y² = 0}`
pub fn spec_x2_plus_y2() -> VarietySpec {
    VarietySpec::diagnostic("x^2+y^2", 2, vec![TracePoly::from_terms(&[([2, 0, 0], 1), ([0, 2, 0], 1)])]).unwrap()
}

/// `Δ = P_{[a,b]} − 2`, from the validated engine.
pub fn discriminant(engine: &mut TraceEngine) -> Result<TracePoly, FrickeError> {
    engine.trace_poly(&Word::commutator())?.checked_sub(&TracePoly::constant(2))
}

/// Equations `P_w = 2, P_{aw} = x, P_{bw} = y` with `Δ ≠ 0`, minus the
/// exceptional coordinate box.
pub fn variety_spec(w: &Word) -> Result<VarietySpec, FrickeError> {
    if w.rank() > 2 {
        return Err(FrickeError::ArityUnsupported(w.rank()));
    }
    let w = w.clone().with_rank(2);
    let mut engine = TraceEngine::new();
    let a = Word::parse("a").expect("valid").with_rank(2);
    let b = Word::parse("b").expect("valid");
    let pw = engine.trace_poly(&w)?;
    let paw = engine.trace_poly(&a.concat(&w))?;
    let pbw = engine.trace_poly(&b.concat(&w))?;
    let equations: Vec<TracePoly> = [
        pw.checked_sub(&TracePoly::constant(2))?,
        paw.checked_sub(&TracePoly::var(0))?,
        pbw.checked_sub(&TracePoly::var(1))?,
    ]
    .into_iter()
    .filter(|p| !p.is_zero())
    .collect();
    Ok(VarietySpec {
        label: w.to_string(),
        nvars: 3,
        equations,
        inequations: vec![discriminant(&mut engine)?],
        exclude_box: true,
    })
}

/// Residues of `{0, ±1, ±√2, (1±√5)/2}` mod p (roots only when they exist).
pub fn excluded_residues(p: u64) -> Vec<u64> {
    let f = PrimeField::new(p).expect("odd prime");
    let mut v = vec![0, 1, p - 1];
    if let Some((r, s)) = f.sqrt(f.elt(2)) {
        v.extend([r.value(), s.value()]);
    }
    if let Some((r, s)) = f.sqrt(f.elt(5)) {
        let half = f.inv(f.elt(2)).expect("odd");
        for root in [r, s] {
            v.push(f.mul(f.add(f.one(), root), half).value());
        }
    }
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub p: u64,
    pub raw: u64,
    pub excluded: u64,
    pub net: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeries {
    pub label: String,
    pub rows: Vec<CountRow>,
}

impl CountSeries {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,raw,excluded,net\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.p, r.raw, r.excluded, r.net);
        }
        s
    }
}

/// A polynomial as univariate in `z` with coefficients in `x, y`.
struct ZSliced {
    /// `coeffs[k]` lists `(i, j, c)` for the monomials `c·x^i·y^j·z^k`.
    coeffs: Vec<Vec<(usize, usize, u64)>>,
}

impl ZSliced {
    fn new(poly: &TracePoly, p: u64) -> Self {
        let mut coeffs = vec![Vec::new(); poly.degree_in(2) as usize + 1];
        for (e, c) in poly.reduced_mod(p) {
            coeffs[e[2] as usize].push((e[0] as usize, e[1] as usize, c));
        }
        Self { coeffs }
    }

    fn specialise(&self, xp: &[u64], yp: &[u64], p: u64, out: &mut Vec<u64>) {
        out.clear();
        out.extend(self.coeffs.iter().map(|terms| {
            terms
                .iter()
                .fold(0u64, |acc, &(i, j, c)| (acc + c * xp[i] % p * yp[j]) % p)
        }));
    }
}

fn horner(coeffs: &[u64], z: u64, p: u64) -> u64 {
    coeffs.iter().rev().fold(0u64, |acc, &c| (acc * z + c) % p)
}

pub fn count_points(spec: &VarietySpec, p: u64) -> Result<CountRow, FrickeError> {
    count_points_with_budget(spec, p, DEFAULT_POINT_BUDGET)
}

/// Exhaustive count over `F_p^nvars`. For three coordinates the loop runs
/// over `(x, y)` in parallel and scans `z` with Horner evaluation.
pub fn count_points_with_budget(spec: &VarietySpec, p: u64, budget: u128) -> Result<CountRow, FrickeError> {
    spec.check()?;
    PrimeField::new(p).map_err(|e| FrickeError::BadSpec(e.to_string()))?;
    let needed = (p as u128).pow(spec.nvars as u32);
    if needed > budget {
        return Err(FrickeError::BudgetExceeded { needed, budget });
    }
    let mut in_box = vec![false; p as usize];
    if spec.exclude_box {
        for r in excluded_residues(p) {
            in_box[r as usize] = true;
        }
    }
    let max_deg = spec
        .equations
        .iter()
        .chain(&spec.inequations)
        .map(|q| q.degree_in(0).max(q.degree_in(1)))
        .max()
        .unwrap_or(0) as usize;
    let eqs: Vec<ZSliced> = spec.equations.iter().map(|q| ZSliced::new(q, p)).collect();
    let ineqs: Vec<ZSliced> = spec.inequations.iter().map(|q| ZSliced::new(q, p)).collect();
    let powers = |v: u64| -> Vec<u64> {
        let mut out = vec![1u64; max_deg + 1];
        for k in 1..=max_deg {
            out[k] = out[k - 1] * v % p;
        }
        out
    };
    let ys: Vec<u64> = if spec.nvars >= 2 { (0..p).collect() } else { vec![0] };
    let zs: Vec<u64> = if spec.nvars >= 3 { (0..p).collect() } else { vec![0] };
    let (raw, excluded) = (0..p)
        .into_par_iter()
        .map(|x| {
            let xp = powers(x);
            let mut raw = 0u64;
            let mut excluded = 0u64;
            let mut eq_c: Vec<Vec<u64>> = vec![Vec::new(); eqs.len()];
            let mut in_c: Vec<Vec<u64>> = vec![Vec::new(); ineqs.len()];
            for &y in &ys {
                let yp = powers(y);
                for (s, c) in eqs.iter().zip(eq_c.iter_mut()) {
                    s.specialise(&xp, &yp, p, c);
                }
                for (s, c) in ineqs.iter().zip(in_c.iter_mut()) {
                    s.specialise(&xp, &yp, p, c);
                }
                // an equation with all coefficients zero holds for every z
                if eq_c.iter().any(|c| c.len() == 1 && c[0] != 0) {
                    continue;
                }
                for &z in &zs {
                    if eq_c.iter().all(|c| horner(c, z, p) == 0) && in_c.iter().all(|c| horner(c, z, p) != 0) {
                        raw += 1;
                        let coords = [x, y, z];
                        if spec.exclude_box && coords[..spec.nvars].iter().all(|&v| in_box[v as usize]) {
                            excluded += 1;
                        }
                    }
                }
            }
            (raw, excluded)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(CountRow {
        p,
        raw,
        excluded,
        net: raw - excluded,
    })
}

/// Counts over every odd prime in `[lo, hi]`.
pub fn count_series(spec: &VarietySpec, lo: u64, hi: u64) -> Result<CountSeries, FrickeError> {
    let rows = crate::ffield::odd_primes_in(lo, hi)
        .into_iter()
        .map(|p| count_points(spec, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CountSeries {
        label: spec.label.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    /// `None` when every count is zero (empty variety).
    pub dimension: Option<u32>,
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Largest net count in the series, to show bounded series.
    pub max_net: u64,
}

/// Least-squares slope of `log(net)` against `log p` over the primes with
/// positive net count, rounded to the nearest integer `≥ 0`.
pub fn estimate_dim(series: &CountSeries) -> Result<DimEstimate, FrickeError> {
    let pts: Vec<(f64, f64)> = series
        .rows
        .iter()
        .filter(|r| r.net > 0)
        .map(|r| ((r.p as f64).ln(), (r.net as f64).ln()))
        .collect();
    let max_net = series.rows.iter().map(|r| r.net).max().unwrap_or(0);
    if pts.is_empty() && !series.rows.is_empty() {
        return Ok(DimEstimate {
            dimension: None,
            slope: f64::NAN,
            intercept: f64::NAN,
            points_used: 0,
            max_net,
        });
    }
    if pts.len() < MIN_DIM_POINTS {
        return Err(FrickeError::InsufficientData {
            have: pts.len(),
            need: MIN_DIM_POINTS,
        });
    }
    let s = slope(&pts);
    let n = pts.len() as f64;
    let intercept = pts.iter().map(|q| q.1).sum::<f64>() / n - s * pts.iter().map(|q| q.0).sum::<f64>() / n;
    Ok(DimEstimate {
        dimension: Some(s.round().max(0.0) as u32),
        slope: s,
        intercept,
        points_used: pts.len(),
        max_net,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub estimate: f64,
    pub dimension: u32,
    pub window: (u64, u64),
    pub primes_used: usize,
}

/// Mean of `net / p^dim` over the primes of the series inside `window`.
pub fn estimate_components(series: &CountSeries, dim: u32, window: (u64, u64)) -> Result<ComponentEstimate, FrickeError> {
    let vals: Vec<f64> = series
        .rows
        .iter()
        .filter(|r| r.p >= window.0 && r.p <= window.1)
        .map(|r| r.net as f64 / (r.p as f64).powi(dim as i32))
        .collect();
    if vals.len() < MIN_COMPONENT_WINDOW {
        return Err(FrickeError::InsufficientData {
            have: vals.len(),
            need: MIN_COMPONENT_WINDOW,
        });
    }
    Ok(ComponentEstimate {
        estimate: vals.iter().sum::<f64>() / vals.len() as f64,
        dimension: dim,
        window,
        primes_used: vals.len(),
    })
}

/// Named two-generator relators used by the experiments.
pub fn named_word(name: &str) -> Option<Word> {
    let w = |s: &str| Word::parse(s).expect("valid").with_rank(2);
    let commutator = |x: &Word, y: &Word| x.concat(y).concat(&x.inverse()).concat(&y.inverse());
    Some(match name {
        "figure-eight" => {
            let u = w("aBAb");
            u.concat(&w("a")).concat(&u.inverse()).concat(&w("B"))
        }
        "whitehead" => {
            let v = commutator(&w("b"), &w("a")).concat(&w("Bab"));
            commutator(&w("a"), &v)
        }
        "bs-3-2" => w("baaBAAA"),
        "sqrt2-pair" => w("aabAABB"),
        "ten-points" => w("bbbbbaBAbaaa"),
        _ => return None,
    })
}

pub const NAMED_WORDS: [&str; 5] = ["figure-eight", "whitehead", "bs-3-2", "sqrt2-pair", "ten-points"];

/// Parses either a named relator or word text.
pub fn resolve_word(text: &str) -> Result<Word, String> {
    match named_word(text) {
        Some(w) => Ok(w),
        None => Word::parse(text).map(|w| w.with_rank(2)).map_err(|e| e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecialPointReport {
    pub p: u64,
    pub two_is_square: bool,
    /// `(∓√2, −1, ±1/√2)` when `√2` exists.
    pub points: Vec<[u64; 3]>,
    pub points_satisfy: bool,
    pub net_count: u64,
}

/// Checks the two expected points of the `a²ba⁻²b⁻²` variety against the
/// generated equations, and the exhaustive net count.
pub fn special_point_check(p: u64) -> Result<SpecialPointReport, FrickeError> {
    let spec = variety_spec(&named_word("sqrt2-pair").expect("known"))?;
    let f = PrimeField::new(p).map_err(|e| FrickeError::BadSpec(e.to_string()))?;
    let mut points = Vec::new();
    if let Some((r, _)) = f.sqrt(f.elt(2)) {
        for s in [r, f.neg(r)] {
            let x = f.neg(s);
            let z = f.inv(s).expect("nonzero");
            points.push([x.value(), p - 1, z.value()]);
        }
    }
    let points_satisfy = points.iter().all(|&pt| {
        spec.equations.iter().all(|q| q.eval_mod(p, pt) == 0) && spec.inequations.iter().all(|q| q.eval_mod(p, pt) != 0)
    });
    Ok(SpecialPointReport {
        p,
        two_is_square: !points.is_empty(),
        points,
        points_satisfy,
        net_count: count_points(&spec, p)?.net,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyWord {
    pub word: String,
    pub length: usize,
    pub dimension: Option<u32>,
    pub slope: f64,
    pub net_counts: Vec<u64>,
    pub component_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyReport {
    pub samples: usize,
    pub lengths: (usize, usize),
    pub primes: (u64, u64),
    pub seed: u64,
    pub rng: String,
    pub words: Vec<SurveyWord>,
    pub fraction_dim0: f64,
    /// Net count value -> number of (word, prime) pairs.
    pub net_count_histogram: BTreeMap<u64, usize>,
}

/// Samples `samples` reduced words with lengths uniform in `lengths` and
/// runs the count/dimension pipeline on each relator.
pub fn random_relator_survey(
    samples: usize,
    lengths: (usize, usize),
    primes: (u64, u64),
    seed: u64,
) -> Result<SurveyReport, FrickeError> {
    let mut rng = lab_rng(seed);
    let words: Vec<Word> = (0..samples)
        .map(|_| {
            let len = rng.random_range(lengths.0..=lengths.1);
            sample_word(WordModel::Reduced, 2, len, &mut rng)
        })
        .collect();
    let mut out = Vec::with_capacity(samples);
    let mut hist = BTreeMap::new();
    for w in &words {
        let series = count_series(&variety_spec(w)?, primes.0, primes.1)?;
        for r in &series.rows {
            *hist.entry(r.net).or_insert(0) += 1;
        }
        let (dimension, s) = match estimate_dim(&series) {
            Ok(d) => (d.dimension, d.slope),
            Err(FrickeError::InsufficientData { .. }) => (Some(0), f64::NAN),
            Err(e) => return Err(e),
        };
        let component_estimate = estimate_components(&series, dimension.unwrap_or(0), primes)
            .ok()
            .map(|c| c.estimate);
        out.push(SurveyWord {
            word: w.to_string(),
            length: w.len(),
            dimension,
            slope: s,
            net_counts: series.rows.iter().map(|r| r.net).collect(),
            component_estimate,
        });
    }
    let dim0 = out.iter().filter(|s| s.dimension == Some(0)).count();
    Ok(SurveyReport {
        samples,
        lengths,
        primes,
        seed,
        rng: RNG_ALGORITHM.to_string(),
        fraction_dim0: if samples == 0 { 0.0 } else { dim0 as f64 / samples as f64 },
        words: out,
        net_count_histogram: hist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freeword::sample_raw;
    use proptest::prelude::*;
    use rand::Rng;

    fn tp(w: &str) -> TracePoly {
        trace_poly(&Word::parse(w).unwrap()).unwrap()
    }

    #[test]
    fn basic_trace_polynomials() {
        assert_eq!(tp("a"), TracePoly::var(0));
        assert_eq!(tp("b").to_string(), "y");
        assert_eq!(tp("ab"), TracePoly::var(2));
        assert_eq!(tp("aa").to_string(), "x^2 - 2");
        assert_eq!(tp("1"), TracePoly::constant(2));
        assert_eq!(tp("A"), TracePoly::var(0));
        assert_eq!(tp("aB").to_string(), "x*y - z");
    }

    #[test]
    fn commutator_polynomial() {
        let c = tp("abAB");
        assert_eq!(c.to_string(), "-x*y*z + x^2 + y^2 + z^2 - 2");
        assert_eq!(c.eval_i128([2, 2, 2]), Some(2));
    }

    #[test]
    fn arity_is_checked() {
        assert_eq!(trace_poly(&Word::parse("abc").unwrap()), Err(FrickeError::ArityUnsupported(3)));
    }

    #[test]
    fn oracle_catches_a_wrong_polynomial() {
        let w = Word::parse("abAB").unwrap();
        let wrong = TracePoly::from_terms(&[([2, 0, 0], 1), ([0, 2, 0], 1), ([0, 0, 2], 1), ([1, 1, 1], -4), ([0, 0, 0], -4)]);
        assert!(matches!(validate(&w, &wrong, 50, 1), Err(FrickeError::OracleMismatch { .. })));
    }

    #[test]
    fn random_words_pass_oracle() {
        let mut rng = lab_rng(17);
        for _ in 0..40 {
            let len = rng.random_range(0..=12);
            let w = Word::reduce(2, &sample_raw(2, len, &mut rng)).unwrap();
            let p = TraceEngine::new().trace_poly_unchecked(&w).unwrap();
            validate(&w, &p, 100, 3).unwrap();
            assert!(p.degree() as usize <= w.len().max(0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn trace_symmetries(raw in proptest::collection::vec(prop_oneof![Just(1i32), Just(-1), Just(2), Just(-2)], 0..12),
                            conj in proptest::collection::vec(prop_oneof![Just(1i32), Just(-1), Just(2), Just(-2)], 0..5)) {
            let w = Word::reduce(2, &raw).unwrap();
            let u = Word::reduce(2, &conj).unwrap();
            let mut e = TraceEngine::new();
            let pw = e.trace_poly_unchecked(&w).unwrap();
            prop_assert!(pw.degree() as usize <= w.len());
            prop_assert_eq!(&e.trace_poly_unchecked(&w.inverse()).unwrap(), &pw);
            let c = u.concat(&w).concat(&u.inverse());
            prop_assert_eq!(&TraceEngine::new().trace_poly_unchecked(&c).unwrap(), &pw);
        }
    }

    #[test]
    fn lang_weil_examples() {
        for p in crate::ffield::odd_primes_in(3, 100) {
            let one = count_points(&spec_x2_plus_1(), p).unwrap();
            assert_eq!(one.net, if p % 4 == 1 { 2 } else { 0 }, "p={p}");
            let two = count_points(&spec_x2_plus_y2(), p).unwrap();
            assert_eq!(two.net, if p % 4 == 1 { 2 * p - 1 } else { 1 }, "p={p}");
        }
    }

    #[test]
    fn excluded_box() {
        // mod 11: √2 missing, √5 = ±4 → (1±4)/2 = 8, 4
        assert_eq!(excluded_residues(11), vec![0, 1, 4, 8, 10]);
        // mod 7: √2 = ±3 (9 ≡ 2), √5 missing
        assert_eq!(excluded_residues(7), vec![0, 1, 3, 4, 6]);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = variety_spec(&Word::parse("ab").unwrap()).unwrap();
        assert!(matches!(
            count_points_with_budget(&spec, 101, 1000),
            Err(FrickeError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn spec_construction() {
        let empty = variety_spec(&Word::empty(2)).unwrap();
        assert!(empty.equations.is_empty());
        assert_eq!(empty.inequations[0].to_string(), "-x*y*z + x^2 + y^2 + z^2 - 4");
        let single = variety_spec(&Word::parse("a").unwrap()).unwrap();
        assert_eq!(single.nvars, 3);
        for name in NAMED_WORDS {
            variety_spec(&named_word(name).unwrap()).unwrap();
        }
    }

    #[test]
    fn named_words_text() {
        assert_eq!(named_word("figure-eight").unwrap().to_string(), "aBAbaBabAB");
        assert_eq!(named_word("bs-3-2").unwrap().to_string(), "baaBAAA");
    }

    #[test]
    fn principal_part_is_three_dimensional() {
        let spec = variety_spec(&Word::empty(2)).unwrap();
        let series = count_series(&spec, 5, 60).unwrap();
        assert_eq!(estimate_dim(&series).unwrap().dimension, Some(3));
    }

    #[test]
    fn estimator_errors() {
        let series = CountSeries {
            label: "t".into(),
            rows: (0..3).map(|i| CountRow { p: 5 + 2 * i, raw: 1, excluded: 0, net: 1 }).collect(),
        };
        assert!(matches!(estimate_dim(&series), Err(FrickeError::InsufficientData { have: 3, .. })));
        assert!(estimate_components(&series, 0, (0, 100)).is_err());
        let zero = CountSeries {
            label: "z".into(),
            rows: vec![CountRow { p: 5, raw: 0, excluded: 0, net: 0 }],
        };
        assert_eq!(estimate_dim(&zero).unwrap().dimension, None);
    }

    #[test]
    fn special_points() {
        let r7 = special_point_check(7).unwrap();
        assert!(r7.two_is_square && r7.points.len() == 2 && r7.points_satisfy);
        let r5 = special_point_check(5).unwrap();
        assert!(!r5.two_is_square);
        assert_eq!(r5.net_count, 0);
    }
}
