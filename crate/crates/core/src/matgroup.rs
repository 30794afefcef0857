//! Enumerated 2×2 matrix groups over F_p, conjugacy classes and class
//! structure constants.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ffield::{pow_mod, PrimeField};

/// Default cap on the number of enumerated group elements.
pub const DEFAULT_ELEMENT_BUDGET: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("{kind} over F_{p} has {order} elements, above the budget of {budget}")]
    BudgetExceeded {
        kind: GroupKind,
        p: u64,
        order: u128,
        budget: usize,
    },
    #[error("group enumeration needs an odd prime, got {0}")]
    BadModulus(u64),
    #[error("matrix {0} is not an element of {1}")]
    NotInGroup(Mat, String),
    #[error("unknown group kind `{0}` (expected sl2, gl2 or pgl2)")]
    UnknownKind(String),
}

/// A 2×2 matrix with entries in `[0, p)`, stored row-major `[[a, b], [c, d]]`.
///
/// The modulus is not stored; every arithmetic method takes it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mat(pub [u32; 4]);

impl Mat {
    pub const IDENTITY: Mat = Mat([1, 0, 0, 1]);

    /// Builds a matrix from signed integer entries, reducing mod `p`.
    pub fn from_rows(rows: [[i64; 2]; 2], p: u64) -> Mat {
        let r = |v: i64| v.rem_euclid(p as i64) as u32;
        Mat([r(rows[0][0]), r(rows[0][1]), r(rows[1][0]), r(rows[1][1])])
    }

    pub fn rows(&self) -> [[u32; 2]; 2] {
        [[self.0[0], self.0[1]], [self.0[2], self.0[3]]]
    }

    #[inline]
    pub fn mul(&self, rhs: &Mat, p: u32) -> Mat {
        let p = p as u64;
        let [a, b, c, d] = self.0.map(u64::from);
        let [e, f, g, h] = rhs.0.map(u64::from);
        Mat([
            ((a * e + b * g) % p) as u32,
            ((a * f + b * h) % p) as u32,
            ((c * e + d * g) % p) as u32,
            ((c * f + d * h) % p) as u32,
        ])
    }

    pub fn det(&self, p: u32) -> u32 {
        let p = p as u64;
        let [a, b, c, d] = self.0.map(u64::from);
        ((a * d % p + p - b * c % p) % p) as u32
    }

    pub fn trace(&self, p: u32) -> u32 {
        (self.0[0] + self.0[3]) % p
    }

    /// Inverse via the adjugate; `None` when singular.
    pub fn inverse(&self, p: u32) -> Option<Mat> {
        let det = self.det(p);
        if det == 0 {
            return None;
        }
        let pi = p as u64;
        let di = pow_mod(det as u64, pi - 2, pi);
        let [a, b, c, d] = self.0.map(u64::from);
        let s = |v: u64| ((v % pi) * di % pi) as u32;
        Some(Mat([s(d), s(pi - b), s(pi - c), s(a)]))
    }

    pub fn pow(&self, mut e: u64, p: u32) -> Mat {
        let mut acc = Mat::IDENTITY;
        let mut base = *self;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base, p);
            }
            base = base.mul(&base, p);
            e >>= 1;
        }
        acc
    }

    /// Scales so the first nonzero entry (row-major) is 1.
    pub fn scalar_normalized(&self, p: u32) -> Mat {
        let lead = self.0.iter().copied().find(|&v| v != 0).unwrap_or(1);
        if lead == 1 {
            return *self;
        }
        let pi = p as u64;
        let s = pow_mod(lead as u64, pi - 2, pi);
        Mat(self.0.map(|v| (v as u64 * s % pi) as u32))
    }

    /// Packs the four residues (each below 2^16) into one key.
    pub fn key(&self) -> u64 {
        let [a, b, c, d] = self.0.map(u64::from);
        (a << 48) | (b << 32) | (c << 16) | d
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "[[{a},{b}],[{c},{d}]]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    SL2,
    GL2,
    PGL2,
}

impl GroupKind {
    /// Closed-form group order.
    pub fn order(self, p: u64) -> u128 {
        let p = p as u128;
        match self {
            GroupKind::SL2 | GroupKind::PGL2 => p * (p * p - 1),
            GroupKind::GL2 => (p * p - 1) * (p * p - p),
        }
    }

    /// Dimension of the underlying algebraic group.
    pub fn dimension(self) -> u32 {
        match self {
            GroupKind::SL2 | GroupKind::PGL2 => 3,
            GroupKind::GL2 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::SL2 => "SL2",
            GroupKind::GL2 => "GL2",
            GroupKind::PGL2 => "PGL2",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupKind {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sl2" => Ok(GroupKind::SL2),
            "gl2" => Ok(GroupKind::GL2),
            "pgl2" => Ok(GroupKind::PGL2),
            _ => Err(GroupError::UnknownKind(s.to_string())),
        }
    }
}

/// A finite group whose elements are the ordinals `0..order()`.
pub trait FiniteGroup: Sync {
    fn order(&self) -> usize;
    fn identity(&self) -> usize;
    fn mul(&self, a: usize, b: usize) -> usize;
    fn inv(&self, a: usize) -> usize;
    fn label(&self) -> String;
}

/// Z/nZ written multiplicatively; element `i` is the residue `i`.
#[derive(Debug, Clone, Copy)]
pub struct CyclicGroup {
    n: usize,
}

impl CyclicGroup {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "cyclic group needs n >= 1");
        Self { n }
    }
}

impl FiniteGroup for CyclicGroup {
    fn order(&self) -> usize {
        self.n
    }
    fn identity(&self) -> usize {
        0
    }
    fn mul(&self, a: usize, b: usize) -> usize {
        (a + b) % self.n
    }
    fn inv(&self, a: usize) -> usize {
        (self.n - a) % self.n
    }
    fn label(&self) -> String {
        format!("C{}", self.n)
    }
}

#[derive(Debug, Clone)]
enum Lookup {
    Dense(Vec<u32>),
    Hashed(HashMap<u64, u32>),
}

const DENSE_LOOKUP_MAX_P: u64 = 45;

/// All elements of SL2, GL2 or PGL2 over F_p in canonical (lexicographic)
/// order, with an element → ordinal index and precomputed inverses.
#[derive(Debug, Clone)]
pub struct GroupTable {
    kind: GroupKind,
    p: u32,
    elements: Vec<Mat>,
    inverses: Vec<u32>,
    lookup: Lookup,
    identity: usize,
}

impl GroupTable {
    pub fn enumerate(kind: GroupKind, p: u64) -> Result<Self, GroupError> {
        Self::enumerate_with_budget(kind, p, DEFAULT_ELEMENT_BUDGET)
    }

    pub fn enumerate_with_budget(
        kind: GroupKind,
        p: u64,
        budget: usize,
    ) -> Result<Self, GroupError> {
        PrimeField::new(p).map_err(|_| GroupError::BadModulus(p))?;
        let order = kind.order(p);
        if order > budget as u128 {
            return Err(GroupError::BudgetExceeded {
                kind,
                p,
                order,
                budget,
            });
        }
        let pu = p as u32;
        let mut elements = Vec::with_capacity(order as usize);
        for a in 0..pu {
            for b in 0..pu {
                for c in 0..pu {
                    for d in 0..pu {
                        let m = Mat([a, b, c, d]);
                        let det = m.det(pu);
                        let keep = match kind {
                            GroupKind::SL2 => det == 1,
                            GroupKind::GL2 => det != 0,
                            GroupKind::PGL2 => det != 0 && m.scalar_normalized(pu) == m,
                        };
                        if keep {
                            elements.push(m);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(elements.len() as u128, order);

        let lookup = if p <= DENSE_LOOKUP_MAX_P {
            let mut dense = vec![u32::MAX; (p * p * p * p) as usize];
            for (i, m) in elements.iter().enumerate() {
                dense[dense_slot(m, pu)] = i as u32;
            }
            Lookup::Dense(dense)
        } else {
            Lookup::Hashed(
                elements
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (m.key(), i as u32))
                    .collect(),
            )
        };
        let mut table = GroupTable {
            kind,
            p: pu,
            elements,
            inverses: Vec::new(),
            lookup,
            identity: 0,
        };
        table.identity = table.index_of(&Mat::IDENTITY).expect("identity present");
        table.inverses = table
            .elements
            .iter()
            .map(|m| {
                let inv = m.inverse(pu).expect("invertible");
                table.index_of(&inv).expect("closed under inverse") as u32
            })
            .collect();
        Ok(table)
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn elements(&self) -> &[Mat] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> Mat {
        self.elements[i]
    }

    /// Canonical representative of a matrix (scalar normalization for PGL2).
    pub fn canonical(&self, m: &Mat) -> Mat {
        match self.kind {
            GroupKind::PGL2 => m.scalar_normalized(self.p),
            _ => *m,
        }
    }

    /// Ordinal of a matrix, canonicalizing first. `None` if not in the group.
    pub fn index_of(&self, m: &Mat) -> Option<usize> {
        let m = self.canonical(m);
        if m.0.iter().any(|&v| v >= self.p) {
            return None;
        }
        let hit = match &self.lookup {
            Lookup::Dense(d) => d[dense_slot(&m, self.p)],
            Lookup::Hashed(h) => *h.get(&m.key())?,
        };
        (hit != u32::MAX).then_some(hit as usize)
    }

    /// Product of two group matrices, in canonical form.
    pub fn mul_mat(&self, a: &Mat, b: &Mat) -> Mat {
        self.canonical(&a.mul(b, self.p))
    }

    pub fn inverse_mat(&self, a: &Mat) -> Mat {
        self.canonical(&a.inverse(self.p).expect("group elements are invertible"))
    }

    pub fn identity_mat(&self) -> Mat {
        Mat::IDENTITY
    }

    /// Ordinals of the central elements (scalar matrices in the group).
    pub fn center(&self) -> Vec<usize> {
        (0..self.order())
            .filter(|&i| {
                let [a, b, c, d] = self.elements[i].0;
                b == 0 && c == 0 && a == d
            })
            .collect()
    }
}

#[inline]
fn dense_slot(m: &Mat, p: u32) -> usize {
    let p = p as usize;
    let [a, b, c, d] = m.0.map(|v| v as usize);
    ((a * p + b) * p + c) * p + d
}

impl FiniteGroup for GroupTable {
    fn order(&self) -> usize {
        self.elements.len()
    }
    fn identity(&self) -> usize {
        self.identity
    }
    fn mul(&self, a: usize, b: usize) -> usize {
        let m = self.mul_mat(&self.elements[a], &self.elements[b]);
        self.index_of(&m).expect("closed under multiplication")
    }
    fn inv(&self, a: usize) -> usize {
        self.inverses[a] as usize
    }
    fn label(&self) -> String {
        format!("{}(F_{})", self.kind, self.p)
    }
}

/// Conjugacy-class partition of a finite group.
///
/// Class 0 is always the identity class; the remaining classes are numbered
/// in order of their least element ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassData {
    pub class_of: Vec<u32>,
    pub reps: Vec<usize>,
    pub sizes: Vec<usize>,
    pub centralizer_sizes: Vec<usize>,
}

impl ClassData {
    pub fn k(&self) -> usize {
        self.reps.len()
    }

    pub fn group_order(&self) -> usize {
        self.class_of.len()
    }

    /// Classes of size one, i.e. central elements.
    pub fn central_classes(&self) -> Vec<usize> {
        (0..self.k()).filter(|&c| self.sizes[c] == 1).collect()
    }

    /// For each class, the class containing the inverses of its elements.
    pub fn inverse_classes<G: FiniteGroup>(&self, g: &G) -> Vec<usize> {
        self.reps
            .iter()
            .map(|&r| self.class_of[g.inv(r)] as usize)
            .collect()
    }
}

/// Partitions `g` into conjugacy classes by explicit orbit computation.
pub fn conjugacy_classes<G: FiniteGroup>(g: &G) -> ClassData {
    let n = g.order();
    let mut class_of = vec![u32::MAX; n];
    let mut reps = Vec::new();
    let mut sizes = Vec::new();
    let order_of_visit = std::iter::once(g.identity()).chain((0..n).filter(|&i| i != g.identity()));
    for x in order_of_visit {
        if class_of[x] != u32::MAX {
            continue;
        }
        let c = reps.len() as u32;
        let mut size = 0;
        for h in 0..n {
            let y = g.mul(g.mul(h, x), g.inv(h));
            if class_of[y] == u32::MAX {
                class_of[y] = c;
                size += 1;
            }
        }
        reps.push(x);
        sizes.push(size);
    }
    let centralizer_sizes = sizes.iter().map(|&s| n / s).collect();
    ClassData {
        class_of,
        reps,
        sizes,
        centralizer_sizes,
    }
}

/// Class multiplication coefficients:
/// `get(i, j, k) = #{(x, y) ∈ C_i × C_j : x·y = rep_k}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureConstants {
    k: usize,
    data: Vec<u64>,
}

impl StructureConstants {
    /// Exact integer counting, one pass over the group per target class.
    pub fn compute<G: FiniteGroup>(g: &G, cd: &ClassData) -> Self {
        let k = cd.k();
        let n = g.order();
        let per_target: Vec<Vec<u64>> = (0..k)
            .into_par_iter()
            .map(|t| {
                let target = cd.reps[t];
                let mut counts = vec![0u64; k * k];
                for x in 0..n {
                    let y = g.mul(g.inv(x), target);
                    counts[cd.class_of[x] as usize * k + cd.class_of[y] as usize] += 1;
                }
                counts
            })
            .collect();
        let mut data = vec![0u64; k * k * k];
        for (t, counts) in per_target.iter().enumerate() {
            for i in 0..k {
                for j in 0..k {
                    data[(i * k + j) * k + t] = counts[i * k + j];
                }
            }
        }
        Self { k, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> u64 {
        self.data[(i * self.k + j) * self.k + t]
    }
}

/// Whether the ordinals in `gens` generate all of `g` (BFS closure).
pub fn generates<G: FiniteGroup>(g: &G, gens: &[usize]) -> bool {
    closure_size(g, gens) == g.order()
}

/// Size of the subgroup generated by `gens`.
pub fn closure_size<G: FiniteGroup>(g: &G, gens: &[usize]) -> usize {
    let n = g.order();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    seen[g.identity()] = true;
    queue.push_back(g.identity());
    let mut count = 1;
    while let Some(x) = queue.pop_front() {
        for &s in gens {
            let y = g.mul(x, s);
            if !seen[y] {
                seen[y] = true;
                count += 1;
                queue.push_back(y);
            }
        }
    }
    count
}

/// Matrix-level generation test.
pub fn is_generating(tuple: &[Mat], g: &GroupTable) -> Result<bool, GroupError> {
    let idx = tuple
        .iter()
        .map(|m| {
            g.index_of(m)
                .ok_or_else(|| GroupError::NotInGroup(*m, g.label()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(generates(g, &idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_orders() {
        assert_eq!(GroupTable::enumerate(GroupKind::SL2, 3).unwrap().order(), 24);
        assert_eq!(GroupTable::enumerate(GroupKind::GL2, 3).unwrap().order(), 48);
        assert_eq!(GroupTable::enumerate(GroupKind::PGL2, 3).unwrap().order(), 24);
    }

    #[test]
    fn pgl2_matches_brute_force_cosets() {
        // brute force: GL2 matrices up to scalars
        for p in [3u64, 5] {
            let gl = GroupTable::enumerate(GroupKind::GL2, p).unwrap();
            let mut cosets = std::collections::HashSet::new();
            for m in gl.elements() {
                let coset: std::collections::BTreeSet<Mat> = (1..p as u32)
                    .map(|s| Mat(m.0.map(|v| v * s % p as u32)))
                    .collect();
                cosets.insert(coset);
            }
            let pgl = GroupTable::enumerate(GroupKind::PGL2, p).unwrap();
            assert_eq!(cosets.len(), pgl.order());
            assert_eq!(pgl.order(), gl.order() / (p as usize - 1));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = GroupTable::enumerate_with_budget(GroupKind::SL2, 11, 1000).unwrap_err();
        assert!(matches!(err, GroupError::BudgetExceeded { order: 1320, .. }));
        assert!(GroupTable::enumerate(GroupKind::SL2, 2).is_err());
        assert!(GroupTable::enumerate(GroupKind::SL2, 9).is_err());
    }

    #[test]
    fn closure_and_index_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (kind, p) in [(GroupKind::SL2, 7), (GroupKind::GL2, 5), (GroupKind::PGL2, 7), (GroupKind::SL2, 53)] {
            let g = GroupTable::enumerate(kind, p).unwrap();
            for _ in 0..100 {
                let a = rng.random_range(0..g.order());
                let b = rng.random_range(0..g.order());
                let ab = g.mul(a, b);
                assert_eq!(g.index_of(&g.element(ab)), Some(ab));
                assert_eq!(g.mul(a, g.inv(a)), g.identity());
                if kind == GroupKind::SL2 {
                    assert_eq!(g.element(ab).det(g.p()), 1);
                }
            }
        }
    }

    #[test]
    fn class_counts() {
        let g3 = GroupTable::enumerate(GroupKind::SL2, 3).unwrap();
        assert_eq!(conjugacy_classes(&g3).k(), 7);
        for p in [5u64, 7, 11, 13, 17, 19] {
            let g = GroupTable::enumerate(GroupKind::SL2, p).unwrap();
            let cd = conjugacy_classes(&g);
            assert_eq!(cd.k() as u64, p + 4, "p = {p}");
            assert_eq!(cd.sizes.iter().sum::<usize>(), g.order());
            for c in 0..cd.k() {
                assert_eq!(cd.sizes[c] * cd.centralizer_sizes[c], g.order());
            }
            assert_eq!(cd.sizes[0], 1);
            assert_eq!(cd.reps[0], g.identity());
            assert_eq!(cd.centralizer_sizes[0], g.order());
            assert_eq!(cd.central_classes().len(), 2);
        }
    }

    #[test]
    fn class_of_is_conjugation_invariant() {
        let g = GroupTable::enumerate(GroupKind::PGL2, 5).unwrap();
        let cd = conjugacy_classes(&g);
        for x in 0..g.order() {
            for h in (0..g.order()).step_by(7) {
                let y = g.mul(g.mul(h, x), g.inv(h));
                assert_eq!(cd.class_of[x], cd.class_of[y]);
            }
        }
    }

    #[test]
    fn structure_constants_count_products() {
        let g = GroupTable::enumerate(GroupKind::SL2, 3).unwrap();
        let cd = conjugacy_classes(&g);
        let sc = StructureConstants::compute(&g, &cd);
        let k = cd.k();
        // brute force over all pairs
        let mut brute = vec![0u64; k * k * k];
        for x in 0..g.order() {
            for y in 0..g.order() {
                let z = g.mul(x, y);
                if let Some(t) = cd.reps.iter().position(|&r| r == z) {
                    brute[(cd.class_of[x] as usize * k + cd.class_of[y] as usize) * k + t] += 1;
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                for t in 0..k {
                    assert_eq!(sc.get(i, j, t), brute[(i * k + j) * k + t]);
                }
            }
        }
    }

    #[test]
    fn generation() {
        let g5 = GroupTable::enumerate(GroupKind::SL2, 5).unwrap();
        let u = Mat::from_rows([[1, 1], [0, 1]], 5);
        let l = Mat::from_rows([[1, 0], [1, 1]], 5);
        assert!(is_generating(&[u, l], &g5).unwrap());
        assert!(!is_generating(&[Mat::IDENTITY], &g5).unwrap());
        let g7 = GroupTable::enumerate(GroupKind::SL2, 7).unwrap();
        let minus = Mat::from_rows([[-1, 0], [0, -1]], 7);
        assert!(!is_generating(&[minus], &g7).unwrap());
        assert_eq!(closure_size(&g7, &[g7.index_of(&minus).unwrap()]), 2);
        let bad = Mat::from_rows([[2, 0], [0, 2]], 7);
        assert!(is_generating(&[bad], &g7).is_err());
    }

    #[test]
    fn cyclic_group_laws() {
        let c = CyclicGroup::new(6);
        assert_eq!(c.mul(4, 5), 3);
        assert_eq!(c.inv(2), 4);
        assert_eq!(conjugacy_classes(&c).k(), 6);
        assert!(generates(&c, &[1]));
        assert!(!generates(&c, &[2]));
    }
}
