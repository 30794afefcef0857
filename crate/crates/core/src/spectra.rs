//! Numerical character tables, representation zeta functions and Fourier
//! coefficients of conjugation-invariant measures.
//!
//! The table is computed with the class-algebra method. In the basis
//! `C_i / sqrt|C_i|` of the centre of the group algebra, multiplication by
//! a class sum is a normal operator whose adjoint is multiplication by the
//! inverse class. A random complex combination `A` of these operators gives
//! a Hermitian `A + A*` whose eigenvectors are the central idempotents, up
//! to scaling, once all eigenvalues are simple. Coinciding eigenvalues are
//! split by diagonalizing a fresh random combination restricted to the
//! shared eigenspace.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freeword::Word;
use crate::matgroup::{ClassData, FiniteGroup, StructureConstants};
use crate::measures::Measure;
use crate::rng::lab_rng;

pub type C64 = Complex<f64>;

/// Tolerance for orthogonality and integrality checks.
pub const TABLE_TOL: f64 = 1e-8;

const MAX_ATTEMPTS: u64 = 8;
const MAX_REFINEMENTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("could not separate {remaining} shared eigenspaces after {attempts} randomizations")]
    DegenerateSpectrum { remaining: usize, attempts: u64 },
    #[error("computed table failed validation: {0}")]
    Inaccurate(String),
    #[error("measure is not constant on conjugacy classes")]
    NotInvariant,
    #[error("irreducible index {0} out of range")]
    NoSuchIrreducible(usize),
    #[error("character table has {k} classes, above the supported maximum of {max}")]
    TooManyClasses { k: usize, max: usize },
}

pub const MAX_CLASSES: usize = 200;

/// Complex character table. Row 0 is the trivial character; rows are
/// ordered by degree.
#[derive(Debug, Clone)]
pub struct CharTable {
    pub degrees: Vec<u64>,
    /// `values[rho][c]` is the character of irreducible `rho` on class `c`.
    pub values: Vec<Vec<C64>>,
    pub class_sizes: Vec<usize>,
    pub group_order: usize,
    pub tol: f64,
}

impl CharTable {
    pub fn k(&self) -> usize {
        self.degrees.len()
    }

    /// Largest deviation from row orthonormality.
    pub fn row_orthogonality_error(&self) -> f64 {
        let k = self.k();
        let n = self.group_order as f64;
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let ip: C64 = (0..k)
                    .map(|c| self.values[a][c] * self.values[b][c].conj() * self.class_sizes[c] as f64)
                    .sum::<C64>()
                    / n;
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Largest deviation from column orthogonality, relative to |C_G(g)|.
    pub fn column_orthogonality_error(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for c in 0..k {
            for d in 0..k {
                let s: C64 = (0..k).map(|r| self.values[r][c] * self.values[r][d].conj()).sum();
                let cent = (self.group_order / self.class_sizes[c]) as f64;
                let target = if c == d { cent } else { 0.0 };
                worst = worst.max((s - C64::new(target, 0.0)).norm() / cent);
            }
        }
        worst
    }

    pub fn export(&self) -> CharTableExport {
        let r12 = |x: f64| {
            let v = (x * 1e12).round() / 1e12;
            if v == 0.0 {
                0.0
            } else {
                v
            }
        };
        CharTableExport {
            group_order: self.group_order,
            degrees: self.degrees.clone(),
            class_sizes: self.class_sizes.clone(),
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|z| (r12(z.re), r12(z.im))).collect())
                .collect(),
            tol: self.tol,
        }
    }
}

/// Serializable form of a table; values are `(re, im)` rounded to 12 digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharTableExport {
    pub group_order: usize,
    pub degrees: Vec<u64>,
    pub class_sizes: Vec<usize>,
    pub values: Vec<Vec<(f64, f64)>>,
    pub tol: f64,
}

pub fn character_table<G: FiniteGroup>(cd: &ClassData, g: &G) -> Result<CharTable, SpectraError> {
    if cd.k() > MAX_CLASSES {
        return Err(SpectraError::TooManyClasses {
            k: cd.k(),
            max: MAX_CLASSES,
        });
    }
    let sc = StructureConstants::compute(g, cd);
    character_table_from_constants(cd, &sc)
}

pub fn character_table_from_constants(
    cd: &ClassData,
    sc: &StructureConstants,
) -> Result<CharTable, SpectraError> {
    let k = cd.k();
    if k > MAX_CLASSES {
        return Err(SpectraError::TooManyClasses { k, max: MAX_CLASSES });
    }
    let order = cd.group_order();
    let sizes: Vec<f64> = cd.sizes.iter().map(|&s| s as f64).collect();
    // class-sum multiplication operators in the orthonormal basis
    let ops: Vec<DMatrix<f64>> = (0..k)
        .map(|j| {
            DMatrix::from_fn(k, k, |t, i| {
                sc.get(j, i, t) as f64 * (sizes[t] / sizes[i]).sqrt()
            })
        })
        .collect();

    let mut remaining = k;
    for attempt in 0..MAX_ATTEMPTS {
        match separate(&ops, k, attempt) {
            Ok(vectors) => return assemble(cd, order, &vectors),
            Err(left) => remaining = left,
        }
    }
    Err(SpectraError::DegenerateSpectrum {
        remaining,
        attempts: MAX_ATTEMPTS,
    })
}

/// Splits C^k into one-dimensional common eigenspaces. Returns the
/// eigenvectors, or the number of unresolved clusters.
fn separate(ops: &[DMatrix<f64>], k: usize, attempt: u64) -> Result<Vec<Vec<C64>>, usize> {
    let mut rng = lab_rng(0x00C1_A55E ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut clusters: Vec<DMatrix<C64>> = vec![DMatrix::identity(k, k)];
    let mut done: Vec<Vec<C64>> = Vec::with_capacity(k);
    for _ in 0..MAX_REFINEMENTS {
        let mut next = Vec::new();
        for basis in clusters {
            let m = basis.ncols();
            if m == 1 {
                done.push(basis.column(0).iter().copied().collect());
                continue;
            }
            let mut a = DMatrix::<C64>::zeros(k, k);
            for op in ops {
                let c = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a += op.map(|v| C64::new(v, 0.0)) * c;
            }
            let h = &a + a.adjoint();
            let restricted = basis.adjoint() * &h * &basis;
            let restricted = (&restricted + restricted.adjoint()) * C64::new(0.5, 0.0);
            let eig = restricted.symmetric_eigen();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
            let scale = 1.0 + eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let gap = 1e-7 * scale;
            let rotated = &basis * &eig.eigenvectors;
            let mut group: Vec<usize> = Vec::new();
            let flush = |group: &mut Vec<usize>, next: &mut Vec<DMatrix<C64>>| {
                if !group.is_empty() {
                    let cols: Vec<_> = group.iter().map(|&c| rotated.column(c).into_owned()).collect();
                    next.push(DMatrix::from_columns(&cols));
                    group.clear();
                }
            };
            for (pos, &idx) in order.iter().enumerate() {
                if pos > 0 && eig.eigenvalues[idx] - eig.eigenvalues[order[pos - 1]] > gap {
                    flush(&mut group, &mut next);
                }
                group.push(idx);
            }
            flush(&mut group, &mut next);
        }
        clusters = next;
        if clusters.is_empty() {
            return Ok(done);
        }
    }
    if clusters.iter().all(|b| b.ncols() == 1) {
        done.extend(clusters.iter().map(|b| b.column(0).iter().copied().collect()));
        return Ok(done);
    }
    Err(clusters.iter().filter(|b| b.ncols() > 1).count())
}

fn assemble(cd: &ClassData, order: usize, vectors: &[Vec<C64>]) -> Result<CharTable, SpectraError> {
    let k = cd.k();
    let mut rows: Vec<(u64, Vec<C64>)> = Vec::with_capacity(k);
    for v in vectors {
        let v0 = v[0];
        if v0.norm() < 1e-12 {
            return Err(SpectraError::Inaccurate("eigenvector vanishes at the identity".into()));
        }
        // χ(g_i)/χ(1) = conj(v_i / v_0) / sqrt|C_i|
        let ratios: Vec<C64> = (0..k)
            .map(|i| (v[i] / v0).conj() / (cd.sizes[i] as f64).sqrt())
            .collect();
        let norm: f64 = (0..k).map(|i| cd.sizes[i] as f64 * ratios[i].norm_sqr()).sum();
        let degree = (order as f64 / norm).sqrt();
        let rounded = degree.round();
        if (degree - rounded).abs() > 1e-6 || rounded < 1.0 {
            return Err(SpectraError::Inaccurate(format!("degree {degree} is not integral")));
        }
        rows.push((rounded as u64, ratios.iter().map(|r| r * rounded).collect()));
    }
    rows.sort_by(|a, b| row_key(a).partial_cmp(&row_key(b)).unwrap_or(std::cmp::Ordering::Equal));
    let table = CharTable {
        degrees: rows.iter().map(|r| r.0).collect(),
        values: rows.into_iter().map(|r| r.1).collect(),
        class_sizes: cd.sizes.clone(),
        group_order: order,
        tol: TABLE_TOL,
    };
    let sum_sq: u64 = table.degrees.iter().map(|d| d * d).sum();
    if sum_sq as usize != order {
        return Err(SpectraError::Inaccurate(format!("sum of squared degrees {sum_sq} != {order}")));
    }
    if table.values[0].iter().any(|z| (z - C64::new(1.0, 0.0)).norm() > TABLE_TOL) {
        return Err(SpectraError::Inaccurate("no trivial character".into()));
    }
    let err = table.row_orthogonality_error();
    if err > TABLE_TOL {
        return Err(SpectraError::Inaccurate(format!("row orthogonality error {err:e}")));
    }
    Ok(table)
}

/// Sort key: trivial row first, then degree, then rounded values.
fn row_key(row: &(u64, Vec<C64>)) -> (u8, u64, Vec<(i64, i64)>) {
    let trivial = row.1.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-6);
    let vals = row
        .1
        .iter()
        .map(|z| ((z.re * 1e6).round() as i64, (z.im * 1e6).round() as i64))
        .collect();
    (u8::from(!trivial), row.0, vals)
}

/// Representation zeta function `Σ_ρ ρ(1)^(-s)`.
pub fn zeta(ct: &CharTable, s: f64) -> f64 {
    ct.degrees.iter().map(|&d| (d as f64).powf(-s)).sum()
}

/// Fourier coefficient `a_{μ,ρ} = Σ_g conj(ρ(g)) μ(g)` of a
/// conjugation-invariant probability measure.
pub fn fourier_coeff(mu: &Measure, ct: &CharTable, rho: usize) -> Result<C64, SpectraError> {
    if rho >= ct.k() {
        return Err(SpectraError::NoSuchIrreducible(rho));
    }
    let masses = mu.class_masses().map_err(|_| SpectraError::NotInvariant)?;
    Ok(fourier_coeff_of_class_masses(&masses, ct, rho))
}

/// Same as [`fourier_coeff`] for a vector of total class masses.
pub fn fourier_coeff_of_class_masses(masses: &[f64], ct: &CharTable, rho: usize) -> C64 {
    masses
        .iter()
        .zip(&ct.values[rho])
        .map(|(&m, chi)| chi.conj() * m)
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct CentralizerBoundReport {
    /// `min over (ρ, c) of sqrt|C_G(g_c)| - |ρ(g_c)|`.
    pub min_slack: f64,
    pub worst_irreducible: usize,
    pub worst_class: usize,
    pub holds: bool,
}

/// Checks `|ρ(g)| <= sqrt|C_G(g)|` over the whole table.
pub fn centralizer_bound_check(ct: &CharTable, cd: &ClassData) -> CentralizerBoundReport {
    let mut report = CentralizerBoundReport {
        min_slack: f64::INFINITY,
        worst_irreducible: 0,
        worst_class: 0,
        holds: true,
    };
    for (r, row) in ct.values.iter().enumerate() {
        for (c, chi) in row.iter().enumerate() {
            let slack = (cd.centralizer_sizes[c] as f64).sqrt() - chi.norm();
            if slack < report.min_slack {
                report.min_slack = slack;
                report.worst_irreducible = r;
                report.worst_class = c;
            }
        }
    }
    report.holds = report.min_slack >= -ct.tol;
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayEntry {
    pub irreducible: usize,
    pub degree: u64,
    pub coeff_abs: f64,
    /// `|a_{τ,ρ}| / ρ(1)`, the scalar by which the measure acts on ρ.
    pub ratio: f64,
    /// Coefficient below tolerance; decay reported as 1 by convention.
    pub vanishing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayProfile {
    pub word: Option<String>,
    pub entries: Vec<DecayEntry>,
    /// `min over ρ ≠ 1 with ρ(1) > 1 of 1 - log|a| / log ρ(1)`.
    pub epsilon_hat: Option<f64>,
    pub max_ratio: f64,
    pub tol: f64,
}

/// Per-irreducible spectral decay of a conjugation-invariant measure.
pub fn spectral_decay_profile(tau: &Measure, ct: &CharTable) -> Result<DecayProfile, SpectraError> {
    let masses = tau.class_masses().map_err(|_| SpectraError::NotInvariant)?;
    let tol = 1e-10;
    let mut entries = Vec::with_capacity(ct.k());
    let mut eps: Option<f64> = None;
    let mut max_ratio = 0.0f64;
    for rho in 1..ct.k() {
        let a = fourier_coeff_of_class_masses(&masses, ct, rho).norm();
        let d = ct.degrees[rho];
        let vanishing = a < tol;
        let ratio = a / d as f64;
        max_ratio = max_ratio.max(ratio);
        if d > 1 {
            let e = if vanishing { 1.0 } else { 1.0 - a.ln() / (d as f64).ln() };
            eps = Some(eps.map_or(e, |x: f64| x.min(e)));
        }
        entries.push(DecayEntry {
            irreducible: rho,
            degree: d,
            coeff_abs: a,
            ratio,
            vanishing,
        });
    }
    Ok(DecayProfile {
        word: tau.word().map(Word::to_string),
        entries,
        epsilon_hat: eps,
        max_ratio,
        tol,
    })
}

/// Closed-form degree multiset of the irreducible characters of SL2(F_p),
/// p odd, sorted ascending. Independent of the numerical table.
pub fn sl2_degree_multiset(p: u64) -> Vec<u64> {
    let mut d = vec![1, p];
    d.extend([(p + 1) / 2, (p + 1) / 2, (p - 1) / 2, (p - 1) / 2]);
    d.extend(std::iter::repeat_n(p + 1, ((p - 3) / 2) as usize));
    d.extend(std::iter::repeat_n(p - 1, ((p - 1) / 2) as usize));
    d.sort_unstable();
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgroup::{conjugacy_classes, CyclicGroup, GroupKind, GroupTable};

    fn table(kind: GroupKind, p: u64) -> (GroupTable, ClassData, CharTable) {
        let g = GroupTable::enumerate(kind, p).unwrap();
        let cd = conjugacy_classes(&g);
        let ct = character_table(&cd, &g).unwrap();
        (g, cd, ct)
    }

    #[test]
    fn sl2_f5_degrees() {
        let (_, _, ct) = table(GroupKind::SL2, 5);
        let mut d = ct.degrees.clone();
        d.sort_unstable();
        assert_eq!(d, vec![1, 2, 2, 3, 3, 4, 4, 5, 6]);
        assert_eq!(d, sl2_degree_multiset(5));
        assert_eq!(d.iter().map(|x| x * x).sum::<u64>(), 120);
    }

    #[test]
    fn degree_oracle_matches_for_many_primes() {
        for p in [3u64, 7, 11, 13] {
            let (g, _, ct) = table(GroupKind::SL2, p);
            let mut d = ct.degrees.clone();
            d.sort_unstable();
            assert_eq!(d, sl2_degree_multiset(p), "p = {p}");
            assert!(ct.row_orthogonality_error() < TABLE_TOL);
            assert!(ct.column_orthogonality_error() < TABLE_TOL);
            assert_eq!(ct.degrees.iter().map(|x| x * x).sum::<u64>() as usize, g.order());
        }
    }

    #[test]
    fn other_groups_are_consistent() {
        for (kind, p) in [(GroupKind::GL2, 3), (GroupKind::GL2, 5), (GroupKind::PGL2, 5), (GroupKind::PGL2, 7)] {
            let (g, cd, ct) = table(kind, p);
            assert_eq!(ct.k(), cd.k());
            assert!(ct.row_orthogonality_error() < TABLE_TOL, "{kind} {p}");
            assert!(ct.column_orthogonality_error() < TABLE_TOL, "{kind} {p}");
            assert_eq!(ct.degrees.iter().map(|x| x * x).sum::<u64>() as usize, g.order());
        }
    }

    #[test]
    fn trivial_and_cyclic_groups() {
        let c1 = CyclicGroup::new(1);
        let ct = character_table(&conjugacy_classes(&c1), &c1).unwrap();
        assert_eq!(ct.degrees, vec![1]);
        assert!((ct.values[0][0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        // C_6 has six linear characters, many with complex values
        let c6 = CyclicGroup::new(6);
        let ct = character_table(&conjugacy_classes(&c6), &c6).unwrap();
        assert_eq!(ct.degrees, vec![1; 6]);
        assert!(ct.column_orthogonality_error() < TABLE_TOL);
    }

    #[test]
    fn zeta_values() {
        let (_, cd, ct) = table(GroupKind::SL2, 5);
        assert!((zeta(&ct, 0.0) - cd.k() as f64).abs() < 1e-12);
        // from the degree multiset {1,2,2,3,3,4,4,5,6}
        let expected = 1.0 + 1.0 / 25.0 + 2.0 / 9.0 + 2.0 / 4.0 + 1.0 / 36.0 + 2.0 / 16.0;
        assert!((zeta(&ct, 2.0) - expected).abs() < 1e-12);
        assert!((zeta(&ct, 60.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centralizer_bound_holds() {
        for p in [5u64, 7] {
            let (_, cd, ct) = table(GroupKind::SL2, p);
            let rep = centralizer_bound_check(&ct, &cd);
            assert!(rep.holds, "p = {p}: {rep:?}");
            // identity and -I: |χ| = ρ(1) <= sqrt|G|
            for c in cd.central_classes() {
                for r in 0..ct.k() {
                    assert!((ct.values[r][c].norm() - ct.degrees[r] as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn export_rounds_values() {
        let (_, _, ct) = table(GroupKind::SL2, 3);
        let ex = ct.export();
        let json = serde_json::to_string(&ex).unwrap();
        let back: CharTableExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex);
        assert_eq!(ex.values.len(), 7);
    }

    #[test]
    fn degree_formula_oracle() {
        assert_eq!(sl2_degree_multiset(3), vec![1, 1, 1, 2, 2, 2, 3]);
        for p in [5u64, 7, 11, 13, 17, 19, 23] {
            let d = sl2_degree_multiset(p);
            assert_eq!(d.len() as u64, p + 4);
            assert_eq!(d.iter().map(|x| x * x).sum::<u64>(), p * (p * p - 1));
        }
    }
}
