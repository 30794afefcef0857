//! Cayley graphs of generating tuples: Laplacian spectrum, diameter,
//! random-walk deviation, and return probabilities on free groups.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freeword::sample_raw;
use crate::matgroup::{FiniteGroup, Mat};
use crate::rng::{lab_rng, shard_rng, RNG_ALGORITHM};

/// Graphs at most this large are diagonalised densely.
pub const DENSE_LIMIT: usize = 400;
/// Dense fallback when Lanczos does not converge.
pub const DENSE_FALLBACK_LIMIT: usize = 4000;
pub const MAX_VERTICES: usize = 20_000;
const LANCZOS_SEGMENT: usize = 40;
const LANCZOS_SEGMENTS: usize = 6;
const LANCZOS_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CayleyError {
    #[error("generators do not generate the group (component of size {reached} out of {order})")]
    Disconnected { reached: usize, order: usize },
    #[error("group of order {0} exceeds the vertex limit")]
    TooLarge(usize),
    #[error("eigenvalue iteration did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("no generators given")]
    NoGenerators,
}

/// Cayley multigraph with edges `g — x g` and `g — x⁻¹ g` for each
/// generator `x`; every vertex has exactly `2r` out-neighbours.
#[derive(Debug, Clone)]
pub struct CayleyGraph {
    order: usize,
    identity: usize,
    generators: Vec<usize>,
    /// `adjacency[v*2r + 2i]` is `x_i v`, `adjacency[v*2r + 2i + 1]` is `x_i⁻¹ v`.
    adjacency: Vec<usize>,
    label: String,
}

impl CayleyGraph {
    pub fn new<G: FiniteGroup>(g: &G, generators: &[usize]) -> Result<Self, CayleyError> {
        if generators.is_empty() {
            return Err(CayleyError::NoGenerators);
        }
        let n = g.order();
        if n > MAX_VERTICES {
            return Err(CayleyError::TooLarge(n));
        }
        let inverses: Vec<usize> = generators.iter().map(|&x| g.inv(x)).collect();
        let adjacency = (0..n)
            .into_par_iter()
            .flat_map_iter(|v| {
                generators
                    .iter()
                    .zip(&inverses)
                    .flat_map(move |(&x, &xi)| [g.mul(x, v), g.mul(xi, v)])
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            order: n,
            identity: g.identity(),
            generators: generators.to_vec(),
            adjacency,
            label: g.label(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn degree(&self) -> usize {
        2 * self.generators.len()
    }

    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        let d = self.degree();
        &self.adjacency[v * d..(v + 1) * d]
    }

    /// BFS distances from the identity (`usize::MAX` if unreachable).
    pub fn distances(&self) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.order];
        let mut queue = VecDeque::new();
        dist[self.identity] = 0;
        queue.push_back(self.identity);
        while let Some(v) = queue.pop_front() {
            for &u in self.neighbors(v) {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    fn check_connected(&self) -> Result<Vec<usize>, CayleyError> {
        let dist = self.distances();
        let reached = dist.iter().filter(|&&d| d != usize::MAX).count();
        if reached != self.order {
            return Err(CayleyError::Disconnected {
                reached,
                order: self.order,
            });
        }
        Ok(dist)
    }

    pub fn is_connected(&self) -> bool {
        self.check_connected().is_ok()
    }

    /// `(Δf)(g) = 2r f(g) − Σ_i (f(x_i g) + f(x_i⁻¹ g))`.
    pub fn laplacian_apply(&self, f: &[f64]) -> Vec<f64> {
        let d = self.degree() as f64;
        let body = |v: usize| d * f[v] - self.neighbors(v).iter().map(|&u| f[u]).sum::<f64>();
        if self.order >= 4096 {
            (0..self.order).into_par_iter().map(body).collect()
        } else {
            (0..self.order).map(body).collect()
        }
    }

    /// One step of the walk `μ ↦ μ * ν` with `ν = (1/2r) Σ (δ_x + δ_{x⁻¹})`.
    pub fn walk_step(&self, mu: &[f64]) -> Vec<f64> {
        let d = self.degree() as f64;
        // the step multiset is closed under inversion, so pulling back
        // along neighbours equals pushing forward
        (0..self.order)
            .map(|v| self.neighbors(v).iter().map(|&u| mu[u]).sum::<f64>() / d)
            .collect()
    }

    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let n = self.order;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for v in 0..n {
            m[(v, v)] += self.degree() as f64;
            for &u in self.neighbors(v) {
                m[(v, u)] -= 1.0;
            }
        }
        m
    }
}

/// Full Laplacian spectrum, ascending. Dense; for small graphs only.
pub fn laplacian_spectrum(g: &CayleyGraph) -> Vec<f64> {
    let mut ev: Vec<f64> = g.dense_laplacian().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Dense,
    Lanczos,
    DenseFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda1 {
    pub value: f64,
    pub solver: Solver,
}

/// Smallest nonzero Laplacian eigenvalue.
pub fn lambda1(g: &CayleyGraph) -> Result<f64, CayleyError> {
    lambda1_with_solver(g).map(|l| l.value)
}

pub fn lambda1_with_solver(g: &CayleyGraph) -> Result<Lambda1, CayleyError> {
    g.check_connected()?;
    if g.order() <= DENSE_LIMIT {
        return Ok(Lambda1 {
            value: dense_lambda1(g),
            solver: Solver::Dense,
        });
    }
    match lanczos_lambda1(g, 0x5eed) {
        Ok(value) => Ok(Lambda1 {
            value,
            solver: Solver::Lanczos,
        }),
        Err(e) if g.order() <= DENSE_FALLBACK_LIMIT => {
            log::warn!("{e}; falling back to dense eigensolver");
            Ok(Lambda1 {
                value: dense_lambda1(g),
                solver: Solver::DenseFallback,
            })
        }
        Err(e) => Err(e),
    }
}

fn dense_lambda1(g: &CayleyGraph) -> f64 {
    if g.order() == 1 {
        return 0.0;
    }
    laplacian_spectrum(g)[1]
}

fn project_out_constants(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

/// Lanczos with full reorthogonalisation on the orthogonal complement of
/// the constants. Convergence is checked every `LANCZOS_SEGMENT` steps.
pub fn lanczos_lambda1(g: &CayleyGraph, seed: u64) -> Result<f64, CayleyError> {
    let n = g.order();
    let mut rng = lab_rng(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project_out_constants(&mut q);
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let scale = 2.0 * g.degree() as f64;
    let mut last_residual = f64::INFINITY;
    let max_steps = (LANCZOS_SEGMENT * LANCZOS_SEGMENTS).min(n - 1);
    for step in 0..max_steps {
        let qj = &basis[step];
        let mut w = g.laplacian_apply(qj);
        let a = dot(&w, qj);
        alpha.push(a);
        project_out_constants(&mut w);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            project_out_constants(&mut w);
        }
        let b = dot(&w, &w).sqrt();
        // breakdown: the Krylov space is invariant (few distinct eigenvalues)
        let breakdown = b < 1e-9 * scale;
        let boundary = (step + 1) % LANCZOS_SEGMENT == 0 || step + 1 == max_steps || breakdown;
        if boundary {
            let (theta, last_comp) = smallest_ritz(&alpha, &beta);
            last_residual = b * last_comp.abs();
            if last_residual < LANCZOS_TOL * theta.max(1e-3) || breakdown {
                return Ok(theta);
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    Err(CayleyError::NoConvergence(last_residual))
}

/// Smallest eigenvalue of the Lanczos tridiagonal and the last component
/// of its eigenvector.
fn smallest_ritz(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("nonempty");
    let v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
    (theta, v[m - 1])
}

/// Eccentricity of the identity, which by vertex-transitivity is the
/// diameter.
pub fn diameter(g: &CayleyGraph) -> Result<usize, CayleyError> {
    Ok(g.check_connected()?.into_iter().max().unwrap_or(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDiameterReport {
    pub order: usize,
    pub lambda1: f64,
    pub diameter: usize,
    /// `1/(8γ²)`
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `λ₁ ≥ 1/(8γ²)`.
pub fn check_gap_diameter(g: &CayleyGraph) -> Result<GapDiameterReport, CayleyError> {
    let l = lambda1(g)?;
    let d = diameter(g)?;
    let bound = if d == 0 { 0.0 } else { 1.0 / (8.0 * (d * d) as f64) };
    Ok(GapDiameterReport {
        order: g.order(),
        lambda1: l,
        diameter: d,
        bound,
        slack: l - bound,
        holds: l >= bound - 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkPoint {
    pub steps: usize,
    pub deviation: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `max_g |μ^{*ℓ}(g) − 1/|G||` from `δ_e` for `ℓ = 0..=l_max`, with the
/// bound `e^{−λ₁ℓ/(2r)}`.
pub fn walk_deviation_series(g: &CayleyGraph, l_max: usize) -> Result<Vec<WalkPoint>, CayleyError> {
    let lam = lambda1(g)?;
    let mut start = vec![0.0; g.order()];
    start[g.identity] = 1.0;
    Ok(walk_series_from(g, start, lam, l_max))
}

/// Same as [`walk_deviation_series`] from an arbitrary starting measure.
pub fn walk_series_from(g: &CayleyGraph, mut mu: Vec<f64>, lam: f64, l_max: usize) -> Vec<WalkPoint> {
    let u = 1.0 / g.order() as f64;
    let r = g.rank() as f64;
    let mut out = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        if l > 0 {
            mu = g.walk_step(&mu);
        }
        let deviation = mu.iter().map(|m| (m - u).abs()).fold(0.0, f64::max);
        let bound = (-lam * l as f64 / (2.0 * r)).exp();
        out.push(WalkPoint {
            steps: l,
            deviation,
            bound,
            holds: deviation <= bound + 1e-12,
        });
    }
    out
}

pub fn walk_deviation(g: &CayleyGraph, steps: usize) -> Result<WalkPoint, CayleyError> {
    Ok(*walk_deviation_series(g, steps)?.last().expect("nonempty"))
}

/// Exact probability that a uniformly random (nonreduced) word of length
/// `l` in `F_r` is trivial; the reduced length performs a walk on `0..`.
pub fn kesten_exact(r: usize, l: usize) -> f64 {
    let d = 2.0 * r as f64;
    let mut dist = vec![0.0; l + 2];
    dist[0] = 1.0;
    for _ in 0..l {
        let mut next = vec![0.0; l + 2];
        for (k, &m) in dist.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            if k == 0 {
                next[1] += m;
            } else {
                next[k - 1] += m / d;
                if k + 1 < next.len() {
                    next[k + 1] += m * (d - 1.0) / d;
                }
            }
        }
        dist = next;
    }
    dist[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KestenRow {
    pub length: usize,
    pub trivial: u64,
    pub empirical: f64,
    pub exact: f64,
    /// `(√(2r−1)/r)^ℓ`
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KestenReport {
    pub r: usize,
    pub trials: u64,
    pub seed: u64,
    pub rng: String,
    pub rows: Vec<KestenRow>,
    /// `log(√(2r−1)/r)`
    pub reference_rate: f64,
    /// Least-squares slope of `log P(ℓ)` on `ℓ` over all even `ℓ` with
    /// positive counts.
    pub plain_rate: f64,
    /// Slope of `log P(ℓ) + 1.5·log ℓ` on `ℓ` over even `ℓ ≥ corrected_from`,
    /// removing the polynomial prefactor of the return probability.
    pub corrected_rate: f64,
    pub corrected_from: usize,
}

pub const KESTEN_FIT_FROM: usize = 10;

/// Samples `trials` words of length `l_max`; each prefix of even length
/// `ℓ` is tested for triviality by stack reduction. Trials are split over
/// 64 shards with seeds `seed + shard`.
pub fn kesten_return(r: usize, l_max: usize, trials: u64, seed: u64) -> KestenReport {
    const SHARDS: u64 = 64;
    let hits = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let quota = trials / SHARDS + u64::from(shard < trials % SHARDS);
            let mut rng = shard_rng(seed, shard);
            let mut local = vec![0u64; l_max + 1];
            let mut stack: Vec<i32> = Vec::with_capacity(l_max);
            for _ in 0..quota {
                stack.clear();
                for (i, s) in sample_raw(r, l_max, &mut rng).into_iter().enumerate() {
                    if stack.last() == Some(&-s) {
                        stack.pop();
                    } else {
                        stack.push(s);
                    }
                    if stack.is_empty() {
                        local[i + 1] += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; l_max + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let base = (2.0 * r as f64 - 1.0).sqrt() / r as f64;
    let rows: Vec<KestenRow> = (1..=l_max)
        .map(|l| KestenRow {
            length: l,
            trivial: hits[l],
            empirical: hits[l] as f64 / trials as f64,
            exact: kesten_exact(r, l),
            reference: base.powi(l as i32),
        })
        .collect();
    let fit = |from: usize, correction: f64| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|row| row.length % 2 == 0 && row.length >= from && row.trivial > 0)
            .map(|row| {
                let l = row.length as f64;
                (l, row.empirical.ln() + correction * l.ln())
            })
            .collect();
        slope(&pts)
    };
    KestenReport {
        r,
        trials,
        seed,
        rng: RNG_ALGORITHM.to_string(),
        reference_rate: base.ln(),
        plain_rate: fit(2, 0.0),
        corrected_rate: fit(KESTEN_FIT_FROM, 1.5),
        corrected_from: KESTEN_FIT_FROM,
        rows,
    }
}

/// Ordinary least-squares slope; NaN with fewer than two points.
pub fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// FNV-1a over generator matrix entries, printed as 16 hex digits.
pub fn generators_hash(gens: &[Mat]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in gens {
        for e in m.0 {
            for b in e.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub p: u64,
    pub generators_hash: String,
    pub order: usize,
    pub diameter: usize,
    pub lambda1: f64,
    pub bound_slack: f64,
}

pub fn gap_rows_csv(rows: &[GapRow]) -> String {
    let mut s = String::from("p,generators_hash,order,diameter,lambda1,bound_slack\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.12},{:.12}",
            r.p, r.generators_hash, r.order, r.diameter, r.lambda1, r.bound_slack
        );
    }
    s
}
