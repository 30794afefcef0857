//! Prime-field arithmetic.
//!
//! Every value is kept as its canonical residue in `[0, p)`. Products go
//! through 128-bit intermediates, so any odd prime below 2^63 is safe.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not an odd prime")]
    NotOddPrime(u64),
    #[error("division by zero in F_{0}")]
    DivisionByZero(u64),
}

/// An element of F_p stored as its canonical residue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FpElt(u64);

impl FpElt {
    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FpElt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The prime field F_p for an odd prime p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeField {
    p: u64,
}

impl PrimeField {
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if p == 2 || p >= 1 << 63 || !is_prime(p) {
            return Err(FieldError::NotOddPrime(p));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn zero(&self) -> FpElt {
        FpElt(0)
    }

    pub fn one(&self) -> FpElt {
        FpElt(1)
    }

    /// Reduces an arbitrary signed integer into the field.
    pub fn elt(&self, v: i64) -> FpElt {
        FpElt(v.rem_euclid(self.p as i64) as u64)
    }

    pub fn from_u64(&self, v: u64) -> FpElt {
        FpElt(v % self.p)
    }

    pub fn add(&self, a: FpElt, b: FpElt) -> FpElt {
        let s = a.0 + b.0;
        FpElt(if s >= self.p { s - self.p } else { s })
    }

    pub fn sub(&self, a: FpElt, b: FpElt) -> FpElt {
        FpElt(if a.0 >= b.0 { a.0 - b.0 } else { a.0 + self.p - b.0 })
    }

    pub fn neg(&self, a: FpElt) -> FpElt {
        FpElt(if a.0 == 0 { 0 } else { self.p - a.0 })
    }

    pub fn mul(&self, a: FpElt, b: FpElt) -> FpElt {
        FpElt(mul_mod(a.0, b.0, self.p))
    }

    pub fn pow(&self, a: FpElt, e: u64) -> FpElt {
        FpElt(pow_mod(a.0, e, self.p))
    }

    pub fn inv(&self, a: FpElt) -> Result<FpElt, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::DivisionByZero(self.p));
        }
        Ok(self.pow(a, self.p - 2))
    }

    pub fn div(&self, a: FpElt, b: FpElt) -> Result<FpElt, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    /// Euler's criterion: `a^((p-1)/2)`, which is 0, 1 or p-1.
    pub fn euler_criterion(&self, a: FpElt) -> FpElt {
        self.pow(a, (self.p - 1) / 2)
    }

    pub fn is_square(&self, a: FpElt) -> bool {
        self.euler_criterion(a).0 <= 1
    }

    /// Both square roots of `a`, smaller residue first, or `None` for a
    /// non-residue. For `a = 0` both entries are 0.
    ///
    /// Tonelli–Shanks with the least quadratic non-residue as the
    /// auxiliary element, so the result is fully deterministic.
    pub fn sqrt(&self, a: FpElt) -> Option<(FpElt, FpElt)> {
        if a.0 == 0 {
            return Some((FpElt(0), FpElt(0)));
        }
        if !self.is_square(a) {
            return None;
        }
        let p = self.p;
        let mut q = p - 1;
        let mut s = 0u32;
        while q % 2 == 0 {
            q /= 2;
            s += 1;
        }
        let mut z = 2u64;
        while pow_mod(z, (p - 1) / 2, p) != p - 1 {
            z += 1;
        }
        let mut m = s;
        let mut c = pow_mod(z, q, p);
        let mut t = pow_mod(a.0, q, p);
        let mut r = pow_mod(a.0, (q + 1) / 2, p);
        while t != 1 {
            // least i with t^(2^i) = 1
            let mut i = 0;
            let mut t2 = t;
            while t2 != 1 {
                t2 = mul_mod(t2, t2, p);
                i += 1;
            }
            let b = pow_mod(c, 1u64 << (m - i - 1), p);
            m = i;
            c = mul_mod(b, b, p);
            t = mul_mod(t, c, p);
            r = mul_mod(r, b, p);
        }
        let other = p - r;
        Some((FpElt(r.min(other)), FpElt(r.max(other))))
    }

    /// Iterates all residues `0..p`.
    pub fn elements(&self) -> impl Iterator<Item = FpElt> {
        (0..self.p).map(FpElt)
    }

    /// Least generator of the multiplicative group.
    pub fn primitive_root(&self) -> FpElt {
        let p = self.p;
        let factors = distinct_prime_factors(p - 1);
        (2..p)
            .find(|&g| factors.iter().all(|&q| pow_mod(g, (p - 1) / q, p) != 1))
            .map(FpElt)
            .unwrap_or(FpElt(1))
    }
}

pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller–Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &b in &BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Odd primes in the closed interval `[lo, hi]`, ascending.
pub fn odd_primes_in(lo: u64, hi: u64) -> Vec<u64> {
    (lo.max(3)..=hi).filter(|&n| is_prime(n)).collect()
}

fn distinct_prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut f = 2;
    while f * f <= n {
        if n % f == 0 {
            out.push(f);
            while n % f == 0 {
                n /= f;
            }
        }
        f += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}
