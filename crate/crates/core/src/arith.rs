//! Exact matrix arithmetic over `Q`, `Z/mZ` and truncated `Z_p`.
//!
//! Nothing in this module touches floating point. Rational matrices hold
//! arbitrary-precision entries; residue matrices hold reduced `u64` residues
//! and multiply through 128-bit intermediates, so every congruence is exact.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArithError {
    #[error("denominator {denominator} is not invertible modulo {modulus}")]
    NonInvertibleDenominator { denominator: String, modulus: u64 },
    #[error("matrix is singular modulo {modulus} (determinant {det})")]
    SingularMatrix { modulus: u64, det: String },
    #[error("rational matrix is singular")]
    SingularRational,
    #[error("expected {expected} entries, got {got}")]
    BadShape { expected: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("bad modulus {0}")]
    BadModulus(u64),
    #[error("zero denominator")]
    ZeroDenominator,
}

// ---------------------------------------------------------------------------
// scalar helpers

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    if m <= 1 << 32 {
        (a * b) % m
    } else {
        ((a as u128 * b as u128) % m as u128) as u64
    }
}

#[inline]
pub fn add_mod(a: u64, b: u64, m: u64) -> u64 {
    let s = a + b;
    if s >= m {
        s - m
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, m: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + m - b
    }
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `m`, if `gcd(a, m) = 1`.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (mut old_r, mut r) = (a as i128 % m as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

/// p-adic valuation of `x` as an element of `Z/p^cap`, saturated at `cap`.
#[inline]
pub fn valuation(mut x: u64, p: u64, cap: u32) -> u32 {
    if x == 0 {
        return cap;
    }
    let mut v = 0;
    while v < cap && x % p == 0 {
        x /= p;
        v += 1;
    }
    v
}

/// `p^k`, or `None` on overflow.
pub fn checked_pow(p: u64, k: u32) -> Option<u64> {
    let mut acc: u64 = 1;
    for _ in 0..k {
        acc = acc.checked_mul(p)?;
    }
    Some(acc)
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// If `m = p^k` with `p` prime and `k >= 1`, returns `(p, k)`.
pub fn prime_power(m: u64) -> Option<(u64, u32)> {
    if m < 2 {
        return None;
    }
    let mut p = 2;
    while p * p <= m && m % p != 0 {
        p += 1;
    }
    if m % p != 0 {
        p = m;
    }
    let mut k = 0;
    let mut r = m;
    while r % p == 0 {
        r /= p;
        k += 1;
    }
    (r == 1).then_some((p, k))
}

fn prime_factors_big(n: &BigUint) -> Vec<u64> {
    let mut out = Vec::new();
    let mut r = n.clone();
    let mut d = 2u64;
    while BigUint::from(d) * BigUint::from(d) <= r {
        if (&r % d).is_zero() {
            out.push(d);
            while (&r % d).is_zero() {
                r /= d;
            }
        }
        d += 1;
    }
    if r > BigUint::one() {
        out.push(r.to_u64().expect("denominator prime factor exceeds u64"));
    }
    out
}

fn big_to_residue(x: &BigInt, m: u64) -> u64 {
    let r = x.mod_floor(&BigInt::from(m));
    r.to_u64().expect("reduced residue fits u64")
}

/// Fraction-free Gaussian elimination; returns the exact determinant.
pub fn bareiss_det(mut a: Vec<Vec<BigInt>>) -> BigInt {
    let n = a.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    sign * a[n - 1][n - 1].clone()
}

// ---------------------------------------------------------------------------
// rational matrices

/// Square matrix over `Q`; houses elements of `GL_n(Z[1/q0])`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RationalMatrix {
    n: usize,
    entries: Vec<BigRational>,
}

impl RationalMatrix {
    pub fn new(n: usize, entries: Vec<BigRational>) -> Result<Self, ArithError> {
        if entries.len() != n * n {
            return Err(ArithError::BadShape {
                expected: n * n,
                got: entries.len(),
            });
        }
        Ok(RationalMatrix { n, entries })
    }

    /// Integer rows divided by a common denominator.
    pub fn from_rows(rows: &[Vec<i64>], denominator: i64) -> Result<Self, ArithError> {
        if denominator == 0 {
            return Err(ArithError::ZeroDenominator);
        }
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(ArithError::BadShape {
                    expected: n,
                    got: row.len(),
                });
            }
            for &x in row {
                entries.push(BigRational::new(BigInt::from(x), BigInt::from(denominator)));
            }
        }
        Ok(RationalMatrix { n, entries })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![BigRational::zero(); n * n];
        for i in 0..n {
            entries[i * n + i] = BigRational::one();
        }
        RationalMatrix { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[BigRational] {
        &self.entries
    }

    pub fn is_identity(&self) -> bool {
        *self == RationalMatrix::identity(self.n)
    }

    pub fn mul(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut entries = vec![BigRational::zero(); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = &self.entries[i * n + k];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let b = &other.entries[k * n + j];
                    if !b.is_zero() {
                        entries[i * n + j] += a * b;
                    }
                }
            }
        }
        RationalMatrix { n, entries }
    }

    fn common_denominator(&self) -> BigInt {
        self.entries
            .iter()
            .fold(BigInt::one(), |acc, e| acc.lcm(e.denom()))
    }

    pub fn det(&self) -> BigRational {
        let d = self.common_denominator();
        let n = self.n;
        let rows: Vec<Vec<BigInt>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (self.get(i, j) * BigRational::from(d.clone())).to_integer())
                    .collect()
            })
            .collect();
        let scaled = bareiss_det(rows);
        BigRational::new(scaled, num_traits::pow(d, n))
    }

    /// Gauss-Jordan inverse over `Q`.
    pub fn inverse(&self) -> Result<RationalMatrix, ArithError> {
        let n = self.n;
        let mut a: Vec<Vec<BigRational>> = (0..n)
            .map(|i| self.entries[i * n..(i + 1) * n].to_vec())
            .collect();
        let mut inv: Vec<Vec<BigRational>> = RationalMatrix::identity(n)
            .entries
            .chunks(n)
            .map(|r| r.to_vec())
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .find(|&r| !a[r][col].is_zero())
                .ok_or(ArithError::SingularRational)?;
            a.swap(col, piv);
            inv.swap(col, piv);
            let pinv = a[col][col].recip();
            for j in 0..n {
                a[col][j] = &a[col][j] * &pinv;
                inv[col][j] = &inv[col][j] * &pinv;
            }
            for r in 0..n {
                if r != col && !a[r][col].is_zero() {
                    let f = a[r][col].clone();
                    for j in 0..n {
                        let t = &f * &a[col][j];
                        a[r][j] -= t;
                        let t = &f * &inv[col][j];
                        inv[r][j] -= t;
                    }
                }
            }
        }
        Ok(RationalMatrix {
            n,
            entries: inv.into_iter().flatten().collect(),
        })
    }

    /// Primes dividing any entry denominator.
    pub fn denom_support(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for e in &self.entries {
            let d = e.denom().magnitude().clone();
            if d > BigUint::one() {
                out.extend(prime_factors_big(&d));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Entrywise image under `Z[1/q0] -> Z/mZ`.
    pub fn reduce_mod(&self, m: u64) -> Result<ResidueMatrix, ArithError> {
        reduce_mod(self, m)
    }
}

impl fmt::Display for RationalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.n {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "[")?;
            for j in 0..self.n {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.get(i, j))?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Entrywise image of `g` under `Z[1/q0] -> Z/mZ`.
pub fn reduce_mod(g: &RationalMatrix, m: u64) -> Result<ResidueMatrix, ArithError> {
    if m < 2 {
        return Err(ArithError::BadModulus(m));
    }
    let mut entries = Vec::with_capacity(g.entries.len());
    for e in &g.entries {
        let num = big_to_residue(e.numer(), m);
        let den = big_to_residue(e.denom(), m);
        let dinv = inv_mod(den, m).ok_or_else(|| ArithError::NonInvertibleDenominator {
            denominator: e.denom().to_string(),
            modulus: m,
        })?;
        entries.push(mul_mod(num, dinv, m));
    }
    Ok(ResidueMatrix {
        n: g.n,
        m,
        entries,
    })
}

// ---------------------------------------------------------------------------
// residue matrices

/// Square matrix over `Z/mZ` with entries reduced into `[0, m)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResidueMatrix {
    n: usize,
    m: u64,
    entries: Vec<u64>,
}

/// Bytes per entry in the canonical encoding: the least `w` with `256^w >= m`.
pub fn entry_width(m: u64) -> usize {
    let mut w = 1;
    while w < 8 && (1u128 << (8 * w)) < m as u128 {
        w += 1;
    }
    w
}

impl ResidueMatrix {
    pub fn new(n: usize, m: u64, entries: Vec<u64>) -> Result<Self, ArithError> {
        if m < 2 {
            return Err(ArithError::BadModulus(m));
        }
        if entries.len() != n * n {
            return Err(ArithError::BadShape {
                expected: n * n,
                got: entries.len(),
            });
        }
        Ok(ResidueMatrix {
            n,
            m,
            entries: entries.into_iter().map(|e| e % m).collect(),
        })
    }

    pub fn from_i64(n: usize, m: u64, entries: &[i64]) -> Result<Self, ArithError> {
        let v = entries
            .iter()
            .map(|&e| e.rem_euclid(m as i64) as u64)
            .collect();
        ResidueMatrix::new(n, m, v)
    }

    pub fn identity(n: usize, m: u64) -> Self {
        let mut entries = vec![0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1 % m;
        }
        ResidueMatrix { n, m, entries }
    }

    pub fn zero(n: usize, m: u64) -> Self {
        ResidueMatrix {
            n,
            m,
            entries: vec![0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.entries[i * self.n + j]
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| {
            (0..self.n).all(|j| self.get(i, j) == if i == j { 1 % self.m } else { 0 })
        })
    }

    pub fn mul(&self, other: &ResidueMatrix) -> ResidueMatrix {
        let mut out = ResidueMatrix::zero(self.n, self.m);
        self.mul_into(other, &mut out.entries);
        out
    }

    /// `self * other`, written into `out` (length `n*n`).
    #[inline]
    pub fn mul_into(&self, other: &ResidueMatrix, out: &mut [u64]) {
        debug_assert_eq!(self.n, other.n);
        debug_assert_eq!(self.m, other.m);
        mul_entries(self.n, self.m, &self.entries, &other.entries, out);
    }

    pub fn add(&self, other: &ResidueMatrix) -> ResidueMatrix {
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| add_mod(a, b, self.m))
            .collect();
        ResidueMatrix {
            n: self.n,
            m: self.m,
            entries,
        }
    }

    pub fn sub(&self, other: &ResidueMatrix) -> ResidueMatrix {
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| sub_mod(a, b, self.m))
            .collect();
        ResidueMatrix {
            n: self.n,
            m: self.m,
            entries,
        }
    }

    pub fn scale(&self, c: u64) -> ResidueMatrix {
        let c = c % self.m;
        ResidueMatrix {
            n: self.n,
            m: self.m,
            entries: self.entries.iter().map(|&a| mul_mod(a, c, self.m)).collect(),
        }
    }

    pub fn pow(&self, mut e: u64) -> ResidueMatrix {
        let mut acc = ResidueMatrix::identity(self.n, self.m);
        let mut base = self.clone();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// Reduction to a divisor `m2 | m`.
    pub fn reduce(&self, m2: u64) -> Result<ResidueMatrix, ArithError> {
        if m2 < 2 || self.m % m2 != 0 {
            return Err(ArithError::BadModulus(m2));
        }
        Ok(ResidueMatrix {
            n: self.n,
            m: m2,
            entries: self.entries.iter().map(|&e| e % m2).collect(),
        })
    }

    fn lifted_rows(&self) -> Vec<Vec<BigInt>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| BigInt::from(self.get(i, j))).collect())
            .collect()
    }

    /// Determinant modulo `m`: cofactor expansion for `n <= 4`, exact Bareiss
    /// elimination of the lift otherwise.
    pub fn det(&self) -> u64 {
        if self.n <= 4 {
            let idx: Vec<usize> = (0..self.n).collect();
            return cofactor_det(&self.entries, self.n, self.m, &idx, &idx);
        }
        big_to_residue(&bareiss_det(self.lifted_rows()), self.m)
    }

    pub fn is_invertible(&self) -> bool {
        inv_mod(self.det(), self.m).is_some()
    }

    /// Inverse modulo `m`; see [`invert_mod`].
    pub fn inverse(&self) -> Result<ResidueMatrix, ArithError> {
        invert_mod(self)
    }

    /// `self * x * self^{-1}`.
    pub fn conjugate(&self, x: &ResidueMatrix) -> Result<ResidueMatrix, ArithError> {
        Ok(self.mul(x).mul(&self.inverse()?))
    }

    fn adjugate(&self) -> ResidueMatrix {
        let (n, m) = (self.n, self.m);
        let mut entries = vec![0; n * n];
        if n == 1 {
            entries[0] = 1 % m;
            return ResidueMatrix { n, m, entries };
        }
        let small = n <= 4;
        let rows = if small { Vec::new() } else { self.lifted_rows() };
        for i in 0..n {
            for j in 0..n {
                let ri: Vec<usize> = (0..n).filter(|&r| r != i).collect();
                let cj: Vec<usize> = (0..n).filter(|&c| c != j).collect();
                let minor = if small {
                    cofactor_det(&self.entries, n, m, &ri, &cj)
                } else {
                    let sub: Vec<Vec<BigInt>> = ri
                        .iter()
                        .map(|&r| cj.iter().map(|&c| rows[r][c].clone()).collect())
                        .collect();
                    big_to_residue(&bareiss_det(sub), m)
                };
                let c = if (i + j) % 2 == 1 { sub_mod(0, minor, m) } else { minor };
                // adj = transpose of the cofactor matrix
                entries[j * n + i] = c;
            }
        }
        ResidueMatrix { n, m, entries }
    }

    fn gauss_jordan_inverse(&self) -> Option<ResidueMatrix> {
        let (n, m) = (self.n, self.m);
        let mut a: Vec<Vec<u64>> = self.entries.chunks(n).map(|r| r.to_vec()).collect();
        let mut inv: Vec<Vec<u64>> = ResidueMatrix::identity(n, m)
            .entries
            .chunks(n)
            .map(|r| r.to_vec())
            .collect();
        for col in 0..n {
            let piv = (col..n).find(|&r| inv_mod(a[r][col], m).is_some())?;
            a.swap(col, piv);
            inv.swap(col, piv);
            let u = inv_mod(a[col][col], m)?;
            for j in 0..n {
                a[col][j] = mul_mod(a[col][j], u, m);
                inv[col][j] = mul_mod(inv[col][j], u, m);
            }
            for r in 0..n {
                if r != col && a[r][col] != 0 {
                    let f = a[r][col];
                    for j in 0..n {
                        a[r][j] = sub_mod(a[r][j], mul_mod(f, a[col][j], m), m);
                        inv[r][j] = sub_mod(inv[r][j], mul_mod(f, inv[col][j], m), m);
                    }
                }
            }
        }
        Some(ResidueMatrix {
            n,
            m,
            entries: inv.into_iter().flatten().collect(),
        })
    }

    /// Canonical encoding: row-major, big-endian, [`entry_width`] bytes per entry.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        encode_entries(&self.entries, entry_width(self.m), out);
    }

    pub fn encoding(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.entries.len() * entry_width(self.m));
        self.encode_into(&mut v);
        v
    }

    pub fn decode(n: usize, m: u64, bytes: &[u8]) -> Result<Self, ArithError> {
        let w = entry_width(m);
        if bytes.len() != n * n * w {
            return Err(ArithError::BadShape {
                expected: n * n * w,
                got: bytes.len(),
            });
        }
        let entries = decode_entries(bytes, w);
        if entries.iter().any(|&e| e >= m) {
            return Err(ArithError::BadModulus(m));
        }
        Ok(ResidueMatrix { n, m, entries })
    }

    /// The integer lift as a rational matrix.
    pub fn to_rational(&self) -> RationalMatrix {
        RationalMatrix {
            n: self.n,
            entries: self
                .entries
                .iter()
                .map(|&e| BigRational::from(BigInt::from(e)))
                .collect(),
        }
    }
}

impl fmt::Display for ResidueMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, row) in self.entries.chunks(self.n).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{row:?}")?;
        }
        write!(f, "] mod {}", self.m)
    }
}

/// Laplace expansion of the minor on `rows x cols`, reduced mod `m`.
fn cofactor_det(e: &[u64], n: usize, m: u64, rows: &[usize], cols: &[usize]) -> u64 {
    match rows.len() {
        0 => 1 % m,
        1 => e[rows[0] * n + cols[0]],
        2 => sub_mod(
            mul_mod(e[rows[0] * n + cols[0]], e[rows[1] * n + cols[1]], m),
            mul_mod(e[rows[0] * n + cols[1]], e[rows[1] * n + cols[0]], m),
            m,
        ),
        _ => {
            let mut acc = 0;
            let rest = &rows[1..];
            for (k, &c) in cols.iter().enumerate() {
                let a = e[rows[0] * n + c];
                if a == 0 {
                    continue;
                }
                let sub: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
                let t = mul_mod(a, cofactor_det(e, n, m, rest, &sub), m);
                acc = if k % 2 == 0 { add_mod(acc, t, m) } else { sub_mod(acc, t, m) };
            }
            acc
        }
    }
}

#[inline]
pub(crate) fn mul_entries(n: usize, m: u64, a: &[u64], b: &[u64], out: &mut [u64]) {
    if m <= 1 << 31 && n <= 4 {
        // each product < 2^62, so up to 4 fit before reduction
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0u64;
                for k in 0..n {
                    acc += a[i * n + k] * b[k * n + j];
                }
                out[i * n + j] = acc % m;
            }
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0u64;
                for k in 0..n {
                    acc = add_mod(acc, mul_mod(a[i * n + k], b[k * n + j], m), m);
                }
                out[i * n + j] = acc;
            }
        }
    }
}

#[inline]
pub(crate) fn encode_entries(entries: &[u64], w: usize, out: &mut Vec<u8>) {
    for &e in entries {
        let bytes = e.to_be_bytes();
        out.extend_from_slice(&bytes[8 - w..]);
    }
}

#[inline]
pub(crate) fn decode_entries(bytes: &[u8], w: usize) -> Vec<u64> {
    bytes
        .chunks(w)
        .map(|c| c.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64))
        .collect()
}

/// Inverse of `g` modulo its modulus.
///
/// The determinant is computed exactly by Bareiss elimination and checked for
/// being a unit. For `n <= 4` the inverse is `det^{-1} adj(g)`; larger sizes
/// use Gauss-Jordan with unit pivots, falling back to the adjugate when the
/// modulus is composite and no unit pivot exists.
pub fn invert_mod(g: &ResidueMatrix) -> Result<ResidueMatrix, ArithError> {
    let det = g.det();
    let dinv = inv_mod(det, g.m).ok_or(ArithError::SingularMatrix {
        modulus: g.m,
        det: det.to_string(),
    })?;
    if g.n > 4 {
        if let Some(inv) = g.gauss_jordan_inverse() {
            return Ok(inv);
        }
    }
    Ok(g.adjugate().scale(dinv))
}

// ---------------------------------------------------------------------------
// truncated p-adic matrices

/// Matrix with entries in `Z/p^N`, read as a truncated `Z_p` matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PadicTruncMatrix {
    p: u64,
    depth: u32,
    mat: ResidueMatrix,
}

impl PadicTruncMatrix {
    pub fn new(p: u64, depth: u32, mat: ResidueMatrix) -> Result<Self, ArithError> {
        let q = checked_pow(p, depth).ok_or(ArithError::BadModulus(p))?;
        if !is_prime(p) || depth == 0 {
            return Err(ArithError::BadModulus(p));
        }
        if mat.m != q {
            return Err(ArithError::ModulusMismatch(mat.m, q));
        }
        Ok(PadicTruncMatrix { p, depth, mat })
    }

    pub fn from_entries(p: u64, depth: u32, n: usize, entries: Vec<u64>) -> Result<Self, ArithError> {
        let q = checked_pow(p, depth).ok_or(ArithError::BadModulus(p))?;
        PadicTruncMatrix::new(p, depth, ResidueMatrix::new(n, q, entries)?)
    }

    pub fn identity(p: u64, depth: u32, n: usize) -> Self {
        let q = checked_pow(p, depth).expect("modulus overflow");
        PadicTruncMatrix {
            p,
            depth,
            mat: ResidueMatrix::identity(n, q),
        }
    }

    pub fn zero(p: u64, depth: u32, n: usize) -> Self {
        let q = checked_pow(p, depth).expect("modulus overflow");
        PadicTruncMatrix {
            p,
            depth,
            mat: ResidueMatrix::zero(n, q),
        }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn n(&self) -> usize {
        self.mat.n
    }

    pub fn modulus(&self) -> u64 {
        self.mat.m
    }

    pub fn matrix(&self) -> &ResidueMatrix {
        &self.mat
    }

    pub fn entries(&self) -> &[u64] {
        &self.mat.entries
    }

    /// Minimal entry valuation, saturated at the depth.
    pub fn valuation(&self) -> u32 {
        self.mat
            .entries
            .iter()
            .map(|&e| valuation(e, self.p, self.depth))
            .min()
            .unwrap_or(self.depth)
    }

    /// `||X||_p = p^{-valuation}`; zero matrices report `p^{-N}`.
    pub fn norm(&self) -> f64 {
        (self.p as f64).powi(-(self.valuation() as i32))
    }

    pub fn mul(&self, other: &PadicTruncMatrix) -> PadicTruncMatrix {
        PadicTruncMatrix {
            p: self.p,
            depth: self.depth,
            mat: self.mat.mul(&other.mat),
        }
    }

    pub fn add(&self, other: &PadicTruncMatrix) -> PadicTruncMatrix {
        PadicTruncMatrix {
            p: self.p,
            depth: self.depth,
            mat: self.mat.add(&other.mat),
        }
    }

    pub fn sub(&self, other: &PadicTruncMatrix) -> PadicTruncMatrix {
        PadicTruncMatrix {
            p: self.p,
            depth: self.depth,
            mat: self.mat.sub(&other.mat),
        }
    }

    /// `self - I`.
    pub fn minus_identity(&self) -> PadicTruncMatrix {
        self.sub(&PadicTruncMatrix::identity(self.p, self.depth, self.n()))
    }

    pub fn into_matrix(self) -> ResidueMatrix {
        self.mat
    }
}

/// Residue of an integer modulo `m`.
pub(crate) fn residue_of(x: &BigInt, m: u64) -> u64 {
    big_to_residue(x, m)
}

/// p-adic valuation of a nonzero big integer.
pub(crate) fn big_valuation(x: &BigInt, p: u64) -> u32 {
    let mut v = 0;
    let mut r = x.abs();
    let pb = BigInt::from(p);
    while !r.is_zero() && (&r % &pb).is_zero() {
        r /= &pb;
        v += 1;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn reduce_identity() {
        let r = reduce_mod(&RationalMatrix::identity(3), 7).unwrap();
        assert_eq!(r, ResidueMatrix::identity(3, 7));
    }

    #[test]
    fn reduce_half_mod_five() {
        let g = RationalMatrix::new(2, vec![q(1, 1), q(1, 2), q(0, 1), q(1, 1)]).unwrap();
        let r = reduce_mod(&g, 5).unwrap();
        assert_eq!(r.entries(), &[1, 3, 0, 1]);
        assert_eq!(g.denom_support(), vec![2]);
    }

    #[test]
    fn reduce_half_mod_four_fails() {
        let g = RationalMatrix::new(2, vec![q(1, 1), q(1, 2), q(0, 1), q(1, 1)]).unwrap();
        assert!(matches!(
            reduce_mod(&g, 4),
            Err(ArithError::NonInvertibleDenominator { .. })
        ));
    }

    #[test]
    fn invert_examples() {
        let id = ResidueMatrix::identity(2, 5);
        assert_eq!(invert_mod(&id).unwrap(), id);
        let u = ResidueMatrix::from_i64(2, 5, &[1, 1, 0, 1]).unwrap();
        assert_eq!(invert_mod(&u).unwrap().entries(), &[1, 4, 0, 1]);
        let s = ResidueMatrix::from_i64(2, 4, &[2, 0, 0, 1]).unwrap();
        assert!(matches!(invert_mod(&s), Err(ArithError::SingularMatrix { .. })));
    }

    #[test]
    fn composite_modulus_without_unit_pivot() {
        // det = 4 - 9 = -5 = 1 mod 6 but no entry is a unit mod 6
        let g = ResidueMatrix::from_i64(2, 6, &[2, 3, 3, 2]).unwrap();
        let inv = invert_mod(&g).unwrap();
        assert!(g.mul(&inv).is_identity());
    }

    #[test]
    fn large_dimension_inverse() {
        let mut e = vec![0i64; 36];
        for i in 0..6 {
            e[i * 6 + i] = 1;
            if i + 1 < 6 {
                e[i * 6 + i + 1] = (i as i64) + 2;
            }
        }
        e[5 * 6] = 3;
        let g = ResidueMatrix::from_i64(6, 49, &e).unwrap();
        if g.is_invertible() {
            assert!(g.mul(&g.inverse().unwrap()).is_identity());
        }
    }

    #[test]
    fn rational_inverse_and_det() {
        let g = RationalMatrix::from_rows(&[vec![2, 1], vec![1, 1]], 3).unwrap();
        assert_eq!(g.det(), q(1, 9));
        assert!(g.mul(&g.inverse().unwrap()).is_identity());
        let s = RationalMatrix::from_rows(&[vec![1, 2], vec![2, 4]], 1).unwrap();
        assert_eq!(s.inverse(), Err(ArithError::SingularRational));
    }

    #[test]
    fn encoding_width_and_round_trip() {
        assert_eq!(entry_width(2), 1);
        assert_eq!(entry_width(256), 1);
        assert_eq!(entry_width(257), 2);
        assert_eq!(entry_width(65537), 3);
        let g = ResidueMatrix::from_i64(2, 1000, &[999, 1, 256, 0]).unwrap();
        let enc = g.encoding();
        assert_eq!(enc, vec![3, 231, 0, 1, 1, 0, 0, 0]);
        assert_eq!(ResidueMatrix::decode(2, 1000, &enc).unwrap(), g);
    }

    #[test]
    fn prime_power_detection() {
        assert_eq!(prime_power(125), Some((5, 3)));
        assert_eq!(prime_power(7), Some((7, 1)));
        assert_eq!(prime_power(12), None);
        assert_eq!(prime_power(1), None);
    }

    fn rational_strategy(m: u64) -> impl Strategy<Value = RationalMatrix> {
        // denominators are powers of 2 or 3, kept prime to m
        (proptest::collection::vec(-9i64..10, 9), 0u32..3).prop_map(move |(e, k)| {
            let d = if m % 2 == 0 { 3i64.pow(k) } else { 2i64.pow(k) };
            RationalMatrix::new(3, e.iter().map(|&x| q(x, d)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn reduction_is_multiplicative(a in rational_strategy(35), b in rational_strategy(35)) {
            let lhs = reduce_mod(&a.mul(&b), 35).unwrap();
            let rhs = reduce_mod(&a, 35).unwrap().mul(&reduce_mod(&b, 35).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn inverse_is_an_involution(e in proptest::collection::vec(0u64..27, 9)) {
            let g = ResidueMatrix::new(3, 27, e).unwrap();
            prop_assume!(g.is_invertible());
            let inv = invert_mod(&g).unwrap();
            prop_assert!(g.mul(&inv).is_identity());
            prop_assert_eq!(invert_mod(&inv).unwrap(), g);
        }

        #[test]
        fn cofactor_matches_bareiss(e in proptest::collection::vec(0u64..1000, 16)) {
            let g = ResidueMatrix::new(4, 1000, e).unwrap();
            prop_assert_eq!(g.det(), big_to_residue(&bareiss_det(g.lifted_rows()), 1000));
        }

        #[test]
        fn valuation_is_ultrametric_and_submultiplicative(
            a in proptest::collection::vec(0u64..625, 4),
            b in proptest::collection::vec(0u64..625, 4),
        ) {
            let x = PadicTruncMatrix::from_entries(5, 4, 2, a).unwrap();
            let y = PadicTruncMatrix::from_entries(5, 4, 2, b).unwrap();
            prop_assert!(x.add(&y).valuation() >= x.valuation().min(y.valuation()));
            prop_assert!(x.mul(&y).valuation() >= (x.valuation() + y.valuation()).min(4));
            prop_assert!(x.mul(&y).norm() <= x.norm() * y.norm() + 1e-15);
        }
    }
}
