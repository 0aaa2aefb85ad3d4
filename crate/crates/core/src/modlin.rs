//! Row reduction over `Z/p^N`.
//!
//! Pivots are chosen globally by minimal p-adic valuation. With that rule the
//! pivot valuations are exactly the Smith normal form exponents, and the pivot
//! rows form a triangular system that decides span membership.

use crate::arith::{checked_pow, inv_mod, mul_mod, sub_mod, valuation};

/// Echelon form of a `Z/p^N`-span of vectors of length `dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Echelon {
    p: u64,
    depth: u32,
    q: u64,
    dim: usize,
    rows: Vec<Vec<u64>>,
    pivot_cols: Vec<usize>,
    pivot_vals: Vec<u32>,
    // inverse of the unit part of each pivot entry mod p^N
    pivot_uinv: Vec<u64>,
}

impl Echelon {
    pub fn new(p: u64, depth: u32, dim: usize) -> Self {
        let q = checked_pow(p, depth).expect("modulus overflow");
        Echelon {
            p,
            depth,
            q,
            dim,
            rows: Vec::new(),
            pivot_cols: Vec::new(),
            pivot_vals: Vec::new(),
            pivot_uinv: Vec::new(),
        }
    }

    pub fn from_rows<I>(p: u64, depth: u32, dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = Vec<u64>>,
    {
        let mut e = Echelon::new(p, depth, dim);
        let q = e.q;
        let mut work: Vec<Vec<u64>> = rows
            .into_iter()
            .map(|r| {
                assert_eq!(r.len(), dim, "row length mismatch");
                r.into_iter().map(|x| x % q).collect()
            })
            .collect();
        e.reduce_all(&mut work);
        e
    }

    fn reduce_all(&mut self, work: &mut Vec<Vec<u64>>) {
        let (p, depth, q) = (self.p, self.depth, self.q);
        let mut used = vec![false; self.dim];
        loop {
            // global minimal valuation over remaining rows, unused columns
            let mut best: Option<(u32, usize, usize)> = None;
            for (ri, r) in work.iter().enumerate() {
                for (c, &x) in r.iter().enumerate() {
                    if used[c] || x == 0 {
                        continue;
                    }
                    let v = valuation(x, p, depth);
                    if best.map_or(true, |(bv, _, _)| v < bv) {
                        best = Some((v, ri, c));
                        if v == 0 {
                            break;
                        }
                    }
                }
                if matches!(best, Some((0, _, _))) {
                    break;
                }
            }
            let Some((v, ri, c)) = best else { break };
            let prow = work.swap_remove(ri);
            let pv = checked_pow(p, v).unwrap();
            let unit = prow[c] / pv;
            let uinv = inv_mod(unit % q, q).expect("unit part is invertible");
            for r in work.iter_mut() {
                if r[c] != 0 {
                    let f = mul_mod(r[c] / pv, uinv, q);
                    for (x, &y) in r.iter_mut().zip(prow.iter()) {
                        *x = sub_mod(*x, mul_mod(f, y, q), q);
                    }
                }
            }
            work.retain(|r| r.iter().any(|&x| x != 0));
            used[c] = true;
            self.rows.push(prow);
            self.pivot_cols.push(c);
            self.pivot_vals.push(v);
            self.pivot_uinv.push(uinv);
        }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of invariant factors that are nonzero mod `p^N`.
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Pivot rows in pivot order; they span the lattice.
    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    /// Smith normal form exponents, ascending.
    pub fn valuations(&self) -> Vec<u32> {
        let mut v = self.pivot_vals.clone();
        v.sort_unstable();
        v
    }

    /// Reduces `x` against the pivots; `None` if some pivot column is not
    /// divisible by that pivot's valuation (so `x` is not in the span).
    pub fn residual(&self, x: &[u64]) -> Option<Vec<u64>> {
        let q = self.q;
        let mut r: Vec<u64> = x.iter().map(|&a| a % q).collect();
        for k in 0..self.rows.len() {
            let c = self.pivot_cols[k];
            if r[c] == 0 {
                continue;
            }
            let v = self.pivot_vals[k];
            if valuation(r[c], self.p, self.depth) < v {
                return None;
            }
            let pv = checked_pow(self.p, v).unwrap();
            let f = mul_mod(r[c] / pv, self.pivot_uinv[k], q);
            for (a, &b) in r.iter_mut().zip(self.rows[k].iter()) {
                *a = sub_mod(*a, mul_mod(f, b, q), q);
            }
        }
        Some(r)
    }

    pub fn contains(&self, x: &[u64]) -> bool {
        self.residual(x).is_some_and(|r| r.iter().all(|&a| a == 0))
    }

    /// Adds `x` to the span; returns whether the span changed.
    pub fn insert(&mut self, x: Vec<u64>) -> bool {
        if self.contains(&x) {
            return false;
        }
        let mut work = std::mem::take(&mut self.rows);
        work.push(x.into_iter().map(|a| a % self.q).collect());
        self.pivot_cols.clear();
        self.pivot_vals.clear();
        self.pivot_uinv.clear();
        self.reduce_all(&mut work);
        true
    }

    /// Pivot rows divided by `p^v`, each valid modulo `p^{N-v}`; paired with `v`.
    pub fn unit_rows(&self) -> Vec<(Vec<u64>, u32)> {
        self.rows
            .iter()
            .zip(&self.pivot_vals)
            .map(|(r, &v)| {
                let pv = checked_pow(self.p, v).unwrap();
                (r.iter().map(|&a| a / pv).collect(), v)
            })
            .collect()
    }
}

/// Smith normal form exponents of the row space of `rows` over `Z/p^N`.
pub fn snf_valuations(p: u64, depth: u32, dim: usize, rows: &[Vec<u64>]) -> Vec<u32> {
    Echelon::from_rows(p, depth, dim, rows.iter().cloned()).valuations()
}

/// Rank over `F_p` of the given rows.
pub fn rank_mod_p(p: u64, dim: usize, rows: &[Vec<u64>]) -> usize {
    Echelon::from_rows(p, 1, dim, rows.iter().map(|r| r.iter().map(|&x| x % p).collect()))
        .rank()
}

/// Sum of the `d` smallest SNF exponents, i.e. the minimal valuation over all
/// `d x d` minors; `None` when the rank is below `d`.
pub fn minor_valuation(p: u64, depth: u32, dim: usize, rows: &[Vec<u64>], d: usize) -> Option<u32> {
    let v = snf_valuations(p, depth, dim, rows);
    (v.len() >= d).then(|| v[..d].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::bareiss_det;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn brute_minor_valuation(p: u64, rows: &[Vec<u64>], d: usize, cap: u32) -> u32 {
        // min valuation over all d x d minors, by enumeration
        let nr = rows.len();
        let nc = rows[0].len();
        let mut best = u32::MAX;
        let combos = |n: usize, k: usize| -> Vec<Vec<usize>> {
            let mut out = Vec::new();
            let mut cur = Vec::new();
            fn rec(s: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == k {
                    out.push(cur.clone());
                    return;
                }
                for i in s..n {
                    cur.push(i);
                    rec(i + 1, n, k, cur, out);
                    cur.pop();
                }
            }
            rec(0, n, k, &mut cur, &mut out);
            out
        };
        for rs in combos(nr, d) {
            for cs in combos(nc, d) {
                let m: Vec<Vec<BigInt>> = rs
                    .iter()
                    .map(|&r| cs.iter().map(|&c| BigInt::from(rows[r][c])).collect())
                    .collect();
                let det = bareiss_det(m);
                let v = if det == BigInt::from(0) {
                    u32::MAX
                } else {
                    crate::arith::big_valuation(&det, p)
                };
                best = best.min(v);
            }
        }
        best.min(cap)
    }

    #[test]
    fn diagonal_divisors() {
        let rows = vec![vec![5, 0, 0], vec![0, 25, 0], vec![0, 0, 0]];
        let e = Echelon::from_rows(5, 3, 3, rows);
        assert_eq!(e.rank(), 2);
        assert_eq!(e.valuations(), vec![1, 2]);
        assert!(e.contains(&[10, 50, 0]));
        assert!(!e.contains(&[1, 0, 0]));
        assert!(!e.contains(&[0, 5, 0]));
    }

    #[test]
    fn zero_divisor_pivoting() {
        // [2,1],[0,2] mod 4: SNF diag(1,4) -> rank 1 mod 4
        let e = Echelon::from_rows(2, 2, 2, vec![vec![2, 1], vec![0, 2]]);
        assert_eq!(e.valuations(), vec![0]);
        assert!(e.contains(&[0, 2]));
        assert!(!e.contains(&[1, 0]));
    }

    proptest! {
        #[test]
        fn snf_matches_minor_gcds(
            rows in proptest::collection::vec(proptest::collection::vec(0u64..125, 3), 3)
        ) {
            let v = snf_valuations(5, 3, 3, &rows);
            for d in 1..=3usize {
                let brute = brute_minor_valuation(5, &rows, d, 3);
                let got = if v.len() >= d { v[..d].iter().sum::<u32>() } else { u32::MAX };
                // minors are only meaningful below the truncation depth
                prop_assert_eq!(got.min(3), brute.min(3));
            }
        }

        #[test]
        fn membership_of_combinations(
            rows in proptest::collection::vec(proptest::collection::vec(0u64..27, 4), 1..4),
            coeffs in proptest::collection::vec(0u64..27, 4),
        ) {
            let e = Echelon::from_rows(3, 3, 4, rows.clone());
            let mut x = vec![0u64; 4];
            for (r, &c) in rows.iter().zip(&coeffs) {
                for (a, &b) in x.iter_mut().zip(r) {
                    *a = (*a + c * b) % 27;
                }
            }
            prop_assert!(e.contains(&x));
            let mut e2 = e.clone();
            prop_assert!(!e2.insert(x));
        }
    }
}
