//! Lie lattices of congruence layers and their adjoint saturation.
//!
//! Everything lives in `gl_n(Z/p^N)` with flattened row-major coordinates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{checked_pow, prime_power, ArithError, PadicTruncMatrix, RationalMatrix, ResidueMatrix};
use crate::exec::Exec;
use crate::groups::{congruence_kernel, ElementId, GroupError, GroupTable};
use crate::modlin::{rank_mod_p, Echelon};
use crate::padic::{ad_coords, trunc_log, ChartConfig, PadicError};
use crate::words::{word_string, WordSource};

#[derive(Debug, Error)]
pub enum LieError {
    #[error("no congruence elements at depth {c}")]
    EmptyChartLayer { c: u32 },
    #[error("conjugator search stalled at rank {} of {}", certificate.achieved_rank, certificate.target_rank)]
    Stalled { certificate: Box<ConjugatorCertificate> },
    #[error("modulus {0} is not a prime power")]
    BadModulus(u64),
    #[error(transparent)]
    Padic(#[from] PadicError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// A `Z/p^N`-submodule of `gl_n(Z/p^N)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanLattice {
    n: usize,
    ech: Echelon,
}

impl SpanLattice {
    pub fn zero(p: u64, depth: u32, n: usize) -> Self {
        SpanLattice {
            n,
            ech: Echelon::new(p, depth, n * n),
        }
    }

    pub fn from_vectors<I>(p: u64, depth: u32, n: usize, vectors: I) -> Self
    where
        I: IntoIterator<Item = Vec<u64>>,
    {
        SpanLattice {
            n,
            ech: Echelon::from_rows(p, depth, n * n, vectors),
        }
    }

    pub fn p(&self) -> u64 {
        self.ech.p()
    }

    pub fn depth(&self) -> u32 {
        self.ech.depth()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        checked_pow(self.p(), self.depth()).unwrap()
    }

    pub fn rank(&self) -> usize {
        self.ech.rank()
    }

    /// Smith exponents `v` of the invariant factors `p^v`, ascending.
    pub fn divisor_exponents(&self) -> Vec<u32> {
        self.ech.valuations()
    }

    pub fn elementary_divisors(&self) -> Vec<u64> {
        self.divisor_exponents().iter().map(|&v| self.p().pow(v)).collect()
    }

    /// Echelon basis rows.
    pub fn basis(&self) -> &[Vec<u64>] {
        self.ech.rows()
    }

    /// Basis rows divided by their elementary divisors, each valid modulo
    /// `p^{N-v}`.
    pub fn unit_basis(&self) -> Vec<(Vec<u64>, u32)> {
        self.ech.unit_rows()
    }

    pub fn contains(&self, x: &[u64]) -> bool {
        self.ech.contains(x)
    }

    pub fn insert(&mut self, x: Vec<u64>) -> bool {
        self.ech.insert(x)
    }

    pub fn join(&self, other: &SpanLattice) -> SpanLattice {
        let mut out = self.clone();
        for r in other.basis() {
            out.insert(r.clone());
        }
        out
    }

    pub fn is_sublattice_of(&self, other: &SpanLattice) -> bool {
        self.basis().iter().all(|r| other.contains(r))
    }

    /// `Ad(h)` applied to the lattice; `h` is reduced modulo `p^N`.
    pub fn apply_ad(&self, h: &ResidueMatrix) -> Result<SpanLattice, ArithError> {
        let hq = h.reduce(self.modulus())?;
        let hi = hq.inverse()?;
        Ok(SpanLattice::from_vectors(
            self.p(),
            self.depth(),
            self.n,
            self.basis().iter().map(|r| ad_coords(&hq, &hi, r)),
        ))
    }

    /// Rank of the image in `gl_n(F_p)` after dividing out the divisors.
    pub fn unit_rank_mod_p(&self) -> usize {
        let rows: Vec<Vec<u64>> = self.unit_basis().into_iter().map(|(r, _)| r).collect();
        rank_mod_p(self.p(), self.n * self.n, &rows)
    }
}

/// Span of `log g` over the congruence layer of depth `c`, or a deterministic
/// sample of it when the layer exceeds `sample_budget`.
pub fn lie_lattice_from_group(
    g: &Arc<GroupTable>,
    c: u32,
    sample_budget: usize,
    exec: Exec,
) -> Result<SpanLattice, LieError> {
    let m = g.modulus();
    let (p, depth) = prime_power(m).ok_or(LieError::BadModulus(m))?;
    let cfg = ChartConfig::new(p, depth, c)?;
    let layer = congruence_kernel(g, c, exec)?;
    let mut ids: Vec<ElementId> = layer.members.ids().into_iter().filter(|&i| i != 0).collect();
    if ids.is_empty() {
        return Err(LieError::EmptyChartLayer { c });
    }
    if ids.len() > sample_budget {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1e5 ^ c as u64);
        let picked: Vec<ElementId> = (0..sample_budget).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
        ids = picked;
    }
    let n = g.n();
    let logs: Vec<Result<Vec<u64>, PadicError>> = exec.map_slice(&ids, |&i| {
        let x = PadicTruncMatrix::new(p, depth, g.element(i))?;
        Ok(trunc_log(&x, &cfg)?.coords().to_vec())
    });
    let mut lat = SpanLattice::zero(p, depth, n);
    for l in logs {
        lat.insert(l?);
    }
    Ok(lat)
}

fn order_mod(g: &ResidueMatrix, cap: usize) -> Option<u64> {
    let mut x = g.clone();
    for k in 1..=cap as u64 {
        if x.is_identity() {
            return Some(k);
        }
        x = x.mul(g);
    }
    None
}

const WORD_LEN: usize = 16;
const ORDER_CAP: usize = 1 << 20;

/// Lie lattice of `<gens>` at modulus `p^N` without enumerating the group.
///
/// Congruence elements are `w^{o(w)}`, where `w` runs over the generators and
/// `samples` random words and `o(w)` is the order of `w` modulo `p^c`.
pub fn lie_lattice_from_generators(
    gens: &[ResidueMatrix],
    c: u32,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<SpanLattice, LieError> {
    let first = gens.first().ok_or(GroupError::EmptyGenerators)?;
    let m = first.modulus();
    let (p, depth) = prime_power(m).ok_or(LieError::BadModulus(m))?;
    let cfg = ChartConfig::new(p, depth, c)?;
    let pc = p.pow(c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<ResidueMatrix> = gens.to_vec();
    for _ in 0..samples {
        let mut w = ResidueMatrix::identity(first.n(), m);
        for _ in 0..WORD_LEN {
            w = w.mul(&gens[rng.gen_range(0..gens.len())]);
        }
        points.push(w);
    }
    let logs: Vec<Result<Option<Vec<u64>>, LieError>> = exec.map_slice(&points, |w| {
        let o = order_mod(&w.reduce(pc)?, ORDER_CAP)
            .ok_or_else(|| PadicError::PrecisionExhausted("element order mod p^c too large".into()))?;
        let k = w.pow(o);
        if k.is_identity() {
            return Ok(None);
        }
        let x = PadicTruncMatrix::new(p, depth, k)?;
        Ok(Some(trunc_log(&x, &cfg)?.coords().to_vec()))
    });
    let mut lat = SpanLattice::zero(p, depth, first.n());
    for l in logs {
        if let Some(v) = l? {
            lat.insert(v);
        }
    }
    if lat.rank() == 0 {
        return Err(LieError::EmptyChartLayer { c });
    }
    Ok(lat)
}

/// Least fixed point of `M -> M + sum_i Ad(gamma_i) M`.
pub fn adjoint_saturate(
    m: &SpanLattice,
    conjugators: &[RationalMatrix],
    ambient: &SpanLattice,
) -> Result<SpanLattice, LieError> {
    let q = m.modulus();
    let gs: Vec<(ResidueMatrix, ResidueMatrix)> = conjugators
        .iter()
        .map(|g| {
            let r = g.reduce_mod(q)?;
            let ri = r.inverse()?;
            Ok((r, ri))
        })
        .collect::<Result<_, ArithError>>()?;
    let mut cur = m.clone();
    loop {
        let mut next = cur.clone();
        for (g, gi) in &gs {
            for r in cur.basis() {
                next.insert(ad_coords(g, gi, r));
            }
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    debug_assert!(!m.is_sublattice_of(ambient) || cur.is_sublattice_of(ambient));
    Ok(cur)
}

/// Conjugators `gamma_i` with `sum_i Ad(gamma_i) M0` of full rank; the
/// identity is implicit and not listed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConjugatorCertificate {
    /// Words as generator indices joined by `.`.
    pub words: Vec<String>,
    /// Values of the words over `Q`.
    pub values: Vec<String>,
    pub achieved_rank: usize,
    pub target_rank: usize,
    /// Running rank after the identity and after each conjugator.
    pub rank_gains: Vec<usize>,
    #[serde(skip)]
    pub matrices: Vec<RationalMatrix>,
}

impl ConjugatorCertificate {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.achieved_rank == self.target_rank
    }
}

/// Greedy search: repeatedly take the first shortlex word whose `Ad(gamma) M0`
/// strictly raises the rank of the running sum.
pub fn select_conjugators(
    m0: &SpanLattice,
    ambient: &SpanLattice,
    source: &WordSource,
    limit: usize,
    exec: Exec,
) -> Result<ConjugatorCertificate, LieError> {
    let q = m0.modulus();
    let candidates = source.distinct_mod(q)?;
    let target = ambient.rank();
    let mut running = m0.clone();
    let mut cert = ConjugatorCertificate {
        words: Vec::new(),
        values: Vec::new(),
        achieved_rank: running.rank(),
        target_rank: target,
        rank_gains: vec![running.rank()],
        matrices: Vec::new(),
    };
    while running.rank() < target && cert.len() < limit {
        let base = running.rank();
        let hit = exec.position_first(&candidates, |(_, r)| {
            let ad = match m0.apply_ad(r) {
                Ok(a) => a,
                Err(_) => return false,
            };
            running.join(&ad).rank() > base
        });
        let Some(i) = hit else { break };
        let (w, r) = &candidates[i];
        running = running.join(&m0.apply_ad(r)?);
        cert.words.push(word_string(&w.letters));
        cert.values.push(w.value.to_string());
        cert.matrices.push(w.value.clone());
        cert.achieved_rank = running.rank();
        cert.rank_gains.push(running.rank());
    }
    if running.rank() < target {
        return Err(LieError::Stalled {
            certificate: Box::new(cert),
        });
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{enumerate_group, DEFAULT_BUDGET};
    use crate::padic::sl_basis;

    fn elementary(n: usize, i: usize, j: usize, t: i64) -> RationalMatrix {
        let mut rows = vec![vec![0i64; n]; n];
        for (k, r) in rows.iter_mut().enumerate() {
            r[k] = 1;
        }
        rows[i][j] = t;
        RationalMatrix::from_rows(&rows, 1).unwrap()
    }

    fn sl2_in_sl3(q: u64, p: u64, depth: u32) -> SpanLattice {
        let mut v = Vec::new();
        for (i, j) in [(0, 1), (1, 0)] {
            let mut e = vec![0u64; 9];
            e[i * 3 + j] = 1;
            v.push(e);
        }
        let mut h = vec![0u64; 9];
        h[0] = 1;
        h[4] = q - 1;
        v.push(h);
        SpanLattice::from_vectors(p, depth, 3, v)
    }

    #[test]
    fn sl2_lattice_mod_125() {
        let gens: Vec<ResidueMatrix> = [[1, 1, 0, 1], [1, -1, 0, 1], [1, 0, 1, 1], [1, 0, -1, 1]]
            .iter()
            .map(|e| ResidueMatrix::from_i64(2, 125, e).unwrap())
            .collect();
        let g = Arc::new(enumerate_group(&gens, DEFAULT_BUDGET, Exec::default()).unwrap());
        let lat = lie_lattice_from_group(&g, 1, 4096, Exec::default()).unwrap();
        assert_eq!(lat.rank(), 3);
        assert_eq!(lat.elementary_divisors(), vec![5, 5, 5]);
    }

    #[test]
    fn trivial_group_has_empty_layer() {
        let g = Arc::new(enumerate_group(&[ResidueMatrix::identity(2, 25)], 10, Exec::default()).unwrap());
        assert!(matches!(lie_lattice_from_group(&g, 1, 10, Exec::default()), Err(LieError::EmptyChartLayer { .. })));
    }

    #[test]
    fn sl3_lattice_from_generators() {
        let mut gens = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    for t in [1, -1] {
                        gens.push(elementary(3, i, j, t).reduce_mod(125).unwrap());
                    }
                }
            }
        }
        let lat = lie_lattice_from_generators(&gens, 1, 48, 11, Exec::default()).unwrap();
        assert_eq!(lat.rank(), 8);
        assert_eq!(lat.elementary_divisors(), vec![5; 8]);
    }

    #[test]
    fn saturation_of_sl2_in_sl3() {
        let m = sl2_in_sl3(125, 5, 3);
        let ambient = SpanLattice::from_vectors(5, 3, 3, sl_basis(3, 125));
        assert!(m.is_sublattice_of(&ambient));
        assert_eq!(adjoint_saturate(&ambient, &[elementary(3, 0, 2, 1)], &ambient).unwrap(), ambient);
        assert_eq!(adjoint_saturate(&m, &[RationalMatrix::identity(3)], &ambient).unwrap(), m);
        let conj = [elementary(3, 0, 2, 1), elementary(3, 2, 0, 1), elementary(3, 1, 2, 1), elementary(3, 2, 1, 1)];
        let s = adjoint_saturate(&m, &conj, &ambient).unwrap();
        assert_eq!(s.rank(), 8);
        for g in &conj {
            assert_eq!(adjoint_saturate(&s, std::slice::from_ref(g), &ambient).unwrap(), s);
        }
    }

    #[test]
    fn greedy_selection_reaches_full_rank() {
        let mut gens = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    gens.push(elementary(3, i, j, 1));
                    gens.push(elementary(3, i, j, -1));
                }
            }
        }
        let m = sl2_in_sl3(125, 5, 3);
        let ambient = SpanLattice::from_vectors(5, 3, 3, sl_basis(3, 125));
        let src = WordSource::new(gens, 2);
        let cert = select_conjugators(&m, &ambient, &src, 8, Exec::default()).unwrap();
        assert!(cert.len() <= 8);
        assert_eq!(cert.achieved_rank, 8);
        assert!(cert.rank_gains.windows(2).all(|w| w[0] < w[1]));
        let mut with_id = vec![RationalMatrix::identity(3)];
        with_id.extend(cert.matrices.iter().cloned());
        let sum = with_id
            .iter()
            .map(|g| m.apply_ad(&g.reduce_mod(125).unwrap()).unwrap())
            .fold(SpanLattice::zero(5, 3, 3), |a, b| a.join(&b));
        assert_eq!(sum.rank(), 8);
        let again = select_conjugators(&m, &ambient, &src, 8, Exec::Sequential).unwrap();
        assert_eq!(again, cert);
        let full = select_conjugators(&ambient, &ambient, &src, 8, Exec::default()).unwrap();
        assert!(full.is_empty());
    }

    #[test]
    fn abelian_ambient_stalls() {
        // diagonal torus of SL2: Ad acts trivially on its own Lie algebra
        let t = RationalMatrix::from_rows(&[vec![2, 0], vec![0, 1]], 1).unwrap();
        let ti = t.inverse().unwrap();
        let mut h = vec![0u64; 4];
        h[0] = 5;
        h[3] = 125 - 5;
        let m = SpanLattice::from_vectors(5, 3, 2, vec![h.clone()]);
        let mut ambient = m.clone();
        let mut d = vec![0u64; 4];
        d[0] = 5;
        ambient.insert(d);
        let src = WordSource::new(vec![t, ti], 3);
        assert!(matches!(
            select_conjugators(&m, &ambient, &src, 4, Exec::default()),
            Err(LieError::Stalled { .. })
        ));
    }
}
