//! The averaging operator of a symmetric multiset and its spectral radius on
//! mean-zero functions.
//!
//! The operator acts by right translation, `(T f)(g) = mean over w of f(g w)`.
//! For a symmetric multiset this matrix is symmetric and has the same spectrum
//! as the left-translation walk, since the two are conjugate under `g -> g^{-1}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::Bitset;
use crate::exec::Exec;
use crate::groups::{enumerate_group, ElementId, GroupError, GroupTable, SubsetHandle};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("omega is not closed under inverses")]
    NotSymmetric,
    #[error("power iteration did not converge (best estimate {:.12})", report.lambda)]
    NoConvergence { report: Box<SpectralReport> },
    #[error("H is not a subgroup")]
    NotASubgroup,
    #[error("conjugated copies cover only {reached} of {order} elements")]
    CoverageFailed { reached: usize, order: usize },
    #[error("empty omega")]
    EmptyOmega,
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Auto,
    Dense,
    Iterative,
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralOptions {
    /// Residual target for the iterative path.
    pub tol: f64,
    pub policy: Policy,
    /// Largest order handled densely under [`Policy::Auto`].
    pub dense_threshold: usize,
    pub max_iterations: usize,
    pub exec: Exec,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tol: 1e-10,
            policy: Policy::Auto,
            dense_threshold: 4000,
            max_iterations: 200_000,
            exec: Exec::default(),
            seed: 0x5eed_cafe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Largest absolute eigenvalue on mean-zero functions.
    pub lambda: f64,
    /// Largest signed eigenvalue on mean-zero functions.
    pub second_eigenvalue: f64,
    pub method: Method,
    pub iterations: usize,
    pub residual: f64,
    pub group_order: usize,
    pub modulus: u64,
    pub omega_size: usize,
    /// `(1 - lambda)/2 * |omega|`; a convenience value from the discrete
    /// Cheeger relation.
    pub expansion_lower_bound: f64,
    pub generates: bool,
    pub bipartite: bool,
    pub converged: bool,
}

impl SpectralReport {
    pub fn has_gap(&self) -> bool {
        self.lambda < 1.0 - 1e-9
    }
}

/// `T f = (1/|omega|) sum_w f(. w)` on functions on a finite group.
#[derive(Clone, Debug)]
pub struct AveragingOperator {
    group: Arc<GroupTable>,
    omega: Vec<ElementId>,
    // distinct elements of omega with weights multiplicity/|omega|
    weights: Vec<f64>,
    trans: Vec<Vec<ElementId>>,
}

impl AveragingOperator {
    pub fn new(group: Arc<GroupTable>, omega: Vec<ElementId>, exec: Exec) -> Result<Self, SpectralError> {
        if omega.is_empty() {
            return Err(SpectralError::EmptyOmega);
        }
        let mut sorted = omega.clone();
        sorted.sort_unstable();
        let mut inv: Vec<ElementId> = omega.iter().map(|&w| group.inverse(w)).collect();
        inv.sort_unstable();
        if sorted != inv {
            return Err(SpectralError::NotSymmetric);
        }
        let mut distinct: Vec<(ElementId, usize)> = Vec::new();
        for &w in &sorted {
            match distinct.last_mut() {
                Some((x, c)) if *x == w => *c += 1,
                _ => distinct.push((w, 1)),
            }
        }
        let total = omega.len() as f64;
        let weights = distinct.iter().map(|&(_, c)| c as f64 / total).collect();
        let trans = distinct
            .iter()
            .map(|&(w, _)| group.right_translation(w, exec))
            .collect();
        Ok(AveragingOperator {
            group,
            omega,
            weights,
            trans,
        })
    }

    pub fn group(&self) -> &Arc<GroupTable> {
        &self.group
    }

    pub fn omega(&self) -> &[ElementId] {
        &self.omega
    }

    pub fn dimension(&self) -> usize {
        self.group.order()
    }

    pub fn apply(&self, f: &[f64], exec: Exec) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out, exec);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64], exec: Exec) {
        exec.fill(out, |i| {
            let mut acc = 0.0;
            for (t, &w) in self.trans.iter().zip(&self.weights) {
                acc += w * f[t[i] as usize];
            }
            acc
        });
    }

    fn reachable(&self) -> Bitset {
        let mut seen = Bitset::new(self.dimension());
        seen.insert(0);
        let mut frontier = vec![0 as ElementId];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                for t in &self.trans {
                    let j = t[i as usize];
                    if seen.insert(j as usize) {
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        seen
    }

    pub fn is_generating(&self) -> bool {
        self.reachable().is_full()
    }

    /// True when the Cayley graph of the generated subgroup is 2-colourable,
    /// i.e. `-1` is an eigenvalue.
    pub fn is_bipartite(&self) -> bool {
        let n = self.dimension();
        let mut colour: Vec<u8> = vec![2; n];
        colour[0] = 0;
        let mut frontier = vec![0 as ElementId];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                let c = colour[i as usize];
                for t in &self.trans {
                    let j = t[i as usize] as usize;
                    if colour[j] == 2 {
                        colour[j] = 1 - c;
                        next.push(j as ElementId);
                    } else if colour[j] == c {
                        return false;
                    }
                }
            }
            frontier = next;
        }
        true
    }

    /// The `|G| x |G|` matrix of the operator.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (t, &w) in self.trans.iter().zip(&self.weights) {
            for (i, &j) in t.iter().enumerate() {
                m[(i, j as usize)] += w;
            }
        }
        m
    }
}

fn dot(a: &[f64], b: &[f64], exec: Exec) -> f64 {
    exec.sum(a.len(), |i| a[i] * b[i])
}

fn deflate_constant(v: &mut [f64], exec: Exec) {
    let mean = exec.sum(v.len(), |i| v[i]) / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

struct PowerResult {
    value: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Power iteration for the top eigenvalue of `step` on mean-zero functions.
fn power_iterate<F>(n: usize, opts: &SpectralOptions, salt: u64, mut step: F) -> PowerResult
where
    F: FnMut(&[f64], &mut [f64]),
{
    let exec = opts.exec;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate_constant(&mut v, exec);
    let norm = dot(&v, &v, exec).sqrt();
    if norm == 0.0 {
        return PowerResult {
            value: 0.0,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; n];
    let mut best = PowerResult {
        value: 0.0,
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for it in 1..=opts.max_iterations {
        step(&v, &mut w);
        deflate_constant(&mut w, exec);
        let mu = dot(&v, &w, exec);
        let wn = dot(&w, &w, exec).sqrt();
        // |w - mu v|^2 = |w|^2 - mu^2 for unit v
        let residual = (wn * wn - mu * mu).max(0.0).sqrt();
        best = PowerResult {
            value: mu,
            iterations: it,
            residual,
            converged: residual <= opts.tol,
        };
        if best.converged || wn == 0.0 {
            best.converged = true;
            break;
        }
        for (x, &y) in v.iter_mut().zip(&w) {
            *x = y / wn;
        }
    }
    best
}

fn lambda_dense(op: &AveragingOperator) -> (f64, f64) {
    let m = op.dense_matrix();
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    // the constant function carries the top eigenvalue 1
    ev.pop();
    let lambda = ev.iter().fold(0.0f64, |a, &x| a.max(x.abs())).min(1.0);
    let second = ev.last().copied().unwrap_or(0.0).min(1.0);
    (lambda, second)
}

/// `lambda(P_omega; G)` together with the largest signed mean-zero eigenvalue.
pub fn lambda_of(op: &AveragingOperator, opts: &SpectralOptions) -> Result<SpectralReport, SpectralError> {
    let order = op.dimension();
    let generates = op.is_generating();
    let bipartite = op.is_bipartite();
    let method = match opts.policy {
        Policy::Dense => Method::Dense,
        Policy::Iterative => Method::Iterative,
        Policy::Auto if order <= opts.dense_threshold => Method::Dense,
        Policy::Auto => Method::Iterative,
    };
    let mut report = SpectralReport {
        lambda: 0.0,
        second_eigenvalue: 0.0,
        method,
        iterations: 0,
        residual: 0.0,
        group_order: order,
        modulus: op.group.modulus(),
        omega_size: op.omega.len(),
        expansion_lower_bound: 0.0,
        generates,
        bipartite,
        converged: true,
    };
    if !generates {
        log::warn!("omega does not generate the group of order {order}; lambda = 1");
        report.lambda = 1.0;
        report.second_eigenvalue = 1.0;
    } else if order > 1 {
        match method {
            Method::Dense => {
                let (l, s) = lambda_dense(op);
                report.lambda = l;
                report.second_eigenvalue = s;
            }
            Method::Iterative => {
                let exec = opts.exec;
                let mut tmp = vec![0.0; order];
                let sq = power_iterate(order, opts, 1, |v, w| {
                    op.apply_into(v, &mut tmp, exec);
                    op.apply_into(&tmp, w, exec);
                });
                let half = power_iterate(order, opts, 2, |v, w| {
                    op.apply_into(v, w, exec);
                    for (x, &y) in w.iter_mut().zip(v) {
                        *x = 0.5 * (*x + y);
                    }
                });
                report.lambda = sq.value.max(0.0).sqrt().min(1.0);
                report.second_eigenvalue = (2.0 * half.value - 1.0).min(1.0);
                if bipartite {
                    report.lambda = 1.0;
                }
                report.iterations = sq.iterations + half.iterations;
                report.residual = sq.residual.max(half.residual);
                report.converged = sq.converged && half.converged;
            }
        }
    }
    report.expansion_lower_bound = (1.0 - report.lambda) / 2.0 * op.omega.len() as f64;
    if !report.converged {
        return Err(SpectralError::NoConvergence {
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// One instance of the combination lemma: coverage of `G` by conjugates of
/// `H` together with the gap of the conjugated generating set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationRecord {
    /// Gap of `omega_h` computed in the table of `H` itself.
    pub lambda_h: SpectralReport,
    pub covered: bool,
    /// Number of conjugated copies multiplied until the product was `G`.
    pub fold_witness: usize,
    pub omega_prime: Vec<ElementId>,
    pub lambda_prime: SpectralReport,
    /// `lambda_prime < 1` whenever coverage holds and `omega'` generates
    /// non-bipartitely.
    pub conclusion_holds: bool,
}

/// `union of gamma omega gamma^{-1}` over the conjugators, first occurrence order.
pub fn conjugated_omega(g: &GroupTable, omega: &[ElementId], conjugators: &[ElementId]) -> Vec<ElementId> {
    let mut seen = Bitset::new(g.order());
    let mut out = Vec::new();
    for &c in conjugators {
        for &w in omega {
            let x = g.conjugate(c, w);
            if seen.insert(x as usize) {
                out.push(x);
            }
        }
    }
    out
}

/// Cycles through the conjugated copies of `h`, multiplying them in, until
/// the product is all of `g` or a full cycle adds nothing.
/// Returns the number of copies used on success, or the size reached.
pub fn cover_by_conjugates(
    h: &SubsetHandle,
    conjugators: &[ElementId],
    exec: Exec,
) -> Result<usize, (usize, usize)> {
    let g = h.ambient();
    let copies: Vec<SubsetHandle> = conjugators.iter().map(|&c| h.conjugate(c, exec)).collect();
    let order = g.order();
    let Some(first) = copies.first() else {
        return Err((0, order));
    };
    let mut s = first.bits().clone();
    let mut used = 1;
    let mut idle = 0;
    let mut idx = 0;
    while !s.is_full() {
        if idle >= copies.len() {
            return Err((s.count(), order));
        }
        idx = (idx + 1) % copies.len();
        let next = crate::groups::product_sets(g, &s, copies[idx].bits(), exec);
        used += 1;
        // every copy contains the identity, so the chain is increasing
        if next.count() == s.count() {
            idle += 1;
        } else {
            idle = 0;
        }
        s = next;
    }
    Ok(used - idle)
}

pub fn combine_empirical(
    g: &Arc<GroupTable>,
    h: &SubsetHandle,
    omega_h: &[ElementId],
    conjugators: &[ElementId],
    opts: &SpectralOptions,
) -> Result<CombinationRecord, SpectralError> {
    if !h.is_subgroup() {
        return Err(SpectralError::NotASubgroup);
    }
    let mats: Vec<_> = omega_h.iter().map(|&w| g.element(w)).collect();
    let h_table = Arc::new(enumerate_group(&mats, h.order().max(1), opts.exec)?);
    let h_op = AveragingOperator::new(h_table.clone(), h_table.generators().to_vec(), opts.exec)?;
    let lambda_h = lambda_of(&h_op, opts)?;
    let fold_witness = cover_by_conjugates(h, conjugators, opts.exec)
        .map_err(|(reached, order)| SpectralError::CoverageFailed { reached, order })?;
    let omega_prime = conjugated_omega(g, omega_h, conjugators);
    let op = AveragingOperator::new(g.clone(), omega_prime.clone(), opts.exec)?;
    let lambda_prime = lambda_of(&op, opts)?;
    let conclusion_holds = !lambda_prime.generates || lambda_prime.bipartite || lambda_prime.has_gap();
    Ok(CombinationRecord {
        lambda_h,
        covered: true,
        fold_witness,
        omega_prime,
        lambda_prime,
        conclusion_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::ResidueMatrix;
    use crate::groups::DEFAULT_BUDGET;

    pub(crate) fn cyclic(n: u64) -> Arc<GroupTable> {
        // C_n as the unipotent subgroup of SL2(Z/n)
        let u = ResidueMatrix::from_i64(2, n, &[1, 1, 0, 1]).unwrap();
        let ui = ResidueMatrix::from_i64(2, n, &[1, -1, 0, 1]).unwrap();
        Arc::new(enumerate_group(&[u, ui], DEFAULT_BUDGET, Exec::default()).unwrap())
    }

    fn sl2(p: u64, a: i64) -> Arc<GroupTable> {
        let gens: Vec<ResidueMatrix> = [[1, a, 0, 1], [1, -a, 0, 1], [1, 0, a, 1], [1, 0, -a, 1]]
            .iter()
            .map(|e| ResidueMatrix::from_i64(2, p, e).unwrap())
            .collect();
        Arc::new(enumerate_group(&gens, DEFAULT_BUDGET, Exec::default()).unwrap())
    }

    fn op(g: &Arc<GroupTable>) -> AveragingOperator {
        AveragingOperator::new(g.clone(), g.generators().to_vec(), Exec::default()).unwrap()
    }

    #[test]
    fn c3_dense() {
        let r = lambda_of(&op(&cyclic(3)), &SpectralOptions::default()).unwrap();
        assert!((r.lambda - 0.5).abs() < 1e-12);
        assert_eq!(r.method, Method::Dense);
    }

    #[test]
    fn c2_single_generator_is_bipartite() {
        let u = ResidueMatrix::from_i64(2, 2, &[1, 1, 0, 1]).unwrap();
        let g = Arc::new(enumerate_group(&[u], 10, Exec::default()).unwrap());
        let o = op(&g);
        assert!(o.is_bipartite());
        for policy in [Policy::Dense, Policy::Iterative] {
            let r = lambda_of(&o, &SpectralOptions { policy, ..Default::default() }).unwrap();
            assert!((r.lambda - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn not_symmetric_is_rejected() {
        let g = cyclic(5);
        let e = AveragingOperator::new(g.clone(), vec![g.generators()[0]], Exec::default());
        assert!(matches!(e, Err(SpectralError::NotSymmetric)));
    }

    #[test]
    fn non_generating_reports_one() {
        let g = sl2(5, 1);
        let o = AveragingOperator::new(g.clone(), g.generators()[..2].to_vec(), Exec::default()).unwrap();
        let r = lambda_of(&o, &SpectralOptions::default()).unwrap();
        assert!(!r.generates);
        assert_eq!(r.lambda, 1.0);
    }

    #[test]
    fn operator_is_stochastic_and_self_adjoint() {
        let g = sl2(5, 2);
        let o = op(&g);
        let ones = vec![1.0; g.order()];
        assert_eq!(o.apply(&ones, Exec::default()), ones);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u: Vec<f64> = (0..g.order()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..g.order()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = dot(&o.apply(&u, Exec::default()), &v, Exec::default());
            let b = dot(&u, &o.apply(&v, Exec::default()), Exec::default());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_and_iterative_agree() {
        for g in [sl2(5, 2), sl2(7, 1), cyclic(12), cyclic(9)] {
            let o = op(&g);
            let d = lambda_of(&o, &SpectralOptions { policy: Policy::Dense, ..Default::default() }).unwrap();
            let i = lambda_of(&o, &SpectralOptions { policy: Policy::Iterative, ..Default::default() }).unwrap();
            assert!((d.lambda - i.lambda).abs() <= 1e-6, "{} vs {}", d.lambda, i.lambda);
            assert!((d.second_eigenvalue - i.second_eigenvalue).abs() <= 1e-6);
        }
    }

    #[test]
    fn parallel_iteration_is_bitwise_sequential() {
        let o = op(&sl2(7, 2));
        let mk = |exec| SpectralOptions { policy: Policy::Iterative, exec, ..Default::default() };
        let a = lambda_of(&o, &mk(Exec::Sequential)).unwrap();
        let b = lambda_of(&o, &mk(Exec::Parallel)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conjugation_invariance() {
        let g = sl2(5, 2);
        let base = lambda_of(&op(&g), &SpectralOptions::default()).unwrap();
        for c in [3u32, 17, 59, 101] {
            let omega: Vec<ElementId> = g.generators().iter().map(|&w| g.conjugate(c, w)).collect();
            let o = AveragingOperator::new(g.clone(), omega, Exec::default()).unwrap();
            let r = lambda_of(&o, &SpectralOptions::default()).unwrap();
            assert!((r.lambda - base.lambda).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_is_independent_of_generating_set() {
        let g = sl2(5, 1);
        let a = lambda_of(&op(&g), &SpectralOptions::default()).unwrap();
        let other: Vec<ElementId> = {
            let t = g.conjugate(20, g.generators()[0]);
            let mut v = g.generators().to_vec();
            v.push(t);
            v.push(g.inverse(t));
            v
        };
        let b = lambda_of(&AveragingOperator::new(g.clone(), other, Exec::default()).unwrap(), &SpectralOptions::default()).unwrap();
        assert_eq!(a.has_gap(), b.has_gap());
        assert_eq!(a.has_gap(), !a.bipartite);
    }

    #[test]
    fn combine_degenerate_and_central() {
        let g = sl2(5, 2);
        let whole = SubsetHandle::whole(g.clone());
        let rec = combine_empirical(&g, &whole, g.generators(), &[0], &SpectralOptions::default()).unwrap();
        assert_eq!(rec.fold_witness, 1);
        let direct = lambda_of(&op(&g), &SpectralOptions::default()).unwrap();
        assert!((rec.lambda_prime.lambda - direct.lambda).abs() < 1e-9);

        let minus = g.id_of(&ResidueMatrix::from_i64(2, 5, &[-1, 0, 0, -1]).unwrap()).unwrap();
        let center = SubsetHandle::generated(g.clone(), &[minus], Exec::default());
        let r = combine_empirical(&g, &center, &[minus], &[0, 5, 9], &SpectralOptions::default());
        assert!(matches!(r, Err(SpectralError::CoverageFailed { reached: 2, .. })));
    }
}
