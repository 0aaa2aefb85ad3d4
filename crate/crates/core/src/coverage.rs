//! Bounded-generation certificates: products of conjugated subgroups, fold
//! coverage, congruence-layer coverage and grade generation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{checked_pow, ArithError, RationalMatrix, ResidueMatrix};
use crate::bitset::Bitset;
use crate::exec::Exec;
use crate::groups::{
    congruence_kernel, enumerate_group, fold_chain, product_sets, ElementId, GroupError,
    SubsetHandle,
};
use crate::modlin::Echelon;
use crate::padic::{ad_coords, grade_map, trunc_exp, ChartConfig, LieVector, PadicError};
use crate::words::word_string;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("greedy search stalled at {} of {} elements", certificate.image_sizes.last().copied().unwrap_or(0), certificate.target)]
    Stalled { certificate: Box<CoverCertificate> },
    #[error("layer of predicted order {predicted} exceeds the budget {budget}")]
    BudgetExceeded { predicted: u64, budget: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Padic(#[from] PadicError),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    /// Append the conjugated copy for this word.
    Conjugate(String),
    /// `S -> S S^{-1} S`.
    Triple,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    /// Full group tables at the working modulus.
    Exact,
    /// Layers generated inside the congruence kernel; sufficient only.
    KernelRestricted,
    /// Layers generated by sampled congruence elements.
    Sampled,
}

/// Product of conjugated copies of a subgroup and its coverage history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverCertificate {
    pub modulus: u64,
    /// Conjugator words, identity first, in product order.
    pub words: Vec<String>,
    pub ids: Vec<ElementId>,
    /// Number of conjugated copies in the product.
    pub fold: usize,
    pub covered: bool,
    /// `|S|` after each accepted step.
    pub image_sizes: Vec<usize>,
    pub steps: Vec<Step>,
    pub target: usize,
    /// Least congruence level found covered, for layer checks.
    pub layer_reached: Option<u32>,
    pub method: Option<CheckMethod>,
}

/// Limits of the greedy search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyBudget {
    pub max_word_length: usize,
    pub max_candidates: usize,
    pub max_conjugators: usize,
}

impl Default for GreedyBudget {
    fn default() -> Self {
        GreedyBudget {
            max_word_length: 4,
            max_candidates: 512,
            max_conjugators: 64,
        }
    }
}

/// Greedy growth of `S = H g_2 H g_2^{-1} ...` inside `H`'s ambient group.
///
/// Each step appends the first shortlex candidate maximising `|S gamma H gamma^{-1}|`.
/// When no candidate grows `S`, the tripling move `S S^{-1} S` is tried.
pub fn greedy_conjugators_modp(
    h: &SubsetHandle,
    budget: &GreedyBudget,
    exec: Exec,
) -> Result<CoverCertificate, CoverageError> {
    let g = h.ambient().clone();
    let order = g.order();
    let mut candidates: Vec<(ElementId, Vec<usize>)> = g
        .shortlex_words(budget.max_word_length)
        .into_iter()
        .filter(|(id, _)| *id != 0)
        .collect();
    candidates.truncate(budget.max_candidates);

    // conjugated copies, deduplicated
    let mut copy_index: FxHashMap<Bitset, usize> = FxHashMap::default();
    let mut copies: Vec<Bitset> = Vec::new();
    let mut cand_copy = Vec::with_capacity(candidates.len());
    for (id, _) in &candidates {
        let c = h.conjugate(*id, exec).bits().clone();
        let k = *copy_index.entry(c.clone()).or_insert_with(|| {
            copies.push(c);
            copies.len() - 1
        });
        cand_copy.push(k);
    }

    let mut s = h.bits().clone();
    let mut cert = CoverCertificate {
        modulus: g.modulus(),
        words: vec![String::new()],
        ids: vec![0],
        fold: 1,
        covered: s.is_full(),
        image_sizes: vec![s.count()],
        steps: Vec::new(),
        target: order,
        layer_reached: None,
        method: Some(CheckMethod::Exact),
    };
    let copy_of = |ids: &[ElementId]| -> Vec<Bitset> {
        ids.iter().map(|&i| h.conjugate(i, exec).bits().clone()).collect()
    };
    while !s.is_full() {
        if cert.ids.len() >= budget.max_conjugators {
            return Err(CoverageError::Stalled { certificate: Box::new(cert) });
        }
        let mut sizes: FxHashMap<usize, usize> = FxHashMap::default();
        let mut best: Option<(usize, usize, Bitset)> = None;
        for (ci, &k) in cand_copy.iter().enumerate() {
            if sizes.contains_key(&k) {
                continue;
            }
            let prod = product_sets(&g, &s, &copies[k], exec);
            let size = prod.count();
            sizes.insert(k, size);
            if best.as_ref().map_or(true, |b| size > b.1) {
                best = Some((ci, size, prod));
            }
            if size == order {
                break;
            }
        }
        match best {
            Some((ci, size, prod)) if size > s.count() => {
                let (id, w) = &candidates[ci];
                cert.ids.push(*id);
                cert.words.push(word_string(w));
                cert.steps.push(Step::Conjugate(word_string(w)));
                s = prod;
            }
            _ => {
                // S^{-1} is the product of the same copies in reverse order
                let s_inv = SubsetHandle::new(g.clone(), s.clone()).inverse_set();
                let t = product_sets(&g, &product_sets(&g, &s, s_inv.bits(), exec), &s, exec);
                if t.count() <= s.count() {
                    return Err(CoverageError::Stalled { certificate: Box::new(cert) });
                }
                let fwd = cert.ids.clone();
                let fwd_w = cert.words.clone();
                let mut ids = fwd.clone();
                let mut words = fwd_w.clone();
                ids.extend(fwd.iter().rev().skip(1));
                words.extend(fwd_w.iter().rev().skip(1).cloned());
                ids.extend(fwd.iter().skip(1));
                words.extend(fwd_w.iter().skip(1).cloned());
                cert.ids = ids;
                cert.words = words;
                cert.steps.push(Step::Triple);
                s = t;
            }
        }
        cert.image_sizes.push(s.count());
        cert.fold = cert.ids.len();
    }
    cert.covered = true;
    debug_assert_eq!(
        {
            let c = copy_of(&cert.ids);
            c[1..].iter().fold(c[0].clone(), |acc, x| product_sets(&g, &acc, x, exec))
        }
        .count(),
        order
    );
    Ok(cert)
}

/// Product of the conjugated copies of `h` in the order of `ids`.
pub fn product_of_copies(h: &SubsetHandle, ids: &[ElementId], exec: Exec) -> Bitset {
    let g = h.ambient();
    let mut acc: Option<Bitset> = None;
    for &i in ids {
        let c = h.conjugate(i, exec);
        acc = Some(match acc {
            None => c.bits().clone(),
            Some(a) => product_sets(g, &a, c.bits(), exec),
        });
    }
    acc.unwrap_or_else(|| Bitset::from_indices(g.order(), [0]))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Least `C <= C_max` with `prod_C S = G`; `None` means not covered.
    pub min_fold: Option<usize>,
    /// `|prod_c S|` for `c = 1, 2, ...` as computed.
    pub sizes: Vec<usize>,
    /// Whether `C <= 3` suffices.
    pub triple_covers: bool,
}

/// Least `C` with `S^C = G`, by iterated products with early exit.
pub fn fold_cover_check(s: &SubsetHandle, c_max: usize, exec: Exec) -> FoldReport {
    let mut sizes = Vec::new();
    let mut min_fold = None;
    let has_identity = s.contains(0);
    fold_chain(s, c_max, exec, |c, bits| {
        let size = bits.count();
        // with the identity in S the chain increases; equality is a fixed point
        let stuck = has_identity && sizes.last() == Some(&size);
        sizes.push(size);
        if bits.is_full() {
            min_fold = Some(c);
            return false;
        }
        !stuck
    });
    FoldReport {
        min_fold,
        triple_covers: min_fold.is_some_and(|c| c <= 3),
        sizes,
    }
}

// ---------------------------------------------------------------------------
// congruence layers

/// Data for the congruence coverage check at one prime.
#[derive(Clone, Debug)]
pub struct CongruenceInput<'a> {
    pub p: u64,
    /// Extra depth `M`: the check runs modulo `p^{N+M}`.
    pub extra: u32,
    pub omega1: &'a [RationalMatrix],
    pub omega2: &'a [RationalMatrix],
    /// Conjugators in product order, identity first.
    pub conjugators: &'a [RationalMatrix],
    /// Unit bases of the two Lie lattices, valid modulo `p^M`.
    pub basis1: &'a [Vec<u64>],
    pub basis2: &'a [Vec<u64>],
    /// Order of the ambient group modulo `p`, when known, to predict table sizes.
    pub order_mod_p: Option<usize>,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub level: u32,
    pub holds: bool,
    pub method: CheckMethod,
    pub layer_order: usize,
    pub covered_order: usize,
}

fn reduce_all(ms: &[RationalMatrix], q: u64) -> Result<Vec<ResidueMatrix>, ArithError> {
    ms.iter().map(|g| g.reduce_mod(q)).collect()
}

fn with_inverses(ms: Vec<ResidueMatrix>) -> Result<Vec<ResidueMatrix>, ArithError> {
    let mut out = Vec::with_capacity(2 * ms.len());
    for g in ms {
        out.push(g.inverse()?);
        out.push(g);
    }
    Ok(out)
}

/// Whether `Gamma_1[p^N]` lies in `prod_i gamma_i Gamma_2 gamma_i^{-1}` modulo
/// `p^{N+M}`.
///
/// With full tables the check is exact. Otherwise the layer and the
/// conjugated copies of `Gamma_2[p^N]` are generated by `exp(p^N b)` over the
/// lattice bases; covering by these smaller copies is sufficient.
pub fn congruence_layer_check(
    input: &CongruenceInput<'_>,
    level: u32,
    exec: Exec,
) -> Result<LayerVerdict, CoverageError> {
    let p = input.p;
    let depth = level + input.extra;
    let q = checked_pow(p, depth).ok_or(PadicError::PrecisionExhausted("modulus overflow".into()))?;
    let n = input.omega1.first().map_or(0, |g| g.n());
    let d1 = input.basis1.len() as u32;
    let predicted_full = input
        .order_mod_p
        .map(|o| (o as u64).saturating_mul(checked_pow(p, d1 * (depth - 1)).unwrap_or(u64::MAX)));
    let gammas = reduce_all(input.conjugators, q)?;
    let try_exact = predicted_full.map_or(true, |o| o <= input.budget as u64);
    if try_exact {
        match enumerate_group(&reduce_all(input.omega1, q)?, input.budget, exec) {
            Ok(t) => {
                let t = Arc::new(t);
                let ids2: Vec<ElementId> = reduce_all(input.omega2, q)?
                    .iter()
                    .map(|g| t.id_of(g).ok_or(GroupError::NotASubgroup("omega2 outside omega1".into())))
                    .collect::<Result<_, _>>()?;
                let h = SubsetHandle::generated(t.clone(), &ids2, exec);
                let gids: Vec<ElementId> = gammas
                    .iter()
                    .map(|g| t.id_of(g).ok_or(GroupError::NotASubgroup("conjugator outside the group".into())))
                    .collect::<Result<_, _>>()?;
                let prod = product_of_copies(&h, &gids, exec);
                let layer = congruence_kernel(&t, level, exec)?;
                return Ok(LayerVerdict {
                    level,
                    holds: layer.members.bits().is_subset(&prod),
                    method: CheckMethod::Exact,
                    layer_order: layer.order(),
                    covered_order: {
                        let mut b = layer.members.bits().clone();
                        b.intersect_with(&prod);
                        b.count()
                    },
                });
            }
            Err(GroupError::BudgetExceeded { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let predicted = checked_pow(p, d1 * input.extra).unwrap_or(u64::MAX);
    if level < ChartConfig::c0_for(p) || predicted > input.budget as u64 {
        return Err(CoverageError::BudgetExceeded {
            predicted: predicted_full.unwrap_or(predicted),
            budget: input.budget,
        });
    }
    let cfg = ChartConfig::new(p, depth, level)?;
    let pl = p.pow(level);
    let exp_of = |b: &Vec<u64>| -> Result<ResidueMatrix, CoverageError> {
        let coords = b.iter().map(|&a| (a % q) * pl % q).collect();
        Ok(trunc_exp(&LieVector::from_coords(p, depth, n, coords)?, &cfg)?.into_matrix())
    };
    let gens1 = with_inverses(input.basis1.iter().map(exp_of).collect::<Result<_, _>>()?)?;
    let layer = Arc::new(enumerate_group(&gens1, input.budget, exec)?);
    let base2: Vec<ResidueMatrix> = input.basis2.iter().map(exp_of).collect::<Result<_, _>>()?;
    let mut prod: Option<Bitset> = None;
    let mut inside = true;
    for g in &gammas {
        let gi = g.inverse()?;
        let mut ids = Vec::new();
        for b in &base2 {
            match layer.id_of(&g.mul(b).mul(&gi)) {
                Some(id) => ids.push(id),
                None => inside = false,
            }
        }
        let copy = SubsetHandle::generated(layer.clone(), &ids, exec);
        prod = Some(match prod {
            None => copy.bits().clone(),
            Some(a) => product_sets(&layer, &a, copy.bits(), exec),
        });
    }
    let covered_order = prod.as_ref().map_or(1, |b| b.count());
    Ok(LayerVerdict {
        level,
        holds: inside && covered_order == layer.order(),
        method: CheckMethod::KernelRestricted,
        layer_order: layer.order(),
        covered_order,
    })
}

/// Runs the layer check for `level = 0..=max_level`; the certificate records
/// the least level that holds.
pub fn congruence_cover_check(
    input: &CongruenceInput<'_>,
    words: &[String],
    max_level: u32,
    exec: Exec,
) -> Result<(CoverCertificate, Vec<LayerVerdict>), CoverageError> {
    let mut verdicts = Vec::new();
    let mut last_err = None;
    for level in 0..=max_level {
        match congruence_layer_check(input, level, exec) {
            Ok(v) => verdicts.push(v),
            Err(e @ CoverageError::BudgetExceeded { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if verdicts.is_empty() {
        return Err(last_err.expect("at least one level was attempted"));
    }
    let reached = verdicts.iter().find(|v| v.holds);
    let cert = CoverCertificate {
        modulus: checked_pow(input.p, max_level + input.extra).unwrap_or(0),
        words: words.to_vec(),
        ids: Vec::new(),
        fold: input.conjugators.len(),
        covered: reached.is_some(),
        image_sizes: verdicts.iter().map(|v| v.covered_order).collect(),
        steps: Vec::new(),
        target: verdicts.last().map_or(0, |v| v.layer_order),
        layer_reached: reached.map(|v| v.level),
        method: reached.or(verdicts.last()).map(|v| v.method),
    };
    Ok((cert, verdicts))
}

// ---------------------------------------------------------------------------
// grade generation

#[derive(Clone, Debug)]
pub struct GradeInput<'a> {
    pub p: u64,
    pub k: u32,
    pub omega1: &'a [RationalMatrix],
    pub omega2: &'a [RationalMatrix],
    /// Conjugators, identity first.
    pub conjugators: &'a [RationalMatrix],
    pub samples: usize,
    pub seed: u64,
    pub budget: usize,
    /// Predicted order of the ambient group modulo `p^{k+1}`; a table is not
    /// attempted when it exceeds the budget.
    pub predicted_order: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeVerdict {
    pub k: u32,
    /// `prod_i gamma_i L_2 gamma_i^{-1} = L_1` as sets modulo `p^{k+1}`.
    pub set_form: bool,
    /// `sum_i Ad(gamma_i) Psi_k(L_2) = Psi_k(L_1)` over `F_p`.
    pub psi_form: bool,
    pub agree: bool,
    pub method: CheckMethod,
    pub layer_order: usize,
    pub image_order: usize,
    pub psi_rank: usize,
    pub target_rank: usize,
    /// `Psi_k` of an element of `L_1` outside the image, on failure.
    pub witness: Option<Vec<u64>>,
}

/// Elements of `Gamma[p^k]` modulo `p^{k+1}` generating that layer.
fn layer_generators(
    gens: &[RationalMatrix],
    p: u64,
    k: u32,
    samples: usize,
    seed: u64,
    budget: usize,
    try_exact: bool,
    exec: Exec,
) -> Result<(Vec<ResidueMatrix>, CheckMethod), CoverageError> {
    let q = p.pow(k + 1);
    let red = reduce_all(gens, q)?;
    let table = if try_exact {
        enumerate_group(&red, budget, exec)
    } else {
        Err(GroupError::BudgetExceeded { budget })
    };
    match table {
        Ok(t) => {
            let t = Arc::new(t);
            let layer = congruence_kernel(&t, k, exec)?;
            Ok((layer.members.ids().iter().map(|&i| t.element(i)).collect(), CheckMethod::Exact))
        }
        Err(GroupError::BudgetExceeded { .. }) => {
            // w^{o(w)} with o(w) the order of w modulo p^k
            let pk = p.pow(k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::new();
            let mut points = red.clone();
            for _ in 0..samples {
                let mut w = ResidueMatrix::identity(red[0].n(), q);
                for _ in 0..16 {
                    w = w.mul(&red[rng.gen_range(0..red.len())]);
                }
                points.push(w);
            }
            for w in points {
                let wk = w.reduce(pk)?;
                let mut x = wk.clone();
                let mut o = 1u64;
                while !x.is_identity() {
                    x = x.mul(&wk);
                    o += 1;
                }
                let e = w.pow(o);
                if !e.is_identity() {
                    out.push(e);
                }
            }
            Ok((out, CheckMethod::Sampled))
        }
        Err(e) => Err(e.into()),
    }
}

/// Elements whose grades form an `F_p` basis of the span of all grades.
fn psi_basis(elems: &[ResidueMatrix], p: u64, k: u32) -> Result<(Vec<ResidueMatrix>, Echelon), CoverageError> {
    let n = elems.first().map_or(0, |g| g.n());
    let mut ech = Echelon::new(p, 1, n * n);
    let mut picked = Vec::new();
    for g in elems {
        let v = grade_map(g, p, k)?.coords().to_vec();
        if ech.insert(v) {
            picked.push(g.clone());
        }
    }
    Ok((picked, ech))
}

/// Checks grade generation at level `k` in both forms.
///
/// Layers come from full tables at `p^{k+1}` when they fit the budget and
/// from sampled congruence elements otherwise. Group generators of each layer
/// are chosen by grade rank to keep the closures small; the set form is then
/// a plain product of subgroups inside the closure of all layer elements.
pub fn grade_generation_check(input: &GradeInput<'_>, exec: Exec) -> Result<GradeVerdict, CoverageError> {
    let (p, k) = (input.p, input.k);
    if k < 1 {
        return Err(PadicError::BadConfig("grade level must be at least 1".into()).into());
    }
    let q = p.pow(k + 1);
    let try_exact = input.predicted_order.map_or(true, |o| o <= input.budget as u64);
    let (l1, m1) = layer_generators(input.omega1, p, k, input.samples, input.seed, input.budget, try_exact, exec)?;
    let (l2, m2) = layer_generators(input.omega2, p, k, input.samples, input.seed ^ 1, input.budget, true, exec)?;
    let method = if m1 == CheckMethod::Exact && m2 == CheckMethod::Exact {
        CheckMethod::Exact
    } else {
        CheckMethod::Sampled
    };
    let (b1, v1) = psi_basis(&l1, p, k)?;
    let (b2, _) = psi_basis(&l2, p, k)?;
    let n = input.omega1.first().map_or(0, |g| g.n());
    let gammas = reduce_all(input.conjugators, q)?;

    // Psi form
    let mut w = Echelon::new(p, 1, n * n);
    let gp: Vec<(ResidueMatrix, ResidueMatrix)> = gammas
        .iter()
        .map(|g| {
            let r = g.reduce(p)?;
            let ri = r.inverse()?;
            Ok((r, ri))
        })
        .collect::<Result<_, ArithError>>()?;
    for (g, gi) in &gp {
        for e in &b2 {
            let v = grade_map(e, p, k)?;
            w.insert(ad_coords(g, gi, v.coords()));
        }
    }
    let w_in_v1 = w.rows().iter().all(|r| v1.contains(r));
    let psi_form = w_in_v1 && w.rank() == v1.rank();
    let mut witness = v1.rows().iter().find(|r| !w.contains(r)).cloned();

    // set form
    let mut conj2: Vec<Vec<ResidueMatrix>> = Vec::new();
    let mut all = b1.clone();
    for g in &gammas {
        let gi = g.inverse()?;
        let c: Vec<ResidueMatrix> = b2.iter().map(|e| g.mul(e).mul(&gi)).collect();
        all.extend(c.iter().cloned());
        conj2.push(c);
    }
    let identity = ResidueMatrix::identity(n, q);
    if all.is_empty() {
        all.push(identity);
    }
    let amb = Arc::new(enumerate_group(&with_inverses(all)?, input.budget, exec)?);
    let ids_of = |ms: &[ResidueMatrix]| -> Vec<ElementId> { ms.iter().filter_map(|m| amb.id_of(m)).collect() };
    let layer1 = SubsetHandle::generated(amb.clone(), &ids_of(&b1), exec);
    let mut image: Option<Bitset> = None;
    for c in &conj2 {
        let copy = SubsetHandle::generated(amb.clone(), &ids_of(c), exec);
        image = Some(match image {
            None => copy.bits().clone(),
            Some(a) => product_sets(&amb, &a, copy.bits(), exec),
        });
    }
    let image = image.unwrap_or_else(|| Bitset::from_indices(amb.order(), [0]));
    let set_form = image == *layer1.bits();
    if !set_form && witness.is_none() {
        let outside = layer1.bits().difference(&image).iter().next().or_else(|| image.difference(layer1.bits()).iter().next());
        witness = outside.map(|i| grade_map(&amb.element(i as ElementId), p, k).map(|v| v.coords().to_vec())).transpose()?;
    }
    Ok(GradeVerdict {
        k,
        set_form,
        psi_form,
        agree: set_form == psi_form,
        method,
        layer_order: layer1.order(),
        image_order: image.count(),
        psi_rank: w.rank(),
        target_rank: v1.rank(),
        witness: if set_form && psi_form { None } else { witness },
    })
}
