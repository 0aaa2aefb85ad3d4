//! Truncated p-adic logarithm and exponential on congruence layers, the grade
//! maps `Psi_k`, and the conjugated word map with its linearization.
//!
//! Series are evaluated on integer lifts modulo `p^{N+s}`, where `s` is the
//! largest denominator valuation among the terms actually used. Each term is
//! then divided exactly by the p-part of its denominator and multiplied by the
//! inverse of the unit part modulo `p^N`.

use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{
    add_mod, big_valuation, checked_pow, inv_mod, is_prime, mul_mod, residue_of, sub_mod,
    valuation, ArithError, PadicTruncMatrix, RationalMatrix, ResidueMatrix,
};
use crate::exec::Exec;
use crate::groups::{enumerate_group, product_sets, GroupError, SubsetHandle};
use crate::modlin::minor_valuation;

#[derive(Debug, Error)]
pub enum PadicError {
    #[error("invalid chart configuration: {0}")]
    BadConfig(String),
    #[error("valuation {valuation} is below the chart depth {c}")]
    NotInChartDomain { valuation: u32, c: u32 },
    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),
    #[error("g - I has valuation {valuation}, expected at least {k}")]
    WrongLevel { valuation: u32, k: u32 },
    #[error("no exponent up to {l_max} covers its layer")]
    NotFound {
        l_max: u32,
        attempts: Vec<LayerAttempt>,
    },
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Working parameters of the charts at one prime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub p: u64,
    /// Working depth `N`.
    pub depth: u32,
    /// Chart depth `c >= c0`.
    pub c: u32,
    pub c0: u32,
}

impl ChartConfig {
    pub fn c0_for(p: u64) -> u32 {
        if p == 2 {
            2
        } else {
            1
        }
    }

    pub fn new(p: u64, depth: u32, c: u32) -> Result<Self, PadicError> {
        if !is_prime(p) {
            return Err(PadicError::BadConfig(format!("{p} is not prime")));
        }
        let c0 = ChartConfig::c0_for(p);
        if c < c0 {
            return Err(PadicError::BadConfig(format!("c = {c} < c0 = {c0}")));
        }
        if depth <= c {
            return Err(PadicError::BadConfig(format!("N = {depth} must exceed c = {c}")));
        }
        if checked_pow(p, depth).is_none() {
            return Err(PadicError::PrecisionExhausted(format!("{p}^{depth} overflows")));
        }
        Ok(ChartConfig { p, depth, c, c0 })
    }

    pub fn modulus(&self) -> u64 {
        self.p.pow(self.depth)
    }

    pub fn with_depth(&self, depth: u32) -> Result<Self, PadicError> {
        ChartConfig::new(self.p, depth, self.c)
    }
}

/// An element of `gl_n(Z/p^N)` read as a Lie algebra element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LieVector {
    x: PadicTruncMatrix,
}

impl LieVector {
    pub fn new(x: PadicTruncMatrix) -> Self {
        LieVector { x }
    }

    pub fn from_coords(p: u64, depth: u32, n: usize, coords: Vec<u64>) -> Result<Self, ArithError> {
        Ok(LieVector {
            x: PadicTruncMatrix::from_entries(p, depth, n, coords)?,
        })
    }

    pub fn zero(p: u64, depth: u32, n: usize) -> Self {
        LieVector {
            x: PadicTruncMatrix::zero(p, depth, n),
        }
    }

    pub fn matrix(&self) -> &PadicTruncMatrix {
        &self.x
    }

    /// Row-major coordinates, length `n^2`.
    pub fn coords(&self) -> &[u64] {
        self.x.entries()
    }

    pub fn valuation(&self) -> u32 {
        self.x.valuation()
    }

    pub fn norm(&self) -> f64 {
        self.x.norm()
    }

    pub fn add(&self, other: &LieVector) -> LieVector {
        LieVector {
            x: self.x.add(&other.x),
        }
    }

    pub fn sub(&self, other: &LieVector) -> LieVector {
        LieVector {
            x: self.x.sub(&other.x),
        }
    }

    pub fn scale(&self, c: u64) -> LieVector {
        let m = self.x.matrix().scale(c);
        LieVector {
            x: PadicTruncMatrix::new(self.x.p(), self.x.depth(), m).expect("same modulus"),
        }
    }
}

fn floor_log(p: u64, mut i: u64) -> u32 {
    let mut k = 0;
    while i >= p {
        i /= p;
        k += 1;
    }
    k
}

fn split_p(mut i: u64, p: u64) -> (u32, u64) {
    let mut v = 0;
    while i % p == 0 {
        i /= p;
        v += 1;
    }
    (v, i)
}

struct Series {
    // terms i = 1..len with (denominator valuation, unit part of denominator, sign)
    terms: Vec<(u32, u64, bool)>,
    slack: u32,
}

fn log_series(p: u64, v: u32, depth: u32) -> Series {
    let mut terms = Vec::new();
    let mut i = 1u64;
    // i*v - floor(log_p i) bounds the term valuation from below and is non-decreasing
    while i * u64::from(v) - u64::from(floor_log(p, i)) < u64::from(depth) {
        let (e, u) = split_p(i, p);
        terms.push((e, u, i % 2 == 0));
        i += 1;
    }
    let slack = terms.iter().map(|t| t.0).max().unwrap_or(0);
    Series { terms, slack }
}

fn exp_series(p: u64, v: u32, depth: u32) -> Series {
    let q = p.pow(depth);
    let mut terms = Vec::new();
    let (mut fv, mut fu) = (0u32, 1u64);
    let mut i = 1u64;
    // v_p(i!) <= (i-1)/(p-1)
    while i * u64::from(v) - (i - 1) / (p - 1) < u64::from(depth) {
        let (e, u) = split_p(i, p);
        fv += e;
        fu = mul_mod(fu, u % q, q);
        terms.push((fv, fu, false));
        i += 1;
    }
    let slack = fv;
    Series { terms, slack }
}

/// `sum_i sign_i y^i / d_i` modulo `p^N` for the integer lift of `y`.
fn eval_series(y: &PadicTruncMatrix, s: &Series) -> Result<PadicTruncMatrix, PadicError> {
    let (p, depth, n) = (y.p(), y.depth(), y.n());
    let q = y.modulus();
    let w = checked_pow(p, depth + s.slack).ok_or_else(|| {
        PadicError::PrecisionExhausted(format!("{p}^{} overflows u64", depth + s.slack))
    })?;
    let lift = ResidueMatrix::new(n, w, y.entries().to_vec())?;
    let mut pow = lift.clone();
    let mut acc = vec![0u64; n * n];
    for (idx, &(e, u, neg)) in s.terms.iter().enumerate() {
        if idx > 0 {
            pow = pow.mul(&lift);
        }
        let pe = p.pow(e);
        let uinv = inv_mod(u % q, q).expect("unit part is prime to p");
        for (a, &t) in acc.iter_mut().zip(pow.entries()) {
            debug_assert_eq!(t % pe, 0, "series term is not divisible by its denominator");
            let term = mul_mod((t / pe) % q, uinv, q);
            *a = if neg { sub_mod(*a, term, q) } else { add_mod(*a, term, q) };
        }
    }
    Ok(PadicTruncMatrix::from_entries(p, depth, n, acc)?)
}

/// `log g = sum_{i>=1} (-1)^{i+1} (g-I)^i / i`, for `g = I mod p^c`.
pub fn trunc_log(g: &PadicTruncMatrix, cfg: &ChartConfig) -> Result<LieVector, PadicError> {
    check_cfg(g, cfg)?;
    let y = g.minus_identity();
    let v = y.valuation();
    if v >= cfg.depth {
        return Ok(LieVector::zero(cfg.p, cfg.depth, g.n()));
    }
    if v < cfg.c {
        return Err(PadicError::NotInChartDomain { valuation: v, c: cfg.c });
    }
    let s = log_series(cfg.p, v, cfg.depth);
    Ok(LieVector::new(eval_series(&y, &s)?))
}

/// `exp x = sum_{i>=0} x^i / i!`, for `x = 0 mod p^c`.
pub fn trunc_exp(x: &LieVector, cfg: &ChartConfig) -> Result<PadicTruncMatrix, PadicError> {
    check_cfg(&x.x, cfg)?;
    let n = x.x.n();
    let v = x.valuation();
    let id = PadicTruncMatrix::identity(cfg.p, cfg.depth, n);
    if v >= cfg.depth {
        return Ok(id);
    }
    if v < cfg.c {
        return Err(PadicError::NotInChartDomain { valuation: v, c: cfg.c });
    }
    let s = exp_series(cfg.p, v, cfg.depth);
    Ok(id.add(&eval_series(&x.x, &s)?))
}

fn check_cfg(x: &PadicTruncMatrix, cfg: &ChartConfig) -> Result<(), PadicError> {
    if x.p() != cfg.p || x.depth() != cfg.depth {
        return Err(PadicError::BadConfig(format!(
            "matrix at {}^{} used with chart {}^{}",
            x.p(),
            x.depth(),
            cfg.p,
            cfg.depth
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// polynomials in matrix entries

/// Polynomial with rational coefficients in the `n^2` entries of a matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    n: usize,
    // (coefficient, exponent of each entry)
    terms: Vec<(BigRational, Vec<u32>)>,
}

impl Polynomial {
    pub fn constant(n: usize, c: BigRational) -> Self {
        Polynomial {
            n,
            terms: vec![(c, vec![0; n * n])],
        }
    }

    pub fn entry(n: usize, i: usize, j: usize) -> Self {
        let mut e = vec![0; n * n];
        e[i * n + j] = 1;
        Polynomial {
            n,
            terms: vec![(BigRational::one(), e)],
        }
    }

    pub fn trace(n: usize) -> Self {
        let terms = (0..n)
            .map(|i| {
                let mut e = vec![0; n * n];
                e[i * n + i] = 1;
                (BigRational::one(), e)
            })
            .collect();
        Polynomial { n, terms }
    }

    /// Leibniz expansion of the determinant.
    pub fn determinant(n: usize) -> Self {
        let mut terms = Vec::new();
        let mut perm: Vec<usize> = (0..n).collect();
        permutations(&mut perm, 0, &mut |p| {
            let inversions = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|&(a, b)| p[a] > p[b])
                .count();
            let mut e = vec![0; n * n];
            for (i, &j) in p.iter().enumerate() {
                e[i * n + j] += 1;
            }
            let c = if inversions % 2 == 0 { 1 } else { -1 };
            terms.push((BigRational::from(BigInt::from(c)), e));
        });
        Polynomial { n, terms }
    }

    pub fn scaled(&self, c: BigRational) -> Self {
        Polynomial {
            n: self.n,
            terms: self.terms.iter().map(|(a, e)| (a * &c, e.clone())).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `d/dx_k`.
    pub fn partial(&self, k: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|(_, e)| e[k] > 0)
            .map(|(a, e)| {
                let mut e2 = e.clone();
                e2[k] -= 1;
                (a * BigRational::from(BigInt::from(e[k])), e2)
            })
            .collect();
        Polynomial { n: self.n, terms }
    }

    /// Least common multiple of the coefficient denominators.
    pub fn denominator(&self) -> BigInt {
        self.terms
            .iter()
            .fold(BigInt::one(), |acc, (a, _)| acc.lcm(a.denom()))
    }

    /// Value at `x` modulo `m` for a polynomial with integer coefficients.
    fn eval_integral(&self, x: &[u64], m: u64) -> u64 {
        let mut acc = 0u64;
        for (a, e) in &self.terms {
            debug_assert!(a.is_integer());
            let mut t = residue_of(&a.to_integer(), m);
            for (k, &pw) in e.iter().enumerate() {
                for _ in 0..pw {
                    t = mul_mod(t, x[k] % m, m);
                }
            }
            acc = add_mod(acc, t, m);
        }
        acc
    }
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Outcome of the exact difference-quotient check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub holds: bool,
    /// Lower bound for `v_p((f(exp(p^n x)) - f(I))/p^n - df_I(x))`.
    pub difference_valuation: u32,
    /// Required lower bound, `n`.
    pub required: u32,
}

/// Checks `|(f(exp(p^n x)) - f(I))/p^n - df_I(x)|_p <= |p^n|_p` exactly.
///
/// `f` is scaled by the lcm `D` of its denominators, `e = v_p(D)`. The
/// quotient is only known modulo `p^{N-n}`, so the verdict needs `N - n >= n + e`.
pub fn derivative_limit_check(
    f: &Polynomial,
    x: &LieVector,
    n: u32,
    cfg: &ChartConfig,
) -> Result<LimitVerdict, PadicError> {
    let p = cfg.p;
    let d = f.denominator();
    let e = big_valuation(&d, p);
    if n < 1 || cfg.depth < 2 * n + e {
        return Err(PadicError::PrecisionExhausted(format!(
            "depth {} cannot resolve n = {n} with denominator valuation {e}",
            cfg.depth
        )));
    }
    let fi = f.scaled(BigRational::from(d));
    let q = cfg.modulus();
    let rest = cfg.depth - n;
    let qr = p.pow(rest);
    let pn = p.pow(n);
    let xn = x.scale(pn);
    let big = trunc_exp(&xn, cfg)?;
    let ident = PadicTruncMatrix::identity(p, cfg.depth, f.n());
    let a = sub_mod(fi.eval_integral(big.entries(), q), fi.eval_integral(ident.entries(), q), q);
    if a % pn != 0 {
        return Err(PadicError::PrecisionExhausted("difference not divisible by p^n".into()));
    }
    let quotient = (a / pn) % qr;
    let mut lin = 0u64;
    for (k, &xk) in x.coords().iter().enumerate() {
        let dk = fi.partial(k).eval_integral(ident.entries(), qr);
        lin = add_mod(lin, mul_mod(dk, xk % qr, qr), qr);
    }
    let dv = valuation(sub_mod(quotient, lin, qr), p, rest);
    Ok(LimitVerdict {
        holds: dv >= n + e,
        difference_valuation: dv.saturating_sub(e),
        required: n,
    })
}

// ---------------------------------------------------------------------------
// grades and the adjoint action

/// `Psi_k(I + p^k x) = x mod p`, for `g` at modulus `p^j`, `j >= k+1`.
pub fn grade_map(g: &ResidueMatrix, p: u64, k: u32) -> Result<LieVector, PadicError> {
    let (pp, j) = crate::arith::prime_power(g.modulus())
        .ok_or(ArithError::BadModulus(g.modulus()))?;
    if pp != p || j < k + 1 || k < 1 {
        return Err(PadicError::BadConfig(format!(
            "grade {k} needs modulus p^(k+1) or deeper, got {}",
            g.modulus()
        )));
    }
    let y = PadicTruncMatrix::new(p, j, g.clone())?.minus_identity();
    let v = y.valuation();
    if v < k {
        return Err(PadicError::WrongLevel { valuation: v, k });
    }
    let pk = p.pow(k);
    let coords = y.entries().iter().map(|&a| (a / pk) % p).collect();
    Ok(LieVector::from_coords(p, 1, g.n(), coords)?)
}

/// `Ad(h) x = h x h^{-1}`, with `h` reduced to the modulus of `x`.
pub fn adjoint_action(h: &ResidueMatrix, x: &LieVector) -> Result<LieVector, PadicError> {
    let q = x.x.modulus();
    let hq = h.reduce(q)?;
    let hinv = hq.inverse()?;
    let m = hq.mul(x.x.matrix()).mul(&hinv);
    Ok(LieVector::new(PadicTruncMatrix::new(x.x.p(), x.x.depth(), m)?))
}

/// `Ad(h)` applied to flattened coordinates modulo `q`; `hinv` must be `h^{-1}`.
pub fn ad_coords(h: &ResidueMatrix, hinv: &ResidueMatrix, coords: &[u64]) -> Vec<u64> {
    let n = h.n();
    let x = ResidueMatrix::new(n, h.modulus(), coords.to_vec()).expect("coordinate length n^2");
    h.mul(&x).mul(hinv).entries().to_vec()
}

// ---------------------------------------------------------------------------
// the conjugated word map

#[derive(Clone, Debug)]
pub struct WordMapOutput {
    /// `log(prod_i gamma_i exp(x_i) gamma_i^{-1})`.
    pub value: LieVector,
    /// First-order term `sum_i Ad(gamma_i) x_i`.
    pub head_term: LieVector,
    /// Columns `Ad(gamma_i) b` for each conjugator and each basis vector `b`,
    /// in flattened `n^2` coordinates.
    pub linearization: Vec<Vec<u64>>,
    /// Minimal valuation over `d1 x d1` minors; `None` when the rank is below `d1`.
    pub minor_valuation: Option<u32>,
    /// `max |minor|_p`, zero when the rank is below `d1`.
    pub minor_norm: f64,
}

pub fn word_map(
    xs: &[LieVector],
    conjugators: &[RationalMatrix],
    basis2: &[Vec<u64>],
    d1: usize,
    cfg: &ChartConfig,
) -> Result<WordMapOutput, PadicError> {
    if xs.len() != conjugators.len() || xs.is_empty() {
        return Err(PadicError::BadConfig("one input per conjugator is required".into()));
    }
    let n = xs[0].x.n();
    let q = cfg.modulus();
    let gam: Vec<ResidueMatrix> = conjugators
        .iter()
        .map(|g| g.reduce_mod(q))
        .collect::<Result<_, _>>()?;
    let gam_inv: Vec<ResidueMatrix> = gam.iter().map(|g| g.inverse()).collect::<Result<_, _>>()?;
    let mut prod = ResidueMatrix::identity(n, q);
    let mut head = LieVector::zero(cfg.p, cfg.depth, n);
    for ((x, g), gi) in xs.iter().zip(&gam).zip(&gam_inv) {
        let ex = trunc_exp(x, cfg)?;
        prod = prod.mul(g).mul(ex.matrix()).mul(gi);
        let ad = ad_coords(g, gi, x.coords());
        head = head.add(&LieVector::from_coords(cfg.p, cfg.depth, n, ad)?);
    }
    let value = trunc_log(&PadicTruncMatrix::new(cfg.p, cfg.depth, prod)?, cfg)?;
    let mut linearization = Vec::with_capacity(gam.len() * basis2.len());
    for (g, gi) in gam.iter().zip(&gam_inv) {
        for b in basis2 {
            linearization.push(ad_coords(g, gi, b));
        }
    }
    let mv = minor_valuation(cfg.p, cfg.depth, n * n, &linearization, d1);
    let minor_norm = mv.map_or(0.0, |v| (cfg.p as f64).powi(-(v as i32)));
    Ok(WordMapOutput {
        value,
        head_term: head,
        linearization,
        minor_valuation: mv,
        minor_norm,
    })
}

// ---------------------------------------------------------------------------
// open-image exponent

/// Inputs of the open-image search at one prime.
#[derive(Clone, Debug)]
pub struct OpenImageSetup {
    pub cfg: ChartConfig,
    pub n: usize,
    /// Unit basis of the ambient Lie lattice, flattened.
    pub basis1: Vec<Vec<u64>>,
    /// Unit basis of the subgroup Lie lattice, flattened.
    pub basis2: Vec<Vec<u64>>,
    /// Conjugators reduced modulo `p^N`.
    pub conjugators: Vec<ResidueMatrix>,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAttempt {
    pub l: u32,
    /// `|Gamma_1[p^l] / Gamma_1[p^N]|`, or the predicted size when skipped.
    pub layer_order: u64,
    pub image_order: u64,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenImageReport {
    pub l: u32,
    pub attempts: Vec<LayerAttempt>,
}

/// Least `l` in `c..=l_max` such that the layer `Gamma_1[p^l]` modulo `p^N`
/// equals `prod_i gamma_i exp(p^l g_2) gamma_i^{-1}` modulo `p^N`.
///
/// The layer is the group generated by `exp(p^l b)` over the ambient basis;
/// layers whose predicted order exceeds the budget are skipped.
pub fn open_image_exponent(
    setup: &OpenImageSetup,
    l_max: u32,
    exec: Exec,
) -> Result<OpenImageReport, PadicError> {
    let cfg = setup.cfg;
    if l_max >= cfg.depth {
        return Err(PadicError::BadConfig(format!("L_max = {l_max} must be below N = {}", cfg.depth)));
    }
    let (p, q, n) = (cfg.p, cfg.modulus(), setup.n);
    let d1 = setup.basis1.len() as u32;
    let mut attempts = Vec::new();
    for l in cfg.c..=l_max {
        let predicted = checked_pow(p, d1 * (cfg.depth - l)).unwrap_or(u64::MAX);
        if predicted > setup.budget as u64 {
            attempts.push(LayerAttempt {
                l,
                layer_order: predicted,
                image_order: 0,
                skipped: true,
            });
            continue;
        }
        let pl = p.pow(l);
        let exp_of = |b: &Vec<u64>| -> Result<ResidueMatrix, PadicError> {
            let x = LieVector::from_coords(p, cfg.depth, n, b.iter().map(|&a| mul_mod(a, pl, q)).collect())?;
            Ok(trunc_exp(&x, &cfg)?.into_matrix())
        };
        let mut gens1 = Vec::new();
        for b in &setup.basis1 {
            let g = exp_of(b)?;
            gens1.push(g.inverse()?);
            gens1.push(g);
        }
        let layer = match enumerate_group(&gens1, setup.budget, exec) {
            Ok(t) => Arc::new(t),
            Err(GroupError::BudgetExceeded { .. }) => {
                attempts.push(LayerAttempt {
                    l,
                    layer_order: predicted,
                    image_order: 0,
                    skipped: true,
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut image: Option<SubsetHandle> = None;
        let mut inside = true;
        for (g, gi) in setup.conjugators.iter().map(|g| (g, g.inverse())) {
            let gi = gi?;
            let mut ids = Vec::new();
            for b in &setup.basis2 {
                let y = g.mul(&exp_of(b)?).mul(&gi);
                match layer.id_of(&y) {
                    Some(id) => ids.push(id),
                    None => inside = false,
                }
            }
            let copy = SubsetHandle::generated(layer.clone(), &ids, exec);
            image = Some(match image {
                None => copy,
                Some(s) => SubsetHandle::new(
                    layer.clone(),
                    product_sets(&layer, s.bits(), copy.bits(), exec),
                ),
            });
        }
        let image_order = image.as_ref().map_or(0, |s| s.order()) as u64;
        let covered = inside && image_order == layer.order() as u64;
        attempts.push(LayerAttempt {
            l,
            layer_order: layer.order() as u64,
            image_order,
            skipped: false,
        });
        if covered {
            return Ok(OpenImageReport { l, attempts });
        }
    }
    Err(PadicError::NotFound { l_max, attempts })
}

/// Flattened standard basis `E_ij` of `gl_n`.
pub fn standard_basis(n: usize) -> Vec<Vec<u64>> {
    (0..n * n)
        .map(|k| {
            let mut v = vec![0; n * n];
            v[k] = 1;
            v
        })
        .collect()
}

/// Flattened unit basis of `sl_n`: off-diagonal `E_ij` then `E_ii - E_{i+1,i+1}`.
pub fn sl_basis(n: usize, q: u64) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut v = vec![0; n * n];
                v[i * n + j] = 1;
                out.push(v);
            }
        }
    }
    for i in 0..n.saturating_sub(1) {
        let mut v = vec![0; n * n];
        v[i * n + i] = 1;
        v[(i + 1) * n + i + 1] = q - 1;
        out.push(v);
    }
    out
}
