//! Study configuration, per-prime orchestration, persistence of study files
//! and the on-disk group-table cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arith::{checked_pow, is_prime, ArithError, RationalMatrix, ResidueMatrix};
use crate::coverage::{
    congruence_cover_check, fold_cover_check, greedy_conjugators_modp, grade_generation_check,
    CongruenceInput, CoverageError, GradeInput, GreedyBudget, Step,
};
use crate::exec::Exec;
use crate::groups::{enumerate_group, ElementId, GroupError, GroupTable, SubsetHandle, DEFAULT_BUDGET};
use crate::lie::{adjoint_saturate, lie_lattice_from_generators, select_conjugators, LieError, SpanLattice};
use crate::padic::{open_image_exponent, ChartConfig, OpenImageSetup, PadicError};
use crate::spectral::{conjugated_omega, lambda_of, AveragingOperator, SpectralOptions, SpectralReport};
use crate::words::{evaluate, parse_word, WordSource};

/// Version tag carried by every study-file line.
pub const STUDY_FORMAT: &str = "SGIC1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("study file has format {found:?}, expected {STUDY_FORMAT}")]
    FormatVersionMismatch { found: String },
    #[error("corrupt record on line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

fn one() -> i64 {
    1
}

/// Integer rows with one global denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixLiteral {
    pub rows: Vec<Vec<i64>>,
    #[serde(default = "one")]
    pub denominator: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Depths {
    /// Chart depth; raised to 2 at `p = 2`.
    pub c: u32,
    /// Deepest congruence level scanned, also the deepest grade checked.
    #[serde(rename = "N")]
    pub n: u32,
    /// Extra depth for congruence checks.
    #[serde(rename = "M")]
    pub m: u32,
    /// Deepest layer tried for the open-image exponent.
    #[serde(rename = "L_max")]
    pub l_max: u32,
    /// Working depth of the Lie lattices.
    pub lie: u32,
}

impl Default for Depths {
    fn default() -> Self {
        Depths { c: 1, n: 1, m: 1, l_max: 2, lie: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub enumeration: usize,
    /// Longest word tried as a Lie conjugator.
    pub word_length: usize,
    pub fold_c_max: usize,
    pub conjugator_limit: usize,
    pub lie_samples: usize,
    pub greedy_word_length: usize,
    pub greedy_candidates: usize,
    pub greedy_conjugators: usize,
    pub grade_samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        let g = GreedyBudget::default();
        Budgets {
            enumeration: DEFAULT_BUDGET,
            word_length: 3,
            fold_c_max: 24,
            conjugator_limit: 8,
            lie_samples: 48,
            greedy_word_length: g.max_word_length,
            greedy_candidates: g.max_candidates,
            greedy_conjugators: g.max_conjugators,
            grade_samples: 48,
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}

fn default_q0() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub n0: usize,
    #[serde(default = "default_q0")]
    pub q0: u64,
    pub primes: Vec<u64>,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    /// Hypotheses declared by the user, copied into the summary unchecked.
    #[serde(default)]
    pub assertions: Vec<String>,
    #[serde(default)]
    pub depths: Depths,
    #[serde(default)]
    pub budgets: Budgets,
    pub omega1: Vec<MatrixLiteral>,
    pub omega2: Vec<MatrixLiteral>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// A validated configuration with its generating sets.
#[derive(Clone, Debug)]
pub struct Study {
    pub config: StudyConfig,
    pub omega1: Vec<RationalMatrix>,
    pub omega2: Vec<RationalMatrix>,
}

fn q0_primes(q0: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut q = q0;
    let mut d = 2;
    while d * d <= q {
        if q % d == 0 {
            out.push(d);
            while q % d == 0 {
                q /= d;
            }
        }
        d += 1;
    }
    if q > 1 {
        out.push(q);
    }
    out
}

impl Study {
    pub fn new(config: StudyConfig) -> Result<Self, PipelineError> {
        let bad = |m: String| PipelineError::Config(m);
        if config.q0 == 0 {
            return Err(bad("q0 must be positive".into()));
        }
        let support = q0_primes(config.q0);
        let parse = |lits: &[MatrixLiteral], which: &str| -> Result<Vec<RationalMatrix>, PipelineError> {
            if lits.is_empty() {
                return Err(bad(format!("{which} is empty")));
            }
            lits.iter()
                .enumerate()
                .map(|(i, l)| {
                    if l.rows.len() != config.n0 || l.rows.iter().any(|r| r.len() != config.n0) {
                        return Err(bad(format!("{which}[{i}] is not {0}x{0}", config.n0)));
                    }
                    let g = RationalMatrix::from_rows(&l.rows, l.denominator)?;
                    if g.det() == num_rational::BigRational::from_integer(0.into()) {
                        return Err(bad(format!("{which}[{i}] is singular")));
                    }
                    if let Some(p) = g.denom_support().into_iter().find(|p| !support.contains(p)) {
                        return Err(bad(format!("{which}[{i}] has denominator prime {p} not dividing q0")));
                    }
                    Ok(g)
                })
                .collect()
        };
        let omega1 = parse(&config.omega1, "omega1")?;
        let omega2 = parse(&config.omega2, "omega2")?;
        for (name, set) in [("omega1", &omega1), ("omega2", &omega2)] {
            for (i, g) in set.iter().enumerate() {
                if !set.contains(&g.inverse()?) {
                    return Err(bad(format!("{name} is not symmetric: inverse of {name}[{i}] missing")));
                }
            }
        }
        if let Some(i) = omega2.iter().position(|g| !omega1.contains(g)) {
            return Err(bad(format!("omega2[{i}] is not in omega1")));
        }
        for &p in &config.primes {
            if !is_prime(p) {
                return Err(bad(format!("{p} is not prime")));
            }
        }
        Ok(Study { config, omega1, omega2 })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Study::new(StudyConfig::load(path)?)
    }
}

/// Settings that are not part of a study's identity.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub exec: Exec,
    pub cache_dir: Option<PathBuf>,
    /// Overrides the configured enumeration budget.
    pub max_elements: Option<usize>,
    /// Overrides the configured tolerance.
    pub tol: Option<f64>,
}

impl RunOptions {
    fn budget(&self, cfg: &StudyConfig) -> usize {
        self.max_elements.unwrap_or(cfg.budgets.enumeration)
    }

    fn spectral(&self, cfg: &StudyConfig) -> SpectralOptions {
        SpectralOptions {
            tol: self.tol.unwrap_or(cfg.tolerance),
            exec: self.exec,
            ..SpectralOptions::default()
        }
    }
}

// ---------------------------------------------------------------------------
// group-table cache

fn cache_key(gens: &[ResidueMatrix]) -> String {
    let mut h = Sha256::new();
    h.update(b"SGGT1");
    if let Some(g) = gens.first() {
        h.update((g.n() as u64).to_be_bytes());
        h.update(g.modulus().to_be_bytes());
    }
    for g in gens {
        h.update(g.encoding());
    }
    hex::encode(h.finalize())
}

/// `enumerate_group`, reading and writing `<dir>/<sha256>.sggt` when a cache
/// directory is given. A corrupt cache file is replaced.
pub fn cached_enumerate(
    gens: &[ResidueMatrix],
    budget: usize,
    cache_dir: Option<&Path>,
    exec: Exec,
) -> Result<GroupTable, GroupError> {
    let Some(dir) = cache_dir else {
        return enumerate_group(gens, budget, exec);
    };
    let path = dir.join(format!("{}.sggt", cache_key(gens)));
    if path.exists() {
        match GroupTable::read_cache(&path) {
            Ok(t) if t.order() <= budget => return Ok(t),
            Ok(_) => return Err(GroupError::BudgetExceeded { budget }),
            Err(e) => log::warn!("ignoring cache file {}: {e}", path.display()),
        }
    }
    let t = enumerate_group(gens, budget, exec)?;
    fs::create_dir_all(dir)?;
    // write then rename so concurrent readers never see partial files
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    t.write_cache(&tmp)?;
    fs::rename(&tmp, &path)?;
    Ok(t)
}

// ---------------------------------------------------------------------------
// records

/// Which parts of the chain to run for a prime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    /// Enumerate both images modulo `p`; implied by spectrum and cover.
    pub enumerate: bool,
    pub spectrum: bool,
    pub lie: bool,
    pub cover: bool,
    pub congruence: bool,
    pub grades: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { enumerate: true, spectrum: true, lie: true, cover: true, congruence: true, grades: true };
    pub const NONE: Stages = Stages { enumerate: false, spectrum: false, lie: false, cover: false, congruence: false, grades: false };
}

/// Everything computed for one prime. Fields of stages that did not run are
/// empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeRecord {
    pub p: u64,
    pub order1: Option<u64>,
    pub order2: Option<u64>,

    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda_prime: Option<f64>,
    pub omega_prime_size: Option<usize>,
    pub lambda_prime_generates: Option<bool>,
    pub lambda_prime_bipartite: Option<bool>,

    pub lie_depth: Option<u32>,
    pub lie_chart: Option<u32>,
    pub lie_rank1: Option<usize>,
    pub lie_rank2: Option<usize>,
    pub lie_saturated_rank: Option<usize>,
    pub lie_divisors1: Vec<u32>,
    pub lie_divisors2: Vec<u32>,
    pub conjugator_words: Vec<String>,
    pub conjugator_values: Vec<String>,
    pub conjugator_rank_gains: Vec<usize>,
    pub conjugators_complete: Option<bool>,
    pub open_image_l: Option<u32>,

    pub greedy_words: Vec<String>,
    pub greedy_steps: Vec<String>,
    pub greedy_image_sizes: Vec<usize>,
    pub greedy_covered: Option<bool>,
    pub greedy_fold: Option<usize>,
    pub fold_min: Option<usize>,
    pub fold_sizes: Vec<usize>,
    pub fold_triple: Option<bool>,

    pub congruence_levels: Vec<u32>,
    pub congruence_holds: Vec<bool>,
    pub congruence_methods: Vec<String>,
    pub congruence_reached: Option<u32>,

    pub grade_levels: Vec<u32>,
    pub grade_set_form: Vec<bool>,
    pub grade_psi_form: Vec<bool>,
    pub grade_agree: Vec<bool>,
    pub grade_methods: Vec<String>,
    pub grade_witness: Option<Vec<u64>>,

    pub induced: bool,
    /// Names of the steps that did not pass.
    pub failed_at: Vec<String>,
    /// Errors raised by individual steps.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySummary {
    pub name: String,
    pub config_digest: String,
    pub primes: Vec<u64>,
    pub skipped_primes: Vec<u64>,
    pub induced_primes: Vec<u64>,
    pub failed_primes: Vec<u64>,
    pub max_lambda1: Option<f64>,
    pub max_lambda2: Option<f64>,
    pub max_lambda_prime: Option<f64>,
    pub assertions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InductionCertificate {
    pub records: Vec<PrimeRecord>,
    pub summary: StudySummary,
}

fn method_name<T: Serialize>(m: &T) -> String {
    match serde_json::to_value(m) {
        Ok(Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn reduce_all(ms: &[RationalMatrix], q: u64) -> Result<Vec<ResidueMatrix>, ArithError> {
    ms.iter().map(|g| g.reduce_mod(q)).collect()
}

fn max_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    xs.flatten().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
}

/// Output of the Lie step, reused by the congruence and grade steps.
#[derive(Clone, Debug)]
pub struct LieOutcome {
    pub chart: u32,
    pub depth: u32,
    pub lattice1: SpanLattice,
    pub lattice2: Option<SpanLattice>,
    pub saturated: Option<SpanLattice>,
    /// Identity followed by the selected conjugators.
    pub conjugators: Vec<RationalMatrix>,
    pub certificate: Option<crate::lie::ConjugatorCertificate>,
    /// Lattice bases rescaled to the chart level, valid modulo `p^{depth-chart}`.
    pub basis1: Vec<Vec<u64>>,
    pub basis2: Vec<Vec<u64>>,
    pub open_image_l: Option<u32>,
    pub notes: Vec<String>,
}

fn chart_basis(lat: &SpanLattice, chart: u32) -> Vec<Vec<u64>> {
    let (p, q) = (lat.p(), lat.modulus());
    lat.unit_basis()
        .into_iter()
        .map(|(u, v)| {
            let s = checked_pow(p, v.saturating_sub(chart)).unwrap_or(0);
            u.into_iter().map(|a| ((a as u128 * s as u128) % q as u128) as u64).collect()
        })
        .collect()
}

/// Lie lattices of both groups at `p^depth`, conjugator selection, adjoint
/// saturation and the open-image exponent.
pub fn lie_stage(study: &Study, p: u64, opts: &RunOptions) -> Result<LieOutcome, LieError> {
    let cfg = &study.config;
    let d = cfg.depths;
    let chart = d.c.max(ChartConfig::c0_for(p));
    let l_max = d.l_max.max(chart);
    let depth = d.lie.max(chart + d.m.max(1)).max(l_max + 1);
    let q = checked_pow(p, depth).ok_or(LieError::BadModulus(p))?;
    let n = cfg.n0;
    let exec = opts.exec;
    let samples = cfg.budgets.lie_samples;
    let lattice1 = lie_lattice_from_generators(&reduce_all(&study.omega1, q)?, chart, samples, 0x11e ^ p, exec)?;
    let mut notes = Vec::new();
    let lattice2 = match lie_lattice_from_generators(&reduce_all(&study.omega2, q)?, chart, samples, 0x22e ^ p, exec) {
        Ok(l) => Some(l),
        Err(e) => {
            notes.push(format!("lie lattice of omega2: {e}"));
            None
        }
    };
    let mut conjugators = vec![RationalMatrix::identity(n)];
    let mut certificate = None;
    let mut saturated = None;
    let mut basis2 = Vec::new();
    if let Some(l2) = &lattice2 {
        let source = WordSource::new(study.omega1.clone(), cfg.budgets.word_length);
        let cert = match select_conjugators(l2, &lattice1, &source, cfg.budgets.conjugator_limit, exec) {
            Ok(c) => c,
            Err(LieError::Stalled { certificate }) => {
                notes.push(format!(
                    "conjugator search stalled at rank {} of {}",
                    certificate.achieved_rank, certificate.target_rank
                ));
                *certificate
            }
            Err(e) => return Err(e),
        };
        conjugators.extend(cert.matrices.iter().cloned());
        saturated = Some(adjoint_saturate(l2, &cert.matrices, &lattice1)?);
        certificate = Some(cert);
        basis2 = chart_basis(l2, chart);
    }
    let basis1 = chart_basis(&lattice1, chart);
    let mut open_image_l = None;
    if !basis2.is_empty() {
        let setup = OpenImageSetup {
            cfg: ChartConfig::new(p, depth, chart)?,
            n,
            basis1: basis1.clone(),
            basis2: basis2.clone(),
            conjugators: reduce_all(&conjugators, q)?,
            budget: opts.budget(cfg),
        };
        match open_image_exponent(&setup, l_max, exec) {
            Ok(r) => open_image_l = Some(r.l),
            Err(PadicError::NotFound { l_max, .. }) => notes.push(format!("open image not reached up to l = {l_max}")),
            Err(e) => notes.push(format!("open image: {e}")),
        }
    }
    Ok(LieOutcome {
        chart,
        depth,
        lattice1,
        lattice2,
        saturated,
        conjugators,
        certificate,
        basis1,
        basis2,
        open_image_l,
        notes,
    })
}

/// Tables of both images modulo `p`, with `Gamma_2` located inside `Gamma_1`.
pub struct PrimeTables {
    pub g1: Arc<GroupTable>,
    pub g2: Arc<GroupTable>,
    pub h: SubsetHandle,
    /// Ids of `omega2` in `g1`.
    pub omega2_ids: Vec<ElementId>,
}

pub fn prime_tables(study: &Study, p: u64, opts: &RunOptions) -> Result<PrimeTables, PipelineError> {
    let budget = opts.budget(&study.config);
    let cache = opts.cache_dir.as_deref();
    let r1 = reduce_all(&study.omega1, p)?;
    let r2 = reduce_all(&study.omega2, p)?;
    let g1 = Arc::new(cached_enumerate(&r1, budget, cache, opts.exec)?);
    let g2 = Arc::new(cached_enumerate(&r2, budget, cache, opts.exec)?);
    let omega2_ids: Vec<ElementId> = r2
        .iter()
        .map(|g| g1.id_of(g).expect("omega2 is a subset of omega1"))
        .collect();
    let h = SubsetHandle::generated(g1.clone(), &omega2_ids, opts.exec);
    Ok(PrimeTables { g1, g2, h, omega2_ids })
}

fn gap(r: &SpectralReport) -> bool {
    r.has_gap()
}

/// Runs the selected steps for one prime. Step failures are recorded, not
/// returned.
pub fn run_prime(study: &Study, p: u64, stages: Stages, opts: &RunOptions) -> PrimeRecord {
    let cfg = &study.config;
    let mut rec = PrimeRecord { p, ..Default::default() };
    let fail = |rec: &mut PrimeRecord, step: &str| {
        if !rec.failed_at.iter().any(|s| s == step) {
            rec.failed_at.push(step.to_string());
        }
    };
    let mut tables = None;
    if stages.enumerate || stages.spectrum || stages.cover {
        match prime_tables(study, p, opts) {
            Ok(t) => {
                rec.order1 = Some(t.g1.order() as u64);
                rec.order2 = Some(t.g2.order() as u64);
                tables = Some(t);
            }
            Err(e) => {
                rec.notes.push(format!("enumeration: {e}"));
                fail(&mut rec, "enumerate");
            }
        }
    }
    let sopts = opts.spectral(cfg);
    let exec = opts.exec;

    if let (true, Some(tables)) = (stages.spectrum, &tables) {
        let run = |g: &Arc<GroupTable>, omega: Vec<ElementId>| {
            AveragingOperator::new(g.clone(), omega, exec).and_then(|op| lambda_of(&op, &sopts))
        };
        match run(&tables.g1, tables.g1.generators().to_vec()) {
            Ok(r) => {
                rec.lambda1 = Some(r.lambda);
                if !gap(&r) {
                    fail(&mut rec, "lambda1");
                }
            }
            Err(e) => {
                rec.notes.push(format!("lambda1: {e}"));
                fail(&mut rec, "lambda1");
            }
        }
        match run(&tables.g2, tables.g2.generators().to_vec()) {
            Ok(r) => {
                rec.lambda2 = Some(r.lambda);
                if !gap(&r) {
                    fail(&mut rec, "lambda2");
                }
            }
            Err(e) => {
                rec.notes.push(format!("lambda2: {e}"));
                fail(&mut rec, "lambda2");
            }
        }
    }

    let mut lie = None;
    if stages.lie || stages.congruence || stages.grades {
        match lie_stage(study, p, opts) {
            Ok(l) => {
                rec.lie_chart = Some(l.chart);
                rec.lie_depth = Some(l.depth);
                rec.lie_rank1 = Some(l.lattice1.rank());
                rec.lie_divisors1 = l.lattice1.divisor_exponents();
                if let Some(l2) = &l.lattice2 {
                    rec.lie_rank2 = Some(l2.rank());
                    rec.lie_divisors2 = l2.divisor_exponents();
                }
                rec.lie_saturated_rank = l.saturated.as_ref().map(|s| s.rank());
                if let Some(c) = &l.certificate {
                    rec.conjugator_words = c.words.clone();
                    rec.conjugator_values = c.values.clone();
                    rec.conjugator_rank_gains = c.rank_gains.clone();
                    rec.conjugators_complete = Some(c.is_complete());
                } else {
                    rec.conjugators_complete = Some(false);
                }
                if rec.conjugators_complete != Some(true) {
                    fail(&mut rec, "lie");
                }
                rec.open_image_l = l.open_image_l;
                rec.notes.extend(l.notes.iter().cloned());
                lie = Some(l);
            }
            Err(e) => {
                rec.notes.push(format!("lie: {e}"));
                fail(&mut rec, "lie");
            }
        }
    }

    if let (true, Some(tables)) = (stages.cover, &tables) {
        let budget = GreedyBudget {
            max_word_length: cfg.budgets.greedy_word_length,
            max_candidates: cfg.budgets.greedy_candidates,
            max_conjugators: cfg.budgets.greedy_conjugators,
        };
        let cert = match greedy_conjugators_modp(&tables.h, &budget, exec) {
            Ok(c) => c,
            Err(CoverageError::Stalled { certificate }) => {
                rec.notes.push(format!(
                    "greedy search stalled at {} of {}",
                    certificate.image_sizes.last().copied().unwrap_or(0),
                    certificate.target
                ));
                *certificate
            }
            Err(e) => {
                rec.notes.push(format!("greedy: {e}"));
                fail(&mut rec, "greedy");
                return finish(rec);
            }
        };
        rec.greedy_words = cert.words.clone();
        rec.greedy_steps = cert
            .steps
            .iter()
            .map(|s| match s {
                Step::Conjugate(w) => format!("conjugate:{w}"),
                Step::Triple => "triple".to_string(),
            })
            .collect();
        rec.greedy_image_sizes = cert.image_sizes.clone();
        rec.greedy_covered = Some(cert.covered);
        rec.greedy_fold = Some(cert.fold);
        if !cert.covered {
            fail(&mut rec, "greedy");
        }
        // S = union of the distinct conjugated copies
        let mut distinct = cert.ids.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut bits = tables.h.bits().clone();
        for &g in &distinct {
            bits.union_with(tables.h.conjugate(g, exec).bits());
        }
        let fold = fold_cover_check(&SubsetHandle::new(tables.g1.clone(), bits), cfg.budgets.fold_c_max, exec);
        rec.fold_min = fold.min_fold;
        rec.fold_sizes = fold.sizes;
        rec.fold_triple = Some(fold.triple_covers);
        if fold.min_fold.is_none() {
            fail(&mut rec, "fold");
        }
        if stages.spectrum {
            let omega_prime = conjugated_omega(&tables.g1, &tables.omega2_ids, &distinct);
            rec.omega_prime_size = Some(omega_prime.len());
            match AveragingOperator::new(tables.g1.clone(), omega_prime, exec).and_then(|op| lambda_of(&op, &sopts)) {
                Ok(r) => {
                    rec.lambda_prime = Some(r.lambda);
                    rec.lambda_prime_generates = Some(r.generates);
                    rec.lambda_prime_bipartite = Some(r.bipartite);
                    if !gap(&r) {
                        fail(&mut rec, "lambda_prime");
                    }
                }
                Err(e) => {
                    rec.notes.push(format!("lambda_prime: {e}"));
                    fail(&mut rec, "lambda_prime");
                }
            }
        }
    }

    if stages.congruence {
        match &lie {
            Some(l) if !l.basis2.is_empty() => {
                let input = CongruenceInput {
                    p,
                    extra: cfg.depths.m,
                    omega1: &study.omega1,
                    omega2: &study.omega2,
                    conjugators: &l.conjugators,
                    basis1: &l.basis1,
                    basis2: &l.basis2,
                    order_mod_p: tables.as_ref().map(|t| t.g1.order()),
                    budget: opts.budget(cfg),
                };
                match congruence_cover_check(&input, &rec.conjugator_words, cfg.depths.n, exec) {
                    Ok((cert, verdicts)) => {
                        rec.congruence_levels = verdicts.iter().map(|v| v.level).collect();
                        rec.congruence_holds = verdicts.iter().map(|v| v.holds).collect();
                        rec.congruence_methods = verdicts.iter().map(|v| method_name(&v.method)).collect();
                        rec.congruence_reached = cert.layer_reached;
                        if cert.layer_reached.is_none() {
                            fail(&mut rec, "congruence");
                        }
                    }
                    Err(e) => {
                        rec.notes.push(format!("congruence: {e}"));
                        fail(&mut rec, "congruence");
                    }
                }
            }
            _ => fail(&mut rec, "congruence"),
        }
    }

    if stages.grades {
        let conj: Vec<RationalMatrix> = match &lie {
            Some(l) => l.conjugators.clone(),
            None => vec![RationalMatrix::identity(cfg.n0)],
        };
        let d1 = rec.lie_rank1.unwrap_or(cfg.n0 * cfg.n0) as u32;
        for k in 1..=cfg.depths.n.max(1) {
            let predicted = tables
                .as_ref()
                .map(|t| checked_pow(p, d1 * k).map_or(u64::MAX, |x| x.saturating_mul(t.g1.order() as u64)));
            let input = GradeInput {
                p,
                k,
                omega1: &study.omega1,
                omega2: &study.omega2,
                conjugators: &conj,
                samples: cfg.budgets.grade_samples,
                seed: 0x9ade ^ p ^ ((k as u64) << 8),
                budget: opts.budget(cfg),
                predicted_order: predicted,
            };
            match grade_generation_check(&input, exec) {
                Ok(v) => {
                    rec.grade_levels.push(k);
                    rec.grade_set_form.push(v.set_form);
                    rec.grade_psi_form.push(v.psi_form);
                    rec.grade_agree.push(v.agree);
                    rec.grade_methods.push(method_name(&v.method));
                    if !(v.set_form && v.psi_form) {
                        if rec.grade_witness.is_none() {
                            rec.grade_witness = v.witness.clone();
                        }
                        fail(&mut rec, "grade");
                    }
                }
                Err(e) => {
                    rec.notes.push(format!("grade {k}: {e}"));
                    fail(&mut rec, "grade");
                }
            }
        }
    }
    finish(rec)
}

fn finish(mut rec: PrimeRecord) -> PrimeRecord {
    rec.induced = rec.failed_at.is_empty();
    rec
}

pub fn summarize(study: &Study, records: &[PrimeRecord], skipped: Vec<u64>) -> StudySummary {
    let cfg = &study.config;
    StudySummary {
        name: cfg.name.clone(),
        config_digest: cfg.digest(),
        primes: records.iter().map(|r| r.p).collect(),
        skipped_primes: skipped,
        induced_primes: records.iter().filter(|r| r.induced).map(|r| r.p).collect(),
        failed_primes: records.iter().filter(|r| !r.induced).map(|r| r.p).collect(),
        max_lambda1: max_opt(records.iter().map(|r| r.lambda1)),
        max_lambda2: max_opt(records.iter().map(|r| r.lambda2)),
        max_lambda_prime: max_opt(records.iter().map(|r| r.lambda_prime)),
        assertions: cfg.assertions.clone(),
    }
}

/// Primes of the study that do not divide `q0`, and those that do.
pub fn usable_primes(study: &Study) -> (Vec<u64>, Vec<u64>) {
    let q0 = study.config.q0;
    study.config.primes.iter().partition(|&&p| q0 % p != 0)
}

/// The full chain for every usable prime.
pub fn run_induce(study: &Study, opts: &RunOptions) -> InductionCertificate {
    let (primes, skipped) = usable_primes(study);
    for p in &skipped {
        log::info!("skipping p = {p}: divides q0 = {}", study.config.q0);
    }
    let records: Vec<PrimeRecord> = primes
        .iter()
        .map(|&p| {
            log::info!("prime {p}");
            run_prime(study, p, Stages::ALL, opts)
        })
        .collect();
    let summary = summarize(study, &records, skipped);
    InductionCertificate { records, summary }
}

// ---------------------------------------------------------------------------
// persistence

fn tagged<T: Serialize>(kind: &str, body: &T) -> String {
    let mut v = serde_json::to_value(body).expect("records serialize");
    let obj = v.as_object_mut().expect("records are objects");
    obj.insert("format".into(), Value::String(STUDY_FORMAT.into()));
    obj.insert("kind".into(), Value::String(kind.into()));
    serde_json::to_string(&v).expect("records serialize")
}

/// One line per prime, then a summary line.
pub fn write_study<W: Write>(cert: &InductionCertificate, mut w: W) -> std::io::Result<()> {
    for r in &cert.records {
        writeln!(w, "{}", tagged("prime", r))?;
    }
    writeln!(w, "{}", tagged("summary", &cert.summary))?;
    w.flush()
}

pub fn persist_study(cert: &InductionCertificate, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_study(cert, BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

pub fn read_study<R: BufRead>(r: R) -> Result<InductionCertificate, PipelineError> {
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| PipelineError::CorruptRecord { line: lineno, reason };
        if summary.is_some() {
            return Err(corrupt("record after the summary".into()));
        }
        let mut v: Value = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        let obj = v.as_object_mut().ok_or_else(|| corrupt("not an object".into()))?;
        match obj.remove("format") {
            Some(Value::String(f)) if f == STUDY_FORMAT => {}
            Some(Value::String(f)) => return Err(PipelineError::FormatVersionMismatch { found: f }),
            _ => return Err(corrupt("missing format tag".into())),
        }
        match obj.remove("kind").as_ref().and_then(Value::as_str) {
            Some("prime") => records.push(serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?),
            Some("summary") => summary = Some(serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?),
            other => return Err(corrupt(format!("unknown record kind {other:?}"))),
        }
    }
    let summary = summary.ok_or(PipelineError::CorruptRecord { line: 0, reason: "missing summary".into() })?;
    Ok(InductionCertificate { records, summary })
}

pub fn load_study(path: &Path) -> Result<InductionCertificate, PipelineError> {
    read_study(BufReader::new(fs::File::open(path)?))
}

// ---------------------------------------------------------------------------
// verification

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub p: Option<u64>,
    pub field: String,
    pub stored: String,
    pub recomputed: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked_primes: Vec<u64>,
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn confirmed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn diff_fields<T: Serialize>(p: Option<u64>, a: &T, b: &T, out: &mut Vec<Mismatch>) {
    let to_map = |x: &T| -> BTreeMap<String, Value> {
        match serde_json::to_value(x) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => BTreeMap::new(),
        }
    };
    let (ma, mb) = (to_map(a), to_map(b));
    for (k, va) in &ma {
        let vb = mb.get(k).cloned().unwrap_or(Value::Null);
        if *va != vb {
            out.push(Mismatch { p, field: k.clone(), stored: va.to_string(), recomputed: vb.to_string() });
        }
    }
}

/// Recomputes every record of a stored certificate and compares field by
/// field. The stored conjugator words are also re-evaluated.
pub fn verify_study(study: &Study, stored: &InductionCertificate, opts: &RunOptions) -> VerifyReport {
    let mut mismatches = Vec::new();
    if stored.summary.config_digest != study.config.digest() {
        mismatches.push(Mismatch {
            p: None,
            field: "config_digest".into(),
            stored: stored.summary.config_digest.clone(),
            recomputed: study.config.digest(),
        });
    }
    let mut records = Vec::new();
    for r in &stored.records {
        for w in r.conjugator_words.iter().chain(&r.greedy_words) {
            let ok = parse_word(w).is_some_and(|l| l.iter().all(|&i| i < study.omega1.len()));
            if !ok {
                mismatches.push(Mismatch { p: Some(r.p), field: "word".into(), stored: w.clone(), recomputed: String::new() });
            }
        }
        for (w, v) in r.conjugator_words.iter().zip(&r.conjugator_values) {
            if let Some(l) = parse_word(w).filter(|l| l.iter().all(|&i| i < study.omega1.len())) {
                let val = evaluate(&study.omega1, &l).to_string();
                if val != *v {
                    mismatches.push(Mismatch { p: Some(r.p), field: "conjugator_values".into(), stored: v.clone(), recomputed: val });
                }
            }
        }
        let fresh = run_prime(study, r.p, Stages::ALL, opts);
        diff_fields(Some(r.p), r, &fresh, &mut mismatches);
        records.push(fresh);
    }
    let (_, skipped) = usable_primes(study);
    let summary = summarize(study, &records, skipped);
    diff_fields(None, &stored.summary, &summary, &mut mismatches);
    VerifyReport { checked_primes: stored.records.iter().map(|r| r.p).collect(), mismatches }
}
