//! Finite matrix groups over `Z/mZ` enumerated by breadth-first closure.
//!
//! Elements are dense `u32` ids in discovery order. Because each level of the
//! search is expanded in id order, generator by generator, id order coincides
//! with the shortlex order of the shortest words over the generators.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::arith::{
    decode_entries, encode_entries, entry_width, invert_mod, mul_entries, prime_power, valuation,
    ArithError, ResidueMatrix,
};
use crate::bitset::Bitset;
use crate::exec::Exec;

pub type ElementId = u32;

/// Default enumeration budget.
pub const DEFAULT_BUDGET: usize = 2_000_000;

const CACHE_MAGIC: &[u8; 5] = b"SGGT1";

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("enumeration exceeded the budget of {budget} elements")]
    BudgetExceeded { budget: usize },
    #[error("empty generating set")]
    EmptyGenerators,
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error("generators disagree on dimension or modulus")]
    Mismatch,
    #[error("modulus {modulus} is not a power p^j with j >= {needed}")]
    BadModulus { modulus: u64, needed: u32 },
    #[error("not a subgroup: {0}")]
    NotASubgroup(String),
    #[error("congruence layer failed the sampled normality check")]
    NotNormal,
    #[error("corrupt group cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
enum Index {
    Packed(FxHashMap<u128, ElementId>),
    Bytes(FxHashMap<Box<[u8]>, ElementId>),
}

#[inline]
fn pack(bytes: &[u8]) -> u128 {
    bytes.iter().fold(0u128, |acc, &b| (acc << 8) | b as u128)
}

impl Index {
    fn new(stride: usize) -> Self {
        if stride <= 16 {
            Index::Packed(FxHashMap::default())
        } else {
            Index::Bytes(FxHashMap::default())
        }
    }

    #[inline]
    fn get(&self, bytes: &[u8]) -> Option<ElementId> {
        match self {
            Index::Packed(h) => h.get(&pack(bytes)).copied(),
            Index::Bytes(h) => h.get(bytes).copied(),
        }
    }

    fn insert(&mut self, bytes: &[u8], id: ElementId) {
        match self {
            Index::Packed(h) => {
                h.insert(pack(bytes), id);
            }
            Index::Bytes(h) => {
                h.insert(bytes.into(), id);
            }
        }
    }

    fn reserve(&mut self, extra: usize) {
        match self {
            Index::Packed(h) => h.reserve(extra),
            Index::Bytes(h) => h.reserve(extra),
        }
    }
}

/// A fully enumerated finite matrix group.
#[derive(Debug)]
pub struct GroupTable {
    n: usize,
    m: u64,
    width: usize,
    stride: usize,
    data: Vec<u8>,
    index: Index,
    generators: Vec<ElementId>,
    // gen_right[j][i] = id(e_i * s_j)
    gen_right: Vec<Vec<ElementId>>,
    // BFS tree: (parent, generator index); the identity points at itself
    parent: Vec<(ElementId, u32)>,
    inverses: OnceLock<Vec<ElementId>>,
}

impl GroupTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    pub fn order(&self) -> usize {
        self.parent.len()
    }

    pub fn identity(&self) -> ElementId {
        0
    }

    /// Generator ids, in the order the generating matrices were supplied.
    pub fn generators(&self) -> &[ElementId] {
        &self.generators
    }

    /// `gen_right(j)[i] = id(e_i * s_j)`.
    pub fn gen_right(&self, j: usize) -> &[ElementId] {
        &self.gen_right[j]
    }

    pub fn encoding(&self, id: ElementId) -> &[u8] {
        let s = id as usize * self.stride;
        &self.data[s..s + self.stride]
    }

    pub fn entries(&self, id: ElementId) -> Vec<u64> {
        decode_entries(self.encoding(id), self.width)
    }

    pub fn element(&self, id: ElementId) -> ResidueMatrix {
        ResidueMatrix::new(self.n, self.m, self.entries(id)).expect("stored element is well formed")
    }

    pub fn id_of(&self, g: &ResidueMatrix) -> Option<ElementId> {
        if g.n() != self.n || g.modulus() != self.m {
            return None;
        }
        self.index.get(&g.encoding())
    }

    pub fn id_of_entries(&self, e: &[u64]) -> Option<ElementId> {
        let mut buf = Vec::with_capacity(self.stride);
        encode_entries(e, self.width, &mut buf);
        self.index.get(&buf)
    }

    fn product_entries(&self, a: &[u64], b: &[u64]) -> Option<ElementId> {
        let mut out = vec![0u64; self.n * self.n];
        mul_entries(self.n, self.m, a, b, &mut out);
        self.id_of_entries(&out)
    }

    pub fn mul(&self, a: ElementId, b: ElementId) -> ElementId {
        self.product_entries(&self.entries(a), &self.entries(b))
            .expect("group table is closed under products")
    }

    fn inverse_table(&self) -> &[ElementId] {
        self.inverses.get_or_init(|| {
            Exec::default().map_indexed(self.order(), |i| {
                let g = self.element(i as ElementId);
                let inv = invert_mod(&g).expect("group elements are invertible");
                self.id_of(&inv).expect("group table is closed under inverses")
            })
        })
    }

    pub fn inverse(&self, a: ElementId) -> ElementId {
        self.inverse_table()[a as usize]
    }

    /// `g a g^{-1}`.
    pub fn conjugate(&self, g: ElementId, a: ElementId) -> ElementId {
        self.mul(self.mul(g, a), self.inverse(g))
    }

    /// `table[i] = id(e_i * s)`.
    pub fn right_translation(&self, s: ElementId, exec: Exec) -> Vec<ElementId> {
        if let Some(j) = self.generators.iter().position(|&g| g == s) {
            return self.gen_right[j].clone();
        }
        let se = self.entries(s);
        exec.map_indexed(self.order(), |i| {
            self.product_entries(&self.entries(i as ElementId), &se)
                .expect("group table is closed under products")
        })
    }

    /// Shortlex-least word (generator indices) representing `id`.
    pub fn word_of(&self, id: ElementId) -> Vec<usize> {
        let mut w = Vec::new();
        let mut cur = id;
        while cur != 0 {
            let (par, j) = self.parent[cur as usize];
            w.push(j as usize);
            cur = par;
        }
        w.reverse();
        w
    }

    /// Word length of the shortest representative of `id`.
    pub fn word_length(&self, id: ElementId) -> usize {
        let mut len = 0;
        let mut cur = id;
        while cur != 0 {
            cur = self.parent[cur as usize].0;
            len += 1;
        }
        len
    }

    /// Elements with word length at most `max_len`, in shortlex order.
    pub fn shortlex_words(&self, max_len: usize) -> Vec<(ElementId, Vec<usize>)> {
        // ids are discovered level by level, so lengths are non-decreasing
        let mut out = Vec::new();
        for id in 0..self.order() as ElementId {
            let w = self.word_of(id);
            if w.len() > max_len {
                break;
            }
            out.push((id, w));
        }
        out
    }

    pub fn write_cache(&self, path: &Path) -> Result<(), GroupError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.n as u32).to_be_bytes())?;
        w.write_all(&self.m.to_be_bytes())?;
        w.write_all(&(self.order() as u64).to_be_bytes())?;
        w.write_all(&(self.generators.len() as u32).to_be_bytes())?;
        w.write_all(&self.data)?;
        for &g in &self.generators {
            w.write_all(&g.to_be_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<GroupTable, GroupError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(GroupError::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let n = u32::from_be_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let m = u64::from_be_bytes(b8);
        r.read_exact(&mut b8)?;
        let order = u64::from_be_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let ngens = u32::from_be_bytes(b4) as usize;
        if n == 0 || n > 16 || m < 2 || order == 0 {
            return Err(GroupError::Cache("bad header".into()));
        }
        let stride = n * n * entry_width(m);
        let mut data = vec![0u8; order * stride];
        r.read_exact(&mut data)?;
        let mut generators = Vec::with_capacity(ngens);
        for _ in 0..ngens {
            r.read_exact(&mut b4)?;
            let g = u32::from_be_bytes(b4);
            if g as usize >= order {
                return Err(GroupError::Cache("generator id out of range".into()));
            }
            generators.push(g);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(GroupError::Cache("trailing bytes".into()));
        }
        GroupTable::from_parts(n, m, data, generators, Exec::default())
    }

    /// Rebuilds index, translation tables and the BFS tree from stored elements.
    fn from_parts(
        n: usize,
        m: u64,
        data: Vec<u8>,
        generators: Vec<ElementId>,
        exec: Exec,
    ) -> Result<GroupTable, GroupError> {
        let width = entry_width(m);
        let stride = n * n * width;
        let order = data.len() / stride;
        let mut index = Index::new(stride);
        index.reserve(order);
        for i in 0..order {
            let bytes = &data[i * stride..(i + 1) * stride];
            if decode_entries(bytes, width).iter().any(|&e| e >= m) {
                return Err(GroupError::Cache(format!("element {i} is not reduced")));
            }
            index.insert(bytes, i as ElementId);
        }
        let mut table = GroupTable {
            n,
            m,
            width,
            stride,
            data,
            index,
            generators,
            gen_right: Vec::new(),
            parent: vec![(0, u32::MAX); order],
            inverses: OnceLock::new(),
        };
        if !ResidueMatrix::new(n, m, table.entries(0))?.is_identity() {
            return Err(GroupError::Cache("identity is not element 0".into()));
        }
        let mut gen_right = Vec::with_capacity(table.generators.len());
        for &g in &table.generators {
            let ge = table.entries(g);
            let col: Vec<Option<ElementId>> = exec.map_indexed(order, |i| {
                table.product_entries(&table.entries(i as ElementId), &ge)
            });
            let col: Option<Vec<ElementId>> = col.into_iter().collect();
            gen_right.push(col.ok_or_else(|| GroupError::Cache("not closed".into()))?);
        }
        table.gen_right = gen_right;
        // BFS tree over the stored order
        let mut seen = Bitset::new(order);
        seen.insert(0);
        let mut frontier = vec![0 as ElementId];
        let mut visited = 1;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                for (j, col) in table.gen_right.iter().enumerate() {
                    let t = col[i as usize];
                    if seen.insert(t as usize) {
                        table.parent[t as usize] = (i, j as u32);
                        next.push(t);
                        visited += 1;
                    }
                }
            }
            frontier = next;
        }
        if visited != order {
            return Err(GroupError::Cache("generators do not generate".into()));
        }
        table.parent[0] = (0, u32::MAX);
        Ok(table)
    }
}

/// Breadth-first closure of `gens` under right multiplication.
///
/// Each level is expanded in parallel (products and lookups only) and then
/// committed sequentially in (frontier id, generator index) order, so ids do
/// not depend on the execution policy.
pub fn enumerate_group(
    gens: &[ResidueMatrix],
    budget: usize,
    exec: Exec,
) -> Result<GroupTable, GroupError> {
    let first = gens.first().ok_or(GroupError::EmptyGenerators)?;
    let (n, m) = (first.n(), first.modulus());
    if gens.iter().any(|g| g.n() != n || g.modulus() != m) {
        return Err(GroupError::Mismatch);
    }
    for g in gens {
        invert_mod(g)?;
    }
    let width = entry_width(m);
    let stride = n * n * width;
    let k = gens.len();
    let gen_entries: Vec<&[u64]> = gens.iter().map(|g| g.entries()).collect();

    let mut data = Vec::new();
    let mut index = Index::new(stride);
    ResidueMatrix::identity(n, m).encode_into(&mut data);
    index.insert(&data[..stride], 0);
    let mut parent: Vec<(ElementId, u32)> = vec![(0, u32::MAX)];
    let mut gen_right: Vec<Vec<ElementId>> = vec![Vec::new(); k];
    let mut frontier: Vec<ElementId> = vec![0];

    while !frontier.is_empty() {
        let expanded: Vec<(Vec<u8>, Vec<Option<ElementId>>)> = {
            let data = &data;
            let index = &index;
            exec.map_slice(&frontier, |&i| {
                let base = i as usize * stride;
                let a = decode_entries(&data[base..base + stride], width);
                let mut out = vec![0u64; n * n];
                let mut bytes = Vec::with_capacity(k * stride);
                let mut ids = Vec::with_capacity(k);
                for b in &gen_entries {
                    mul_entries(n, m, &a, b, &mut out);
                    let s = bytes.len();
                    encode_entries(&out, width, &mut bytes);
                    ids.push(index.get(&bytes[s..]));
                }
                (bytes, ids)
            })
        };
        let mut next = Vec::new();
        for (&i, (bytes, ids)) in frontier.iter().zip(expanded) {
            for j in 0..k {
                let enc = &bytes[j * stride..(j + 1) * stride];
                let id = match ids[j].or_else(|| index.get(enc)) {
                    Some(id) => id,
                    None => {
                        let id = parent.len() as ElementId;
                        if parent.len() >= budget {
                            return Err(GroupError::BudgetExceeded { budget });
                        }
                        index.insert(enc, id);
                        data.extend_from_slice(enc);
                        parent.push((i, j as u32));
                        next.push(id);
                        id
                    }
                };
                let col = &mut gen_right[j];
                if col.len() <= i as usize {
                    col.resize(i as usize + 1, 0);
                }
                col[i as usize] = id;
            }
        }
        frontier = next;
    }
    let order = parent.len();
    for col in gen_right.iter_mut() {
        col.resize(order, 0);
    }
    let generators = gens
        .iter()
        .map(|g| index.get(&g.encoding()).expect("generator was enumerated"))
        .collect();
    log::debug!("enumerated group of order {order} mod {m}");
    Ok(GroupTable {
        n,
        m,
        width,
        stride,
        data,
        index,
        generators,
        gen_right,
        parent,
        inverses: OnceLock::new(),
    })
}

// ---------------------------------------------------------------------------
// subsets

/// A subset of an enumerated group, as a bit-vector over element ids.
#[derive(Clone, Debug)]
pub struct SubsetHandle {
    ambient: Arc<GroupTable>,
    bits: Bitset,
    is_subgroup: bool,
}

impl PartialEq for SubsetHandle {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.ambient, &other.ambient) && self.bits == other.bits
    }
}

impl SubsetHandle {
    pub fn new(ambient: Arc<GroupTable>, bits: Bitset) -> Self {
        assert_eq!(bits.len(), ambient.order(), "bitset length must match the group order");
        SubsetHandle {
            ambient,
            bits,
            is_subgroup: false,
        }
    }

    pub fn from_ids(ambient: Arc<GroupTable>, ids: &[ElementId]) -> Self {
        let bits = Bitset::from_indices(ambient.order(), ids.iter().map(|&i| i as usize));
        SubsetHandle::new(ambient, bits)
    }

    pub fn whole(ambient: Arc<GroupTable>) -> Self {
        let bits = Bitset::full(ambient.order());
        SubsetHandle {
            ambient,
            bits,
            is_subgroup: true,
        }
    }

    /// Marks `bits` as a subgroup after checking identity, inverses and products.
    pub fn subgroup(ambient: Arc<GroupTable>, bits: Bitset, exec: Exec) -> Result<Self, GroupError> {
        let s = SubsetHandle::new(ambient, bits);
        if !s.contains(0) {
            return Err(GroupError::NotASubgroup("missing identity".into()));
        }
        let ids = s.ids();
        if ids.iter().any(|&a| !s.contains(s.ambient.inverse(a))) {
            return Err(GroupError::NotASubgroup("not closed under inverses".into()));
        }
        let sq = product_sets(&s.ambient, &s.bits, &s.bits, exec);
        if sq != s.bits {
            return Err(GroupError::NotASubgroup("not closed under products".into()));
        }
        Ok(SubsetHandle {
            is_subgroup: true,
            ..s
        })
    }

    /// Subgroup generated by `ids` (closure inside the ambient table).
    pub fn generated(ambient: Arc<GroupTable>, ids: &[ElementId], exec: Exec) -> Self {
        let order = ambient.order();
        let mut gens: Vec<ElementId> = ids.to_vec();
        gens.extend(ids.iter().map(|&g| ambient.inverse(g)));
        gens.sort_unstable();
        gens.dedup();
        let trans: Vec<Vec<ElementId>> =
            gens.iter().map(|&g| ambient.right_translation(g, exec)).collect();
        let mut bits = Bitset::new(order);
        bits.insert(0);
        let mut frontier = vec![0 as ElementId];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                for t in &trans {
                    let x = t[i as usize];
                    if bits.insert(x as usize) {
                        next.push(x);
                    }
                }
            }
            frontier = next;
        }
        SubsetHandle {
            ambient,
            bits,
            is_subgroup: true,
        }
    }

    pub fn ambient(&self) -> &Arc<GroupTable> {
        &self.ambient
    }

    pub fn bits(&self) -> &Bitset {
        &self.bits
    }

    pub fn is_subgroup(&self) -> bool {
        self.is_subgroup
    }

    pub fn order(&self) -> usize {
        self.bits.count()
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.bits.contains(id as usize)
    }

    pub fn ids(&self) -> Vec<ElementId> {
        self.bits.iter().map(|i| i as ElementId).collect()
    }

    pub fn is_whole(&self) -> bool {
        self.bits.is_full()
    }

    /// `g S g^{-1}`; subgroup-ness is preserved.
    pub fn conjugate(&self, g: ElementId, exec: Exec) -> SubsetHandle {
        let ids = self.ids();
        let amb = &self.ambient;
        let ge = amb.entries(g);
        let gi = amb.entries(amb.inverse(g));
        let mapped = exec.map_slice(&ids, |&a| {
            let n = amb.n();
            let mut t = vec![0u64; n * n];
            mul_entries(n, amb.m, &ge, &amb.entries(a), &mut t);
            amb.product_entries(&t, &gi).expect("closed under conjugation")
        });
        let bits = Bitset::from_indices(amb.order(), mapped.iter().map(|&i| i as usize));
        SubsetHandle {
            ambient: self.ambient.clone(),
            bits,
            is_subgroup: self.is_subgroup,
        }
    }

    /// `{s^{-1} : s in S}`.
    pub fn inverse_set(&self) -> SubsetHandle {
        let bits = Bitset::from_indices(
            self.ambient.order(),
            self.bits.iter().map(|i| self.ambient.inverse(i as ElementId) as usize),
        );
        SubsetHandle {
            ambient: self.ambient.clone(),
            bits,
            is_subgroup: self.is_subgroup,
        }
    }

    /// `S * T` as a plain subset.
    pub fn product(&self, other: &SubsetHandle, exec: Exec) -> SubsetHandle {
        SubsetHandle::new(
            self.ambient.clone(),
            product_sets(&self.ambient, &self.bits, &other.bits, exec),
        )
    }
}

const OUTER_BATCH: usize = 1 << 14;

/// `A * B` inside `g`.
///
/// The smaller factor is decoded once; the larger one is streamed in batches
/// so the loop stops as soon as the product is the whole group.
pub fn product_sets(g: &GroupTable, a: &Bitset, b: &Bitset, exec: Exec) -> Bitset {
    let order = g.order();
    let (na, nb) = (a.count(), b.count());
    let mut acc = Bitset::new(order);
    if na == 0 || nb == 0 {
        return acc;
    }
    let n = g.n();
    let nn = n * n;
    let inner_is_left = na <= nb;
    let (inner, outer) = if inner_is_left { (a, b) } else { (b, a) };
    let inner_entries: Vec<u64> = inner.iter().flat_map(|i| g.entries(i as ElementId)).collect();
    let outer_ids: Vec<ElementId> = outer.iter().map(|i| i as ElementId).collect();
    for batch in outer_ids.chunks(OUTER_BATCH) {
        let part = exec.union_over(batch, order, 256, |chunk, bits| {
            let mut out = vec![0u64; nn];
            let mut buf = Vec::with_capacity(g.stride);
            for &o in chunk {
                let oe = g.entries(o);
                for x in inner_entries.chunks(nn) {
                    if inner_is_left {
                        mul_entries(n, g.m, x, &oe, &mut out);
                    } else {
                        mul_entries(n, g.m, &oe, x, &mut out);
                    }
                    buf.clear();
                    encode_entries(&out, g.width, &mut buf);
                    let id = g.index.get(&buf).expect("group table is closed under products");
                    bits.insert(id as usize);
                }
            }
        });
        acc.union_with(&part);
        if acc.is_full() {
            break;
        }
    }
    acc
}

/// Repeated products `S, S^2, ..., S^c` with early exit at full coverage.
///
/// Calls `visit(c, &S^c)` after each fold; stops when `visit` returns false.
/// When `S` contains the identity the chain is increasing and only the newly
/// reached elements are multiplied by `S`.
pub fn fold_chain<F>(s: &SubsetHandle, c_max: usize, exec: Exec, mut visit: F) -> Bitset
where
    F: FnMut(usize, &Bitset) -> bool,
{
    let g = &s.ambient;
    let mut cur = s.bits.clone();
    if c_max == 0 || !visit(1, &cur) {
        return cur;
    }
    let has_identity = s.contains(0);
    let mut prev = Bitset::new(g.order());
    for c in 2..=c_max {
        if cur.is_full() {
            // G * S = G for nonempty S
            if !visit(c, &cur) {
                break;
            }
            continue;
        }
        let next = if has_identity {
            let fresh = cur.difference(&prev);
            let mut grown = product_sets(g, &fresh, &s.bits, exec);
            grown.union_with(&cur);
            grown
        } else {
            product_sets(g, &cur, &s.bits, exec)
        };
        prev = std::mem::replace(&mut cur, next);
        if !visit(c, &cur) {
            break;
        }
    }
    cur
}

/// All `C`-fold products `x_1 ... x_C` with `x_i` in `S`.
pub fn product_fold(s: &SubsetHandle, c: usize, exec: Exec) -> SubsetHandle {
    assert!(c >= 1, "fold count must be positive");
    let bits = fold_chain(s, c, exec, |_, _| true);
    SubsetHandle::new(s.ambient.clone(), bits)
}

// ---------------------------------------------------------------------------
// congruence layers

/// `{g in G : g = I mod p^k}` inside a table at modulus `p^j`, `j >= k+1`.
#[derive(Clone, Debug)]
pub struct CongruenceLayer {
    pub p: u64,
    pub k: u32,
    pub modulus: u64,
    pub members: SubsetHandle,
}

impl CongruenceLayer {
    pub fn order(&self) -> usize {
        self.members.order()
    }
}

/// True when every entry of `e - I` is divisible by `p^k`; `e` is reduced
/// modulo `p^j`.
pub fn is_congruent_identity(e: &[u64], n: usize, p: u64, j: u32, k: u32) -> bool {
    let m = p.pow(j);
    e.iter().enumerate().all(|(t, &x)| {
        let y = if t / n == t % n { crate::arith::sub_mod(x, 1, m) } else { x };
        valuation(y, p, j) >= k
    })
}

const NORMALITY_SAMPLES: usize = 64;

pub fn congruence_kernel(
    g: &Arc<GroupTable>,
    k: u32,
    exec: Exec,
) -> Result<CongruenceLayer, GroupError> {
    let m = g.modulus();
    let (p, j) = prime_power(m).ok_or(GroupError::BadModulus {
        modulus: m,
        needed: k + 1,
    })?;
    if j < k + 1 {
        return Err(GroupError::BadModulus {
            modulus: m,
            needed: k + 1,
        });
    }
    let n = g.n();
    let flags = exec.map_indexed(g.order(), |i| {
        is_congruent_identity(&g.entries(i as ElementId), n, p, j, k)
    });
    let bits = Bitset::from_indices(
        g.order(),
        flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i),
    );
    let members = SubsetHandle {
        ambient: g.clone(),
        bits,
        is_subgroup: true,
    };
    let ids = members.ids();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ k as u64);
    for _ in 0..NORMALITY_SAMPLES {
        let a = ids[rng.gen_range(0..ids.len())];
        let h = rng.gen_range(0..g.order()) as ElementId;
        if !members.contains(g.conjugate(h, a)) {
            return Err(GroupError::NotNormal);
        }
    }
    debug_assert!(
        k == 0 || prime_power(members.order() as u64).map_or(members.order() == 1, |(q, _)| q == p)
    );
    Ok(CongruenceLayer {
        p,
        k,
        modulus: m,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sl2_gens(m: u64) -> Vec<ResidueMatrix> {
        [[1, 1, 0, 1], [1, -1, 0, 1], [1, 0, 1, 1], [1, 0, -1, 1]]
            .iter()
            .map(|e| ResidueMatrix::from_i64(2, m, e).unwrap())
            .collect()
    }

    fn sl2_exhaustive(m: u64) -> usize {
        let mut count = 0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        if (a * d % m + m - b * c % m) % m == 1 {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn cyclic_unipotent_mod_five() {
        let u = ResidueMatrix::from_i64(2, 5, &[1, 1, 0, 1]).unwrap();
        let g = enumerate_group(&[u], 100, Exec::Sequential).unwrap();
        assert_eq!(g.order(), 5);
    }

    #[test]
    fn sl2_mod_three_matches_exhaustive_count() {
        let g = enumerate_group(&sl2_gens(3), DEFAULT_BUDGET, Exec::default()).unwrap();
        assert_eq!(g.order(), 24);
        assert_eq!(sl2_exhaustive(3), 24);
        assert_eq!(
            enumerate_group(&sl2_gens(5), DEFAULT_BUDGET, Exec::default()).unwrap().order(),
            sl2_exhaustive(5)
        );
    }

    #[test]
    fn identity_only() {
        let g = enumerate_group(&[ResidueMatrix::identity(3, 7)], 10, Exec::default()).unwrap();
        assert_eq!(g.order(), 1);
        assert_eq!(g.generators(), &[0]);
    }

    #[test]
    fn budget_is_enforced() {
        let r = enumerate_group(&sl2_gens(7), 100, Exec::default());
        assert!(matches!(r, Err(GroupError::BudgetExceeded { budget: 100 })));
        assert!(matches!(enumerate_group(&[], 10, Exec::default()), Err(GroupError::EmptyGenerators)));
    }

    #[test]
    fn order_is_independent_of_generator_order() {
        let mut gens = sl2_gens(7);
        let a = enumerate_group(&gens, DEFAULT_BUDGET, Exec::default()).unwrap();
        gens.reverse();
        let b = enumerate_group(&gens, DEFAULT_BUDGET, Exec::default()).unwrap();
        assert_eq!(a.order(), b.order());
        for id in 0..a.order() as ElementId {
            assert!(b.id_of(&a.element(id)).is_some());
        }
    }

    #[test]
    fn parallel_enumeration_is_identical() {
        let a = enumerate_group(&sl2_gens(25), DEFAULT_BUDGET, Exec::Sequential).unwrap();
        let b = enumerate_group(&sl2_gens(25), DEFAULT_BUDGET, Exec::Parallel).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.gen_right, b.gen_right);
    }

    #[test]
    fn words_are_shortlex_and_evaluate_correctly() {
        let gens = sl2_gens(5);
        let g = enumerate_group(&gens, DEFAULT_BUDGET, Exec::default()).unwrap();
        let mut last: Vec<usize> = Vec::new();
        for id in 0..g.order() as ElementId {
            let w = g.word_of(id);
            assert!(w.len() > last.len() || (w.len() == last.len() && w >= last));
            let mut x = ResidueMatrix::identity(2, 5);
            for &j in &w {
                x = x.mul(&gens[j]);
            }
            assert_eq!(g.id_of(&x), Some(id));
            last = w;
        }
    }

    #[test]
    fn cache_round_trip() {
        let g = enumerate_group(&sl2_gens(9), DEFAULT_BUDGET, Exec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sggt");
        g.write_cache(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"SGGT1");
        let h = GroupTable::read_cache(&path).unwrap();
        assert_eq!(h.data, g.data);
        assert_eq!(h.generators, g.generators);
        assert_eq!(h.gen_right, g.gen_right);
        assert_eq!(h.parent, g.parent);
        let path2 = dir.path().join("h.sggt");
        h.write_cache(&path2).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), bytes);
    }

    #[test]
    fn kernel_orders() {
        for (m, k, expect) in [(9, 1, 27), (25, 1, 125), (27, 2, 27), (27, 1, 729)] {
            let g = Arc::new(enumerate_group(&sl2_gens(m), DEFAULT_BUDGET, Exec::default()).unwrap());
            let layer = congruence_kernel(&g, k, Exec::default()).unwrap();
            assert_eq!(layer.order(), expect, "m={m} k={k}");
        }
        let g = Arc::new(enumerate_group(&sl2_gens(9), DEFAULT_BUDGET, Exec::default()).unwrap());
        assert_eq!(congruence_kernel(&g, 0, Exec::default()).unwrap().order(), g.order());
        assert!(matches!(
            congruence_kernel(&g, 2, Exec::default()),
            Err(GroupError::BadModulus { .. })
        ));
        let h = Arc::new(enumerate_group(&sl2_gens(6), DEFAULT_BUDGET, Exec::default()).unwrap());
        assert!(congruence_kernel(&h, 1, Exec::default()).is_err());
    }

    #[test]
    fn folds_of_small_sets() {
        let g = Arc::new(enumerate_group(&sl2_gens(5), DEFAULT_BUDGET, Exec::default()).unwrap());
        let whole = SubsetHandle::whole(g.clone());
        assert!(product_fold(&whole, 1, Exec::default()).is_whole());
        let minus = g.id_of(&ResidueMatrix::from_i64(2, 5, &[-1, 0, 0, -1]).unwrap()).unwrap();
        let center = SubsetHandle::from_ids(g.clone(), &[0, minus]);
        for c in 1..6 {
            assert_eq!(product_fold(&center, c, Exec::default()).order(), 2);
        }
    }

    #[test]
    fn subgroup_verification() {
        let g = Arc::new(enumerate_group(&sl2_gens(5), DEFAULT_BUDGET, Exec::default()).unwrap());
        let u = g.generators()[0];
        let h = SubsetHandle::generated(g.clone(), &[u], Exec::default());
        assert_eq!(h.order(), 5);
        assert!(SubsetHandle::subgroup(g.clone(), h.bits().clone(), Exec::default()).is_ok());
        let bad = SubsetHandle::from_ids(g.clone(), &[0, u]);
        assert!(SubsetHandle::subgroup(g.clone(), bad.bits().clone(), Exec::default()).is_err());
        assert_eq!(g.order() % h.order(), 0);
    }
}
