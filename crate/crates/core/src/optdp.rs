//! Exact finite-horizon optimal online paging by backward induction.
//!
//! `W_t(C, s)` is the expected number of misses on requests `t..T` given
//! cache `C` after request `t-1` was page `s`:
//!
//! ```text
//! W_T(C, s) = 0
//! W_t(C, s) = sum_j M[s][j] * step_t(C, j)
//! step_t(C, j) = W_{t+1}(C, j)                      if j in C
//!              = 1 + min_e W_{t+1}(C - e + j, j)    otherwise
//! ```
//!
//! and the value from the initial cache is `sum_j init[j] * step_0(C0, j)`.
//! The best eviction depends only on `(t, C, j)`, which is what the action
//! table stores.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::RngCore;
use rayon::prelude::*;

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::policies::{EvictContext, EvictionPolicy};

/// Default cap on `n * C(n, k) * T`.
pub const DEFAULT_BUDGET: u128 = 100_000_000;
/// Evictions whose values are within this of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"MPOPTTAB";
const FORMAT_VERSION: u32 = 1;
const NO_ACTION: u16 = u16::MAX;

/// Binomial coefficients and rank/unrank of sorted k-subsets.
#[derive(Debug, Clone)]
pub struct SubsetIndex {
    n: usize,
    k: usize,
    binom: Vec<Vec<u128>>,
}

impl SubsetIndex {
    pub fn new(n: usize, k: usize) -> Self {
        let mut binom = vec![vec![0u128; k + 2]; n + 1];
        for row in binom.iter_mut() {
            row[0] = 1;
        }
        for i in 1..=n {
            for j in 1..=k + 1 {
                binom[i][j] = binom[i - 1][j - 1] + binom[i - 1][j];
            }
        }
        SubsetIndex { n, k, binom }
    }

    pub fn count(&self) -> u128 {
        self.binom[self.n][self.k]
    }

    /// Rank of a sorted subset: `sum_i C(c_i, i + 1)`.
    pub fn rank(&self, sorted: &[usize]) -> usize {
        sorted
            .iter()
            .enumerate()
            .map(|(i, &c)| self.binom[c][i + 1])
            .sum::<u128>() as usize
    }

    pub fn unrank(&self, mut rank: usize, out: &mut [usize]) {
        for i in (0..self.k).rev() {
            // largest c with C(c, i + 1) <= rank
            let mut c = i;
            while c + 1 < self.n && self.binom[c + 1][i + 1] as usize <= rank {
                c += 1;
            }
            out[i] = c;
            rank -= self.binom[c][i + 1] as usize;
        }
    }
}

/// `n * C(n, k) * T`, the number of state-steps the induction visits.
pub fn state_steps(n: usize, k: usize, horizon: usize) -> u128 {
    if k > n {
        return 0;
    }
    (n as u128) * SubsetIndex::new(n, k).count() * horizon as u128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptOptions {
    pub budget: u128,
    /// Keep `W_t` for every `t` in `1..=T`.
    pub keep_values: bool,
    /// Keep the eviction choice for every `(t, C, j)`; needed for replay.
    pub keep_actions: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            budget: DEFAULT_BUDGET,
            keep_values: false,
            keep_actions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptTable {
    n: usize,
    k: usize,
    horizon: usize,
    chain_hash: String,
    init_cache: Vec<usize>,
    value: f64,
    // layer t-1 holds W_t, indexed rank * n + last
    values: Option<Vec<Vec<f64>>>,
    // layer t, indexed rank * n + requested
    actions: Option<Vec<Vec<u16>>>,
}

/// Optimal expected misses over `T` requests starting from `init_cache`, the
/// first request drawn from the chain's initial distribution.
pub fn opt_expected_cost(
    chain: &MarkovChain,
    k: usize,
    horizon: usize,
    init_cache: &[usize],
    options: OptOptions,
) -> Result<(f64, OptTable)> {
    let n = chain.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k < n (k={k}, n={n})"
        )));
    }
    let mut c0 = init_cache.to_vec();
    c0.sort_unstable();
    if c0.len() != k {
        return Err(Error::InvalidCache(format!(
            "expected {k} pages, got {init_cache:?}"
        )));
    }
    if let Some(&page) = c0.iter().find(|&&p| p >= n) {
        return Err(Error::PageOutOfRange { page, n });
    }
    if c0.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidCache(format!(
            "duplicate pages in {init_cache:?}"
        )));
    }
    if n > NO_ACTION as usize {
        return Err(Error::InvalidArgument(format!(
            "{n} pages exceed the action encoding"
        )));
    }
    let needed = state_steps(n, k, horizon);
    if needed > options.budget {
        return Err(Error::BudgetExceeded {
            needed,
            budget: options.budget,
        });
    }

    let index = SubsetIndex::new(n, k);
    let r_count = index.count() as usize;
    let mut table = OptTable {
        n,
        k,
        horizon,
        chain_hash: chain.hash(),
        init_cache: c0.clone(),
        value: 0.0,
        values: options.keep_values.then(Vec::new),
        actions: options.keep_actions.then(Vec::new),
    };
    if horizon == 0 {
        return Ok((0.0, table));
    }

    // successor[r * n * k + j * k + e]: rank after evicting the e-th page of
    // cache r to admit j (unused when j is cached)
    let mut member = vec![false; r_count * n];
    let mut successor = vec![0u32; r_count * n * k];
    {
        let mut pages = vec![0; k];
        let mut next = vec![0; k];
        for r in 0..r_count {
            index.unrank(r, &mut pages);
            for &p in &pages {
                member[r * n + p] = true;
            }
            for j in 0..n {
                if member[r * n + j] {
                    continue;
                }
                for e in 0..k {
                    next.clear();
                    next.extend(pages.iter().copied().filter(|&p| p != pages[e]));
                    let pos = next.partition_point(|&p| p < j);
                    next.insert(pos, j);
                    successor[(r * n + j) * k + e] = index.rank(&next) as u32;
                }
            }
        }
    }
    let rows = chain.rows();

    let mut w_next = vec![0.0; r_count * n];
    let mut step = vec![0.0; r_count * n];
    let mut act = vec![NO_ACTION; r_count * n];
    let mut value_layers = Vec::new();
    let mut action_layers = Vec::new();
    for t in (0..horizon).rev() {
        step.par_chunks_mut(n)
            .zip(act.par_chunks_mut(n))
            .enumerate()
            .for_each(|(r, (step_r, act_r))| {
                let mut pages = vec![0; k];
                index.unrank(r, &mut pages);
                for j in 0..n {
                    if member[r * n + j] {
                        step_r[j] = w_next[r * n + j];
                        act_r[j] = NO_ACTION;
                        continue;
                    }
                    let succ = &successor[(r * n + j) * k..(r * n + j + 1) * k];
                    let best = succ
                        .iter()
                        .map(|&r2| w_next[r2 as usize * n + j])
                        .fold(f64::INFINITY, f64::min);
                    let e = succ
                        .iter()
                        .position(|&r2| w_next[r2 as usize * n + j] <= best + TIE_TOLERANCE)
                        .expect("k >= 1");
                    step_r[j] = 1.0 + best;
                    act_r[j] = pages[e] as u16;
                }
            });
        if options.keep_actions {
            action_layers.push(act.clone());
        }
        if t == 0 {
            break;
        }
        // W_t(C, s) = sum_j M[s][j] step_t(C, j)
        w_next
            .par_chunks_mut(n)
            .zip(step.par_chunks(n))
            .for_each(|(w_r, step_r)| {
                for (s, w) in w_r.iter_mut().enumerate() {
                    *w = rows[s].iter().zip(step_r).map(|(m, v)| m * v).sum();
                }
            });
        if options.keep_values {
            value_layers.push(w_next.clone());
        }
    }
    let r0 = index.rank(&c0);
    table.value = chain
        .init()
        .iter()
        .enumerate()
        .map(|(j, &p)| p * step[r0 * n + j])
        .sum();
    if let Some(v) = table.values.as_mut() {
        value_layers.reverse();
        // W_T = 0 closes the list
        value_layers.push(vec![0.0; r_count * n]);
        *v = value_layers;
    }
    if let Some(a) = table.actions.as_mut() {
        action_layers.reverse();
        *a = action_layers;
    }
    Ok((table.value, table))
}

impl OptTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn chain_hash(&self) -> &str {
        &self.chain_hash
    }

    pub fn init_cache(&self) -> &[usize] {
        &self.init_cache
    }

    /// Optimal expected cost from the initial cache.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn has_actions(&self) -> bool {
        self.actions.is_some()
    }

    fn cache_rank(&self, cache: &[usize]) -> Result<usize> {
        let bad = || {
            Error::StateNotInTable(format!(
                "cache {cache:?} is not a {}-subset of 0..{}",
                self.k, self.n
            ))
        };
        if cache.len() != self.k
            || cache.windows(2).any(|w| w[0] >= w[1])
            || cache.iter().any(|&p| p >= self.n)
        {
            return Err(bad());
        }
        Ok(SubsetIndex::new(self.n, self.k).rank(cache))
    }

    /// `W_t(cache, last)` for `1 <= t <= T`; requires `keep_values`.
    pub fn state_value(&self, t: usize, cache: &[usize], last: usize) -> Result<f64> {
        let values = self
            .values
            .as_ref()
            .ok_or_else(|| Error::StateNotInTable("values were not kept".into()))?;
        if t == 0 || t > self.horizon || last >= self.n {
            return Err(Error::StateNotInTable(format!("t={t}, last={last}")));
        }
        let r = self.cache_rank(cache)?;
        Ok(values[t - 1][r * self.n + last])
    }
}

/// Stored optimal eviction at request `t` for a miss on `requested`.
pub fn opt_action(table: &OptTable, t: usize, cache: &[usize], requested: usize) -> Result<usize> {
    let actions = table
        .actions
        .as_ref()
        .ok_or_else(|| Error::StateNotInTable("actions were not kept".into()))?;
    if t >= table.horizon || requested >= table.n {
        return Err(Error::StateNotInTable(format!(
            "t={t}, requested={requested} outside horizon {} / {} pages",
            table.horizon, table.n
        )));
    }
    let r = table.cache_rank(cache)?;
    match actions[t][r * table.n + requested] {
        NO_ACTION => Err(Error::StateNotInTable(format!(
            "page {requested} is already in cache {cache:?}"
        ))),
        e => Ok(e as usize),
    }
}

impl OptTable {
    /// Versioned little-endian dump.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        for v in [self.n, self.k, self.horizon] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        let hash = self.chain_hash.as_bytes();
        w.write_u32::<LittleEndian>(hash.len() as u32)?;
        w.write_all(hash)?;
        for &p in &self.init_cache {
            w.write_u64::<LittleEndian>(p as u64)?;
        }
        w.write_f64::<LittleEndian>(self.value)?;
        w.write_u8(self.values.is_some() as u8 | (self.actions.is_some() as u8) << 1)?;
        for layer in self.values.iter().flatten() {
            for &v in layer {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for layer in self.actions.iter().flatten() {
            for &a in layer {
                w.write_u16::<LittleEndian>(a)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an OPT table dump".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported OPT table version {version}"
            )));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let k = r.read_u64::<LittleEndian>()? as usize;
        let horizon = r.read_u64::<LittleEndian>()? as usize;
        if k == 0 || k >= n || state_steps(n, k, horizon) > u32::MAX as u128 * 16 {
            return Err(Error::Format(format!(
                "implausible header n={n} k={k} T={horizon}"
            )));
        }
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len > 256 {
            return Err(Error::Format("chain hash too long".into()));
        }
        let mut hash = vec![0u8; len];
        r.read_exact(&mut hash)?;
        let chain_hash = String::from_utf8(hash).map_err(|e| Error::Format(e.to_string()))?;
        let mut init_cache = Vec::with_capacity(k);
        for _ in 0..k {
            init_cache.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let value = r.read_f64::<LittleEndian>()?;
        let flags = r.read_u8()?;
        let layer = SubsetIndex::new(n, k).count() as usize * n;
        let values = if flags & 1 != 0 {
            let mut out = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let mut l = vec![0.0; layer];
                r.read_f64_into::<LittleEndian>(&mut l)?;
                out.push(l);
            }
            Some(out)
        } else {
            None
        };
        let actions = if flags & 2 != 0 {
            let mut out = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let mut l = vec![0u16; layer];
                r.read_u16_into::<LittleEndian>(&mut l)?;
                out.push(l);
            }
            Some(out)
        } else {
            None
        };
        Ok(OptTable {
            n,
            k,
            horizon,
            chain_hash,
            init_cache,
            value,
            values,
            actions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Replays the stored optimal actions.
pub struct OptDpPolicy {
    table: std::sync::Arc<OptTable>,
}

impl OptDpPolicy {
    pub fn new(table: std::sync::Arc<OptTable>) -> Result<Self> {
        if !table.has_actions() {
            return Err(Error::InvalidArgument(
                "OPT table was built without actions".into(),
            ));
        }
        Ok(OptDpPolicy { table })
    }

    pub fn table(&self) -> &OptTable {
        &self.table
    }
}

impl EvictionPolicy for OptDpPolicy {
    fn name(&self) -> String {
        "opt-dp".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        opt_action(&self.table, ctx.t, ctx.cache.pages(), ctx.requested)
    }
}
