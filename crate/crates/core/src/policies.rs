//! Eviction policies behind one interface.
//!
//! Every policy is an immutable rule object. Per-run bookkeeping that some
//! baselines need (last use, insertion time, the realized sequence for
//! Farthest-in-Future) is carried by [`CacheRun`] and handed to the policy
//! through [`EvictContext`]; randomness always comes from the caller.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use rand::{Rng, RngCore};

use crate::alpha::AlphaTable;
use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::lp::{Constraint, LinearProgram, LpOutcome, Relation};

/// Slack allowed on the dominating constraints when replaying a solution.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;
/// LP optima above `1/2` by more than this are reported as infeasible.
pub const INFEASIBLE_TOLERANCE: f64 = 1e-6;

/// Sorted cache contents plus the most recent request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheState {
    pages: Vec<usize>,
    last_request: Option<usize>,
}

impl CacheState {
    pub fn new(mut pages: Vec<usize>, n: usize) -> Result<Self> {
        if pages.is_empty() {
            return Err(Error::InvalidCache(
                "cache must hold at least one page".into(),
            ));
        }
        if let Some(&page) = pages.iter().find(|&&p| p >= n) {
            return Err(Error::PageOutOfRange { page, n });
        }
        pages.sort_unstable();
        if pages.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCache(format!("duplicate pages in {pages:?}")));
        }
        Ok(CacheState {
            pages,
            last_request: None,
        })
    }

    pub fn pages(&self) -> &[usize] {
        &self.pages
    }

    pub fn k(&self) -> usize {
        self.pages.len()
    }

    pub fn last_request(&self) -> Option<usize> {
        self.last_request
    }

    pub fn contains(&self, page: usize) -> bool {
        self.pages.binary_search(&page).is_ok()
    }

    fn replace(&mut self, evict: usize, insert: usize) {
        let pos = self
            .pages
            .binary_search(&evict)
            .expect("evicted page in cache");
        self.pages.remove(pos);
        let pos = self.pages.binary_search(&insert).unwrap_err();
        self.pages.insert(pos, insert);
    }
}

/// Distribution over cache pages.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionDistribution {
    support: Vec<(usize, f64)>,
}

impl EvictionDistribution {
    /// Weights are clamped at zero (after checking they are `>= -1e-12`)
    /// and renormalized.
    pub fn new(pages: &[usize], weights: &[f64]) -> Result<Self> {
        if pages.len() != weights.len() || pages.is_empty() {
            return Err(Error::InvalidArgument("distribution shape mismatch".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < -1e-12) {
            return Err(Error::InvalidArgument(format!(
                "negative weight in {weights:?}"
            )));
        }
        let clamped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(EvictionDistribution {
            support: pages
                .iter()
                .copied()
                .zip(clamped.iter().map(|w| w / total))
                .collect(),
        })
    }

    pub fn point(page: usize) -> Self {
        EvictionDistribution {
            support: vec![(page, 1.0)],
        }
    }

    pub fn uniform(pages: &[usize]) -> Self {
        let w = 1.0 / pages.len() as f64;
        EvictionDistribution {
            support: pages.iter().map(|&p| (p, w)).collect(),
        }
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn prob(&self, page: usize) -> f64 {
        self.support
            .iter()
            .find(|(p, _)| *p == page)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(p, w) in &self.support {
            acc += w;
            if u < acc {
                return p;
            }
        }
        self.support
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map_or(self.support[0].0, |(p, _)| *p)
    }
}

/// `max_q sum_i mu_i alpha_sub[i][q]` for a `k x k` row-major matrix.
pub fn max_column_value(alpha_sub: &[f64], mu: &[f64]) -> f64 {
    let k = mu.len();
    (0..k)
        .map(|q| (0..k).map(|i| mu[i] * alpha_sub[i * k + q]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_sub(pages: &[usize], alpha_sub: &[f64]) -> Result<usize> {
    let k = pages.len();
    if k == 0 || alpha_sub.len() != k * k {
        return Err(Error::InvalidArgument(format!(
            "alpha submatrix has {} entries for {k} pages",
            alpha_sub.len()
        )));
    }
    Ok(k)
}

fn dominance_rows(alpha_sub: &[f64], k: usize, extra: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|q| {
            let mut row: Vec<f64> = (0..k).map(|i| alpha_sub[i * k + q]).collect();
            row.extend(std::iter::repeat_n(0.0, extra));
            row
        })
        .collect()
}

/// Solves `min_mu max_q sum_i mu_i alpha_sub[i][q]` and returns `(mu, value)`.
fn min_max(alpha_sub: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    // variables: mu_0..mu_{k-1}, t ; maximize -t
    let mut objective = vec![0.0; k + 1];
    objective[k] = -1.0;
    let mut constraints: Vec<Constraint> = dominance_rows(alpha_sub, k, 1)
        .into_iter()
        .map(|mut coeffs| {
            coeffs[k] = -1.0;
            Constraint {
                coeffs,
                relation: Relation::Le,
                rhs: 0.0,
            }
        })
        .collect();
    let mut simplex = vec![1.0; k + 1];
    simplex[k] = 0.0;
    constraints.push(Constraint {
        coeffs: simplex,
        relation: Relation::Eq,
        rhs: 1.0,
    });
    match (LinearProgram {
        objective,
        constraints,
    })
    .solve()?
    {
        LpOutcome::Optimal { x, value } => Ok((x[..k].to_vec(), -value)),
        other => Err(Error::Lp(format!("min-max LP returned {other:?}"))),
    }
}

/// Dominating distribution from the min-max LP: the returned `mu` minimizes
/// the largest column value, which never exceeds `1/2` for valid input.
pub fn dominating_distribution(pages: &[usize], alpha_sub: &[f64]) -> Result<EvictionDistribution> {
    let k = check_sub(pages, alpha_sub)?;
    let (mu, value) = min_max(alpha_sub, k)?;
    if value > 0.5 + INFEASIBLE_TOLERANCE {
        return Err(Error::Infeasible { value });
    }
    EvictionDistribution::new(pages, &mu)
}

/// Dominating distribution that puts as much mass as the constraints allow
/// on `target`.
pub fn adversarial_dominating(
    pages: &[usize],
    alpha_sub: &[f64],
    target: usize,
) -> Result<EvictionDistribution> {
    let k = check_sub(pages, alpha_sub)?;
    let ti = pages
        .iter()
        .position(|&p| p == target)
        .ok_or_else(|| Error::InvalidArgument(format!("target {target} not in {pages:?}")))?;
    let (_, value) = min_max(alpha_sub, k)?;
    if value > 0.5 + INFEASIBLE_TOLERANCE {
        return Err(Error::Infeasible { value });
    }
    // roundoff can push the min-max a hair above 1/2
    let bound = value.max(0.5);
    let mut objective = vec![0.0; k];
    objective[ti] = 1.0;
    let mut constraints: Vec<Constraint> = dominance_rows(alpha_sub, k, 0)
        .into_iter()
        .map(|coeffs| Constraint {
            coeffs,
            relation: Relation::Le,
            rhs: bound,
        })
        .collect();
    constraints.push(Constraint {
        coeffs: vec![1.0; k],
        relation: Relation::Eq,
        rhs: 1.0,
    });
    match (LinearProgram {
        objective,
        constraints,
    })
    .solve()?
    {
        LpOutcome::Optimal { x, .. } => EvictionDistribution::new(pages, &x),
        other => Err(Error::Lp(format!("adversarial LP returned {other:?}"))),
    }
}

/// Median next-request time; `Infinite` orders above every finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MedianTime {
    Finite(u64),
    Infinite,
}

impl fmt::Display for MedianTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MedianTime::Finite(t) => write!(f, "{t}"),
            MedianTime::Infinite => write!(f, "inf"),
        }
    }
}

/// Cap used when a chain has a zero transition entry.
pub const FALLBACK_MEDIAN_CAP: u64 = 1_000_000;
const MAX_MEDIAN_CAP: u64 = 100_000_000;

/// `16 / min_entry` steps, or [`FALLBACK_MEDIAN_CAP`] when some entry is 0.
pub fn default_median_cap(chain: &MarkovChain) -> u64 {
    let d = chain.min_entry();
    if d <= 0.0 {
        FALLBACK_MEDIAN_CAP
    } else {
        ((16.0 / d).ceil() as u64).clamp(1, MAX_MEDIAN_CAP)
    }
}

/// Median first-passage times to `target` from every starting page.
///
/// Iterates `h_t(r) = M[r][target] + sum_{j != target} M[r][j] h_{t-1}(j)`,
/// the probability of requesting `target` within `t` steps, and records the
/// first `t` with `h_t(s) >= 1/2`.
pub fn median_times_to(chain: &MarkovChain, target: usize, cap: u64) -> Vec<MedianTime> {
    let n = chain.n();
    if chain.is_iid() {
        let t = iid_median(chain.prob(0, target), cap);
        return vec![t; n];
    }
    let mut out = vec![MedianTime::Infinite; n];
    let mut pending = n;
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut t = 0;
    while t < cap && pending > 0 {
        t += 1;
        let mut change: f64 = 0.0;
        for r in 0..n {
            let row = chain.row(r);
            let mut v = row[target];
            for j in 0..n {
                if j != target {
                    v += row[j] * h[j];
                }
            }
            change = change.max(v - h[r]);
            next[r] = v;
        }
        std::mem::swap(&mut h, &mut next);
        for s in 0..n {
            if out[s] == MedianTime::Infinite && h[s] >= 0.5 - 1e-12 {
                out[s] = MedianTime::Finite(t);
                pending -= 1;
            }
        }
        // h is non-decreasing in t; once it stops moving it never crosses 1/2
        if change <= 0.0 {
            break;
        }
    }
    out
}

fn iid_median(r: f64, cap: u64) -> MedianTime {
    if r >= 0.5 {
        return MedianTime::Finite(1);
    }
    if r <= 0.0 {
        return MedianTime::Infinite;
    }
    let hit = |t: u64| 1.0 - (1.0 - r).powf(t as f64) >= 0.5 - 1e-12;
    let mut t = ((0.5f64).ln() / (-r).ln_1p()).ceil().max(1.0) as u64;
    while t > 1 && hit(t - 1) {
        t -= 1;
    }
    while !hit(t) {
        t += 1;
    }
    if t > cap {
        MedianTime::Infinite
    } else {
        MedianTime::Finite(t)
    }
}

/// Median time at which `p` is next requested given last request `s`.
pub fn median_index(chain: &MarkovChain, s: usize, p: usize, cap: u64) -> MedianTime {
    median_times_to(chain, p, cap)[s]
}

/// What a policy sees at a miss.
#[derive(Debug, Clone, Copy)]
pub struct EvictContext<'a> {
    pub cache: &'a CacheState,
    pub requested: usize,
    /// 0-based index of the current request.
    pub t: usize,
    /// Time of the latest request of each page, if any.
    pub last_used: &'a [Option<usize>],
    /// Time each page entered the cache; `None` for initial pages.
    pub inserted_at: &'a [Option<usize>],
    /// The realized sequence, for offline rules.
    pub sequence: Option<&'a [usize]>,
}

pub trait EvictionPolicy: Send + Sync {
    fn name(&self) -> String;

    /// Picks a page of `ctx.cache` to evict; `ctx.requested` is not cached.
    fn evict(&self, ctx: &EvictContext<'_>, rng: &mut dyn RngCore) -> Result<usize>;

    /// The eviction distribution when it depends only on the cache contents
    /// and the requested page. `None` for history-dependent rules.
    fn kernel(&self, _cache: &[usize], _requested: usize) -> Option<Result<EvictionDistribution>> {
        None
    }
}

/// Which feasible dominating distribution to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominatingMode {
    /// The min-max LP solution.
    Standard,
    /// Maximize the mass on `target` when cached, otherwise on the
    /// lowest-index cached page.
    Adversarial { target: usize },
}

type KernelMemo = RwLock<HashMap<(Vec<usize>, usize), EvictionDistribution>>;

pub struct DominatingPolicy {
    alpha: Arc<AlphaTable>,
    mode: DominatingMode,
    memo: KernelMemo,
}

impl DominatingPolicy {
    pub fn new(alpha: Arc<AlphaTable>, mode: DominatingMode) -> Self {
        DominatingPolicy {
            alpha,
            mode,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn alpha(&self) -> &AlphaTable {
        &self.alpha
    }

    pub fn distribution(&self, cache: &[usize], requested: usize) -> Result<EvictionDistribution> {
        let key = (cache.to_vec(), requested);
        if let Some(d) = self.memo.read().get(&key) {
            return Ok(d.clone());
        }
        let sub = self.alpha.restrict(cache, requested);
        let d = match self.mode {
            DominatingMode::Standard => dominating_distribution(cache, &sub)?,
            DominatingMode::Adversarial { target } => {
                let t = if cache.contains(&target) {
                    target
                } else {
                    cache[0]
                };
                adversarial_dominating(cache, &sub, t)?
            }
        };
        self.memo.write().insert(key, d.clone());
        Ok(d)
    }
}

impl EvictionPolicy for DominatingPolicy {
    fn name(&self) -> String {
        match self.mode {
            DominatingMode::Standard => "dominating".into(),
            DominatingMode::Adversarial { target } => format!("dominating-adversarial:{target}"),
        }
    }

    fn evict(&self, ctx: &EvictContext<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self
            .distribution(ctx.cache.pages(), ctx.requested)?
            .sample(rng))
    }

    fn kernel(&self, cache: &[usize], requested: usize) -> Option<Result<EvictionDistribution>> {
        Some(self.distribution(cache, requested))
    }
}

/// Evicts the cached page with the largest median next-request time; ties go
/// to the lowest page index.
pub struct MedianPolicy {
    chain: Arc<MarkovChain>,
    cap: u64,
    // per target page: median time from every starting page
    times: RwLock<HashMap<usize, Arc<Vec<MedianTime>>>>,
}

impl MedianPolicy {
    pub fn new(chain: Arc<MarkovChain>) -> Self {
        let cap = default_median_cap(&chain);
        Self::with_cap(chain, cap)
    }

    pub fn with_cap(chain: Arc<MarkovChain>, cap: u64) -> Self {
        MedianPolicy {
            chain,
            cap: cap.max(1),
            times: RwLock::new(HashMap::new()),
        }
    }

    pub fn median(&self, s: usize, p: usize) -> MedianTime {
        if let Some(v) = self.times.read().get(&p) {
            return v[s];
        }
        let v = Arc::new(median_times_to(&self.chain, p, self.cap));
        let out = v[s];
        self.times.write().insert(p, v);
        out
    }

    pub fn choose(&self, cache: &[usize], requested: usize) -> usize {
        let mut best = cache[0];
        let mut best_t = self.median(requested, best);
        for &p in &cache[1..] {
            let t = self.median(requested, p);
            if t > best_t {
                best = p;
                best_t = t;
            }
        }
        best
    }
}

impl EvictionPolicy for MedianPolicy {
    fn name(&self) -> String {
        "median".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self.choose(ctx.cache.pages(), ctx.requested))
    }

    fn kernel(&self, cache: &[usize], requested: usize) -> Option<Result<EvictionDistribution>> {
        Some(Ok(EvictionDistribution::point(
            self.choose(cache, requested),
        )))
    }
}

/// Belady's offline rule: evict the page whose next request is latest.
pub struct FarthestInFuture;

impl EvictionPolicy for FarthestInFuture {
    fn name(&self) -> String {
        "fif".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        let seq = ctx.sequence.ok_or(Error::MissingContext {
            policy: self.name(),
            what: "the realized request sequence",
        })?;
        let future = seq.get(ctx.t + 1..).unwrap_or(&[]);
        let mut best = ctx.cache.pages()[0];
        let mut best_next = usize::MIN;
        for &p in ctx.cache.pages() {
            let next = future.iter().position(|&x| x == p).unwrap_or(usize::MAX);
            if next > best_next {
                best = p;
                best_next = next;
            }
        }
        Ok(best)
    }
}

pub struct Lru;

impl EvictionPolicy for Lru {
    fn name(&self) -> String {
        "lru".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        // None (never used) sorts first
        Ok(*ctx
            .cache
            .pages()
            .iter()
            .min_by_key(|&&p| (ctx.last_used[p], p))
            .expect("non-empty cache"))
    }
}

pub struct Fifo;

impl EvictionPolicy for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(*ctx
            .cache
            .pages()
            .iter()
            .min_by_key(|&&p| (ctx.inserted_at[p], p))
            .expect("non-empty cache"))
    }
}

pub struct RandomEviction;

impl EvictionPolicy for RandomEviction {
    fn name(&self) -> String {
        "random".into()
    }

    fn evict(&self, ctx: &EvictContext<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        let pages = ctx.cache.pages();
        Ok(pages[rng.gen_range(0..pages.len())])
    }

    fn kernel(&self, cache: &[usize], _requested: usize) -> Option<Result<EvictionDistribution>> {
        Some(Ok(EvictionDistribution::uniform(cache)))
    }
}

/// Never evicts `page`; otherwise evicts the lowest-index cached page.
pub struct PinnedPolicy {
    pub page: usize,
}

impl PinnedPolicy {
    fn choose(&self, cache: &[usize]) -> usize {
        cache
            .iter()
            .copied()
            .find(|&p| p != self.page)
            .unwrap_or(cache[0])
    }
}

impl EvictionPolicy for PinnedPolicy {
    fn name(&self) -> String {
        format!("pinned:{}", self.page)
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self.choose(ctx.cache.pages()))
    }

    fn kernel(&self, cache: &[usize], _requested: usize) -> Option<Result<EvictionDistribution>> {
        Some(Ok(EvictionDistribution::point(self.choose(cache))))
    }
}

/// Replays a fixed list of `(t, page)` evictions.
pub struct ScriptedPolicy {
    name: String,
    script: HashMap<usize, usize>,
}

impl ScriptedPolicy {
    pub fn new(name: impl Into<String>, script: impl IntoIterator<Item = (usize, usize)>) -> Self {
        ScriptedPolicy {
            name: name.into(),
            script: script.into_iter().collect(),
        }
    }
}

impl EvictionPolicy for ScriptedPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn evict(&self, ctx: &EvictContext<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        self.script
            .get(&ctx.t)
            .copied()
            .ok_or(Error::MissingContext {
                policy: self.name.clone(),
                what: "a scripted eviction for this step",
            })
    }
}

/// Outcome of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub hit: bool,
    pub evicted: Option<usize>,
}

/// One policy's cache evolving over a request sequence.
#[derive(Debug, Clone)]
pub struct CacheRun {
    cache: CacheState,
    last_used: Vec<Option<usize>>,
    inserted_at: Vec<Option<usize>>,
    misses: usize,
}

impl CacheRun {
    pub fn new(n: usize, init_cache: &[usize]) -> Result<Self> {
        Ok(CacheRun {
            cache: CacheState::new(init_cache.to_vec(), n)?,
            last_used: vec![None; n],
            inserted_at: vec![None; n],
            misses: 0,
        })
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn step(
        &mut self,
        policy: &dyn EvictionPolicy,
        t: usize,
        requested: usize,
        sequence: Option<&[usize]>,
        rng: &mut dyn RngCore,
    ) -> Result<StepResult> {
        let n = self.last_used.len();
        if requested >= n {
            return Err(Error::PageOutOfRange { page: requested, n });
        }
        let result = if self.cache.contains(requested) {
            StepResult {
                hit: true,
                evicted: None,
            }
        } else {
            let ctx = EvictContext {
                cache: &self.cache,
                requested,
                t,
                last_used: &self.last_used,
                inserted_at: &self.inserted_at,
                sequence,
            };
            let page = policy.evict(&ctx, rng)?;
            if !self.cache.contains(page) {
                return Err(Error::EvictedNotInCache {
                    policy: policy.name(),
                    page,
                });
            }
            self.cache.replace(page, requested);
            self.inserted_at[requested] = Some(t);
            self.misses += 1;
            StepResult {
                hit: false,
                evicted: Some(page),
            }
        };
        self.last_used[requested] = Some(t);
        self.cache.last_request = Some(requested);
        Ok(result)
    }
}

/// Policy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicySpec {
    Dominating,
    DominatingAdversarial(usize),
    Median,
    Fif,
    Lru,
    Fifo,
    Random,
    OptDp,
    Pinned(usize),
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let page = |arg: &str| {
            arg.parse::<usize>()
                .map_err(|_| Error::UnknownPolicy(s.to_string()))
        };
        Ok(match s {
            "dominating" => PolicySpec::Dominating,
            "median" => PolicySpec::Median,
            "fif" => PolicySpec::Fif,
            "lru" => PolicySpec::Lru,
            "fifo" => PolicySpec::Fifo,
            "random" => PolicySpec::Random,
            "opt-dp" => PolicySpec::OptDp,
            _ => match s.split_once(':') {
                Some(("dominating-adversarial", arg)) => {
                    PolicySpec::DominatingAdversarial(page(arg)?)
                }
                Some(("pinned", arg)) => PolicySpec::Pinned(page(arg)?),
                _ => return Err(Error::UnknownPolicy(s.to_string())),
            },
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Dominating => write!(f, "dominating"),
            PolicySpec::DominatingAdversarial(t) => write!(f, "dominating-adversarial:{t}"),
            PolicySpec::Median => write!(f, "median"),
            PolicySpec::Fif => write!(f, "fif"),
            PolicySpec::Lru => write!(f, "lru"),
            PolicySpec::Fifo => write!(f, "fifo"),
            PolicySpec::Random => write!(f, "random"),
            PolicySpec::OptDp => write!(f, "opt-dp"),
            PolicySpec::Pinned(p) => write!(f, "pinned:{p}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::alpha_table;
    use crate::chain::{
        build_lb_chain, build_warmup_chain, iid_chain, random_chain, validate_chain,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_sub(k: usize) -> Vec<f64> {
        (0..k * k)
            .map(|i| if i / k == i % k { 0.0 } else { 0.5 })
            .collect()
    }

    #[test]
    fn uniform_sub_gives_uniform_mu() {
        for k in 1..6 {
            let pages: Vec<usize> = (0..k).collect();
            let sub = uniform_sub(k);
            let d = dominating_distribution(&pages, &sub).unwrap();
            for &(_, w) in d.support() {
                assert!((w - 1.0 / k as f64).abs() < 1e-12);
            }
            let mu: Vec<f64> = d.support().iter().map(|x| x.1).collect();
            let v = max_column_value(&sub, &mu);
            assert!((v - (k as f64 - 1.0) / (2.0 * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_sub_adversarial_puts_all_mass_on_target() {
        let pages = [2, 5, 7];
        let sub = uniform_sub(3);
        let d = adversarial_dominating(&pages, &sub, 5).unwrap();
        assert!((d.prob(5) - 1.0).abs() < 1e-12);
        let mu: Vec<f64> = pages.iter().map(|&p| d.prob(p)).collect();
        assert!(max_column_value(&sub, &mu) <= 0.5 + DOMINANCE_TOLERANCE);
    }

    #[test]
    fn warmup_interval_and_adversarial_endpoint() {
        for eps in [0.3, 0.1, 1e-3] {
            let c = build_warmup_chain(eps).unwrap();
            let a = alpha_table(&c).unwrap();
            let pages = [0, 1];
            let sub = a.restrict(&pages, 2);
            let lo = (3.0 * eps - 2.0) / (2.0 * eps);
            let hi = (2.0 - eps) / (4.0 - 4.0 * eps);
            let x = dominating_distribution(&pages, &sub).unwrap().prob(0);
            assert!(
                x >= lo - 1e-12 && x <= hi + 1e-12,
                "{x} not in [{lo}, {hi}]"
            );
            let x = adversarial_dominating(&pages, &sub, 0).unwrap().prob(0);
            assert!((x - hi).abs() < 1e-12);
        }
    }

    #[test]
    fn lb_adversarial_probabilities() {
        let (eps, eps1) = (0.1, 0.05);
        let c = build_lb_chain(eps, eps1).unwrap();
        let a = alpha_table(&c).unwrap();
        let x = adversarial_dominating(&[0, 1], &a.restrict(&[0, 1], 2), 0).unwrap();
        assert!((x.prob(0) - 0.95 / 1.8).abs() < 1e-12);
        let (eps, eps1) = (0.1, 0.07);
        let c = build_lb_chain(eps, eps1).unwrap();
        let a = alpha_table(&c).unwrap();
        let x = adversarial_dominating(&[0, 1], &a.restrict(&[0, 1], 2), 0).unwrap();
        assert!((x.prob(0) - (1.0 - eps + eps1) / (2.0 - 2.0 * eps)).abs() < 1e-12);
        let x = adversarial_dominating(&[1, 2], &a.restrict(&[1, 2], 0), 1).unwrap();
        assert!((x.prob(1) - eps / (2.0 * eps1)).abs() < 1e-12);
        let x = adversarial_dominating(&[0, 2], &a.restrict(&[0, 2], 1), 0).unwrap();
        assert!((x.prob(0) - (1.0 - eps1) / (2.0 - 2.0 * eps)).abs() < 1e-12);
    }

    #[test]
    fn random_instances_are_dominated() {
        // existence: LP optimum never exceeds 1/2
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(3..=6);
            let k = rng.gen_range(2..=4.min(n - 1));
            let c = random_chain(n, 0.0, &mut rng).unwrap();
            let a = alpha_table(&c).unwrap();
            let mut pages: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                pages.swap(i, rng.gen_range(0..=i));
            }
            let s = pages[k];
            let mut cache = pages[..k].to_vec();
            cache.sort_unstable();
            let sub = a.restrict(&cache, s);
            let d = dominating_distribution(&cache, &sub).unwrap();
            let mu: Vec<f64> = cache.iter().map(|&p| d.prob(p)).collect();
            assert!(max_column_value(&sub, &mu) <= 0.5 + DOMINANCE_TOLERANCE);
            let t = cache[rng.gen_range(0..k)];
            let d = adversarial_dominating(&cache, &sub, t).unwrap();
            let mu: Vec<f64> = cache.iter().map(|&p| d.prob(p)).collect();
            assert!(max_column_value(&sub, &mu) <= 0.5 + DOMINANCE_TOLERANCE);
        }
    }

    #[test]
    fn infeasible_on_corrupt_input() {
        // every page "before" every other with certainty: no mu can dominate
        let sub = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert!(matches!(
            dominating_distribution(&[0, 1, 2], &sub),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn median_examples() {
        let c = iid_chain(&[0.5, 0.5]).unwrap();
        assert_eq!(median_index(&c, 0, 1, 10), MedianTime::Finite(1));
        let c4 = iid_chain(&[0.25; 4]).unwrap();
        assert_eq!(median_index(&c4, 0, 3, 100), MedianTime::Finite(3));
        // the general recursion agrees with the i.i.d. fast path
        let general = validate_chain(
            vec![
                vec![0.25, 0.25, 0.25, 0.25 + 1e-17],
                vec![0.25; 4],
                vec![0.25; 4],
                vec![0.25; 4],
            ],
            None,
        )
        .unwrap();
        assert_eq!(median_index(&general, 0, 3, 100), MedianTime::Finite(3));
        // geometric CDF oracle for other row values
        for r in [0.01, 0.1, 0.3, 0.45] {
            let c = iid_chain(&[r, 1.0 - r]).unwrap();
            let mut t = 1;
            while 1.0 - (1.0 - r).powi(t) < 0.5 {
                t += 1;
            }
            assert_eq!(median_index(&c, 1, 0, 10_000), MedianTime::Finite(t as u64));
        }
    }

    #[test]
    fn median_unreachable_is_infinite() {
        let c = validate_chain(
            vec![
                vec![0.5, 0.5, 0.0],
                vec![0.5, 0.5, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            None,
        )
        .unwrap();
        for cap in [1, 10, 1000] {
            assert_eq!(median_index(&c, 0, 2, cap), MedianTime::Infinite);
        }
    }

    #[test]
    fn median_monotone_in_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_chain(5, 0.01, &mut rng).unwrap();
        for p in 0..5 {
            let full = median_times_to(&c, p, 100_000);
            for cap in [1, 2, 5, 50] {
                let capped = median_times_to(&c, p, cap);
                for s in 0..5 {
                    if let MedianTime::Finite(t) = capped[s] {
                        assert_eq!(full[s], MedianTime::Finite(t));
                    }
                }
            }
        }
    }

    #[test]
    fn median_tie_goes_to_lowest_index() {
        // pages 2 and 3 are unreachable from the requested page 0
        let c = Arc::new(
            validate_chain(
                vec![
                    vec![0.5, 0.5, 0.0, 0.0],
                    vec![0.5, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 0.5, 0.5],
                    vec![0.0, 0.0, 0.5, 0.5],
                ],
                None,
            )
            .unwrap(),
        );
        let m = MedianPolicy::new(c);
        assert_eq!(m.choose(&[1, 2, 3], 0), 2);
    }

    fn ctx_for<'a>(
        cache: &'a CacheState,
        requested: usize,
        t: usize,
        last: &'a [Option<usize>],
        ins: &'a [Option<usize>],
        seq: Option<&'a [usize]>,
    ) -> EvictContext<'a> {
        EvictContext {
            cache,
            requested,
            t,
            last_used: last,
            inserted_at: ins,
            sequence: seq,
        }
    }

    #[test]
    fn fif_evicts_farthest() {
        let cache = CacheState::new(vec![0, 1], 3).unwrap();
        let seq = [2, 0, 1, 2];
        let none = [None; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = ctx_for(&cache, 2, 0, &none, &none, Some(&seq));
        assert_eq!(FarthestInFuture.evict(&ctx, &mut rng).unwrap(), 1);
        let ctx = ctx_for(&cache, 2, 0, &none, &none, None);
        assert!(matches!(
            FarthestInFuture.evict(&ctx, &mut rng),
            Err(Error::MissingContext { .. })
        ));
        // neither page requested again: lowest index
        let seq = [2, 2, 2];
        let ctx = ctx_for(&cache, 2, 0, &none, &none, Some(&seq));
        assert_eq!(FarthestInFuture.evict(&ctx, &mut rng).unwrap(), 0);
    }

    #[test]
    fn lru_and_fifo_differ() {
        // cache {0,1}; 0 inserted first but used last
        let n = 3;
        let mut run_lru = CacheRun::new(n, &[0, 1]).unwrap();
        let mut run_fifo = CacheRun::new(n, &[0, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = [1, 0, 2];
        let mut lru_ev = None;
        let mut fifo_ev = None;
        for (t, &r) in seq.iter().enumerate() {
            lru_ev = run_lru
                .step(&Lru, t, r, None, &mut rng)
                .unwrap()
                .evicted
                .or(lru_ev);
            fifo_ev = run_fifo
                .step(&Fifo, t, r, None, &mut rng)
                .unwrap()
                .evicted
                .or(fifo_ev);
        }
        assert_eq!(lru_ev, Some(1));
        assert_eq!(fifo_ev, Some(0));
    }

    #[test]
    fn dominating_policy_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_chain(5, 0.02, &mut rng).unwrap();
        let pol =
            DominatingPolicy::new(Arc::new(alpha_table(&c).unwrap()), DominatingMode::Standard);
        let seq = crate::chain::sample_sequence(&c, 500, 3).pages;
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut cr = CacheRun::new(5, &[0, 1]).unwrap();
            let mut ev = Vec::new();
            for (t, &p) in seq.iter().enumerate() {
                ev.push(cr.step(&pol, t, p, None, &mut r).unwrap().evicted);
            }
            ev
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn evicted_always_cached() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = Arc::new(random_chain(6, 0.01, &mut rng).unwrap());
        let alpha = Arc::new(alpha_table(&c).unwrap());
        let policies: Vec<Box<dyn EvictionPolicy>> = vec![
            Box::new(DominatingPolicy::new(
                alpha.clone(),
                DominatingMode::Standard,
            )),
            Box::new(DominatingPolicy::new(
                alpha,
                DominatingMode::Adversarial { target: 2 },
            )),
            Box::new(MedianPolicy::new(c.clone())),
            Box::new(FarthestInFuture),
            Box::new(Lru),
            Box::new(Fifo),
            Box::new(RandomEviction),
            Box::new(PinnedPolicy { page: 0 }),
        ];
        let seq = crate::chain::sample_sequence(&c, 400, 5).pages;
        for pol in &policies {
            let mut cr = CacheRun::new(6, &[0, 1, 2]).unwrap();
            for (t, &p) in seq.iter().enumerate() {
                let before = cr.cache().clone();
                let out = cr.step(pol.as_ref(), t, p, Some(&seq), &mut rng).unwrap();
                if let Some(e) = out.evicted {
                    assert!(before.contains(e));
                }
                assert_eq!(cr.cache().k(), 3);
                assert!(cr.cache().contains(p));
            }
        }
    }

    #[test]
    fn scripted_policy_rejects_bad_page() {
        let pol = ScriptedPolicy::new("s", [(0, 2)]);
        let mut cr = CacheRun::new(4, &[0, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            cr.step(&pol, 0, 3, None, &mut rng),
            Err(Error::EvictedNotInCache { page: 2, .. })
        ));
        assert!(matches!(
            cr.step(&pol, 1, 3, None, &mut rng),
            Err(Error::MissingContext { .. })
        ));
    }

    #[test]
    fn policy_names_roundtrip() {
        for s in [
            "dominating",
            "dominating-adversarial:3",
            "median",
            "fif",
            "lru",
            "fifo",
            "random",
            "opt-dp",
            "pinned:0",
        ] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
        assert!("belady".parse::<PolicySpec>().is_err());
        assert!("dominating-adversarial:x".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn cache_state_validation() {
        assert!(CacheState::new(vec![1, 1], 3).is_err());
        assert!(CacheState::new(vec![0, 5], 3).is_err());
        assert!(CacheState::new(vec![], 3).is_err());
        assert_eq!(CacheState::new(vec![2, 0], 3).unwrap().pages(), &[0, 2]);
    }
}
