//! Monte Carlo and exact expected-miss computations, plus ratio reports.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::alpha::{alpha_table, AlphaTable};
use crate::chain::{sample_with, trial_rng, MarkovChain, Stream};
use crate::error::{Error, Result};
use crate::optdp::{
    opt_expected_cost, state_steps, OptDpPolicy, OptOptions, OptTable, SubsetIndex, DEFAULT_BUDGET,
};
use crate::policies::{
    CacheRun, DominatingMode, DominatingPolicy, EvictionPolicy, FarthestInFuture, Fifo, Lru,
    MedianPolicy, PinnedPolicy, PolicySpec, RandomEviction,
};

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;
/// Largest allowed deviation of total probability mass in exact mode.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// 95% half-width; 0 in exact mode.
    pub half_width: f64,
    pub trials: usize,
    pub mode: EstimateMode,
}

impl CostEstimate {
    pub fn exact(mean: f64) -> Self {
        CostEstimate {
            mean,
            half_width: 0.0,
            trials: 0,
            mode: EstimateMode::Exact,
        }
    }

    /// Normal-approximation estimate from per-trial samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let half_width = if n < 2 {
            f64::INFINITY
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        };
        CostEstimate {
            mean,
            half_width,
            trials: n,
            mode: EstimateMode::MonteCarlo,
        }
    }

    /// Standard error implied by the half-width.
    pub fn std_error(&self) -> f64 {
        self.half_width / Z95
    }
}

fn check_setup(chain: &MarkovChain, k: usize, init_cache: &[usize]) -> Result<()> {
    if init_cache.len() != k {
        return Err(Error::InvalidCache(format!(
            "initial cache {init_cache:?} does not have {k} pages"
        )));
    }
    if k >= chain.n() {
        return Err(Error::InvalidArgument(format!(
            "need k < n (k={k}, n={})",
            chain.n()
        )));
    }
    Ok(())
}

/// Miss count of `policy` on one sampled sequence of length `horizon`.
///
/// The sequence comes from the `Requests` stream of `(seed, trial)`, so every
/// policy evaluated with the same seed sees the same requests.
pub fn run_trial(
    policy: &dyn EvictionPolicy,
    chain: &MarkovChain,
    horizon: usize,
    init_cache: &[usize],
    seed: u64,
    trial: u64,
) -> Result<usize> {
    let seq = sample_with(
        chain,
        horizon,
        &mut trial_rng(seed, trial, Stream::Requests),
    );
    let mut rng = trial_rng(seed, trial, Stream::Policy);
    let mut run = CacheRun::new(chain.n(), init_cache)?;
    for (t, &page) in seq.iter().enumerate() {
        run.step(policy, t, page, Some(&seq), &mut rng)?;
    }
    Ok(run.misses())
}

/// Per-trial miss counts, in trial order.
pub fn simulate_trials(
    policy: &dyn EvictionPolicy,
    chain: &MarkovChain,
    k: usize,
    horizon: usize,
    init_cache: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_setup(chain, k, init_cache)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(policy, chain, horizon, init_cache, seed, trial))
        .collect()
}

pub fn simulate(
    policy: &dyn EvictionPolicy,
    chain: &MarkovChain,
    k: usize,
    horizon: usize,
    init_cache: &[usize],
    trials: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let counts = simulate_trials(policy, chain, k, horizon, init_cache, trials, seed)?;
    let samples: Vec<f64> = counts.into_iter().map(|c| c as f64).collect();
    Ok(CostEstimate::from_samples(&samples))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-step miss probabilities from evolving the exact distribution over
/// `(cache, last request)`.
pub fn exact_miss_probabilities(
    policy: &dyn EvictionPolicy,
    chain: &MarkovChain,
    k: usize,
    horizon: usize,
    init_cache: &[usize],
    budget: u128,
) -> Result<Vec<f64>> {
    check_setup(chain, k, init_cache)?;
    let n = chain.n();
    let needed = state_steps(n, k, horizon);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let index = SubsetIndex::new(n, k);
    let r_count = index.count() as usize;
    let mut c0 = init_cache.to_vec();
    c0.sort_unstable();
    crate::policies::CacheState::new(c0.clone(), n)?;

    // kernel[r * n + j]: successor ranks and probabilities on a miss
    let mut kernel: Vec<Option<Vec<(usize, f64)>>> = vec![None; r_count * n];
    let mut pages = vec![0; k];
    let mut transition =
        |r: usize, j: usize, kernel: &mut Vec<Option<Vec<(usize, f64)>>>| -> Result<bool> {
            index.unrank(r, &mut pages);
            if pages.contains(&j) {
                return Ok(true);
            }
            if kernel[r * n + j].is_none() {
                let dist = policy
                    .kernel(&pages, j)
                    .ok_or_else(|| Error::NonMemoryless(policy.name()))??;
                let mut out = Vec::with_capacity(dist.support().len());
                let mut next = Vec::with_capacity(k);
                for &(e, w) in dist.support() {
                    if !pages.contains(&e) {
                        return Err(Error::EvictedNotInCache {
                            policy: policy.name(),
                            page: e,
                        });
                    }
                    if w > 0.0 {
                        next.clear();
                        next.extend(pages.iter().copied().filter(|&p| p != e));
                        let pos = next.partition_point(|&p| p < j);
                        next.insert(pos, j);
                        out.push((index.rank(&next), w));
                    }
                }
                kernel[r * n + j] = Some(out);
            }
            Ok(false)
        };

    let mut probs = Vec::with_capacity(horizon);
    if horizon == 0 {
        return Ok(probs);
    }
    let mut cur = vec![0.0; r_count * n];
    let mut next = vec![0.0; r_count * n];
    // first request from the initial distribution
    let r0 = index.rank(&c0);
    let mut miss = CompensatedSum::default();
    for (j, &pj) in chain.init().iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        if transition(r0, j, &mut kernel)? {
            cur[r0 * n + j] += pj;
        } else {
            miss.add(pj);
            for &(r2, w) in kernel[r0 * n + j].as_ref().expect("filled") {
                cur[r2 * n + j] += pj * w;
            }
        }
    }
    probs.push(miss.value());
    for _ in 1..horizon {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut miss = CompensatedSum::default();
        let mut mass = CompensatedSum::default();
        for r in 0..r_count {
            for s in 0..n {
                let ps = cur[r * n + s];
                if ps == 0.0 {
                    continue;
                }
                mass.add(ps);
                for (j, &m) in chain.row(s).iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    let w = ps * m;
                    if transition(r, j, &mut kernel)? {
                        next[r * n + j] += w;
                    } else {
                        miss.add(w);
                        for &(r2, pe) in kernel[r * n + j].as_ref().expect("filled") {
                            next[r2 * n + j] += w * pe;
                        }
                    }
                }
            }
        }
        if (mass.value() - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::ProbabilityDrift(mass.value()));
        }
        probs.push(miss.value());
        std::mem::swap(&mut cur, &mut next);
    }
    let total: f64 = cur.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::ProbabilityDrift(total));
    }
    Ok(probs)
}

/// Exact expected misses for a policy whose evictions depend only on the
/// cache and the requested page.
pub fn exact_cost(
    policy: &dyn EvictionPolicy,
    chain: &MarkovChain,
    k: usize,
    horizon: usize,
    init_cache: &[usize],
) -> Result<CostEstimate> {
    let probs = exact_miss_probabilities(policy, chain, k, horizon, init_cache, DEFAULT_BUDGET)?;
    let mut total = CompensatedSum::default();
    for p in probs {
        total.add(p);
    }
    Ok(CostEstimate::exact(total.value()))
}

/// Builds policies by name, computing the alpha table and OPT table on
/// first use.
pub struct PolicyContext {
    chain: Arc<MarkovChain>,
    k: usize,
    horizon: usize,
    init_cache: Vec<usize>,
    budget: u128,
    alpha: OnceLock<Arc<AlphaTable>>,
    opt: OnceLock<Arc<OptTable>>,
}

impl PolicyContext {
    pub fn new(chain: Arc<MarkovChain>, k: usize, horizon: usize, init_cache: Vec<usize>) -> Self {
        PolicyContext {
            chain,
            k,
            horizon,
            init_cache,
            budget: DEFAULT_BUDGET,
            alpha: OnceLock::new(),
            opt: OnceLock::new(),
        }
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_alpha(self, alpha: Arc<AlphaTable>) -> Result<Self> {
        if alpha.n() != self.chain.n() {
            return Err(Error::InvalidArgument(format!(
                "alpha table has {} pages, chain has {}",
                alpha.n(),
                self.chain.n()
            )));
        }
        let _ = self.alpha.set(alpha);
        Ok(self)
    }

    pub fn with_opt_table(self, table: Arc<OptTable>) -> Result<Self> {
        if table.chain_hash() != self.chain.hash()
            || table.k() != self.k
            || table.horizon() != self.horizon
            || table.init_cache() != self.sorted_init().as_slice()
        {
            return Err(Error::InvalidArgument(
                "OPT table was built for a different chain, k, T or initial cache".into(),
            ));
        }
        let _ = self.opt.set(table);
        Ok(self)
    }

    fn sorted_init(&self) -> Vec<usize> {
        let mut c = self.init_cache.clone();
        c.sort_unstable();
        c
    }

    pub fn chain(&self) -> &Arc<MarkovChain> {
        &self.chain
    }

    pub fn alpha(&self) -> Result<Arc<AlphaTable>> {
        if let Some(a) = self.alpha.get() {
            return Ok(a.clone());
        }
        let a = Arc::new(alpha_table(&self.chain)?);
        Ok(self.alpha.get_or_init(|| a).clone())
    }

    pub fn opt_table(&self) -> Result<Arc<OptTable>> {
        if let Some(t) = self.opt.get() {
            return Ok(t.clone());
        }
        let options = OptOptions {
            budget: self.budget,
            ..OptOptions::default()
        };
        let (_, table) =
            opt_expected_cost(&self.chain, self.k, self.horizon, &self.init_cache, options)?;
        Ok(self.opt.get_or_init(|| Arc::new(table)).clone())
    }

    pub fn build(&self, spec: PolicySpec) -> Result<Box<dyn EvictionPolicy>> {
        let n = self.chain.n();
        let page_ok = |p: usize| {
            if p < n {
                Ok(p)
            } else {
                Err(Error::PageOutOfRange { page: p, n })
            }
        };
        Ok(match spec {
            PolicySpec::Dominating => Box::new(DominatingPolicy::new(
                self.alpha()?,
                DominatingMode::Standard,
            )),
            PolicySpec::DominatingAdversarial(t) => Box::new(DominatingPolicy::new(
                self.alpha()?,
                DominatingMode::Adversarial {
                    target: page_ok(t)?,
                },
            )),
            PolicySpec::Median => Box::new(MedianPolicy::new(self.chain.clone())),
            PolicySpec::Fif => Box::new(FarthestInFuture),
            PolicySpec::Lru => Box::new(Lru),
            PolicySpec::Fifo => Box::new(Fifo),
            PolicySpec::Random => Box::new(RandomEviction),
            PolicySpec::OptDp => Box::new(OptDpPolicy::new(self.opt_table()?)?),
            PolicySpec::Pinned(p) => Box::new(PinnedPolicy { page: page_ok(p)? }),
        })
    }
}

/// What ratios are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Exact optimal online cost from the DP.
    OptDp,
    /// Monte Carlo estimate of a named policy on the same sequences.
    Policy(PolicySpec),
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<PolicySpec>()? {
            PolicySpec::OptDp => Ok(Baseline::OptDp),
            other => Ok(Baseline::Policy(other)),
        }
    }
}

/// One CSV row of a ratio report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub policy: String,
    pub mean: f64,
    pub ci: f64,
    pub baseline_mean: f64,
    pub baseline_ci: f64,
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub chain_hash: String,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Worst-case interval for `a / b` given two 95% intervals.
pub fn ratio_interval(a: &CostEstimate, b: &CostEstimate) -> (f64, f64) {
    let lo = safe_div((a.mean - a.half_width).max(0.0), b.mean + b.half_width);
    let hi = safe_div(a.mean + a.half_width, (b.mean - b.half_width).max(0.0));
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct RatioConfig {
    pub k: usize,
    pub horizon: usize,
    pub init_cache: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

pub fn ratio_report(
    ctx: &PolicyContext,
    config: &RatioConfig,
    policies: &[PolicySpec],
    baseline: Baseline,
) -> Result<Vec<ReportRow>> {
    let chain = ctx.chain().clone();
    let estimate = |spec: PolicySpec| -> Result<CostEstimate> {
        let policy = ctx.build(spec)?;
        simulate(
            policy.as_ref(),
            &chain,
            config.k,
            config.horizon,
            &config.init_cache,
            config.trials,
            config.seed,
        )
    };
    let base = match baseline {
        Baseline::OptDp => CostEstimate::exact(ctx.opt_table()?.value()),
        Baseline::Policy(spec) => estimate(spec)?,
    };
    let hash = chain.hash();
    policies
        .iter()
        .map(|&spec| {
            let est = estimate(spec)?;
            let (ratio_low, ratio_high) = ratio_interval(&est, &base);
            Ok(ReportRow {
                policy: spec.to_string(),
                mean: est.mean,
                ci: est.half_width,
                baseline_mean: base.mean,
                baseline_ci: base.half_width,
                ratio_low,
                ratio_high,
                chain_hash: hash.clone(),
                k: config.k,
                horizon: config.horizon,
                seed: config.seed,
            })
        })
        .collect()
}
