use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use markov_paging::alpha::{alpha_table, gamma};
use markov_paging::audit::{
    check_accounting, run_audit, step_delta_check, AuditConfig, AuditReport, Fault, Scheme,
};
use markov_paging::chain::{
    build_lb_chain, build_warmup_chain, iid_chain, load_chain, random_chain, sample_with,
    trial_rng, MarkovChain, Stream,
};
use markov_paging::engine::{
    exact_cost, ratio_report, simulate, Baseline, PolicyContext, RatioConfig,
};
use markov_paging::learn::{
    approx_alpha, certified_factor, estimate_transition, load_trace, ApproxAlphaBundle, GammaSource,
};
use markov_paging::lowerbound::{search, warmup_ratio, WarmupHorizon};
use markov_paging::optdp::{opt_expected_cost, OptOptions};
use markov_paging::policies::{DominatingMode, DominatingPolicy, PolicySpec};
use markov_paging::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    AlphaArgs, AuditArgs, Builder, CacheArgs, ChainArgs, Command, FaultArg, LearnArgs,
    LowerboundArgs, OptArgs, OutArgs, RatioArgs, SchemeArg, SimulateArgs,
};
use crate::CliError;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Alpha(a) => alpha(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Opt(a) => opt(a),
        Command::Ratio(a) => ratio(a),
        Command::Audit(a) => audit(a),
        Command::Lowerbound(a) => lowerbound(a),
        Command::Learn(a) => learn(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Prefixes a library error with the flag it came from.
fn flag_err(flag: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{flag}: {e}"))
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| usage("--seed is required for this subcommand"))
}

fn has_chain(c: &ChainArgs) -> bool {
    c.chain.is_some() || c.builder.is_some() || c.n.is_some()
}

fn load_chain_source(c: &ChainArgs, seed: Option<u64>) -> Result<MarkovChain, CliError> {
    let builder = match (&c.chain, c.builder, c.n) {
        (Some(path), _, _) => {
            return load_chain(path).map_err(|e| usage(format!("--chain {}: {e}", path.display())))
        }
        (None, Some(b), _) => b,
        (None, None, Some(_)) => Builder::Random,
        (None, None, None) => return Err(usage("no chain given: use --chain, --builder or --n")),
    };
    let eps = || {
        c.eps
            .ok_or_else(|| usage("--eps is required by this builder"))
    };
    match builder {
        Builder::Lb => {
            let frac = c
                .eps1_frac
                .ok_or_else(|| usage("--eps1-frac is required by --builder lb"))?;
            let eps = eps()?;
            build_lb_chain(eps, frac * eps).map_err(flag_err("--eps/--eps1-frac"))
        }
        Builder::Warmup => build_warmup_chain(eps()?).map_err(flag_err("--eps")),
        Builder::Random => {
            let n =
                c.n.ok_or_else(|| usage("--n is required by --builder random"))?;
            let seed = c
                .chain_seed
                .or(seed)
                .ok_or_else(|| usage("--chain-seed or --seed is required by --builder random"))?;
            random_chain(n, c.floor, &mut ChaCha8Rng::seed_from_u64(seed))
                .map_err(flag_err("--n/--floor"))
        }
        Builder::Iid => iid_chain(&c.row).map_err(flag_err("--row")),
    }
}

struct CacheSetup {
    k: usize,
    horizon: usize,
    init: Vec<usize>,
}

fn cache_setup(
    c: &CacheArgs,
    chain: &MarkovChain,
    defaults: Option<(usize, u64)>,
) -> Result<CacheSetup, CliError> {
    let k =
        c.k.or(defaults.map(|d| d.0))
            .ok_or_else(|| usage("--k is required"))?;
    if k == 0 || k >= chain.n() {
        return Err(usage(format!(
            "--k: need 0 < k < n (k={k}, n={})",
            chain.n()
        )));
    }
    let horizon = c
        .horizon
        .or(defaults.map(|d| d.1))
        .ok_or_else(|| usage("--T is required"))? as usize;
    let init = if c.init_cache.is_empty() {
        (0..k).collect()
    } else {
        c.init_cache.clone()
    };
    markov_paging::CacheState::new(init.clone(), chain.n()).map_err(flag_err("--init-cache"))?;
    if init.len() != k {
        return Err(usage(format!(
            "--init-cache: {} pages given for k={k}",
            init.len()
        )));
    }
    Ok(CacheSetup { k, horizon, init })
}

fn parse_policies(names: &[String], flag: &str) -> Result<Vec<PolicySpec>, CliError> {
    names
        .iter()
        .map(|s| {
            s.parse::<PolicySpec>()
                .map_err(|e| usage(format!("{flag}: {e}")))
        })
        .collect()
}

fn writer(out: &OutArgs) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match &out.out {
        Some(path) => Box::new(
            File::create(path)
                .map_err(|e| CliError::Io(format!("--out {}: {e}", path.display())))?,
        ),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn write_rows<T: Serialize>(out: &OutArgs, rows: &[T]) -> Result<(), CliError> {
    let mut w = writer(out)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AlphaRow {
    p: usize,
    q: usize,
    s: usize,
    alpha: f64,
}

fn alpha(a: AlphaArgs) -> Result<(), CliError> {
    let chain = load_chain_source(&a.chain, a.seed)?;
    let table = alpha_table(&chain)?;
    let n = chain.n();
    let mut rows = Vec::with_capacity(n * n * n);
    for p in 0..n {
        for q in (0..n).filter(|&q| q != p) {
            for s in 0..n {
                rows.push(AlphaRow {
                    p,
                    q,
                    s,
                    alpha: table.get(p, q, s),
                });
            }
        }
    }
    if let Some(path) = &a.save_table {
        table.save(path).map_err(flag_err("--save-table"))?;
    }
    eprintln!("gamma = {}", gamma(&chain)?);
    write_rows(&a.out, &rows)
}

#[derive(Serialize)]
struct SimulateRow {
    policy: String,
    mode: &'static str,
    mean: f64,
    ci: f64,
    trials: usize,
    chain_hash: String,
    k: usize,
    #[serde(rename = "T")]
    horizon: usize,
    seed: u64,
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), CliError> {
    let seed = require_seed(a.seed)?;
    let chain = Arc::new(load_chain_source(&a.chain, Some(seed))?);
    let setup = cache_setup(&a.cache, &chain, None)?;
    let specs = parse_policies(&a.policies, "--policies")?;
    let ctx = PolicyContext::new(chain.clone(), setup.k, setup.horizon, setup.init.clone());
    let hash = chain.hash();
    let mut rows = Vec::new();
    for spec in specs {
        let policy = ctx.build(spec)?;
        let est = if a.exact {
            exact_cost(policy.as_ref(), &chain, setup.k, setup.horizon, &setup.init)
                .map_err(|e| usage(format!("--exact with {spec}: {e}")))?
        } else {
            simulate(
                policy.as_ref(),
                &chain,
                setup.k,
                setup.horizon,
                &setup.init,
                a.trials,
                seed,
            )?
        };
        rows.push(SimulateRow {
            policy: spec.to_string(),
            mode: if a.exact { "exact" } else { "monte-carlo" },
            mean: est.mean,
            ci: est.half_width,
            trials: est.trials,
            chain_hash: hash.clone(),
            k: setup.k,
            horizon: setup.horizon,
            seed,
        });
    }
    write_rows(&a.out, &rows)
}

#[derive(Serialize)]
struct OptRow {
    chain_hash: String,
    n: usize,
    k: usize,
    #[serde(rename = "T")]
    horizon: usize,
    value: f64,
}

fn opt(a: OptArgs) -> Result<(), CliError> {
    let chain = load_chain_source(&a.chain, a.seed)?;
    let setup = cache_setup(&a.cache, &chain, None)?;
    let mut options = OptOptions {
        keep_actions: a.dump.is_some(),
        ..OptOptions::default()
    };
    if let Some(b) = a.budget {
        options.budget = b as u128;
    }
    let (value, table) = opt_expected_cost(&chain, setup.k, setup.horizon, &setup.init, options)
        .map_err(|e| match e {
            Error::BudgetExceeded { .. } => usage(format!("--budget: {e}")),
            e => e.into(),
        })?;
    if let Some(path) = &a.dump {
        table.save(path).map_err(flag_err("--dump"))?;
    }
    write_rows(
        &a.out,
        &[OptRow {
            chain_hash: chain.hash(),
            n: chain.n(),
            k: setup.k,
            horizon: setup.horizon,
            value,
        }],
    )
}

fn ratio(a: RatioArgs) -> Result<(), CliError> {
    let chain = Arc::new(load_chain_source(&a.chain, Some(a.seed))?);
    let setup = cache_setup(&a.cache, &chain, None)?;
    let specs = parse_policies(&a.policies, "--policies")?;
    let baseline: Baseline = a.baseline.parse().map_err(flag_err("--baseline"))?;
    let ctx = PolicyContext::new(chain, setup.k, setup.horizon, setup.init.clone());
    let config = RatioConfig {
        k: setup.k,
        horizon: setup.horizon,
        init_cache: setup.init,
        trials: a.trials,
        seed: a.seed,
    };
    let rows = ratio_report(&ctx, &config, &specs, baseline)?;
    write_rows(&a.out, &rows)
}

#[derive(Serialize)]
struct AuditRow {
    run: usize,
    scheme: Scheme,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "T_ext")]
    resolve_horizon: usize,
    #[serde(rename = "A_misses")]
    a_misses: usize,
    ref_misses: usize,
    beta_sum: usize,
    #[serde(rename = "I")]
    i: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "O")]
    o: usize,
    #[serde(rename = "U")]
    u: usize,
    #[serde(rename = "Phi")]
    phi: i64,
    #[serde(rename = "min_Phi")]
    min_phi: i64,
    bound: f64,
    accounting_holds: bool,
    bound_with_i: Option<f64>,
    delta_holds: Option<bool>,
    positivity_holds: Option<bool>,
    violations: usize,
    ambiguities: usize,
}

#[derive(Serialize)]
struct ViolationRow {
    run: usize,
    t: usize,
    what: String,
}

fn audit(a: AuditArgs) -> Result<(), CliError> {
    let seed = require_seed(a.seed)?;
    let chain = Arc::new(load_chain_source(&a.chain, Some(seed))?);
    let setup = cache_setup(&a.cache, &chain, None)?;
    if a.ext_mult == 0 {
        return Err(usage("--ext-mult must be at least 1"));
    }
    let algo = a
        .policy
        .parse::<PolicySpec>()
        .map_err(flag_err("--policy"))?;
    let reference = a
        .reference
        .parse::<PolicySpec>()
        .map_err(flag_err("--reference"))?;
    let ctx = PolicyContext::new(chain.clone(), setup.k, setup.horizon, setup.init.clone());
    let algo = ctx.build(algo)?;
    let reference = ctx.build(reference)?;
    let scheme = match a.scheme {
        SchemeArg::Original => Scheme::Original,
        SchemeArg::Updated => Scheme::Updated,
    };
    let t_ext = setup.horizon * a.ext_mult;
    let reports: Vec<AuditReport> = (0..a.trials)
        .into_par_iter()
        .map(|run| {
            let seq = sample_with(
                &chain,
                t_ext,
                &mut trial_rng(seed, run as u64, Stream::Requests),
            );
            let config = AuditConfig {
                scheme,
                horizon: setup.horizon,
                resolve_horizon: t_ext,
                seed: seed.wrapping_add(run as u64),
                fault: a.inject_fault.map(|f| match f {
                    FaultArg::SkipClearing => Fault::SkipClearing,
                }),
            };
            run_audit(
                &seq,
                chain.n(),
                algo.as_ref(),
                reference.as_ref(),
                &setup.init,
                &config,
            )
        })
        .collect::<markov_paging::Result<_>>()?;

    let mut rows = Vec::with_capacity(reports.len());
    let mut violation_rows = Vec::new();
    let (mut failed, mut negative) = (0usize, 0usize);
    for (run, rep) in reports.iter().enumerate() {
        let acc = check_accounting(rep, rep.ref_misses);
        let delta = (scheme == Scheme::Updated).then(|| step_delta_check(rep));
        let delta_ok = delta.as_ref().is_none_or(|d| d.delta_holds);
        let positive = delta.as_ref().is_none_or(|d| d.positivity_holds);
        if !positive {
            negative += 1;
        }
        if !rep.violations.is_empty()
            || !acc.holds
            || !delta_ok
            || (a.strict_potential && !positive)
        {
            failed += 1;
        }
        for v in &rep.violations {
            violation_rows.push(ViolationRow {
                run,
                t: v.t,
                what: v.what.clone(),
            });
        }
        if let Some(d) = &delta {
            for v in &d.failures {
                violation_rows.push(ViolationRow {
                    run,
                    t: v.t,
                    what: v.what.clone(),
                });
            }
        }
        rows.push(AuditRow {
            run,
            scheme,
            horizon: rep.horizon,
            resolve_horizon: rep.resolve_horizon,
            a_misses: rep.a_misses,
            ref_misses: rep.ref_misses,
            beta_sum: rep.beta_sum(),
            i: rep.i,
            d: rep.d,
            o: rep.o,
            u: rep.u,
            phi: rep.phi(),
            min_phi: rep.steps.iter().map(|s| s.phi).min().unwrap_or(0),
            bound: acc.bound,
            accounting_holds: acc.holds,
            bound_with_i: acc.bound_with_i,
            delta_holds: delta.as_ref().map(|d| d.delta_holds),
            positivity_holds: delta.as_ref().map(|d| d.positivity_holds),
            violations: rep.violations.len(),
            ambiguities: rep.ambiguities.len(),
        });
    }

    if let Some(path) = &a.trace_out {
        let rep = reports.get(a.trace_run).ok_or_else(|| {
            usage(format!(
                "--trace-run {} but only {} runs",
                a.trace_run,
                reports.len()
            ))
        })?;
        write_trace(path, rep)?;
    }
    write_rows(&a.out, &rows)?;

    if !violation_rows.is_empty() {
        let mut w = csv::Writer::from_writer(io::stderr().lock());
        for v in &violation_rows {
            w.serialize(v)?;
        }
        w.flush()?;
    }
    if negative > 0 {
        eprintln!(
            "note: potential went negative in {negative} of {} runs",
            reports.len()
        );
    }
    if failed > 0 {
        return Err(CliError::Check(format!(
            "{failed} of {} audited runs failed",
            reports.len()
        )));
    }
    Ok(())
}

fn write_trace(path: &Path, rep: &AuditReport) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Io(format!("--trace-out {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    for s in &rep.steps {
        w.serialize(s.trace_row())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LowerboundRow {
    eps: f64,
    eps1: f64,
    #[serde(rename = "T")]
    horizon: u64,
    cost_dom: f64,
    cost_ref: f64,
    ratio: f64,
    best: bool,
}

#[derive(Serialize)]
struct WarmupRow {
    eps: f64,
    #[serde(rename = "T")]
    horizon: String,
    ratio: f64,
}

fn lowerbound(a: LowerboundArgs) -> Result<(), CliError> {
    if a.warmup {
        let mut rows = Vec::new();
        for &eps in &a.eps {
            if a.horizons.is_empty() {
                rows.push(WarmupRow {
                    eps,
                    horizon: "inf".into(),
                    ratio: warmup_ratio(eps, WarmupHorizon::Limit).map_err(flag_err("--eps"))?,
                });
            }
            for &t in &a.horizons {
                rows.push(WarmupRow {
                    eps,
                    horizon: t.to_string(),
                    ratio: warmup_ratio(eps, WarmupHorizon::Finite(t))
                        .map_err(flag_err("--eps/--T"))?,
                });
            }
        }
        return write_rows(&a.out, &rows);
    }
    if a.eps1_frac.is_empty() {
        return Err(usage("--eps1-frac is required"));
    }
    if a.horizons.is_empty() {
        return Err(usage("--T is required"));
    }
    let res =
        search(&a.eps, &a.eps1_frac, &a.horizons).map_err(flag_err("--eps/--eps1-frac/--T"))?;
    let best_idx = res.rows.iter().position(|r| *r == res.best);
    let rows: Vec<LowerboundRow> = res
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| LowerboundRow {
            eps: r.eps,
            eps1: r.eps1,
            horizon: r.horizon,
            cost_dom: r.cost_dom,
            cost_ref: r.cost_ref,
            ratio: r.ratio,
            best: Some(i) == best_idx,
        })
        .collect();
    write_rows(&a.out, &rows)?;
    let b = res.best;
    eprintln!(
        "best: eps={} eps1={} T={} ratio={}",
        b.eps, b.eps1, b.horizon, b.ratio
    );
    Ok(())
}

#[derive(Serialize)]
struct LearnRow {
    m: usize,
    delta_inf: Option<f64>,
    gamma: Option<f64>,
    gamma_source: Option<GammaSource>,
    eps_bound: Option<f64>,
    certified_factor: Option<f64>,
    measured_ratio: Option<f64>,
    ratio_high: Option<f64>,
}

fn learn(a: LearnArgs) -> Result<(), CliError> {
    let seed = require_seed(a.seed)?;
    let truth = if has_chain(&a.chain) {
        Some(load_chain_source(&a.chain, Some(seed))?)
    } else {
        None
    };
    let mut traces: Vec<Vec<usize>> = Vec::new();
    if let Some(path) = &a.trace {
        traces
            .push(load_trace(path).map_err(|e| usage(format!("--trace {}: {e}", path.display())))?);
    }
    if !a.samples.is_empty() {
        let chain = truth
            .as_ref()
            .ok_or_else(|| usage("--samples needs the true chain (--chain, --builder or --n)"))?;
        for (i, &m) in a.samples.iter().enumerate() {
            traces.push(sample_with(
                chain,
                m as usize,
                &mut trial_rng(seed, i as u64, Stream::Aux),
            ));
        }
    }
    if traces.is_empty() {
        return Err(usage("give --trace or --samples"));
    }
    let n = match &truth {
        Some(c) => c.n(),
        None => a
            .chain
            .n
            .unwrap_or_else(|| traces[0].iter().max().map_or(0, |m| m + 1)),
    };
    // exact optimum on the true chain, shared by every row
    let evaluation = match &truth {
        Some(chain) => {
            let setup = cache_setup(&a.cache, chain, Some((2, 50)))?;
            let (opt, _) = opt_expected_cost(
                chain,
                setup.k,
                setup.horizon,
                &setup.init,
                OptOptions {
                    keep_actions: false,
                    ..OptOptions::default()
                },
            )?;
            Some((chain, setup, opt))
        }
        None => None,
    };

    let mut rows = Vec::new();
    for trace in &traces {
        let est =
            estimate_transition(trace, n, a.smoothing).map_err(flag_err("--trace/--samples"))?;
        let bundle: Option<ApproxAlphaBundle> =
            match approx_alpha(&est, truth.as_ref(), a.delta_inf) {
                Ok(b) => Some(b),
                Err(Error::ConditionViolated(_)) => None,
                Err(Error::InvalidArgument(msg)) => {
                    return Err(usage(format!("--delta-inf: {msg}")))
                }
                Err(e) => return Err(e.into()),
            };
        let factor = bundle
            .as_ref()
            .and_then(|b| certified_factor(b.eps_bound).ok());
        let (measured, high) = match (&evaluation, &bundle) {
            (Some((chain, setup, opt)), Some(b)) => {
                let policy = DominatingPolicy::new(b.alpha_hat.clone(), DominatingMode::Standard);
                let est = simulate(
                    &policy,
                    chain,
                    setup.k,
                    setup.horizon,
                    &setup.init,
                    a.trials,
                    seed,
                )?;
                (
                    Some(est.mean / opt),
                    Some((est.mean + est.half_width) / opt),
                )
            }
            _ => (None, None),
        };
        rows.push(LearnRow {
            m: trace.len(),
            delta_inf: bundle
                .as_ref()
                .map(|b| b.delta_inf)
                .or(est.linf_error)
                .or(a.delta_inf),
            gamma: bundle.as_ref().map(|b| b.gamma_used),
            gamma_source: bundle.as_ref().map(|b| b.gamma_source),
            eps_bound: bundle.as_ref().map(|b| b.eps_bound),
            certified_factor: factor,
            measured_ratio: measured,
            ratio_high: high,
        });
    }
    write_rows(&a.out, &rows)
}
