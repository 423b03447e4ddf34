//! Python bindings: chains, pairwise tables, policies, the optimal DP,
//! audits, the lower-bound instance and the learning pipeline.

use std::path::PathBuf;
use std::sync::Arc;

use markov_paging::alpha::{alpha_table, gamma, AlphaTable};
use markov_paging::audit::{check_accounting, run_audit, step_delta_check, AuditConfig, Scheme};
use markov_paging::chain::{
    build_lb_chain, build_warmup_chain, iid_chain, load_chain, random_chain, sample_sequence, save_chain,
    validate_chain, MarkovChain,
};
use markov_paging::engine::{exact_cost, ratio_report, simulate, Baseline, PolicyContext, RatioConfig};
use markov_paging::learn::{approx_alpha, certified_factor, estimate_transition};
use markov_paging::lowerbound::{closed_form_costs, warmup_ratio, LBParams, WarmupHorizon};
use markov_paging::optdp::{opt_expected_cost, OptOptions};
use markov_paging::policies::PolicySpec;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: markov_paging::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn default_cache(k: usize, init: Option<Vec<usize>>) -> Vec<usize> {
    init.unwrap_or_else(|| (0..k).collect())
}

/// A Markov chain over pages 0..n.
#[pyclass(name = "Chain", module = "markov_paging", frozen)]
struct PyChain {
    inner: Arc<MarkovChain>,
}

impl PyChain {
    fn wrap(chain: MarkovChain) -> Self {
        PyChain { inner: Arc::new(chain) }
    }
}

#[pymethods]
impl PyChain {
    /// Build from a row-stochastic matrix and an optional first-request distribution.
    #[new]
    #[pyo3(signature = (rows, init=None))]
    fn new(rows: Vec<Vec<f64>>, init: Option<Vec<f64>>) -> PyResult<Self> {
        validate_chain(rows, init).map(Self::wrap).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_chain(&path).map(Self::wrap).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_chain(&self.inner, &path).map_err(err)
    }

    /// Three-page i.i.d. instance with row [1-eps, eps1, eps-eps1].
    #[staticmethod]
    fn lower_bound(eps: f64, eps1: f64) -> PyResult<Self> {
        build_lb_chain(eps, eps1).map(Self::wrap).map_err(err)
    }

    #[staticmethod]
    fn warmup(eps: f64) -> PyResult<Self> {
        build_warmup_chain(eps).map(Self::wrap).map_err(err)
    }

    #[staticmethod]
    fn iid(row: Vec<f64>) -> PyResult<Self> {
        iid_chain(&row).map(Self::wrap).map_err(err)
    }

    /// Same chain as `mpaging --n N --floor F --chain-seed SEED`.
    #[staticmethod]
    #[pyo3(signature = (n, seed, floor=0.01))]
    fn random(n: usize, seed: u64, floor: f64) -> PyResult<Self> {
        random_chain(n, floor, &mut ChaCha8Rng::seed_from_u64(seed))
            .map(Self::wrap)
            .map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn init(&self) -> Vec<f64> {
        self.inner.init().to_vec()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn sample(&self, length: usize, seed: u64) -> Vec<usize> {
        sample_sequence(&self.inner, length, seed).pages
    }

    fn __repr__(&self) -> String {
        format!("Chain(n={}, hash={})", self.inner.n(), self.inner.hash())
    }
}

/// alpha(p<q|s): probability that p is requested before q, starting after s.
#[pyclass(name = "AlphaTable", module = "markov_paging", frozen)]
struct PyAlphaTable {
    inner: Arc<AlphaTable>,
}

#[pymethods]
impl PyAlphaTable {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn get(&self, p: usize, q: usize, s: usize) -> PyResult<f64> {
        let n = self.inner.n();
        if p >= n || q >= n || s >= n {
            return Err(PyValueError::new_err(format!("page out of range for n={n}")));
        }
        Ok(self.inner.get(p, q, s))
    }

    /// Flat values indexed by (p * n + q) * n + s.
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }
}

#[pyfunction(name = "alpha_table")]
fn py_alpha_table(py: Python<'_>, chain: &PyChain) -> PyResult<PyAlphaTable> {
    let c = chain.inner.clone();
    let t = py.detach(move || alpha_table(&c)).map_err(err)?;
    Ok(PyAlphaTable { inner: Arc::new(t) })
}

#[pyfunction(name = "gamma")]
fn py_gamma(chain: &PyChain) -> PyResult<f64> {
    gamma(&chain.inner).map_err(err)
}

fn parse_policy(name: &str) -> PyResult<PolicySpec> {
    name.parse().map_err(err)
}

/// Expected misses of a policy: returns (mean, 95% half-width).
#[pyfunction]
#[pyo3(signature = (chain, policy, k, horizon, seed, trials=1000, init=None, exact=false))]
#[allow(clippy::too_many_arguments)]
fn expected_misses(
    py: Python<'_>,
    chain: &PyChain,
    policy: &str,
    k: usize,
    horizon: usize,
    seed: u64,
    trials: usize,
    init: Option<Vec<usize>>,
    exact: bool,
) -> PyResult<(f64, f64)> {
    let spec = parse_policy(policy)?;
    let init = default_cache(k, init);
    let c = chain.inner.clone();
    py.detach(move || {
        let ctx = PolicyContext::new(c.clone(), k, horizon, init.clone());
        let p = ctx.build(spec)?;
        let est = if exact {
            exact_cost(p.as_ref(), &c, k, horizon, &init)?
        } else {
            simulate(p.as_ref(), &c, k, horizon, &init, trials, seed)?
        };
        Ok((est.mean, est.half_width))
    })
    .map_err(err)
}

/// Exact optimal online expected misses.
#[pyfunction]
#[pyo3(signature = (chain, k, horizon, init=None, budget=None))]
fn opt_value(
    py: Python<'_>,
    chain: &PyChain,
    k: usize,
    horizon: usize,
    init: Option<Vec<usize>>,
    budget: Option<u128>,
) -> PyResult<f64> {
    let init = default_cache(k, init);
    let mut options = OptOptions {
        keep_actions: false,
        ..OptOptions::default()
    };
    if let Some(b) = budget {
        options.budget = b;
    }
    let c = chain.inner.clone();
    py.detach(move || opt_expected_cost(&c, k, horizon, &init, options))
        .map(|(v, _)| v)
        .map_err(err)
}

/// Cost ratios against a baseline, one dict per policy.
#[pyfunction]
#[pyo3(signature = (chain, policies, k, horizon, seed=0, trials=1000, baseline="opt-dp", init=None))]
#[allow(clippy::too_many_arguments)]
fn ratios<'py>(
    py: Python<'py>,
    chain: &PyChain,
    policies: Vec<String>,
    k: usize,
    horizon: usize,
    seed: u64,
    trials: usize,
    baseline: &str,
    init: Option<Vec<usize>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let specs = policies.iter().map(|p| parse_policy(p)).collect::<PyResult<Vec<_>>>()?;
    let baseline: Baseline = baseline.parse().map_err(err)?;
    let init = default_cache(k, init);
    let c = chain.inner.clone();
    let rows = py
        .detach(move || {
            let ctx = PolicyContext::new(c, k, horizon, init.clone());
            let config = RatioConfig {
                k,
                horizon,
                init_cache: init,
                trials,
                seed,
            };
            ratio_report(&ctx, &config, &specs, baseline)
        })
        .map_err(err)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("policy", r.policy)?;
            d.set_item("mean", r.mean)?;
            d.set_item("ci", r.ci)?;
            d.set_item("baseline_mean", r.baseline_mean)?;
            d.set_item("baseline_ci", r.baseline_ci)?;
            d.set_item("ratio_low", r.ratio_low)?;
            d.set_item("ratio_high", r.ratio_high)?;
            Ok(d)
        })
        .collect()
}

/// Audit one request sequence and return the summary counters.
#[pyfunction]
#[pyo3(signature = (chain, sequence, k, horizon, scheme="updated", policy="dominating", reference="opt-dp", seed=0, init=None))]
#[allow(clippy::too_many_arguments)]
fn audit<'py>(
    py: Python<'py>,
    chain: &PyChain,
    sequence: Vec<usize>,
    k: usize,
    horizon: usize,
    scheme: &str,
    policy: &str,
    reference: &str,
    seed: u64,
    init: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let (a, r) = (parse_policy(policy)?, parse_policy(reference)?);
    let init = default_cache(k, init);
    let c = chain.inner.clone();
    let config = AuditConfig {
        resolve_horizon: sequence.len(),
        ..AuditConfig::new(scheme, horizon, seed)
    };
    let rep = py
        .detach(move || {
            let ctx = PolicyContext::new(c.clone(), k, horizon, init.clone());
            let (a, r) = (ctx.build(a)?, ctx.build(r)?);
            run_audit(&sequence, c.n(), a.as_ref(), r.as_ref(), &init, &config)
        })
        .map_err(err)?;
    let acc = check_accounting(&rep, rep.ref_misses);
    let d = PyDict::new(py);
    d.set_item("a_misses", rep.a_misses)?;
    d.set_item("ref_misses", rep.ref_misses)?;
    d.set_item("beta_sum", rep.beta_sum())?;
    d.set_item("I", rep.i)?;
    d.set_item("D", rep.d)?;
    d.set_item("O", rep.o)?;
    d.set_item("U", rep.u)?;
    d.set_item("phi", rep.steps.iter().map(|s| s.phi).collect::<Vec<_>>())?;
    d.set_item("bound", acc.bound)?;
    d.set_item("accounting_holds", acc.holds)?;
    if scheme == Scheme::Updated {
        let check = step_delta_check(&rep);
        d.set_item("delta_holds", check.delta_holds)?;
        d.set_item("positivity_holds", check.positivity_holds)?;
    }
    d.set_item(
        "violations",
        rep.violations.iter().map(|v| (v.t, v.what.clone())).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// (cost_dom, cost_ref, ratio) on the three-page lower-bound instance.
#[pyfunction]
fn lower_bound_costs(eps: f64, eps1: f64, horizon: u64) -> PyResult<(f64, f64, f64)> {
    let c = closed_form_costs(&LBParams::new(eps, eps1, horizon).map_err(err)?).map_err(err)?;
    Ok((c.cost_dom, c.cost_ref, c.ratio))
}

/// Ratio on the equal-split instance; the limit when `horizon` is None.
#[pyfunction(name = "warmup_ratio")]
#[pyo3(signature = (eps, horizon=None))]
fn py_warmup_ratio(eps: f64, horizon: Option<u64>) -> PyResult<f64> {
    let h = horizon.map_or(WarmupHorizon::Limit, WarmupHorizon::Finite);
    warmup_ratio(eps, h).map_err(err)
}

/// Estimate a chain from a trace. Returns the estimate and, when `truth` or
/// `delta_inf` is given, the error bound and certified factor.
#[pyfunction]
#[pyo3(signature = (trace, n, smoothing=1.0, truth=None, delta_inf=None))]
fn learn<'py>(
    py: Python<'py>,
    trace: Vec<usize>,
    n: usize,
    smoothing: f64,
    truth: Option<&PyChain>,
    delta_inf: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let est = estimate_transition(&trace, n, smoothing).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("chain", PyChain::wrap(est.m_hat.clone()))?;
    if truth.is_some() || delta_inf.is_some() {
        let bundle = approx_alpha(&est, truth.map(|t| t.inner.as_ref()), delta_inf).map_err(err)?;
        d.set_item("delta_inf", bundle.delta_inf)?;
        d.set_item("gamma", bundle.gamma_used)?;
        d.set_item("eps_bound", bundle.eps_bound)?;
        d.set_item("certified_factor", certified_factor(bundle.eps_bound).ok())?;
        d.set_item("alpha_hat", PyAlphaTable { inner: bundle.alpha_hat })?;
    }
    Ok(d)
}

#[pymodule(name = "markov_paging")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_class::<PyAlphaTable>()?;
    m.add_function(wrap_pyfunction!(py_alpha_table, m)?)?;
    m.add_function(wrap_pyfunction!(py_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(expected_misses, m)?)?;
    m.add_function(wrap_pyfunction!(opt_value, m)?)?;
    m.add_function(wrap_pyfunction!(ratios, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_costs, m)?)?;
    m.add_function(wrap_pyfunction!(py_warmup_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    Ok(())
}
