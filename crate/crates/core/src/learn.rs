//! Estimating the chain from a trace and running the dominating policy on
//! the estimate, with the error bound carried through the pair systems.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::alpha::{alpha_table, gamma, AlphaTable};
use crate::chain::{validate_chain, MarkovChain};
use crate::error::{Error, Result};
use crate::policies::{DominatingMode, DominatingPolicy};

#[derive(Debug, Clone)]
pub struct EstimatedChain {
    pub m_hat: MarkovChain,
    /// Number of requests in the trace.
    pub sample_count: usize,
    pub smoothing: f64,
    /// Smallest entry of the estimate.
    pub delta_floor: f64,
    /// `||M_hat - M||_inf` when the truth was supplied.
    pub linf_error: Option<f64>,
}

impl EstimatedChain {
    pub fn with_truth(mut self, truth: &MarkovChain) -> Result<Self> {
        self.linf_error = Some(linf_distance(&self.m_hat, truth)?);
        Ok(self)
    }
}

/// Max absolute row sum of `a - b`.
pub fn linf_distance(a: &MarkovChain, b: &MarkovChain) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::InvalidArgument(format!(
            "chains have {} and {} pages",
            a.n(),
            b.n()
        )));
    }
    Ok((0..a.n())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Add-constant smoothed transition counts.
pub fn estimate_transition(trace: &[usize], n: usize, smoothing: f64) -> Result<EstimatedChain> {
    if trace.len() < 2 {
        return Err(Error::TraceTooShort(trace.len()));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be positive, got {smoothing}"
        )));
    }
    if n < 2 {
        return Err(Error::TooFewPages(n));
    }
    if let Some(&page) = trace.iter().find(|&&p| p >= n) {
        return Err(Error::PageOutOfRange { page, n });
    }
    let mut counts = vec![vec![0u64; n]; n];
    for w in trace.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let matrix: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![1.0 / n as f64; n]
            } else {
                let denom = total as f64 + n as f64 * smoothing;
                row.iter()
                    .map(|&c| (c as f64 + smoothing) / denom)
                    .collect()
            }
        })
        .collect();
    let m_hat = validate_chain(matrix, None)?;
    Ok(EstimatedChain {
        delta_floor: m_hat.min_entry(),
        m_hat,
        sample_count: trace.len(),
        smoothing,
        linf_error: None,
    })
}

/// `gamma * delta / (1 - gamma * delta)`: sup-norm error bound on the
/// solutions of the perturbed pair systems.
pub fn perturbation_eps(gamma: f64, delta_inf: f64) -> Result<f64> {
    if gamma < 0.0 || delta_inf < 0.0 || !gamma.is_finite() || !delta_inf.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma ({gamma}) and delta ({delta_inf}) must be finite and non-negative"
        )));
    }
    let g = gamma * delta_inf;
    if g >= 1.0 {
        return Err(Error::ConditionViolated(g));
    }
    Ok(g / (1.0 - g))
}

/// Competitive factor `2 / (1 - 2 eps)` under additive error `eps`.
pub fn certified_factor(eps: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::GuaranteeVacuous(eps));
    }
    Ok(2.0 / (1.0 - 2.0 * eps))
}

/// Competitive factor `(2 - 2 eps) / (1 - 2 eps)` under multiplicative
/// error `eps`.
pub fn multiplicative_factor(eps: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::GuaranteeVacuous(eps));
    }
    Ok((2.0 - 2.0 * eps) / (1.0 - 2.0 * eps))
}

/// Replaces each pair by `x = (a + 1 - b) / 2` and `1 - x`, so that
/// `alpha(p<q|s) + alpha(q<p|s) = 1` holds exactly.
pub fn symmetrize(table: &AlphaTable) -> Result<AlphaTable> {
    let n = table.n();
    let mut values = table.values().to_vec();
    for p in 0..n {
        for q in p + 1..n {
            for s in 0..n {
                let a = table.get(p, q, s);
                let b = table.get(q, p, s);
                let x = (a + 1.0 - b) / 2.0;
                values[(p * n + q) * n + s] = x;
                values[(q * n + p) * n + s] = 1.0 - x;
            }
        }
    }
    AlphaTable::from_values(n, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaSource {
    Estimated,
    True,
}

#[derive(Debug, Clone)]
pub struct ApproxAlphaBundle {
    /// Symmetrized table from the estimate.
    pub alpha_hat: Arc<AlphaTable>,
    pub eps_bound: f64,
    pub gamma_used: f64,
    pub gamma_source: GammaSource,
    pub delta_inf: f64,
}

/// Builds the estimated table and its error bound. `truth`, when given,
/// supplies both `gamma` and the measured `||Delta||_inf`; otherwise `gamma`
/// comes from the estimate and `delta_inf` must be supplied.
pub fn approx_alpha(
    est: &EstimatedChain,
    truth: Option<&MarkovChain>,
    delta_inf: Option<f64>,
) -> Result<ApproxAlphaBundle> {
    let (gamma_used, gamma_source, delta_inf) = match truth {
        Some(m) => (gamma(m)?, GammaSource::True, linf_distance(&est.m_hat, m)?),
        None => (
            gamma(&est.m_hat)?,
            GammaSource::Estimated,
            delta_inf.ok_or_else(|| {
                Error::InvalidArgument(
                    "an error level is needed when the true chain is unknown".into(),
                )
            })?,
        ),
    };
    let eps_bound = perturbation_eps(gamma_used, delta_inf)?;
    Ok(ApproxAlphaBundle {
        alpha_hat: Arc::new(symmetrize(&alpha_table(&est.m_hat)?)?),
        eps_bound,
        gamma_used,
        gamma_source,
        delta_inf,
    })
}

/// Dominating policy on the estimated table with its certified factor.
pub fn approx_dominating_policy(bundle: &ApproxAlphaBundle) -> Result<(DominatingPolicy, f64)> {
    let factor = certified_factor(bundle.eps_bound)?;
    Ok((
        DominatingPolicy::new(bundle.alpha_hat.clone(), DominatingMode::Standard),
        factor,
    ))
}

/// Newline-delimited page indices; blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|_| Error::Format(format!("line {}: `{l}` is not a page index", i + 1)))
        })
        .collect()
}

pub fn load_trace(path: &Path) -> Result<Vec<usize>> {
    parse_trace(&std::fs::read_to_string(path)?)
}
