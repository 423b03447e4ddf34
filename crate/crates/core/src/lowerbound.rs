//! Exact costs on the three-page instance where the adversarial dominating
//! policy loses to a policy that keeps page 0 cached.
//!
//! Cache states are ordered `[0,1]`, `[0,2]`, `[1,2]`; the request law is
//! `[1-eps, eps1, eps-eps1]` at every step and both policies start from
//! `[0,1]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::check_lb_regime;
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LBParams {
    pub eps: f64,
    pub eps1: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
}

impl LBParams {
    pub fn new(eps: f64, eps1: f64, horizon: u64) -> Result<Self> {
        check_lb_regime(eps, eps1)?;
        if horizon == 0 {
            return Err(Error::Regime("horizon must be at least 1".into()));
        }
        Ok(LBParams { eps, eps1, horizon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LBMatrices {
    /// Column-stochastic: `B[i][j]` is the chance of moving from state `j`
    /// to state `i` in one request.
    pub b: Mat3,
    /// Miss probability in each state.
    pub miss_row: [f64; 3],
}

/// Eviction probabilities of the adversarial dominating policy on this
/// instance: page 0 from `[0,1]`, page 0 from `[0,2]`, page 1 from `[1,2]`.
pub fn adversarial_evictions(eps: f64, eps1: f64) -> [f64; 3] {
    [
        (1.0 - eps + eps1) / (2.0 - 2.0 * eps),
        (1.0 - eps1) / (2.0 - 2.0 * eps),
        eps / (2.0 * eps1),
    ]
}

pub fn lb_matrices(eps: f64, eps1: f64) -> Result<LBMatrices> {
    check_lb_regime(eps, eps1)?;
    let e2 = eps - eps1;
    let [x01, x02, x12] = adversarial_evictions(eps, eps1);
    // column j: current state; row i: next state
    let b = [
        [
            1.0 - eps + eps1,
            eps1 * (1.0 - x02),
            (1.0 - eps) * (1.0 - x12),
        ],
        [e2 * (1.0 - x01), 1.0 - eps1, (1.0 - eps) * x12],
        [e2 * x01, eps1 * x02, eps],
    ];
    Ok(LBMatrices {
        b,
        miss_row: [e2, eps1, 1.0 - eps],
    })
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|l| a[i][l] * b[l][j]).sum();
        }
    }
    out
}

fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

/// `I + B + ... + B^(T-1)` by doubling on the bits of `T`:
/// `S_2m = S_m + B^m S_m`, `S_(m+1) = I + B S_m`.
pub fn geometric_sum(b: &Mat3, horizon: u64) -> Mat3 {
    let mut sum = [[0.0; 3]; 3];
    let mut power = IDENTITY;
    if horizon == 0 {
        return sum;
    }
    for bit in (0..64 - horizon.leading_zeros()).rev() {
        sum = mat_add(&sum, &mat_mul(&power, &sum));
        power = mat_mul(&power, &power);
        if horizon >> bit & 1 == 1 {
            sum = mat_add(&IDENTITY, &mat_mul(b, &sum));
            power = mat_mul(b, &power);
        }
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LBCosts {
    pub cost_dom: f64,
    pub cost_ref: f64,
    pub ratio: f64,
}

/// `(1 - (1-eps)^T) / eps` without cancellation for tiny `eps`.
fn geometric_mass(eps: f64, horizon: u64) -> f64 {
    -((horizon as f64) * (-eps).ln_1p()).exp_m1() / eps
}

/// Expected misses of the pinned reference policy.
pub fn reference_cost(params: &LBParams) -> f64 {
    let LBParams { eps, eps1, horizon } = *params;
    let t = horizon as f64;
    let g = geometric_mass(eps, horizon);
    t * eps1 + (eps - 2.0 * eps1) * ((eps1 / eps) * (t - g) + g)
}

pub fn closed_form_costs(params: &LBParams) -> Result<LBCosts> {
    let m = lb_matrices(params.eps, params.eps1)?;
    let s = geometric_sum(&m.b, params.horizon);
    let cost_dom: f64 = (0..3).map(|i| m.miss_row[i] * s[i][0]).sum();
    let cost_ref = reference_cost(params);
    Ok(LBCosts {
        cost_dom,
        cost_ref,
        ratio: cost_dom / cost_ref,
    })
}

/// Step-by-step evolution of the state vector with compensated summation;
/// an oracle for [`closed_form_costs`] at moderate `T`.
pub fn dom_cost_naive(params: &LBParams) -> Result<f64> {
    let m = lb_matrices(params.eps, params.eps1)?;
    let mut state = [1.0, 0.0, 0.0];
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..params.horizon {
        let x: f64 = (0..3).map(|i| m.miss_row[i] * state[i]).sum();
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
        let mut next = [0.0; 3];
        for (i, v) in next.iter_mut().enumerate() {
            *v = (0..3).map(|j| m.b[i][j] * state[j]).sum();
        }
        state = next;
    }
    Ok(sum + comp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupHorizon {
    Finite(u64),
    Limit,
}

fn warmup_cd(eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 2.0 / 3.0) {
        return Err(Error::Regime(format!("need 0 < eps < 2/3 (eps={eps})")));
    }
    Ok((1.0 - eps, eps * (6.0 - 7.0 * eps) / (8.0 - 8.0 * eps)))
}

/// Cost ratio on the equal-split instance, at a finite horizon or in the
/// limit `T -> infinity`.
pub fn warmup_ratio(eps: f64, horizon: WarmupHorizon) -> Result<f64> {
    let (c, d) = warmup_cd(eps)?;
    match horizon {
        WarmupHorizon::Limit => Ok((1.0 - eps + (1.5 * eps - 1.0) * (c / (1.0 - d))) / (eps / 2.0)),
        WarmupHorizon::Finite(t) => {
            if t == 0 {
                return Err(Error::Regime("horizon must be at least 1".into()));
            }
            let tf = t as f64;
            let geo = -((tf) * d.ln()).exp_m1() / (1.0 - d);
            let sum_p = c / (1.0 - d) * (tf - geo) + geo;
            let dom = tf * (1.0 - eps) + (1.5 * eps - 1.0) * sum_p;
            Ok(dom / (eps * tf / 2.0))
        }
    }
}

/// Same ratio by iterating `p_t = c + d p_(t-1)` from `p_1 = 1`.
pub fn warmup_ratio_naive(eps: f64, horizon: u64) -> Result<f64> {
    let (c, d) = warmup_cd(eps)?;
    let mut p = 1.0;
    let mut dom = 0.0;
    for _ in 0..horizon {
        dom += p * eps / 2.0 + (1.0 - p) * (1.0 - eps);
        p = c + d * p;
    }
    Ok(dom / (eps * horizon as f64 / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchRow {
    pub eps: f64,
    pub eps1: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub cost_dom: f64,
    pub cost_ref: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: SearchRow,
    /// Every grid point, in `eps`, `eps1` fraction, `T` order.
    pub rows: Vec<SearchRow>,
}

/// Evaluates every `(eps, frac * eps, T)` point; ties keep the first.
pub fn search(eps_grid: &[f64], eps1_fracs: &[f64], horizons: &[u64]) -> Result<SearchResult> {
    if eps_grid.is_empty() || eps1_fracs.is_empty() || horizons.is_empty() {
        return Err(Error::InvalidArgument(
            "search grids must be non-empty".into(),
        ));
    }
    let points: Vec<LBParams> = eps_grid
        .iter()
        .flat_map(|&e| {
            eps1_fracs
                .iter()
                .flat_map(move |&f| horizons.iter().map(move |&t| (e, f * e, t)))
        })
        .map(|(e, e1, t)| LBParams::new(e, e1, t))
        .collect::<Result<_>>()?;
    let rows: Vec<SearchRow> = points
        .par_iter()
        .map(|p| {
            closed_form_costs(p).map(|c| SearchRow {
                eps: p.eps,
                eps1: p.eps1,
                horizon: p.horizon,
                cost_dom: c.cost_dom,
                cost_ref: c.cost_ref,
                ratio: c.ratio,
            })
        })
        .collect::<Result<_>>()?;
    let best = rows
        .iter()
        .copied()
        .fold(None::<SearchRow>, |acc, r| match acc {
            Some(b) if b.ratio >= r.ratio => Some(b),
            _ => Some(r),
        })
        .expect("non-empty grid");
    Ok(SearchResult { best, rows })
}
