//! Charging-scheme audits over paired runs of an algorithm `A` and a
//! reference policy on one realized request sequence.
//!
//! Each eviction by `A` places a charge `c(p)` on a page outside the
//! reference cache. The auditor replays both policies, maintains the charges
//! and the counters `I`, `D`, `O`, `U`, resolves the `beta` indicators against
//! an extended sequence, and checks the structural invariants and accounting
//! inequalities step by step.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::chain::{trial_rng, Stream};
use crate::error::{Error, Result};
use crate::policies::{CacheRun, EvictionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Requests clear only the charge the requested page gives.
    Original,
    /// Requests also clear every charge placed on the requested page.
    Updated,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Scheme::Original),
            "updated" => Ok(Scheme::Updated),
            _ => Err(Error::InvalidArgument(format!("unknown scheme `{s}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Original => "original",
            Scheme::Updated => "updated",
        })
    }
}

/// Deliberate bugs for exercising the failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Never clear charges on requests.
    SkipClearing,
}

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub scheme: Scheme,
    /// Requests `0..horizon` are audited.
    pub horizon: usize,
    /// Requests `0..resolve_horizon` are used to resolve `beta`.
    pub resolve_horizon: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl AuditConfig {
    /// Resolution horizon defaults to ten times the audited horizon.
    pub fn new(scheme: Scheme, horizon: usize, seed: u64) -> Self {
        AuditConfig {
            scheme,
            horizon,
            resolve_horizon: horizon.saturating_mul(10),
            seed,
            fault: None,
        }
    }
}

/// Who charges whom: `charge[p] = Some(q)` means `p` gives a charge to `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChargeLedger {
    charge: Vec<Option<usize>>,
}

impl ChargeLedger {
    pub fn new(n: usize) -> Self {
        ChargeLedger {
            charge: vec![None; n],
        }
    }

    pub fn get(&self, p: usize) -> Option<usize> {
        self.charge[p]
    }

    pub fn charges(&self) -> &[Option<usize>] {
        &self.charge
    }

    /// Pages currently giving a charge to `q`, in index order.
    pub fn givers(&self, q: usize) -> Vec<usize> {
        (0..self.charge.len())
            .filter(|&p| self.charge[p] == Some(q))
            .collect()
    }

    pub fn bears_any(&self, q: usize) -> bool {
        self.charge.contains(&Some(q))
    }

    pub fn open(&self) -> usize {
        self.charge.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChargeAssignment {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub requested: usize,
    pub a_miss: bool,
    pub a_evicted: Option<usize>,
    pub ref_miss: bool,
    pub ref_evicted: Option<usize>,
    pub charges_cleared: usize,
    pub charge_assigned: Option<ChargeAssignment>,
    /// Requested page held two charges before the request.
    pub doubly_charged: bool,
    /// In the reference cache, not in `A`'s cache, giving no charge and
    /// bearing none, all before the request.
    pub tight_condition: bool,
    pub i: usize,
    pub d: usize,
    pub o_open: usize,
    pub u: usize,
    /// `I - D - O + U` after this step.
    pub phi: i64,
}

/// CSV form of a [`StepRecord`].
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub requested: usize,
    #[serde(rename = "A_miss")]
    pub a_miss: u8,
    #[serde(rename = "A_evicted")]
    pub a_evicted: Option<usize>,
    pub ref_miss: u8,
    pub ref_evicted: Option<usize>,
    pub charges_cleared: usize,
    pub charge_assigned: String,
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "O_open")]
    pub o_open: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "Phi")]
    pub phi: i64,
}

impl StepRecord {
    pub fn trace_row(&self) -> TraceRow {
        TraceRow {
            t: self.t,
            requested: self.requested,
            a_miss: self.a_miss as u8,
            a_evicted: self.a_evicted,
            ref_miss: self.ref_miss as u8,
            ref_evicted: self.ref_evicted,
            charges_cleared: self.charges_cleared,
            charge_assigned: self
                .charge_assigned
                .map(|c| format!("{}->{}", c.from, c.to))
                .unwrap_or_default(),
            i: self.i,
            d: self.d,
            o_open: self.o_open,
            u: self.u,
            phi: self.phi,
        }
    }
}

/// One eviction by `A` and whether its charge was paid in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BetaEvent {
    pub t: usize,
    pub evicted: usize,
    pub savior: usize,
    /// `beta(t)`: the savior is requested no later than the evicted page's
    /// next request, within the resolution horizon.
    pub beta: bool,
    /// First request of the evicted page after `t`, if within the horizon.
    pub evicted_next: Option<usize>,
    /// First request of the savior after `t`, if within the horizon.
    pub savior_next: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub t: usize,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub scheme: Scheme,
    pub horizon: usize,
    pub resolve_horizon: usize,
    pub steps: Vec<StepRecord>,
    pub beta_events: Vec<BetaEvent>,
    pub i: usize,
    pub d: usize,
    /// Open charges after the last audited request.
    pub o: usize,
    pub u: usize,
    pub a_misses: usize,
    pub ref_misses: usize,
    pub violations: Vec<Violation>,
    /// Steps where the chosen savior bore a charge from a page outside the
    /// reference cache; a stricter eligibility rule would have rejected it.
    pub ambiguities: Vec<Violation>,
}

impl AuditReport {
    pub fn beta_sum(&self) -> usize {
        self.beta_events.iter().filter(|e| e.beta).count()
    }

    /// `I - D - O + U` after the last audited request.
    pub fn phi(&self) -> i64 {
        self.i as i64 - self.d as i64 - self.o as i64 + self.u as i64
    }
}

fn next_request(seq: &[usize], after: usize, page: usize) -> Option<usize> {
    seq.iter()
        .enumerate()
        .skip(after + 1)
        .find(|(_, &p)| p == page)
        .map(|(i, _)| i)
}

/// Replays `a` and `reference` on `seq` from `init_cache` and runs the
/// selected charging scheme.
pub fn run_audit(
    seq: &[usize],
    n: usize,
    a: &dyn EvictionPolicy,
    reference: &dyn EvictionPolicy,
    init_cache: &[usize],
    config: &AuditConfig,
) -> Result<AuditReport> {
    let t_max = config.horizon;
    let t_ext = config.resolve_horizon;
    if t_ext < t_max {
        return Err(Error::InvalidArgument(format!(
            "resolution horizon {t_ext} is shorter than the audited horizon {t_max}"
        )));
    }
    if seq.len() < t_ext {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            needed: t_ext,
        });
    }
    let ext = &seq[..t_ext];
    let mut run_a = CacheRun::new(n, init_cache)?;
    let mut run_ref = CacheRun::new(n, init_cache)?;
    let mut rng_a = trial_rng(config.seed, 0, Stream::Policy);
    let mut rng_ref = trial_rng(config.seed, 0, Stream::Reference);

    let mut ledger = ChargeLedger::new(n);
    // pages that have been in both caches at some point
    let mut seen: Vec<bool> = vec![false; n];
    for &p in init_cache {
        seen[p] = true;
    }
    let initial: BTreeSet<usize> = init_cache.iter().copied().collect();

    let (mut i_count, mut d_count, mut u_count) = (0usize, 0usize, 0usize);
    let mut steps = Vec::with_capacity(t_max);
    let mut beta_events = Vec::new();
    let mut violations = Vec::new();
    let mut ambiguities = Vec::new();

    for (t, &s) in seq[..t_max].iter().enumerate() {
        let a_before: Vec<usize> = run_a.cache().pages().to_vec();
        let ref_before: Vec<usize> = run_ref.cache().pages().to_vec();
        let a_step = run_a.step(a, t, s, Some(ext), &mut rng_a)?;
        let ref_step = run_ref.step(reference, t, s, Some(ext), &mut rng_ref)?;
        let opt_plus = run_ref.cache();

        // conditions observed before any charge moves
        let givers = ledger.givers(s);
        let bears = !givers.is_empty();
        let doubly = givers.len() == 2;
        let first_timer = !seen[s];
        let in_ref = ref_before.binary_search(&s).is_ok();
        let in_a = a_before.binary_search(&s).is_ok();
        let tight = in_ref && !in_a && ledger.get(s).is_none() && !bears;
        if first_timer && !initial.contains(&s) {
            i_count += 1;
        }
        if doubly {
            d_count += 1;
        }
        if !in_ref && !first_timer && !bears {
            u_count += 1;
        }
        seen[s] = true;

        // step 1: clear
        let mut cleared = 0;
        if config.fault != Some(Fault::SkipClearing) {
            if ledger.charge[s].take().is_some() {
                cleared += 1;
            }
            if config.scheme == Scheme::Updated {
                for c in ledger.charge.iter_mut() {
                    if *c == Some(s) {
                        *c = None;
                        cleared += 1;
                    }
                }
            }
        }

        // step 2: assign
        let mut assigned = None;
        let target = match a_step.evicted {
            None => None,
            Some(p) if !opt_plus.contains(p) => Some(p),
            Some(p) => {
                // lowest-index q in A- \ OPT+ with no charge from OPT+ \ A-
                let outside: Vec<usize> = opt_plus
                    .pages()
                    .iter()
                    .copied()
                    .filter(|x| a_before.binary_search(x).is_err())
                    .collect();
                let q = a_before
                    .iter()
                    .copied()
                    .filter(|&q| !opt_plus.contains(q))
                    .find(|&q| !outside.iter().any(|&x| ledger.charge[x] == Some(q)));
                match q {
                    Some(q) if ledger.givers(q).into_iter().any(|x| x != q) => ambiguities
                        .push(Violation {
                        t,
                        what: format!(
                            "savior {q} already bears a charge from outside the reference cache"
                        ),
                    }),
                    Some(_) => {}
                    // only reachable once the ledger is already inconsistent
                    None => violations.push(Violation {
                        t,
                        what: format!("no eligible savior for the charge from {p}"),
                    }),
                }
                q
            }
        };
        if let (Some(p), Some(target)) = (a_step.evicted, target) {
            if opt_plus.contains(target) {
                violations.push(Violation {
                    t,
                    what: format!("charge from {p} placed on {target}, which the reference holds"),
                });
            }
            ledger.charge[p] = Some(target);
            assigned = Some(ChargeAssignment {
                from: p,
                to: target,
            });
            let evicted_next = next_request(ext, t, p);
            let savior_next = next_request(ext, t, target);
            let beta = match (savior_next, evicted_next) {
                (Some(q), Some(r)) => q <= r,
                (Some(_), None) => true,
                (None, _) => false,
            };
            beta_events.push(BetaEvent {
                t,
                evicted: p,
                savior: target,
                beta,
                evicted_next,
                savior_next,
            });
        }

        // step 3: a page the reference evicts takes back its foreign charge
        if let Some(e) = ref_step.evicted {
            if matches!(ledger.charge[e], Some(x) if x != e) {
                ledger.charge[e] = Some(e);
            }
        }

        check_invariants(
            &ledger,
            run_a.cache().pages(),
            &seen,
            config.scheme,
            t,
            &mut violations,
        );

        let o_open = ledger.open();
        steps.push(StepRecord {
            t,
            requested: s,
            a_miss: !a_step.hit,
            a_evicted: a_step.evicted,
            ref_miss: !ref_step.hit,
            ref_evicted: ref_step.evicted,
            charges_cleared: cleared,
            charge_assigned: assigned,
            doubly_charged: doubly,
            tight_condition: tight,
            i: i_count,
            d: d_count,
            o_open,
            u: u_count,
            phi: i_count as i64 - d_count as i64 - o_open as i64 + u_count as i64,
        });
    }

    Ok(AuditReport {
        scheme: config.scheme,
        horizon: t_max,
        resolve_horizon: t_ext,
        beta_events,
        i: i_count,
        d: d_count,
        o: ledger.open(),
        u: u_count,
        a_misses: run_a.misses(),
        ref_misses: run_ref.misses(),
        steps,
        violations,
        ambiguities,
    })
}

fn check_invariants(
    ledger: &ChargeLedger,
    a_cache: &[usize],
    seen: &[bool],
    scheme: Scheme,
    t: usize,
    out: &mut Vec<Violation>,
) {
    let n = ledger.charge.len();
    for p in 0..n {
        let cached = a_cache.binary_search(&p).is_ok();
        if ledger.charge[p].is_some() && cached {
            out.push(Violation {
                t,
                what: format!("page {p} gives a charge while in A's cache"),
            });
        }
        // with the updated clearing a paid-off charge may vanish early
        if scheme == Scheme::Original && seen[p] && !cached && ledger.charge[p].is_none() {
            out.push(Violation {
                t,
                what: format!("page {p} is out of A's cache but gives no charge"),
            });
        }
        let givers = ledger.givers(p);
        let foreign = givers.iter().filter(|&&x| x != p).count();
        if givers.len() > 2 || foreign > 1 {
            out.push(Violation {
                t,
                what: format!("page {p} bears charges from {givers:?}"),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountingCheck {
    pub scheme: Scheme,
    pub ref_misses: usize,
    /// Right-hand side of the scheme's inequality.
    pub bound: f64,
    pub holds: bool,
    /// Updated scheme only: the bound with `I` added.
    pub bound_with_i: Option<f64>,
    pub holds_with_i: Option<bool>,
}

/// Checks the scheme's lower bound on the reference's misses in `[0, T)`.
///
/// Original: `ref >= (sum beta - O) / 2 + I`.
/// Updated: `ref >= sum beta - D - O + U`, and separately the same with `+ I`.
pub fn check_accounting(report: &AuditReport, ref_misses: usize) -> AccountingCheck {
    let beta = report.beta_sum() as f64;
    let (i, d, o, u) = (
        report.i as f64,
        report.d as f64,
        report.o as f64,
        report.u as f64,
    );
    let lhs = ref_misses as f64;
    match report.scheme {
        Scheme::Original => {
            let bound = 0.5 * (beta - o) + i;
            AccountingCheck {
                scheme: report.scheme,
                ref_misses,
                bound,
                holds: lhs >= bound,
                bound_with_i: None,
                holds_with_i: None,
            }
        }
        Scheme::Updated => {
            let bound = beta - d - o + u;
            AccountingCheck {
                scheme: report.scheme,
                ref_misses,
                bound,
                holds: lhs >= bound,
                bound_with_i: Some(bound + i),
                holds_with_i: Some(lhs >= bound + i),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDeltaCheck {
    /// Both parts hold.
    pub holds: bool,
    /// Tight requests lower `Phi` by exactly 1 and no other request lowers it.
    pub delta_holds: bool,
    /// `Phi >= 1` before every tight request and `Phi >= 0` after every step.
    pub positivity_holds: bool,
    pub failures: Vec<Violation>,
}

/// Per-step potential claims for the updated scheme, split into the change
/// per request and the sign of `Phi`.
pub fn step_delta_check(report: &AuditReport) -> StepDeltaCheck {
    let mut failures = Vec::new();
    let (mut delta_holds, mut positivity_holds) = (true, true);
    if report.scheme != Scheme::Updated {
        delta_holds = false;
        failures.push(Violation {
            t: 0,
            what: "step claims apply to the updated scheme only".into(),
        });
    }
    let mut prev = 0i64;
    for st in &report.steps {
        let delta = st.phi - prev;
        if st.tight_condition {
            if delta != -1 {
                delta_holds = false;
                failures.push(Violation {
                    t: st.t,
                    what: format!("tight request changed Phi by {delta}, expected -1"),
                });
            }
            if prev < 1 {
                positivity_holds = false;
                failures.push(Violation {
                    t: st.t,
                    what: format!("tight request found Phi = {prev} < 1"),
                });
            }
        } else if delta < 0 {
            delta_holds = false;
            failures.push(Violation {
                t: st.t,
                what: format!("Phi dropped by {} on a non-tight request", -delta),
            });
        }
        if st.phi < 0 {
            positivity_holds = false;
            failures.push(Violation {
                t: st.t,
                what: format!("Phi = {} < 0", st.phi),
            });
        }
        prev = st.phi;
    }
    StepDeltaCheck {
        holds: delta_holds && positivity_holds,
        delta_holds,
        positivity_holds,
        failures,
    }
}
