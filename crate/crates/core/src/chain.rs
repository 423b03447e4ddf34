//! Time-homogeneous Markov chains over `n` pages and request sampling.
//!
//! A [`MarkovChain`] is validated once and immutable afterwards. Pages are
//! dense 0-based indices; human-readable names live in the chain file's
//! optional `page_names` list.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row sums may be off by at most this much on input.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    n: usize,
    transition: Vec<f64>,
    cumulative: Vec<f64>,
    init: Vec<f64>,
    init_cumulative: Vec<f64>,
    min_entry: f64,
    page_names: Option<Vec<String>>,
}

impl MarkovChain {
    /// Validates `matrix` (and `init`, uniform when `None`) and renormalizes
    /// every row once so downstream code sees sums of exactly one in working
    /// precision.
    pub fn new(matrix: Vec<Vec<f64>>, init: Option<Vec<f64>>) -> Result<Self> {
        validate_chain(matrix, init)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n + to]
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn min_entry(&self) -> f64 {
        self.min_entry
    }

    pub fn page_names(&self) -> Option<&[String]> {
        self.page_names.as_deref()
    }

    pub fn with_page_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "{} page names for {} pages",
                names.len(),
                self.n
            )));
        }
        self.page_names = Some(names);
        Ok(self)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// True when every row is identical, i.e. requests are i.i.d.
    pub fn is_iid(&self) -> bool {
        let first = self.row(0);
        (1..self.n).all(|i| self.row(i) == first)
    }

    /// Draws the next page given the previous one (`None` draws from `init`).
    pub fn next_page<R: RngCore + ?Sized>(&self, prev: Option<usize>, rng: &mut R) -> usize {
        let (cdf, probs) = match prev {
            Some(i) => (&self.cumulative[i * self.n..(i + 1) * self.n], self.row(i)),
            None => (&self.init_cumulative[..], &self.init[..]),
        };
        let u: f64 = rng.gen();
        match cdf.iter().position(|&c| c > u) {
            Some(j) => j,
            // u landed in the rounding gap above the last cumulative value
            None => probs.iter().rposition(|&p| p > 0.0).unwrap_or(self.n - 1),
        }
    }

    /// Stable short digest of the transition matrix and initial distribution.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for v in self.transition.iter().chain(self.init.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Applies a page relabeling: page `i` of `self` becomes page `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        if perm.len() != n {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut m = vec![vec![0.0; n]; n];
        let mut init = vec![0.0; n];
        for i in 0..n {
            init[perm[i]] = self.init[i];
            for j in 0..n {
                m[perm[i]][perm[j]] = self.prob(i, j);
            }
        }
        validate_chain(m, Some(init))
    }
}

/// Checks and normalizes a transition matrix plus initial distribution.
pub fn validate_chain(matrix: Vec<Vec<f64>>, init: Option<Vec<f64>>) -> Result<MarkovChain> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::TooFewPages(n));
    }
    if let Some((bad_row, row)) = matrix.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::NotSquare {
            rows: n,
            bad_row,
            cols: row.len(),
        });
    }
    let mut transition = Vec::with_capacity(n * n);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::NonStochasticRow { row: i, sum });
        }
        transition.extend(row.iter().map(|v| v / sum));
    }

    let init = match init {
        None => vec![1.0 / n as f64; n],
        Some(v) => {
            if v.len() != n {
                return Err(Error::InitLengthMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            let sum: f64 = v.iter().sum();
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
            {
                return Err(Error::InvalidInit { sum });
            }
            v.iter().map(|x| x / sum).collect()
        }
    };

    let min_entry = transition.iter().copied().fold(f64::INFINITY, f64::min);
    let cumulative = transition
        .chunks(n)
        .flat_map(running_sum)
        .collect::<Vec<_>>();
    let init_cumulative = running_sum(&init);
    Ok(MarkovChain {
        n,
        transition,
        cumulative,
        init,
        init_cumulative,
        min_entry,
        page_names: None,
    })
}

fn running_sum(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// A realized request sequence together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestSequence {
    pub pages: Vec<usize>,
    pub seed: u64,
}

impl RequestSequence {
    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }
}

/// Samples `len` requests: the first from `init`, then along transition rows.
pub fn sample_sequence(chain: &MarkovChain, len: usize, seed: u64) -> RequestSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RequestSequence {
        pages: sample_with(chain, len, &mut rng),
        seed,
    }
}

pub fn sample_with<R: RngCore + ?Sized>(
    chain: &MarkovChain,
    len: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut prev = None;
    for _ in 0..len {
        let page = chain.next_page(prev, rng);
        out.push(page);
        prev = Some(page);
    }
    out
}

/// Purpose tags for derived RNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Requests = 0,
    Policy = 1,
    Reference = 2,
    Aux = 3,
}

/// Independent per-trial RNG derived from `(seed, trial, purpose)`.
pub fn trial_rng(seed: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4).wrapping_add(stream as u64));
    rng
}

/// The three-page chain whose rows all equal `[1-eps, eps1, eps-eps1]`.
///
/// Requires `0 < eps - eps1 <= eps1 <= 1 - eps`. The initial distribution is
/// the common row, so the first request follows the same law as the rest.
pub fn build_lb_chain(eps: f64, eps1: f64) -> Result<MarkovChain> {
    check_lb_regime(eps, eps1)?;
    let row = vec![1.0 - eps, eps1, eps - eps1];
    iid_chain(&row)
}

pub(crate) fn check_lb_regime(eps: f64, eps1: f64) -> Result<()> {
    let third = eps - eps1;
    let ok =
        eps.is_finite() && eps1.is_finite() && third > 0.0 && third <= eps1 && eps1 <= 1.0 - eps;
    if ok {
        Ok(())
    } else {
        Err(Error::Regime(format!(
            "need 0 < eps - eps1 <= eps1 <= 1 - eps (eps={eps}, eps1={eps1})"
        )))
    }
}

/// Equal-split chain: page 0 w.p. `1-eps`, pages 1 and 2 w.p. `eps/2` each.
pub fn build_warmup_chain(eps: f64) -> Result<MarkovChain> {
    build_lb_chain(eps, eps / 2.0)
}

/// Chain whose every row (and initial distribution) equals `row`.
pub fn iid_chain(row: &[f64]) -> Result<MarkovChain> {
    let n = row.len();
    validate_chain(vec![row.to_vec(); n], Some(row.to_vec()))
}

/// Random chain with every transition entry at least `floor`.
pub fn random_chain<R: Rng + ?Sized>(n: usize, floor: f64, rng: &mut R) -> Result<MarkovChain> {
    if n < 2 {
        return Err(Error::TooFewPages(n));
    }
    if !(0.0..1.0 / n as f64).contains(&floor) {
        return Err(Error::InvalidArgument(format!(
            "floor {floor} must lie in [0, 1/n)"
        )));
    }
    let free = 1.0 - n as f64 * floor;
    let matrix = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = w.iter().sum();
            w.iter().map(|x| floor + free * x / total).collect()
        })
        .collect();
    validate_chain(matrix, None)
}

/// On-disk chain document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainFile {
    pub n: usize,
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_names: Option<Vec<String>>,
}

impl ChainFile {
    pub fn from_chain(chain: &MarkovChain) -> Self {
        ChainFile {
            n: chain.n(),
            transition: chain.rows(),
            init: Some(chain.init().to_vec()),
            page_names: chain.page_names().map(|s| s.to_vec()),
        }
    }

    pub fn into_chain(self) -> Result<MarkovChain> {
        if self.transition.len() != self.n {
            return Err(Error::Format(format!(
                "n = {} but transition has {} rows",
                self.n,
                self.transition.len()
            )));
        }
        let chain = validate_chain(self.transition, self.init)?;
        match self.page_names {
            Some(names) => chain.with_page_names(names),
            None => Ok(chain),
        }
    }
}

pub fn parse_chain(text: &str) -> Result<MarkovChain> {
    serde_json::from_str::<ChainFile>(text)?.into_chain()
}

pub fn load_chain(path: &Path) -> Result<MarkovChain> {
    parse_chain(&std::fs::read_to_string(path)?)
}

pub fn save_chain(chain: &MarkovChain, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&ChainFile::from_chain(chain))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
