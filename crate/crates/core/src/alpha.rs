//! Pairwise "requested-before" probabilities.
//!
//! `alpha(p<q|s)` is the probability that page `p` is reached before page
//! `q` by the request process when the most recent request is `s`. For a
//! fixed pair it is the solution of an `n x n` system: rows `p` and `q` are
//! pinned to 1 and 0, every other row `r` reads `x_r = sum_j M[r][j] x_j`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::linalg::{Dense, Lu};

/// Largest pre-clamp excursion outside [0,1] attributed to roundoff.
pub const CLAMP_TOLERANCE: f64 = 1e-7;

/// The linear system whose solution is `alpha(p<q|.)`.
#[derive(Debug, Clone)]
pub struct PairSystem {
    pub p: usize,
    pub q: usize,
    pub matrix: Dense,
    pub rhs: Vec<f64>,
}

impl PairSystem {
    pub fn new(chain: &MarkovChain, p: usize, q: usize) -> Result<Self> {
        let n = chain.n();
        for page in [p, q] {
            if page >= n {
                return Err(Error::PageOutOfRange { page, n });
            }
        }
        if p == q {
            return Err(Error::InvalidArgument(format!(
                "pair system needs distinct pages (got {p} twice)"
            )));
        }
        let mut matrix = Dense::zeros(n);
        for r in 0..n {
            if r == p || r == q {
                matrix.set(r, r, 1.0);
            } else {
                for (j, &m) in chain.row(r).iter().enumerate() {
                    matrix.set(r, j, m);
                }
                matrix.set(r, r, matrix.get(r, r) - 1.0);
            }
        }
        let mut rhs = vec![0.0; n];
        rhs[p] = 1.0;
        Ok(PairSystem { p, q, matrix, rhs })
    }

    fn factor(&self) -> Result<Lu> {
        Lu::factor(&self.matrix).map_err(|s| Error::SingularSystem {
            p: self.p,
            q: self.q,
            col: s.col,
            pivot: s.pivot,
        })
    }

    /// `||L x - b||_inf`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.matrix
            .mul_vec(x)
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn clamp_solution(p: usize, q: usize, mut x: Vec<f64>) -> Result<Vec<f64>> {
    let excess = x.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max);
    if excess > CLAMP_TOLERANCE || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::AlphaOutOfRange { p, q, excess });
    }
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(x)
}

/// `alpha(p<q|s)` for every `s`.
pub fn alpha_pair(chain: &MarkovChain, p: usize, q: usize) -> Result<Vec<f64>> {
    let sys = PairSystem::new(chain, p, q)?;
    let lu = sys.factor()?;
    clamp_solution(p, q, lu.solve(&sys.rhs))
}

/// `alpha(p<q|s)` for all ordered pairs, indexed `[p][q][s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTable {
    n: usize,
    values: Vec<f64>,
}

impl AlphaTable {
    /// Wraps externally computed values (`n^3` entries, `[p][q][s]` order).
    /// The diagonal `p == q` is forced to zero.
    pub fn from_values(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * n {
            return Err(Error::Format(format!(
                "alpha table for n={n} needs {} values, got {}",
                n * n * n,
                values.len()
            )));
        }
        for p in 0..n {
            for s in 0..n {
                values[(p * n + p) * n + s] = 0.0;
            }
        }
        Ok(AlphaTable { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, s: usize) -> f64 {
        self.values[(p * self.n + q) * self.n + s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `alpha(.<.|s)` restricted to `pages`, row-major `k x k` with entry
    /// `[i][j] = alpha(pages[i] < pages[j] | s)`.
    pub fn restrict(&self, pages: &[usize], s: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(pages.len() * pages.len());
        for &p in pages {
            for &q in pages {
                out.push(self.get(p, q, s));
            }
        }
        out
    }

    /// Triples `(p, q, s)` with `alpha(p<q|s) + alpha(q<p|s)` below `1 - tol`;
    /// empty for irreducible chains.
    pub fn deficient_pairs(&self, tol: f64) -> Vec<(usize, usize, usize, f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for p in 0..n {
            for q in p + 1..n {
                for s in 0..n {
                    let sum = self.get(p, q, s) + self.get(q, p, s);
                    if sum < 1.0 - tol {
                        out.push((p, q, s, sum));
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&AlphaDump {
            format: ALPHA_FORMAT.to_string(),
            version: ALPHA_VERSION,
            n: self.n,
            values: self.values.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: AlphaDump = serde_json::from_str(text)?;
        if dump.format != ALPHA_FORMAT || dump.version != ALPHA_VERSION {
            return Err(Error::Format(format!(
                "unsupported alpha dump {} v{}",
                dump.format, dump.version
            )));
        }
        AlphaTable::from_values(dump.n, dump.values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const ALPHA_FORMAT: &str = "markov-paging/alpha-table";
const ALPHA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AlphaDump {
    format: String,
    version: u32,
    n: usize,
    values: Vec<f64>,
}

/// Full table. `L_{p,q}` and `L_{q,p}` are the same matrix, so each
/// unordered pair is factored once and solved for both right-hand sides.
pub fn alpha_table(chain: &MarkovChain) -> Result<AlphaTable> {
    let n = chain.n();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
        .collect();
    let solved: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let sys = PairSystem::new(chain, p, q)?;
            let lu = sys.factor()?;
            let pq = clamp_solution(p, q, lu.solve(&sys.rhs))?;
            let mut rhs = vec![0.0; n];
            rhs[q] = 1.0;
            let qp = clamp_solution(q, p, lu.solve(&rhs))?;
            Ok((p, q, pq, qp))
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n * n];
    for (p, q, pq, qp) in solved {
        values[(p * n + q) * n..(p * n + q + 1) * n].copy_from_slice(&pq);
        values[(q * n + p) * n..(q * n + p + 1) * n].copy_from_slice(&qp);
    }
    Ok(AlphaTable { n, values })
}

/// `sup_{p != q} ||L_{p,q}^{-1}||_inf`.
pub fn gamma(chain: &MarkovChain) -> Result<f64> {
    let n = chain.n();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
        .collect();
    let norms = pairs
        .par_iter()
        .map(|&(p, q)| {
            let sys = PairSystem::new(chain, p, q)?;
            Ok(sys.factor()?.inverse().norm_inf())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_warmup_chain, iid_chain, random_chain, validate_chain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn warmup_closed_form() {
        for eps in [0.3, 0.1, 1e-3] {
            let c = build_warmup_chain(eps).unwrap();
            let x = alpha_pair(&c, 1, 0).unwrap();
            let expect = (eps / 2.0) / (1.0 - eps / 2.0);
            // s = 2 is the only non-pinned row
            assert!((x[2] - expect).abs() < 1e-15, "{} vs {}", x[2], expect);
        }
        let x = alpha_pair(&build_warmup_chain(0.1).unwrap(), 1, 0).unwrap();
        assert!((x[2] - 1.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_iid_is_half() {
        for n in 2..6 {
            let c = iid_chain(&vec![1.0 / n as f64; n]).unwrap();
            let t = alpha_table(&c).unwrap();
            for p in 0..n {
                for q in 0..n {
                    for s in 0..n {
                        if p != q && s != p && s != q {
                            assert!((t.get(p, q, s) - 0.5).abs() < 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_page_table_is_pinned() {
        let c = validate_chain(vec![vec![0.9, 0.1], vec![0.3, 0.7]], None).unwrap();
        let t = alpha_table(&c).unwrap();
        assert_eq!(t.get(0, 1, 0), 1.0);
        assert_eq!(t.get(0, 1, 1), 0.0);
        assert_eq!(t.get(1, 0, 1), 1.0);
        assert_eq!(t.get(0, 0, 1), 0.0);
    }

    #[test]
    fn table_matches_pairs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_chain(5, 0.01, &mut rng).unwrap();
        let t = alpha_table(&c).unwrap();
        for p in 0..5 {
            for q in 0..5 {
                if p == q {
                    continue;
                }
                let x = alpha_pair(&c, p, q).unwrap();
                for s in 0..5 {
                    assert_eq!(t.get(p, q, s).to_bits(), x[s].to_bits());
                }
            }
        }
    }

    #[test]
    fn iid_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c0 = random_chain(5, 0.02, &mut rng).unwrap();
            let row = c0.row(0).to_vec();
            let c = iid_chain(&row).unwrap();
            let t = alpha_table(&c).unwrap();
            for p in 0..5 {
                for q in 0..5 {
                    if p == q {
                        continue;
                    }
                    let expect = row[p] / (row[p] + row[q]);
                    for s in (0..5).filter(|&s| s != p && s != q) {
                        assert!((t.get(p, q, s) - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn singular_for_unreachable_pair() {
        // page 2 is absorbing; from 2 neither 0 nor 1 is ever reached
        let c = validate_chain(
            vec![
                vec![0.5, 0.25, 0.25],
                vec![0.25, 0.5, 0.25],
                vec![0.0, 0.0, 1.0],
            ],
            None,
        )
        .unwrap();
        assert!(matches!(
            alpha_pair(&c, 0, 1),
            Err(Error::SingularSystem { p: 0, q: 1, .. })
        ));
        assert!(matches!(alpha_table(&c), Err(Error::SingularSystem { .. })));
        assert!(gamma(&c).is_err());
    }

    #[test]
    fn reducible_but_solvable_pairs_are_reported() {
        // 3 is absorbing and 0 only feeds 0 or 3, so neither 1 nor 2 is
        // reachable from 0 or 3
        let c = validate_chain(
            vec![
                vec![0.5, 0.0, 0.0, 0.5],
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.5, 0.0, 0.5, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            None,
        )
        .unwrap();
        // pair (1,2): from 0 or 3 neither is reached -> singular
        assert!(alpha_pair(&c, 1, 2).is_err());
        // pair (0,3): always reached
        let x = alpha_pair(&c, 0, 3).unwrap();
        assert!((x[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_bounds_and_hand_value() {
        let c = validate_chain(vec![vec![0.5, 0.5], vec![0.5, 0.5]], None).unwrap();
        assert!((gamma(&c).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let c = random_chain(4, 0.05, &mut rng).unwrap();
            assert!(gamma(&c).unwrap() >= 0.5);
        }
    }

    #[test]
    fn gamma_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_chain(5, 0.03, &mut rng).unwrap();
        let g = gamma(&c).unwrap();
        let p = c.permuted(&[3, 0, 4, 1, 2]).unwrap();
        assert!((gamma(&p).unwrap() - g).abs() < 1e-10 * g);
    }

    #[test]
    fn dump_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_chain(4, 0.05, &mut rng).unwrap();
        let t = alpha_table(&c).unwrap();
        assert_eq!(AlphaTable::from_json(&t.to_json().unwrap()).unwrap(), t);
        assert!(AlphaTable::from_json(r#"{"format":"x","version":1,"n":1,"values":[0]}"#).is_err());
    }
}
