//! Two-phase dense tableau simplex for the tiny LPs behind dominating
//! distributions. Bland's rule throughout, so pivoting never cycles and the
//! result is a deterministic function of the input.

use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective . x` subject to `constraints`, `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for j in 0..=w {
                    row[j] -= f * pivot_row[j];
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `obj . x` over the current basis using columns `< allowed`.
    fn optimize(&mut self, obj: &[f64], allowed: usize) -> Result<bool> {
        let w = self.width;
        let m = self.rows.len();
        for _ in 0..10_000 {
            // reduced cost of column j: obj_j - sum_i obj_{basis i} row_i[j]
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let rc = obj[j]
                    - (0..m)
                        .map(|i| obj[self.basis[i]] * self.rows[i][j])
                        .sum::<f64>();
                rc > EPS
            });
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.rows[i][c];
                if a > EPS {
                    let ratio = self.rows[i][w] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - EPS
                                || (ratio <= br + EPS && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(Error::Lp("pivot limit reached".into()))
    }
}

impl LinearProgram {
    pub fn solve(&self) -> Result<LpOutcome> {
        let nv = self.objective.len();
        let m = self.constraints.len();
        if self.constraints.iter().any(|c| c.coeffs.len() != nv) {
            return Err(Error::Lp("constraint width mismatch".into()));
        }
        // normalize to nonnegative right-hand sides
        let cons: Vec<(Vec<f64>, Relation, f64)> = self
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = cons.iter().filter(|c| c.1 != Relation::Eq).count();
        let n_art = cons.iter().filter(|c| c.1 != Relation::Le).count();
        let art_start = nv + n_slack;
        let width = art_start + n_art;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut si, mut ai) = (nv, art_start);
        for (coeffs, rel, rhs) in &cons {
            let mut row = vec![0.0; width + 1];
            row[..nv].copy_from_slice(coeffs);
            row[width] = *rhs;
            match rel {
                Relation::Le => {
                    row[si] = 1.0;
                    basis.push(si);
                    si += 1;
                }
                Relation::Ge => {
                    row[si] = -1.0;
                    si += 1;
                    row[ai] = 1.0;
                    basis.push(ai);
                    ai += 1;
                }
                Relation::Eq => {
                    row[ai] = 1.0;
                    basis.push(ai);
                    ai += 1;
                }
            }
            rows.push(row);
        }
        let mut tab = Tableau { rows, basis, width };

        if n_art > 0 {
            let mut phase1 = vec![0.0; width];
            phase1[art_start..].iter_mut().for_each(|v| *v = -1.0);
            tab.optimize(&phase1, width)?;
            let infeas: f64 = (0..m)
                .filter(|&i| tab.basis[i] >= art_start)
                .map(|i| tab.rows[i][width])
                .sum();
            if infeas > 1e-9 {
                return Ok(LpOutcome::Infeasible);
            }
            // drive zero-level artificials out of the basis
            let mut i = 0;
            while i < tab.rows.len() {
                if tab.basis[i] >= art_start {
                    match (0..art_start).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                        Some(j) => tab.pivot(i, j),
                        None => {
                            tab.rows.remove(i);
                            tab.basis.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        let mut obj = vec![0.0; width];
        obj[..nv].copy_from_slice(&self.objective);
        if !tab.optimize(&obj, art_start)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; nv];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < nv {
                x[b] = tab.rows[i][width];
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { x, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(coeffs: &[f64], relation: Relation, rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            relation,
            rhs,
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let lp = LinearProgram {
            objective: vec![3.0, 5.0],
            constraints: vec![
                c(&[1.0, 0.0], Relation::Le, 4.0),
                c(&[0.0, 2.0], Relation::Le, 12.0),
                c(&[3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
                assert!((value - 36.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn equality_and_ge() {
        // min x + y s.t. x + y = 1, x >= 0.25 -> value 1
        let lp = LinearProgram {
            objective: vec![-1.0, -2.0],
            constraints: vec![
                c(&[1.0, 1.0], Relation::Eq, 1.0),
                c(&[1.0, 0.0], Relation::Ge, 0.25),
            ],
        };
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, .. } => {
                assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            objective: vec![1.0],
            constraints: vec![c(&[1.0], Relation::Le, 1.0), c(&[1.0], Relation::Ge, 2.0)],
        };
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let lp = LinearProgram {
            objective: vec![1.0, 0.0],
            constraints: vec![c(&[0.0, 1.0], Relation::Le, 1.0)],
        };
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x <= -1 (x >= 1), x + y = 2, 2x + 2y = 4 (redundant); max y
        let lp = LinearProgram {
            objective: vec![0.0, 1.0],
            constraints: vec![
                c(&[-1.0, 0.0], Relation::Le, -1.0),
                c(&[1.0, 1.0], Relation::Eq, 2.0),
                c(&[2.0, 2.0], Relation::Eq, 4.0),
            ],
        };
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((x[0] - 1.0).abs() < 1e-12 && (value - 1.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }
}
