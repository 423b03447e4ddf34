//! Dense LU factorization with partial pivoting for the small pair systems.

/// Pivots with magnitude below this are treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Singular pivot found at `col` with magnitude `pivot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub col: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Dense) -> Result<Lu, Singular> {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv_row, piv_val) =
                (col..n)
                    .map(|r| (r, lu[r * n + col].abs()))
                    .fold(
                        (col, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if piv_val < PIVOT_TOLERANCE {
                return Err(Singular {
                    col,
                    pivot: piv_val,
                });
            }
            if piv_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv_row * n + j);
                }
                perm.swap(col, piv_row);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / pivot;
                lu[r * n + col] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= f * lu[col * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * y[j];
            }
            y[i] = s / self.lu[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> Dense {
        let n = self.n;
        let mut inv = Dense::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            for (i, v) in self.solve(&e).into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }
}
