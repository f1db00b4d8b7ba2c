//! Compressed sparse rows and a batched Jacobi-preconditioned CG.

use rayon::prelude::*;

/// Square CSR matrix.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// `y[rows] = A[rows, :] x` for a row range whose columns stay within
    /// the same range (a diagonal block).
    fn mul_block(&self, rows: std::ops::Range<usize>, x: &[f64], y: &mut [f64]) {
        let off = rows.start;
        for r in rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] - off];
            }
            y[r - off] = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            y[r] = (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(|k| self.vals[k] * x[self.cols[k]])
                .sum();
        }
        y
    }
}

/// Outcome of one block of a batched solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockStatus {
    pub converged: bool,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves a block-diagonal SPD (or consistent PSD) system.
///
/// Every block runs its own CG recurrence (own step sizes and stopping
/// test), so a block's result does not depend on which other blocks share
/// the batch nor on the number of threads. `maxiter(n)` gives the
/// iteration cap for a block with `n` unknowns.
pub fn batched_pcg(
    a: &CsrMatrix,
    blocks: &[std::ops::Range<usize>],
    b: &[f64],
    tol: f64,
    maxiter: impl Fn(usize) -> usize + Sync,
) -> (Vec<f64>, Vec<BlockStatus>) {
    let diag = a.diagonal();
    let results: Vec<(Vec<f64>, BlockStatus)> = blocks
        .par_iter()
        .map(|range| {
            let n = range.len();
            let bb = &b[range.clone()];
            let inv_d: Vec<f64> = diag[range.clone()]
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect();
            let mut x = vec![0.0; n];
            let b_norm = dot(bb, bb).sqrt();
            if b_norm == 0.0 {
                return (
                    x,
                    BlockStatus {
                        converged: true,
                        iterations: 0,
                        relative_residual: 0.0,
                    },
                );
            }
            let mut r = bb.to_vec();
            let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
            let mut p = z.clone();
            let mut ap = vec![0.0; n];
            let mut rz = dot(&r, &z);
            let cap = maxiter(n);
            let mut rel = 1.0;
            for it in 0..cap {
                a.mul_block(range.clone(), &p, &mut ap);
                let pap = dot(&p, &ap);
                if !(pap > 0.0) {
                    break;
                }
                let alpha = rz / pap;
                for i in 0..n {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                rel = dot(&r, &r).sqrt() / b_norm;
                if rel < tol {
                    return (
                        x,
                        BlockStatus {
                            converged: true,
                            iterations: it + 1,
                            relative_residual: rel,
                        },
                    );
                }
                for i in 0..n {
                    z[i] = r[i] * inv_d[i];
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    p[i] = z[i] + beta * p[i];
                }
            }
            (
                x,
                BlockStatus {
                    converged: rel < tol,
                    iterations: cap,
                    relative_residual: rel,
                },
            )
        })
        .collect();
    let mut x = vec![0.0; a.n];
    let mut status = Vec::with_capacity(blocks.len());
    for (range, (xb, st)) in blocks.iter().zip(results) {
        x[range.clone()].copy_from_slice(&xb);
        status.push(st);
    }
    (x, status)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(m.diagonal(), vec![4.0, 2.0]);
        assert_eq!(m.mul(&[1.0, 1.0]), vec![3.0, 2.0]);
    }

    #[test]
    fn solves_two_independent_blocks() {
        // [4 1; 1 3] and [2].
        let m = CsrMatrix::from_triplets(
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0)],
        );
        let (x, st) = batched_pcg(&m, &[0..2, 2..3], &[1.0, 2.0, 4.0], 1e-12, |_| 50);
        assert!(st.iter().all(|s| s.converged));
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
        assert!((x[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let m = CsrMatrix::from_triplets(n, t);
        let b = vec![1.0; n];
        let (_, st) = batched_pcg(&m, &[0..n], &b, 1e-14, |_| 3);
        assert!(!st[0].converged);
        let (_, st) = batched_pcg(&m, &[0..n], &b, 1e-10, |_| 500);
        assert!(st[0].converged);
    }
}
