use super::{dot, norm2, Mat, RANK_TOL};

/// Householder QR with column pivoting, `M P = Q R`.
///
/// Householder vectors are stored below the diagonal of `factors`, `R` on and
/// above it. `perm[k]` is the original column placed at position `k`.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    factors: Mat,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn factor(m: &Mat) -> Self {
        let rows = m.rows();
        let cols = m.cols();
        let steps = rows.min(cols);
        let mut a = m.clone();
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut tau = vec![0.0; steps];
        let mut r11 = 0.0f64;
        let mut rank = steps;

        for k in 0..steps {
            // pivot on the largest remaining column norm; norms are recomputed
            // each step instead of downdated, which is cheap at these sizes
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..cols {
                let n = norm2(&a.col(j)[k..]);
                if n > best_norm {
                    best = j;
                    best_norm = n;
                }
            }
            if best != k {
                swap_columns(&mut a, k, best);
                perm.swap(k, best);
            }

            let x = &a.col(k)[k..];
            let alpha = norm2(x);
            if k == 0 {
                r11 = alpha;
            }
            if alpha == 0.0 || alpha <= RANK_TOL * r11 {
                rank = k;
                break;
            }
            let beta = if x[0] >= 0.0 { -alpha } else { alpha };
            // v = x - beta e1, normalized so v[0] = 1
            let v0 = x[0] - beta;
            {
                let col = a.col_mut(k);
                for v in col[k + 1..].iter_mut() {
                    *v /= v0;
                }
                col[k] = beta;
            }
            // H = I - tau v vᵀ with v[0] = 1 maps x onto beta e1
            tau[k] = -v0 / beta;
            let v: Vec<f64> = std::iter::once(1.0)
                .chain(a.col(k)[k + 1..].iter().copied())
                .collect();
            for j in k + 1..cols {
                let col = &mut a.col_mut(j)[k..];
                let s = tau[k] * dot(&v, col);
                for (c, vi) in col.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
            }
        }

        Self {
            factors: a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `|R_kk|` for the retained pivots.
    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.rank)
            .map(|k| self.factors.get(k, k).abs())
            .collect()
    }

    /// Applies `Qᵀ` in place.
    fn apply_qt(&self, y: &mut [f64]) {
        let rows = self.factors.rows();
        for k in 0..self.rank {
            let col = self.factors.col(k);
            let mut s = y[k];
            for i in k + 1..rows {
                s += col[i] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in k + 1..rows {
                y[i] -= s * col[i];
            }
        }
    }

    /// Solves `R₁₁ z = b` for the leading `rank × rank` block.
    fn back_substitute(&self, b: &mut [f64]) {
        for i in (0..self.rank).rev() {
            let mut s = b[i];
            for j in i + 1..self.rank {
                s -= self.factors.get(i, j) * b[j];
            }
            b[i] = s / self.factors.get(i, i);
        }
    }

    /// Basic least-squares solution; columns beyond the numerical rank get 0.
    pub fn solve_least_squares(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.factors.rows());
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut z = qty[..self.rank].to_vec();
        self.back_substitute(&mut z);
        let mut out = vec![0.0; self.factors.cols()];
        for (k, &zk) in z.iter().enumerate() {
            out[self.perm[k]] = zk;
        }
        out
    }

    /// Solves `(MᵀM) x = s` using `MᵀM = P RᵀR Pᵀ`. Requires full column rank.
    pub fn solve_normal(&self, s: &[f64]) -> Option<Vec<f64>> {
        let n = self.factors.cols();
        if self.rank < n {
            return None;
        }
        assert_eq!(s.len(), n);
        // w = Pᵀ s
        let mut w: Vec<f64> = self.perm.iter().map(|&p| s[p]).collect();
        // Rᵀ u = w
        for i in 0..n {
            let mut acc = w[i];
            for k in 0..i {
                acc -= self.factors.get(k, i) * w[k];
            }
            w[i] = acc / self.factors.get(i, i);
        }
        // R z = u
        self.back_substitute(&mut w);
        let mut out = vec![0.0; n];
        for (k, &v) in w.iter().enumerate() {
            out[self.perm[k]] = v;
        }
        Some(out)
    }
}

fn swap_columns(a: &mut Mat, i: usize, j: usize) {
    if i == j {
        return;
    }
    let rows = a.rows();
    for r in 0..rows {
        let t = a.get(r, i);
        a.set(r, i, a.get(r, j));
        a.set(r, j, t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_equations_match_direct_gram_solve() {
        let m = Mat::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![0.0, 1.0, -1.0],
            vec![3.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap();
        let qr = PivotedQr::factor(&m);
        assert_eq!(qr.rank(), 3);
        let s = [1.0, -1.0, 0.5];
        let x = qr.solve_normal(&s).unwrap();
        let g = m.tr_mul(&m);
        let back = g.matvec(&x);
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_detects_dependent_column() {
        let m = Mat::from_columns(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let qr = PivotedQr::factor(&m);
        assert_eq!(qr.rank(), 2);
        assert!(qr.solve_normal(&[1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn wide_matrix_least_squares_interpolates() {
        let m = Mat::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let y = [2.0, -1.0];
        let b = PivotedQr::factor(&m).solve_least_squares(&y);
        let fit = m.matvec(&b);
        assert!((fit[0] - 2.0).abs() < 1e-14 && (fit[1] + 1.0).abs() < 1e-14);
    }
}
