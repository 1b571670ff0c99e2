//! Envelope (skyline) LDL^T factorization of symmetric matrices without
//! pivoting.
//!
//! The caller chooses the elimination order. Fill stays inside the envelope
//! of the reordered matrix, so an ordering that keeps rows short (banded
//! blocks with a few dense rows at the end) gives an `O(n b^2)` factorization.
//! Pivot signs are reported for inertia tests.

/// Number of positive, negative and (numerically) zero pivots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone)]
pub struct SkylineLdl {
    n: usize,
    /// new position -> original index
    perm: Vec<usize>,
    /// original index -> new position
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    slots: Vec<Slot>,
    inertia: Inertia,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Diag(usize),
    Lower(usize),
}

impl SkylineLdl {
    /// Symbolic setup for the structural entries `entries` (pairs of original
    /// indices, either triangle, duplicates allowed) under elimination order
    /// `order` (`order[k]` is the original index eliminated k-th).
    pub fn new(n: usize, entries: &[(usize, usize)], order: &[usize]) -> Self {
        assert_eq!(order.len(), n, "ordering must cover every index");
        let perm = order.to_vec();
        let mut inv = vec![usize::MAX; n];
        for (k, &o) in perm.iter().enumerate() {
            assert!(inv[o] == usize::MAX, "ordering repeats index {o}");
            inv[o] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j) in entries {
            let (a, b) = (inv[i], inv[j]);
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            if lo < first[hi] {
                first[hi] = lo;
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for k in 0..n {
            start.push(acc);
            acc += k - first[k];
        }
        start.push(acc);
        let slots = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (inv[i], inv[j]);
                let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
                if hi == lo {
                    Slot::Diag(hi)
                } else {
                    Slot::Lower(start[hi] + lo - first[hi])
                }
            })
            .collect();
        Self {
            n,
            perm,
            inv,
            first,
            start,
            lower: vec![0.0; acc],
            diag: vec![0.0; n],
            slots,
            inertia: Inertia::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries in the envelope (a measure of factorization cost).
    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }

    /// Position of original index `i` in the elimination order.
    pub fn position(&self, i: usize) -> usize {
        self.inv[i]
    }

    /// Loads numeric values for the entries given to [`SkylineLdl::new`]
    /// (same order; duplicates are summed) plus `diag_shift[i]` added to
    /// each diagonal entry, then factors.
    pub fn factor(&mut self, values: &[f64], diag_shift: &[f64]) -> Inertia {
        assert_eq!(values.len(), self.slots.len());
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        for (i, d) in self.diag.iter_mut().enumerate() {
            *d = diag_shift[self.perm[i]];
        }
        for (slot, &v) in self.slots.iter().zip(values) {
            match *slot {
                Slot::Diag(k) => self.diag[k] += v,
                Slot::Lower(p) => self.lower[p] += v,
            }
        }
        self.factor_in_place()
    }

    fn factor_in_place(&mut self) -> Inertia {
        let n = self.n;
        let mut inertia = Inertia::default();
        for k in 0..n {
            let fk = self.first[k];
            let sk = self.start[k];
            // u_kj = a_kj - sum_p u_kp L_jp, kept undivided until the row is done
            for j in fk..k {
                let fj = self.first[j];
                let lo = fk.max(fj);
                if lo < j {
                    let sj = self.start[j];
                    let (head, tail) = self.lower.split_at_mut(sk);
                    let row_j = &head[sj + lo - fj..sj + j - fj];
                    let row_k = &mut tail[..k - fk];
                    let dot: f64 = row_k[lo - fk..j - fk]
                        .iter()
                        .zip(row_j)
                        .map(|(a, b)| a * b)
                        .sum();
                    row_k[j - fk] -= dot;
                }
            }
            let mut dk = self.diag[k];
            // magnitude of the terms forming the pivot: a pivot at round-off
            // level relative to them is numerically zero
            let mut mag = dk.abs();
            for p in fk..k {
                let u = self.lower[sk + p - fk];
                let l = u / self.diag[p];
                dk -= u * l;
                mag += (u * l).abs();
                self.lower[sk + p - fk] = l;
            }
            let tiny = (1e2 * f64::EPSILON * mag).max(1e-300);
            if !dk.is_finite() || dk.abs() <= tiny {
                inertia.zero += 1;
                dk = if dk.is_finite() && dk < 0.0 { -tiny } else { tiny };
            } else if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.diag[k] = dk;
        }
        self.inertia = inertia;
        inertia
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b` in place (original indexing).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for k in 0..n {
            let fk = self.first[k];
            let sk = self.start[k];
            let row = &self.lower[sk..sk + k - fk];
            let dot: f64 = row.iter().zip(&y[fk..k]).map(|(l, v)| l * v).sum();
            y[k] -= dot;
        }
        for k in 0..n {
            y[k] /= self.diag[k];
        }
        for k in (0..n).rev() {
            let fk = self.first[k];
            let sk = self.start[k];
            let yk = y[k];
            if yk != 0.0 {
                let row = &self.lower[sk..sk + k - fk];
                for (l, v) in row.iter().zip(&mut y[fk..k]) {
                    *v -= l * yk;
                }
            }
        }
        for k in 0..n {
            b[self.perm[k]] = y[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(entries: &[(usize, usize, f64)], n: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j, v) in entries {
            a[i][j] += v;
            if i != j {
                a[j][i] += v;
            }
        }
        a
    }

    #[test]
    fn solves_saddle_point_system() {
        // [2 0 1; 0 3 1; 1 1 -1e-9]
        let entries = [(0, 0, 2.0), (1, 1, 3.0), (2, 0, 1.0), (2, 1, 1.0), (2, 2, -1e-9)];
        let pattern: Vec<_> = entries.iter().map(|e| (e.0, e.1)).collect();
        let values: Vec<_> = entries.iter().map(|e| e.2).collect();
        let mut f = SkylineLdl::new(3, &pattern, &[0, 1, 2]);
        let inertia = f.factor(&values, &[0.0; 3]);
        assert_eq!(inertia, Inertia { positive: 2, negative: 1, zero: 0 });
        let a = dense_from(&entries, 3);
        let x_true = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i][j] * x_true[j]).sum()).collect();
        f.solve(&mut b);
        for i in 0..3 {
            assert!((b[i] - x_true[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn arrow_matrix_with_dense_last_row() {
        let n = 8;
        let mut entries = Vec::new();
        for i in 0..n - 1 {
            entries.push((i, i, 4.0 + i as f64));
            if i > 0 {
                entries.push((i, i - 1, -1.0));
            }
            entries.push((n - 1, i, 0.5));
        }
        entries.push((n - 1, n - 1, 10.0));
        let pattern: Vec<_> = entries.iter().map(|e| (e.0, e.1)).collect();
        let values: Vec<_> = entries.iter().map(|e| e.2).collect();
        let order: Vec<usize> = (0..n).collect();
        let mut f = SkylineLdl::new(n, &pattern, &order);
        let inertia = f.factor(&values, &vec![0.0; n]);
        assert_eq!(inertia.positive, n);
        let a = dense_from(&entries, n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum()).collect();
        f.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_order_gives_same_solution() {
        let n = 6;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 3.0));
            if i + 2 < n {
                entries.push((i + 2, i, 1.0));
            }
        }
        entries.push((5, 0, -0.7));
        let pattern: Vec<_> = entries.iter().map(|e| (e.0, e.1)).collect();
        let values: Vec<_> = entries.iter().map(|e| e.2).collect();
        let a = dense_from(&entries, n);
        let x_true = [1.0, 2.0, 3.0, -1.0, 0.0, 0.25];
        let rhs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum()).collect();
        for order in [[0, 1, 2, 3, 4, 5], [5, 3, 1, 0, 2, 4], [2, 4, 0, 5, 1, 3]] {
            let mut f = SkylineLdl::new(n, &pattern, &order);
            f.factor(&values, &[0.0; 6]);
            let mut b = rhs.clone();
            f.solve(&mut b);
            for i in 0..n {
                assert!((b[i] - x_true[i]).abs() < 1e-12, "order {order:?}");
            }
        }
    }

    #[test]
    fn counts_negative_pivots_of_indefinite_matrix() {
        let entries = [(0, 0, 1.0), (1, 1, -2.0), (2, 2, 5.0), (1, 0, 0.1)];
        let pattern: Vec<_> = entries.iter().map(|e| (e.0, e.1)).collect();
        let values: Vec<_> = entries.iter().map(|e| e.2).collect();
        let mut f = SkylineLdl::new(3, &pattern, &[0, 1, 2]);
        let inertia = f.factor(&values, &[0.0; 3]);
        assert_eq!(inertia, Inertia { positive: 2, negative: 1, zero: 0 });
        // shifting the diagonal by +3 makes it definite
        let inertia = f.factor(&values, &[3.0; 3]);
        assert_eq!(inertia.positive, 3);
    }
}
