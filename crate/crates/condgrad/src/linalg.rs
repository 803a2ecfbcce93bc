//! Minimal dense linear algebra: row-major `f64` matrices, vector helpers,
//! and power iteration for the top singular triple.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("power method did not converge within {iterations} iterations (best sigma {})", best.sigma)]
    NoConvergence {
        best: Box<SingularTriple>,
        iterations: usize,
    },
}

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols: ncols,
            data,
        }
    }

    /// Identity-like diagonal matrix with the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    /// y = Mᵀ x
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_transpose dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += a * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    /// self + c * other, shapes must match.
    pub fn add_scaled(&self, other: &Matrix, c: f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    /// C = A B
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// C = A Bᵀ
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow.iter()) {
                    acc += a * b;
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// C = Aᵀ B
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Rank-1 outer product u vᵀ scaled by c.
    pub fn outer(u: &[f64], v: &[f64], c: f64) -> Matrix {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                m[(i, j)] = c * ui * vj;
            }
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Top singular value with its left/right unit vectors.
#[derive(Debug, Clone)]
pub struct SingularTriple {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// A layer-indexed parameter vector: matrices concatenated row-major into one
/// flat buffer. The flat order (layer-major, then row-major within a layer)
/// is the canonical edge order used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    shapes: Vec<(usize, usize)>,
    data: Vec<f64>,
}

impl ParamBlock {
    pub fn from_matrices(mats: &[Matrix]) -> Self {
        let shapes = mats.iter().map(|m| (m.rows(), m.cols())).collect();
        let mut data = Vec::new();
        for m in mats {
            data.extend_from_slice(m.data());
        }
        Self { shapes, data }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_matrices(std::slice::from_ref(m))
    }

    /// Wrap a flat vector as a single 1-row layer.
    pub fn from_flat(v: Vec<f64>) -> Self {
        let d = v.len();
        Self {
            shapes: vec![(1, d)],
            data: v,
        }
    }

    pub fn zeros_like(other: &ParamBlock) -> Self {
        Self {
            shapes: other.shapes.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layer_range(&self, j: usize) -> std::ops::Range<usize> {
        let mut start = 0;
        for s in &self.shapes[..j] {
            start += s.0 * s.1;
        }
        start..start + self.shapes[j].0 * self.shapes[j].1
    }

    pub fn layer_slice(&self, j: usize) -> &[f64] {
        &self.data[self.layer_range(j)]
    }

    pub fn layer_slice_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.layer_range(j);
        &mut self.data[r]
    }

    pub fn layer_matrix(&self, j: usize) -> Matrix {
        let (r, c) = self.shapes[j];
        Matrix::from_vec(r, c, self.layer_slice(j).to_vec())
    }

    pub fn to_matrices(&self) -> Vec<Matrix> {
        (0..self.num_layers()).map(|j| self.layer_matrix(j)).collect()
    }
}

/// Inner product; the one operation here that can fail.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64, LinalgError> {
    if a.len() != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    l2_norm(m.data())
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is singular to working precision.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "solve_dense needs a square matrix");
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if m[(pivot, col)].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
            }
            x.swap(col, pivot);
        }
        let d = m[(col, col)];
        for r in col + 1..n {
            let factor = m[(r, col)] / d;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[(col, col)];
        for r in 0..col {
            x[r] -= m[(r, col)] * x[col];
        }
    }
    Some(x)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        if normalize(&mut v) > 1e-3 {
            return v;
        }
    }
}

/// Top singular triple (σ, u, v) of `m` by power iteration on MᵀM.
///
/// The Gram iteration v ← normalize(MᵀMv) needs one normalization per step;
/// convergence is declared when the relative change of the Rayleigh quotient
/// vᵀMᵀMv drops below `tol`. Deterministic for a fixed `seed`.
pub fn power_method(
    m: &Matrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SingularTriple, LinalgError> {
    assert!(tol > 0.0, "tol must be positive");
    if m.is_zero() {
        return Err(LinalgError::DegenerateInput("zero matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_unit(m.cols(), &mut rng);
    let mut rho_prev = f64::NAN;
    for _ in 0..max_iter {
        let mv = m.matvec(&v);
        let mut w = m.matvec_transpose(&mv);
        // Rayleigh quotient of MᵀM at the current unit v equals ‖Mv‖².
        let rho: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        if rho_prev.is_finite() && (rho - rho_prev).abs() <= tol * rho.max(f64::MIN_POSITIVE) {
            return Ok(build_triple(m, v));
        }
        rho_prev = rho;
        if normalize(&mut w) <= f64::MIN_POSITIVE {
            // Landed in the null space; restart from a fresh direction.
            v = random_unit(m.cols(), &mut rng);
            rho_prev = f64::NAN;
            continue;
        }
        v = w;
    }
    Err(LinalgError::NoConvergence {
        best: Box::new(build_triple(m, v)),
        iterations: max_iter,
    })
}

fn build_triple(m: &Matrix, v: Vec<f64>) -> SingularTriple {
    let mut u = m.matvec(&v);
    let sigma = normalize(&mut u);
    SingularTriple { sigma, u, v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::oracle::jacobi_sigma_max;

    #[test]
    fn frobenius_345() {
        let m = Matrix::from_rows(&[&[3.0, 4.0]]);
        assert_eq!(frobenius_norm(&m), 5.0);
    }

    #[test]
    fn frobenius_zero_and_ones() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        let ones = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(frobenius_norm(&ones), 2.0);
    }

    #[test]
    fn frobenius_empty_is_zero() {
        assert_eq!(frobenius_norm(&Matrix::zeros(0, 0)), 0.0);
    }

    #[test]
    fn dot_basics() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(dot(&[5.0, -2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(LinalgError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn power_method_identity() {
        let m = Matrix::diag(&[1.0, 1.0, 1.0]);
        let t = power_method(&m, 1e-12, 1000, 1).unwrap();
        assert!((t.sigma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_method_diagonal() {
        let m = Matrix::diag(&[3.0, 1.0]);
        let t = power_method(&m, 1e-14, 10_000, 42).unwrap();
        assert!((t.sigma - 3.0).abs() < 1e-8);
        assert!(t.u[0].abs() > 1.0 - 1e-6, "u should align with e1: {:?}", t.u);
        assert!(t.v[0].abs() > 1.0 - 1e-6, "v should align with e1: {:?}", t.v);
    }

    #[test]
    fn power_method_zero_matrix_errors() {
        let m = Matrix::zeros(2, 2);
        assert!(matches!(
            power_method(&m, 1e-10, 100, 0),
            Err(LinalgError::DegenerateInput(_))
        ));
    }

    #[test]
    fn power_method_no_convergence_carries_best() {
        // One iteration cannot satisfy a 1e-16 relative test on this matrix.
        let m = Matrix::from_rows(&[&[1.0, 0.3], &[0.2, 0.9]]);
        match power_method(&m, 1e-16, 1, 7) {
            Err(LinalgError::NoConvergence { best, iterations }) => {
                assert_eq!(iterations, 1);
                assert!(best.sigma > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn power_method_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..400).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let m = Matrix::from_vec(20, 20, data);
        let reference = jacobi_sigma_max(&m);
        let t = power_method(&m, 1e-14, 100_000, 7).unwrap();
        assert!(
            (t.sigma - reference).abs() <= 1e-6 * reference,
            "power {} vs jacobi {}",
            t.sigma,
            reference
        );
    }

    #[test]
    fn power_method_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let rows = 2 + (seed as usize % 5);
            let cols = 2 + ((seed as usize * 3) % 5);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect();
            let m = Matrix::from_vec(rows, cols, data);
            if m.is_zero() {
                continue;
            }
            let tol = 1e-12;
            let t = power_method(&m, tol, 200_000, seed).unwrap();
            assert!((l2_norm(&t.u) - 1.0).abs() < 1e-12);
            assert!((l2_norm(&t.v) - 1.0).abs() < 1e-12);
            assert!(t.sigma >= 0.0);
            assert!(t.sigma <= frobenius_norm(&m) + 1e-12);
            let mv = m.matvec(&t.v);
            let u_t_mv = dot(&t.u, &mv).unwrap();
            assert!(t.sigma >= u_t_mv.abs() - tol);
            // Defining residual of the returned triple.
            let resid: f64 = mv
                .iter()
                .zip(t.u.iter())
                .map(|(a, b)| (a - t.sigma * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid <= tol * t.sigma.max(1e-300) + 1e-12);
        }
    }

    #[test]
    fn power_method_same_seed_bitwise_identical() {
        let m = Matrix::from_rows(&[&[0.3, -1.2, 0.5], &[2.0, 0.1, -0.4]]);
        let a = power_method(&m, 1e-12, 10_000, 99).unwrap();
        let b = power_method(&m, 1e-12, 10_000, 99).unwrap();
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
        assert_eq!(
            a.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            a.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn param_block_layout() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0]]);
        let p = ParamBlock::from_matrices(&[a.clone(), b.clone()]);
        assert_eq!(p.num_layers(), 2);
        assert_eq!(p.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.layer_matrix(0), a);
        assert_eq!(p.layer_matrix(1), b);
    }
}
