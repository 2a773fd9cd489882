//! Dense minimal-norm least squares and Gram conditioning diagnostics.
//!
//! Every regression in the backward sweep goes through [`MinNormSolver`]. The
//! factorization is a Householder QR of the design (or of its transpose when
//! the design is wide) followed by a one-sided Jacobi SVD of the small
//! triangular factor, so
//! tall designs with tens of thousands of rows cost `O(M n^2)` and
//! rank-deficient designs still yield the minimal-norm minimizer.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};

use crate::error::{Error, Result};

/// Relative singular value cutoff used when the caller has no preference.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Smallest accepted relative cutoff; anything finer is below rounding.
pub const MIN_RANK_TOL: f64 = 1e-14;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Column pairs count as orthogonal once their cosine drops below
/// `JACOBI_TOL_ULPS * rows * eps`.
const JACOBI_TOL_ULPS: f64 = 8.0;

/// A finite, nonempty `M x n` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    inner: DMatrix<f64>,
}

impl DesignMatrix {
    /// Builds a design from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "design matrix must be nonempty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} design, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged design rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, &flat)
    }

    pub fn from_matrix(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "design matrix must be nonempty, got {}x{}",
                inner.nrows(),
                inner.ncols()
            )));
        }
        if let Some(pos) = inner.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % inner.nrows(), pos / inner.nrows());
            return Err(Error::NonFinite(format!("design entry ({r}, {c})")));
        }
        Ok(Self { inner })
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub coefficients: Vec<f64>,
    /// Number of singular values above the cutoff.
    pub numerical_rank: usize,
    /// Euclidean norm of `b - A theta`.
    pub residual_norm: f64,
}

enum Orthogonal {
    /// `A = Q R`, `R = U S V^T`; keeps the QR so `Q^T b` is applied implicitly.
    Tall {
        qr: QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    },
    /// `A^T = Q R`, `R^T = U S W^T`; `right` already holds `Q W`.
    Wide,
}

/// Reusable minimal-norm factorization of a design matrix.
///
/// Build once per design, then [`MinNormSolver::solve`] any number of
/// right-hand sides; the Picard loop re-solves the same design with
/// different targets.
pub struct MinNormSolver {
    rows: usize,
    cols: usize,
    orth: Orthogonal,
    /// Left singular vectors in the reduced basis (`n x p` for tall, `M x M` for wide).
    left: DMatrix<f64>,
    /// Right singular vectors, `n x p`.
    right: DMatrix<f64>,
    singular_values: DVector<f64>,
    rank_tol: f64,
}

impl std::fmt::Debug for MinNormSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MinNormSolver")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("singular_values", &self.singular_values.as_slice())
            .field("rank_tol", &self.rank_tol)
            .finish()
    }
}

fn check_rank_tol(rank_tol: f64) -> Result<()> {
    if !(MIN_RANK_TOL..1.0).contains(&rank_tol) {
        return Err(Error::Parameter(format!(
            "rank_tol must lie in [{MIN_RANK_TOL}, 1), got {rank_tol}"
        )));
    }
    Ok(())
}

/// Thin SVD `g = U diag(s) V^T` of a small square or tall matrix by one-sided
/// (Hestenes) Jacobi rotations. Columns of `U` belonging to zero singular
/// values are left at zero.
fn jacobi_svd(mut g: DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = g.ncols();
    // Columns below this squared norm are rounding noise relative to the
    // whole matrix; rotating them against each other need not converge.
    let floor = (f64::EPSILON * g.norm()).powi(2);
    // Orthogonality target; a rotation leaves cosines of a few ulps per row
    // behind, so demanding exactly `eps` can cycle forever.
    let tol = JACOBI_TOL_ULPS * g.nrows().max(1) as f64 * f64::EPSILON;
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = g.column(p);
                    let cq = g.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0
                    || alpha.min(beta) <= floor
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut g, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }
    let mut u = DMatrix::zeros(g.nrows(), n);
    let mut sv = DVector::zeros(n);
    for j in 0..n {
        let norm = g.column(j).norm();
        sv[j] = norm;
        if norm > 0.0 {
            u.set_column(j, &(g.column(j) / norm));
        }
    }
    Ok((u, sv, v))
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let a = m[(r, p)];
        let b = m[(r, q)];
        m[(r, p)] = c * a - s * b;
        m[(r, q)] = s * a + c * b;
    }
}

impl MinNormSolver {
    pub fn new(a: &DesignMatrix, rank_tol: f64) -> Result<Self> {
        check_rank_tol(rank_tol)?;
        let (rows, cols) = (a.rows(), a.cols());
        if rows >= cols {
            let qr = QR::new(a.as_matrix().clone());
            let (left, singular_values, right) = jacobi_svd(qr.r())?;
            Ok(Self {
                rows,
                cols,
                orth: Orthogonal::Tall { qr },
                left,
                right,
                singular_values,
                rank_tol,
            })
        } else {
            let qr = QR::new(a.as_matrix().transpose());
            let q = qr.q();
            let (left, singular_values, w) = jacobi_svd(qr.r().transpose())?;
            let right = q * w;
            Ok(Self {
                rows,
                cols,
                orth: Orthogonal::Wide,
                left,
                right,
                singular_values,
                rank_tol,
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn singular_values(&self) -> &[f64] {
        self.singular_values.as_slice()
    }

    pub fn largest_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Solves with the cutoff `rank_tol * sigma_max` of this design.
    pub fn solve(&self, b: &[f64]) -> Result<LsSolution> {
        self.solve_with_cutoff(b, self.rank_tol * self.largest_singular_value())
    }

    /// Solves keeping only singular values strictly above `cutoff`.
    pub fn solve_with_cutoff(&self, b: &[f64], cutoff: f64) -> Result<LsSolution> {
        if b.len() != self.rows {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, design has {} rows",
                b.len(),
                self.rows
            )));
        }
        if let Some(i) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("right-hand side entry {i}")));
        }
        let p = self.singular_values.len();
        // `h` is the part of `b` living in the span of `left`; `tail` is
        // what no choice of coefficients can reach.
        let (h, tail) = match &self.orth {
            Orthogonal::Tall { qr } => {
                let mut qtb = DVector::from_column_slice(b);
                qr.q_tr_mul(&mut qtb);
                let tail: f64 = qtb.rows_range(self.cols..).norm_squared();
                (qtb.rows_range(..self.cols).into_owned(), tail)
            }
            Orthogonal::Wide => (DVector::from_column_slice(b), 0.0),
        };
        let projected = self.left.tr_mul(&h);
        let mut scaled = DVector::zeros(p);
        let mut fitted = DVector::zeros(h.len());
        let mut rank = 0;
        for i in 0..p {
            let s = self.singular_values[i];
            if s > cutoff {
                scaled[i] = projected[i] / s;
                fitted.axpy(projected[i], &self.left.column(i), 1.0);
                rank += 1;
            }
        }
        let residual_sq = tail + (&h - fitted).norm_squared();
        let theta = &self.right * scaled;
        Ok(LsSolution {
            coefficients: theta.as_slice().to_vec(),
            numerical_rank: rank,
            residual_norm: residual_sq.max(0.0).sqrt(),
        })
    }
}

/// One-shot minimal-norm least squares: `argmin |b - A theta|` of least norm.
pub fn solve_min_norm(a: &DesignMatrix, b: &[f64], rank_tol: f64) -> Result<LsSolution> {
    MinNormSolver::new(a, rank_tol)?.solve(b)
}

/// One diagonal block of a [`BlockDiagonalSolver`].
#[derive(Debug)]
struct Block {
    rows: Vec<usize>,
    col_offset: usize,
    solver: MinNormSolver,
}

/// Minimal-norm solver for a design whose rows and columns split into
/// disjoint blocks (each row touches the columns of at most one block).
///
/// Rows outside every block are all-zero rows. The rank cutoff is taken
/// relative to the largest singular value over all blocks, which is the
/// largest singular value of the assembled design, so results match
/// [`MinNormSolver`] on the dense matrix.
#[derive(Debug)]
pub struct BlockDiagonalSolver {
    rows: usize,
    cols: usize,
    blocks: Vec<Block>,
    sigma_max: f64,
    rank_tol: f64,
}

impl BlockDiagonalSolver {
    /// `blocks` holds `(row indices, first column, block design)` triples.
    pub fn new(
        rows: usize,
        cols: usize,
        blocks: Vec<(Vec<usize>, usize, DesignMatrix)>,
        rank_tol: f64,
    ) -> Result<Self> {
        check_rank_tol(rank_tol)?;
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "design matrix must be nonempty, got {rows}x{cols}"
            )));
        }
        let mut row_seen = vec![false; rows];
        let mut col_seen = vec![false; cols];
        let mut built = Vec::with_capacity(blocks.len());
        for (row_idx, col_offset, design) in blocks {
            if row_idx.len() != design.rows() {
                return Err(Error::Dimension("block row count mismatch".into()));
            }
            if col_offset + design.cols() > cols {
                return Err(Error::Dimension("block columns exceed design".into()));
            }
            for &r in &row_idx {
                if r >= rows || std::mem::replace(&mut row_seen[r], true) {
                    return Err(Error::Dimension(format!("block row {r} invalid or reused")));
                }
            }
            for seen in &mut col_seen[col_offset..col_offset + design.cols()] {
                if std::mem::replace(seen, true) {
                    return Err(Error::Dimension("overlapping block columns".into()));
                }
            }
            built.push(Block {
                rows: row_idx,
                col_offset,
                solver: MinNormSolver::new(&design, rank_tol)?,
            });
        }
        let sigma_max = built
            .iter()
            .map(|b| b.solver.largest_singular_value())
            .fold(0.0, f64::max);
        Ok(Self {
            rows,
            cols,
            blocks: built,
            sigma_max,
            rank_tol,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<LsSolution> {
        if b.len() != self.rows {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, design has {} rows",
                b.len(),
                self.rows
            )));
        }
        if let Some(i) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("right-hand side entry {i}")));
        }
        let cutoff = self.rank_tol * self.sigma_max;
        let mut coefficients = vec![0.0; self.cols];
        let mut covered = vec![false; self.rows];
        let mut rank = 0;
        let mut residual_sq = 0.0;
        let mut local_b = Vec::new();
        for block in &self.blocks {
            local_b.clear();
            local_b.extend(block.rows.iter().map(|&r| b[r]));
            for &r in &block.rows {
                covered[r] = true;
            }
            let sol = block.solver.solve_with_cutoff(&local_b, cutoff)?;
            coefficients[block.col_offset..block.col_offset + sol.coefficients.len()]
                .copy_from_slice(&sol.coefficients);
            rank += sol.numerical_rank;
            residual_sq += sol.residual_norm * sol.residual_norm;
        }
        residual_sq += b
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| !c)
            .map(|(v, _)| v * v)
            .sum::<f64>();
        Ok(LsSolution {
            coefficients,
            numerical_rank: rank,
            residual_norm: residual_sq.sqrt(),
        })
    }
}

/// Smallest and largest eigenvalues of the empirical Gram matrix `A^T A / M`.
pub fn gram_diagnostic(a: &DesignMatrix) -> (f64, f64) {
    let m = a.as_matrix();
    let gram = m.tr_mul(m) / m.nrows() as f64;
    let eig = SymmetricEigen::new(gram);
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    // The Gram matrix is positive semidefinite; negative values are rounding.
    (lo.max(0.0), hi.max(0.0))
}
