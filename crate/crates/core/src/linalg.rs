//! Numerical substrate: Gauss quadrature on the reference cell, compressed
//! sparse row matrices, and a banded direct solver with partial pivoting.
//!
//! Every system assembled by this crate comes from a structured lattice
//! numbering, so the band of the matrix is narrow and a band LU is both
//! simpler and faster than a general sparse factorization at these sizes.

use crate::error::{Error, Result};
use crate::spaces::ConstraintMap;

/// Gauss-Legendre abscissae on [-1, 1] and the matching weights, q = 1..6.
const GAUSS_X: [&[f64]; 6] = [
    &[0.0],
    &[-0.5773502691896257, 0.5773502691896257],
    &[-0.7745966692414834, 0.0, 0.7745966692414834],
    &[
        -0.8611363115940526,
        -0.3399810435848563,
        0.3399810435848563,
        0.8611363115940526,
    ],
    &[
        -0.9061798459386640,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.9061798459386640,
    ],
    &[
        -0.9324695142031521,
        -0.6612093864662645,
        -0.2386191860831969,
        0.2386191860831969,
        0.6612093864662645,
        0.9324695142031521,
    ],
];

const GAUSS_W: [&[f64]; 6] = [
    &[2.0],
    &[1.0, 1.0],
    &[0.5555555555555556, 0.8888888888888888, 0.5555555555555556],
    &[
        0.3478548451374538,
        0.6521451548625461,
        0.6521451548625461,
        0.3478548451374538,
    ],
    &[
        0.2369268850561891,
        0.4786286704993665,
        0.5688888888888889,
        0.4786286704993665,
        0.2369268850561891,
    ],
    &[
        0.1713244923791704,
        0.3607615730481386,
        0.4679139345726910,
        0.4679139345726910,
        0.3607615730481386,
        0.1713244923791704,
    ],
];

/// Tensor Gauss-Legendre rule on the reference cell [0,1]^d, d = 1 or 2.
///
/// Weights sum to one (the reference measure); the q-point rule integrates
/// 1D polynomials of degree <= 2q-1 exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    /// Flattened coordinates, `dim` entries per point.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Coordinate of point `i` for a 1D rule.
    pub fn point_1d(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.points[i]
    }

    /// Coordinates of point `i` for a 2D rule.
    pub fn point_2d(&self, i: usize) -> [f64; 2] {
        debug_assert_eq!(self.dim, 2);
        [self.points[2 * i], self.points[2 * i + 1]]
    }
}

/// Build the q-point tensor Gauss rule on [0,1]^d.
pub fn gauss_rule(q: usize, d: usize) -> Result<QuadratureRule> {
    if !(1..=6).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "gauss_rule: q must be in 1..=6, got {q}"
        )));
    }
    if d != 1 && d != 2 {
        return Err(Error::InvalidParameter(format!(
            "gauss_rule: d must be 1 or 2, got {d}"
        )));
    }
    // Map from [-1,1] to [0,1]: x -> (x+1)/2, w -> w/2.
    let xs: Vec<f64> = GAUSS_X[q - 1].iter().map(|x| 0.5 * (x + 1.0)).collect();
    let ws: Vec<f64> = GAUSS_W[q - 1].iter().map(|w| 0.5 * w).collect();
    match d {
        1 => Ok(QuadratureRule {
            dim: 1,
            points: xs,
            weights: ws,
        }),
        _ => {
            let mut points = Vec::with_capacity(2 * q * q);
            let mut weights = Vec::with_capacity(q * q);
            for (j, (&y, &wy)) in xs.iter().zip(&ws).enumerate() {
                let _ = j;
                for (&x, &wx) in xs.iter().zip(&ws) {
                    points.push(x);
                    points.push(y);
                    weights.push(wx * wy);
                }
            }
            Ok(QuadratureRule {
                dim: 2,
                points,
                weights,
            })
        }
    }
}

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and duplicates are summed during construction.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; nrows];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &t {
            assert!(i < nrows && j < ncols, "triplet out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                counts[i] += 1;
                last = Some((i, j));
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for i in 0..nrows {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// (column indices, values) of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                s += v * x[j];
            }
            y[i] = s;
        }
        y
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest |A_ij - A_ji| over stored entries; zero for symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.push((i, j, v));
            }
        }
        out
    }
}

/// A matrix together with a right-hand side.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows but rhs has {} entries",
                matrix.nrows(),
                rhs.len()
            )));
        }
        Ok(LinearSystem { matrix, rhs })
    }
}

fn norm_inf_vec(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Residual b - sum_k scale_k A_k y_k with error-free transformed products
/// (FMA) and compensated summation. Super-penalized operators B + sigma S
/// carry entries of order sigma >> 1; forming the sum explicitly rounds the
/// B part away, so the refinement residual is evaluated on the unrounded
/// parts instead (each with its own input vector).
fn residual_compensated(parts: &[(&SparseMatrix, f64, &[f64])], b: &[f64]) -> Vec<f64> {
    #[inline]
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, f64::mul_add(a, b, -p))
    }
    let n = b.len();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        let mut comp = 0.0;
        for &(a, scale, x) in parts {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                // scale * v * x[j] to second order: the scaled entry must not
                // round at relative eps, or the refinement target shifts by
                // eps * sigma * |S|
                let (vs, vs_lo) = two_prod(scale, v);
                let (p, p_err) = two_prod(vs, x[j]);
                let e = p_err + vs_lo * x[j];
                // two-sum of s and -p
                let t = s - p;
                let bb = t - s;
                comp += (s - (t - bb)) + ((-p) - bb) - e;
                s = t;
            }
        }
        r[i] = s + comp;
    }
    r
}

/// A jump-penalty operator kept in factored form S = G^T G, where each row
/// of G is one quadrature point of one penalized face and G x is evaluated
/// as (plus-side trace sum) - (minus-side trace sum).
///
/// The two sums are bitwise equal for fields that are continuous across the
/// penalized faces, so S annihilates the constrained subspace *exactly*: the
/// assembled matrix S loses that property to entry rounding, which at
/// sigma = 1e9 and beyond pollutes the continuous component of the solution.
#[derive(Debug, Clone)]
pub struct JumpFactor {
    /// Plus-side traces, one row per (face, quadrature point), weighted by
    /// sqrt(w M).
    pub plus: SparseMatrix,
    /// Minus-side traces with the same weights (empty rows on boundary faces).
    pub minus: SparseMatrix,
    /// G^T = (plus - minus)^T, built entrywise without summation rounding.
    pub transpose: SparseMatrix,
}

impl JumpFactor {
    /// Build from triplets of the two one-sided trace matrices.
    pub fn new(
        nrows: usize,
        ncols: usize,
        plus: Vec<(usize, usize, f64)>,
        minus: Vec<(usize, usize, f64)>,
    ) -> Self {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(plus.len() + minus.len());
        t.extend(plus.iter().map(|&(q, j, v)| (j, q, v)));
        t.extend(minus.iter().map(|&(q, j, v)| (j, q, -v)));
        JumpFactor {
            plus: SparseMatrix::from_triplets(nrows, ncols, plus),
            minus: SparseMatrix::from_triplets(nrows, ncols, minus),
            transpose: SparseMatrix::from_triplets(ncols, nrows, t),
        }
    }

    /// G x, with exact cancellation on continuous fields.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.plus.nrows()];
        for q in 0..self.plus.nrows() {
            let (cols, vals) = self.plus.row(q);
            let mut sp = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                sp += v * x[j];
            }
            let (cols, vals) = self.minus.row(q);
            let mut sm = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                sm += v * x[j];
            }
            y[q] = sp - sm;
        }
        y
    }

    /// The assembled S = G^T G (used to precondition, and in form tests).
    pub fn matrix(&self) -> SparseMatrix {
        let n = self.transpose.nrows();
        let mut t = Vec::new();
        for q in 0..self.plus.nrows() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let (cols, vals) = self.plus.row(q);
            row.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, v)));
            let (cols, vals) = self.minus.row(q);
            row.extend(cols.iter().zip(vals).map(|(&j, &v)| (j, -v)));
            for &(i, vi) in &row {
                for &(j, vj) in &row {
                    t.push((i, j, vi * vj));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }
}

/// Band LU factorization with partial pivoting (LAPACK dgbtrf layout).
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    /// Column-major band storage with kl extra superdiagonals for fill.
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    fn factor(matrix: &SparseMatrix) -> Result<BandLu> {
        let n = matrix.nrows();
        // Band extents from the stored sparsity pattern.
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..n {
            let (cols, _) = matrix.row(i);
            if let Some(&j0) = cols.first() {
                if i > j0 {
                    kl = kl.max(i - j0);
                }
            }
            if let Some(&j1) = cols.last() {
                if j1 > i {
                    ku = ku.max(j1 - i);
                }
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            ipiv: vec![0; n],
        };
        for i in 0..n {
            let (cols, vals) = matrix.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let k = lu.idx(i, j);
                lu.ab[k] = v;
            }
        }
        for k in 0..n {
            let i_max = (k + lu.kl).min(n - 1);
            let c_max = (k + lu.kl + lu.ku).min(n - 1);
            // partial pivot in column k
            let mut p = k;
            let mut best = lu.ab[lu.idx(k, k)].abs();
            for i in (k + 1)..=i_max {
                let v = lu.ab[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular { pivot: k });
            }
            lu.ipiv[k] = p;
            if p != k {
                for c in k..=c_max {
                    let a = lu.idx(k, c);
                    let b = lu.idx(p, c);
                    lu.ab.swap(a, b);
                }
            }
            let piv = lu.ab[lu.idx(k, k)];
            for i in (k + 1)..=i_max {
                let m = lu.idx(i, k);
                lu.ab[m] /= piv;
            }
            for c in (k + 1)..=c_max {
                let u = lu.ab[lu.idx(k, c)];
                if u != 0.0 {
                    for i in (k + 1)..=i_max {
                        let m = lu.ab[lu.idx(i, k)];
                        if m != 0.0 {
                            let t = lu.idx(i, c);
                            lu.ab[t] -= m * u;
                        }
                    }
                }
            }
        }
        Ok(lu)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                x.swap(k, p);
            }
            let i_max = (k + self.kl).min(n - 1);
            let xk = x[k];
            if xk != 0.0 {
                for i in (k + 1)..=i_max {
                    x[i] -= self.ab[self.idx(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let c_max = (k + self.kl + self.ku).min(n - 1);
            let mut s = x[k];
            for c in (k + 1)..=c_max {
                s -= self.ab[self.idx(k, c)] * x[c];
            }
            x[k] = s / self.ab[self.idx(k, k)];
        }
        x
    }
}

/// Direct solve of a square sparse system.
pub fn solve_direct(system: &LinearSystem) -> Result<Vec<f64>> {
    let residual = |x: &[f64]| residual_compensated(&[(&system.matrix, 1.0, x)], &system.rhs);
    solve_with_refinement(&system.matrix, &system.rhs, residual)
}

/// Direct solve of (B + sigma S) x = b with the super-penalty S kept in
/// factored form through the refinement: the summed matrix only serves to
/// build the band LU preconditioner.
pub fn solve_penalized(
    base: &SparseMatrix,
    s_matrix: &SparseMatrix,
    jumps: &JumpFactor,
    sigma: f64,
    b: &[f64],
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut t = base.triplets();
    t.extend(
        s_matrix
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (i, j, sigma * v)),
    );
    let combined = SparseMatrix::from_triplets(n, n, t);
    let residual = |x: &[f64]| {
        let y = jumps.apply(x);
        residual_compensated(&[(base, 1.0, x), (&jumps.transpose, sigma, &y)], b)
    };
    solve_with_refinement(&combined, b, residual)
}

/// Equilibrate, factor and refine. The residual closure defines the operator
/// the refinement converges against; the passed matrix is only its rounded
/// representative used for the factorization and the tolerance scale.
fn solve_with_refinement<F>(combined: &SparseMatrix, b: &[f64], residual: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    if combined.nrows() != n || combined.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve needs a square {}x{} operator, got {}x{}",
            n,
            n,
            combined.nrows(),
            combined.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // Row scaling from max-abs entries; an empty or zero row is structurally singular.
    let mut rs = vec![0.0f64; n];
    for i in 0..n {
        let (_, vals) = combined.row(i);
        let m = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m == 0.0 {
            return Err(Error::Singular { pivot: i });
        }
        rs[i] = 1.0 / m;
    }
    // Column scaling from the row-scaled entries.
    let mut cmax = vec![0.0f64; n];
    for i in 0..n {
        let (cols, vals) = combined.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            cmax[j] = cmax[j].max((rs[i] * v).abs());
        }
    }
    let mut cs = vec![0.0f64; n];
    for j in 0..n {
        if cmax[j] == 0.0 {
            return Err(Error::Singular { pivot: j });
        }
        cs[j] = 1.0 / cmax[j];
    }

    // Scaled matrix R A C.
    let scaled = {
        let mut t = combined.triplets();
        for (i, j, v) in t.iter_mut() {
            *v *= rs[*i] * cs[*j];
        }
        SparseMatrix::from_triplets(n, n, t)
    };
    let lu = BandLu::factor(&scaled)?;

    let solve_scaled = |r: &[f64]| -> Vec<f64> {
        let rb: Vec<f64> = r.iter().zip(&rs).map(|(v, s)| v * s).collect();
        let y = lu.solve(&rb);
        y.iter().zip(&cs).map(|(v, s)| v * s).collect()
    };

    let mut x = solve_scaled(b);
    // Refinement converges to a working-precision solution of the closure's
    // operator as long as kappa stays below 1/eps.
    for _ in 0..6 {
        let r = residual(&x);
        if norm_inf_vec(&r) == 0.0 {
            break;
        }
        let dx = solve_scaled(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        if norm_inf_vec(&dx) <= f64::EPSILON * norm_inf_vec(&x) {
            break;
        }
    }

    let residual = norm_inf_vec(&residual(&x));
    let binf = norm_inf_vec(b);
    let floor = f64::EPSILON * 32.0 * (n as f64).sqrt() * combined.norm_inf() * norm_inf_vec(&x);
    let tolerance = 1e-10 * (1.0 + binf) + floor;
    if !residual.is_finite() || residual > tolerance {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
        });
    }
    Ok(x)
}

/// Galerkin restriction of a dG system to the constrained subspace:
/// returns (P^T A P, P^T b) for the 0/1 prolongation P.
pub fn apply_constraints(system: &LinearSystem, constraints: &ConstraintMap) -> Result<LinearSystem> {
    let a = &system.matrix;
    let map = constraints.dof_to_free();
    if a.nrows() != map.len() || a.ncols() != map.len() {
        return Err(Error::DimensionMismatch(format!(
            "system is {}x{} but the constraint map covers {} dofs",
            a.nrows(),
            a.ncols(),
            map.len()
        )));
    }
    let nfree = constraints.free_dofs();
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let bi = match map[i] {
            Some(bi) => bi,
            None => continue,
        };
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(bj) = map[j] {
                triplets.push((bi, bj, v));
            }
        }
    }
    let mut rhs = vec![0.0; nfree];
    for (i, b) in system.rhs.iter().enumerate() {
        if let Some(bi) = map[i] {
            rhs[bi] += b;
        }
    }
    LinearSystem::new(SparseMatrix::from_triplets(nfree, nfree, triplets), rhs)
}
