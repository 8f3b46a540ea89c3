//! Dense exact linear algebra over `F_p`.
//!
//! Vectors are row vectors. Subspaces are kept as canonical reduced
//! row-echelon bases ([`SubspaceBasis`]), which gives membership tests and
//! coset representatives ([`SubspaceBasis::residual`]) in `O(rank · d)`.

use std::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ff::{FieldElement, FieldError, FieldModulus};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn check_dim(expected: usize, got: usize) -> Result<(), LinalgError> {
    if expected == got {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, got })
    }
}

/// A row vector in `F_p^d`. All entries share the vector's modulus.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldVector {
    modulus: FieldModulus,
    entries: Vec<u64>,
}

impl fmt::Debug for FieldVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.modulus, self.entries)
    }
}

impl FieldVector {
    /// Reduces every value into `[0, p)`.
    pub fn new(modulus: FieldModulus, values: impl IntoIterator<Item = u64>) -> Self {
        Self {
            modulus,
            entries: values.into_iter().map(|v| modulus.reduce(v)).collect(),
        }
    }

    /// Caller guarantees every entry is already below `p`.
    pub fn from_raw(modulus: FieldModulus, entries: Vec<u64>) -> Self {
        debug_assert!(entries.iter().all(|&v| v < modulus.p()));
        Self { modulus, entries }
    }

    pub fn from_i64(modulus: FieldModulus, values: &[i64]) -> Self {
        Self {
            modulus,
            entries: values.iter().map(|&v| modulus.reduce_i64(v)).collect(),
        }
    }

    pub fn zeros(modulus: FieldModulus, dim: usize) -> Self {
        Self {
            modulus,
            entries: vec![0; dim],
        }
    }

    /// Canonical basis vector `e_i`.
    pub fn unit(modulus: FieldModulus, dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(modulus, dim);
        v.entries[i] = 1;
        v
    }

    pub fn random<R: RngCore + ?Sized>(modulus: FieldModulus, dim: usize, rng: &mut R) -> Self {
        Self {
            modulus,
            entries: (0..dim).map(|_| modulus.sample_raw(rng)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn raw(&self) -> &[u64] {
        &self.entries
    }

    pub fn into_raw(self) -> Vec<u64> {
        self.entries
    }

    pub fn get(&self, i: usize) -> FieldElement {
        self.modulus.element(self.entries[i])
    }

    pub fn set(&mut self, i: usize, value: u64) {
        self.entries[i] = self.modulus.reduce(value);
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0)
    }

    fn check_compatible(&self, other: &FieldVector) -> Result<(), LinalgError> {
        self.modulus.check_same(other.modulus)?;
        check_dim(self.dim(), other.dim())
    }

    pub fn add(&self, other: &FieldVector) -> Result<FieldVector, LinalgError> {
        self.check_compatible(other)?;
        let m = self.modulus;
        Ok(Self::from_raw(
            m,
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| m.add(a, b))
                .collect(),
        ))
    }

    pub fn sub(&self, other: &FieldVector) -> Result<FieldVector, LinalgError> {
        self.check_compatible(other)?;
        let m = self.modulus;
        Ok(Self::from_raw(
            m,
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| m.sub(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, c: u64) -> FieldVector {
        let m = self.modulus;
        let c = m.reduce(c);
        Self::from_raw(m, self.entries.iter().map(|&a| m.mul(a, c)).collect())
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: u64, other: &FieldVector) -> Result<(), LinalgError> {
        self.check_compatible(other)?;
        let m = self.modulus;
        let c = m.reduce(c);
        if c == 0 {
            return Ok(());
        }
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a = m.add(*a, m.mul(c, b));
        }
        Ok(())
    }

    pub fn dot(&self, other: &FieldVector) -> Result<FieldElement, LinalgError> {
        self.check_compatible(other)?;
        let m = self.modulus;
        let acc = self
            .entries
            .iter()
            .zip(&other.entries)
            .fold(0, |acc, (&a, &b)| m.add(acc, m.mul(a, b)));
        Ok(m.element(acc))
    }
}

/// A dense row-major matrix over `F_p`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMatrix {
    modulus: FieldModulus,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}x{} over {:?}", self.rows, self.cols, self.modulus)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        Ok(())
    }
}

impl FieldMatrix {
    pub fn zeros(modulus: FieldModulus, rows: usize, cols: usize) -> Self {
        Self {
            modulus,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(modulus: FieldModulus, n: usize) -> Self {
        let mut m = Self::zeros(modulus, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    pub fn from_raw(
        modulus: FieldModulus,
        rows: usize,
        cols: usize,
        data: Vec<u64>,
    ) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self {
            modulus,
            rows,
            cols,
            data: data.into_iter().map(|v| modulus.reduce(v)).collect(),
        })
    }

    /// Builds a matrix from small signed literals, row by row.
    pub fn from_i64_rows(modulus: FieldModulus, rows: &[&[i64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            data.extend(r.iter().map(|&v| modulus.reduce_i64(v)));
        }
        Ok(Self {
            modulus,
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Stacks vectors as rows; `cols` is used when the list is empty.
    pub fn from_rows(
        modulus: FieldModulus,
        cols: usize,
        rows: &[FieldVector],
    ) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            modulus.check_same(r.modulus())?;
            check_dim(cols, r.dim())?;
            data.extend_from_slice(r.raw());
        }
        Ok(Self {
            modulus,
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn random<R: RngCore + ?Sized>(
        modulus: FieldModulus,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            modulus,
            rows,
            cols,
            data: (0..rows * cols).map(|_| modulus.sample_raw(rng)).collect(),
        }
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn raw(&self) -> &[u64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = self.modulus.reduce(v);
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vector(&self, r: usize) -> FieldVector {
        FieldVector::from_raw(self.modulus, self.row(r).to_vec())
    }

    pub fn row_vectors(&self) -> Vec<FieldVector> {
        (0..self.rows).map(|r| self.row_vector(r)).collect()
    }

    pub fn transpose(&self) -> FieldMatrix {
        let mut t = Self::zeros(self.modulus, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Row vector times matrix: `x · M`, with `x.dim() == rows`.
    pub fn left_mul(&self, x: &FieldVector) -> Result<FieldVector, LinalgError> {
        self.modulus.check_same(x.modulus())?;
        check_dim(self.rows, x.dim())?;
        let m = self.modulus;
        let mut out = vec![0u64; self.cols];
        for (r, &xr) in x.raw().iter().enumerate() {
            if xr == 0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o = m.add(*o, m.mul(xr, w));
            }
        }
        Ok(FieldVector::from_raw(m, out))
    }

    /// Matrix times column vector: `M · y`, with `y.dim() == cols`.
    pub fn mul_col(&self, y: &FieldVector) -> Result<FieldVector, LinalgError> {
        self.modulus.check_same(y.modulus())?;
        check_dim(self.cols, y.dim())?;
        let m = self.modulus;
        Ok(FieldVector::from_raw(
            m,
            (0..self.rows)
                .map(|r| {
                    self.row(r)
                        .iter()
                        .zip(y.raw())
                        .fold(0, |acc, (&a, &b)| m.add(acc, m.mul(a, b)))
                })
                .collect(),
        ))
    }

    pub fn matmul(&self, rhs: &FieldMatrix) -> Result<FieldMatrix, LinalgError> {
        self.modulus.check_same(rhs.modulus)?;
        check_dim(self.cols, rhs.rows)?;
        let mut out = Self::zeros(self.modulus, self.rows, rhs.cols);
        for r in 0..self.rows {
            let prod = rhs.left_mul(&self.row_vector(r))?;
            out.row_mut(r).copy_from_slice(prod.raw());
        }
        Ok(out)
    }

    pub fn rank(&self) -> usize {
        rref(self).rank
    }
}

/// Output of [`rref`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rref {
    pub matrix: FieldMatrix,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

/// Gauss-Jordan elimination to the canonical reduced row-echelon form.
///
/// Columns are scanned left to right and the first row at or below the current
/// position with a nonzero entry becomes the pivot row.
pub fn rref(m: &FieldMatrix) -> Rref {
    let f = m.modulus;
    let mut a = m.clone();
    let (rows, cols) = (a.rows, a.cols);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(pr) = (r..rows).find(|&i| a.get(i, c) != 0) else {
            continue;
        };
        if pr != r {
            for j in 0..cols {
                a.data.swap(pr * cols + j, r * cols + j);
            }
        }
        let inv = f.inv(a.get(r, c)).expect("pivot is nonzero");
        for v in a.row_mut(r)[c..].iter_mut() {
            *v = f.mul(*v, inv);
        }
        let pivot_row: Vec<u64> = a.row(r)[c..].to_vec();
        for i in 0..rows {
            if i == r {
                continue;
            }
            let factor = a.get(i, c);
            if factor == 0 {
                continue;
            }
            for (v, &pv) in a.row_mut(i)[c..].iter_mut().zip(&pivot_row) {
                *v = f.sub_mul(*v, factor, pv);
            }
        }
        pivots.push(c);
        r += 1;
    }
    Rref {
        matrix: a,
        rank: pivots.len(),
        pivots,
    }
}

/// A subspace of `F_p^d`, held as its canonical RREF basis.
///
/// Rows are sorted by pivot column; each pivot entry is 1 and every other row
/// is zero in that column. Two generating sets of the same subspace produce
/// identical bases, so `==` is subspace equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SubspaceBasis {
    modulus: FieldModulus,
    ambient_dim: usize,
    rows: Vec<Vec<u64>>,
    pivots: Vec<usize>,
}

impl fmt::Debug for SubspaceBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SubspaceBasis(rank {} in {:?}^{}, pivots {:?})",
            self.rank(),
            self.modulus,
            self.ambient_dim,
            self.pivots
        )
    }
}

impl SubspaceBasis {
    pub fn empty(modulus: FieldModulus, ambient_dim: usize) -> Self {
        Self {
            modulus,
            ambient_dim,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn full(modulus: FieldModulus, ambient_dim: usize) -> Self {
        Self {
            modulus,
            ambient_dim,
            rows: (0..ambient_dim)
                .map(|i| {
                    let mut r = vec![0; ambient_dim];
                    r[i] = 1;
                    r
                })
                .collect(),
            pivots: (0..ambient_dim).collect(),
        }
    }

    pub fn span<'a>(
        modulus: FieldModulus,
        ambient_dim: usize,
        vectors: impl IntoIterator<Item = &'a FieldVector>,
    ) -> Result<Self, LinalgError> {
        let mut b = Self::empty(modulus, ambient_dim);
        for v in vectors {
            b.insert(v)?;
        }
        Ok(b)
    }

    /// Row space of a matrix.
    pub fn row_space(m: &FieldMatrix) -> Self {
        let r = rref(m);
        Self {
            modulus: m.modulus,
            ambient_dim: m.cols,
            rows: (0..r.rank).map(|i| r.matrix.row(i).to_vec()).collect(),
            pivots: r.pivots,
        }
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn basis_rows(&self) -> FieldMatrix {
        FieldMatrix {
            modulus: self.modulus,
            rows: self.rows.len(),
            cols: self.ambient_dim,
            data: self.rows.concat(),
        }
    }

    pub fn vectors(&self) -> impl Iterator<Item = FieldVector> + '_ {
        self.rows
            .iter()
            .map(|r| FieldVector::from_raw(self.modulus, r.clone()))
    }

    pub fn raw_rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    fn check_vector(&self, v: &FieldVector) -> Result<(), LinalgError> {
        self.modulus.check_same(v.modulus())?;
        check_dim(self.ambient_dim, v.dim())
    }

    /// Reduces `v` in place against the basis. Afterwards every pivot column
    /// of `v` is zero.
    pub fn reduce_in_place(&self, v: &mut [u64]) {
        let f = self.modulus;
        for (row, &pc) in self.rows.iter().zip(&self.pivots) {
            let c = v[pc];
            if c == 0 {
                continue;
            }
            for (x, &b) in v[pc..].iter_mut().zip(&row[pc..]) {
                *x = f.sub_mul(*x, c, b);
            }
        }
    }

    /// Canonical representative of the coset `v + span(self)`.
    pub fn residual(&self, v: &FieldVector) -> Result<FieldVector, LinalgError> {
        self.check_vector(v)?;
        let mut out = v.raw().to_vec();
        self.reduce_in_place(&mut out);
        Ok(FieldVector::from_raw(self.modulus, out))
    }

    pub fn is_member(&self, v: &FieldVector) -> Result<bool, LinalgError> {
        Ok(self.residual(v)?.is_zero())
    }

    /// Adds `v` to the spanning set. Returns whether the rank grew.
    pub fn insert(&mut self, v: &FieldVector) -> Result<bool, LinalgError> {
        self.check_vector(v)?;
        let mut w = v.raw().to_vec();
        self.reduce_in_place(&mut w);
        let Some(pc) = w.iter().position(|&x| x != 0) else {
            return Ok(false);
        };
        let f = self.modulus;
        let inv = f.inv(w[pc])?;
        for x in w[pc..].iter_mut() {
            *x = f.mul(*x, inv);
        }
        // Clear the new pivot column from the existing rows.
        for row in self.rows.iter_mut() {
            let c = row[pc];
            if c == 0 {
                continue;
            }
            for (x, &b) in row[pc..].iter_mut().zip(&w[pc..]) {
                *x = f.sub_mul(*x, c, b);
            }
        }
        let at = self.pivots.partition_point(|&p| p < pc);
        self.pivots.insert(at, pc);
        self.rows.insert(at, w);
        Ok(true)
    }

    /// `true` iff `other ⊆ self`.
    pub fn contains(&self, other: &SubspaceBasis) -> Result<bool, LinalgError> {
        for v in other.vectors() {
            if !self.is_member(&v)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `self + other`.
    pub fn join(&self, other: &SubspaceBasis) -> Result<SubspaceBasis, LinalgError> {
        let mut out = self.clone();
        for v in other.vectors() {
            out.insert(&v)?;
        }
        Ok(out)
    }

    /// `span(self) ∩ span(other)`.
    ///
    /// Stacks the generators `u_i` of `self` and `w_j` of `other` as columns
    /// of `[U | -W]`, takes the nullspace `(γ, δ)`, and maps every solution
    /// back through `v = Σ γ_i u_i`.
    pub fn intersect(&self, other: &SubspaceBasis) -> Result<SubspaceBasis, LinalgError> {
        self.modulus.check_same(other.modulus)?;
        check_dim(self.ambient_dim, other.ambient_dim)?;
        let f = self.modulus;
        let (ra, rb, d) = (self.rank(), other.rank(), self.ambient_dim);
        let mut system = FieldMatrix::zeros(f, d, ra + rb);
        for (j, u) in self.rows.iter().enumerate() {
            for (i, &x) in u.iter().enumerate() {
                system.data[i * (ra + rb) + j] = x;
            }
        }
        for (j, w) in other.rows.iter().enumerate() {
            for (i, &x) in w.iter().enumerate() {
                system.data[i * (ra + rb) + ra + j] = f.neg(x);
            }
        }
        let solutions = nullspace(&system);
        let mut out = SubspaceBasis::empty(f, d);
        for sol in solutions.raw_rows() {
            let mut v = vec![0u64; d];
            for (u, &gamma) in self.rows.iter().zip(&sol[..ra]) {
                if gamma == 0 {
                    continue;
                }
                for (x, &ux) in v.iter_mut().zip(u) {
                    *x = f.add(*x, f.mul(gamma, ux));
                }
            }
            out.insert(&FieldVector::from_raw(f, v))?;
        }
        Ok(out)
    }
}

/// Basis of `{x : M x = 0}` (column-vector convention), living in `F_p^cols`.
pub fn nullspace(m: &FieldMatrix) -> SubspaceBasis {
    let f = m.modulus;
    let r = rref(m);
    let mut is_pivot = vec![false; m.cols];
    for &p in &r.pivots {
        is_pivot[p] = true;
    }
    let mut out = SubspaceBasis::empty(f, m.cols);
    for free in (0..m.cols).filter(|&c| !is_pivot[c]) {
        let mut x = vec![0u64; m.cols];
        x[free] = 1;
        for (i, &pc) in r.pivots.iter().enumerate() {
            x[pc] = f.neg(r.matrix.get(i, free));
        }
        out.insert(&FieldVector::from_raw(f, x))
            .expect("dimensions agree by construction");
    }
    out
}

/// `span(a) ∩ span(b)`; see [`SubspaceBasis::intersect`].
pub fn subspace_intersection(
    a: &SubspaceBasis,
    b: &SubspaceBasis,
) -> Result<SubspaceBasis, LinalgError> {
    a.intersect(b)
}

/// An exact probability `numerator / denominator` in lowest terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactProbability {
    pub numerator: BigUint,
    pub denominator: BigUint,
}

impl ExactProbability {
    pub fn to_f64(&self) -> f64 {
        // Scale both sides down so very large operands still convert.
        let shift = self.denominator.bits().saturating_sub(1000);
        let n = (&self.numerator >> shift).to_f64().unwrap_or(f64::NAN);
        let d = (&self.denominator >> shift).to_f64().unwrap_or(f64::NAN);
        n / d
    }
}

impl fmt::Display for ExactProbability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// Probability that a uniform `k × k` matrix over `F_p` is singular.
#[derive(Clone, Debug, PartialEq)]
pub struct RankDeficiency {
    pub k: usize,
    pub p: u64,
    /// Present when the rational fits comfortably in memory.
    pub exact: Option<ExactProbability>,
    pub value: f64,
}

/// Bit budget for the exact rational `p^{k(k+1)/2}`.
const EXACT_BITS_LIMIT: u64 = 1 << 16;

/// `1 - ∏_{i=1}^{k} (1 - p^{-i})`.
///
/// The float is evaluated in log space (`-expm1(Σ ln(1 - p^{-i}))`), which
/// stays accurate when the result is far below machine epsilon.
pub fn rank_deficiency_probability(k: usize, p: u64) -> Result<RankDeficiency, FieldError> {
    let modulus = FieldModulus::new(p)?;
    let pf = p as f64;
    let log_full: f64 = (1..=k).map(|i| (-pf.powi(-(i as i32))).ln_1p()).sum();
    let value = -log_full.exp_m1();

    let exponent = (k as u64) * (k as u64 + 1) / 2;
    let exact = (exponent * modulus.bit_width() as u64 <= EXACT_BITS_LIMIT).then(|| {
        // ∏ (p^i - 1) / p^i over a common denominator p^{k(k+1)/2}.
        let big_p = BigUint::from(p);
        let denominator = num_traits::pow(big_p.clone(), exponent as usize);
        let full: BigUint = (1..=k)
            .map(|i| num_traits::pow(big_p.clone(), i) - BigUint::one())
            .fold(BigUint::one(), |acc, x| acc * x);
        let numerator = &denominator - full;
        let g = numerator.gcd(&denominator);
        if g.is_zero() {
            ExactProbability {
                numerator,
                denominator,
            }
        } else {
            ExactProbability {
                numerator: numerator / &g,
                denominator: denominator / g,
            }
        }
    });
    Ok(RankDeficiency { k, p, exact, value })
}

pub fn random_matrix<R: RngCore + ?Sized>(
    modulus: FieldModulus,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> FieldMatrix {
    FieldMatrix::random(modulus, rows, cols, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ff::seeded_rng;
    use proptest::prelude::*;
    use rand::RngCore;

    fn f(p: u64) -> FieldModulus {
        FieldModulus::new(p).unwrap()
    }

    fn vecs(m: FieldModulus, rows: &[&[i64]]) -> Vec<FieldVector> {
        rows.iter().map(|r| FieldVector::from_i64(m, r)).collect()
    }

    #[test]
    fn rref_examples() {
        let m = f(7);
        let id = FieldMatrix::identity(m, 4);
        let r = rref(&id);
        assert_eq!((r.matrix, r.rank), (id, 4));

        let z = FieldMatrix::zeros(m, 3, 3);
        assert_eq!(rref(&z).rank, 0);
        assert_eq!(rref(&z).matrix, z);

        let a = FieldMatrix::from_i64_rows(m, &[&[1, 2], &[2, 4]]).unwrap();
        let r = rref(&a);
        assert_eq!(
            r.matrix,
            FieldMatrix::from_i64_rows(m, &[&[1, 2], &[0, 0]]).unwrap()
        );
        assert_eq!((r.rank, r.pivots), (1, vec![0]));
    }

    #[test]
    fn rref_hand_example_with_row_swap() {
        // [[0,3,1],[2,1,0]] over F_7. Swap, scale row 1 by 2^-1 = 4:
        // [1,4,0]; row 2 scaled by 3^-1 = 5 gives [0,1,5]; clear: [1,0,-20] = [1,0,1].
        let m = f(7);
        let a = FieldMatrix::from_i64_rows(m, &[&[0, 3, 1], &[2, 1, 0]]).unwrap();
        let r = rref(&a);
        assert_eq!(
            r.matrix,
            FieldMatrix::from_i64_rows(m, &[&[1, 0, 1], &[0, 1, 5]]).unwrap()
        );
        assert_eq!(r.pivots, vec![0, 1]);
    }

    #[test]
    fn insert_examples() {
        let m = FieldModulus::mersenne31();
        let mut b = SubspaceBasis::empty(m, 4);
        assert!(b.insert(&FieldVector::unit(m, 4, 0)).unwrap());
        assert_eq!(b.rank(), 1);
        assert!(!b.insert(&FieldVector::new(m, [3, 0, 0, 0])).unwrap());
        assert_eq!(b.rank(), 1);
        assert_eq!(
            b.insert(&FieldVector::zeros(m, 3)),
            Err(LinalgError::DimensionMismatch {
                expected: 4,
                got: 3
            })
        );
    }

    #[test]
    fn residual_examples() {
        let m = f(7);
        let b = SubspaceBasis::span(m, 3, &[FieldVector::unit(m, 3, 0)]).unwrap();
        assert!(b.residual(&FieldVector::unit(m, 3, 0)).unwrap().is_zero());
        assert_eq!(
            b.residual(&FieldVector::unit(m, 3, 1)).unwrap(),
            FieldVector::unit(m, 3, 1)
        );

        // span{e1+e2}: RREF row [1,1,0] with pivot at column 0. e2 has a zero
        // pivot entry, so it is already reduced.
        let b = SubspaceBasis::span(m, 3, &vecs(m, &[&[1, 1, 0]])).unwrap();
        let r = b.residual(&FieldVector::unit(m, 3, 1)).unwrap();
        assert_eq!(r, FieldVector::from_i64(m, &[0, 1, 0]));
        // e1 reduces to e1 - (e1+e2) = -e2, the same coset as e2 scaled by -1.
        let r1 = b.residual(&FieldVector::unit(m, 3, 0)).unwrap();
        assert_eq!(r1, FieldVector::from_i64(m, &[0, -1, 0]));
        assert_eq!(r1.raw(), &[0, 6, 0]);
    }

    #[test]
    fn membership_examples() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(11);
        let gens: Vec<_> = (0..3)
            .map(|_| FieldVector::random(m, 8, &mut rng))
            .collect();
        let b = SubspaceBasis::span(m, 8, &gens).unwrap();
        for v in b.vectors().chain(gens.iter().cloned()) {
            assert!(b.is_member(&v).unwrap());
        }
        let full = SubspaceBasis::full(m, 8);
        assert!(full
            .is_member(&FieldVector::random(m, 8, &mut rng))
            .unwrap());
    }

    #[test]
    fn membership_rate_matches_counting() {
        // P(uniform v ∈ K-dim subspace of F_5^6) = 5^{3-6} = 1/125.
        let m = f(5);
        let mut rng = seeded_rng(12);
        let trials = 200_000;
        let mut hits = 0;
        for t in 0..trials {
            let b = if t % 1000 == 0 || t == 0 {
                loop {
                    let gens: Vec<_> = (0..3)
                        .map(|_| FieldVector::random(m, 6, &mut rng))
                        .collect();
                    let b = SubspaceBasis::span(m, 6, &gens).unwrap();
                    if b.rank() == 3 {
                        break Some(b);
                    }
                }
            } else {
                None
            };
            thread_local!(static CUR: std::cell::RefCell<Option<SubspaceBasis>> = const { std::cell::RefCell::new(None) });
            CUR.with(|c| {
                if let Some(b) = b {
                    *c.borrow_mut() = Some(b);
                }
                let cur = c.borrow();
                if cur
                    .as_ref()
                    .unwrap()
                    .is_member(&FieldVector::random(m, 6, &mut rng))
                    .unwrap()
                {
                    hits += 1;
                }
            });
        }
        let p = 1.0 / 125.0;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let rate = hits as f64 / trials as f64;
        assert!((rate - p).abs() < 4.0 * sigma, "rate {rate}");
    }

    #[test]
    fn nullspace_examples() {
        let m = f(7);
        assert_eq!(nullspace(&FieldMatrix::identity(m, 3)).rank(), 0);
        assert_eq!(nullspace(&FieldMatrix::zeros(m, 2, 3)).rank(), 3);
        let a = FieldMatrix::from_i64_rows(m, &[&[1, 1, 0]]).unwrap();
        let n = nullspace(&a);
        assert_eq!(n.rank(), 2);
        assert!(n.is_member(&FieldVector::from_i64(m, &[1, -1, 0])).unwrap());
        assert!(n.is_member(&FieldVector::from_i64(m, &[0, 0, 1])).unwrap());
        for v in n.vectors() {
            assert!(a.mul_col(&v).unwrap().is_zero());
        }
    }

    #[test]
    fn intersection_examples() {
        let m = FieldModulus::mersenne31();
        let e = |i| FieldVector::unit(m, 4, i);
        let a = SubspaceBasis::span(m, 4, &[e(0), e(1)]).unwrap();
        let b = SubspaceBasis::span(m, 4, &[e(1), e(2)]).unwrap();
        assert_eq!(
            a.intersect(&b).unwrap(),
            SubspaceBasis::span(m, 4, &[e(1)]).unwrap()
        );
        assert_eq!(a.intersect(&a).unwrap(), a);
        assert_eq!(a.intersect(&SubspaceBasis::empty(m, 4)).unwrap().rank(), 0);
        assert!(a.intersect(&SubspaceBasis::empty(m, 5)).is_err());
    }

    #[test]
    fn planted_common_subspace_is_recovered() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(77);
        let d = 64;
        let common: Vec<_> = (0..3)
            .map(|_| FieldVector::random(m, d, &mut rng))
            .collect();
        let mut ga = common.clone();
        let mut gb = common.clone();
        ga.extend((0..2).map(|_| FieldVector::random(m, d, &mut rng)));
        gb.extend((0..2).map(|_| FieldVector::random(m, d, &mut rng)));
        let a = SubspaceBasis::span(m, d, &ga).unwrap();
        let b = SubspaceBasis::span(m, d, &gb).unwrap();
        let planted = SubspaceBasis::span(m, d, &common).unwrap();
        let got = a.intersect(&b).unwrap();
        assert_eq!(got.rank(), 3);
        assert!(got.contains(&planted).unwrap() && planted.contains(&got).unwrap());
        assert_eq!(got, planted);
    }

    /// Every vector of `F_p^d`, for brute-force checks.
    fn all_vectors(m: FieldModulus, d: usize) -> Vec<FieldVector> {
        let p = m.p() as usize;
        (0..p.pow(d as u32))
            .map(|mut idx| {
                let mut v = Vec::with_capacity(d);
                for _ in 0..d {
                    v.push((idx % p) as u64);
                    idx /= p;
                }
                FieldVector::from_raw(m, v)
            })
            .collect()
    }

    /// Closure of a generating set under linear combinations, by enumeration.
    fn enumerated_span(m: FieldModulus, d: usize, gens: &[FieldVector]) -> Vec<FieldVector> {
        let mut set = std::collections::HashSet::new();
        set.insert(FieldVector::zeros(m, d));
        for g in gens {
            let current: Vec<_> = set.iter().cloned().collect();
            for v in current {
                let mut w = v.clone();
                for _ in 1..m.p() {
                    w = w.add(g).unwrap();
                    set.insert(w.clone());
                }
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn intersection_matches_brute_force_enumeration() {
        let mut rng = seeded_rng(2);
        for (p, d) in [(2u64, 6usize), (3, 5), (2, 4), (3, 4)] {
            let m = f(p);
            let universe = all_vectors(m, d);
            for _ in 0..6 {
                let na = (rng.next_u64() % 4) as usize + 1;
                let nb = (rng.next_u64() % 4) as usize + 1;
                let ga: Vec<_> = (0..na)
                    .map(|_| FieldVector::random(m, d, &mut rng))
                    .collect();
                let gb: Vec<_> = (0..nb)
                    .map(|_| FieldVector::random(m, d, &mut rng))
                    .collect();
                let sa: std::collections::HashSet<_> =
                    enumerated_span(m, d, &ga).into_iter().collect();
                let sb: std::collections::HashSet<_> =
                    enumerated_span(m, d, &gb).into_iter().collect();
                let brute: std::collections::HashSet<_> = sa.intersection(&sb).cloned().collect();

                let a = SubspaceBasis::span(m, d, &ga).unwrap();
                let b = SubspaceBasis::span(m, d, &gb).unwrap();
                let got = a.intersect(&b).unwrap();
                let from_basis: std::collections::HashSet<_> = universe
                    .iter()
                    .filter(|v| got.is_member(v).unwrap())
                    .cloned()
                    .collect();
                assert_eq!(brute, from_basis, "p={p} d={d}");
                assert_eq!(brute.len(), (p as usize).pow(got.rank() as u32));
            }
        }
    }

    /// Singular `k × k` matrices over `F_p`, counted by determinant expansion.
    fn count_singular(p: u64, k: usize) -> (u64, u64) {
        fn det(a: &[i64], n: usize, p: i64) -> i64 {
            if n == 1 {
                return a[0].rem_euclid(p);
            }
            let mut acc = 0i64;
            for c in 0..n {
                let minor: Vec<i64> = (1..n)
                    .flat_map(|r| (0..n).filter(move |&j| j != c).map(move |j| (r, j)))
                    .map(|(r, j)| a[r * n + j])
                    .collect();
                let sign = if c % 2 == 0 { 1 } else { -1 };
                acc = (acc + sign * a[c] * det(&minor, n - 1, p)).rem_euclid(p);
            }
            acc
        }
        let total = p.pow((k * k) as u32);
        let mut singular = 0;
        for mut idx in 0..total {
            let mut a = vec![0i64; k * k];
            for x in a.iter_mut() {
                *x = (idx % p) as i64;
                idx /= p;
            }
            if det(&a, k, p as i64) == 0 {
                singular += 1;
            }
        }
        (singular, total)
    }

    #[test]
    fn rank_deficiency_examples() {
        let r = rank_deficiency_probability(1, 2).unwrap();
        assert_eq!(r.exact.as_ref().unwrap().to_string(), "1/2");
        let r = rank_deficiency_probability(2, 2).unwrap();
        assert_eq!(r.exact.as_ref().unwrap().to_string(), "5/8");
        assert!((r.value - 0.625).abs() < 1e-15);
        assert_eq!(count_singular(2, 2), (10, 16));

        let r = rank_deficiency_probability(10, crate::ff::MERSENNE_31).unwrap();
        assert!((r.value - 4.66e-10).abs() < 0.01e-10, "{}", r.value);
        let inv_p = 1.0 / crate::ff::MERSENNE_31 as f64;
        assert!((r.value / inv_p - 1.0).abs() < 1e-3);
        assert!((r.exact.unwrap().to_f64() - r.value).abs() < 1e-22);
    }

    #[test]
    fn rank_deficiency_matches_enumeration() {
        for (p, k) in [(2u64, 1usize), (2, 2), (2, 3), (3, 2)] {
            let (s, t) = count_singular(p, k);
            let r = rank_deficiency_probability(k, p).unwrap();
            let exact = r.exact.unwrap();
            let g = num_integer::gcd(s, t);
            assert_eq!(exact.numerator, BigUint::from(s / g), "p={p} k={k}");
            assert_eq!(exact.denominator, BigUint::from(t / g), "p={p} k={k}");
        }
    }

    #[test]
    fn rank_deficiency_falls_back_to_float_for_huge_k() {
        let r = rank_deficiency_probability(400, crate::ff::MERSENNE_31).unwrap();
        assert!(r.exact.is_none());
        assert!((r.value - 1.0 / crate::ff::MERSENNE_31 as f64).abs() < 1e-15);
        assert!(rank_deficiency_probability(3, 4).is_err());
    }

    #[test]
    fn random_matrix_is_seeded() {
        let m = FieldModulus::mersenne31();
        let a = random_matrix(m, 5, 7, &mut seeded_rng(1));
        let b = random_matrix(m, 5, 7, &mut seeded_rng(1));
        assert_eq!(a, b);
        assert_ne!(a, random_matrix(m, 5, 7, &mut seeded_rng(2)));
    }

    #[test]
    fn singularity_rate_monte_carlo() {
        let m = f(3);
        let mut rng = seeded_rng(31);
        let trials = 100_000;
        let singular = (0..trials)
            .filter(|_| random_matrix(m, 3, 3, &mut rng).rank() < 3)
            .count();
        let p = rank_deficiency_probability(3, 3).unwrap().value;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let rate = singular as f64 / trials as f64;
        assert!((rate - p).abs() < 3.0 * sigma, "rate {rate} vs {p}");
    }

    #[test]
    fn incremental_rank_shortfall_matches_formula() {
        // K+0 random combinations of K fixed independent vectors, p = 2.
        let m = f(2);
        let (k, d) = (4, 12);
        let mut rng = seeded_rng(8);
        let fixed = loop {
            let g: Vec<_> = (0..k)
                .map(|_| FieldVector::random(m, d, &mut rng))
                .collect();
            if SubspaceBasis::span(m, d, &g).unwrap().rank() == k {
                break g;
            }
        };
        let trials = 20_000;
        let mut short = 0;
        for _ in 0..trials {
            let mut b = SubspaceBasis::empty(m, d);
            for _ in 0..k {
                let mut v = FieldVector::zeros(m, d);
                for g in &fixed {
                    v.add_scaled(m.sample_raw(&mut rng), g).unwrap();
                }
                b.insert(&v).unwrap();
            }
            if b.rank() < k {
                short += 1;
            }
        }
        let p = rank_deficiency_probability(k, 2).unwrap().value;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let rate = short as f64 / trials as f64;
        assert!((rate - p).abs() < 4.0 * sigma, "rate {rate} vs {p}");
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = (u64, usize, usize, u64)> {
        (
            prop::sample::select(vec![2u64, 3, 5, 7, crate::ff::MERSENNE_31]),
            1..=max,
            1..=max,
            any::<u64>(),
        )
    }

    /// Random matrix with a planted low rank, so rank-deficient cases occur.
    fn low_rank(m: FieldModulus, rows: usize, cols: usize, seed: u64) -> FieldMatrix {
        let mut rng = seeded_rng(seed);
        let inner = (seed % (rows.min(cols) as u64 + 1)) as usize;
        let a = FieldMatrix::random(m, rows, inner.max(1), &mut rng);
        let b = FieldMatrix::random(m, inner.max(1), cols, &mut rng);
        a.matmul(&b).unwrap()
    }

    proptest! {
        #[test]
        fn rref_is_idempotent_and_preserves_row_space((p, rows, cols, seed) in arb_matrix(16)) {
            let m = f(p);
            let a = low_rank(m, rows, cols, seed);
            let r = rref(&a);
            let rr = rref(&r.matrix);
            prop_assert_eq!(&rr.matrix, &r.matrix);
            let sa = SubspaceBasis::row_space(&a);
            let from_rows = SubspaceBasis::span(m, cols, &a.row_vectors()).unwrap();
            prop_assert_eq!(&sa, &from_rows);
            for v in a.row_vectors() {
                prop_assert!(sa.is_member(&v).unwrap());
            }
            for v in sa.vectors() {
                prop_assert!(from_rows.is_member(&v).unwrap());
            }
            prop_assert!(r.rank <= rows.min(cols));
            prop_assert_eq!(r.rank + nullspace(&a).rank(), cols);
        }

        #[test]
        fn basis_is_canonical_under_reordering((p, rows, cols, seed) in arb_matrix(10)) {
            let m = f(p);
            let a = low_rank(m, rows, cols, seed);
            let mut vs = a.row_vectors();
            let b1 = SubspaceBasis::span(m, cols, &vs).unwrap();
            vs.reverse();
            // Mix in a combination, which must not change the span.
            if vs.len() >= 2 {
                let mut extra = vs[0].clone();
                extra.add_scaled(3, &vs[1]).unwrap();
                vs.push(extra);
            }
            let b2 = SubspaceBasis::span(m, cols, &vs).unwrap();
            prop_assert_eq!(&b1, &b2);
            let pivots = b1.pivots().to_vec();
            prop_assert!(pivots.windows(2).all(|w| w[0] < w[1]));
            for (i, row) in b1.raw_rows().iter().enumerate() {
                for (j, &pc) in pivots.iter().enumerate() {
                    prop_assert_eq!(row[pc], u64::from(i == j));
                }
            }
        }

        #[test]
        fn residual_is_linear_modulo_span((p, rows, cols, seed) in arb_matrix(10)) {
            let m = f(p);
            let a = low_rank(m, rows, cols, seed);
            let b = SubspaceBasis::row_space(&a);
            let mut rng = seeded_rng(seed ^ 1);
            let x = FieldVector::random(m, cols, &mut rng);
            let y = FieldVector::random(m, cols, &mut rng);
            let lhs = b.residual(&x.add(&y).unwrap()).unwrap();
            let rhs = b.residual(&b.residual(&x).unwrap().add(&b.residual(&y).unwrap()).unwrap()).unwrap();
            prop_assert_eq!(&lhs, &rhs);
            prop_assert_eq!(b.residual(&x).unwrap(), b.residual(&lhs).unwrap().add(&b.residual(&y).unwrap().scale(p - 1)).unwrap());
            for u in a.row_vectors() {
                prop_assert!(b.residual(&u).unwrap().is_zero());
            }
            // x - residual(x) lies in the span.
            prop_assert!(b.is_member(&x.sub(&b.residual(&x).unwrap()).unwrap()).unwrap());
        }

        #[test]
        fn grassmann_identity(seed in any::<u64>(), d in 4usize..24) {
            let m = FieldModulus::mersenne31();
            let mut rng = seeded_rng(seed);
            let shared = (seed % 3) as usize;
            let extra_a = (seed / 3 % 4) as usize;
            let extra_b = (seed / 12 % 4) as usize;
            let common: Vec<_> = (0..shared).map(|_| FieldVector::random(m, d, &mut rng)).collect();
            let mut ga = common.clone();
            ga.extend((0..extra_a).map(|_| FieldVector::random(m, d, &mut rng)));
            let mut gb = common;
            gb.extend((0..extra_b).map(|_| FieldVector::random(m, d, &mut rng)));
            let a = SubspaceBasis::span(m, d, &ga).unwrap();
            let b = SubspaceBasis::span(m, d, &gb).unwrap();
            let cap = a.intersect(&b).unwrap();
            let cup = a.join(&b).unwrap();
            prop_assert_eq!(a.rank() + b.rank(), cup.rank() + cap.rank());
            prop_assert!(a.contains(&cap).unwrap() && b.contains(&cap).unwrap());
        }
    }
}
