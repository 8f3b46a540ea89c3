//! Index permutations acting on row vectors and weight matrices.
//!
//! A permutation `σ` is stored as `map`, with `map[i] = σ(i)`. Its permutation
//! matrix `P` has `P[i][σ(i)] = 1`, so a row vector moves entry `i` to slot
//! `σ(i)`: `(x P)[σ(i)] = x[i]`, and `e_i P = e_{σ(i)}`.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ff::FieldModulus;
use crate::linalg::{FieldMatrix, FieldVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PermutationError {
    #[error("not a bijection on 0..{0}")]
    NotBijective(usize),
    #[error("dimension mismatch: permutation of size {perm}, operand of size {operand}")]
    DimensionMismatch { perm: usize, operand: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = PermutationError;
    fn try_from(map: Vec<usize>) -> Result<Self, PermutationError> {
        Self::from_map(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    /// Validates bijectivity with a sorted-image check.
    pub fn from_map(map: Vec<usize>) -> Result<Self, PermutationError> {
        let mut image = map.clone();
        image.sort_unstable();
        if image.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(PermutationError::NotBijective(map.len()));
        }
        Ok(Self { map })
    }

    /// Uniform permutation (Fisher-Yates via `SliceRandom::shuffle`).
    pub fn random<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn image(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Self { map: inv }
    }

    /// `self` followed by `then`: the matrix product `P_self · P_then`.
    pub fn then(&self, then: &Permutation) -> Self {
        Self {
            map: self.map.iter().map(|&j| then.map[j]).collect(),
        }
    }

    fn check(&self, n: usize) -> Result<(), PermutationError> {
        if n == self.map.len() {
            Ok(())
        } else {
            Err(PermutationError::DimensionMismatch {
                perm: self.map.len(),
                operand: n,
            })
        }
    }

    /// `x P`.
    pub fn apply(&self, x: &FieldVector) -> Result<FieldVector, PermutationError> {
        self.check(x.dim())?;
        let mut out = vec![0; x.dim()];
        for (i, &v) in x.raw().iter().enumerate() {
            out[self.map[i]] = v;
        }
        Ok(FieldVector::from_raw(x.modulus(), out))
    }

    /// `Pᵀ W`: row `i` of `W` becomes row `σ(i)`.
    pub fn lock_rows(&self, w: &FieldMatrix) -> Result<FieldMatrix, PermutationError> {
        self.check(w.rows())?;
        let mut out = FieldMatrix::zeros(w.modulus(), w.rows(), w.cols());
        for i in 0..w.rows() {
            out.row_mut(self.map[i]).copy_from_slice(w.row(i));
        }
        Ok(out)
    }

    /// `P W`: inverse of [`Permutation::lock_rows`].
    pub fn unlock_rows(&self, w: &FieldMatrix) -> Result<FieldMatrix, PermutationError> {
        self.inverse().lock_rows(w)
    }

    /// `W P`: column `j` of `W` becomes column `σ(j)`.
    pub fn permute_cols(&self, w: &FieldMatrix) -> Result<FieldMatrix, PermutationError> {
        self.check(w.cols())?;
        let mut out = FieldMatrix::zeros(w.modulus(), w.rows(), w.cols());
        for r in 0..w.rows() {
            let src = w.row(r);
            let dst = out.row_mut(r);
            for (j, &v) in src.iter().enumerate() {
                dst[self.map[j]] = v;
            }
        }
        Ok(out)
    }

    /// Dense permutation matrix, for reference checks.
    pub fn to_matrix(&self, modulus: FieldModulus) -> FieldMatrix {
        let n = self.map.len();
        let mut m = FieldMatrix::zeros(modulus, n, n);
        for (i, &j) in self.map.iter().enumerate() {
            m.set(i, j, 1);
        }
        m
    }
}
