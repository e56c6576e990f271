//! Prime-field arithmetic and dense matrices over GF(q).
//!
//! Elements are stored as raw `u64` residues in `[0, q)`. [`PrimeField`] is a
//! small `Copy` handle carrying the modulus, so hot loops work on plain
//! integers and only the public surface wraps them in [`FieldElement`].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::SchemeParams;

/// GF(q) for a prime `q`. Construction verifies primality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrimeField {
    q: u64,
}

fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    if q < 4 {
        return true;
    }
    if q.is_multiple_of(2) {
        return false;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

impl PrimeField {
    pub fn new(q: u64) -> Result<Self> {
        if !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(PrimeField { q })
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn elem(&self, value: u64) -> FieldElement {
        FieldElement {
            value: value % self.q,
            field: *self,
        }
    }

    pub fn zero(&self) -> FieldElement {
        self.elem(0)
    }

    pub fn one(&self) -> FieldElement {
        self.elem(1)
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        a % self.q
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.q as u128) as u64
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            self.q - (b - a)
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.q as u128) as u64
    }

    pub fn pow(&self, base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.q;
        let mut b = base % self.q;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(&self, a: u64) -> Result<u64> {
        let a = a % self.q;
        if a == 0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.pow(a, self.q - 2))
    }

    pub fn div(&self, a: u64, b: u64) -> Result<u64> {
        Ok(self.mul(a, self.inv(b)?))
    }
}

impl fmt::Display for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF({})", self.q)
    }
}

/// A residue tagged with its field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    field: PrimeField,
}

impl FieldElement {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn inv(self) -> Result<Self> {
        Ok(FieldElement {
            value: self.field.inv(self.value)?,
            field: self.field,
        })
    }

    pub fn checked_div(self, rhs: Self) -> Result<Self> {
        debug_assert_eq!(self.field, rhs.field);
        Ok(FieldElement {
            value: self.field.div(self.value, rhs.value)?,
            field: self.field,
        })
    }

    pub fn pow(self, exp: u64) -> Self {
        FieldElement {
            value: self.field.pow(self.value, exp),
            field: self.field,
        }
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident) => {
        impl $tr for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: FieldElement) -> FieldElement {
                debug_assert_eq!(self.field, rhs.field, "operands from different fields");
                FieldElement {
                    value: self.field.$method(self.value, rhs.value),
                    field: self.field,
                }
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        FieldElement {
            value: self.field.neg(self.value),
            field: self.field,
        }
    }
}

/// A vector over GF(q). Grid entries, sub-queries and response slabs are all
/// symbol vectors; only their lengths differ.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymbolVector(pub Vec<u64>);

impl SymbolVector {
    pub fn zeros(len: usize) -> Self {
        SymbolVector(vec![0; len])
    }

    /// Length-`len` vector with ones on `[start, start + width)`.
    pub fn unit_slab(len: usize, start: usize, width: usize) -> Self {
        let mut v = vec![0; len];
        v[start..start + width].iter_mut().for_each(|x| *x = 1);
        SymbolVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// `self += coeff * other`
    pub fn axpy(&mut self, field: &PrimeField, coeff: u64, other: &SymbolVector) {
        debug_assert_eq!(self.len(), other.len());
        if coeff == 0 {
            return;
        }
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = field.add(*a, field.mul(coeff, b));
        }
    }

    pub fn scale(&mut self, field: &PrimeField, coeff: u64) {
        for a in self.0.iter_mut() {
            *a = field.mul(*a, coeff);
        }
    }
}

/// Dense row-major matrix over a prime field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldMatrix {
    field: PrimeField,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl FieldMatrix {
    pub fn zeros(field: PrimeField, rows: usize, cols: usize) -> Self {
        FieldMatrix {
            field,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(field: PrimeField, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Builds a matrix from rows of raw residues (reduced mod q).
    pub fn from_rows(field: PrimeField, rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(FieldMatrix {
            field,
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().map(|&x| field.reduce(x)).collect(),
        })
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = self.field.reduce(v);
    }

    pub fn element(&self, r: usize, c: usize) -> FieldElement {
        self.field.elem(self.get(r, c))
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn mul(&self, rhs: &FieldMatrix) -> Result<FieldMatrix> {
        if self.cols != rhs.rows || self.field != rhs.field {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let f = self.field;
        let mut out = FieldMatrix::zeros(f, self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let idx = i * rhs.cols + j;
                    out.data[idx] = f.add(out.data[idx], f.mul(a, rhs.get(l, j)));
                }
            }
        }
        Ok(out)
    }

    /// Submatrix on the given row and column index lists, in order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> FieldMatrix {
        let mut out = FieldMatrix::zeros(self.field, rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out.data[i * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }

    /// Row-reduces in place and returns the pivot columns.
    fn row_reduce(&mut self) -> Vec<usize> {
        let f = self.field;
        let mut pivots = Vec::new();
        let mut lead = 0;
        for c in 0..self.cols {
            if lead == self.rows {
                break;
            }
            let Some(p) = (lead..self.rows).find(|&r| self.get(r, c) != 0) else {
                continue;
            };
            if p != lead {
                for j in 0..self.cols {
                    self.data.swap(p * self.cols + j, lead * self.cols + j);
                }
            }
            let inv = f.inv(self.get(lead, c)).expect("pivot is nonzero");
            for j in 0..self.cols {
                let v = f.mul(self.get(lead, j), inv);
                self.data[lead * self.cols + j] = v;
            }
            for r in 0..self.rows {
                if r == lead {
                    continue;
                }
                let factor = self.get(r, c);
                if factor == 0 {
                    continue;
                }
                for j in 0..self.cols {
                    let v = f.sub(self.get(r, j), f.mul(factor, self.get(lead, j)));
                    self.data[r * self.cols + j] = v;
                }
            }
            pivots.push(c);
            lead += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().row_reduce().len()
    }

    /// Solves `self * X = rhs` for square `self`.
    pub fn solve(&self, rhs: &FieldMatrix) -> Result<FieldMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "solve needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows || rhs.field != self.field {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, expected {}",
                rhs.rows, self.rows
            )));
        }
        let n = self.rows;
        let w = rhs.cols;
        let mut aug = FieldMatrix::zeros(self.field, n, n + w);
        for r in 0..n {
            aug.data[r * (n + w)..r * (n + w) + n].copy_from_slice(self.row(r));
            aug.data[r * (n + w) + n..(r + 1) * (n + w)].copy_from_slice(rhs.row(r));
        }
        let pivots = aug.row_reduce();
        if pivots.len() < n || pivots[n - 1] >= n {
            return Err(Error::Singular);
        }
        let cols: Vec<usize> = (n..n + w).collect();
        let rows: Vec<usize> = (0..n).collect();
        Ok(aug.submatrix(&rows, &cols))
    }

    pub fn inverse(&self) -> Result<FieldMatrix> {
        self.solve(&FieldMatrix::identity(self.field, self.rows))
    }

    pub fn is_invertible(&self) -> bool {
        self.rows == self.cols && self.rank() == self.rows
    }

    /// SHA-256 over the modulus, the shape and the entries (all little-endian
    /// u64). Peers compare it to agree on the encoding matrix.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.field.modulus().to_le_bytes());
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for &x in &self.data {
            h.update(x.to_le_bytes());
        }
        h.finalize().into()
    }
}

impl fmt::Display for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = self.row(r).iter().map(u64::to_string).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// `points.len() x cols` matrix with entry `(l, c) = points[l]^c`.
pub fn vandermonde(field: PrimeField, points: &[u64], cols: usize) -> Result<FieldMatrix> {
    let mut seen = std::collections::HashSet::new();
    for &p in points {
        let p = field.reduce(p);
        if p == 0 {
            return Err(Error::ZeroPoint);
        }
        if !seen.insert(p) {
            return Err(Error::DuplicatePoint(p));
        }
    }
    if cols as u64 > field.modulus() - 1 {
        return Err(Error::DimensionMismatch(format!(
            "{cols} columns exceed q - 1 = {}",
            field.modulus() - 1
        )));
    }
    let mut m = FieldMatrix::zeros(field, points.len(), cols);
    for (l, &p) in points.iter().enumerate() {
        for c in 0..cols {
            m.set(l, c, field.pow(p, c as u64));
        }
    }
    Ok(m)
}

/// The `n x n` Vandermonde matrix on points `1, 2, ..., n`.
pub fn default_vandermonde(field: PrimeField, n: usize) -> Result<FieldMatrix> {
    let points: Vec<u64> = (1..=n as u64).collect();
    vandermonde(field, &points, n)
}

/// Calls `visit` with every `size`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_subset(n: usize, size: usize, mut visit: impl FnMut(&[usize])) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        visit(&idx);
        let mut i = size;
        while i > 0 && idx[i - 1] == n - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All `size`-subsets of `0..n`.
pub fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for_each_subset(n, size, |s| out.push(s.to_vec()));
    out
}

/// True iff, for every level responder count `c` and every `c` rows of `v`,
/// those rows restricted to the first `c` columns form an invertible matrix.
pub fn validate_encoding_matrix(v: &FieldMatrix, params: &SchemeParams) -> Result<bool> {
    let n = params.n();
    if v.rows() != n || v.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "encoding matrix is {}x{}, expected {n}x{n}",
            v.rows(),
            v.cols()
        )));
    }
    if v.field().modulus() != params.q() {
        return Err(Error::DimensionMismatch(
            "encoding matrix field differs from q".into(),
        ));
    }
    for &mu in params.mus() {
        let cols: Vec<usize> = (0..mu).collect();
        let mut ok = true;
        for_each_subset(n, mu, |rows| {
            if ok && !v.submatrix(rows, &cols).is_invertible() {
                ok = false;
            }
        });
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}
