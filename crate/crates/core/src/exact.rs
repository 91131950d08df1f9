//! Exact complex arithmetic over the rationals, for certifying determinants of
//! matrices whose entries are exactly representable.

use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::CMatrix;

/// `re + i im` with rational parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexRational {
    pub re: BigRational,
    pub im: BigRational,
}

impl ComplexRational {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        Self { re, im }
    }

    pub fn zero() -> Self {
        Self::new(BigRational::zero(), BigRational::zero())
    }

    pub fn one() -> Self {
        Self::new(BigRational::one(), BigRational::zero())
    }

    pub fn from_integers(re: i64, im: i64) -> Self {
        Self::new(BigRational::from_integer(BigInt::from(re)), BigRational::from_integer(BigInt::from(im)))
    }

    /// Exact value of a finite float pair.
    pub fn from_f64(re: f64, im: f64) -> Option<Self> {
        Some(Self::new(BigRational::from_float(re)?, BigRational::from_float(im)?))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    /// `|z|^2`.
    pub fn norm_sqr(&self) -> BigRational {
        &self.re * &self.re + &self.im * &self.im
    }

    /// `1 / z`, `None` for zero.
    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let d = self.norm_sqr();
        Some(Self::new(&self.re / &d, -&self.im / &d))
    }
}

impl Add for &ComplexRational {
    type Output = ComplexRational;
    fn add(self, o: &ComplexRational) -> ComplexRational {
        ComplexRational::new(&self.re + &o.re, &self.im + &o.im)
    }
}

impl Sub for &ComplexRational {
    type Output = ComplexRational;
    fn sub(self, o: &ComplexRational) -> ComplexRational {
        ComplexRational::new(&self.re - &o.re, &self.im - &o.im)
    }
}

impl Mul for &ComplexRational {
    type Output = ComplexRational;
    fn mul(self, o: &ComplexRational) -> ComplexRational {
        ComplexRational::new(&self.re * &o.re - &self.im * &o.im, &self.re * &o.im + &self.im * &o.re)
    }
}

impl Neg for ComplexRational {
    type Output = ComplexRational;
    fn neg(self) -> ComplexRational {
        ComplexRational::new(-self.re, -self.im)
    }
}

/// Determinant by Gaussian elimination, pivoting on the first nonzero entry.
pub fn determinant(mut m: Vec<Vec<ComplexRational>>) -> ComplexRational {
    let n = m.len();
    assert!(m.iter().all(|row| row.len() == n), "determinant needs a square matrix");
    let mut det = ComplexRational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return ComplexRational::zero();
        };
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        let inv = m[col][col].recip().expect("pivot is nonzero");
        det = &det * &m[col][col];
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest.iter_mut() {
            if row[col].is_zero() {
                continue;
            }
            let factor = &row[col] * &inv;
            for k in col..n {
                if !pivot_row[k].is_zero() {
                    row[k] = &row[k] - &(&factor * &pivot_row[k]);
                }
            }
        }
    }
    det
}

/// Exact determinant of a float matrix, reading every entry as the rational it
/// represents. `None` if an entry is not finite or the matrix is not square.
pub fn determinant_of(m: &CMatrix) -> Option<ComplexRational> {
    if m.nrows() != m.ncols() {
        return None;
    }
    let rows = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| ComplexRational::from_f64(m[(i, j)].re, m[(i, j)].im)).collect())
        .collect::<Option<Vec<Vec<_>>>>()?;
    Some(determinant(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn c(re: i64, im: i64) -> ComplexRational {
        ComplexRational::from_integers(re, im)
    }

    #[test]
    fn two_by_two() {
        // det [[1+i, 2], [3, 4-i]] = (1+i)(4-i) - 6 = 5 + 3i - 6 = -1 + 3i
        let d = determinant(vec![vec![c(1, 1), c(2, 0)], vec![c(3, 0), c(4, -1)]]);
        assert_eq!(d, c(-1, 3));
    }

    #[test]
    fn permutation_sign_and_singular() {
        let d = determinant(vec![vec![c(0, 0), c(1, 0)], vec![c(1, 0), c(0, 0)]]);
        assert_eq!(d, c(-1, 0));
        let d = determinant(vec![vec![c(1, 2), c(2, 4)], vec![c(3, 0), c(6, 0)]]);
        assert!(d.is_zero());
    }

    #[test]
    fn agrees_with_float_lu() {
        let m = CMatrix::from_fn(5, 5, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i + 2 * j) % 3) as f64));
        let exact = determinant_of(&m).unwrap();
        let float = m.clone().determinant();
        let re: f64 = num_traits::ToPrimitive::to_f64(&exact.re).unwrap();
        let im: f64 = num_traits::ToPrimitive::to_f64(&exact.im).unwrap();
        assert!((C64::new(re, im) - float).norm() < 1e-9 * (1.0 + float.norm()));
    }
}
