//! Double-double complex arithmetic for the extended-precision Gram path.

use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use twofloat::TwoFloat;

#[derive(Clone, Copy, Debug)]
pub(crate) struct DdComplex {
    pub re: TwoFloat,
    pub im: TwoFloat,
}

impl DdComplex {
    pub const ZERO: Self = Self { re: TwoFloat::from_f64(0.0), im: TwoFloat::from_f64(0.0) };

    #[cfg(test)]
    pub fn from_c64(z: C64) -> Self {
        Self { re: TwoFloat::from_f64(z.re), im: TwoFloat::from_f64(z.im) }
    }

    /// `conj(a) * b` evaluated exactly into double-double.
    pub fn conj_mul_exact(a: C64, b: C64) -> Self {
        let re = TwoFloat::new_mul(a.re, b.re) + TwoFloat::new_mul(a.im, b.im);
        let im = TwoFloat::new_mul(a.re, b.im) - TwoFloat::new_mul(a.im, b.re);
        Self { re, im }
    }

    pub fn conj(self) -> Self {
        Self { re: self.re, im: -self.im }
    }

    pub fn scale(self, s: TwoFloat) -> Self {
        Self { re: self.re * s, im: self.im * s }
    }

    pub fn norm_sqr(self) -> TwoFloat {
        self.re * self.re + self.im * self.im
    }

    pub fn to_c64(self) -> C64 {
        C64::new(self.re.hi() + self.re.lo(), self.im.hi() + self.im.lo())
    }
}

impl Add for DdComplex {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, im: self.im + o.im }
    }
}

impl AddAssign for DdComplex {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for DdComplex {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Mul for DdComplex {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

/// Row-major square matrix of double-double complex numbers.
#[derive(Clone, Debug)]
pub(crate) struct DdMatrix {
    pub n: usize,
    pub data: Vec<DdComplex>,
}

impl DdMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![DdComplex::ZERO; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> DdComplex {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: DdComplex) {
        self.data[i * self.n + j] = v;
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).to_c64())
    }

    /// Averages with the conjugate transpose.
    pub fn hermitize(&mut self) {
        let half = TwoFloat::from_f64(0.5);
        for i in 0..self.n {
            for j in i..self.n {
                let a = self.get(i, j);
                let b = self.get(j, i).conj();
                let m = (a + b).scale(half);
                self.set(i, j, m);
                self.set(j, i, m.conj());
            }
        }
    }

    /// Lower Cholesky factor `L` with `G = L L^H`, or the index of the first
    /// non-positive pivot.
    pub fn cholesky(&self) -> Result<DdMatrix, usize> {
        let n = self.n;
        let mut l = DdMatrix::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if !(d.hi() > 0.0) {
                return Err(j);
            }
            let djj = d.sqrt();
            l.set(j, j, DdComplex { re: djj, im: TwoFloat::from_f64(0.0) });
            let inv = djj.recip();
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s.scale(inv));
            }
        }
        Ok(l)
    }

    /// Inverse of a lower-triangular matrix with real positive diagonal.
    pub fn lower_inverse(&self) -> DdMatrix {
        let n = self.n;
        let mut x = DdMatrix::zeros(n);
        for c in 0..n {
            for i in c..n {
                let mut s = if i == c {
                    DdComplex { re: TwoFloat::from_f64(1.0), im: TwoFloat::from_f64(0.0) }
                } else {
                    DdComplex::ZERO
                };
                for k in c..i {
                    s = s - self.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s.scale(self.get(i, i).re.recip()));
            }
        }
        x
    }
}
