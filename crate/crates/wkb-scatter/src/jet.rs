//! Fixed-order derivative arithmetic (truncated jets).
//!
//! A [`Jet`] carries a function value together with its first five
//! derivatives at a point. Because the coefficient fields in this crate are
//! piecewise polynomials of degree at most two, the seed jets are exact and
//! every quantity derived from them (roots, ratios, the WKB correction and
//! its recursion) is exact up to rounding.

use std::ops::{Add, Mul, Neg, Sub};

pub(crate) const JET_LEN: usize = 6;

/// Binomial coefficients C(n, k) for n, k < JET_LEN.
const BINOM: [[f64; JET_LEN]; JET_LEN] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0, 0.0],
    [1.0, 5.0, 10.0, 10.0, 5.0, 1.0],
];

/// Value and derivatives (d[k] = k-th derivative) of a scalar function at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Jet {
    pub d: [f64; JET_LEN],
}

impl Jet {
    /// Jet of a polynomial c0 + c1 x + c2 x^2 evaluated at `x`.
    pub fn quadratic(c0: f64, c1: f64, c2: f64, x: f64) -> Self {
        let mut d = [0.0; JET_LEN];
        d[0] = c0 + x * (c1 + x * c2);
        d[1] = c1 + 2.0 * c2 * x;
        d[2] = 2.0 * c2;
        Jet { d }
    }

    pub fn value(&self) -> f64 {
        self.d[0]
    }

    /// Jet of the derivative (shifts every slot down one order).
    pub fn shift(&self) -> Self {
        let mut d = [0.0; JET_LEN];
        for k in 0..JET_LEN - 1 {
            d[k] = self.d[k + 1];
        }
        Jet { d }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut d = self.d;
        for v in d.iter_mut() {
            *v *= s;
        }
        Jet { d }
    }

    /// Quotient self / g via the Leibniz recurrence.
    pub fn div(&self, g: &Jet) -> Self {
        let mut q = [0.0; JET_LEN];
        for n in 0..JET_LEN {
            let mut acc = self.d[n];
            for k in 0..n {
                acc -= BINOM[n][k] * q[k] * g.d[n - k];
            }
            q[n] = acc / g.d[0];
        }
        Jet { d: q }
    }

    /// Square root via s^2 = f, valid for a strictly positive value slot.
    pub fn sqrt(&self) -> Self {
        let mut s = [0.0; JET_LEN];
        s[0] = self.d[0].sqrt();
        for n in 1..JET_LEN {
            let mut acc = self.d[n];
            for k in 1..n {
                acc -= BINOM[n][k] * s[k] * s[n - k];
            }
            s[n] = acc / (2.0 * s[0]);
        }
        Jet { d: s }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let mut d = self.d;
        for (v, r) in d.iter_mut().zip(rhs.d.iter()) {
            *v += r;
        }
        Jet { d }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        let mut d = self.d;
        for (v, r) in d.iter_mut().zip(rhs.d.iter()) {
            *v -= r;
        }
        Jet { d }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut d = [0.0; JET_LEN];
        for n in 0..JET_LEN {
            let mut acc = 0.0;
            for k in 0..=n {
                acc += BINOM[n][k] * self.d[k] * rhs.d[n - k];
            }
            d[n] = acc;
        }
        Jet { d }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
