//! Double-double arithmetic (an unevaluated sum `hi + lo` of two `f64`s,
//! roughly 106 significant bits) and the [`Real`] abstraction the reference
//! model evaluator is generic over.
//!
//! Used to evaluate finite-difference oracles with rounding noise far below
//! what central differences in plain `f64` can resolve.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar field operations needed by the reference evaluator.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }

    fn normalized(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Exact multiplication by a power of two.
    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self::new(v)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::normalized(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        Self::normalized(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * Self::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::new(q2);
        let q3 = r.hi / o.hi;
        Self::normalized(q1, q2) + Self::new(q3)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::new(0.0);
        }
        // x = k ln2 + r, then exp(r) = exp(r / 32)^32.
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Self::new(k)).ldexp(-5);
        let mut term = Self::new(1.0);
        let mut sum = Self::new(1.0);
        for n in 1..=16 {
            term = term * r / Self::new(n as f64);
            sum = sum + term;
        }
        for _ in 0..5 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(f64::NAN);
        }
        // Two Newton steps on exp(y) = x from the f64 estimate.
        let mut y = Self::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::new(1.0);
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(0.0);
        }
        let s = Self::new(self.hi.sqrt());
        s + (self - s * s) / (s + s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd_err(a: DoubleDouble, b: DoubleDouble) -> f64 {
        let d = a - b;
        (d.hi + d.lo).abs()
    }

    #[test]
    fn captures_what_f64_drops() {
        let one = DoubleDouble::new(1.0);
        let tiny = DoubleDouble::new(1e-20);
        let d = (one + tiny) - one;
        assert_eq!(d.to_f64(), 1e-20);
    }

    #[test]
    fn division_round_trips() {
        let a = DoubleDouble::new(1.0) / DoubleDouble::new(3.0);
        assert!(dd_err(a * DoubleDouble::new(3.0), DoubleDouble::new(1.0)) < 1e-31);
    }

    #[test]
    fn sqrt_two_squared() {
        let s = DoubleDouble::new(2.0).sqrt();
        assert!(dd_err(s * s, DoubleDouble::new(2.0)) < 1e-30);
    }

    #[test]
    fn exp_one_matches_known_expansion() {
        let e = DoubleDouble::new(1.0).exp();
        let known = DoubleDouble {
            hi: std::f64::consts::E,
            lo: 1.445_646_891_729_250_2e-16,
        };
        assert!(dd_err(e, known) < 1e-28, "{e:?}");
    }

    #[test]
    fn ln_inverts_exp() {
        for &x in &[-20.0, -3.7, -0.3, 0.0, 1e-7, 0.5, 2.0, 30.0] {
            let v = DoubleDouble::new(x);
            let back = v.exp().ln();
            assert!(dd_err(back, v) < 1e-28 * x.abs().max(1.0), "{x}: {back:?}");
        }
        assert!(dd_err(DoubleDouble::new(2.0).ln(), LN2) < 1e-31);
    }

    #[test]
    fn agrees_with_f64_to_rounding() {
        for &x in &[-5.0, -0.25, 0.125, 3.0] {
            let d = DoubleDouble::new(x);
            assert!((d.exp().to_f64() - x.exp()).abs() <= 2.0 * f64::EPSILON * x.exp());
        }
    }
}
