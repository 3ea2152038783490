//! Double-double transcendental functions accurate to roughly 1e-28.
//!
//! `twofloat`'s own `exp` is only good to about 1e-11 relative and its
//! double-double division to about 1e-17; these replace them on the
//! finite-difference path. Its addition and multiplication are exact enough.

use num_traits::Float;
use twofloat::consts::LN_2;
use twofloat::TwoFloat;

use super::Real;

/// Halvings applied to the reduced argument before the Taylor series.
const HALVINGS: i32 = 10;
const TAYLOR_TERMS: usize = 18;

pub fn exp(x: TwoFloat) -> TwoFloat {
    if x.hi() < -745.0 {
        return TwoFloat::from(0.0);
    }
    if x.hi() > 709.0 {
        return TwoFloat::from(f64::INFINITY);
    }
    // x = k ln 2 + r, |r| <= ln 2 / 2
    let k = (x.hi() / LN_2.hi()).round();
    let r = (x - LN_2 * k) * 0.5f64.powi(HALVINGS);
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=TAYLOR_TERMS {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

pub fn ln(x: TwoFloat) -> TwoFloat {
    if x.hi() <= 0.0 {
        return TwoFloat::from(if x.hi() == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
    }
    if !x.hi().is_finite() {
        return x;
    }
    // Newton on exp(y) = x; each step doubles the correct digits
    let mut y = TwoFloat::from(x.hi().ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

/// Three-term long division; each quotient digit is exact in `f64`.
pub fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

pub fn tanh(x: TwoFloat) -> TwoFloat {
    let a = x.abs();
    let e = exp(a * -2.0);
    let t = div(TwoFloat::from(1.0) - e, TwoFloat::from(1.0) + e);
    if x.hi() < 0.0 {
        -t
    } else {
        t
    }
}

impl Real for TwoFloat {
    fn from_f64(x: f64) -> Self {
        TwoFloat::from(x)
    }
    fn as_f64(self) -> f64 {
        self.hi()
    }
    fn exp_fn(self) -> Self {
        exp(self)
    }
    fn ln_fn(self) -> Self {
        ln(self)
    }
    fn tanh_fn(self) -> Self {
        tanh(self)
    }
    fn div_fn(self, rhs: Self) -> Self {
        div(self, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> TwoFloat {
        TwoFloat::from(x)
    }

    #[test]
    fn exp_identities_hold_to_double_double_precision() {
        for &x in &[0.3, -1.7, 2.5, -0.01, 5.0, -20.0, 0.0] {
            let prod = exp(dd(x)) * exp(dd(-x)) - 1.0;
            assert!(prod.hi().abs() < 1e-28, "x={x}: {prod:?}");
            let back = ln(exp(dd(x))) - dd(x);
            assert!(back.hi().abs() < 1e-28 * x.abs().max(1.0), "x={x}: {back:?}");
        }
        let e = exp(dd(1.0));
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let diff = (e - TwoFloat::new_add(std::f64::consts::E, 1.445_646_891_729_250_2e-16)).hi();
        assert!(diff.abs() < 1e-28, "{diff:e} {e:?}");
    }

    #[test]
    fn agrees_with_f64_libm() {
        for &x in &[0.3f64, -1.7, 2.5, 7.25] {
            assert!((exp(dd(x)).hi() - x.exp()).abs() <= 2.0 * f64::EPSILON * x.exp());
            assert!((ln(dd(x.abs())).hi() - x.abs().ln()).abs() <= 2.0 * f64::EPSILON);
            assert!((tanh(dd(x)).hi() - x.tanh()).abs() <= 2.0 * f64::EPSILON);
        }
        assert_eq!(exp(dd(-800.0)).hi(), 0.0);
        assert_eq!(ln(dd(0.0)).hi(), f64::NEG_INFINITY);
    }

    #[test]
    fn division_round_trips() {
        for &(a, b) in &[(1.0, 3.0), (0.7, 1.3), (-2.5, 1e-3), (1e10, -7.0)] {
            let q = div(dd(a), dd(b));
            let back = q * dd(b) - dd(a);
            assert!(back.hi().abs() < 1e-30 * a.abs(), "{a}/{b}: {back:?}");
        }
    }

    #[test]
    fn tanh_is_odd_and_saturates() {
        let t = tanh(dd(0.4)) + tanh(dd(-0.4));
        assert_eq!(t.hi(), 0.0);
        assert_eq!(tanh(dd(400.0)).hi(), 1.0);
    }
}
