//! Minimal double-double arithmetic (about 106 significand bits), enough to
//! run finite differences far below `f64` round-off.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn ldexp(self, e: i32) -> Self {
        let s = 2f64.powi(e);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 700.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - Dd::LN2 * Dd::new(k)).ldexp(-10);
        // Taylor series of exp(r) - 1 for |r| < 4e-4
        let mut term = r;
        let mut sum = r;
        for n in 2..30 {
            term = term * r / Dd::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = 2s + s^2 keeps the small part exact while squaring
        for _ in 0..10 {
            sum = sum * Dd::new(2.0) + sum * sum;
        }
        (sum + Dd::ONE).ldexp(k as i32)
    }

    pub fn sigmoid(self) -> Self {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }

    pub fn tanh(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).tanh();
        }
        let e = (self * Dd::new(-2.0)).exp();
        (Dd::ONE - e) / (Dd::ONE + e)
    }

    pub fn relu(self) -> Self {
        if self.hi > 0.0 {
            self
        } else {
            Dd::ZERO
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, o.hi);
        let p2 = p2 + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

#[allow(dead_code)]
pub fn self_check() -> Result<(), String> {
    let third = Dd::ONE / Dd::new(3.0);
    let back = third * Dd::new(3.0) - Dd::ONE;
    if back.to_f64().abs() > 1e-31 {
        return Err(format!("1/3*3-1 = {:e}", back.to_f64()));
    }
    // exp(1) to 32 digits: 2.7182818284590452353602874713527
    let e = Dd::ONE.exp();
    let err = (e - Dd { hi: std::f64::consts::E, lo: 1.445_646_891_729_250_2e-16 }).to_f64();
    if err.abs() > 1e-29 {
        return Err(format!("exp(1) off by {err:e}"));
    }
    for x in [-3.0, -0.5, 0.25, 2.0] {
        if (Dd::new(x).tanh().to_f64() - f64::tanh(x)).abs() > 1e-15 {
            return Err(format!("tanh({x})"));
        }
    }
    Ok(())
}
