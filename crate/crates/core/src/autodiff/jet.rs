//! Second-order univariate Taylor jets.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value with its first and second derivative along one input coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl JetValue {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0, 0.0)
    }

    /// The independent variable itself.
    pub const fn variable(value: f64) -> Self {
        Self::new(value, 1.0, 0.0)
    }

    /// Applies a scalar function given its value and first two derivatives at `self.value`.
    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Self {
            value: f,
            d1: df * self.d1,
            d2: df * self.d2 + d2f * self.d1 * self.d1,
        }
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let v = self.value;
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn powi(self, p: i32) -> Self {
        let v = self.value;
        let pf = p as f64;
        let d1 = if p == 0 { 0.0 } else { pf * v.powi(p - 1) };
        let d2 = if p == 0 || p == 1 {
            0.0
        } else {
            pf * (pf - 1.0) * v.powi(p - 2)
        };
        self.chain(v.powi(p), d1, d2)
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(self.value * c, self.d1 * c, self.d2 * c)
    }
}

impl Add for JetValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for JetValue {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Mul for JetValue {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )
    }
}

impl Div for JetValue {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        // a / b = a * (1/b), with 1/b expanded through the chain rule
        let inv = o.chain(1.0 / o.value, -1.0 / (o.value * o.value), 2.0 / o.value.powi(3));
        self * inv
    }
}

impl Neg for JetValue {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Add<f64> for JetValue {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        Self::new(self.value + c, self.d1, self.d2)
    }
}

impl Mul<f64> for JetValue {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}
