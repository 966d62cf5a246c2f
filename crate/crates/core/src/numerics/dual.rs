//! Forward-mode differentiation.
//!
//! [`Dual`] carries a value and one tangent per seeded direction, giving a
//! full gradient in a single pass. [`Hyper`] additionally carries the
//! second-order term, so one evaluation yields value, gradient and hessian
//! (forward-over-forward). Code written against [`Real`] runs unchanged on
//! `f64`, `Dual` and `Hyper`.
//!
//! An empty tangent vector stands for zero, so constants never need to know
//! how many directions are being tracked.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::special;

/// Scalar type usable in user-defined losses and targets.
pub trait Real:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value()`.
    fn chain(&self, f: f64, df: f64, d2f: f64) -> Self;

    fn exp(&self) -> Self {
        let e = self.value().exp();
        self.chain(e, e, e)
    }

    fn ln(&self) -> Self {
        let v = self.value();
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    fn tanh(&self) -> Self {
        let t = self.value().tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    /// `max(0, x)` with derivative 0 at exactly 0.
    fn relu(&self) -> Self {
        let v = self.value();
        if v > 0.0 {
            self.chain(v, 1.0, 0.0)
        } else {
            self.chain(0.0, 0.0, 0.0)
        }
    }

    fn recip(&self) -> Self {
        let v = self.value();
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    fn sqrt(&self) -> Self {
        let s = self.value().sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }

    fn square(&self) -> Self {
        let v = self.value();
        self.chain(v * v, 2.0 * v, 2.0)
    }

    fn powi(&self, n: i32) -> Self {
        let v = self.value();
        let nf = f64::from(n);
        let d1 = if n == 0 { 0.0 } else { nf * v.powi(n - 1) };
        let d2 = if n <= 1 { 0.0 } else { nf * (nf - 1.0) * v.powi(n - 2) };
        self.chain(v.powi(n), d1, d2)
    }

    fn sin(&self) -> Self {
        let v = self.value();
        self.chain(v.sin(), v.cos(), -v.sin())
    }

    fn cos(&self) -> Self {
        let v = self.value();
        self.chain(v.cos(), -v.sin(), -v.cos())
    }

    /// Standard normal distribution function Φ.
    fn norm_cdf(&self) -> Self {
        let v = self.value();
        let p = special::norm_pdf(v);
        self.chain(special::norm_cdf(v), p, -v * p)
    }

    /// Standard normal density φ.
    fn norm_pdf(&self) -> Self {
        let v = self.value();
        let p = special::norm_pdf(v);
        self.chain(p, -v * p, (v * v - 1.0) * p)
    }

    fn logistic(&self) -> Self {
        let g = special::logistic(self.value());
        let d = g * (1.0 - g);
        self.chain(g, d, d * (1.0 - 2.0 * g))
    }

    fn softplus(&self) -> Self {
        let v = self.value();
        let g = special::logistic(v);
        self.chain(special::softplus(v), g, g * (1.0 - g))
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn chain(&self, f: f64, _df: f64, _d2f: f64) -> Self {
        f
    }
}

/// First-order dual number with a vector of tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub tangents: Vec<f64>,
}

impl Dual {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            tangents: Vec::new(),
        }
    }

    /// Independent variable `index` out of `n` seeded directions.
    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut tangents = vec![0.0; n];
        tangents[index] = 1.0;
        Self { value, tangents }
    }

    /// Seeds every entry of `point` as its own direction.
    pub fn seed(point: &[f64]) -> Vec<Dual> {
        let n = point.len();
        point
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::variable(v, i, n))
            .collect()
    }

    pub fn tangent(&self, i: usize) -> f64 {
        self.tangents.get(i).copied().unwrap_or(0.0)
    }

    /// Tangents padded to length `n`.
    pub fn gradient(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.tangent(i)).collect()
    }
}

fn zip_lin(a: &[f64], ca: f64, b: &[f64], cb: f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| ca * a.get(i).copied().unwrap_or(0.0) + cb * b.get(i).copied().unwrap_or(0.0))
        .collect()
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn chain(&self, f: f64, df: f64, _d2f: f64) -> Self {
        Dual {
            value: f,
            tangents: self.tangents.iter().map(|t| df * t).collect(),
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value + rhs.value,
            tangents: zip_lin(&self.tangents, 1.0, &rhs.tangents, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value - rhs.value,
            tangents: zip_lin(&self.tangents, 1.0, &rhs.tangents, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value * rhs.value,
            tangents: zip_lin(&self.tangents, rhs.value, &rhs.tangents, self.value),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Dual) -> Dual {
        self * rhs.recip()
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self * -1.0
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(mut self, rhs: f64) -> Dual {
        self.value *= rhs;
        self.tangents.iter_mut().for_each(|t| *t *= rhs);
        self
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        self * (1.0 / rhs)
    }
}

/// Second-order forward number: value, gradient and hessian with respect to
/// the seeded directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub value: f64,
    /// Length `n`, or empty for a constant.
    pub grad: Vec<f64>,
    /// Row-major `n × n`, or empty for a constant.
    pub hess: Vec<f64>,
}

impl Hyper {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[index] = 1.0;
        Self {
            value,
            grad,
            hess: vec![0.0; n * n],
        }
    }

    pub fn seed(point: &[f64]) -> Vec<Hyper> {
        let n = point.len();
        point
            .iter()
            .enumerate()
            .map(|(i, &v)| Hyper::variable(v, i, n))
            .collect()
    }

    pub fn gradient(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.grad.get(i).copied().unwrap_or(0.0)).collect()
    }

    pub fn hessian(&self, n: usize) -> Vec<f64> {
        if self.hess.is_empty() {
            vec![0.0; n * n]
        } else {
            self.hess.clone()
        }
    }

    fn dim(&self) -> usize {
        self.grad.len()
    }
}

fn outer_sym_add(h: &mut [f64], a: &[f64], b: &[f64], n: usize) {
    // h += a bᵀ + b aᵀ, with missing vectors treated as zero
    if a.is_empty() || b.is_empty() {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += a[i] * b[j] + b[i] * a[j];
        }
    }
}

impl Real for Hyper {
    fn from_f64(v: f64) -> Self {
        Hyper::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn chain(&self, f: f64, df: f64, d2f: f64) -> Self {
        let n = self.dim();
        if n == 0 {
            return Hyper::constant(f);
        }
        let grad = self.grad.iter().map(|g| df * g).collect();
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let base = if self.hess.is_empty() { 0.0 } else { self.hess[i * n + j] };
                hess[i * n + j] = df * base + d2f * self.grad[i] * self.grad[j];
            }
        }
        Hyper { value: f, grad, hess }
    }
}

impl Add for Hyper {
    type Output = Hyper;
    fn add(self, rhs: Hyper) -> Hyper {
        Hyper {
            value: self.value + rhs.value,
            grad: zip_lin(&self.grad, 1.0, &rhs.grad, 1.0),
            hess: zip_lin(&self.hess, 1.0, &rhs.hess, 1.0),
        }
    }
}

impl Sub for Hyper {
    type Output = Hyper;
    fn sub(self, rhs: Hyper) -> Hyper {
        Hyper {
            value: self.value - rhs.value,
            grad: zip_lin(&self.grad, 1.0, &rhs.grad, -1.0),
            hess: zip_lin(&self.hess, 1.0, &rhs.hess, -1.0),
        }
    }
}

impl Mul for Hyper {
    type Output = Hyper;
    fn mul(self, rhs: Hyper) -> Hyper {
        let n = self.dim().max(rhs.dim());
        let grad = zip_lin(&self.grad, rhs.value, &rhs.grad, self.value);
        let mut hess = zip_lin(&self.hess, rhs.value, &rhs.hess, self.value);
        if n > 0 && !self.grad.is_empty() && !rhs.grad.is_empty() {
            if hess.is_empty() {
                hess = vec![0.0; n * n];
            }
            outer_sym_add(&mut hess, &self.grad, &rhs.grad, n);
        }
        Hyper {
            value: self.value * rhs.value,
            grad,
            hess,
        }
    }
}

impl Div for Hyper {
    type Output = Hyper;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Hyper) -> Hyper {
        self * rhs.recip()
    }
}

impl Neg for Hyper {
    type Output = Hyper;
    fn neg(self) -> Hyper {
        self * -1.0
    }
}

impl Add<f64> for Hyper {
    type Output = Hyper;
    fn add(mut self, rhs: f64) -> Hyper {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Hyper {
    type Output = Hyper;
    fn sub(mut self, rhs: f64) -> Hyper {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Hyper {
    type Output = Hyper;
    fn mul(mut self, rhs: f64) -> Hyper {
        self.value *= rhs;
        self.grad.iter_mut().for_each(|g| *g *= rhs);
        self.hess.iter_mut().for_each(|h| *h *= rhs);
        self
    }
}

impl Div<f64> for Hyper {
    type Output = Hyper;
    fn div(self, rhs: f64) -> Hyper {
        self * (1.0 / rhs)
    }
}

/// Gradient of a scalar function by one forward pass.
pub fn dual_gradient<F>(f: F, point: &[f64]) -> (f64, Vec<f64>)
where
    F: Fn(&[Dual]) -> Dual,
{
    let out = f(&Dual::seed(point));
    (out.value, out.gradient(point.len()))
}

/// Value, gradient and row-major hessian by one second-order forward pass.
pub fn hyper_hessian<F>(f: F, point: &[f64]) -> (f64, Vec<f64>, Vec<f64>)
where
    F: Fn(&[Hyper]) -> Hyper,
{
    let n = point.len();
    let out = f(&Hyper::seed(point));
    (out.value, out.gradient(n), out.hessian(n))
}
