//! Second-order jets and the scalar-field abstraction shared by the network
//! and the closed-form fields used for oracle tests.

use std::ops::{Add, Mul, Neg, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of a jet a batch evaluation must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetOrder {
    Value,
    Gradient,
    Hessian,
}

/// Value, spatial gradient and spatial Hessian of a field at one point.
///
/// Only the leading `dim` entries of `grad` and the leading `dim x dim`
/// block of `hess` are meaningful; the rest stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub dim: usize,
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl Jet {
    pub fn constant(dim: usize, value: f64) -> Self {
        Jet {
            dim,
            value,
            grad: [0.0; 3],
            hess: [[0.0; 3]; 3],
        }
    }

    /// The coordinate function `x_axis` evaluated at `x`.
    pub fn variable(x: &[f64], axis: usize) -> Self {
        let mut j = Jet::constant(x.len(), x[axis]);
        j.grad[axis] = 1.0;
        j
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad[..self.dim]
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn hess_det(&self) -> f64 {
        crate::graddiff::det_and_derivative(&self.hess, self.dim).0
    }

    pub fn hess_trace(&self) -> f64 {
        (0..self.dim).map(|i| self.hess[i][i]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().flatten().all(|h| h.is_finite())
    }

    /// Applies a scalar function given its value and first two derivatives at `self.value`.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet {
        let d = self.dim;
        let mut out = Jet::constant(d, f);
        for i in 0..d {
            out.grad[i] = df * self.grad[i];
            for j in 0..d {
                out.hess[i][j] = df * self.hess[i][j] + d2f * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(&self) -> Jet {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.value))
    }

    pub fn scale(&self, k: f64) -> Jet {
        self.chain(k * self.value, k, 0.0)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.value += o.value;
        for i in 0..3 {
            self.grad[i] += o.grad[i];
            for j in 0..3 {
                self.hess[i][j] += o.hess[i][j];
            }
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.value += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.value -= c;
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let d = self.dim;
        let mut out = Jet::constant(d, self.value * o.value);
        for i in 0..d {
            out.grad[i] = self.value * o.grad[i] + o.value * self.grad[i];
            for j in 0..d {
                out.hess[i][j] = self.value * o.hess[i][j]
                    + o.value * self.hess[i][j]
                    + self.grad[i] * o.grad[j]
                    + o.grad[i] * self.grad[j];
            }
        }
        out
    }
}

/// Anything that can produce jets at points of R^d.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;

    fn jet(&self, x: &[f64]) -> Result<Jet>;

    /// Evaluates jets at flat points `xs` (`dim` values each), in input order.
    /// Fields computed at a lower `order` leave the higher parts zero.
    fn jets(&self, xs: &[f64], order: JetOrder) -> Result<Vec<Jet>> {
        let _ = order;
        let d = self.dim();
        xs.par_chunks(d).map(|x| self.jet(x)).collect()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.jet(x)?.value)
    }
}

/// Closed-form fields with exact jets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticField {
    /// Signed distance to a sphere (d = 3).
    Sphere { center: [f64; 3], radius: f64 },
    /// Signed distance to a circle (d = 2).
    Circle { center: [f64; 2], radius: f64 },
    /// Signed distance to a torus around the z axis.
    Torus { major: f64, minor: f64 },
    /// `a . x + b`.
    Affine { a: Vec<f64>, b: f64 },
    /// `sum x_i^2`.
    Paraboloid { dim: usize },
    /// `x^2 - y^2`.
    Saddle,
    /// `sin x * sin y`.
    SinProduct,
}

impl AnalyticField {
    pub fn unit_sphere() -> Self {
        AnalyticField::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        }
    }

    pub fn unit_circle() -> Self {
        AnalyticField::Circle {
            center: [0.0; 2],
            radius: 1.0,
        }
    }

    /// Points on the zero set, roughly uniformly spread. Only the distance
    /// fields have a natural surface; other fields return an error.
    pub fn surface_samples(&self, n: usize) -> Result<Vec<f64>> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut out = Vec::with_capacity(3 * n);
        match self {
            AnalyticField::Circle { center, radius } => {
                for i in 0..n {
                    let t = std::f64::consts::TAU * i as f64 / n as f64;
                    out.extend([center[0] + radius * t.cos(), center[1] + radius * t.sin()]);
                }
            }
            AnalyticField::Sphere { center, radius } => {
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    out.extend([
                        center[0] + radius * r * t.cos(),
                        center[1] + radius * r * t.sin(),
                        center[2] + radius * z,
                    ]);
                }
            }
            AnalyticField::Torus { major, minor } => {
                for i in 0..n {
                    let u = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
                    let v = golden * i as f64;
                    let rho = major + minor * v.cos();
                    out.extend([rho * u.cos(), rho * u.sin(), minor * v.sin()]);
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "field has no sampled surface".into(),
                ))
            }
        }
        Ok(out)
    }
}

impl ScalarField for AnalyticField {
    fn dim(&self) -> usize {
        match self {
            AnalyticField::Sphere { .. } | AnalyticField::Torus { .. } => 3,
            AnalyticField::Circle { .. } | AnalyticField::Saddle | AnalyticField::SinProduct => 2,
            AnalyticField::Affine { a, .. } => a.len(),
            AnalyticField::Paraboloid { dim } => *dim,
        }
    }

    fn jet(&self, x: &[f64]) -> Result<Jet> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::InvalidArgument(format!(
                "expected a {d}-vector, got {} values",
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "query coordinate",
                index: i,
            });
        }
        let v = |i| Jet::variable(x, i);
        let norm_from = |c: &[f64]| {
            (0..d)
                .map(|i| {
                    let t = v(i) - c[i];
                    t * t
                })
                .reduce(|a, b| a + b)
                .unwrap()
                .sqrt()
        };
        Ok(match self {
            AnalyticField::Sphere { center, radius } => norm_from(center) - *radius,
            AnalyticField::Circle { center, radius } => norm_from(center) - *radius,
            AnalyticField::Torus { major, minor } => {
                let rho = (v(0) * v(0) + v(1) * v(1)).sqrt() - *major;
                (rho * rho + v(2) * v(2)).sqrt() - *minor
            }
            AnalyticField::Affine { a, b } => {
                let mut j = Jet::constant(d, *b);
                for i in 0..d {
                    j = j + v(i).scale(a[i]);
                }
                j
            }
            AnalyticField::Paraboloid { .. } => (0..d).map(|i| v(i) * v(i)).reduce(|a, b| a + b).unwrap(),
            AnalyticField::Saddle => v(0) * v(0) - v(1) * v(1),
            AnalyticField::SinProduct => v(0).sin() * v(1).sin(),
        })
    }
}
