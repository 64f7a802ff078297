//! Truncated Taylor coefficients carried along a set of coordinate directions.
//!
//! A [`Jet`] holds `f`, `∂f/∂x_k` and `∂²f/∂x_k²` for every direction `k`.
//! Pure second derivatives of a composition only need the first and second
//! coefficients of its arguments along the same direction, so the Hessian
//! diagonal propagates at the cost of a few extra forward channels.

use super::{Activation, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<S> {
    pub value: S,
    pub d1: Vec<S>,
    pub d2: Vec<S>,
}

impl<S: Scalar> Jet<S> {
    pub fn constant(value: S, dirs: usize) -> Self {
        let zero = value.lift(0.0);
        Jet {
            value,
            d1: vec![zero; dirs],
            d2: vec![zero; dirs],
        }
    }

    /// An independent coordinate seeded along direction `dir` (if any).
    pub fn variable(value: S, dirs: usize, dir: Option<usize>) -> Self {
        let mut j = Jet::constant(value, dirs);
        if let Some(k) = dir {
            j.d1[k] = value.lift(1.0);
        }
        j
    }

    pub fn dirs(&self) -> usize {
        self.d1.len()
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value`.
    pub fn chain(&self, f: S, f1: S, f2: S) -> Self {
        let d1 = self.d1.iter().map(|&a| f1 * a).collect();
        let d2 = self
            .d1
            .iter()
            .zip(&self.d2)
            .map(|(&a1, &a2)| f2 * a1 * a1 + f1 * a2)
            .collect();
        Jet { value: f, d1, d2 }
    }

    pub fn add(&self, o: &Self) -> Self {
        Jet {
            value: self.value + o.value,
            d1: zip_with(&self.d1, &o.d1, |a, b| a + b),
            d2: zip_with(&self.d2, &o.d2, |a, b| a + b),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Jet {
            value: self.value - o.value,
            d1: zip_with(&self.d1, &o.d1, |a, b| a - b),
            d2: zip_with(&self.d2, &o.d2, |a, b| a - b),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (u, v) = (self.value, o.value);
        let d1 = zip_with(&self.d1, &o.d1, |a, b| a * v + u * b);
        let d2 = (0..self.dirs())
            .map(|k| self.d2[k] * v + self.d1[k] * o.d1[k] * 2.0 + u * o.d2[k])
            .collect();
        Jet {
            value: u * v,
            d1,
            d2,
        }
    }

    pub fn scale(&self, c: S) -> Self {
        Jet {
            value: self.value * c,
            d1: self.d1.iter().map(|&a| a * c).collect(),
            d2: self.d2.iter().map(|&a| a * c).collect(),
        }
    }

    pub fn add_scalar(&self, c: S) -> Self {
        Jet {
            value: self.value + c,
            d1: self.d1.clone(),
            d2: self.d2.clone(),
        }
    }

    pub fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        let f1 = (r * 2.0).recip();
        let f2 = -f1 / (self.value * 2.0);
        self.chain(r, f1, f2)
    }

    pub fn recip(&self) -> Self {
        let r = self.value.recip();
        let f1 = -(r * r);
        let f2 = r * r * r * 2.0;
        self.chain(r, f1, f2)
    }

    pub fn div(&self, o: &Self) -> Self {
        self.mul(&o.recip())
    }

    pub fn activate(&self, act: Activation) -> Self {
        let [f, f1, f2] = act.eval(self.value);
        self.chain(f, f1, f2)
    }

    /// Larger argument; ties go to `self`.
    pub fn max(&self, o: &Self) -> Self {
        if self.value.value() >= o.value.value() {
            self.clone()
        } else {
            o.clone()
        }
    }

    /// Smaller argument; ties go to `self`.
    pub fn min(&self, o: &Self) -> Self {
        if self.value.value() <= o.value.value() {
            self.clone()
        } else {
            o.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.value().is_finite()
            && self.d1.iter().all(|x| x.value().is_finite())
            && self.d2.iter().all(|x| x.value().is_finite())
    }
}

fn zip_with<S: Copy>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
