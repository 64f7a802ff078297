use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::Error;

/// Elementwise nonlinearities understood by the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
    Sin,
    Cos,
    /// Piecewise linear; usable for gradients only.
    Relu,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn has_second_derivative(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn id(self) -> u32 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
            Activation::Sin => 2,
            Activation::Cos => 3,
            Activation::Relu => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Some(match id {
            0 => Activation::Softplus,
            1 => Activation::Tanh,
            2 => Activation::Sin,
            3 => Activation::Cos,
            4 => Activation::Relu,
            _ => return None,
        })
    }

    /// Value, first and second derivative as expressions in `S`.
    pub fn eval<S: Scalar>(self, z: S) -> [S; 3] {
        match self {
            Activation::Softplus => {
                let (value, s) = if z.value() > 0.0 {
                    let e = (-z).exp();
                    (z + e.ln_1p(), (e + 1.0).recip())
                } else {
                    let e = z.exp();
                    (e.ln_1p(), e / (e + 1.0))
                };
                let s2 = s * (-s + 1.0);
                [value, s, s2]
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = -(t * t) + 1.0;
                [t, d1, t * d1 * -2.0]
            }
            Activation::Sin => {
                let (s, c) = (z.sin(), z.cos());
                [s, c, -s]
            }
            Activation::Cos => {
                let (s, c) = (z.sin(), z.cos());
                [c, -s, -c]
            }
            Activation::Relu => {
                if z.value() > 0.0 {
                    [z, z.lift(1.0), z.lift(0.0)]
                } else {
                    [z.lift(0.0), z.lift(0.0), z.lift(0.0)]
                }
            }
        }
    }

    /// Value and first three derivatives.
    #[inline]
    pub fn derivatives(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Softplus => {
                let value = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                let s = sigmoid(z);
                let s2 = s * (1.0 - s);
                [value, s, s2, s2 * (1.0 - 2.0 * s)]
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                [t, d1, -2.0 * t * d1, (6.0 * t * t - 2.0) * d1]
            }
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                [s, c, -s, -c]
            }
            Activation::Cos => {
                let (s, c) = z.sin_cos();
                [c, -s, -c, s]
            }
            Activation::Relu => {
                if z > 0.0 {
                    [z, 1.0, 0.0, 0.0]
                } else {
                    [0.0; 4]
                }
            }
        }
    }

    /// Value and first two derivatives.
    #[inline]
    pub fn derivatives2(self, z: f64) -> [f64; 3] {
        match self {
            Activation::Softplus => {
                let value = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                let s = sigmoid(z);
                [value, s, s * (1.0 - s)]
            }
            other => {
                let [a, b, c, _] = other.derivatives(z);
                [a, b, c]
            }
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
            Activation::Cos => z.cos(),
            Activation::Relu => z.max(0.0),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
            Activation::Cos => "cos",
            Activation::Relu => "relu",
        };
        f.write_str(name)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "softplus" => Activation::Softplus,
            "tanh" => Activation::Tanh,
            "sin" => Activation::Sin,
            "cos" => Activation::Cos,
            "relu" => Activation::Relu,
            other => return Err(Error::Unsupported(format!("activation `{other}`"))),
        })
    }
}
