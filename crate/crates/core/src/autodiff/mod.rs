//! Differentiation engine.
//!
//! Input gradients and Hessian diagonals come from forward propagation of
//! [`Jet`]s, one direction per coordinate of the requested input block.
//! Parameter gradients of losses that contain those derivatives come from a
//! reverse sweep over the jet propagation itself: either a scalar [`Tape`]
//! (generic programs) or the batched kernels in [`dense`].

mod activation;
pub mod dense;
mod jet;
mod program;
mod scalar;
mod tape;

use std::ops::Range;

pub use activation::Activation;
pub use jet::Jet;
pub use program::{NodeId, Program, ProgramBuilder};
pub use scalar::Scalar;
pub use tape::{Adjoints, Tape, Var};

use crate::error::{Error, Result};

/// Value, gradient and (optionally) pure second derivatives over an input block.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffBundle {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess_diag: Option<Vec<f64>>,
}

impl DiffBundle {
    pub fn laplacian(&self) -> Option<f64> {
        self.hess_diag.as_ref().map(|h| h.iter().sum())
    }
}

/// Anything that can push jets from its inputs to a scalar output.
pub trait JetProgram {
    fn input_len(&self) -> usize;

    /// Whether every nonlinearity exposes a second derivative.
    fn supports_second_order(&self) -> bool {
        true
    }

    /// Output jet with one direction per index of `block`. When
    /// `second_order` is false the `d2` entries may be left as zeros.
    fn jet(&self, inputs: &[f64], block: Range<usize>, second_order: bool) -> Result<Jet<f64>>;
}

fn check_call<P: JetProgram + ?Sized>(p: &P, inputs: &[f64], block: &Range<usize>) -> Result<()> {
    if inputs.len() != p.input_len() {
        return Err(Error::DimensionMismatch {
            expected: p.input_len(),
            got: inputs.len(),
        });
    }
    if block.end > inputs.len() || block.start > block.end {
        return Err(Error::Shape(format!(
            "block {block:?} outside {} inputs",
            inputs.len()
        )));
    }
    if let Some(i) = inputs.iter().position(|x| !x.is_finite()) {
        return Err(Error::non_finite(format!("input {i}")));
    }
    Ok(())
}

pub fn value_grad<P: JetProgram + ?Sized>(p: &P, inputs: &[f64], block: Range<usize>) -> Result<DiffBundle> {
    check_call(p, inputs, &block)?;
    let jet = p.jet(inputs, block, false)?;
    if !(jet.value.is_finite() && jet.d1.iter().all(|x| x.is_finite())) {
        return Err(Error::non_finite("value_grad output"));
    }
    Ok(DiffBundle {
        value: jet.value,
        grad: jet.d1,
        hess_diag: None,
    })
}

pub fn value_grad_laplacian<P: JetProgram + ?Sized>(
    p: &P,
    inputs: &[f64],
    block: Range<usize>,
) -> Result<DiffBundle> {
    if !p.supports_second_order() {
        return Err(Error::Unsupported(
            "program contains a nonlinearity without a second derivative".into(),
        ));
    }
    check_call(p, inputs, &block)?;
    let jet = p.jet(inputs, block, true)?;
    if !jet.is_finite() {
        return Err(Error::non_finite("value_grad_laplacian output"));
    }
    Ok(DiffBundle {
        value: jet.value,
        grad: jet.d1,
        hess_diag: Some(jet.d2),
    })
}

/// Parameter gradient accumulators, aligned with a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTape {
    grads: Vec<f64>,
}

impl ParamTape {
    pub fn zeros(n: usize) -> Self {
        ParamTape { grads: vec![0.0; n] }
    }

    pub fn from_vec(grads: Vec<f64>) -> Self {
        ParamTape { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, c: f64) {
        self.grads.iter_mut().for_each(|g| *g *= c);
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Fails on the first non-finite entry, naming the batch and index.
    pub fn check_finite(&self, batch: usize) -> Result<()> {
        match self.grads.iter().position(|g| !g.is_finite()) {
            Some(index) => Err(Error::NonFiniteGradient { batch, index }),
            None => Ok(()),
        }
    }
}

/// Gradient of `Σ_samples loss(jet(sample), sample)` with respect to the
/// program parameters. `loss` sees the output jet over `block`, including
/// the Hessian diagonal, so losses built from input derivatives are
/// differentiated exactly.
pub fn param_grad<F>(program: &Program, batch: &[Vec<f64>], block: Range<usize>, loss: F) -> Result<(f64, ParamTape)>
where
    F: for<'t> Fn(&Jet<Var<'t>>, &[f64]) -> Var<'t>,
{
    if !program.supports_second_order() {
        return Err(Error::Unsupported(
            "program contains a nonlinearity without a second derivative".into(),
        ));
    }
    let mut tape = ParamTape::zeros(program.params().len());
    let mut total = 0.0;
    for sample in batch {
        check_call(program, sample, &block)?;
        let t = Tape::new();
        let params: Vec<Var<'_>> = program.params().iter().map(|&p| t.var(p)).collect();
        let inputs: Vec<Var<'_>> = sample.iter().map(|&x| t.var(x)).collect();
        let jet = program.eval_jets(&params, &inputs, block.clone());
        let l = loss(&jet, sample);
        if !l.value().is_finite() {
            return Err(Error::non_finite("param_grad loss"));
        }
        total += l.value();
        let adj = t.gradient(l);
        for (g, p) in tape.as_mut_slice().iter_mut().zip(&params) {
            *g += adj.wrt(*p);
        }
    }
    tape.check_finite(0)?;
    Ok((total, tape))
}
