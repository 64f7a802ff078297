//! Small differentiable programs over vector-valued nodes.

use std::ops::Range;

use super::{Activation, Jet, JetProgram, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input {
        offset: usize,
    },
    Const(Vec<f64>),
    Affine {
        x: NodeId,
        weight: usize,
        bias: Option<usize>,
        cols: usize,
    },
    Act(NodeId, Activation),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Max(NodeId, NodeId),
    Min(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Scale(NodeId, f64),
    Sqrt(NodeId),
    Recip(NodeId),
    Sum(NodeId),
}

/// A straight-line program with a scalar output. Affine weights are the
/// program's parameters.
#[derive(Clone, Debug)]
pub struct Program {
    input_len: usize,
    nodes: Vec<(Op, usize)>,
    output: NodeId,
    params: Vec<f64>,
}

pub struct ProgramBuilder {
    input_len: usize,
    nodes: Vec<(Op, usize)>,
    params: Vec<f64>,
}

impl ProgramBuilder {
    pub fn new(input_len: usize) -> Self {
        ProgramBuilder {
            input_len,
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.nodes.push((op, len));
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, n: NodeId) -> Result<usize> {
        self.nodes
            .get(n.0)
            .map(|(_, l)| *l)
            .ok_or_else(|| Error::Shape(format!("unknown node {}", n.0)))
    }

    fn same_len(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.len_of(a)?, self.len_of(b)?);
        if la != lb {
            return Err(Error::Shape(format!("operands of length {la} and {lb}")));
        }
        Ok(la)
    }

    pub fn input(&mut self, offset: usize, len: usize) -> Result<NodeId> {
        if len == 0 || offset + len > self.input_len {
            return Err(Error::Shape(format!(
                "input slice {offset}..{} outside {} inputs",
                offset + len,
                self.input_len
            )));
        }
        Ok(self.push(Op::Input { offset }, len))
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        self.push(Op::Const(values), len)
    }

    /// `W x + b` with `weight` given row-major as `rows x len(x)`.
    pub fn affine(&mut self, x: NodeId, weight: &[f64], bias: Option<&[f64]>, rows: usize) -> Result<NodeId> {
        let cols = self.len_of(x)?;
        if weight.len() != rows * cols {
            return Err(Error::Shape(format!(
                "weight of {} entries for a {rows}x{cols} map",
                weight.len()
            )));
        }
        let w = self.params.len();
        self.params.extend_from_slice(weight);
        let b = match bias {
            Some(b) if b.len() != rows => {
                return Err(Error::Shape(format!("bias of {} entries for {rows} rows", b.len())))
            }
            Some(b) => {
                let off = self.params.len();
                self.params.extend_from_slice(b);
                Some(off)
            }
            None => None,
        };
        Ok(self.push(
            Op::Affine {
                x,
                weight: w,
                bias: b,
                cols,
            },
            rows,
        ))
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        let l = self.len_of(x)?;
        Ok(self.push(Op::Act(x, act), l))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.same_len(a, b)?;
        Ok(self.push(Op::Add(a, b), l))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.same_len(a, b)?;
        Ok(self.push(Op::Sub(a, b), l))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.same_len(a, b)?;
        Ok(self.push(Op::Mul(a, b), l))
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.same_len(a, b)?;
        Ok(self.push(Op::Max(a, b), l))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.same_len(a, b)?;
        Ok(self.push(Op::Min(a, b), l))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = self.len_of(a)? + self.len_of(b)?;
        Ok(self.push(Op::Concat(a, b), l))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let l = self.len_of(a)?;
        Ok(self.push(Op::Scale(a, c), l))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let l = self.len_of(a)?;
        Ok(self.push(Op::Sqrt(a), l))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let l = self.len_of(a)?;
        Ok(self.push(Op::Recip(a), l))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.len_of(a)?;
        Ok(self.push(Op::Sum(a), 1))
    }

    /// Adds a parameter-free primitive by name.
    pub fn primitive(&mut self, name: &str, args: &[NodeId]) -> Result<NodeId> {
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Shape(format!("`{name}` takes {n} operands, got {}", args.len())))
            }
        };
        match name {
            "add" | "sub" | "mul" | "max" | "min" | "concat" => {
                arity(2)?;
                let (a, b) = (args[0], args[1]);
                match name {
                    "add" => self.add(a, b),
                    "sub" => self.sub(a, b),
                    "mul" => self.mul(a, b),
                    "max" => self.max(a, b),
                    "min" => self.min(a, b),
                    _ => self.concat(a, b),
                }
            }
            "sqrt" | "recip" | "sum" => {
                arity(1)?;
                match name {
                    "sqrt" => self.sqrt(args[0]),
                    "recip" => self.recip(args[0]),
                    _ => self.sum(args[0]),
                }
            }
            other => {
                arity(1)?;
                let act: Activation = other.parse()?;
                self.activation(args[0], act)
            }
        }
    }

    pub fn build(self, output: NodeId) -> Result<Program> {
        let len = self.len_of(output)?;
        if len != 1 {
            return Err(Error::Shape(format!("program output has length {len}, expected 1")));
        }
        Ok(Program {
            input_len: self.input_len,
            nodes: self.nodes,
            output,
            params: self.params,
        })
    }
}

impl Program {
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_count(&self) -> usize {
        self.input_len
    }

    /// Evaluates the output jet with all arithmetic carried out in `S`.
    pub fn eval_jets<S: Scalar>(&self, params: &[S], inputs: &[S], block: Range<usize>) -> Jet<S> {
        let dirs = block.len();
        let mut vals: Vec<Vec<Jet<S>>> = Vec::with_capacity(self.nodes.len());
        for (op, len) in &self.nodes {
            let out: Vec<Jet<S>> = match op {
                Op::Input { offset } => (*offset..offset + len)
                    .map(|i| {
                        let dir = block.contains(&i).then(|| i - block.start);
                        Jet::variable(inputs[i], dirs, dir)
                    })
                    .collect(),
                Op::Const(c) => {
                    let any = inputs[0];
                    c.iter().map(|&v| Jet::constant(any.lift(v), dirs)).collect()
                }
                Op::Affine {
                    x,
                    weight,
                    bias,
                    cols,
                } => {
                    let xs = &vals[x.0];
                    (0..*len)
                        .map(|r| {
                            let w = &params[weight + r * cols..weight + (r + 1) * cols];
                            let mut acc = match bias {
                                Some(b) => Jet::constant(params[b + r], dirs),
                                None => Jet::constant(w[0].lift(0.0), dirs),
                            };
                            for (wc, xc) in w.iter().zip(xs) {
                                acc.value = acc.value + *wc * xc.value;
                                for k in 0..dirs {
                                    acc.d1[k] = acc.d1[k] + *wc * xc.d1[k];
                                    acc.d2[k] = acc.d2[k] + *wc * xc.d2[k];
                                }
                            }
                            acc
                        })
                        .collect()
                }
                Op::Act(x, act) => vals[x.0].iter().map(|j| j.activate(*act)).collect(),
                Op::Add(a, b) => pairwise(&vals, *a, *b, Jet::add),
                Op::Sub(a, b) => pairwise(&vals, *a, *b, Jet::sub),
                Op::Mul(a, b) => pairwise(&vals, *a, *b, Jet::mul),
                Op::Max(a, b) => pairwise(&vals, *a, *b, Jet::max),
                Op::Min(a, b) => pairwise(&vals, *a, *b, Jet::min),
                Op::Concat(a, b) => vals[a.0].iter().chain(&vals[b.0]).cloned().collect(),
                Op::Scale(a, c) => vals[a.0]
                    .iter()
                    .map(|j| j.scale(j.value.lift(*c)))
                    .collect(),
                Op::Sqrt(a) => vals[a.0].iter().map(Jet::sqrt).collect(),
                Op::Recip(a) => vals[a.0].iter().map(Jet::recip).collect(),
                Op::Sum(a) => {
                    let xs = &vals[a.0];
                    let first = xs[0].clone();
                    vec![xs[1..].iter().fold(first, |acc, j| acc.add(j))]
                }
            };
            vals.push(out);
        }
        vals.swap_remove(self.output.0).swap_remove(0)
    }
}

fn pairwise<S: Scalar>(
    vals: &[Vec<Jet<S>>],
    a: NodeId,
    b: NodeId,
    f: impl Fn(&Jet<S>, &Jet<S>) -> Jet<S>,
) -> Vec<Jet<S>> {
    vals[a.0].iter().zip(&vals[b.0]).map(|(x, y)| f(x, y)).collect()
}

impl JetProgram for Program {
    fn input_len(&self) -> usize {
        self.input_len
    }

    fn supports_second_order(&self) -> bool {
        self.nodes.iter().all(|(op, _)| match op {
            Op::Act(_, act) => act.has_second_derivative(),
            _ => true,
        })
    }

    fn jet(&self, inputs: &[f64], block: Range<usize>, _second_order: bool) -> Result<Jet<f64>> {
        Ok(self.eval_jets(&self.params, inputs, block))
    }
}
