//! Tape-based reverse-mode differentiation over a fixed set of matrix ops.
//!
//! A [`Tape`] records every op of a forward pass together with its output.
//! [`Tape::backward`] consumes the tape and walks it from the last recorded
//! op to the first, accumulating gradients for every node that depends on a
//! parameter. Parameter values are borrowed, so recording a forward pass over
//! a large model does not copy its weights.

use std::borrow::Cow;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Activation, Tensor2};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose forward value is computed outside the tape and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. `None` marks an input as constant.
    fn backward(
        &self,
        inputs: &[&Tensor2],
        output: &Tensor2,
        grad_output: &Tensor2,
    ) -> Result<Vec<Option<Tensor2>>>;
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Affine { .. } => "affine",
            Op::Activation { .. } => "activation",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(..) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor2>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<Var>,
}

impl fmt::Debug for Tape<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("ops", &self.op_names())
            .field("params", &self.params.len())
            .finish()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of recorded ops, in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor2>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf: no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor2) -> Var {
        self.push(Cow::Owned(value), Op::Input, false)
    }

    /// A trainable leaf, borrowed for the lifetime of the tape.
    pub fn param(&mut self, value: &'a Tensor2) -> Var {
        let v = self.push(Cow::Borrowed(value), Op::Param, true);
        self.params.push(v);
        v
    }

    /// `input · weight + bias`, bias broadcast over rows.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.cols() != w.rows() {
            return Err(Error::shape(format!(
                "affine input has {} columns but weights have {} rows",
                x.cols(),
                w.rows()
            )));
        }
        if b.shape() != (1, w.cols()) {
            return Err(Error::shape(format!(
                "bias of shape {:?} does not match {} outputs",
                b.shape(),
                w.cols()
            )));
        }
        let mut out = matmul(x, w)?;
        let bv = b.data();
        for r in 0..out.rows() {
            for (o, bj) in out.row_slice_mut(r).iter_mut().zip(bv) {
                *o += bj;
            }
        }
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Cow::Owned(out),
            Op::Affine {
                input,
                weight,
                bias,
            },
            ng,
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = self.value(input).map(|x| kind.apply(x));
        let ng = self.needs(input);
        self.push(Cow::Owned(out), Op::Activation { input, kind }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|x| x * factor);
        let ng = self.needs(input);
        self.push(Cow::Owned(out), Op::Scale(input, factor), ng)
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let out = self.value(input).map(|x| x + c);
        let ng = self.needs(input);
        self.push(Cow::Owned(out), Op::AddScalar(input), ng)
    }

    /// Sum of every entry, as a 1×1 tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor2::filled(1, 1, self.value(input).sum());
        let ng = self.needs(input);
        self.push(Cow::Owned(out), Op::Sum(input), ng)
    }

    /// Records a custom op whose forward `value` the caller has computed.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor2, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(Cow::Owned(value), Op::Custom { inputs, op }, ng)
    }

    /// Reverse sweep from `output`, seeded with `output_grad`.
    pub fn backward(self, output: Var, output_grad: &Tensor2) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called on an empty tape; run a forward pass first".into(),
            ));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "output node {} is not on this tape",
                output.0
            )));
        }
        self.nodes[output.0]
            .value
            .expect_shape(output_grad.shape(), "output gradient")?;

        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(output_grad.clone());
        let mut visited = Vec::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            visited.push(idx);
            let mut contrib: Vec<(Var, Tensor2)> = Vec::new();
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    if self.needs(*weight) {
                        contrib.push((*weight, matmul_tn(self.value(*input), &g)?));
                    }
                    if self.needs(*bias) {
                        let mut db = Tensor2::zeros(1, g.cols());
                        for row in g.iter_rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        contrib.push((*bias, db));
                    }
                    if self.needs(*input) {
                        contrib.push((*input, matmul_nt(&g, self.value(*weight))?));
                    }
                }
                Op::Activation { input, kind } => {
                    let x = self.value(*input);
                    let mut dx = g;
                    for ((d, &xi), &yi) in dx
                        .data_mut()
                        .iter_mut()
                        .zip(x.data())
                        .zip(node.value.data())
                    {
                        *d *= kind.derivative(xi, yi);
                    }
                    contrib.push((*input, dx));
                }
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    contrib.push((*a, da));
                    contrib.push((*b, db));
                }
                Op::Scale(input, factor) => {
                    let mut dx = g;
                    dx.scale_in_place(*factor);
                    contrib.push((*input, dx));
                }
                Op::AddScalar(input) => contrib.push((*input, g)),
                Op::Sum(input) => {
                    let (r, c) = self.value(*input).shape();
                    contrib.push((*input, Tensor2::filled(r, c, g.data()[0])));
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor2> = inputs.iter().map(|&v| self.value(v)).collect();
                    let dins = op.backward(&values, &node.value, &g)?;
                    if dins.len() != inputs.len() {
                        return Err(Error::State(format!(
                            "{} returned {} gradients for {} inputs",
                            op.name(),
                            dins.len(),
                            inputs.len()
                        )));
                    }
                    for (&v, d) in inputs.iter().zip(dins) {
                        if let Some(d) = d {
                            contrib.push((v, d));
                        }
                    }
                }
            }
            for (v, d) in contrib {
                if !self.needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d)?,
                    slot @ None => *slot = Some(d),
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|&v| {
                grads[v.0].take().unwrap_or_else(|| {
                    let (r, c) = self.value(v).shape();
                    Tensor2::zeros(r, c)
                })
            })
            .collect();
        Ok(Gradients {
            params,
            param_vars: self.params,
            visited,
        })
    }
}

/// Gradients of every parameter registered on a tape, in registration order.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Tensor2>,
    param_vars: Vec<Var>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, param: Var) -> Option<&Tensor2> {
        self.param_vars
            .iter()
            .position(|&v| v == param)
            .map(|i| &self.params[i])
    }

    pub fn params(&self) -> &[Tensor2] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor2> {
        self.params
    }

    /// Node indices in the order the reverse sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
