//! Scalar automatic differentiation.
//!
//! Two mechanisms live here:
//!
//! * [`Dual`], forward-mode dual numbers carrying one directional derivative.
//! * [`Tape`], a recorded graph of scalar primitives. The graph stores
//!   operations rather than values, so it can be re-evaluated at new inputs.
//!   [`Tape::differentiate`] appends the adjoint computation of an output to
//!   the tape as ordinary nodes. Those gradient nodes are themselves
//!   differentiable, which is what lets a loss depend on input-derivatives of
//!   a network and still be differentiated with respect to the parameters.
//!
//! The positive part `(s)+` uses the subgradient 0 at the kink `s = 0`; see
//! [`positive_part_derivative`].

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Derivative of `max(s, 0)`, with the convention that the kink has slope 0.
#[inline]
pub fn positive_part_derivative(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn pos_part(s: f64) -> f64 {
    if s > 0.0 {
        s
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Forward mode
// ---------------------------------------------------------------------------

/// A value together with one directional derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    pub const fn constant(value: f64) -> Self {
        Self { value, tangent: 0.0 }
    }

    pub const fn variable(value: f64) -> Self {
        Self {
            value,
            tangent: 1.0,
        }
    }

    pub fn tanh(self) -> Self {
        let y = self.value.tanh();
        Self::new(y, (1.0 - y * y) * self.tangent)
    }

    pub fn sqrt(self) -> Self {
        let y = self.value.sqrt();
        Self::new(y, 0.5 * self.tangent / y)
    }

    pub fn powf(self, p: f64) -> Self {
        Self::new(
            self.value.powf(p),
            p * self.value.powf(p - 1.0) * self.tangent,
        )
    }

    pub fn recip(self) -> Self {
        let y = self.value.recip();
        Self::new(y, -y * y * self.tangent)
    }

    pub fn pos_part(self) -> Self {
        Self::new(
            pos_part(self.value),
            positive_part_derivative(self.value) * self.tangent,
        )
    }

    /// Heaviside step with `step(0) = 0`; its derivative is zero everywhere.
    pub fn step(self) -> Self {
        Self::constant(positive_part_derivative(self.value))
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.tangent * rhs.value + self.value * rhs.tangent,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        self * rhs.recip()
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A recorded primitive with its operand node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input(usize),
    Const(f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Recip(NodeId),
    Tanh(NodeId),
    Sqrt(NodeId),
    Powf(NodeId, f64),
    /// `max(a, 0)`.
    PosPart(NodeId),
    /// Heaviside step, 0 at the origin.
    Step(NodeId),
}

impl Op {
    /// Builds a unary or binary primitive from its name. Exists for callers
    /// assembling tapes from external descriptions; anything outside the
    /// supported set is rejected here rather than differentiated wrongly later.
    pub fn from_name(name: &str, operands: &[NodeId], param: Option<f64>) -> Result<Op> {
        let arity = |n: usize| -> Result<()> {
            if operands.len() == n {
                Ok(())
            } else {
                Err(Error::structural(format!(
                    "primitive `{name}` takes {n} operand(s), got {}",
                    operands.len()
                )))
            }
        };
        let op = match name {
            "add" => {
                arity(2)?;
                Op::Add(operands[0], operands[1])
            }
            "sub" => {
                arity(2)?;
                Op::Sub(operands[0], operands[1])
            }
            "mul" => {
                arity(2)?;
                Op::Mul(operands[0], operands[1])
            }
            "neg" => {
                arity(1)?;
                Op::Neg(operands[0])
            }
            "recip" => {
                arity(1)?;
                Op::Recip(operands[0])
            }
            "tanh" => {
                arity(1)?;
                Op::Tanh(operands[0])
            }
            "sqrt" => {
                arity(1)?;
                Op::Sqrt(operands[0])
            }
            "powf" => {
                arity(1)?;
                let p = param.ok_or_else(|| Error::structural("`powf` needs an exponent"))?;
                Op::Powf(operands[0], p)
            }
            "pos_part" => {
                arity(1)?;
                Op::PosPart(operands[0])
            }
            "step" => {
                arity(1)?;
                Op::Step(operands[0])
            }
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        };
        Ok(op)
    }

    fn operands(&self) -> (Option<NodeId>, Option<NodeId>) {
        match *self {
            Op::Input(_) | Op::Const(_) => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => (Some(a), Some(b)),
            Op::Neg(a)
            | Op::Recip(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Powf(a, _)
            | Op::PosPart(a)
            | Op::Step(a) => (Some(a), None),
        }
    }
}

/// A recorded computation graph in topological order.
///
/// Nodes are appended through [`Var`] arithmetic or [`Tape::push`]. Every
/// operand index precedes its consumer, so one forward pass and one reverse
/// pass over the node list suffice.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Op>>,
    inputs: RefCell<Vec<NodeId>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("inputs", &self.num_inputs())
            .finish()
    }
}

/// Handle to a node of a particular tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id.0)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.borrow().len()
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.nodes.borrow()[id.0]
    }

    /// Appends a primitive after checking that its operands already exist.
    pub fn push(&self, op: Op) -> Result<NodeId> {
        let len = self.len();
        let (a, b) = op.operands();
        for operand in [a, b].into_iter().flatten() {
            if operand.0 >= len {
                return Err(Error::structural(format!(
                    "operand {} does not precede its consumer (node {len})",
                    operand.0
                )));
            }
        }
        if let Op::Powf(_, p) = op {
            if !p.is_finite() {
                return Err(Error::structural("non-finite exponent in powf"));
            }
        }
        if let Op::Input(k) = op {
            if k != self.num_inputs() {
                return Err(Error::structural(format!(
                    "inputs must be declared in order: expected input {}, got {k}",
                    self.num_inputs()
                )));
            }
        }
        let id = NodeId(len);
        self.nodes.borrow_mut().push(op);
        if let Op::Input(_) = op {
            self.inputs.borrow_mut().push(id);
        }
        Ok(id)
    }

    fn var(&self, op: Op) -> Var<'_> {
        let id = self
            .push(op)
            .expect("Var arithmetic only references nodes of its own tape");
        Var { tape: self, id }
    }

    /// Declares the next independent input.
    pub fn input(&self) -> Var<'_> {
        self.var(Op::Input(self.num_inputs()))
    }

    pub fn inputs(&self, n: usize) -> Vec<Var<'_>> {
        (0..n).map(|_| self.input()).collect()
    }

    pub fn constant(&self, c: f64) -> Var<'_> {
        self.var(Op::Const(c))
    }

    pub fn wrap(&self, id: NodeId) -> Result<Var<'_>> {
        if id.0 < self.len() {
            Ok(Var { tape: self, id })
        } else {
            Err(Error::structural(format!("node {} not on this tape", id.0)))
        }
    }

    /// Evaluates every node at the given inputs.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(inputs.len())?;
        let nodes = self.nodes.borrow();
        let mut v: Vec<f64> = Vec::with_capacity(nodes.len());
        for op in nodes.iter() {
            let x = match *op {
                Op::Input(k) => inputs[k],
                Op::Const(c) => c,
                Op::Add(a, b) => v[a.0] + v[b.0],
                Op::Sub(a, b) => v[a.0] - v[b.0],
                Op::Mul(a, b) => v[a.0] * v[b.0],
                Op::Neg(a) => -v[a.0],
                Op::Recip(a) => v[a.0].recip(),
                Op::Tanh(a) => v[a.0].tanh(),
                Op::Sqrt(a) => v[a.0].sqrt(),
                Op::Powf(a, p) => v[a.0].powf(p),
                Op::PosPart(a) => pos_part(v[a.0]),
                Op::Step(a) => positive_part_derivative(v[a.0]),
            };
            v.push(x);
        }
        Ok(v)
    }

    /// Evaluates every node on dual numbers (one forward tangent direction).
    pub fn forward_dual(&self, inputs: &[Dual]) -> Result<Vec<Dual>> {
        self.check_inputs(inputs.len())?;
        let nodes = self.nodes.borrow();
        let mut v: Vec<Dual> = Vec::with_capacity(nodes.len());
        for op in nodes.iter() {
            let x = match *op {
                Op::Input(k) => inputs[k],
                Op::Const(c) => Dual::constant(c),
                Op::Add(a, b) => v[a.0] + v[b.0],
                Op::Sub(a, b) => v[a.0] - v[b.0],
                Op::Mul(a, b) => v[a.0] * v[b.0],
                Op::Neg(a) => -v[a.0],
                Op::Recip(a) => v[a.0].recip(),
                Op::Tanh(a) => v[a.0].tanh(),
                Op::Sqrt(a) => v[a.0].sqrt(),
                Op::Powf(a, p) => v[a.0].powf(p),
                Op::PosPart(a) => v[a.0].pos_part(),
                Op::Step(a) => v[a.0].step(),
            };
            v.push(x);
        }
        Ok(v)
    }

    /// Numeric reverse sweep: adjoints of `output` with respect to every
    /// node, given node values from [`Tape::forward`]. Each node is visited
    /// once, in reverse order.
    pub fn backward(&self, values: &[f64], output: NodeId) -> Result<Vec<f64>> {
        let nodes = self.nodes.borrow();
        if values.len() != nodes.len() {
            return Err(Error::structural(format!(
                "{} values for a tape of {} nodes",
                values.len(),
                nodes.len()
            )));
        }
        if output.0 >= nodes.len() {
            return Err(Error::structural("output node not on this tape"));
        }
        let mut adj = vec![0.0; nodes.len()];
        adj[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match nodes[i] {
                Op::Input(_) | Op::Const(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a.0] += g * values[b.0];
                    adj[b.0] += g * values[a.0];
                }
                Op::Neg(a) => adj[a.0] -= g,
                Op::Recip(a) => adj[a.0] -= g * values[i] * values[i],
                Op::Tanh(a) => adj[a.0] += g * (1.0 - values[i] * values[i]),
                Op::Sqrt(a) => adj[a.0] += g * 0.5 / values[i],
                Op::Powf(a, p) => adj[a.0] += g * p * values[a.0].powf(p - 1.0),
                Op::PosPart(a) => adj[a.0] += g * positive_part_derivative(values[a.0]),
            }
        }
        Ok(adj)
    }

    /// Appends the gradient of `output` with respect to `wrt` to the tape and
    /// returns the new gradient nodes. Nodes with no dependence on `output`
    /// receive a constant zero node.
    pub fn differentiate(&self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let end = self.len();
        if output.0 >= end {
            return Err(Error::structural("output node not on this tape"));
        }
        if let Some(bad) = wrt.iter().find(|n| n.0 >= end) {
            return Err(Error::structural(format!("node {} not on this tape", bad.0)));
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        adj[output.0] = Some(self.push(Op::Const(1.0))?);

        let accumulate = |adj: &mut Vec<Option<NodeId>>, at: NodeId, c: NodeId| -> Result<()> {
            adj[at.0] = Some(match adj[at.0] {
                None => c,
                Some(prev) => self.push(Op::Add(prev, c))?,
            });
            Ok(())
        };

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i] else { continue };
            let node = NodeId(i);
            match self.op(node) {
                Op::Input(_) | Op::Const(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g)?;
                    accumulate(&mut adj, b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g)?;
                    let ng = self.push(Op::Neg(g))?;
                    accumulate(&mut adj, b, ng)?;
                }
                Op::Mul(a, b) => {
                    let ca = self.push(Op::Mul(g, b))?;
                    accumulate(&mut adj, a, ca)?;
                    let cb = self.push(Op::Mul(g, a))?;
                    accumulate(&mut adj, b, cb)?;
                }
                Op::Neg(a) => {
                    let c = self.push(Op::Neg(g))?;
                    accumulate(&mut adj, a, c)?;
                }
                Op::Recip(a) => {
                    // d(1/a) = -(1/a)^2
                    let sq = self.push(Op::Mul(node, node))?;
                    let t = self.push(Op::Mul(g, sq))?;
                    let c = self.push(Op::Neg(t))?;
                    accumulate(&mut adj, a, c)?;
                }
                Op::Tanh(a) => {
                    let sq = self.push(Op::Mul(node, node))?;
                    let one = self.push(Op::Const(1.0))?;
                    let d = self.push(Op::Sub(one, sq))?;
                    let c = self.push(Op::Mul(g, d))?;
                    accumulate(&mut adj, a, c)?;
                }
                Op::Sqrt(a) => {
                    let r = self.push(Op::Recip(node))?;
                    let half = self.push(Op::Const(0.5))?;
                    let d = self.push(Op::Mul(half, r))?;
                    let c = self.push(Op::Mul(g, d))?;
                    accumulate(&mut adj, a, c)?;
                }
                Op::Powf(a, p) => {
                    let pw = self.push(Op::Powf(a, p - 1.0))?;
                    let k = self.push(Op::Const(p))?;
                    let d = self.push(Op::Mul(k, pw))?;
                    let c = self.push(Op::Mul(g, d))?;
                    accumulate(&mut adj, a, c)?;
                }
                Op::PosPart(a) => {
                    let s = self.push(Op::Step(a))?;
                    let c = self.push(Op::Mul(g, s))?;
                    accumulate(&mut adj, a, c)?;
                }
            }
        }

        wrt.iter()
            .map(|n| match adj.get(n.0).copied().flatten() {
                Some(id) => Ok(id),
                None => self.push(Op::Const(0.0)),
            })
            .collect()
    }

    fn check_inputs(&self, got: usize) -> Result<()> {
        let expected = self.num_inputs();
        if got == expected {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "tape declares {expected} inputs, {got} supplied"
            )))
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: impl FnOnce(NodeId) -> Op) -> Var<'t> {
        self.tape.var(op(self.id))
    }

    fn binary(self, rhs: Var<'t>, op: impl FnOnce(NodeId, NodeId) -> Op) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, rhs.tape),
            "operands recorded on different tapes"
        );
        self.tape.var(op(self.id, rhs.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(|a| Op::Powf(a, p))
    }

    pub fn pos_part(self) -> Var<'t> {
        self.unary(Op::PosPart)
    }

    pub fn step(self) -> Var<'t> {
        self.unary(Op::Step)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Gradient of `self` with respect to `wrt`, as new differentiable nodes.
    pub fn grad(self, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let ids: Vec<NodeId> = wrt.iter().map(|v| v.id).collect();
        self.tape
            .differentiate(self.id, &ids)
            .expect("nodes of a Var belong to its tape")
            .into_iter()
            .map(|id| Var {
                tape: self.tape,
                id,
            })
            .collect()
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, $op)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let c = self.tape.constant(rhs);
                self.binary(c, $op)
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.constant(self);
                c.binary(rhs, $op)
            }
        }
    };
}

var_binop!(Add, add, Op::Add);
var_binop!(Sub, sub, Op::Sub);
var_binop!(Mul, mul, Op::Mul);

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self * rhs.recip()
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self * rhs.recip()
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg)
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Exact gradient of a scalar function of `z.len()` inputs at `z`.
pub fn grad_inputs<F>(f: F, z: &[f64]) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let x = tape.inputs(z.len());
    let out = f(&x);
    let values = tape.forward(z)?;
    let adj = tape.backward(&values, out.id)?;
    Ok(x.iter().map(|v| adj[v.id.0]).collect())
}

/// Full Hessian of a scalar function with respect to its inputs.
///
/// The gradient is appended to the tape and differentiated once more. Only
/// the upper triangle is computed; the lower triangle is a copy, so the
/// result is exactly symmetric.
pub fn second_derivs_inputs<F>(f: F, z: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let d = z.len();
    let tape = Tape::new();
    let x = tape.inputs(d);
    let out = f(&x);
    let g = out.grad(&x);
    let rows: Vec<Vec<Var<'_>>> = g.iter().map(|gi| gi.grad(&x)).collect();
    let values = tape.forward(z)?;
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = values[rows[i][j].id.0];
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    Ok(h)
}

/// Gradient of a loss with respect to parameters `theta`.
///
/// The closure receives the tape and one variable per parameter. It may
/// declare further inputs only as constants, and may call [`Var::grad`] to
/// build input-derivatives; those stay differentiable in `theta`.
pub fn grad_params<F>(theta: &[f64], loss: F) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let params = tape.inputs(theta.len());
    let out = loss(&tape, &params);
    let values = tape.forward(theta)?;
    let adj = tape.backward(&values, out.id)?;
    Ok(params.iter().map(|v| adj[v.id.0]).collect())
}
