use std::cell::{Cell, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest denominator used when a norm is differentiated at the origin.
const NORM_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Broadcast(usize),
    SumTo(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    ClampMin(usize, f64),
    NormRows(usize),
    LogSumExpRows(usize),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Const | Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => [Some(a), Some(b)],
            Transpose(a)
            | Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Broadcast(a)
            | SumTo(a)
            | Relu(a)
            | Sigmoid(a)
            | Tanh(a)
            | Exp(a)
            | Log(a)
            | Softplus(a)
            | ClampMin(a, _)
            | NormRows(a)
            | LogSumExpRows(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records the operations of one forward pass so they can be replayed in
/// reverse.
///
/// Backward passes append their own operations to the same tape. With
/// `retain` set they are recorded like any forward operation, which makes a
/// gradient differentiable a second time; otherwise the results are plain
/// constants.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// A node of a differentiable computation on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: Cell::new(true) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Const, false)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let tracked = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.parents().iter().flatten().any(|&p| nodes[p].requires_grad)
        };
        if tracked {
            self.push_raw(value, op, true)
        } else {
            self.push_raw(value, Op::Const, false)
        }
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn with_values<R>(&self, a: usize, b: usize, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a].value, &nodes[b].value)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Every node reachable from `output` is visited once, in reverse
    /// creation order, so shared subexpressions accumulate correctly.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], retain: bool) -> Result<Vec<Var<'t>>> {
        debug_assert!(wrt.iter().all(|w| std::ptr::eq(w.tape, self)));
        let [rows, cols] = output.shape();
        if rows != 1 || cols != 1 {
            return Err(Error::NotScalar { rows, cols });
        }
        if !output.requires_grad() {
            return Err(Error::NotDifferentiable);
        }

        let reachable = self.ancestors(output.id);
        for (index, w) in wrt.iter().enumerate() {
            if w.id > output.id || !reachable[w.id] {
                return Err(Error::NotInGraph { index });
            }
        }

        let previous = self.recording.replace(retain);
        let result = self.backward(output, wrt, &reachable);
        self.recording.set(previous);
        result
    }

    fn ancestors(&self, root: usize) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut seen = vec![false; root + 1];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(id) = stack.pop() {
            for p in nodes[id].op.parents().into_iter().flatten() {
                if nodes[p].requires_grad && !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        seen
    }

    fn backward<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], reachable: &[bool]) -> Result<Vec<Var<'t>>> {
        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; output.id + 1];
        adjoint[output.id] = Some(self.constant(Tensor::scalar(1.0)));

        for id in (0..=output.id).rev() {
            if !reachable[id] {
                continue;
            }
            let Some(adj) = adjoint[id] else { continue };
            let op = self.nodes.borrow()[id].op;
            let node = Var { tape: self, id };
            for (parent, contribution) in self.local_grads(op, node, adj)? {
                if !reachable[parent] {
                    continue;
                }
                adjoint[parent] = Some(match adjoint[parent] {
                    None => contribution,
                    Some(prev) => prev.add(contribution)?,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                adjoint[w.id].unwrap_or_else(|| {
                    let [r, c] = w.shape();
                    self.constant(Tensor::zeros(r, c))
                })
            })
            .collect())
    }

    /// Vector-Jacobian products of one node, expressed with tape operations
    /// so they can themselves be differentiated.
    fn local_grads<'t>(&'t self, op: Op, out: Var<'t>, adj: Var<'t>) -> Result<Vec<(usize, Var<'t>)>> {
        let v = |id| Var { tape: self, id };
        let grads = match op {
            Op::Const | Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![(a, adj.matmul(v(b).transpose())?), (b, v(a).transpose().matmul(adj)?)],
            Op::Transpose(a) => vec![(a, adj.transpose())],
            Op::Add(a, b) => vec![(a, adj), (b, adj)],
            Op::Sub(a, b) => vec![(a, adj), (b, adj.neg())],
            Op::Mul(a, b) => vec![(a, adj.mul(v(b))?), (b, adj.mul(v(a))?)],
            Op::Div(a, b) => vec![(a, adj.div(v(b))?), (b, adj.mul(out)?.div(v(b))?.neg())],
            Op::Neg(a) => vec![(a, adj.neg())],
            Op::Scale(a, c) => vec![(a, adj.scale(c))],
            Op::AddScalar(a) => vec![(a, adj)],
            Op::Broadcast(a) => {
                let [r, c] = v(a).shape();
                vec![(a, adj.sum_to(r, c)?)]
            }
            Op::SumTo(a) => {
                let [r, c] = v(a).shape();
                vec![(a, adj.broadcast_to(r, c)?)]
            }
            Op::Relu(a) => {
                // Subgradient 0 at exactly 0.
                let mask = self.with_value(a, |t| t.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
                vec![(a, adj.mul(self.constant(mask))?)]
            }
            Op::Sigmoid(a) => {
                let slope = out.sub(out.mul(out)?)?;
                vec![(a, adj.mul(slope)?)]
            }
            Op::Tanh(a) => {
                let slope = out.mul(out)?.neg().add_scalar(1.0);
                vec![(a, adj.mul(slope)?)]
            }
            Op::Exp(a) => vec![(a, adj.mul(out)?)],
            Op::Log(a) => vec![(a, adj.div(v(a))?)],
            Op::Softplus(a) => vec![(a, adj.mul(v(a).sigmoid())?)],
            Op::ClampMin(a, floor) => {
                let mask = self.with_value(a, |t| t.map(|x| if x > floor { 1.0 } else { 0.0 }));
                vec![(a, adj.mul(self.constant(mask))?)]
            }
            Op::NormRows(a) => {
                let [r, c] = v(a).shape();
                let scale = adj.div(out.clamp_min(NORM_FLOOR))?.broadcast_to(r, c)?;
                vec![(a, scale.mul(v(a))?)]
            }
            Op::LogSumExpRows(a) => {
                let [r, c] = v(a).shape();
                let softmax = v(a).sub(out.broadcast_to(r, c)?)?.exp();
                vec![(a, adj.broadcast_to(r, c)?.mul(softmax)?)]
            }
        };
        Ok(grads)
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    stable_sigmoid(x)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.with_value(self.id, Tensor::shape)
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, Tensor::item)
    }

    /// Whether gradients can flow from this node to some leaf.
    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// A constant copy of this value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| t.map(f));
        self.tape.push(value, op)
    }

    fn elementwise(&self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let value = self.tape.with_values(self.id, other.id, |a, b| {
            if a.shape() != b.shape() {
                Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))
            } else {
                Ok(a.zip_map(b, f))
            }
        })?;
        Ok(self.tape.push(value, op))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.tape.with_values(self.id, other.id, Tensor::matmul)?;
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let value = self.tape.with_value(self.id, Tensor::transpose);
        self.tape.push(value, Op::Transpose(self.id))
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    /// Repeats a row, column or scalar up to `rows x cols`.
    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.broadcast(rows, cols))?;
        Ok(self.tape.push(value, Op::Broadcast(self.id)))
    }

    /// Sums over the axes where the target has extent 1.
    pub fn sum_to(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.sum_to(rows, cols))?;
        Ok(self.tape.push(value, Op::SumTo(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        self.sum_to(1, 1).expect("any shape reduces to a scalar")
    }

    pub fn mean(&self) -> Var<'t> {
        let [r, c] = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    /// Per-row sums, `r x c -> r x 1`.
    pub fn sum_rows(&self) -> Var<'t> {
        let [r, _] = self.shape();
        self.sum_to(r, 1).expect("row reduction is always valid")
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), stable_sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// `ln(1 + e^x)` in overflow-free form.
    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), stable_softplus)
    }

    /// Elementwise `max(x, floor)`; the derivative is 0 where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, floor), move |x| x.max(floor))
    }

    /// Euclidean norm of each row, `r x c -> r x 1`.
    pub fn norm_rows(&self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| {
            let norms: Vec<f64> =
                (0..t.rows()).map(|r| t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            Tensor::column(&norms)
        });
        self.tape.push(value, Op::NormRows(self.id))
    }

    /// Stable `ln sum exp` of each row, `r x c -> r x 1`.
    pub fn logsumexp_rows(&self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| {
            let out: Vec<f64> = (0..t.rows())
                .map(|r| {
                    let row = t.row_slice(r);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if m.is_infinite() {
                        return m;
                    }
                    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
                })
                .collect();
            Tensor::column(&out)
        });
        self.tape.push(value, Op::LogSumExpRows(self.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_accumulates_once_per_path() {
        // f = g(x) + g(x) with g = sigmoid, so df/dx = 2 g'(x).
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.3));
        let g = x.sigmoid();
        let f = g.add(g).unwrap();
        let dx = tape.grad(f, &[x], false).unwrap()[0].item();
        let s = stable_sigmoid(0.3);
        assert!((dx - 2.0 * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn unretained_gradient_is_not_differentiable() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let g = tape.grad(y, &[x], false).unwrap()[0];
        assert!(!g.requires_grad());
        assert!(matches!(tape.grad(g, &[x], false), Err(Error::NotDifferentiable)));
    }

    #[test]
    fn retained_gradient_gives_second_derivative() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let g = tape.grad(y, &[x], true).unwrap()[0];
        assert!((g.item() - 3.0 * 1.5 * 1.5).abs() < 1e-12);
        let h = tape.grad(g, &[x], false).unwrap()[0];
        assert!((h.item() - 6.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn errors_for_non_scalar_and_foreign_input() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
        let other = tape.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.grad(x.relu(), &[x], false), Err(Error::NotScalar { .. })));
        let y = x.sum();
        assert!(matches!(tape.grad(y, &[other], false), Err(Error::NotInGraph { index: 0 })));
        let c = tape.constant(Tensor::scalar(2.0));
        assert!(matches!(tape.grad(c, &[x], false), Err(Error::NotDifferentiable)));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.0, 1.0, -1.0]));
        let g = tape.grad(x.relu().sum(), &[x], false).unwrap()[0].value();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn norm_rows_at_origin_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.0, 0.0]));
        let g = tape.grad(x.norm_rows().sum(), &[x], false).unwrap()[0].value();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_functions_stay_finite() {
        assert_eq!(stable_sigmoid(-1000.0), 0.0);
        assert_eq!(stable_sigmoid(1000.0), 1.0);
        assert_eq!(stable_softplus(1000.0), 1000.0);
        assert!(stable_softplus(-1000.0) >= 0.0);
    }
}
