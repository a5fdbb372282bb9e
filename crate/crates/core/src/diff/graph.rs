use std::collections::HashMap;

use super::tensor::{gemm_acc, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Binary elementwise ops broadcast a dimension of
/// size one against the other operand.
#[derive(Clone, Debug)]
pub enum Op {
    Input,
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `a · b`, or `a · bᵀ` when `trans_b` is set.
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Dot(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    ClampMin(NodeId, f64),
    Square(NodeId),
    SumSq(NodeId),
    Sum(NodeId),
    RowSum(NodeId),
    Relu(NodeId),
    Smooth(NodeId, f64),
    SmoothPrime(NodeId, f64),
    /// `σ(base + delta) − σ(base)`, exact in the flat and linear regions.
    SmoothDiff {
        base: NodeId,
        delta: NodeId,
        d: f64,
    },
    Softplus(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    /// 1 for rows holding any nonzero entry, else 0. Carries no gradient.
    RowNonzeroMask(NodeId),
}

impl Op {
    fn inputs(&self) -> ([Option<NodeId>; 2], usize) {
        use Op::*;
        match *self {
            Input | Const(_) => ([None, None], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Dot(a, b) => ([Some(a), Some(b)], 2),
            MatMul { a, b, .. } => ([Some(a), Some(b)], 2),
            SmoothDiff { base, delta, .. } => ([Some(base), Some(delta)], 2),
            Neg(a)
            | Scale(a, _)
            | Offset(a, _)
            | ClampMin(a, _)
            | Square(a)
            | SumSq(a)
            | Sum(a)
            | RowSum(a)
            | Relu(a)
            | Smooth(a, _)
            | SmoothPrime(a, _)
            | Softplus(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Sin(a)
            | Cos(a)
            | RowNonzeroMask(a) => ([Some(a), None], 1),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Shape,
}

/// `σ(b + e) − σ(b)`; returns `e` exactly when both points lie on the linear
/// branch and `0` when both lie on the flat one.
#[inline]
pub fn smooth_relu_diff(b: f64, e: f64, d: f64) -> f64 {
    let x = b + e;
    if b >= d && x >= d {
        e
    } else if b <= 0.0 && x <= 0.0 {
        0.0
    } else {
        smooth_relu(x, d) - smooth_relu(b, d)
    }
}

/// Smoothed ReLU: zero, then quadratic on `(0, d)`, then linear.
#[inline]
pub fn smooth_relu(x: f64, d: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < d {
        x * x / (2.0 * d)
    } else {
        x - d / 2.0
    }
}

#[inline]
pub fn smooth_relu_prime(x: f64, d: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < d {
        x / d
    } else {
        1.0
    }
}

/// Subgradient of `smooth_relu_prime`: 0 at the lower kink, `1/d` at the upper one.
#[inline]
pub fn smooth_relu_second(x: f64, d: f64) -> f64 {
    if x > 0.0 && x <= d {
        1.0 / d
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Values for the free leaves of a graph.
#[derive(Clone, Debug, Default)]
pub struct Binding {
    values: HashMap<NodeId, Tensor>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, id: NodeId, value: Tensor) -> &mut Self {
        self.values.insert(id, value);
        self
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        self.values.get_mut(&id)
    }
}

/// Append-only computation graph over dense `f64` matrices.
///
/// Nodes only reference earlier nodes, so insertion order is a topological
/// order. Shapes are checked when a node is inserted.
#[derive(Clone, Debug, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<Shape> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape)
            .ok_or_else(|| Error::contract(format!("node {} does not exist", id.0)))
    }

    /// A free leaf; its value comes from a [`Binding`].
    pub fn input(&mut self, shape: Shape) -> NodeId {
        self.push(Op::Input, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape();
        self.push(Op::Const(value), shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    fn broadcast(&self, a: NodeId, b: NodeId, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        let dim = |x: usize, y: usize| {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        };
        match (dim(sa.rows, sb.rows), dim(sa.cols, sb.cols)) {
            (Some(r), Some(c)) => Ok(Shape::new(r, c)),
            _ => Err(Error::shape(format!("{what}: cannot broadcast {sa} with {sb}"))),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b, "div")?;
        Ok(self.push(Op::Div(a, b), s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa.cols != sb.rows {
            return Err(Error::shape(format!("matmul: {sa} · {sb}")));
        }
        Ok(self.push(Op::MatMul { a, b, trans_b: false }, Shape::new(sa.rows, sb.cols)))
    }

    /// `a · bᵀ`; with `a` a batch of row vectors and `b` a weight matrix this
    /// is the batched affine map.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa.cols != sb.cols {
            return Err(Error::shape(format!("matmul_t: {sa} · {sb}ᵀ")));
        }
        Ok(self.push(Op::MatMul { a, b, trans_b: true }, Shape::new(sa.rows, sb.rows)))
    }

    /// Matrix times column vector.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let sx = self.check(x)?;
        if sx.cols != 1 {
            return Err(Error::shape(format!("matvec: {sx} is not a column vector")));
        }
        self.matmul(w, x)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb {
            return Err(Error::shape(format!("dot: {sa} vs {sb}")));
        }
        Ok(self.push(Op::Dot(a, b), Shape::SCALAR))
    }

    fn unary(&mut self, a: NodeId, op: Op) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.push(op, s))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::Offset(a, c))
    }

    /// `max(a, floor)` elementwise.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.unary(a, Op::ClampMin(a, floor))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a))
    }

    pub fn smooth_relu(&mut self, a: NodeId, d: f64) -> Result<NodeId> {
        if d <= 0.0 || d.is_nan() {
            return Err(Error::contract(format!("smoothing width must be positive, got {d}")));
        }
        self.unary(a, Op::Smooth(a, d))
    }

    pub fn smooth_relu_prime(&mut self, a: NodeId, d: f64) -> Result<NodeId> {
        if d <= 0.0 || d.is_nan() {
            return Err(Error::contract(format!("smoothing width must be positive, got {d}")));
        }
        self.unary(a, Op::SmoothPrime(a, d))
    }

    /// `σ(base + delta) − σ(base)` with `base` broadcast against `delta`.
    pub fn smooth_relu_diff(&mut self, base: NodeId, delta: NodeId, d: f64) -> Result<NodeId> {
        if d <= 0.0 || d.is_nan() {
            return Err(Error::contract(format!("smoothing width must be positive, got {d}")));
        }
        let s = self.broadcast(base, delta, "smooth_relu_diff")?;
        Ok(self.push(Op::SmoothDiff { base, delta, d }, s))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a))
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Cos(a))
    }

    pub fn sum_sq(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        Ok(self.push(Op::SumSq(a), Shape::SCALAR))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        Ok(self.push(Op::Sum(a), Shape::SCALAR))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.push(Op::RowSum(a), Shape::new(s.rows, 1)))
    }

    pub fn row_nonzero_mask(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.push(Op::RowNonzeroMask(a), Shape::new(s.rows, 1)))
    }

    /// Nodes that `roots` depend on, including the roots.
    fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.nodes.len()];
        for r in roots {
            needed[r.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if !needed[i] {
                continue;
            }
            let (ins, n) = self.nodes[i].op.inputs();
            for id in ins.iter().take(n).flatten() {
                needed[id.0] = true;
            }
        }
        needed
    }

    fn forward(&self, bindings: &Binding, needed: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let v = self.compute(i, node, bindings, &values)?;
            values[i] = Some(v);
        }
        Ok(values)
    }

    fn compute(&self, i: usize, node: &Node, bindings: &Binding, values: &[Option<Tensor>]) -> Result<Tensor> {
        let val = |id: NodeId| values[id.0].as_ref().expect("inputs are evaluated first");
        let out = match &node.op {
            Op::Input => {
                let v = bindings.get(NodeId(i)).ok_or(Error::MissingBinding(i))?;
                if v.shape() != node.shape {
                    return Err(Error::shape(format!(
                        "binding for node {i} has shape {}, declared {}",
                        v.shape(),
                        node.shape
                    )));
                }
                v.clone()
            }
            Op::Const(t) => t.clone(),
            Op::Add(a, b) => broadcast_map(val(*a), val(*b), node.shape, |x, y| x + y),
            Op::Sub(a, b) => broadcast_map(val(*a), val(*b), node.shape, |x, y| x - y),
            Op::Mul(a, b) => broadcast_map(val(*a), val(*b), node.shape, |x, y| x * y),
            Op::Div(a, b) => broadcast_map(val(*a), val(*b), node.shape, |x, y| x / y),
            Op::MatMul { a, b, trans_b } => {
                let mut out = Tensor::zeros(node.shape);
                gemm_acc(val(*a), false, val(*b), *trans_b, &mut out);
                out
            }
            Op::Dot(a, b) => {
                let s = val(*a)
                    .as_slice()
                    .iter()
                    .zip(val(*b).as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                Tensor::scalar(s)
            }
            Op::Neg(a) => val(*a).map(|x| -x),
            Op::Scale(a, c) => val(*a).map(|x| x * c),
            Op::Offset(a, c) => val(*a).map(|x| x + c),
            Op::ClampMin(a, c) => val(*a).map(|x| x.max(*c)),
            Op::Square(a) => val(*a).map(|x| x * x),
            Op::SumSq(a) => Tensor::scalar(val(*a).norm_sq()),
            Op::Sum(a) => Tensor::scalar(val(*a).sum()),
            Op::RowSum(a) => {
                let v = val(*a);
                let sums = (0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect::<Vec<f64>>();
                Tensor::column(&sums)
            }
            Op::Relu(a) => val(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Smooth(a, d) => val(*a).map(|x| smooth_relu(x, *d)),
            Op::SmoothPrime(a, d) => val(*a).map(|x| smooth_relu_prime(x, *d)),
            Op::SmoothDiff { base, delta, d } => {
                broadcast_map(val(*base), val(*delta), node.shape, |b, e| smooth_relu_diff(b, e, *d))
            }
            Op::Softplus(a) => val(*a).map(softplus),
            Op::Sigmoid(a) => val(*a).map(sigmoid),
            Op::Exp(a) => val(*a).map(f64::exp),
            Op::Log(a) => val(*a).map(f64::ln),
            Op::Sin(a) => val(*a).map(f64::sin),
            Op::Cos(a) => val(*a).map(f64::cos),
            Op::RowNonzeroMask(a) => {
                let v = val(*a);
                let mask = (0..v.rows())
                    .map(|r| {
                        if v.row_slice(r).iter().any(|&x| x != 0.0) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect::<Vec<f64>>();
                Tensor::column(&mask)
            }
        };
        Ok(out)
    }

    /// Forward value of `output`.
    pub fn eval(&self, bindings: &Binding, output: NodeId) -> Result<Tensor> {
        self.check(output)?;
        let needed = self.ancestors(&[output]);
        let mut values = self.forward(bindings, &needed)?;
        Ok(values[output.0].take().expect("output evaluated"))
    }

    /// Forward values of several nodes sharing one pass.
    pub fn eval_many(&self, bindings: &Binding, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        for o in outputs {
            self.check(*o)?;
        }
        let needed = self.ancestors(outputs);
        let values = self.forward(bindings, &needed)?;
        Ok(outputs
            .iter()
            .map(|o| values[o.0].clone().expect("output evaluated"))
            .collect())
    }

    /// Gradients of the scalar `output` with respect to each node in `wrt`,
    /// in the same order. Nodes the output does not depend on get zeros.
    pub fn backward(&self, bindings: &Binding, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        self.value_and_grad(bindings, output, wrt).map(|(_, g)| g)
    }

    /// Forward value of the scalar `output` plus its gradients.
    pub fn value_and_grad(&self, bindings: &Binding, output: NodeId, wrt: &[NodeId]) -> Result<(f64, Vec<Tensor>)> {
        let shape = self.check(output)?;
        if !shape.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, node {} has shape {shape}",
                output.0
            )));
        }
        for w in wrt {
            self.check(*w)?;
        }
        let needed = self.ancestors(&[output]);
        let values = self.forward(bindings, &needed)?;
        let value = values[output.0].as_ref().expect("output evaluated").item()?;

        // only nodes downstream of a requested leaf need adjoints
        let mut relevant = vec![false; self.nodes.len()];
        for w in wrt {
            relevant[w.0] = true;
        }
        for i in 0..=output.0 {
            if relevant[i] || !needed[i] {
                continue;
            }
            let (ins, n) = self.nodes[i].op.inputs();
            relevant[i] = ins.iter().take(n).flatten().any(|id| relevant[id.0]);
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &values, &relevant, &mut grads);
            grads[i] = Some(g);
        }
        let out = wrt
            .iter()
            .map(|w| grads[w.0].clone().unwrap_or_else(|| Tensor::zeros(self.shape(*w))))
            .collect();
        Ok((value, out))
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor,
        values: &[Option<Tensor>],
        relevant: &[bool],
        grads: &mut [Option<Tensor>],
    ) {
        let val = |id: NodeId| values[id.0].as_ref().expect("forward value");
        let want = |id: NodeId| relevant[id.0];
        let mut acc = |id: NodeId, t: Tensor| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Const(_) | Op::RowNonzeroMask(_) => {}
            Op::Add(a, b) => {
                if want(*a) {
                    acc(*a, reduce_to(g, self.shape(*a)));
                }
                if want(*b) {
                    acc(*b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    acc(*a, reduce_to(g, self.shape(*a)));
                }
                if want(*b) {
                    acc(*b, reduce_to(&g.map(|x| -x), self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if want(*a) {
                    let ga = broadcast_map(g, vb, node.shape, |x, y| x * y);
                    acc(*a, reduce_to(&ga, va.shape()));
                }
                if want(*b) {
                    let gb = broadcast_map(g, va, node.shape, |x, y| x * y);
                    acc(*b, reduce_to(&gb, vb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if want(*a) {
                    let ga = broadcast_map(g, vb, node.shape, |x, y| x / y);
                    acc(*a, reduce_to(&ga, va.shape()));
                }
                if want(*b) {
                    let ratio = broadcast_map(va, vb, node.shape, |x, y| x / (y * y));
                    let gb = g.zip_map(&ratio, |x, r| -x * r);
                    acc(*b, reduce_to(&gb, vb.shape()));
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                if want(*a) {
                    let mut ga = Tensor::zeros(va.shape());
                    // C = A B: dA = G Bᵀ;  C = A Bᵀ: dA = G B
                    gemm_acc(g, false, vb, !*trans_b, &mut ga);
                    acc(*a, ga);
                }
                if want(*b) {
                    let mut gb = Tensor::zeros(vb.shape());
                    if *trans_b {
                        // dB = Gᵀ A
                        gemm_acc(g, true, va, false, &mut gb);
                    } else {
                        // dB = Aᵀ G
                        gemm_acc(va, true, g, false, &mut gb);
                    }
                    acc(*b, gb);
                }
            }
            Op::Dot(a, b) => {
                let s = g.as_slice()[0];
                let (va, vb) = (val(*a), val(*b));
                if want(*a) {
                    acc(*a, vb.map(|y| y * s));
                }
                if want(*b) {
                    acc(*b, va.map(|x| x * s));
                }
            }
            Op::Neg(a) => acc(*a, g.map(|x| -x)),
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Offset(a, _) => acc(*a, g.clone()),
            Op::ClampMin(a, c) => acc(*a, g.zip_map(val(*a), |gx, x| if x >= *c { gx } else { 0.0 })),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gx, x| 2.0 * x * gx)),
            Op::SumSq(a) => {
                let s = g.as_slice()[0];
                acc(*a, val(*a).map(|x| 2.0 * x * s));
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.shape(*a), g.as_slice()[0])),
            Op::RowSum(a) => {
                let sa = self.shape(*a);
                let mut out = Tensor::zeros(sa);
                for r in 0..sa.rows {
                    let gr = g.as_slice()[r];
                    out.row_slice_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                acc(*a, out);
            }
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Smooth(a, d) => acc(*a, g.zip_map(val(*a), |gx, x| gx * smooth_relu_prime(x, *d))),
            Op::SmoothPrime(a, d) => acc(*a, g.zip_map(val(*a), |gx, x| gx * smooth_relu_second(x, *d))),
            Op::SmoothDiff { base, delta, d } => {
                let (vb, ve) = (val(*base), val(*delta));
                if want(*base) {
                    let slope = broadcast_map(vb, ve, node.shape, |b, e| {
                        smooth_relu_prime(b + e, *d) - smooth_relu_prime(b, *d)
                    });
                    acc(*base, reduce_to(&g.zip_map(&slope, |x, y| x * y), vb.shape()));
                }
                if want(*delta) {
                    let slope = broadcast_map(vb, ve, node.shape, |b, e| smooth_relu_prime(b + e, *d));
                    acc(*delta, reduce_to(&g.zip_map(&slope, |x, y| x * y), ve.shape()));
                }
            }
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |gx, x| gx * sigmoid(x))),
            Op::Sigmoid(a) => {
                let out = values[i].as_ref().expect("forward value");
                acc(*a, g.zip_map(out, |gx, s| gx * s * (1.0 - s)));
            }
            Op::Exp(a) => {
                let out = values[i].as_ref().expect("forward value");
                acc(*a, g.zip_map(out, |gx, e| gx * e));
            }
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gx, x| gx / x)),
            Op::Sin(a) => acc(*a, g.zip_map(val(*a), |gx, x| gx * x.cos())),
            Op::Cos(a) => acc(*a, g.zip_map(val(*a), |gx, x| -gx * x.sin())),
        }
    }
}

fn broadcast_map(a: &Tensor, b: &Tensor, out: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == out && b.shape() == out {
        return a.zip_map(b, f);
    }
    let (sa, sb) = (a.shape(), b.shape());
    let mut res = Tensor::zeros(out);
    let dst = res.as_mut_slice();
    for r in 0..out.rows {
        let ra = if sa.rows == 1 { 0 } else { r };
        let rb = if sb.rows == 1 { 0 } else { r };
        for c in 0..out.cols {
            let ca = if sa.cols == 1 { 0 } else { c };
            let cb = if sb.cols == 1 { 0 } else { c };
            dst[r * out.cols + c] = f(a.get(ra, ca), b.get(rb, cb));
        }
    }
    res
}

/// Sums `g` over the dimensions that were broadcast to reach its shape.
fn reduce_to(g: &Tensor, target: Shape) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let gs = g.shape();
    let mut out = Tensor::zeros(target);
    for r in 0..gs.rows {
        let tr = if target.rows == 1 { 0 } else { r };
        for c in 0..gs.cols {
            let tc = if target.cols == 1 { 0 } else { c };
            let v = out.get(tr, tc) + g.get(r, c);
            out.set(tr, tc, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(build: impl Fn(&mut ExprGraph, NodeId) -> NodeId, x: f64) -> (f64, f64) {
        let mut g = ExprGraph::new();
        let xi = g.input(Shape::SCALAR);
        let out = build(&mut g, xi);
        let mut b = Binding::new();
        b.bind(xi, Tensor::scalar(x));
        let (v, grads) = g.value_and_grad(&b, out, &[xi]).unwrap();
        (v, grads[0].as_slice()[0])
    }

    #[test]
    fn square_value_and_derivative() {
        let (v, d) = scalar_graph(|g, x| g.mul(x, x).unwrap(), 3.0);
        assert_eq!(v, 9.0);
        assert_eq!(d, 6.0);
    }

    #[test]
    fn smoothed_relu_branches() {
        let (v, _) = scalar_graph(|g, x| g.smooth_relu(x, 0.37).unwrap(), -1.0);
        assert_eq!(v, 0.0);
        let (v, d) = scalar_graph(|g, x| g.smooth_relu(x, 0.1).unwrap(), 0.05);
        assert!((v - 0.0125).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_prime_subgradient_at_kinks() {
        assert_eq!(smooth_relu_second(0.0, 0.1), 0.0);
        assert_eq!(smooth_relu_second(0.1, 0.1), 10.0);
        assert_eq!(smooth_relu_second(0.2, 0.1), 0.0);
    }

    #[test]
    fn linear_form_gradient_is_input() {
        let mut g = ExprGraph::new();
        let w = g.input(Shape::new(2, 1));
        let x = g.constant(Tensor::column(&[1.0, 2.0]));
        let out = g.dot(w, x).unwrap();
        let mut b = Binding::new();
        b.bind(w, Tensor::column(&[0.3, -0.7]));
        let grads = g.backward(&b, out, &[w]).unwrap();
        assert_eq!(grads[0].as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn missing_binding_is_reported() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::SCALAR);
        let y = g.square(x).unwrap();
        assert!(matches!(g.eval(&Binding::new(), y), Err(Error::MissingBinding(0))));
    }

    #[test]
    fn binding_shape_mismatch_is_reported() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::new(2, 1));
        let mut b = Binding::new();
        b.bind(x, Tensor::scalar(1.0));
        assert!(matches!(g.eval(&b, x), Err(Error::Shape(_))));
    }

    #[test]
    fn insertion_rejects_incompatible_shapes() {
        let mut g = ExprGraph::new();
        let a = g.input(Shape::new(2, 3));
        let b = g.input(Shape::new(3, 2));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.matmul(a, b).is_ok());
        assert!(g.matvec(a, b).is_err());
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::new(2, 1));
        let mut b = Binding::new();
        b.bind(x, Tensor::column(&[1.0, 2.0]));
        assert!(matches!(g.backward(&b, x, &[x]), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_nodes_get_zero_gradients() {
        let mut g = ExprGraph::new();
        let x = g.input(Shape::SCALAR);
        let unused = g.input(Shape::new(3, 2));
        let y = g.square(x).unwrap();
        let mut b = Binding::new();
        b.bind(x, Tensor::scalar(2.0));
        let grads = g.backward(&b, y, &[unused]).unwrap();
        assert_eq!(grads[0], Tensor::zeros(Shape::new(3, 2)));
    }

    #[test]
    fn broadcast_gradients_reduce_back() {
        // sum(A + b) with b broadcast over rows: db = number of rows per column
        let mut g = ExprGraph::new();
        let a = g.input(Shape::new(3, 2));
        let bias = g.input(Shape::new(1, 2));
        let s = g.add(a, bias).unwrap();
        let out = g.sum(s).unwrap();
        let mut b = Binding::new();
        b.bind(a, Tensor::zeros(Shape::new(3, 2)));
        b.bind(bias, Tensor::row(&[1.0, 2.0]));
        let grads = g.backward(&b, out, &[bias]).unwrap();
        assert_eq!(grads[0].as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn smooth_diff_matches_difference_and_cancels_exactly() {
        let d = 0.1;
        for (b, e) in [
            (-0.3, 0.2),
            (-0.05, 0.1),
            (0.02, 0.03),
            (0.05, 0.4),
            (0.7, -0.65),
            (1.3, 0.25),
        ] {
            let expect = smooth_relu(b + e, d) - smooth_relu(b, d);
            assert!((smooth_relu_diff(b, e, d) - expect).abs() < 1e-15);
        }
        assert_eq!(smooth_relu_diff(0.3 + 1e-9, 0.123, d), 0.123);
        assert_eq!(smooth_relu_diff(-0.2, 0.1, d), 0.0);

        let mut g = ExprGraph::new();
        let base = g.input(Shape::new(1, 3));
        let delta = g.input(Shape::new(2, 3));
        let diff = g.smooth_relu_diff(base, delta, d).unwrap();
        let out = g.sum_sq(diff).unwrap();
        let mut bind = Binding::new();
        bind.bind(base, Tensor::row(&[-0.03, 0.04, 0.5]));
        bind.bind(
            delta,
            Tensor::from_rows(&[[0.05, 0.01, 0.2], [-0.4, 0.09, -0.47]]).unwrap(),
        );
        assert!(crate::diff::check_grad(&g, &bind, out, base, 1e-6).unwrap() < 1e-6);
        assert!(crate::diff::check_grad(&g, &bind, out, delta, 1e-6).unwrap() < 1e-6);
    }
}
