//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.
//! Scalars are `1 × 1` matrices. Element-wise operations store their local
//! derivative as the node's partials; the model-layer node
//! ([`Tape::row_objective`]) stores the gradient of its scalar output with
//! respect to its input block.

use super::dense::{gemm_nt, gemm_tn, Mat};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddRow,
    Add,
    Sub,
    Mul,
    Scale,
    Map,
    Sum,
    Mean,
    RowObjective,
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    parents: [NodeId; 2],
    value: Mat,
    partials: Option<Mat>,
    scale: f64,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::grad_reverse`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to leaf `id`; `None` when the output does not
    /// depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.adjoints.get(id).and_then(Option::as_ref)
    }
}

fn same_shape(ctx: &str, a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            format!("{ctx}: {:?} vs {:?}", a.shape(), b.shape()),
            a.rows() * a.cols(),
            b.rows() * b.cols(),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn op(&self, id: NodeId) -> OpKind {
        self.nodes[id].op
    }

    fn push(&mut self, op: OpKind, parents: [NodeId; 2], value: Mat, partials: Option<Mat>) -> NodeId {
        self.nodes.push(Node {
            op,
            parents,
            value,
            partials,
            scale: 1.0,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(OpKind::Leaf, [usize::MAX; 2], value, None)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Mat::from_vec_unchecked(1, 1, vec![value]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.cols() != vb.rows() {
            return Err(Error::dim("Tape::matmul inner", va.cols(), vb.rows()));
        }
        let out = va.matmul(vb);
        Ok(self.push(OpKind::MatMul, [a, b], out, None))
    }

    /// Adds a `1 × m` row to every row of an `n × m` block.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (&self.nodes[a].value, &self.nodes[row].value);
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::dim("Tape::add_row", va.cols(), vr.cols()));
        }
        let mut out = va.clone();
        let r = vr.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(OpKind::AddRow, [a, row], out, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("Tape::add", &self.nodes[a].value, &self.nodes[b].value)?;
        let out = self.nodes[a].value.add(&self.nodes[b].value);
        Ok(self.push(OpKind::Add, [a, b], out, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("Tape::sub", &self.nodes[a].value, &self.nodes[b].value)?;
        let out = self.nodes[a].value.sub(&self.nodes[b].value);
        Ok(self.push(OpKind::Sub, [a, b], out, None))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("Tape::mul", &self.nodes[a].value, &self.nodes[b].value)?;
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec_unchecked(va.rows(), va.cols(), data);
        Ok(self.push(OpKind::Mul, [a, b], out, None))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.nodes[a].value.scale(c);
        let id = self.push(OpKind::Scale, [a, usize::MAX], out, None);
        self.nodes[id].scale = c;
        id
    }

    /// Element-wise map; `f(column, x)` returns `(value, derivative)`.
    pub fn map<F>(&mut self, a: NodeId, f: F) -> NodeId
    where
        F: Fn(usize, f64) -> (f64, f64),
    {
        let va = &self.nodes[a].value;
        let (r, c) = va.shape();
        let mut out = Vec::with_capacity(r * c);
        let mut der = Vec::with_capacity(r * c);
        for i in 0..r {
            for (j, &x) in va.row(i).iter().enumerate() {
                let (v, d) = f(j, x);
                out.push(v);
                der.push(d);
            }
        }
        self.push(
            OpKind::Map,
            [a, usize::MAX],
            Mat::from_vec_unchecked(r, c, out),
            Some(Mat::from_vec_unchecked(r, c, der)),
        )
    }

    /// ReLU with derivative 0 at exactly 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |_, x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, |_, x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, |_, x| {
            let e = x.exp();
            (e, e)
        })
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map(a, |_, x| (x.ln(), 1.0 / x))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.map(a, |_, x| (1.0 / x, -1.0 / (x * x)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.as_slice().iter().sum();
        self.push(OpKind::Sum, [a, usize::MAX], Mat::from_vec_unchecked(1, 1, vec![s]), None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let m = v.as_slice().iter().sum::<f64>() / (v.rows() * v.cols()) as f64;
        self.push(OpKind::Mean, [a, usize::MAX], Mat::from_vec_unchecked(1, 1, vec![m]), None)
    }

    /// Scalar node whose value and gradient with respect to `a` were
    /// computed outside the tape (the model layer: a loss evaluated on each
    /// row of the parameter block).
    pub fn row_objective(&mut self, a: NodeId, value: f64, grad: Mat) -> Result<NodeId> {
        same_shape("Tape::row_objective", &self.nodes[a].value, &grad)?;
        Ok(self.push(
            OpKind::RowObjective,
            [a, usize::MAX],
            Mat::from_vec_unchecked(1, 1, vec![value]),
            Some(grad),
        ))
    }

    /// Backward sweep from a scalar output.
    pub fn grad_reverse(&self, output: NodeId) -> Gradients {
        assert_eq!(self.nodes[output].value.shape(), (1, 1), "output must be scalar");
        let mut adj: Vec<Option<Mat>> = vec![None; output + 1];
        adj[output] = Some(Mat::from_vec_unchecked(1, 1, vec![1.0]));
        for id in (0..=output).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let [p, q] = node.parents;
            match node.op {
                OpKind::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                OpKind::MatMul => {
                    let (va, vb) = (&self.nodes[p].value, &self.nodes[q].value);
                    let mut ga = Mat::zeros(va.rows(), va.cols());
                    gemm_nt(&g, vb, &mut ga);
                    accumulate(&mut adj, p, ga);
                    let mut gb = Mat::zeros(vb.rows(), vb.cols());
                    gemm_tn(va, &g, &mut gb);
                    accumulate(&mut adj, q, gb);
                }
                OpKind::AddRow => {
                    let mut gr = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, q, gr);
                    accumulate(&mut adj, p, g);
                }
                OpKind::Add => {
                    accumulate(&mut adj, q, g.clone());
                    accumulate(&mut adj, p, g);
                }
                OpKind::Sub => {
                    accumulate(&mut adj, q, g.scale(-1.0));
                    accumulate(&mut adj, p, g);
                }
                OpKind::Mul => {
                    let (va, vb) = (&self.nodes[p].value, &self.nodes[q].value);
                    accumulate(&mut adj, p, hadamard(&g, vb));
                    accumulate(&mut adj, q, hadamard(&g, va));
                }
                OpKind::Scale => accumulate(&mut adj, p, g.scale(node.scale)),
                OpKind::Map => {
                    let d = node.partials.as_ref().expect("map partials");
                    accumulate(&mut adj, p, hadamard(&g, d));
                }
                OpKind::Sum | OpKind::Mean => {
                    let v = &self.nodes[p].value;
                    let mut c = g[(0, 0)];
                    if node.op == OpKind::Mean {
                        c /= (v.rows() * v.cols()) as f64;
                    }
                    let filled = Mat::from_vec_unchecked(v.rows(), v.cols(), vec![c; v.rows() * v.cols()]);
                    accumulate(&mut adj, p, filled);
                }
                OpKind::RowObjective => {
                    let d = node.partials.as_ref().expect("objective partials");
                    accumulate(&mut adj, p, d.scale(g[(0, 0)]));
                }
            }
        }
        Gradients { adjoints: adj }
    }
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Mat::from_vec_unchecked(a.rows(), a.cols(), data)
}

fn accumulate(adj: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut adj[id] {
        Some(existing) => {
            for (e, v) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
