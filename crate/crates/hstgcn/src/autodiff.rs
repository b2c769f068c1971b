//! Reverse-mode automatic differentiation over a define-then-run compute
//! graph.
//!
//! A [`Graph`] is built once: every operator call appends a node, infers
//! the output shape immediately, and rejects incompatible operands at
//! build time. [`Graph::forward`] evaluates all nodes against a set of
//! named input tensors and the current parameter values;
//! [`Graph::backward`] walks the same nodes in reverse and accumulates
//! vector-Jacobian products into per-parameter gradients.

use crate::error::{Error, Result};
use crate::tensor::{
    broadcast_shape, broadcast_zip, conv1d_valid, conv1d_valid_grads, matmul_2d_into,
    matmul_a_bt_into, matmul_at_b_into, reduce_to_shape, Tensor,
};
use indexmap::IndexMap;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Named runtime input; value supplied per forward pass.
    Input { name: String },
    /// Named trainable parameter; value lives in the graph.
    Param { name: String },
    /// Fixed tensor baked into the graph (e.g. a scaled Laplacian).
    Constant(Tensor),
    /// 2D x 2D, 3D x 2D (shared right factor) or 3D x 3D (batched).
    MatMul(NodeId, NodeId),
    /// Valid 1D convolution along axis 1; kernel is [k, c_in, c_out].
    Conv1d(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Elu(NodeId),
    Sigmoid(NodeId),
    Concat { axis: usize, inputs: Vec<NodeId> },
    Slice { input: NodeId, axis: usize, start: usize, len: usize },
    Reshape(NodeId),
    MeanAll(NodeId),
    Abs(NodeId),
    Scale { input: NodeId, factor: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Forward values for every node of one evaluation.
pub struct Values {
    vals: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.vals[id.0]
    }
}

/// Gradients with respect to named parameters.
pub type Grads = IndexMap<String, Tensor>;

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: IndexMap<String, NodeId>,
    params: IndexMap<String, NodeId>,
    param_values: IndexMap<String, Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    // ---- leaves -------------------------------------------------------

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if self.inputs.contains_key(name) {
            return Err(Error::Graph(format!("duplicate input name {name:?}")));
        }
        let id = self.push(Op::Input { name: name.to_string() }, shape.to_vec());
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param(&mut self, name: &str, init: Tensor) -> Result<NodeId> {
        if self.param_values.contains_key(name) {
            return Err(Error::Graph(format!("duplicate parameter name {name:?}")));
        }
        let shape = init.shape().to_vec();
        let id = self.push(Op::Param { name: name.to_string() }, shape);
        self.params.insert(name.to_string(), id);
        self.param_values.insert(name.to_string(), init);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    // ---- parameter access --------------------------------------------

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.param_values.keys().map(|s| s.as_str())
    }

    pub fn param_value(&self, name: &str) -> Result<&Tensor> {
        self.param_values
            .get(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter {name:?}")))
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .param_values
            .get_mut(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?} has shape {:?}, cannot assign {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_values(&self) -> &IndexMap<String, Tensor> {
        &self.param_values
    }

    pub fn param_count(&self) -> usize {
        self.param_values.values().map(|t| t.numel()).sum()
    }

    // ---- operators ----------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = match (sa.as_slice(), sb.as_slice()) {
            ([m, k1], [k2, n]) if k1 == k2 => vec![*m, *n],
            ([bdim, m, k1], [k2, n]) if k1 == k2 => vec![*bdim, *m, *n],
            ([b1, m, k1], [b2, k2, n]) if b1 == b2 && k1 == k2 => vec![*b1, *m, *n],
            _ => {
                return Err(Error::Shape(format!(
                    "matmul cannot combine {sa:?} with {sb:?}"
                )))
            }
        };
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        match (sx.as_slice(), sk.as_slice()) {
            ([n, len, c_in], [k_len, kc_in, c_out]) if c_in == kc_in && len >= k_len => {
                let out = vec![*n, len - k_len + 1, *c_out];
                Ok(self.push(Op::Conv1d(x, kernel), out))
            }
            _ => Err(Error::Shape(format!(
                "conv1d cannot combine input {sx:?} with kernel {sk:?}"
            ))),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_shape(self.shape(a), self.shape(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_shape(self.shape(a), self.shape(b))?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_shape(self.shape(a), self.shape(b))?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Elu(x), shape)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid(x), shape)
    }

    pub fn concat(&mut self, axis: usize, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Graph("concat of zero inputs".into()));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut out = first.clone();
        for &id in &inputs[1..] {
            let s = self.shape(id);
            if s.len() != first.len() {
                return Err(Error::Shape(format!(
                    "concat rank mismatch: {first:?} vs {s:?}"
                )));
            }
            for (d, (&a, &b)) in first.iter().zip(s).enumerate() {
                if d != axis && a != b {
                    return Err(Error::Shape(format!(
                        "concat dim {d} mismatch: {first:?} vs {s:?}"
                    )));
                }
            }
            out[axis] += s[axis];
        }
        Ok(self.push(
            Op::Concat { axis, inputs: inputs.to_vec() },
            out,
        ))
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!(
                "slice axis {axis} out of range for {s:?}"
            )));
        }
        if len == 0 || start + len > s[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {start}+{len}) out of range for axis {axis} of {s:?}"
            )));
        }
        let mut out = s;
        out[axis] = len;
        Ok(self.push(Op::Slice { input, axis, start, len }, out))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        let have: usize = self.shape(input).iter().product();
        if numel != have {
            return Err(Error::Shape(format!(
                "reshape {:?} ({have} elements) to {shape:?} ({numel} elements)",
                self.shape(input)
            )));
        }
        Ok(self.push(Op::Reshape(input), shape.to_vec()))
    }

    pub fn mean_all(&mut self, input: NodeId) -> NodeId {
        self.push(Op::MeanAll(input), vec![1])
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        let shape = self.shape(input).to_vec();
        self.push(Op::Abs(input), shape)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let shape = self.shape(input).to_vec();
        self.push(Op::Scale { input, factor }, shape)
    }

    // ---- evaluation ---------------------------------------------------

    /// Evaluate every node. All declared inputs must be bound with the
    /// declared shape; extra bindings are rejected.
    pub fn forward(&self, bindings: &IndexMap<String, Tensor>) -> Result<Values> {
        for name in bindings.keys() {
            if !self.inputs.contains_key(name) {
                return Err(Error::Graph(format!("binding for unknown input {name:?}")));
            }
        }
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input { name } => {
                    let t = bindings
                        .get(name)
                        .ok_or_else(|| Error::Graph(format!("missing input {name:?}")))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "input {name:?} declared {:?}, bound {:?}",
                            node.shape,
                            t.shape()
                        )));
                    }
                    t.clone()
                }
                Op::Param { name } => self.param_values[name].clone(),
                Op::Constant(t) => t.clone(),
                Op::MatMul(a, b) => forward_matmul(&vals[a.0], &vals[b.0])?,
                Op::Conv1d(x, k) => conv1d_valid(&vals[x.0], &vals[k.0])?,
                Op::Add(a, b) => broadcast_zip(&vals[a.0], &vals[b.0], |x, y| x + y)?,
                Op::Sub(a, b) => broadcast_zip(&vals[a.0], &vals[b.0], |x, y| x - y)?,
                Op::Mul(a, b) => broadcast_zip(&vals[a.0], &vals[b.0], |x, y| x * y)?,
                Op::Elu(x) => vals[x.0].map(|v| if v > 0.0 { v } else { v.exp() - 1.0 }),
                Op::Sigmoid(x) => vals[x.0].map(sigmoid),
                Op::Concat { axis, inputs } => {
                    forward_concat(*axis, inputs, &vals, &node.shape)?
                }
                Op::Slice { input, axis, start, len } => {
                    forward_slice(&vals[input.0], *axis, *start, *len)
                }
                Op::Reshape(x) => vals[x.0].reshape(&node.shape)?,
                Op::MeanAll(x) => {
                    let v = &vals[x.0];
                    let mean = v.data().iter().sum::<f64>() / v.numel() as f64;
                    Tensor::scalar(mean)
                }
                Op::Abs(x) => vals[x.0].map(f64::abs),
                Op::Scale { input, factor } => vals[input.0].map(|v| v * factor),
            };
            vals.push(value);
        }
        Ok(Values { vals })
    }

    /// Reverse pass from a scalar `output` node; returns gradients for all
    /// parameters that `output` depends on (others get zero tensors).
    pub fn backward(&self, values: &Values, output: NodeId) -> Result<Grads> {
        Ok(self.backward_with_inputs(values, output)?.0)
    }

    /// Like [`Graph::backward`] but also returns gradients with respect to
    /// the named runtime inputs.
    pub fn backward_with_inputs(
        &self,
        values: &Values,
        output: NodeId,
    ) -> Result<(Grads, Grads)> {
        if self.nodes[output.0].shape != [1] {
            return Err(Error::Graph(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[output.0].shape
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Tensor::scalar(1.0));
        let mut grads: Grads = IndexMap::new();
        for name in self.param_values.keys() {
            grads.insert(
                name.clone(),
                Tensor::zeros(self.param_values[name].shape()),
            );
        }
        let mut input_grads: Grads = IndexMap::new();
        for (name, id) in &self.inputs {
            input_grads.insert(name.clone(), Tensor::zeros(&self.nodes[id.0].shape));
        }
        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Constant(_) => {}
                Op::Input { name } => {
                    accumulate_into(input_grads.get_mut(name).expect("input grad slot"), &g);
                }
                Op::Param { name } => {
                    accumulate_into(grads.get_mut(name).expect("param grad slot"), &g);
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = backward_matmul(&values.vals[a.0], &values.vals[b.0], &g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Conv1d(x, k) => {
                    let (gx, gk) = conv1d_valid_grads(&values.vals[x.0], &values.vals[k.0], &g)?;
                    accumulate(&mut adj, *x, gx);
                    accumulate(&mut adj, *k, gk);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, reduce_to_shape(&g, self.shape(*a)));
                    accumulate(&mut adj, *b, reduce_to_shape(&g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, reduce_to_shape(&g, self.shape(*a)));
                    let neg = g.map(|v| -v);
                    accumulate(&mut adj, *b, reduce_to_shape(&neg, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let ga = broadcast_zip(&g, &values.vals[b.0], |x, y| x * y)?;
                    let gb = broadcast_zip(&g, &values.vals[a.0], |x, y| x * y)?;
                    accumulate(&mut adj, *a, reduce_to_shape(&ga, self.shape(*a)));
                    accumulate(&mut adj, *b, reduce_to_shape(&gb, self.shape(*b)));
                }
                Op::Elu(x) => {
                    let xv = &values.vals[x.0];
                    let gx = elementwise_grad(&g, xv, |v| if v > 0.0 { 1.0 } else { v.exp() });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let xv = &values.vals[x.0];
                    let gx = elementwise_grad(&g, xv, |v| {
                        let s = sigmoid(v);
                        s * (1.0 - s)
                    });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Concat { axis, inputs } => {
                    let mut start = 0;
                    for &inp in inputs {
                        let len = self.shape(inp)[*axis];
                        let piece = forward_slice(&g, *axis, start, len);
                        accumulate(&mut adj, inp, piece);
                        start += len;
                    }
                }
                Op::Slice { input, axis, start, len } => {
                    let gx = scatter_slice(self.shape(*input), &g, *axis, *start, *len);
                    accumulate(&mut adj, *input, gx);
                }
                Op::Reshape(x) => {
                    let gx = g.reshape(self.shape(*x))?;
                    accumulate(&mut adj, *x, gx);
                }
                Op::MeanAll(x) => {
                    let n = values.vals[x.0].numel() as f64;
                    let per = g.data()[0] / n;
                    accumulate(&mut adj, *x, Tensor::full(self.shape(*x), per));
                }
                Op::Abs(x) => {
                    let xv = &values.vals[x.0];
                    let gx = elementwise_grad(&g, xv, |v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    accumulate(&mut adj, *input, g.map(|v| v * f));
                }
            }
        }
        Ok((grads, input_grads))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elementwise_grad(g: &Tensor, x: &Tensor, dfdx: impl Fn(f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&gv, &xv)| gv * dfdx(xv))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("elementwise grad shape")
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.index()] {
        Some(existing) => accumulate_into(existing, &g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn forward_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    match (a.shape(), b.shape()) {
        ([m, k], [_, n]) => {
            let out = crate::tensor::matmul_2d(a.data(), b.data(), *m, *k, *n);
            Tensor::new(vec![*m, *n], out)
        }
        ([bs, m, k], [_, n]) => {
            // shared right factor: flatten batch into rows
            let rows = bs * m;
            let out = crate::tensor::matmul_2d(a.data(), b.data(), rows, *k, *n);
            Tensor::new(vec![*bs, *m, *n], out)
        }
        ([bs, m, k], [_, _, n]) => {
            let mut out = vec![0.0; bs * m * n];
            for i in 0..*bs {
                matmul_2d_into(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    *m,
                    *k,
                    *n,
                );
            }
            Tensor::new(vec![*bs, *m, *n], out)
        }
        (sa, sb) => Err(Error::Shape(format!(
            "matmul cannot combine {sa:?} with {sb:?}"
        ))),
    }
}

fn backward_matmul(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    match (a.shape(), b.shape()) {
        ([m, k], [_, n]) => {
            let mut ga = vec![0.0; m * k];
            matmul_a_bt_into(g.data(), b.data(), &mut ga, *m, *n, *k);
            let mut gb = vec![0.0; k * n];
            matmul_at_b_into(a.data(), g.data(), &mut gb, *k, *m, *n);
            Ok((
                Tensor::new(vec![*m, *k], ga)?,
                Tensor::new(vec![*k, *n], gb)?,
            ))
        }
        ([bs, m, k], [_, n]) => {
            let rows = bs * m;
            let mut ga = vec![0.0; rows * k];
            matmul_a_bt_into(g.data(), b.data(), &mut ga, rows, *n, *k);
            let mut gb = vec![0.0; k * n];
            matmul_at_b_into(a.data(), g.data(), &mut gb, *k, rows, *n);
            Ok((
                Tensor::new(vec![*bs, *m, *k], ga)?,
                Tensor::new(vec![*k, *n], gb)?,
            ))
        }
        ([bs, m, k], [_, _, n]) => {
            let mut ga = vec![0.0; bs * m * k];
            let mut gb = vec![0.0; bs * k * n];
            for i in 0..*bs {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                matmul_a_bt_into(
                    gi,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut ga[i * m * k..(i + 1) * m * k],
                    *m,
                    *n,
                    *k,
                );
                matmul_at_b_into(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    gi,
                    &mut gb[i * k * n..(i + 1) * k * n],
                    *k,
                    *m,
                    *n,
                );
            }
            Ok((
                Tensor::new(vec![*bs, *m, *k], ga)?,
                Tensor::new(vec![*bs, *k, *n], gb)?,
            ))
        }
        (sa, sb) => Err(Error::Shape(format!(
            "matmul backward cannot combine {sa:?} with {sb:?}"
        ))),
    }
}

fn forward_concat(
    axis: usize,
    inputs: &[NodeId],
    vals: &[Tensor],
    out_shape: &[usize],
) -> Result<Tensor> {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let total_axis = out_shape[axis];
    let mut out = vec![0.0; outer * total_axis * inner];
    let mut offset = 0;
    for &id in inputs {
        let t = &vals[id.index()];
        let len = t.shape()[axis];
        for o in 0..outer {
            let src = &t.data()[o * len * inner..(o + 1) * len * inner];
            let dst_start = (o * total_axis + offset) * inner;
            out[dst_start..dst_start + len * inner].copy_from_slice(src);
        }
        offset += len;
    }
    Tensor::new(out_shape.to_vec(), out)
}

fn forward_slice(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total_axis = shape[axis];
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src_start = (o * total_axis + start) * inner;
        out[o * len * inner..(o + 1) * len * inner]
            .copy_from_slice(&t.data()[src_start..src_start + len * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Tensor::new(out_shape, out).expect("slice shape")
}

fn scatter_slice(full_shape: &[usize], g: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let total_axis = full_shape[axis];
    let mut out = vec![0.0; outer * total_axis * inner];
    for o in 0..outer {
        let dst_start = (o * total_axis + start) * inner;
        out[dst_start..dst_start + len * inner]
            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::new(full_shape.to_vec(), out).expect("scatter shape")
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct FdCheck {
    /// Largest relative error over all checked elements.
    pub max_rel_err: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Number of elements checked.
    pub checked: usize,
}

/// Compare analytic gradients of the scalar `output` against central
/// differences with step `h`, for every element of every parameter and
/// every input tensor (or a strided subset capped at `max_per_tensor`
/// elements when nonzero).
///
/// Relative error per element is `|a - c| / max(|a|, |c|, 1e-8)`.
pub fn finite_difference_check(
    graph: &mut Graph,
    output: NodeId,
    bindings: &IndexMap<String, Tensor>,
    h: f64,
    max_per_tensor: usize,
) -> Result<FdCheck> {
    let values = graph.forward(bindings)?;
    let (grads, input_grads) = graph.backward_with_inputs(&values, output)?;
    let names: Vec<String> = graph.param_names().map(str::to_string).collect();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;
    let stride_for = |numel: usize| {
        if max_per_tensor == 0 || numel <= max_per_tensor {
            1
        } else {
            numel.div_ceil(max_per_tensor)
        }
    };
    let mut record = |name: &str, idx: usize, analytic: f64, central: f64| {
        let rel = (analytic - central).abs() / analytic.abs().max(central.abs()).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some((name.to_string(), idx));
        }
        checked += 1;
    };
    for name in &names {
        let numel = graph.param_value(name)?.numel();
        let stride = stride_for(numel);
        let mut idx = 0;
        while idx < numel {
            let original = graph.param_value(name)?.data()[idx];
            let mut bumped = graph.param_value(name)?.clone();
            bumped.data_mut()[idx] = original + h;
            graph.set_param(name, bumped)?;
            let plus = graph.forward(bindings)?.get(output).scalar_value()?;
            let mut bumped = graph.param_value(name)?.clone();
            bumped.data_mut()[idx] = original - h;
            graph.set_param(name, bumped)?;
            let minus = graph.forward(bindings)?.get(output).scalar_value()?;
            let mut restored = graph.param_value(name)?.clone();
            restored.data_mut()[idx] = original;
            graph.set_param(name, restored)?;

            let central = (plus - minus) / (2.0 * h);
            record(name, idx, grads[name].data()[idx], central);
            idx += stride;
        }
    }
    for (name, tensor) in bindings {
        let numel = tensor.numel();
        let stride = stride_for(numel);
        let mut idx = 0;
        while idx < numel {
            let original = tensor.data()[idx];
            let mut perturbed = bindings.clone();
            perturbed[name].data_mut()[idx] = original + h;
            let plus = graph.forward(&perturbed)?.get(output).scalar_value()?;
            perturbed[name].data_mut()[idx] = original - h;
            let minus = graph.forward(&perturbed)?.get(output).scalar_value()?;

            let central = (plus - minus) / (2.0 * h);
            record(name, idx, input_grads[name].data()[idx], central);
            idx += stride;
        }
    }
    Ok(FdCheck { max_rel_err, worst, checked })
}
