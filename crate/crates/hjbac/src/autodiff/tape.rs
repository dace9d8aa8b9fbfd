//! Reverse-mode automatic differentiation over dense vector operations.
//!
//! A [`Tape`] records a computation as a flat list of nodes in topological
//! order (inputs always precede consumers). Forward values are computed
//! eagerly as nodes are pushed, so intermediate results can drive control
//! flow (step-size branches, exit tests) while the graph is being built.
//! [`Tape::backward`] then runs a single reverse sweep from a scalar root,
//! accumulating adjoints; parameter-leaf adjoints are collected per group
//! with [`Tape::group_grad`].
//!
//! The op set is deliberately small: affine maps, elementwise arithmetic,
//! the residual activation `x + ReLU(x)`, a handful of reductions, and a
//! stop-gradient marker. That is enough to express every loss in this crate,
//! including losses that unroll a full trajectory.

use thiserror::Error;

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding arbitrary constant data (inputs, noises, cached steps).
    Const,
    /// Leaf viewing a slice of a parameter group; the (group, offset)
    /// registry that feeds `group_grad` lives on the tape itself.
    Param,
    /// Forwards the value, drops the adjoint.
    StopGrad,
    /// `y = W x + b` with `W` a `rows x cols` matrix stored row-major.
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Relu(NodeId),
    /// Residual activation `x + ReLU(x)`.
    ResAct(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    /// `y = sum_i x_i^2` (scalar).
    SqNorm(NodeId),
    /// `y = a . b` (scalar).
    Dot(NodeId, NodeId),
    /// Elementwise `max(x, c)` with a compile-time constant.
    MaxConst(NodeId, f64),
    Concat(NodeId, NodeId),
    /// Contiguous sub-range of a vector node; the adjoint of `Concat`.
    Slice { x: NodeId, start: u32 },
    /// Scalar node replicated to a vector.
    Broadcast(NodeId),
    /// Elementwise multiply by a compile-time constant.
    Scale(NodeId, f64),
    /// Elementwise add of a constant (applied when the node is pushed;
    /// the derivative does not depend on it).
    AddConst(NodeId),
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("non-finite value in tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGrad { index: usize },
}

/// Define-by-run reverse-mode tape. Single-owner; not `Sync` during use.
pub struct Tape {
    ops: Vec<Op>,
    off: Vec<u32>,
    len: Vec<u32>,
    buf: Vec<f64>,
    adj: Vec<f64>,
    /// `(node, group, offset)` for every `Param` leaf, in creation order.
    params: Vec<(NodeId, u32, u32)>,
    group_len: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            off: Vec::new(),
            len: Vec::new(),
            buf: Vec::new(),
            adj: Vec::new(),
            params: Vec::new(),
            group_len: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    /// Registers a parameter group of `len` slots and returns its index.
    /// Groups exist so one tape can differentiate w.r.t. several networks
    /// (e.g. value and gradient nets) in a single backward sweep.
    pub fn add_group(&mut self, len: usize) -> usize {
        self.group_len.push(len);
        self.group_len.len() - 1
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        let id = NodeId(self.ops.len() as u32);
        self.ops.push(op);
        self.off.push(self.buf.len() as u32);
        self.len.push(len as u32);
        self.buf.resize(self.buf.len() + len, 0.0);
        id
    }

    #[inline]
    fn span(&self, id: NodeId) -> (usize, usize) {
        let i = id.idx();
        (self.off[i] as usize, self.len[i] as usize)
    }

    /// Forward value of a node.
    #[inline]
    pub fn value(&self, id: NodeId) -> &[f64] {
        let (o, l) = self.span(id);
        &self.buf[o..o + l]
    }

    /// Forward value of a scalar node.
    #[inline]
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let (o, l) = self.span(id);
        assert_eq!(l, 1, "scalar_value on a vector node");
        self.buf[o]
    }

    pub fn node_len(&self, id: NodeId) -> usize {
        self.len[id.idx()] as usize
    }

    /// Adjoint of a node after [`Tape::backward`]. For a `Const` input leaf
    /// this is the gradient of the root w.r.t. that input.
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        assert!(!self.adj.is_empty(), "adjoint read before backward");
        let (o, l) = self.span(id);
        &self.adj[o..o + l]
    }

    // ---- leaves ----

    pub fn constant(&mut self, data: &[f64]) -> NodeId {
        let id = self.push(Op::Const, data.len());
        let (o, l) = self.span(id);
        self.buf[o..o + l].copy_from_slice(data);
        id
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(&[v])
    }

    /// Parameter leaf viewing `values` (copied onto the tape) located at
    /// `offset` within `group`'s flat layout.
    pub fn param(&mut self, group: usize, offset: usize, values: &[f64]) -> NodeId {
        assert!(
            offset + values.len() <= self.group_len[group],
            "param leaf [{}, {}) exceeds group length {}",
            offset,
            offset + values.len(),
            self.group_len[group]
        );
        let id = self.push(Op::Param, values.len());
        let (o, l) = self.span(id);
        self.buf[o..o + l].copy_from_slice(values);
        self.params.push((id, group as u32, offset as u32));
        id
    }

    // ---- ops ----

    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let (xo, xl) = self.span(x);
        let id = self.push(Op::StopGrad, xl);
        let (o, _) = self.span(id);
        self.buf.copy_within(xo..xo + xl, o);
        id
    }

    /// `y = W x + b`; `b` fixes the output length, `x` the input length,
    /// and `W` must hold exactly `rows * cols` entries row-major.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let (wo, wl) = self.span(w);
        let (bo, rows) = self.span(b);
        let (xo, cols) = self.span(x);
        assert_eq!(wl, rows * cols, "affine: weight shape mismatch");
        let id = self.push(Op::Affine { w, b, x }, rows);
        let (o, _) = self.span(id);
        for r in 0..rows {
            let row = wo + r * cols;
            let acc = crate::util::dot4(&self.buf[row..row + cols], &self.buf[xo..xo + cols])
                + self.buf[bo + r];
            self.buf[o + r] = acc;
        }
        id
    }

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "elementwise op on mismatched lengths");
        let id = self.push(op, al);
        let (o, _) = self.span(id);
        for i in 0..al {
            self.buf[o + i] = f(self.buf[ao + i], self.buf[bo + i]);
        }
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Div(a, b), a, b, |x, y| x / y)
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let (xo, xl) = self.span(x);
        let id = self.push(op, xl);
        let (o, _) = self.span(id);
        for i in 0..xl {
            self.buf[o + i] = f(self.buf[xo + i]);
        }
        id
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu(x), x, |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Residual activation `x + ReLU(x)` (doubles positive inputs).
    pub fn res_act(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::ResAct(x), x, |v| if v > 0.0 { v + v } else { v })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp(x), x, f64::exp)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sqrt(x), x, f64::sqrt)
    }

    pub fn max_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::MaxConst(x, c), x, |v| v.max(c))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        self.unary(Op::Scale(x, k), x, |v| v * k)
    }

    pub fn add_const(&mut self, x: NodeId, k: f64) -> NodeId {
        self.unary(Op::AddConst(x), x, |v| v + k)
    }

    pub fn sq_norm(&mut self, x: NodeId) -> NodeId {
        let (xo, xl) = self.span(x);
        let id = self.push(Op::SqNorm(x), 1);
        let (o, _) = self.span(id);
        let mut acc = 0.0;
        for i in 0..xl {
            acc += self.buf[xo + i] * self.buf[xo + i];
        }
        self.buf[o] = acc;
        id
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        assert_eq!(al, bl, "dot on mismatched lengths");
        let id = self.push(Op::Dot(a, b), 1);
        let (o, _) = self.span(id);
        let mut acc = 0.0;
        for i in 0..al {
            acc += self.buf[ao + i] * self.buf[bo + i];
        }
        self.buf[o] = acc;
        id
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ao, al) = self.span(a);
        let (bo, bl) = self.span(b);
        let id = self.push(Op::Concat(a, b), al + bl);
        let (o, _) = self.span(id);
        self.buf.copy_within(ao..ao + al, o);
        self.buf.copy_within(bo..bo + bl, o + al);
        id
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (xo, xl) = self.span(x);
        assert!(start + len <= xl, "slice out of range");
        let id = self.push(
            Op::Slice {
                x,
                start: start as u32,
            },
            len,
        );
        let (o, _) = self.span(id);
        self.buf.copy_within(xo + start..xo + start + len, o);
        id
    }

    /// Replicates a scalar node to a vector of length `len`.
    pub fn broadcast(&mut self, s: NodeId, len: usize) -> NodeId {
        let (so, sl) = self.span(s);
        assert_eq!(sl, 1, "broadcast source must be scalar");
        let v = self.buf[so];
        let id = self.push(Op::Broadcast(s), len);
        let (o, _) = self.span(id);
        self.buf[o..o + len].fill(v);
        id
    }

    /// Scans every forward value; reports the first non-finite node.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        for i in 0..self.ops.len() {
            let (o, l) = (self.off[i] as usize, self.len[i] as usize);
            for v in &self.buf[o..o + l] {
                if !v.is_finite() {
                    return Err(AutodiffError::NonFinite {
                        node: i,
                        op: op_name(&self.ops[i]),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `root`. Fails fast if any forward value
    /// is non-finite; panics if `root` is not scalar (contract violation).
    pub fn backward(&mut self, root: NodeId) -> Result<(), AutodiffError> {
        assert_eq!(self.node_len(root), 1, "backward root must be scalar");
        self.check_finite()?;
        self.adj.clear();
        self.adj.resize(self.buf.len(), 0.0);
        self.adj[self.off[root.idx()] as usize] = 1.0;

        for i in (0..self.ops.len()).rev() {
            let (yo, yl) = (self.off[i] as usize, self.len[i] as usize);
            let op = self.ops[i].clone();
            match op {
                Op::Const | Op::Param | Op::StopGrad => {}
                Op::Affine { w, b, x } => {
                    let (wo, _) = self.span(w);
                    let (bo, rows) = self.span(b);
                    let (xo, cols) = self.span(x);
                    debug_assert_eq!(rows, yl);
                    for r in 0..rows {
                        let dy = self.adj[yo + r];
                        if dy == 0.0 {
                            continue;
                        }
                        self.adj[bo + r] += dy;
                        let row = wo + r * cols;
                        for c in 0..cols {
                            self.adj[row + c] += dy * self.buf[xo + c];
                            self.adj[xo + c] += dy * self.buf[row + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (ao, _) = self.span(a);
                    let (bo, _) = self.span(b);
                    for i in 0..yl {
                        let dy = self.adj[yo + i];
                        self.adj[ao + i] += dy;
                        self.adj[bo + i] += dy;
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = self.span(a);
                    let (bo, _) = self.span(b);
                    for i in 0..yl {
                        let dy = self.adj[yo + i];
                        self.adj[ao + i] += dy;
                        self.adj[bo + i] -= dy;
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = self.span(a);
                    let (bo, _) = self.span(b);
                    for i in 0..yl {
                        let dy = self.adj[yo + i];
                        self.adj[ao + i] += dy * self.buf[bo + i];
                        self.adj[bo + i] += dy * self.buf[ao + i];
                    }
                }
                Op::Div(a, b) => {
                    let (ao, _) = self.span(a);
                    let (bo, _) = self.span(b);
                    for i in 0..yl {
                        let dy = self.adj[yo + i];
                        let bi = self.buf[bo + i];
                        self.adj[ao + i] += dy / bi;
                        self.adj[bo + i] -= dy * self.buf[yo + i] / bi;
                    }
                }
                Op::Relu(x) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        if self.buf[xo + i] > 0.0 {
                            self.adj[xo + i] += self.adj[yo + i];
                        }
                    }
                }
                Op::ResAct(x) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        let g = if self.buf[xo + i] > 0.0 { 2.0 } else { 1.0 };
                        self.adj[xo + i] += g * self.adj[yo + i];
                    }
                }
                Op::Exp(x) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        self.adj[xo + i] += self.adj[yo + i] * self.buf[yo + i];
                    }
                }
                Op::Sqrt(x) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        let y = self.buf[yo + i];
                        // Subgradient 0 at the origin, matching the ReLU
                        // convention and avoiding inf * 0 poisoning.
                        if y > 0.0 {
                            self.adj[xo + i] += self.adj[yo + i] / (2.0 * y);
                        }
                    }
                }
                Op::SqNorm(x) => {
                    let (xo, xl) = self.span(x);
                    let dy = self.adj[yo];
                    for i in 0..xl {
                        self.adj[xo + i] += 2.0 * dy * self.buf[xo + i];
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, al) = self.span(a);
                    let (bo, _) = self.span(b);
                    let dy = self.adj[yo];
                    for i in 0..al {
                        self.adj[ao + i] += dy * self.buf[bo + i];
                        self.adj[bo + i] += dy * self.buf[ao + i];
                    }
                }
                Op::MaxConst(x, c) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        if self.buf[xo + i] > c {
                            self.adj[xo + i] += self.adj[yo + i];
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let (ao, al) = self.span(a);
                    let (bo, bl) = self.span(b);
                    for i in 0..al {
                        self.adj[ao + i] += self.adj[yo + i];
                    }
                    for i in 0..bl {
                        self.adj[bo + i] += self.adj[yo + al + i];
                    }
                }
                Op::Slice { x, start } => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        self.adj[xo + start as usize + i] += self.adj[yo + i];
                    }
                }
                Op::Broadcast(s) => {
                    let (so, _) = self.span(s);
                    let mut acc = 0.0;
                    for i in 0..yl {
                        acc += self.adj[yo + i];
                    }
                    self.adj[so] += acc;
                }
                Op::Scale(x, k) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        self.adj[xo + i] += k * self.adj[yo + i];
                    }
                }
                Op::AddConst(x) => {
                    let (xo, _) = self.span(x);
                    for i in 0..yl {
                        self.adj[xo + i] += self.adj[yo + i];
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last backward root w.r.t. parameter group `group`,
    /// assembled in the group's flat layout. Param leaves sharing offsets
    /// accumulate, so a network bound once and evaluated many times (or
    /// bound several times) yields the correct summed gradient.
    pub fn group_grad(&self, group: usize) -> Vec<f64> {
        assert!(!self.adj.is_empty(), "group_grad read before backward");
        let mut g = vec![0.0; self.group_len[group]];
        for &(node, gr, offset) in &self.params {
            if gr as usize != group {
                continue;
            }
            let (o, l) = self.span(node);
            let dst = &mut g[offset as usize..offset as usize + l];
            for i in 0..l {
                dst[i] += self.adj[o + i];
            }
        }
        g
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Const => "const",
        Op::Param => "param",
        Op::StopGrad => "stop_grad",
        Op::Affine { .. } => "affine",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Relu(_) => "relu",
        Op::ResAct(_) => "res_act",
        Op::Exp(_) => "exp",
        Op::Sqrt(_) => "sqrt",
        Op::SqNorm(_) => "sq_norm",
        Op::Dot(..) => "dot",
        Op::MaxConst(..) => "max_const",
        Op::Concat(..) => "concat",
        Op::Slice { .. } => "slice",
        Op::Broadcast(_) => "broadcast",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
    }
}
