use super::conv::{
    conv2d_backward_input, conv2d_backward_kernel, conv2d_out_dims, conv2d_raw,
};
use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: T },
    Abs(NodeId),
    Relu(NodeId),
    LeakyRelu { x: NodeId, slope: T },
    Sigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Clamp { x: NodeId, lo: T, hi: T },
    Mean(NodeId),
    Sum(NodeId),
    SubScalarNode { x: NodeId, s: NodeId },
    Reshape(NodeId),
    NearestUpsample { x: NodeId, factor: usize },
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    BiasAdd { x: NodeId, b: NodeId },
    FullyConnected { x: NodeId, w: NodeId, b: NodeId },
    MatmulNT { a: NodeId, b: NodeId },
    MeanAxis0(NodeId),
    SubRowVec { x: NodeId, v: NodeId },
    RowSum(NodeId),
    RowMin(NodeId),
    RowwiseDiv { x: NodeId, v: NodeId },
    ColwiseDiv { x: NodeId, v: NodeId },
    SoftmaxRows(NodeId),
    ColMax(NodeId),
    SliceBatch { x: NodeId, index: usize },
    ChwToPoints(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Eager reverse-mode tape. Operations evaluate immediately and record a
/// backward rule; nodes are stored in creation order, which is already a
/// topological order, so `backward` walks indices in exact reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Elem> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. Gradients accumulate on it after `backward`
    /// when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<T>> {
        let node = &self.nodes[id.0];
        node.grad.as_ref().map(|g| {
            Tensor::new_unchecked(node.value.shape().to_vec(), g.clone())
                .expect("grad shaped like its node")
        })
    }

    /// Borrowed gradient slice of a leaf (hot path for optimizer steps).
    pub fn grad_slice(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<NodeId> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- elementwise and reduction ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let v = Tensor::new_unchecked(self.shape(a).to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        self.push("add", v, Op::Add(a, b), req)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let v = Tensor::new_unchecked(self.shape(a).to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        self.push("sub", v, Op::Sub(a, b), req)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let v = Tensor::new_unchecked(self.shape(a).to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        self.push("mul", v, Op::Mul(a, b), req)
    }

    /// `scale * x + offset`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: NodeId, scale: T, offset: T) -> Result<NodeId> {
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| scale * v + offset)
            .collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("affine", v, Op::Affine { x, scale }, req)
    }

    pub fn scale(&mut self, x: NodeId, k: T) -> Result<NodeId> {
        self.affine(x, k, T::zero())
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.nodes[x.0].value.data().iter().map(|v| v.abs()).collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("abs", v, Op::Abs(x), req)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let z = T::zero();
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| if v > z { v } else { z })
            .collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("relu", v, Op::Relu(x), req)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> Result<NodeId> {
        let z = T::zero();
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| if v > z { v } else { slope * v })
            .collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("leaky_relu", v, Op::LeakyRelu { x, slope }, req)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let one = T::one();
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| {
                if v >= T::zero() {
                    one / (one + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (one + e)
                }
            })
            .collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("sigmoid", v, Op::Sigmoid(x), req)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.data().iter().any(|v| *v <= T::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: "argument must be strictly positive".into(),
            });
        }
        let data = self.nodes[x.0].value.data().iter().map(|v| v.ln()).collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("log", v, Op::Log(x), req)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.nodes[x.0].value.data().iter().map(|v| v.exp()).collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("exp", v, Op::Exp(x), req)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: "argument must be non-negative".into(),
            });
        }
        let data = self.nodes[x.0].value.data().iter().map(|v| v.sqrt()).collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("sqrt", v, Op::Sqrt(x), req)
    }

    /// Clamp values into [lo, hi]. Gradient passes only strictly inside.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::Domain {
                op: "clamp",
                detail: "lo > hi".into(),
            });
        }
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| if v < lo { lo } else if v > hi { hi } else { v })
            .collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x);
        self.push("clamp", v, Op::Clamp { x, lo, hi }, req)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let d = self.nodes[x.0].value.data();
        let mut acc = T::zero();
        for &v in d {
            acc = acc + v;
        }
        let v = Tensor::scalar(acc / T::from_f64(d.len() as f64));
        let req = self.req(x);
        self.push("mean", v, Op::Mean(x), req)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let d = self.nodes[x.0].value.data();
        let mut acc = T::zero();
        for &v in d {
            acc = acc + v;
        }
        let req = self.req(x);
        self.push("sum", Tensor::scalar(acc), Op::Sum(x), req)
    }

    /// Subtract a scalar node from every element of `x`.
    pub fn sub_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.nodes[s.0].value.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "sub_scalar_node",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].value.item();
        let data = self.nodes[x.0].value.data().iter().map(|&v| v - sv).collect();
        let v = Tensor::new_unchecked(self.shape(x).to_vec(), data)?;
        let req = self.req(x) || self.req(s);
        self.push("sub_scalar_node", v, Op::SubScalarNode { x, s }, req)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.nodes[x.0].value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let v = Tensor::new_unchecked(shape, self.nodes[x.0].value.data().to_vec())?;
        let req = self.req(x);
        self.push("reshape", v, Op::Reshape(x), req)
    }

    /// Flatten NCHW into N x (C*H*W).
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    // ---- structured ops ----

    pub fn nearest_upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 4 || factor == 0 {
            return Err(Error::Domain {
                op: "nearest_upsample",
                detail: format!("expects NCHW and factor >= 1, got {s:?} x{factor}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let sp = &src[p * h * w..][..h * w];
            let dp = &mut out[p * oh * ow..][..oh * ow];
            for oy in 0..oh {
                let iy = oy / factor;
                for ox in 0..ow {
                    dp[oy * ow + ox] = sp[iy * w + ox / factor];
                }
            }
        }
        let v = Tensor::new_unchecked(vec![n, c, oh, ow], out)?;
        let req = self.req(x);
        self.push("nearest_upsample", v, Op::NearestUpsample { x, factor }, req)
    }

    /// Cross-correlation of NCHW input with an OIKK kernel.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ws });
        }
        if ws[2] != ws[3] {
            return Err(Error::Domain {
                op: "conv2d",
                detail: format!("kernel must be square, got {}x{}", ws[2], ws[3]),
            });
        }
        if xs[1] != ws[1] {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ws });
        }
        if stride == 0 {
            return Err(Error::Domain {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let (oh, ow) = conv2d_out_dims(xs[2], xs[3], ws[2], stride, pad).ok_or(Error::Domain {
            op: "conv2d",
            detail: format!(
                "output dims < 1 for input {}x{} kernel {} stride {stride} pad {pad}",
                xs[2], xs[3], ws[2]
            ),
        })?;
        let mut out = vec![T::zero(); xs[0] * ws[0] * oh * ow];
        conv2d_raw(
            self.nodes[x.0].value.data(),
            (xs[0], xs[1], xs[2], xs[3]),
            self.nodes[w.0].value.data(),
            (ws[0], ws[1], ws[2], ws[3]),
            stride,
            pad,
            &mut out,
            (oh, ow),
        );
        let v = Tensor::new_unchecked(vec![xs[0], ws[0], oh, ow], out)?;
        let req = self.req(x) || self.req(w);
        self.push("conv2d", v, Op::Conv2d { x, w, stride, pad }, req)
    }

    /// Add a per-channel bias vector to an NCHW tensor.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 4 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::ShapeMismatch { op: "bias_add", lhs: xs, rhs: bs });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let bd = self.nodes[b.0].value.data().to_vec();
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            for ci in 0..c {
                let bias = bd[ci];
                let base = (ni * c + ci) * h * w;
                for (o, s) in out[base..base + h * w].iter_mut().zip(&src[base..base + h * w]) {
                    *o = *s + bias;
                }
            }
        }
        let v = Tensor::new_unchecked(xs, out)?;
        let req = self.req(x) || self.req(b);
        self.push("bias_add", v, Op::BiasAdd { x, b }, req)
    }

    /// Dense layer: x (N,F) * w (O,F)^T + b (O) -> (N,O).
    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, f) = self.dims2("fully_connected", x)?;
        let (o, fw) = self.dims2("fully_connected", w)?;
        let bs = self.shape(b).to_vec();
        if fw != f || bs != vec![o] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                lhs: vec![n, f],
                rhs: vec![o, fw],
            });
        }
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); n * o];
        for ni in 0..n {
            let xr = &xd[ni * f..][..f];
            for oi in 0..o {
                let wr = &wd[oi * f..][..f];
                let mut acc = T::zero();
                for (a, c) in xr.iter().zip(wr) {
                    acc = acc + *a * *c;
                }
                out[ni * o + oi] = acc + bd[oi];
            }
        }
        let v = Tensor::new_unchecked(vec![n, o], out)?;
        let req = self.req(x) || self.req(w) || self.req(b);
        self.push("fully_connected", v, Op::FullyConnected { x, w, b }, req)
    }

    /// a (N,C) * b (M,C)^T -> (N,M).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, c) = self.dims2("matmul_nt", a)?;
        let (m, cb) = self.dims2("matmul_nt", b)?;
        if c != cb {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: vec![n, c],
                rhs: vec![m, cb],
            });
        }
        let ad = self.nodes[a.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let ar = &ad[i * c..][..c];
            for j in 0..m {
                let br = &bd[j * c..][..c];
                let mut acc = T::zero();
                for (x, y) in ar.iter().zip(br) {
                    acc = acc + *x * *y;
                }
                out[i * m + j] = acc;
            }
        }
        let v = Tensor::new_unchecked(vec![n, m], out)?;
        let req = self.req(a) || self.req(b);
        self.push("matmul_nt", v, Op::MatmulNT { a, b }, req)
    }

    /// Column means of a (N,C) matrix -> (C).
    pub fn mean_axis0(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c) = self.dims2("mean_axis0", x)?;
        let xd = self.nodes[x.0].value.data();
        let inv = T::one() / T::from_f64(n as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..n {
            for j in 0..c {
                out[j] = out[j] + xd[i * c + j];
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let v = Tensor::new_unchecked(vec![c], out)?;
        let req = self.req(x);
        self.push("mean_axis0", v, Op::MeanAxis0(x), req)
    }

    /// Subtract a length-C vector from every row of an (N,C) matrix.
    pub fn sub_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (n, c) = self.dims2("sub_row_vec", x)?;
        let vs = self.shape(v).to_vec();
        if vs != vec![c] {
            return Err(Error::ShapeMismatch {
                op: "sub_row_vec",
                lhs: vec![n, c],
                rhs: vs,
            });
        }
        let xd = self.nodes[x.0].value.data();
        let vd = self.nodes[v.0].value.data();
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] = xd[i * c + j] - vd[j];
            }
        }
        let val = Tensor::new_unchecked(vec![n, c], out)?;
        let req = self.req(x) || self.req(v);
        self.push("sub_row_vec", val, Op::SubRowVec { x, v }, req)
    }

    /// Row sums of an (N,M) matrix -> (N).
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("row_sum", x)?;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..m {
                acc = acc + xd[i * m + j];
            }
            out[i] = acc;
        }
        let v = Tensor::new_unchecked(vec![n], out)?;
        let req = self.req(x);
        self.push("row_sum", v, Op::RowSum(x), req)
    }

    /// Row minima of an (N,M) matrix -> (N). Subgradient goes to the first
    /// minimizer in scan order.
    pub fn row_min(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("row_min", x)?;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n];
        for i in 0..n {
            let mut best = xd[i * m];
            for j in 1..m {
                if xd[i * m + j] < best {
                    best = xd[i * m + j];
                }
            }
            out[i] = best;
        }
        let v = Tensor::new_unchecked(vec![n], out)?;
        let req = self.req(x);
        self.push("row_min", v, Op::RowMin(x), req)
    }

    /// Divide each row i of an (N,M) matrix by v[i].
    pub fn rowwise_div(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("rowwise_div", x)?;
        let vs = self.shape(v).to_vec();
        if vs != vec![n] {
            return Err(Error::ShapeMismatch {
                op: "rowwise_div",
                lhs: vec![n, m],
                rhs: vs,
            });
        }
        if self.nodes[v.0].value.data().iter().any(|d| *d == T::zero()) {
            return Err(Error::Domain {
                op: "rowwise_div",
                detail: "zero divisor".into(),
            });
        }
        let xd = self.nodes[x.0].value.data();
        let vd = self.nodes[v.0].value.data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let inv = T::one() / vd[i];
            for j in 0..m {
                out[i * m + j] = xd[i * m + j] * inv;
            }
        }
        let val = Tensor::new_unchecked(vec![n, m], out)?;
        let req = self.req(x) || self.req(v);
        self.push("rowwise_div", val, Op::RowwiseDiv { x, v }, req)
    }

    /// Divide each column j of an (N,M) matrix by v[j].
    pub fn colwise_div(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("colwise_div", x)?;
        let vs = self.shape(v).to_vec();
        if vs != vec![m] {
            return Err(Error::ShapeMismatch {
                op: "colwise_div",
                lhs: vec![n, m],
                rhs: vs,
            });
        }
        if self.nodes[v.0].value.data().iter().any(|d| *d == T::zero()) {
            return Err(Error::Domain {
                op: "colwise_div",
                detail: "zero divisor".into(),
            });
        }
        let xd = self.nodes[x.0].value.data();
        let vd = self.nodes[v.0].value.data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = xd[i * m + j] / vd[j];
            }
        }
        let val = Tensor::new_unchecked(vec![n, m], out)?;
        let req = self.req(x) || self.req(v);
        self.push("colwise_div", val, Op::ColwiseDiv { x, v }, req)
    }

    /// Numerically stable row softmax of an (N,M) matrix. Every output row
    /// sums to 1 up to rounding.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("softmax_rows", x)?;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &xd[i * m..][..m];
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = T::zero();
            for j in 0..m {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                denom = denom + e;
            }
            for j in 0..m {
                out[i * m + j] = out[i * m + j] / denom;
            }
        }
        let v = Tensor::new_unchecked(vec![n, m], out)?;
        let req = self.req(x);
        self.push("softmax_rows", v, Op::SoftmaxRows(x), req)
    }

    /// Column maxima of an (N,M) matrix -> (M). Subgradient goes to the
    /// first maximizer in scan order.
    pub fn col_max(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2("col_max", x)?;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); m];
        for j in 0..m {
            let mut best = xd[j];
            for i in 1..n {
                if xd[i * m + j] > best {
                    best = xd[i * m + j];
                }
            }
            out[j] = best;
        }
        let v = Tensor::new_unchecked(vec![m], out)?;
        let req = self.req(x);
        self.push("col_max", v, Op::ColMax(x), req)
    }

    /// Extract batch item `index` of an NCHW tensor -> (1,C,H,W).
    pub fn slice_batch(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || index >= s[0] {
            return Err(Error::Domain {
                op: "slice_batch",
                detail: format!("index {index} out of range for shape {s:?}"),
            });
        }
        let chw: usize = s[1..].iter().product();
        let data = self.nodes[x.0].value.data()[index * chw..][..chw].to_vec();
        let v = Tensor::new_unchecked(vec![1, s[1], s[2], s[3]], data)?;
        let req = self.req(x);
        self.push("slice_batch", v, Op::SliceBatch { x, index }, req)
    }

    /// Reinterpret a (1,C,H,W) feature map as H*W points with C features.
    pub fn chw_to_points(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[0] != 1 {
            return Err(Error::Domain {
                op: "chw_to_points",
                detail: format!("expects (1,C,H,W), got {s:?}"),
            });
        }
        let (c, h, w) = (s[1], s[2], s[3]);
        let hw = h * w;
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); hw * c];
        for ci in 0..c {
            for p in 0..hw {
                out[p * c + ci] = xd[ci * hw + p];
            }
        }
        let v = Tensor::new_unchecked(vec![hw, c], out)?;
        let req = self.req(x);
        self.push("chw_to_points", v, Op::ChwToPoints(x), req)
    }

    // ---- backward ----

    /// Reverse pass from a scalar root. Each invocation seeds 1 at the root
    /// and adds the resulting gradients into the persistent leaf gradients,
    /// so calling it twice doubles them.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Domain {
                op: "backward",
                detail: "root is not on this tape".into(),
            });
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Domain {
                op: "backward",
                detail: format!("root must be scalar, got shape {:?}", self.shape(root)),
            });
        }
        let mut work: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        work[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = work[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                match &mut self.nodes[idx].grad {
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            *a = *a + *gi;
                        }
                    }
                    None => self.nodes[idx].grad = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut work);
        }
        Ok(())
    }

    /// Zero every accumulated leaf gradient.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn add_grad(&self, work: &mut [Option<Vec<T>>], id: NodeId, contrib: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut work[id.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(&contrib) {
                    *a = *a + *c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn add_grad_into(&self, work: &mut [Option<Vec<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].value.len();
        let slot = &mut work[id.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); n]);
        }
        f(slot.as_mut().expect("just filled"));
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, idx: usize, g: &[T], work: &mut Vec<Option<Vec<T>>>) {
        // Ops only reference earlier nodes, so reads below never alias the
        // work slot being written.
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => unreachable!("leaves handled in backward"),
            Op::Add(a, b) => {
                self.add_grad(work, a, g.to_vec());
                self.add_grad(work, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.add_grad(work, a, g.to_vec());
                self.add_grad_into(work, b, |acc| {
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a = *a - *gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let ga: Vec<T> = g.iter().zip(bv).map(|(&gi, &b)| gi * b).collect();
                let gb: Vec<T> = g.iter().zip(av).map(|(&gi, &a)| gi * a).collect();
                self.add_grad(work, a, ga);
                self.add_grad(work, b, gb);
            }
            Op::Affine { x, scale } => {
                self.add_grad(work, x, g.iter().map(|&gi| gi * scale).collect());
            }
            Op::Abs(x) => {
                let xv = self.nodes[x.0].value.data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| {
                        if v > T::zero() {
                            gi
                        } else if v < T::zero() {
                            -gi
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.add_grad(work, x, gx);
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| if v > T::zero() { gi } else { T::zero() })
                    .collect();
                self.add_grad(work, x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.nodes[x.0].value.data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| if v > T::zero() { gi } else { gi * slope })
                    .collect();
                self.add_grad(work, x, gx);
            }
            Op::Sigmoid(x) => {
                let yv = self.nodes[idx].value.data();
                let gx = g
                    .iter()
                    .zip(yv)
                    .map(|(&gi, &s)| gi * s * (T::one() - s))
                    .collect();
                self.add_grad(work, x, gx);
            }
            Op::Log(x) => {
                let xv = self.nodes[x.0].value.data();
                let gx = g.iter().zip(xv).map(|(&gi, &v)| gi / v).collect();
                self.add_grad(work, x, gx);
            }
            Op::Exp(x) => {
                let yv = self.nodes[idx].value.data();
                let gx = g.iter().zip(yv).map(|(&gi, &e)| gi * e).collect();
                self.add_grad(work, x, gx);
            }
            Op::Sqrt(x) => {
                let yv = self.nodes[idx].value.data();
                let two = T::from_f64(2.0);
                let gx = g.iter().zip(yv).map(|(&gi, &r)| gi / (two * r)).collect();
                self.add_grad(work, x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.nodes[x.0].value.data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| if v > lo && v < hi { gi } else { T::zero() })
                    .collect();
                self.add_grad(work, x, gx);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                let k = g[0] / T::from_f64(n as f64);
                self.add_grad(work, x, vec![k; n]);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                self.add_grad(work, x, vec![g[0]; n]);
            }
            Op::SubScalarNode { x, s } => {
                self.add_grad(work, x, g.to_vec());
                let mut acc = T::zero();
                for &gi in g {
                    acc = acc + gi;
                }
                self.add_grad(work, s, vec![-acc]);
            }
            Op::Reshape(x) => {
                self.add_grad(work, x, g.to_vec());
            }
            Op::NearestUpsample { x, factor } => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let ow = w * factor;
                let mut gx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gp = &g[p * h * factor * ow..][..h * factor * ow];
                    let dp = &mut gx[p * h * w..][..h * w];
                    for oy in 0..h * factor {
                        let iy = oy / factor;
                        for ox in 0..ow {
                            let t = &mut dp[iy * w + ox / factor];
                            *t = *t + gp[oy * ow + ox];
                        }
                    }
                }
                self.add_grad(work, x, gx);
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xs = self.nodes[x.0].value.shape().to_vec();
                let ws = self.nodes[w.0].value.shape().to_vec();
                let os = self.nodes[idx].value.shape().to_vec();
                let gdims = (os[0], os[1], os[2], os[3]);
                if self.nodes[x.0].requires_grad {
                    self.add_grad_into(work, x, |acc| {
                        conv2d_backward_input(
                            g,
                            gdims,
                            self.nodes[w.0].value.data(),
                            (ws[0], ws[1], ws[2], ws[3]),
                            stride,
                            pad,
                            acc,
                            (xs[2], xs[3]),
                        );
                    });
                }
                if self.nodes[w.0].requires_grad {
                    self.add_grad_into(work, w, |acc| {
                        conv2d_backward_kernel(
                            g,
                            gdims,
                            self.nodes[x.0].value.data(),
                            (xs[0], xs[1], xs[2], xs[3]),
                            stride,
                            pad,
                            acc,
                            ws[2],
                        );
                    });
                }
            }
            Op::BiasAdd { x, b } => {
                self.add_grad(work, x, g.to_vec());
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let mut gb = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let mut acc = T::zero();
                        for &v in &g[base..base + hw] {
                            acc = acc + v;
                        }
                        gb[ci] = gb[ci] + acc;
                    }
                }
                self.add_grad(work, b, gb);
            }
            Op::FullyConnected { x, w, b } => {
                let (n, f) = {
                    let s = self.nodes[x.0].value.shape();
                    (s[0], s[1])
                };
                let o = self.nodes[b.0].value.len();
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); n * f];
                    for ni in 0..n {
                        for oi in 0..o {
                            let gv = g[ni * o + oi];
                            let wr = &wd[oi * f..][..f];
                            let gr = &mut gx[ni * f..][..f];
                            for (t, wv) in gr.iter_mut().zip(wr) {
                                *t = *t + gv * *wv;
                            }
                        }
                    }
                    self.add_grad(work, x, gx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![T::zero(); o * f];
                    for ni in 0..n {
                        let xr = &xd[ni * f..][..f];
                        for oi in 0..o {
                            let gv = g[ni * o + oi];
                            let wr = &mut gw[oi * f..][..f];
                            for (t, xv) in wr.iter_mut().zip(xr) {
                                *t = *t + gv * *xv;
                            }
                        }
                    }
                    self.add_grad(work, w, gw);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![T::zero(); o];
                    for ni in 0..n {
                        for oi in 0..o {
                            gb[oi] = gb[oi] + g[ni * o + oi];
                        }
                    }
                    self.add_grad(work, b, gb);
                }
            }
            Op::MatmulNT { a, b } => {
                let (n, c) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let m = self.nodes[b.0].value.shape()[0];
                let ad = self.nodes[a.0].value.data();
                let bd = self.nodes[b.0].value.data();
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![T::zero(); n * c];
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            let br = &bd[j * c..][..c];
                            let gr = &mut ga[i * c..][..c];
                            for (t, bv) in gr.iter_mut().zip(br) {
                                *t = *t + gv * *bv;
                            }
                        }
                    }
                    self.add_grad(work, a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![T::zero(); m * c];
                    for i in 0..n {
                        let ar = &ad[i * c..][..c];
                        for j in 0..m {
                            let gv = g[i * m + j];
                            let gr = &mut gb[j * c..][..c];
                            for (t, av) in gr.iter_mut().zip(ar) {
                                *t = *t + gv * *av;
                            }
                        }
                    }
                    self.add_grad(work, b, gb);
                }
            }
            Op::MeanAxis0(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, c) = (s[0], s[1]);
                let inv = T::one() / T::from_f64(n as f64);
                let mut gx = vec![T::zero(); n * c];
                for i in 0..n {
                    for j in 0..c {
                        gx[i * c + j] = g[j] * inv;
                    }
                }
                self.add_grad(work, x, gx);
            }
            Op::SubRowVec { x, v } => {
                self.add_grad(work, x, g.to_vec());
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, c) = (s[0], s[1]);
                let mut gv = vec![T::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        gv[j] = gv[j] - g[i * c + j];
                    }
                }
                self.add_grad(work, v, gv);
            }
            Op::RowSum(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let mut gx = vec![T::zero(); n * m];
                for i in 0..n {
                    for j in 0..m {
                        gx[i * m + j] = g[i];
                    }
                }
                self.add_grad(work, x, gx);
            }
            Op::RowMin(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let xd = self.nodes[x.0].value.data();
                let mut gx = vec![T::zero(); n * m];
                for i in 0..n {
                    let mut arg = 0usize;
                    let mut best = xd[i * m];
                    for j in 1..m {
                        if xd[i * m + j] < best {
                            best = xd[i * m + j];
                            arg = j;
                        }
                    }
                    gx[i * m + arg] = g[i];
                }
                self.add_grad(work, x, gx);
            }
            Op::RowwiseDiv { x, v } => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let xd = self.nodes[x.0].value.data();
                let vd = self.nodes[v.0].value.data();
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); n * m];
                    for i in 0..n {
                        let inv = T::one() / vd[i];
                        for j in 0..m {
                            gx[i * m + j] = g[i * m + j] * inv;
                        }
                    }
                    self.add_grad(work, x, gx);
                }
                if self.nodes[v.0].requires_grad {
                    let mut gv = vec![T::zero(); n];
                    for i in 0..n {
                        let inv2 = T::one() / (vd[i] * vd[i]);
                        let mut acc = T::zero();
                        for j in 0..m {
                            acc = acc + g[i * m + j] * xd[i * m + j];
                        }
                        gv[i] = -acc * inv2;
                    }
                    self.add_grad(work, v, gv);
                }
            }
            Op::ColwiseDiv { x, v } => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let xd = self.nodes[x.0].value.data();
                let vd = self.nodes[v.0].value.data();
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); n * m];
                    for i in 0..n {
                        for j in 0..m {
                            gx[i * m + j] = g[i * m + j] / vd[j];
                        }
                    }
                    self.add_grad(work, x, gx);
                }
                if self.nodes[v.0].requires_grad {
                    let mut gv = vec![T::zero(); m];
                    for i in 0..n {
                        for j in 0..m {
                            gv[j] = gv[j] - g[i * m + j] * xd[i * m + j] / (vd[j] * vd[j]);
                        }
                    }
                    self.add_grad(work, v, gv);
                }
            }
            Op::SoftmaxRows(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let yv = self.nodes[idx].value.data();
                let mut gx = vec![T::zero(); n * m];
                for i in 0..n {
                    let yr = &yv[i * m..][..m];
                    let gr = &g[i * m..][..m];
                    let mut dot = T::zero();
                    for (yi, gi) in yr.iter().zip(gr) {
                        dot = dot + *yi * *gi;
                    }
                    for j in 0..m {
                        gx[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.add_grad(work, x, gx);
            }
            Op::ColMax(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (n, m) = (s[0], s[1]);
                let xd = self.nodes[x.0].value.data();
                let mut gx = vec![T::zero(); n * m];
                for j in 0..m {
                    let mut arg = 0usize;
                    let mut best = xd[j];
                    for i in 1..n {
                        if xd[i * m + j] > best {
                            best = xd[i * m + j];
                            arg = i;
                        }
                    }
                    gx[arg * m + j] = g[j];
                }
                self.add_grad(work, x, gx);
            }
            Op::SliceBatch { x, index } => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let chw: usize = s[1..].iter().product();
                self.add_grad_into(work, x, |acc| {
                    let dst = &mut acc[index * chw..][..chw];
                    for (d, gi) in dst.iter_mut().zip(g) {
                        *d = *d + *gi;
                    }
                });
            }
            Op::ChwToPoints(x) => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let (c, hw) = (s[1], s[2] * s[3]);
                let mut gx = vec![T::zero(); c * hw];
                for ci in 0..c {
                    for p in 0..hw {
                        gx[ci * hw + p] = g[p * c + ci];
                    }
                }
                self.add_grad(work, x, gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Direct six-nested-loop cross-correlation, kept independent of the
    /// production kernels.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (bn, ic, ih, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oc, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = (ih + 2 * pad - k) / stride + 1;
        let ow = (iw + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; bn * oc * oh * ow];
        for n in 0..bn {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..ic {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                        continue;
                                    }
                                    let xi = ((n * ic + i) * ih + iy as usize) * iw + ix as usize;
                                    let wi = ((o * ic + i) * k + ky) * k + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out[((n * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![bn, oc, oh, ow], out).unwrap()
    }

    #[test]
    fn conv_scaling_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = tape.leaf(t64(&[1, 1, 1, 1], &[2.0]), false);
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 3.0).collect();
        let x = tape.leaf(t64(&[1, 1, 4, 4], &data), false);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.leaf(t64(&[1, 1, 3, 3], &k), false);
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), data.as_slice());
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = crate::rng::Rng::new(11);
        for &(ic, oc, k, stride, pad, hw) in
            &[(1usize, 1usize, 3usize, 1usize, 0usize, 4usize), (3, 2, 3, 1, 1, 5), (2, 4, 3, 2, 1, 6), (3, 1, 1, 1, 0, 4)]
        {
            let x = Tensor::from_fn(vec![2, ic, hw, hw], |_| rng.next_range(-1.0, 1.0));
            let w = Tensor::from_fn(vec![oc, ic, k, k], |_| rng.next_range(-1.0, 1.0));
            let want = conv_oracle(&x, &w, stride, pad);
            let mut tape = Tape::new();
            let xn = tape.leaf(x, false);
            let wn = tape.leaf(w, false);
            let y = tape.conv2d(xn, wn, stride, pad).unwrap();
            for (a, b) in tape.value(y).data().iter().zip(want.data()) {
                let denom = b.abs().max(1.0);
                assert!((a - b).abs() / denom < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_names_dims() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 3, 4, 4]), false);
        let w = tape.leaf(Tensor::zeros(vec![2, 2, 3, 3]), false);
        let err = tape.conv2d(x, w, 1, 1).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "conv2d", .. }));
    }

    #[test]
    fn conv_output_too_small_is_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]), false);
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 3, 3]), false);
        assert!(tape.conv2d(x, w, 1, 0).is_err());
    }

    #[test]
    fn relu_mean_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[3], &[-1.0, 0.0, 2.0]), false);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let m = tape.leaf(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let mm = tape.mean(m).unwrap();
        assert_eq!(tape.value(mm).item(), 2.5);

        let z = tape.leaf(t64(&[1], &[0.0]), false);
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn backward_scale_by_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[1], &[4.0]), true);
        let y = tape.scale(x, 3.0).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn backward_fanout_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[3], &[1.0, 2.0, 3.0]), true);
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_twice_doubles_without_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[2], &[1.0, -2.0]), true);
        let a = tape.abs(x).unwrap();
        let s = tape.sum(a).unwrap();
        tape.backward(s).unwrap();
        let g1 = tape.grad(x).unwrap();
        tape.backward(s).unwrap();
        let g2 = tape.grad(x).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_detached_root_is_error() {
        let mut tape = Tape::<f64>::new();
        let _ = tape.leaf(Tensor::scalar(1.0), true);
        assert!(tape.backward(NodeId(5)).is_err());
    }

    #[test]
    fn log_domain_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[2], &[1.0, 0.0]), false);
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[2, 3], &[0.1, 5.0, -2.0, 3.0, 3.0, 3.0]), false);
        let s = tape.softmax_rows(x).unwrap();
        let d = tape.value(s).data();
        for i in 0..2 {
            let row: f64 = d[i * 3..(i + 1) * 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_upsample_shapes_and_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let y = tape.nearest_upsample(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
        assert_eq!(
            tape.value(y).data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn chw_to_points_round_trip_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let p = tape.chw_to_points(x).unwrap();
        assert_eq!(tape.shape(p), &[2, 2]);
        // points are (x_ch0, x_ch1) per spatial position
        assert_eq!(tape.value(p).data(), &[1.0, 3.0, 2.0, 4.0]);
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_finite_op_output_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t64(&[1], &[800.0]), false);
        // exp(800) overflows f64
        assert!(matches!(tape.exp(x), Err(Error::NonFinite { op: "exp" })));
    }
}
