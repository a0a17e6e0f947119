//! Define-by-run tape. Every primitive pushes its output value and enough
//! bookkeeping to replay the chain rule in reverse insertion order.

use std::cell::{Ref, RefCell};

use super::conv::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Probability clamp used by [`Var::bce`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Square(usize),
    Abs(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    BroadcastRows(usize),
    Reshape(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Linear(usize, usize, usize),
    Conv(ConvGeom, usize, usize, usize),
    ConvTranspose(ConvGeom, usize, usize, usize),
    Bce {
        pred: usize,
        target: Tensor,
        weight: Option<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, gi) in local_grads(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass, indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to leaf `v`; `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

fn unary(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()).unwrap()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .unwrap()
}

/// Chain rule for one node: returns (input id, gradient contribution) pairs.
fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, unary(g, |x| -x))],
        Op::Mul(a, b) => vec![
            (*a, zip_map(g, val(*b), |g, v| g * v)),
            (*b, zip_map(g, val(*a), |g, v| g * v)),
        ],
        Op::Minimum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let mask: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
            let ga = Tensor::from_fn(g.shape(), |i| if mask[i] { g.data()[i] } else { 0.0 });
            let gb = Tensor::from_fn(g.shape(), |i| if mask[i] { 0.0 } else { g.data()[i] });
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale(a, c) => vec![(*a, unary(g, |x| x * c))],
        Op::AddScalar(a) | Op::Reshape(a) => {
            vec![(*a, g.clone().reshaped(val(*a).shape()).unwrap())]
        }
        Op::Exp(a) => vec![(*a, zip_map(g, y, |g, e| g * e))],
        Op::Square(a) => vec![(*a, zip_map(g, val(*a), |g, x| 2.0 * g * x))],
        Op::Abs(a) => vec![(*a, zip_map(g, val(*a), |g, x| g * x.signum() * (x != 0.0) as u8 as f64))],
        Op::Relu(a) => vec![(*a, zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
        Op::Sigmoid(a) => vec![(*a, zip_map(g, y, |g, s| g * s * (1.0 - s)))],
        Op::Tanh(a) => vec![(*a, zip_map(g, y, |g, t| g * (1.0 - t * t)))],
        Op::Clamp(a, lo, hi) => vec![(
            *a,
            zip_map(g, val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
        )],
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
        }
        Op::SumCols(a) => {
            let s = val(*a).shape();
            let cols = s[1];
            vec![(*a, Tensor::from_fn(s, |i| g.data()[i / cols]))]
        }
        Op::BroadcastRows(a) => {
            let cols = val(*a).shape()[1];
            let mut out = Tensor::zeros(val(*a).shape());
            for (i, gv) in g.data().iter().enumerate() {
                out.data_mut()[i % cols] += gv;
            }
            vec![(*a, out)]
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (val(*a).shape()[1], val(*b).shape()[1]);
            let rows = g.shape()[0];
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for r in g.data().chunks(ca + cb) {
                ga.extend_from_slice(&r[..ca]);
                gb.extend_from_slice(&r[ca..]);
            }
            vec![
                (*a, Tensor::new(vec![rows, ca], ga).unwrap()),
                (*b, Tensor::new(vec![rows, cb], gb).unwrap()),
            ]
        }
        Op::SliceCols(a, start) => {
            let s = val(*a).shape();
            let (cols, w) = (s[1], g.shape()[1]);
            let mut out = Tensor::zeros(s);
            for (r, grow) in g.data().chunks(w).enumerate() {
                out.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(grow);
            }
            vec![(*a, out)]
        }
        Op::SliceRows(a, start) => {
            let s = val(*a).shape();
            let row: usize = s[1..].iter().product();
            let mut out = Tensor::zeros(s);
            out.data_mut()[start * row..start * row + g.len()].copy_from_slice(g.data());
            vec![(*a, out)]
        }
        Op::Linear(x, w, b) => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, i_n) = (xv.shape()[0], xv.shape()[1]);
            let o_n = wv.shape()[0];
            let (gd, xd, wd) = (g.data(), xv.data(), wv.data());
            let mut gx = vec![0.0; n * i_n];
            let mut gw = vec![0.0; o_n * i_n];
            let mut gb = vec![0.0; o_n];
            for r in 0..n {
                for o in 0..o_n {
                    let go = gd[r * o_n + o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let wrow = &wd[o * i_n..(o + 1) * i_n];
                    let xrow = &xd[r * i_n..(r + 1) * i_n];
                    for k in 0..i_n {
                        gx[r * i_n + k] += go * wrow[k];
                        gw[o * i_n + k] += go * xrow[k];
                    }
                }
            }
            vec![
                (*x, Tensor::new(xv.shape().to_vec(), gx).unwrap()),
                (*w, Tensor::new(wv.shape().to_vec(), gw).unwrap()),
                (*b, Tensor::new(vec![o_n], gb).unwrap()),
            ]
        }
        Op::Conv(geom, x, w, b) => {
            let gx = conv::backward_input(geom, g.data(), val(*w).data());
            let gw = conv::backward_kernel(geom, val(*x).data(), g.data());
            let vol = geom.output.iter().product();
            let gb = conv::backward_bias(geom.batch, geom.out_channels, vol, g.data());
            vec![
                (*x, Tensor::new(geom.input_shape(), gx).unwrap()),
                (*w, Tensor::new(geom.kernel_shape(), gw).unwrap()),
                (*b, Tensor::new(vec![geom.out_channels], gb).unwrap()),
            ]
        }
        Op::ConvTranspose(geom, x, w, b) => {
            // the transposed output plays the role of the convolution input
            let gx = conv::forward(geom, g.data(), val(*w).data(), None);
            let gw = conv::backward_kernel(geom, g.data(), val(*x).data());
            let vol = geom.input.iter().product();
            let gb = conv::backward_bias(geom.batch, geom.in_channels, vol, g.data());
            vec![
                (*x, Tensor::new(geom.output_shape(), gx).unwrap()),
                (*w, Tensor::new(geom.kernel_shape(), gw).unwrap()),
                (*b, Tensor::new(vec![geom.in_channels], gb).unwrap()),
            ]
        }
        Op::Bce {
            pred,
            target,
            weight,
        } => {
            let p = val(*pred);
            let n = p.len() as f64;
            let scale = g.item() / n;
            let gp = Tensor::from_fn(p.shape(), |i| {
                let pc = p.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                let t = target.data()[i];
                let w = weight.as_ref().map_or(1.0, |w| w.data()[i]);
                scale * w * (pc - t) / (pc * (1.0 - pc))
            });
            vec![(*pred, gp)]
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<(), TensorError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::Shape("operands recorded on different tapes".into()))
        }
    }

    fn map_unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = unary(&self.value(), f);
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(v, op, rg)
    }

    fn map_binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other)?;
        let v = {
            let (a, b) = (self.value(), other.value());
            if a.shape() != b.shape() {
                return Err(TensorError::Shape(format!(
                    "elementwise shapes differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            zip_map(&a, &b, f)
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(v, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.map_binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.map_binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.map_binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise minimum; ties send the gradient to `self`.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.map_binary(other, Op::Minimum(self.id, other.id), f64::min)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.map_unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.map_unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(self) -> Var<'t> {
        self.map_unary(Op::Exp(self.id), f64::exp)
    }

    pub fn square(self) -> Var<'t> {
        self.map_unary(Op::Square(self.id), |x| x * x)
    }

    pub fn abs(self) -> Var<'t> {
        self.map_unary(Op::Abs(self.id), f64::abs)
    }

    pub fn relu(self) -> Var<'t> {
        self.map_unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map_unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.map_unary(Op::Tanh(self.id), f64::tanh)
    }

    /// Clamp with zero gradient outside the open interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.map_unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let s = {
            let v = self.value();
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id), rg)
    }

    fn matrix_dims(&self, what: &str) -> Result<(usize, usize), TensorError> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("{what} expects a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// Row sums of a matrix: `[N, K] -> [N, 1]`.
    pub fn sum_cols(self) -> Result<Var<'t>, TensorError> {
        let (_, cols) = self.matrix_dims("sum_cols")?;
        let v = {
            let x = self.value();
            let d: Vec<f64> = x.data().chunks(cols).map(|r| r.iter().sum()).collect();
            Tensor::new(vec![d.len(), 1], d).unwrap()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(v, Op::SumCols(self.id), rg))
    }

    /// Repeats a `[1, K]` row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>, TensorError> {
        let (r, cols) = self.matrix_dims("broadcast_rows")?;
        if r != 1 || n == 0 {
            return Err(TensorError::Shape(format!("cannot broadcast [{r}, {cols}] to {n} rows")));
        }
        let v = {
            let x = self.value();
            Tensor::new(vec![n, cols], x.data().repeat(n)).unwrap()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(v, Op::BroadcastRows(self.id), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let v = self.value().clone().reshaped(shape)?;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(v, Op::Reshape(self.id), rg))
    }

    /// `[N, A] ++ [N, B] -> [N, A + B]`.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&other)?;
        let (ra, ca) = self.matrix_dims("concat_cols")?;
        let (rb, cb) = other.matrix_dims("concat_cols")?;
        if ra != rb {
            return Err(TensorError::Shape(format!("concat_cols rows differ: {ra} vs {rb}")));
        }
        let v = {
            let (a, b) = (self.value(), other.value());
            let mut d = Vec::with_capacity(ra * (ca + cb));
            for r in 0..ra {
                d.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
                d.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
            }
            Tensor::new(vec![ra, ca + cb], d).unwrap()
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(v, Op::ConcatCols(self.id, other.id), rg))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let (rows, cols) = self.matrix_dims("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(TensorError::Shape(format!("column slice {start}+{len} of {cols}")));
        }
        let v = {
            let x = self.value();
            let d: Vec<f64> = x
                .data()
                .chunks(cols)
                .flat_map(|r| r[start..start + len].iter().copied())
                .collect();
            Tensor::new(vec![rows, len], d).unwrap()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(v, Op::SliceCols(self.id, start), rg))
    }

    /// Slice along the leading axis.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let s = self.shape();
        if len == 0 || start + len > s[0] {
            return Err(TensorError::Shape(format!("row slice {start}+{len} of {s:?}")));
        }
        let row: usize = s[1..].iter().product();
        let v = {
            let x = self.value();
            let mut shape = s.clone();
            shape[0] = len;
            Tensor::new(shape, x.data()[start * row..(start + len) * row].to_vec()).unwrap()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(v, Op::SliceRows(self.id, start), rg))
    }

    /// `self · weightᵀ + bias` for `self: [N, I]`, `weight: [O, I]`, `bias: [O]`.
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.same_tape(&weight)?;
        self.same_tape(&bias)?;
        let (n, i_n) = self.matrix_dims("linear input")?;
        let (o_n, wi) = weight.matrix_dims("linear weight")?;
        if wi != i_n || bias.shape() != [o_n] {
            return Err(TensorError::Shape(format!(
                "linear: input [{n}, {i_n}], weight [{o_n}, {wi}], bias {:?}",
                bias.shape()
            )));
        }
        let v = {
            let (x, w, b) = (self.value(), weight.value(), bias.value());
            let mut d = vec![0.0; n * o_n];
            for r in 0..n {
                let xrow = &x.data()[r * i_n..(r + 1) * i_n];
                for o in 0..o_n {
                    let wrow = &w.data()[o * i_n..(o + 1) * i_n];
                    d[r * o_n + o] =
                        b.data()[o] + xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Tensor::new(vec![n, o_n], d).unwrap()
        };
        let rg = self.tape.rg(&[self.id, weight.id, bias.id]);
        Ok(self.tape.push(v, Op::Linear(self.id, weight.id, bias.id), rg))
    }

    /// 3D cross-correlation; `self: [N,C,D,H,W]`, `kernel: [F,C,k,k,k]`, `bias: [F]`.
    pub fn conv3d(
        self,
        kernel: Var<'t>,
        bias: Var<'t>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t>, TensorError> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let geom = ConvGeom::forward(&self.shape(), &kernel.shape(), stride, pad)?;
        if bias.shape() != [geom.out_channels] {
            return Err(TensorError::Shape(format!("conv3d bias {:?}", bias.shape())));
        }
        let out = {
            let (x, w, b) = (self.value(), kernel.value(), bias.value());
            conv::forward(&geom, x.data(), w.data(), Some(b.data()))
        };
        let v = Tensor::new(geom.output_shape(), out)?;
        let rg = self.tape.rg(&[self.id, kernel.id, bias.id]);
        Ok(self
            .tape
            .push(v, Op::Conv(geom, self.id, kernel.id, bias.id), rg))
    }

    /// Adjoint of [`Var::conv3d`]; `self: [N,F,D,H,W]`, `kernel: [F,C,k,k,k]`, `bias: [C]`.
    pub fn conv3d_transpose(
        self,
        kernel: Var<'t>,
        bias: Var<'t>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t>, TensorError> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let geom = ConvGeom::transpose(&self.shape(), &kernel.shape(), stride, pad)?;
        if bias.shape() != [geom.in_channels] {
            return Err(TensorError::Shape(format!(
                "conv3d_transpose bias {:?}",
                bias.shape()
            )));
        }
        let out = {
            let (x, w, b) = (self.value(), kernel.value(), bias.value());
            let mut out = conv::backward_input(&geom, x.data(), w.data());
            let vol: usize = geom.input.iter().product();
            for (i, v) in out.iter_mut().enumerate() {
                *v += b.data()[(i / vol) % geom.in_channels];
            }
            out
        };
        let v = Tensor::new(geom.input_shape(), out)?;
        let rg = self.tape.rg(&[self.id, kernel.id, bias.id]);
        Ok(self
            .tape
            .push(v, Op::ConvTranspose(geom, self.id, kernel.id, bias.id), rg))
    }

    /// Mean binary cross-entropy against a fixed target, optionally weighted per
    /// element. Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(self, target: &Tensor, weight: Option<&Tensor>) -> Result<Var<'t>, TensorError> {
        let loss = {
            let p = self.value();
            if p.shape() != target.shape() || weight.is_some_and(|w| w.shape() != p.shape()) {
                return Err(TensorError::Shape(format!(
                    "bce: prediction {:?}, target {:?}",
                    p.shape(),
                    target.shape()
                )));
            }
            let total: f64 = (0..p.len())
                .map(|i| {
                    let pc = p.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                    let t = target.data()[i];
                    let w = weight.map_or(1.0, |w| w.data()[i]);
                    -w * (t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
                })
                .sum();
            total / p.len() as f64
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred: self.id,
                target: target.clone(),
                weight: weight.cloned(),
            },
            rg,
        ))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_scalars() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.var(Tensor::scalar(-2.0));
        let z = x.mul(y).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), -2.0);
        assert_eq!(g.get(y).unwrap().item(), 3.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3, 4]));
    }

    #[test]
    fn reused_value_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.5));
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!((g.get(x).unwrap().item() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        assert!(matches!(tape.backward(c.square()), Err(TensorError::Detached)));
        let v = tape.var(Tensor::ones(&[3]));
        assert!(matches!(tape.backward(v), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let g = tape.backward(x.mul(c).unwrap()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn activation_values() {
        let tape = Tape::new();
        let x = tape.var(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 2.0]);
        let z = tape.var(Tensor::scalar(0.0));
        assert_eq!(z.sigmoid().item(), 0.5);
        assert_eq!(z.tanh().item(), 0.0);
    }

    #[test]
    fn bce_values() {
        let tape = Tape::new();
        let p = tape.var(Tensor::full(&[4], 0.5));
        let t = Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((p.bce(&t, None).unwrap().item() - 2f64.ln()).abs() < 1e-15);
        let exact = tape.var(t.clone());
        assert!(exact.bce(&t, None).unwrap().item() <= -(1.0 - BCE_EPS).ln() + 1e-18);
    }

    #[test]
    fn linear_identity_and_bias() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3], |i| i as f64));
        let eye = tape.var(Tensor::from_fn(&[3, 3], |i| (i % 4 == 0) as u8 as f64));
        let zero = tape.var(Tensor::zeros(&[3]));
        assert_eq!(x.linear(eye, zero).unwrap().value().data(), x.value().data());
        let w0 = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::new(vec![2], vec![4.0, -1.0]).unwrap());
        assert_eq!(x.linear(w0, b).unwrap().value().data(), &[4.0, -1.0, 4.0, -1.0]);
    }

    #[test]
    fn conv_identity_and_counting() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[1, 1, 3, 4, 5], |i| (i as f64).sin()));
        let k = tape.var(Tensor::ones(&[1, 1, 1, 1, 1]));
        let b = tape.var(Tensor::zeros(&[1]));
        assert_eq!(x.conv3d(k, b, 1, 0).unwrap().value().data(), x.value().data());

        let ones = tape.var(Tensor::ones(&[1, 1, 2, 2, 2]));
        let k2 = tape.var(Tensor::ones(&[1, 1, 2, 2, 2]));
        let y = ones.conv3d(k2, b, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1, 1]);
        assert_eq!(y.item(), 8.0);
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2]));
        let b = tape.var(Tensor::zeros(&[3]));
        assert!(a.add(b).is_err());
        let x = tape.var(Tensor::zeros(&[1, 2, 4, 4, 4]));
        let k = tape.var(Tensor::zeros(&[1, 3, 2, 2, 2]));
        let bias = tape.var(Tensor::zeros(&[1]));
        assert!(x.conv3d(k, bias, 1, 0).is_err());
        assert!(tape.var(Tensor::zeros(&[2, 3])).bce(&Tensor::zeros(&[3, 2]), None).is_err());
    }
}
