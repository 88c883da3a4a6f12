use std::cell::{Ref, RefCell};

use crate::scalar::Real;

use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    ConcatCols(Var, Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    GatherRows { input: Var, index: Vec<usize> },
    RowNorms(Var),
    RepeatRows { input: Var, times: usize },
    SliceRows { input: Var, start: usize },
    Reshape(Var),
    PlanarTransform { pose: Var, points: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// Record order is a topological order, so backward is a single reverse
/// sweep. A tape created with [`Tape::no_grad`] computes identical values but
/// keeps no parent links and yields no gradients.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn matrix_dims<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), AutodiffError> {
    t.dims2().ok_or_else(|| AutodiffError::NotMatrix {
        op,
        shape: t.shape().to_vec(),
    })
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that evaluates forward values only.
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Borrow the forward value of a node.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Value of a one-element node.
    pub fn item(&self, v: Var) -> Result<T, AutodiffError> {
        let value = self.value(v);
        value.item().ok_or_else(|| AutodiffError::NotScalar {
            shape: value.shape().to_vec(),
        })
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, op: Op<T>, value: Tensor<T>, requires_grad: bool, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let (op, requires_grad) = if self.recording && requires_grad {
            (op, true)
        } else {
            (Op::Leaf, false)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value, true, "param")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value, false, "constant")
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = matrix_dims("matmul", ta)?;
            let (k2, n) = matrix_dims("matmul", tb)?;
            if k != k2 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            let mut out = Tensor::zeros(&[m, n]);
            T::gemm(
                m,
                k,
                n,
                T::one(),
                ta.data(),
                (k as isize, 1),
                tb.data(),
                (n as isize, 1),
                T::zero(),
                out.data_mut(),
                (n as isize, 1),
            );
            out
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::MatMul(a, b), value, rg, "matmul")
    }

    /// Adds a length-n row vector to every row of an m×n matrix.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[bias.0].value);
            let (_, n) = matrix_dims("add_bias", ta)?;
            let bias_ok = matches!(tb.shape(), [len] if *len == n) || matches!(tb.shape(), [1, len] if *len == n);
            if !bias_ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "add_bias",
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            let mut out = ta.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (x, &b) in row.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
            out
        };
        let rg = self.requires(a) || self.requires(bias);
        self.push(Op::AddBias(a, bias), value, rg, "add_bias")
    }

    pub fn relu(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(Op::Relu(a), value, self.requires(a), "relu")
    }

    pub fn tanh(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), value, self.requires(a), "tanh")
    }

    pub fn exp(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x.exp());
        self.push(Op::Exp(a), value, self.requires(a), "exp")
    }

    pub fn scale(&self, a: Var, factor: T) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), value, self.requires(a), "scale")
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, p) = matrix_dims("concat_cols", ta)?;
            let (m2, q) = matrix_dims("concat_cols", tb)?;
            if m != m2 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(m * (p + q));
            for (ra, rb) in ta.data().chunks(p.max(1)).zip(tb.data().chunks(q.max(1))).take(m) {
                data.extend_from_slice(&ra[..p]);
                data.extend_from_slice(&rb[..q]);
            }
            Tensor::matrix(m, p + q, data)?
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::ConcatCols(a, b), value, rg, "concat_cols")
    }

    /// Column-wise maximum of an m×n matrix, giving a length-n vector. Ties go
    /// to the lowest row index.
    pub fn reduce_max_rows(&self, a: Var) -> Result<Var, AutodiffError> {
        let (value, argmax) = {
            let ta = self.value(a);
            let (m, n) = matrix_dims("reduce_max_rows", &ta)?;
            if m == 0 {
                return Err(AutodiffError::Empty { op: "reduce_max_rows" });
            }
            let data = ta.data();
            let mut best = data[..n].to_vec();
            let mut argmax = vec![0usize; n];
            for i in 1..m {
                let row = &data[i * n..(i + 1) * n];
                for j in 0..n {
                    if row[j] > best[j] {
                        best[j] = row[j];
                        argmax[j] = i;
                    }
                }
            }
            (Tensor::vector(best), argmax)
        };
        self.push(Op::MaxRows { input: a, argmax }, value, self.requires(a), "reduce_max_rows")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("add", ta, tb)?;
            zip_map(ta, tb, |x, y| x + y)
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Add(a, b), value, rg, "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("sub", ta, tb)?;
            zip_map(ta, tb, |x, y| x - y)
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Sub(a, b), value, rg, "sub")
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("mul", ta, tb)?;
            zip_map(ta, tb, |x, y| x * y)
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Mul(a, b), value, rg, "mul")
    }

    pub fn sum(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = Tensor::scalar(self.value(a).data().iter().copied().sum());
        self.push(Op::Sum(a), value, self.requires(a), "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = {
            let ta = self.value(a);
            if ta.is_empty() {
                return Err(AutodiffError::Empty { op: "mean" });
            }
            let total: T = ta.data().iter().copied().sum();
            Tensor::scalar(total / T::of(ta.len() as f64))
        };
        self.push(Op::Mean(a), value, self.requires(a), "mean")
    }

    /// Selects rows `index` of an m×c matrix, giving a len(index)×c matrix.
    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let value = {
            let ta = self.value(a);
            let (m, c) = matrix_dims("gather_rows", &ta)?;
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in index {
                if i >= m {
                    return Err(AutodiffError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        len: m,
                    });
                }
                data.extend_from_slice(&ta.data()[i * c..(i + 1) * c]);
            }
            Tensor::matrix(index.len(), c, data)?
        };
        let op = Op::GatherRows {
            input: a,
            index: index.to_vec(),
        };
        self.push(op, value, self.requires(a), "gather_rows")
    }

    /// Euclidean norm of every row of an m×c matrix, giving a length-m vector.
    /// The gradient at a zero row is defined as zero.
    pub fn row_norms(&self, a: Var) -> Result<Var, AutodiffError> {
        let value = {
            let ta = self.value(a);
            let (_, c) = matrix_dims("row_norms", &ta)?;
            let norms = ta
                .data()
                .chunks(c.max(1))
                .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
                .collect();
            Tensor::vector(norms)
        };
        self.push(Op::RowNorms(a), value, self.requires(a), "row_norms")
    }

    /// Repeats each row of an m×c matrix `times` times consecutively.
    pub fn repeat_rows(&self, a: Var, times: usize) -> Result<Var, AutodiffError> {
        let value = {
            let ta = self.value(a);
            let (m, c) = matrix_dims("repeat_rows", &ta)?;
            let mut data = Vec::with_capacity(m * c * times);
            for row in ta.data().chunks(c.max(1)).take(m) {
                for _ in 0..times {
                    data.extend_from_slice(row);
                }
            }
            Tensor::matrix(m * times, c, data)?
        };
        self.push(Op::RepeatRows { input: a, times }, value, self.requires(a), "repeat_rows")
    }

    /// Rows `start..end` of an m×c matrix.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let value = {
            let ta = self.value(a);
            let (m, c) = matrix_dims("slice_rows", &ta)?;
            if start > end || end > m {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "slice_rows",
                    index: end.max(start),
                    len: m,
                });
            }
            Tensor::matrix(end - start, c, ta.data()[start * c..end * c].to_vec())?
        };
        self.push(Op::SliceRows { input: a, start }, value, self.requires(a), "slice_rows")
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(Op::Reshape(a), value, self.requires(a), "reshape")
    }

    /// Applies a planar rigid motion to constant n×3 `points`. `pose` holds
    /// `(yaw, tx, ty)`; `tz` is a known constant offset.
    pub fn planar_transform(&self, pose: Var, points: &Tensor<T>, tz: T) -> Result<Var, AutodiffError> {
        let value = {
            let tp = self.value(pose);
            if tp.len() != 3 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "planar_transform",
                    left: tp.shape().to_vec(),
                    right: vec![3],
                });
            }
            let (_, c) = matrix_dims("planar_transform", points)?;
            if c != 3 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "planar_transform",
                    left: tp.shape().to_vec(),
                    right: points.shape().to_vec(),
                });
            }
            let p = tp.data();
            let (s, co) = p[0].sin_cos();
            let mut out = points.clone();
            for row in out.data_mut().chunks_mut(3) {
                let (x, y) = (row[0], row[1]);
                row[0] = co * x - s * y + p[1];
                row[1] = s * x + co * y + p[2];
                row[2] += tz;
            }
            out
        };
        let op = Op::PlanarTransform {
            pose,
            points: points.clone(),
        };
        self.push(op, value, self.requires(pose), "planar_transform")
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Every trainable leaf gets an entry, zero-filled when the loss does not
    /// depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let root = &nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(AutodiffError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = (if id == loss.0 { grads[id].clone() } else { grads[id].take() }) else {
                continue;
            };
            backprop(&nodes, &node.op, &node.value, &g, &mut grads);
        }

        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], target: Var, contrib: Tensor<T>) {
    if !nodes[target.0].requires_grad {
        return;
    }
    match &mut grads[target.0] {
        Some(g) => g.add_assign(&contrib),
        slot => *slot = Some(contrib),
    }
}

/// Accumulates `grad · contrib` into `target` without materializing a
/// temporary when the slot is already allocated.
fn accumulate_with<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], target: Var, fill: impl FnOnce(&mut Tensor<T>)) {
    if !nodes[target.0].requires_grad {
        return;
    }
    let slot = &mut grads[target.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[target.0].value.shape()));
    }
    fill(slot.as_mut().expect("allocated above"));
}

fn backprop<T: Real>(nodes: &[Node<T>], op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let ta = &nodes[a.0].value;
            let tb = &nodes[b.0].value;
            let (m, k) = ta.dims2().expect("checked in forward");
            let n = tb.dims2().expect("checked in forward").1;
            // dA += G · Bᵀ
            accumulate_with(nodes, grads, *a, |da| {
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g.data(),
                    (n as isize, 1),
                    tb.data(),
                    (1, n as isize),
                    T::one(),
                    da.data_mut(),
                    (k as isize, 1),
                );
            });
            // dB += Aᵀ · G
            accumulate_with(nodes, grads, *b, |db| {
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    ta.data(),
                    (1, k as isize),
                    g.data(),
                    (n as isize, 1),
                    T::one(),
                    db.data_mut(),
                    (n as isize, 1),
                );
            });
        }
        Op::AddBias(a, bias) => {
            accumulate(nodes, grads, *a, g.clone());
            let n = nodes[bias.0].value.len();
            accumulate_with(nodes, grads, *bias, |db| {
                let d = db.data_mut();
                for row in g.data().chunks(n) {
                    for (x, &v) in d.iter_mut().zip(row) {
                        *x += v;
                    }
                }
            });
        }
        Op::Relu(a) => {
            accumulate(
                nodes,
                grads,
                *a,
                zip_map(g, out, |gv, y| if y > T::zero() { gv } else { T::zero() }),
            );
        }
        Op::Tanh(a) => {
            accumulate(nodes, grads, *a, zip_map(g, out, |gv, y| gv * (T::one() - y * y)));
        }
        Op::Exp(a) => {
            accumulate(nodes, grads, *a, zip_map(g, out, |gv, y| gv * y));
        }
        Op::Scale(a, factor) => {
            let f = *factor;
            accumulate(nodes, grads, *a, g.map(|v| v * f));
        }
        Op::ConcatCols(a, b) => {
            let p = nodes[a.0].value.dims2().expect("checked").1;
            let q = nodes[b.0].value.dims2().expect("checked").1;
            accumulate_with(nodes, grads, *a, |da| {
                for (dst, src) in da.data_mut().chunks_mut(p.max(1)).zip(g.data().chunks(p + q)) {
                    for (x, &v) in dst.iter_mut().zip(&src[..p]) {
                        *x += v;
                    }
                }
            });
            accumulate_with(nodes, grads, *b, |db| {
                for (dst, src) in db.data_mut().chunks_mut(q.max(1)).zip(g.data().chunks(p + q)) {
                    for (x, &v) in dst.iter_mut().zip(&src[p..]) {
                        *x += v;
                    }
                }
            });
        }
        Op::MaxRows { input, argmax } => {
            let n = argmax.len();
            accumulate_with(nodes, grads, *input, |da| {
                let d = da.data_mut();
                for (j, &i) in argmax.iter().enumerate() {
                    d[i * n + j] += g.data()[j];
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            accumulate(nodes, grads, *a, zip_map(g, tb, |gv, y| gv * y));
            accumulate(nodes, grads, *b, zip_map(g, ta, |gv, x| gv * x));
        }
        Op::Sum(a) => {
            let gv = g.data()[0];
            accumulate(nodes, grads, *a, Tensor::full(nodes[a.0].value.shape(), gv));
        }
        Op::Mean(a) => {
            let ta = &nodes[a.0].value;
            let gv = g.data()[0] / T::of(ta.len() as f64);
            accumulate(nodes, grads, *a, Tensor::full(ta.shape(), gv));
        }
        Op::GatherRows { input, index } => {
            let c = nodes[input.0].value.dims2().expect("checked").1;
            accumulate_with(nodes, grads, *input, |da| {
                let d = da.data_mut();
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g.data()[r * c + j];
                    }
                }
            });
        }
        Op::RowNorms(a) => {
            let ta = &nodes[a.0].value;
            let c = ta.dims2().expect("checked").1;
            accumulate_with(nodes, grads, *a, |da| {
                for (r, (dst, src)) in da.data_mut().chunks_mut(c.max(1)).zip(ta.data().chunks(c.max(1))).enumerate() {
                    let norm = out.data()[r];
                    if norm > T::zero() {
                        let s = g.data()[r] / norm;
                        for (x, &v) in dst.iter_mut().zip(src) {
                            *x += s * v;
                        }
                    }
                }
            });
        }
        Op::RepeatRows { input, times } => {
            let c = nodes[input.0].value.dims2().expect("checked").1;
            let times = *times;
            accumulate_with(nodes, grads, *input, |da| {
                for (i, dst) in da.data_mut().chunks_mut(c.max(1)).enumerate() {
                    for r in 0..times {
                        let src = &g.data()[(i * times + r) * c..(i * times + r + 1) * c];
                        for (x, &v) in dst.iter_mut().zip(src) {
                            *x += v;
                        }
                    }
                }
            });
        }
        Op::SliceRows { input, start } => {
            let c = nodes[input.0].value.dims2().expect("checked").1;
            let offset = start * c;
            accumulate_with(nodes, grads, *input, |da| {
                for (x, &v) in da.data_mut()[offset..offset + g.len()].iter_mut().zip(g.data()) {
                    *x += v;
                }
            });
        }
        Op::Reshape(a) => {
            let shape = nodes[a.0].value.shape().to_vec();
            accumulate(nodes, grads, *a, g.clone().reshaped(shape).expect("same length"));
        }
        Op::PlanarTransform { pose, points } => {
            let yaw = nodes[pose.0].value.data()[0];
            let (s, c) = yaw.sin_cos();
            let mut d = [T::zero(); 3];
            for (p, gr) in points.data().chunks(3).zip(g.data().chunks(3)) {
                let (x, y) = (p[0], p[1]);
                d[0] += gr[0] * (-s * x - c * y) + gr[1] * (c * x - s * y);
                d[1] += gr[0];
                d[2] += gr[1];
            }
            let shape = nodes[pose.0].value.shape().to_vec();
            accumulate(nodes, grads, *pose, Tensor::new(shape, d.to_vec()).expect("length 3"));
        }
    }
}
