//! Reverse-mode automatic differentiation on dynamically shaped `f64` tensors.
//!
//! A [`Graph`] is a tape of eagerly evaluated nodes. Operations return [`Var`]
//! handles; [`Graph::backward`] walks the tape in reverse and accumulates
//! vector-Jacobian products. The tape is rebuilt every training step and
//! dropped after the parameter update, so node values stay alive exactly as
//! long as the backward pass needs them.
//!
//! Binary operations broadcast in the numpy style (shapes aligned from the
//! right, size-1 axes stretched); gradients are reduced back over the
//! broadcast axes.

use ndarray::{ArrayD, Axis, IxDyn, Slice};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Sqr(Var),
    Scale(Var, f64),
    Clamp(Var, f64, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    SumAll(Var),
    SumAxis(Var, usize, bool),
    SoftmaxLast(Var),
    LogSoftmaxLast(Var),
    GatherRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    Concat(Var, Var, usize),
    Narrow(Var, usize, usize, usize),
    Repeat0(Var),
    FreeBits(Var, f64),
    SymFromPairs(Var, usize),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Tape of eagerly evaluated tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Reduce a gradient of broadcast shape back to the operand shape `target`.
fn reduce_to_shape(grad: ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    let mut g = grad;
    while g.ndim() > target.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &dim) in target.iter().enumerate() {
        if dim == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn matmul2(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    a2.dot(&b2).into_dyn()
}

fn matmul2_tn(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    a2.t().dot(&b2).into_dyn()
}

fn matmul2_nt(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let a2 = a.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let b2 = b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    a2.dot(&b2.t()).into_dyn()
}

fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 0-d (scalar) node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1, "scalar_value on non-scalar node");
        val.iter().next().copied().unwrap()
    }

    pub fn constant(&mut self, value: impl Into<ArrayD<f64>>) -> Var {
        self.push(value.into(), Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(ndarray::arr0(value).into_dyn(), Op::Leaf, false)
    }

    /// Leaf that participates in gradient accumulation.
    pub fn param(&mut self, value: impl Into<ArrayD<f64>>) -> Var {
        self.push(value.into(), Op::Leaf, true)
    }

    /// Copy of `a` cut off from the tape.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.clone();
        self.push(v, Op::Leaf, false)
    }

    fn bin_elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let mut out = self
            .value(a)
            .broadcast(IxDyn(&shape))
            .expect("lhs broadcast")
            .to_owned();
        {
            let vb = self.value(b).broadcast(IxDyn(&shape)).expect("rhs broadcast");
            out.zip_mut_with(&vb, |x, &y| *x = f(*x, y));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.bin_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.bin_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.bin_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.bin_elementwise(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).mapv(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn sqr(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Sqr(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        // constant shift: gradient passes through unchanged
        self.unary(a, |x| x + c, Op::Scale(a, 1.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu_scalar, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// 2-d matrix product `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul2(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Matmul(a, b), ng)
    }

    /// Batched 3-d matrix product `(N,m,k) @ (N,k,n) -> (N,m,n)`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let (n, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let k2 = vb.shape()[1];
        let r = vb.shape()[2];
        assert_eq!(n, vb.shape()[0], "bmm batch mismatch");
        assert_eq!(k, k2, "bmm inner-dim mismatch");
        let mut out = ArrayD::zeros(IxDyn(&[n, m, r]));
        for i in 0..n {
            let ai = va
                .index_axis(Axis(0), i)
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let bi = vb
                .index_axis(Axis(0), i)
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let prod = ai.dot(&bi);
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Bmm(a, b), ng)
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        self.permute(a, &[1, 0])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let out = self
            .value(a)
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Permute(a, axes.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape size mismatch");
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(ndarray::arr0(s).into_dyn(), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Var {
        let mut out = self.value(a).sum_axis(Axis(axis));
        if keepdim {
            out = out.insert_axis(Axis(axis));
        }
        let ng = self.needs(a);
        self.push(out, Op::SumAxis(a, axis, keepdim), ng)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Var {
        let n = self.value(a).shape()[axis] as f64;
        let s = self.sum_axis(a, axis, keepdim);
        self.scale(s, 1.0 / n)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let last = v.ndim() - 1;
        let mut out = v.to_owned();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let _ = last;
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxLast(a), ng)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax_last(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.needs(a);
        self.push(out, Op::LogSoftmaxLast(a), ng)
    }

    /// Row lookup: `(N,E)` table gathered at `ids` -> `(M,E)`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table);
        assert_eq!(v.ndim(), 2, "gather_rows expects a 2-d table");
        let e = v.shape()[1];
        let mut out = ArrayD::zeros(IxDyn(&[ids.len(), e]));
        for (r, &id) in ids.iter().enumerate() {
            out.index_axis_mut(Axis(0), r)
                .assign(&v.index_axis(Axis(0), id));
        }
        let ng = self.needs(table);
        self.push(out, Op::GatherRows(table, ids.to_vec()), ng)
    }

    /// Per-row column selection: `(N,V)` at `ids[n]` -> `(N,)`.
    pub fn select_cols(&mut self, a: Var, ids: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.ndim(), 2);
        assert_eq!(v.shape()[0], ids.len());
        let out: Vec<f64> = ids.iter().enumerate().map(|(r, &c)| v[[r, c]]).collect();
        let ng = self.needs(a);
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[ids.len()]), out).unwrap(),
            Op::SelectCols(a, ids.to_vec()),
            ng,
        )
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Var {
        let out = ndarray::concatenate(Axis(axis), &[self.value(a).view(), self.value(b).view()])
            .expect("concat shape mismatch");
        let ng = self.needs(a) || self.needs(b);
        self.push(out.as_standard_layout().to_owned(), Op::Concat(a, b, axis), ng)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let out = self
            .value(a)
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .as_standard_layout()
            .to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Narrow(a, axis, start, len), ng)
    }

    /// Tile along a new leading axis: shape `S` -> `(n, S...)`.
    pub fn repeat0(&mut self, a: Var, n: usize) -> Var {
        let v = self.value(a);
        let mut shape = vec![n];
        shape.extend_from_slice(v.shape());
        let out = v
            .broadcast(IxDyn(&shape))
            .expect("repeat0 broadcast")
            .to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Repeat0(a), ng)
    }

    /// Free-bits gate: forward `max(x, t)`, gradient zeroed where `x < t`.
    pub fn free_bits(&mut self, a: Var, threshold: f64) -> Var {
        self.unary(a, |x| x.max(threshold), Op::FreeBits(a, threshold))
    }

    /// Scatter a flat vector of `K*(K-1)/2` pair values (row-major `i<j`
    /// order) into a symmetric `K x K` matrix with zero diagonal.
    pub fn symmetric_from_pairs(&mut self, pairs: Var, k: usize) -> Var {
        let v = self.value(pairs);
        assert_eq!(v.len(), k * (k - 1) / 2, "pair count mismatch");
        let flat: Vec<f64> = v.iter().copied().collect();
        let mut out = ArrayD::zeros(IxDyn(&[k, k]));
        let mut idx = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                out[[i, j]] = flat[idx];
                out[[j, i]] = flat[idx];
                idx += 1;
            }
        }
        let ng = self.needs(pairs);
        self.push(out, Op::SymFromPairs(pairs, k), ng)
    }

    /// Reverse pass from a scalar output. Returns gradients for every node
    /// that required them.
    pub fn backward(&mut self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward expects a scalar output");
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(ArrayD::from_elem(self.value(out).raw_dim(), 1.0));

        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn add_grad(&self, grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, i: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, reduce_to_shape(g.clone(), self.value(*a).shape()));
                self.add_grad(grads, *b, reduce_to_shape(g.clone(), self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, reduce_to_shape(g.clone(), self.value(*a).shape()));
                self.add_grad(grads, *b, reduce_to_shape(-g.clone(), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let shape = self.nodes[i].value.shape().to_vec();
                if self.needs(*a) {
                    let vb = self.value(*b).broadcast(IxDyn(&shape)).unwrap();
                    self.add_grad(grads, *a, reduce_to_shape(g * &vb, self.value(*a).shape()));
                }
                if self.needs(*b) {
                    let va = self.value(*a).broadcast(IxDyn(&shape)).unwrap();
                    self.add_grad(grads, *b, reduce_to_shape(g * &va, self.value(*b).shape()));
                }
            }
            Op::Div(a, b) => {
                let shape = self.nodes[i].value.shape().to_vec();
                let vb = self.value(*b).broadcast(IxDyn(&shape)).unwrap().to_owned();
                if self.needs(*a) {
                    self.add_grad(grads, *a, reduce_to_shape(g / &vb, self.value(*a).shape()));
                }
                if self.needs(*b) {
                    let va = self.value(*a).broadcast(IxDyn(&shape)).unwrap();
                    let gb = g * &va / (&vb * &vb);
                    self.add_grad(grads, *b, reduce_to_shape(-gb, self.value(*b).shape()));
                }
            }
            Op::Neg(a) => self.add_grad(grads, *a, -g.clone()),
            Op::Exp(a) => self.add_grad(grads, *a, g * &self.nodes[i].value),
            Op::Ln(a) => self.add_grad(grads, *a, g / self.value(*a)),
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, g / &(y * 2.0));
            }
            Op::Sqr(a) => {
                let va = self.value(*a);
                self.add_grad(grads, *a, g * &(va * 2.0));
            }
            Op::Scale(a, c) => self.add_grad(grads, *a, g * *c),
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a);
                let mut gg = g.clone();
                gg.zip_mut_with(va, |gx, &x| {
                    if x < *lo || x > *hi {
                        *gx = 0.0;
                    }
                });
                self.add_grad(grads, *a, gg);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.add_grad(grads, *a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                self.add_grad(grads, *a, g * &va.mapv(gelu_grad_scalar));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.add_grad(grads, *a, g * &va.mapv(|x| f64::from(x > 0.0)));
            }
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, matmul2_nt(g, self.value(*b)));
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, matmul2_tn(self.value(*a), g));
                }
            }
            Op::Bmm(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let n = va.shape()[0];
                if self.needs(*a) {
                    let mut ga = ArrayD::zeros(va.raw_dim());
                    for t in 0..n {
                        let gt = g
                            .index_axis(Axis(0), t)
                            .into_dimensionality::<ndarray::Ix2>()
                            .unwrap();
                        let bt = vb
                            .index_axis(Axis(0), t)
                            .into_dimensionality::<ndarray::Ix2>()
                            .unwrap();
                        ga.index_axis_mut(Axis(0), t).assign(&gt.dot(&bt.t()));
                    }
                    self.add_grad(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = ArrayD::zeros(vb.raw_dim());
                    for t in 0..n {
                        let gt = g
                            .index_axis(Axis(0), t)
                            .into_dimensionality::<ndarray::Ix2>()
                            .unwrap();
                        let at = va
                            .index_axis(Axis(0), t)
                            .into_dimensionality::<ndarray::Ix2>()
                            .unwrap();
                        gb.index_axis_mut(Axis(0), t).assign(&at.t().dot(&gt));
                    }
                    self.add_grad(grads, *b, gb);
                }
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0usize; axes.len()];
                for (to, &from) in axes.iter().enumerate() {
                    inv[from] = to;
                }
                let ga = g
                    .view()
                    .permuted_axes(IxDyn(&inv))
                    .as_standard_layout()
                    .to_owned();
                self.add_grad(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let ga = g
                    .clone()
                    .into_shape_with_order(self.value(*a).raw_dim())
                    .unwrap();
                self.add_grad(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let s = g.iter().next().copied().unwrap();
                self.add_grad(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), s));
            }
            Op::SumAxis(a, axis, keepdim) => {
                let gg = if *keepdim {
                    g.clone()
                } else {
                    g.clone().insert_axis(Axis(*axis))
                };
                let ga = gg
                    .broadcast(self.value(*a).raw_dim())
                    .expect("sum_axis grad broadcast")
                    .to_owned();
                self.add_grad(grads, *a, ga);
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let gy = g * y;
                let last = y.ndim() - 1;
                let dot = gy.sum_axis(Axis(last)).insert_axis(Axis(last));
                let ga = &gy - &(y * &dot.broadcast(y.raw_dim()).unwrap());
                self.add_grad(grads, *a, ga);
            }
            Op::LogSoftmaxLast(a) => {
                let y = &self.nodes[i].value; // log-softmax output
                let last = y.ndim() - 1;
                let gsum = g.sum_axis(Axis(last)).insert_axis(Axis(last));
                let soft = y.mapv(f64::exp);
                let ga = g - &(&soft * &gsum.broadcast(y.raw_dim()).unwrap());
                self.add_grad(grads, *a, ga);
            }
            Op::GatherRows(table, ids) => {
                let mut gt = ArrayD::zeros(self.value(*table).raw_dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = gt.index_axis_mut(Axis(0), id);
                    row += &g.index_axis(Axis(0), r);
                }
                self.add_grad(grads, *table, gt);
            }
            Op::SelectCols(a, ids) => {
                let mut ga = ArrayD::zeros(self.value(*a).raw_dim());
                for (r, &c) in ids.iter().enumerate() {
                    ga[[r, c]] = g[[r]];
                }
                self.add_grad(grads, *a, ga);
            }
            Op::Concat(a, b, axis) => {
                let na = self.value(*a).shape()[*axis];
                let nb = self.value(*b).shape()[*axis];
                let ga = g
                    .slice_axis(Axis(*axis), Slice::from(0..na))
                    .to_owned();
                let gb = g
                    .slice_axis(Axis(*axis), Slice::from(na..na + nb))
                    .to_owned();
                self.add_grad(grads, *a, ga);
                self.add_grad(grads, *b, gb);
            }
            Op::Narrow(a, axis, start, len) => {
                let mut ga = ArrayD::zeros(self.value(*a).raw_dim());
                ga.slice_axis_mut(Axis(*axis), Slice::from(*start..start + len))
                    .assign(g);
                self.add_grad(grads, *a, ga);
            }
            Op::Repeat0(a) => {
                self.add_grad(grads, *a, g.sum_axis(Axis(0)));
            }
            Op::FreeBits(a, t) => {
                let va = self.value(*a);
                let mut gg = g.clone();
                gg.zip_mut_with(va, |gx, &x| {
                    if x < *t {
                        *gx = 0.0;
                    }
                });
                self.add_grad(grads, *a, gg);
            }
            Op::SymFromPairs(pairs, k) => {
                let mut gp = Vec::with_capacity(k * (k - 1) / 2);
                for i2 in 0..*k {
                    for j in (i2 + 1)..*k {
                        gp.push(g[[i2, j]] + g[[j, i2]]);
                    }
                }
                self.add_grad(
                    grads,
                    *pairs,
                    ArrayD::from_shape_vec(IxDyn(&[k * (k - 1) / 2]), gp).unwrap(),
                );
            }
        }
    }
}

/// Finite-difference gradient checking used by the test and acceptance suites.
pub mod check {
    use ndarray::ArrayD;

    /// Central finite differences of a scalar function w.r.t. one tensor.
    pub fn finite_difference<F>(theta: &ArrayD<f64>, mut f: F, h: f64) -> ArrayD<f64>
    where
        F: FnMut(&ArrayD<f64>) -> f64,
    {
        let mut grad = ArrayD::zeros(theta.raw_dim());
        let mut work = theta.clone();
        let n = theta.len();
        for idx in 0..n {
            let orig = work.as_slice().unwrap()[idx];
            work.as_slice_mut().unwrap()[idx] = orig + h;
            let fp = f(&work);
            work.as_slice_mut().unwrap()[idx] = orig - h;
            let fm = f(&work);
            work.as_slice_mut().unwrap()[idx] = orig;
            grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    /// Relative L2 distance between analytic and numeric gradients:
    /// `||a - n|| / max(||a||, ||n||)` (zero when both vanish). Robust to
    /// individual entries that sit at the finite-difference noise floor.
    pub fn l2_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, atol: f64) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(&a, &n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|&a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|&n| n * n).sum::<f64>().sqrt();
        let denom = na.max(nn);
        if denom <= atol {
            0.0
        } else {
            diff / denom
        }
    }

    /// Largest elementwise relative error between analytic and numeric
    /// gradients. Entries where both magnitudes fall below `atol` count as
    /// exact agreement.
    pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, atol: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(&a, &n)| {
                let m = a.abs().max(n.abs());
                if m < atol {
                    0.0
                } else {
                    (a - n).abs() / m
                }
            })
            .fold(0.0, f64::max)
    }
}
