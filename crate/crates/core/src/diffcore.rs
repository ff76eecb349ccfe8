//! Tape-based reverse-mode automatic differentiation over dense 2-D `f64`
//! tensors, plus an Adam optimizer.
//!
//! Every operation evaluates eagerly and records a node on the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse and accumulates exact
//! gradients. Max-style reductions route each output element's gradient to a
//! single input row (the first maximal one).

use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, DiffError> {
    Err(DiffError::Shape(msg.into()))
}

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.is_empty() || shape.len() > 2 {
            return shape_err(format!("rank {} not supported", shape.len()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return shape_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows when viewed as a matrix (a vector is one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Rows of the input that feed each output row.
pub type Segments = Rc<Vec<Vec<usize>>>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Var, Var),
    GatherRows(Var, Rc<Vec<usize>>),
    /// `argmax[o * cols + c]` is the winning input row, `usize::MAX` if the segment was empty.
    SegmentMax(Var, Vec<usize>),
    SegmentSum(Var, Segments),
    SegmentMean(Var, Segments),
    Sum(Var),
    Mean(Var),
    L1(Var),
    Mse(Var, Rc<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// `c += a · b` for row-major `c` of shape `m x n`; `a` and `b` are given
/// as (data, row stride, column stride).
fn gemm_acc(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    c: &mut [f64],
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides address only elements inside each slice, as
    // checked above, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Records operations for one forward/backward pass. Single-threaded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.cols() != bv.rows() {
            return shape_err(format!("matmul {:?} x {:?}", av.shape, bv.shape));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm_acc((m, k, n), (&av.data, k, 1), (&bv.data, n, 1), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return shape_err(format!("add {:?} + {:?}", av.shape, bv.shape));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape.clone(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() || bv.rows() != 1 {
            return shape_err(format!("add_row {:?} + {:?}", av.shape, bv.shape));
        }
        let c = av.cols();
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data[i % c])
            .collect();
        let t = Tensor::new(av.shape.clone(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|x| x * k).collect(),
        };
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        };
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Column-wise concatenation `[a | b]`; row counts must match.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.rows() != bv.rows() {
            return shape_err(format!("concat {:?} | {:?}", av.shape, bv.shape));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, ca + cb, data)?, Op::Concat(a, b), rg))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<usize>>) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.shape.len() != 2 {
            return shape_err("gather_rows needs a matrix");
        }
        let (r, c) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= r {
                return shape_err(format!("gather index {i} out of {r} rows"));
            }
            data.extend_from_slice(av.row(i));
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(index.len(), c, data)?;
        Ok(self.push(t, Op::GatherRows(a, index), rg))
    }

    fn check_segments(&self, a: Var, segs: &[Vec<usize>]) -> Result<(usize, usize), DiffError> {
        let av = self.value(a);
        if av.shape.len() != 2 {
            return shape_err("segment reduction needs a matrix");
        }
        let r = av.rows();
        if segs.iter().flatten().any(|&i| i >= r) {
            return shape_err(format!("segment row out of {r} rows"));
        }
        Ok((r, av.cols()))
    }

    /// Element-wise maximum over the rows in each segment, with argmax
    /// routing. Ties go to the earliest row in segment order. Empty
    /// segments produce zeros and pass no gradient.
    pub fn segment_max(&mut self, a: Var, segs: &[Vec<usize>]) -> Result<Var, DiffError> {
        let (_, c) = self.check_segments(a, segs)?;
        let av = self.value(a);
        let mut out = vec![0.0; segs.len() * c];
        let mut arg = vec![usize::MAX; segs.len() * c];
        for (o, seg) in segs.iter().enumerate() {
            for &row in seg {
                let vals = av.row(row);
                for j in 0..c {
                    let k = o * c + j;
                    if arg[k] == usize::MAX || vals[j] > out[k] {
                        out[k] = vals[j];
                        arg[k] = row;
                    }
                }
            }
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(segs.len(), c, out)?;
        Ok(self.push(t, Op::SegmentMax(a, arg), rg))
    }

    /// Column-wise max over all rows: `[r x c] -> [1 x c]`.
    pub fn rowwise_max(&mut self, a: Var) -> Result<Var, DiffError> {
        let r = self.value(a).rows();
        if r == 0 {
            return shape_err("rowwise_max of an empty matrix");
        }
        self.segment_max(a, &[(0..r).collect()])
    }

    /// Column-wise argmax rows of a [`Tape::segment_max`] or
    /// [`Tape::rowwise_max`] output.
    pub fn argmax_rows(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::SegmentMax(_, arg) => Some(arg),
            _ => None,
        }
    }

    pub fn segment_sum(&mut self, a: Var, segs: Segments) -> Result<Var, DiffError> {
        let (_, c) = self.check_segments(a, &segs)?;
        let av = self.value(a);
        let mut out = vec![0.0; segs.len() * c];
        for (o, seg) in segs.iter().enumerate() {
            for &row in seg {
                for (x, y) in out[o * c..(o + 1) * c].iter_mut().zip(av.row(row)) {
                    *x += y;
                }
            }
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(segs.len(), c, out)?;
        Ok(self.push(t, Op::SegmentSum(a, segs), rg))
    }

    pub fn segment_mean(&mut self, a: Var, segs: Segments) -> Result<Var, DiffError> {
        let (_, c) = self.check_segments(a, &segs)?;
        let av = self.value(a);
        let mut out = vec![0.0; segs.len() * c];
        for (o, seg) in segs.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            let inv = 1.0 / seg.len() as f64;
            for &row in seg {
                for (x, y) in out[o * c..(o + 1) * c].iter_mut().zip(av.row(row)) {
                    *x += y * inv;
                }
            }
        }
        let rg = self.rg(a);
        let t = Tensor::matrix(segs.len(), c, out)?;
        Ok(self.push(t, Op::SegmentMean(a, segs), rg))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.is_empty() {
            return shape_err("mean of an empty tensor");
        }
        let s = av.data.iter().sum::<f64>() / av.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Sum of absolute values. Subgradient at 0 is 0.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).l1();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::L1(a), rg)
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: Rc<Vec<f64>>) -> Result<Var, DiffError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.is_empty() {
            return shape_err(format!("mse over {} predictions, {} targets", pv.len(), target.len()));
        }
        let s = pv
            .data
            .iter()
            .zip(target.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pv.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), rg))
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let seed = {
            let v = self.value(root);
            Tensor {
                shape: v.shape.clone(),
                data: vec![1.0; v.len()],
            }
        };
        self.backward_with(root, seed)
    }

    /// Reverse pass seeded with an explicit upstream gradient at `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        self.reverse(root, seed, false)
    }

    /// Like [`Tape::backward_with`], but keeps the gradient of every
    /// intermediate node, not only of leaves.
    pub fn backward_retained(&self, root: Var, seed: Tensor) -> Gradients {
        self.reverse(root, seed, true)
    }

    fn reverse(&self, root: Var, seed: Tensor, retain: bool) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(seed.shape, self.value(root).shape, "seed shape mismatch");
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let taken = if retain {
                grads[idx].clone()
            } else {
                grads[idx].take()
            };
            let Some(g) = taken else {
                continue;
            };
            let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&self.nodes[v.0].value.shape));
                delta(&mut slot.data);
            };
            match &node.op {
                Op::Leaf => {
                    if !retain {
                        grads[idx] = Some(g);
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA += G Bᵀ, dB += Aᵀ G
                    acc(*a, &|ga| gemm_acc((m, n, k), (&g.data, n, 1), (&bv.data, 1, n), ga));
                    acc(*b, &|gb| gemm_acc((k, m, n), (&av.data, 1, k), (&g.data, n, 1), gb));
                }
                Op::Add(a, b) => {
                    acc(*a, &|ga| ga.iter_mut().zip(&g.data).for_each(|(x, y)| *x += y));
                    acc(*b, &|gb| gb.iter_mut().zip(&g.data).for_each(|(x, y)| *x += y));
                }
                Op::AddRow(a, bias) => {
                    acc(*a, &|ga| ga.iter_mut().zip(&g.data).for_each(|(x, y)| *x += y));
                    let c = self.value(*bias).len();
                    acc(*bias, &|gb| {
                        for (i, y) in g.data.iter().enumerate() {
                            gb[i % c] += y;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc(*a, &|ga| ga.iter_mut().zip(&g.data).for_each(|(x, y)| *x += k * y));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    acc(*a, &|ga| {
                        for ((x, y), z) in ga.iter_mut().zip(&g.data).zip(&av.data) {
                            if *z > 0.0 {
                                *x += y;
                            }
                        }
                    });
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let c = ca + cb;
                    acc(*a, &|ga| {
                        for (i, row) in g.data.chunks(c).enumerate() {
                            for j in 0..ca {
                                ga[i * ca + j] += row[j];
                            }
                        }
                    });
                    acc(*b, &|gb| {
                        for (i, row) in g.data.chunks(c).enumerate() {
                            for j in 0..cb {
                                gb[i * cb + j] += row[ca + j];
                            }
                        }
                    });
                }
                Op::GatherRows(a, index) => {
                    let c = self.value(*a).cols();
                    acc(*a, &|ga| {
                        for (o, &i) in index.iter().enumerate() {
                            for j in 0..c {
                                ga[i * c + j] += g.data[o * c + j];
                            }
                        }
                    });
                }
                Op::SegmentMax(a, arg) => {
                    let c = self.value(*a).cols();
                    acc(*a, &|ga| {
                        for (k, &row) in arg.iter().enumerate() {
                            if row != usize::MAX {
                                ga[row * c + k % c] += g.data[k];
                            }
                        }
                    });
                }
                Op::SegmentSum(a, segs) => {
                    let c = self.value(*a).cols();
                    acc(*a, &|ga| {
                        for (o, seg) in segs.iter().enumerate() {
                            for &row in seg {
                                for j in 0..c {
                                    ga[row * c + j] += g.data[o * c + j];
                                }
                            }
                        }
                    });
                }
                Op::SegmentMean(a, segs) => {
                    let c = self.value(*a).cols();
                    acc(*a, &|ga| {
                        for (o, seg) in segs.iter().enumerate() {
                            if seg.is_empty() {
                                continue;
                            }
                            let inv = 1.0 / seg.len() as f64;
                            for &row in seg {
                                for j in 0..c {
                                    ga[row * c + j] += g.data[o * c + j] * inv;
                                }
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    acc(*a, &|ga| ga.iter_mut().for_each(|x| *x += s));
                }
                Op::Mean(a) => {
                    let s = g.data[0] / self.value(*a).len() as f64;
                    acc(*a, &|ga| ga.iter_mut().for_each(|x| *x += s));
                }
                Op::L1(a) => {
                    let s = g.data[0];
                    let av = self.value(*a);
                    acc(*a, &|ga| {
                        for (x, &z) in ga.iter_mut().zip(&av.data) {
                            if z > 0.0 {
                                *x += s;
                            } else if z < 0.0 {
                                *x -= s;
                            }
                        }
                    });
                }
                Op::Mse(p, target) => {
                    let pv = self.value(*p);
                    let s = 2.0 * g.data[0] / pv.len() as f64;
                    acc(*p, &|gp| {
                        for ((x, &y), &t) in gp.iter_mut().zip(&pv.data).zip(target.iter()) {
                            *x += s * (y - t);
                        }
                    });
                }
            }
        }
        Gradients { grads }
    }
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), DiffError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return shape_err("optimizer state does not match parameter list");
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape != g.shape {
                return shape_err(format!("param {:?} vs grad {:?}", p.shape, g.shape));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam update; convenience wrapper over [`Adam::step`].
pub fn sgd_adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut Adam,
    lr: f64,
) -> Result<(), DiffError> {
    state.lr = lr;
    state.step(params, grads)
}
