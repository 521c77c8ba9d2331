//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates gradients into caller-provided buffers, one per parameter
//! slot. Parameters referenced several times (e.g. the cell matrices at
//! every time step) receive the sum of all contributions.

use crate::error::{Error, Result};
use crate::tensor::{
    self, as_matrix, gemm_at_acc, gemm_bt_acc, matmul_shape, softmax_slice, Activation,
    BinaryOp, Real, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Binary(BinaryOp, Var, Var),
    Act {
        kind: Activation,
        x: Var,
        slope: Option<Var>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Dot(Var, Var),
    Sum(Var),
    SumSquares(Var),
    Scale(Var, T),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    ScaleRows(Var, Var),
    NormalizeRows {
        x: Var,
        eps: T,
        norms: Vec<T>,
    },
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    Row(Var, usize),
    SumRows(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Binary(..) => "elementwise",
            Op::Act { .. } => "activation",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleRows(..) => "scale_rows",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::Row(..) => "row",
            Op::SumRows(_) => "sum_rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("rank checked on construction"),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable leaf whose gradient lands in `sink[slot]`.
    pub fn param(&mut self, slot: usize, value: &Tensor<T>) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let v = tensor::elementwise(op, self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    /// Pointwise activation; `slope` is a one-element node and is required for PReLU.
    pub fn activation(&mut self, kind: Activation, x: Var, slope: Option<Var>) -> Result<Var> {
        if let Some(s) = slope {
            if self.value(s).len() != 1 {
                return Err(Error::dim("activation slope", self.shape(s), &[1]));
            }
        }
        let a = slope.map(|s| self.value(s).item());
        let v = tensor::activation(kind, self.value(x), a)?;
        Ok(self.push(v, Op::Act { kind, x, slope }))
    }

    /// Inputs of every ReLU/PReLU node, in recording order. Their signs fix
    /// the linear piece the tape differentiates.
    pub fn kink_inputs(&self) -> Vec<T> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Act { kind: Activation::Relu | Activation::Prelu, x, .. } = node.op {
                out.extend_from_slice(self.value(x).data());
            }
        }
        out
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 1 {
            return Err(Error::Argument(format!(
                "softmax expects a vector, got {:?}",
                self.shape(x)
            )));
        }
        let v = tensor::softmax(self.value(x));
        Ok(self.push(v, Op::Softmax(x)))
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(Error::Argument(format!(
                "cross entropy expects a logit vector, got {:?}",
                lv.shape()
            )));
        }
        let loss = tensor::cross_entropy(lv, target)?;
        let probs = softmax_slice(lv.data());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("dot", self.shape(a), self.shape(b)));
        }
        let v = tensor::dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_squares();
        self.push(Tensor::scalar(v), Op::SumSquares(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|e| e * c);
        self.push(v, Op::Scale(x, c))
    }

    /// Adds vector `v[c]` to every row of `m[r×c]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(Error::dim("add_row", ms, vs));
        }
        let vv = self.value(v).data().to_vec();
        let mut out = self.value(m).clone();
        let c = vv.len();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &x) in row.iter_mut().zip(&vv) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::AddRow(m, v)))
    }

    /// Adds a one-element node to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("add_scalar", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).item();
        let v = self.value(x).map(|e| e + sv);
        Ok(self.push(v, Op::AddScalar(x, s)))
    }

    /// Multiplies row `i` of `m[r×c]` by `g[i]`.
    pub fn scale_rows(&mut self, m: Var, g: Var) -> Result<Var> {
        let (ms, gs) = (self.shape(m), self.shape(g));
        if ms.len() != 2 || gs.len() != 1 || ms[0] != gs[0] {
            return Err(Error::dim("scale_rows", ms, gs));
        }
        let gv = self.value(g).data().to_vec();
        let mut out = self.value(m).clone();
        let c = out.cols();
        for (row, &gi) in out.data_mut().chunks_mut(c).zip(&gv) {
            for o in row {
                *o *= gi;
            }
        }
        Ok(self.push(out, Op::ScaleRows(m, g)))
    }

    /// `row / max(‖row‖, eps)` for every row of a matrix (a vector is one row).
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() > 2 {
            return Err(Error::Argument(format!("normalize_rows on {xs:?}")));
        }
        let (_, c) = rows_cols(xs);
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(c) {
            let n = row.iter().map(|&e| e * e).sum::<T>().sqrt();
            let denom = n.max(eps);
            for e in row.iter_mut() {
                *e /= denom;
            }
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows { x, eps, norms }))
    }

    /// Rows `ids` of `m`, stacked into `[ids.len() × c]`.
    pub fn gather_rows(&mut self, m: Var, ids: &[usize]) -> Result<Var> {
        let mv = self.value(m);
        if mv.rank() != 2 || ids.is_empty() {
            return Err(Error::Argument(format!(
                "gather_rows needs a matrix and at least one id, got {:?}",
                mv.shape()
            )));
        }
        let rows = mv.rows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let c = mv.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(mv.row(i));
        }
        let v = Tensor::from_parts(vec![ids.len(), c], data);
        Ok(self.push(v, Op::GatherRows(m, ids.to_vec())))
    }

    /// First `n` rows of a matrix.
    pub fn slice_rows(&mut self, m: Var, n: usize) -> Result<Var> {
        let mv = self.value(m);
        if mv.rank() != 2 || n == 0 || n > mv.rows() {
            return Err(Error::Argument(format!(
                "cannot take {n} rows of {:?}",
                mv.shape()
            )));
        }
        let c = mv.cols();
        let v = Tensor::from_parts(vec![n, c], mv.data()[..n * c].to_vec());
        Ok(self.push(v, Op::SliceRows(m, n)))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let mv = self.value(m);
        if mv.rank() != 2 || i >= mv.rows() {
            return Err(Error::Argument(format!(
                "row {i} out of range for {:?}",
                mv.shape()
            )));
        }
        let v = Tensor::vector(mv.row(i).to_vec());
        Ok(self.push(v, Op::Row(m, i)))
    }

    /// Column sums of `m[r×c]`, giving `[c]`.
    pub fn sum_rows(&mut self, m: Var) -> Result<Var> {
        let mv = self.value(m);
        if mv.rank() != 2 {
            return Err(Error::Argument(format!("sum_rows on {:?}", mv.shape())));
        }
        let c = mv.cols();
        let mut out = vec![T::zero(); c];
        for row in mv.data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::SumRows(m)))
    }

    /// Accumulates `∂loss/∂param` into `sink[slot]` for every parameter leaf.
    pub fn backward(&self, loss: Var, sink: &mut [Tensor<T>]) -> Result<()> {
        self.backward_with(loss, sink, |_| {})
    }

    /// As [`Tape::backward`], calling `visit` on each node as it is processed.
    pub fn backward_with(
        &self,
        loss: Var,
        sink: &mut [Tensor<T>],
        mut visit: impl FnMut(Var),
    ) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visit(Var(idx));
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads, sink)?;
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        sink: &mut [Tensor<T>],
    ) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(slot) => {
                let target = sink.get_mut(*slot).ok_or_else(|| {
                    Error::Usage(format!("no gradient buffer for parameter slot {slot}"))
                })?;
                if target.shape() != g.shape() {
                    return Err(Error::dim("backward sink", target.shape(), g.shape()));
                }
                target.add_assign(g);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, n, p, _) = matmul_shape(sa, sb)?;
                debug_assert!(as_matrix(sa, true).is_some());
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = acc(grads, *a, sa);
                gemm_bt_acc(gd, bv, ga, m, p, n);
                let gb = acc(grads, *b, sb);
                gemm_at_acc(av, gd, gb, m, n, p);
            }
            Op::Transpose(a) => {
                let t = g.transpose()?;
                let ga = acc(grads, *a, self.shape(*a));
                add_into(ga, t.data());
            }
            Op::Binary(op, a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                match op {
                    BinaryOp::Add => {
                        add_into(acc(grads, *a, &sa), gd);
                        add_into(acc(grads, *b, &sb), gd);
                    }
                    BinaryOp::Sub => {
                        add_into(acc(grads, *a, &sa), gd);
                        for (o, &x) in acc(grads, *b, &sb).iter_mut().zip(gd) {
                            *o -= x;
                        }
                    }
                    BinaryOp::Mul => {
                        let av = self.value(*a).data();
                        let bv = self.value(*b).data();
                        for ((o, &x), &y) in acc(grads, *a, &sa).iter_mut().zip(gd).zip(bv) {
                            *o += x * y;
                        }
                        for ((o, &x), &y) in acc(grads, *b, &sb).iter_mut().zip(gd).zip(av) {
                            *o += x * y;
                        }
                    }
                }
            }
            Op::Act { kind, x, slope } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let a = slope.map_or(T::zero(), |s| self.value(s).item());
                let gx = acc(grads, *x, self.shape(*x));
                for i in 0..gd.len() {
                    gx[i] += gd[i] * kind.derivative(xv[i], yv[i], a);
                }
                if let Some(s) = slope {
                    let ds: T = xv
                        .iter()
                        .zip(gd)
                        .filter(|(&xi, _)| xi <= T::zero())
                        .map(|(&xi, &gi)| xi * gi)
                        .sum();
                    acc(grads, *s, &[1])[0] += ds;
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let inner: T = y.iter().zip(gd).map(|(&a, &b)| a * b).sum();
                let gx = acc(grads, *x, self.shape(*x));
                for i in 0..y.len() {
                    gx[i] += y[i] * (gd[i] - inner);
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let s = gd[0];
                let gx = acc(grads, *logits, self.shape(*logits));
                for (i, &p) in probs.iter().enumerate() {
                    let onehot = if i == *target { T::one() } else { T::zero() };
                    gx[i] += s * (p - onehot);
                }
            }
            Op::Dot(a, b) => {
                let s = gd[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                for (o, &y) in acc(grads, *a, self.shape(*a)).iter_mut().zip(bv) {
                    *o += s * y;
                }
                for (o, &x) in acc(grads, *b, self.shape(*b)).iter_mut().zip(av) {
                    *o += s * x;
                }
            }
            Op::Sum(x) => {
                let s = gd[0];
                for o in acc(grads, *x, self.shape(*x)) {
                    *o += s;
                }
            }
            Op::SumSquares(x) => {
                let s = gd[0] + gd[0];
                let xv = self.value(*x).data();
                for (o, &v) in acc(grads, *x, self.shape(*x)).iter_mut().zip(xv) {
                    *o += s * v;
                }
            }
            Op::Scale(x, c) => {
                for (o, &v) in acc(grads, *x, self.shape(*x)).iter_mut().zip(gd) {
                    *o += v * *c;
                }
            }
            Op::AddRow(m, v) => {
                add_into(acc(grads, *m, self.shape(*m)), gd);
                let c = self.shape(*v)[0];
                let gv = acc(grads, *v, &[c]);
                for row in gd.chunks(c) {
                    add_into(gv, row);
                }
            }
            Op::AddScalar(x, s) => {
                add_into(acc(grads, *x, self.shape(*x)), gd);
                let total: T = gd.iter().copied().sum();
                acc(grads, *s, &[1])[0] += total;
            }
            Op::ScaleRows(m, gate) => {
                let mv = self.value(*m);
                let c = mv.cols();
                let gv = self.value(*gate).data();
                {
                    let gm = acc(grads, *m, mv.shape());
                    for (i, (orow, grow)) in gm.chunks_mut(c).zip(gd.chunks(c)).enumerate() {
                        for (o, &x) in orow.iter_mut().zip(grow) {
                            *o += x * gv[i];
                        }
                    }
                }
                let gg = acc(grads, *gate, self.shape(*gate));
                for (i, (mrow, grow)) in mv.data().chunks(c).zip(gd.chunks(c)).enumerate() {
                    gg[i] += tensor::dot(mrow, grow);
                }
            }
            Op::NormalizeRows { x, eps, norms } => {
                let xv = self.value(*x);
                let (_, c) = rows_cols(xv.shape());
                let gx = acc(grads, *x, xv.shape());
                for (i, ((orow, xrow), grow)) in gx
                    .chunks_mut(c)
                    .zip(xv.data().chunks(c))
                    .zip(gd.chunks(c))
                    .enumerate()
                {
                    let n = norms[i];
                    let inv = T::one() / n.max(*eps);
                    // Below the guard the op is a fixed scaling.
                    let coef = if n > *eps {
                        tensor::dot(xrow, grow) / (n * n * n)
                    } else {
                        T::zero()
                    };
                    for ((o, &gv), &xe) in orow.iter_mut().zip(grow).zip(xrow) {
                        *o += gv * inv - xe * coef;
                    }
                }
            }
            Op::GatherRows(m, ids) => {
                let shape = self.shape(*m).to_vec();
                let c = shape[1];
                let gm = acc(grads, *m, &shape);
                for (k, &i) in ids.iter().enumerate() {
                    add_into(&mut gm[i * c..(i + 1) * c], &gd[k * c..(k + 1) * c]);
                }
            }
            Op::SliceRows(m, n) => {
                let shape = self.shape(*m).to_vec();
                let c = shape[1];
                add_into(&mut acc(grads, *m, &shape)[..n * c], gd);
            }
            Op::Row(m, i) => {
                let shape = self.shape(*m).to_vec();
                let c = shape[1];
                add_into(&mut acc(grads, *m, &shape)[i * c..(i + 1) * c], gd);
            }
            Op::SumRows(m) => {
                let shape = self.shape(*m).to_vec();
                let c = shape[1];
                for row in acc(grads, *m, &shape).chunks_mut(c) {
                    add_into(row, gd);
                }
            }
        }
        Ok(())
    }
}

fn acc<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_vector_has_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(0, &Tensor::vector(vec![1., 2., 3.]));
        let l = tape.sum(x);
        let mut sink = vec![Tensor::zeros(&[3])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[0].data(), &[1., 1., 1.]);
    }

    #[test]
    fn self_dot_gradient_is_twice_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(0, &Tensor::vector(vec![1., 2.]));
        let l = tape.dot(x, x).unwrap();
        let mut sink = vec![Tensor::zeros(&[2])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[0].data(), &[2., 4.]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(0, &Tensor::vector(vec![1., 2.]));
        let _unused = tape.param(1, &Tensor::zeros(&[2, 2]));
        let l = tape.sum_squares(x);
        let mut sink = vec![Tensor::zeros(&[2]), Tensor::zeros(&[2, 2])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[1], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(0, &Tensor::vector(vec![1., 2.]));
        let mut sink = vec![Tensor::zeros(&[2])];
        assert!(matches!(
            tape.backward(x, &mut sink),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn backward_visits_in_reverse_order() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(0, &Tensor::vector(vec![0.5, -1.0]));
        let y = tape.activation(Activation::Tanh, x, None).unwrap();
        let z = tape.mul(y, x).unwrap();
        let l = tape.sum(z);
        let mut seen = Vec::new();
        let mut sink = vec![Tensor::zeros(&[2])];
        tape.backward_with(l, &mut sink, |v| seen.push(v.index())).unwrap();
        assert_eq!(seen, vec![3, 2, 1, 0]);
    }

    #[test]
    fn repeated_use_sums_contributions() {
        // l = sum(W x) + sum(W x) with W used twice.
        let mut tape = Tape::<f64>::new();
        let w = tape.param(0, &Tensor::identity(2));
        let x = tape.constant(Tensor::vector(vec![3., 5.]));
        let a = tape.matmul(w, x).unwrap();
        let b = tape.matmul(w, x).unwrap();
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        let mut sink = vec![Tensor::zeros(&[2, 2])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[0].data(), &[6., 10., 6., 10.]);
    }

    #[test]
    fn prelu_slope_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(vec![-2., 3.]));
        let a = tape.param(0, &Tensor::scalar(0.25));
        let y = tape.activation(Activation::Prelu, x, Some(a)).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.5, 3.]);
        let l = tape.sum(y);
        let mut sink = vec![Tensor::zeros(&[1])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[0].item(), -2.);
    }

    #[test]
    fn cross_entropy_gradient_at_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(0, &Tensor::full(&[4], 1.5));
        let l = tape.cross_entropy(x, 2).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let mut sink = vec![Tensor::zeros(&[4])];
        tape.backward(l, &mut sink).unwrap();
        assert_eq!(sink[0].data(), &[0.25, 0.25, -0.75, 0.25]);
    }
}
