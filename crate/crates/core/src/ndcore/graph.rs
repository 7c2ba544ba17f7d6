use super::{NdError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Square(Var),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    SelectRow(Var, usize),
    Reshape(Var),
    Transpose(Var),
    /// `uᵀ X v` with `u`, `v` held constant.
    Bilinear(Var, Vec<f64>, Vec<f64>),
}

struct DiffNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep is a reverse scan.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the
    /// root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn check(op: &'static str, data: &[f64]) -> Result<(), NdError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NdError::NonFinite { op })
    }
}

/// `c (m×n) += op(a) (m×k) · op(b) (k×n)` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // buffers whose lengths were asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(DiffNode {
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
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var, NdError> {
        let src = &self.nodes[a.0].value;
        let data: Vec<f64> = src.data().iter().map(|&x| f(x)).collect();
        check(name, &data)?;
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NdError::Incompatible {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        check("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Equal shapes, or one side holding a single value.
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, data): (Vec<usize>, Vec<f64>) = if ta.shape() == tb.shape() {
            (
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            (ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            (tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(NdError::Incompatible {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        check(name, &data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NdError> {
        self.unary("scale", a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NdError> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NdError> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NdError> {
        self.unary("leaky_relu", a, Op::LeakyRelu(a, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NdError> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NdError> {
        self.unary("square", a, Op::Square(a), |x| x * x)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, NdError> {
        self.unary("powf", a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NdError> {
        let s = self.value(a).sum();
        check("sum", &[s])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![], vec![s]), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NdError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(NdError::Empty { op: "mean" });
        }
        let s = t.sum() / t.len() as f64;
        check("mean", &[s])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![], vec![s]), Op::Mean(a), rg))
    }

    /// Column means of a `B×d` matrix, giving a length-`d` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NdError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if r == 0 {
            return Err(NdError::Empty { op: "mean_rows" });
        }
        let mut out = vec![0.0; c];
        for row in t.data().chunks_exact(c) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        check("mean_rows", &out)?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![c], out), Op::MeanRows(a), rg))
    }

    /// Row sums of a `B×d` matrix, giving a length-`B` vector.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NdError> {
        let t = self.value(a);
        let c = t.cols();
        let out: Vec<f64> = t.data().chunks_exact(c).map(|r| r.iter().sum()).collect();
        check("sum_cols", &out)?;
        let n = out.len();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::SumCols(a), rg))
    }

    /// Repeats a length-`d` vector into `rows` rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, NdError> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(NdError::Rank {
                op: "broadcast_rows",
                expected: 1,
                got: t.shape().len(),
            });
        }
        let d = t.len();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::BroadcastRows(a),
            rg,
        ))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var, NdError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(NdError::Rank {
                op: "select_row",
                expected: 2,
                got: t.shape().len(),
            });
        }
        if row >= t.rows() {
            return Err(NdError::Index {
                index: row,
                len: t.rows(),
            });
        }
        let data = t.row(row).to_vec();
        let d = data.len();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![d], data), Op::SelectRow(a, row), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NdError> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NdError> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(NdError::Rank {
                op: "transpose",
                expected: 2,
                got: t.shape().len(),
            });
        }
        let (r, c) = (t.rows(), t.cols());
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg))
    }

    /// Scalar `uᵀ X v` for a matrix node `X`; `u` and `v` are constants.
    pub fn bilinear(&mut self, x: Var, u: &[f64], v: &[f64]) -> Result<Var, NdError> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.rows() != u.len() || t.cols() != v.len() {
            return Err(NdError::Incompatible {
                op: "bilinear",
                left: t.shape().to_vec(),
                right: vec![u.len(), v.len()],
            });
        }
        let c = t.cols();
        let s: f64 = u
            .iter()
            .zip(t.data().chunks_exact(c))
            .map(|(ui, row)| ui * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        check("bilinear", &[s])?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![], vec![s]),
            Op::Bilinear(x, u.to_vec(), v.to_vec()),
            rg,
        ))
    }

    /// Per-feature batch mean and biased variance of a `B×d` batch.
    pub fn batch_stats(&mut self, x: Var) -> Result<(Var, Var), NdError> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(NdError::Rank {
                op: "batch_stats",
                expected: 2,
                got: shape.len(),
            });
        }
        let b = shape[0];
        if b < 2 {
            return Err(NdError::BatchTooSmall(b));
        }
        let mean = self.mean_rows(x)?;
        let mb = self.broadcast_rows(mean, b)?;
        let centered = self.sub(x, mb)?;
        let sq = self.square(centered)?;
        let var = self.mean_rows(sq)?;
        Ok((mean, var))
    }

    /// Reverse sweep from a scalar root. Each call starts from zeroed
    /// gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients, NdError> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(NdError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut out = Vec::with_capacity(grads.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            out.push(match g {
                Some(g) if node.requires_grad => {
                    check("backward", &g)?;
                    Some(Tensor::from_parts(node.value.shape().to_vec(), g))
                }
                _ => None,
            });
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(
        &self,
        node: &DiffNode,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), NdError> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                self.accumulate(grads, *a, |ga| gemm(m, n, k, g, false, tb.data(), true, ga));
                self.accumulate(grads, *b, |gb| gemm(k, m, n, ta.data(), true, g, false, gb));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.reduce_into(grads, *a, g, |gi| gi);
                self.reduce_into(grads, *b, g, |gi| sign * gi);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = out.len();
                let at = |t: &Tensor, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
                let ga: Vec<f64> = (0..n).map(|i| g[i] * at(tb, i)).collect();
                let gb: Vec<f64> = (0..n).map(|i| g[i] * at(ta, i)).collect();
                self.reduce_into(grads, *a, &ga, |gi| gi);
                self.reduce_into(grads, *b, &gb, |gi| gi);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(o, gi)| *o += gi)
            }),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                })
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                })
            }
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * (1.0 - yi * yi);
                }
            }),
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += 2.0 * xi * gi;
                    }
                })
            }
            Op::Powf(a, p) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += gi * p * xi.powf(p - 1.0);
                    }
                })
            }
            Op::Sum(a) => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (r, c) = (t.rows(), t.cols());
                self.accumulate(grads, *a, |ga| {
                    for row in ga.chunks_exact_mut(c) {
                        for (o, gi) in row.iter_mut().zip(g) {
                            *o += gi / r as f64;
                        }
                    }
                })
            }
            Op::SumCols(a) => {
                let c = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (row, gi) in ga.chunks_exact_mut(c).zip(g) {
                        row.iter_mut().for_each(|o| *o += gi);
                    }
                })
            }
            Op::BroadcastRows(a) => {
                let d = self.value(*a).len();
                self.accumulate(grads, *a, |ga| {
                    for row in g.chunks_exact(d) {
                        for (o, gi) in ga.iter_mut().zip(row) {
                            *o += gi;
                        }
                    }
                })
            }
            Op::SelectRow(a, r) => {
                let d = out.len();
                self.accumulate(grads, *a, |ga| {
                    for (o, gi) in ga[r * d..(r + 1) * d].iter_mut().zip(g) {
                        *o += gi;
                    }
                })
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::Bilinear(x, u, v) => {
                let c = v.len();
                self.accumulate(grads, *x, |gx| {
                    for (i, ui) in u.iter().enumerate() {
                        for (j, vj) in v.iter().enumerate() {
                            gx[i * c + j] += g[0] * ui * vj;
                        }
                    }
                })
            }
        }
        Ok(())
    }

    /// Accumulates `g` (shaped like the op output) into `v`, summing when
    /// `v` was broadcast from a single value.
    fn reduce_into(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        f: impl Fn(f64) -> f64,
    ) {
        let scalar = self.value(v).is_scalar() && g.len() != 1;
        self.accumulate(grads, v, |gv| {
            if scalar {
                gv[0] += g.iter().map(|&gi| f(gi)).sum::<f64>();
            } else {
                for (o, &gi) in gv.iter_mut().zip(g) {
                    *o += f(gi);
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let m = g.constant(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let ones = g.constant(mat(&[vec![1.0], vec![1.0]]));
        let q = g.matmul(m, ones).unwrap();
        assert_eq!(g.value(q).shape(), &[2, 1]);
        assert_eq!(g.value(q).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(NdError::Incompatible { .. })));
    }

    #[test]
    fn elementwise_definitions() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);

        let z = g.param(Tensor::scalar(0.0).unwrap());
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.get(z).unwrap().item(), 1.0);

        let w = g.param(Tensor::scalar(-3.0).unwrap());
        let l = g.leaky_relu(w, 0.2).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), 0.2);
    }

    #[test]
    fn incompatible_broadcast_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(a, b).is_err());
        let s = g.constant(Tensor::scalar(2.0).unwrap());
        let c = g.mul(a, s).unwrap();
        assert_eq!(g.shape(c), &[2]);
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.param(Tensor::scalar(2.0).unwrap());
        let p = g.mul(a, s).unwrap();
        let d = g.sub(p, s).unwrap();
        let root = g.sum(d).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 2.0, 2.0]);
        // d/ds sum(a*s - s) = sum(a) - 3
        assert_eq!(grads.get(s).unwrap().item(), 3.0);
    }

    #[test]
    fn batch_stats_hand_values() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![0.0], vec![2.0]]));
        let (mean, var) = g.batch_stats(x).unwrap();
        assert_eq!(g.value(mean).data(), &[1.0]);
        assert_eq!(g.value(var).data(), &[1.0]);

        let c = g.constant(mat(&[vec![5.0, -1.0], vec![5.0, -1.0], vec![5.0, -1.0]]));
        let (_, v) = g.batch_stats(c).unwrap();
        assert_eq!(g.value(v).data(), &[0.0, 0.0]);

        let sm = g.sum(mean).unwrap();
        let grads = g.backward(sm).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn batch_stats_needs_two_rows() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![1.0, 2.0]]));
        assert!(matches!(g.batch_stats(x), Err(NdError::BatchTooSmall(1))));
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let p = g.param(Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap());
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);

        let sq = g.square(p).unwrap();
        let ss = g.sum(sq).unwrap();
        let half = g.scale(ss, 0.5).unwrap();
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, -1.5, 2.0]);

        // repeated calls restart from zero
        let again = g.backward(half).unwrap();
        assert_eq!(again.get(p).unwrap().data(), grads.get(p).unwrap().data());

        assert!(matches!(g.backward(sq), Err(NdError::NonScalarRoot(_))));
    }

    #[test]
    fn non_finite_propagation_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0]).unwrap());
        assert!(matches!(g.powf(x, 0.5), Err(NdError::NonFinite { .. })));
        let big = g.param(Tensor::vector(vec![1e200]).unwrap());
        assert!(g.square(big).is_err());
    }

    #[test]
    fn select_row_touches_only_that_row() {
        let mut g = Graph::new();
        let t = g.param(Tensor::filled(&[3, 2], 1.0));
        let r = g.select_row(t, 1).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(t).unwrap().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(g.select_row(t, 3).is_err());
    }

    #[test]
    fn transpose_and_bilinear() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let t = g.transpose(x).unwrap();
        assert_eq!(g.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let b = g.bilinear(x, &[1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.value(b).item(), 2.0);
        let grads = g.backward(b).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
