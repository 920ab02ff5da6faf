//! Matrix-valued reverse-mode differentiation over a fixed set of primitives.
//!
//! Every primitive delegates its forward computation to the same kernel the
//! plain (untaped) code path uses, so a taped forward pass reproduces plain
//! evaluation bit-for-bit.

use super::kernels::{bce, normalize_rows, relu, sigmoid, softplus, BCE_CLAMP};
use super::sparse::spmul_unchecked;
use super::{Mat, NumError, SparseSym};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Variance(Var),
    Dot(Var, Var),
    SpMul(&'g SparseSym, Var),
    MeanRows(Var),
    Transpose(Var),
    RowNormalize(Var),
    Stack(Vec<Var>),
    Bce(Var, f64),
}

struct Node<'g> {
    value: Mat,
    op: Op<'g>,
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in insertion order, which is a topological order; the
/// backward sweep visits them in reverse exactly once.
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    recording: bool,
    first_fault: Option<usize>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g> Tape<'g> {
    /// A recording tape that supports [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
            first_fault: None,
        }
    }

    /// A tape that only keeps values. Same kernels, no backward pass.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the first node whose value was not finite, if any.
    pub fn first_fault(&self) -> Option<usize> {
        self.first_fault
    }

    fn push(&mut self, value: Mat, op: Op<'g>) -> Var {
        let idx = self.nodes.len();
        if self.first_fault.is_none() && !value.is_finite() {
            self.first_fault = Some(idx);
        }
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(idx)
    }

    /// Input node: a parameter or a constant.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    /// `a + 1ᵀ·bias` with `bias` a 1×cols row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a).add_row(self.value(bias));
        self.push(v, Op::AddRow(a, bias))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a).mul_col(self.value(col));
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).add_scalar(s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(relu);
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    /// Population variance over all entries.
    pub fn variance(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).variance());
        self.push(v, Op::Variance(a))
    }

    /// Sum of the elementwise product, as a 1×1 node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = Mat::scalar(self.value(a).dot(self.value(b)));
        self.push(v, Op::Dot(a, b))
    }

    /// Sparse symmetric times dense.
    pub fn spmul(&mut self, l: &'g SparseSym, a: Var) -> Var {
        assert_eq!(l.dim(), self.value(a).rows(), "spmul dimension mismatch");
        let v = spmul_unchecked(l, self.value(a));
        self.push(v, Op::SpMul(l, a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// L2-normalises each row; all-zero rows become the last unit vector.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (v, _) = normalize_rows(self.value(a));
        self.push(v, Op::RowNormalize(a))
    }

    /// Packs 1×1 nodes into a 1×k row.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<f64> = parts.iter().map(|&p| self.scalar(p)).collect();
        self.push(Mat::row_vector(&vals), Op::Stack(parts.to_vec()))
    }

    /// Binary cross-entropy of a 1×1 probability node against label `y`.
    pub fn bce(&mut self, p: Var, y: f64) -> Var {
        let v = Mat::scalar(bce(self.scalar(p), y));
        self.push(v, Op::Bce(p, y))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, NumError> {
        if !self.recording {
            return Err(NumError::Contract(
                "backward called on a non-recording tape".into(),
            ));
        }
        if self.value(out).shape() != (1, 1) {
            let (r, c) = self.value(out).shape();
            return Err(NumError::Contract(format!(
                "backward requires a scalar output, got {r}x{c}"
            )));
        }
        if let Some(node) = self.first_fault.filter(|&i| i <= out.0) {
            return Err(NumError::NumericFault { node });
        }

        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Mat::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b));
                    let db = g.hadamard(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *bias, g.sum_rows());
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let av = self.value(*a);
                    let dcol: Vec<f64> = (0..av.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    let da = g.mul_col(self.value(*col));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *col, Mat::col_vector(&dcol));
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| d * sigmoid(x));
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |d, y| d * y * (1.0 - y));
                    accumulate(&mut grads, *a, da);
                }
                Op::Square(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| 2.0 * x * d);
                    accumulate(&mut grads, *a, da);
                }
                Op::Abs(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| {
                        if x > 0.0 {
                            d
                        } else if x < 0.0 {
                            -d
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Mat::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let s = g.item() / (r * c) as f64;
                    accumulate(&mut grads, *a, Mat::filled(r, c, s));
                }
                Op::Variance(a) => {
                    let av = self.value(*a);
                    let mu = av.mean();
                    let k = 2.0 * g.item() / av.len() as f64;
                    accumulate(&mut grads, *a, av.map(|x| k * (x - mu)));
                }
                Op::Dot(a, b) => {
                    let s = g.item();
                    let da = self.value(*b).scale(s);
                    let db = self.value(*a).scale(s);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SpMul(l, a) => accumulate(&mut grads, *a, spmul_unchecked(l, &g)),
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    let row = g.scale(1.0 / rows as f64);
                    accumulate(&mut grads, *a, row.tile_rows(rows));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::RowNormalize(a) => {
                    let av = self.value(*a);
                    let y = &node.value;
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let norm = av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, out) in da.row_mut(r).iter_mut().enumerate() {
                            *out = (gr[c] - yr[c] * proj) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Stack(parts) => {
                    for (k, p) in parts.iter().enumerate() {
                        accumulate(&mut grads, *p, Mat::scalar(g.data()[k]));
                    }
                }
                Op::Bce(p, y) => {
                    let pv = self.scalar(*p);
                    let d = if pv < BCE_CLAMP || pv > 1.0 - BCE_CLAMP {
                        0.0
                    } else {
                        -y / pv + (1.0 - y) / (1.0 - pv)
                    };
                    accumulate(&mut grads, *p, Mat::scalar(g.item() * d));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints left on leaf nodes after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled to `shape` when absent.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

/// Records `program` on a fresh tape over `inputs` and returns the scalar
/// output together with its gradient with respect to every input.
pub fn forward_backward<'g, F>(inputs: &[Mat], program: F) -> Result<(f64, Vec<Mat>), NumError>
where
    F: FnOnce(&mut Tape<'g>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = program(&mut tape, &vars);
    let grads = tape.backward(out)?;
    let value = tape.scalar(out);
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(&v, m)| grads.wrt(v, m.shape()))
        .collect();
    Ok((value, per_input))
}

/// Runs `program` on a non-recording tape and returns its scalar output.
pub fn evaluate<'g, F>(inputs: &[Mat], program: F) -> Result<f64, NumError>
where
    F: FnOnce(&mut Tape<'g>, &[Var]) -> Var,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = program(&mut tape, &vars);
    if tape.value(out).shape() != (1, 1) {
        return Err(NumError::Contract("program output is not scalar".into()));
    }
    if let Some(node) = tape.first_fault() {
        return Err(NumError::NumericFault { node });
    }
    Ok(tape.scalar(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_grad;

    #[test]
    fn square_at_three() {
        let (v, g) = forward_backward(&[Mat::scalar(3.0)], |t, x| {
            let sq = t.square(x[0]);
            t.sum(sq)
        })
        .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn relu_sum_subgradient() {
        let (v, g) = forward_backward(&[Mat::row_vector(&[-1.0, 2.0])], |t, x| {
            let r = t.relu(x[0]);
            t.sum(r)
        })
        .unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let (_, g) = forward_backward(&[Mat::scalar(0.0)], |t, x| {
            let r = t.relu(x[0]);
            t.sum(r)
        })
        .unwrap();
        assert_eq!(g[0].item(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_contract_violation() {
        let err = forward_backward(&[Mat::zeros(2, 2)], |t, x| t.relu(x[0])).unwrap_err();
        assert!(matches!(err, NumError::Contract(_)));
    }

    #[test]
    fn nan_reports_node_index() {
        let err = forward_backward(&[Mat::scalar(-1.0)], |t, x| {
            let s = t.square(x[0]);
            let bad = t.scale(s, f64::NAN);
            t.sum(bad)
        })
        .unwrap_err();
        assert_eq!(err, NumError::NumericFault { node: 2 });
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Mat::scalar(1.0));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        let (_, g) = forward_backward(&[Mat::scalar(1.0), Mat::zeros(2, 3)], |t, x| {
            t.sum(x[0])
        })
        .unwrap();
        assert_eq!(g[1], Mat::zeros(2, 3));
    }

    #[test]
    fn row_normalize_gradient() {
        let a = Mat::from_rows(&[&[0.3, -1.2, 0.7], &[2.0, 0.1, -0.4]]).unwrap();
        let w = Mat::from_rows(&[&[1.0, 0.5, -2.0], &[0.3, 0.9, 1.1]]).unwrap();
        let f = |x: &[f64]| {
            let m = Mat::from_vec(2, 3, x.to_vec()).unwrap();
            normalize_rows(&m).0.dot(&w)
        };
        let (_, g) = forward_backward(&[a.clone(), w.clone()], |t, x| {
            let n = t.row_normalize(x[0]);
            t.dot(n, x[1])
        })
        .unwrap();
        let fd = finite_diff_grad(f, a.data(), 1e-6).unwrap();
        for (x, y) in g[0].data().iter().zip(&fd) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}
