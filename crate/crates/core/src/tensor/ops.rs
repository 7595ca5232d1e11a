use std::rc::Rc;

use super::{matmul_into, Result, Tensor, TensorError};

/// Every operation the tape can record. Attributes travel inside the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Leaf node: parameter, constant or input.
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// Multiply by a fixed scalar.
    Scale(f64),
    /// Add a fixed scalar.
    Shift(f64),
    MatMul,
    Transpose,
    Sigmoid,
    Tanh,
    /// Subgradient at 0 is 0.
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    /// Subgradient at 0 is 0.
    Abs,
    Softplus,
    SumAll,
    /// Sum over `axis` (0 collapses rows, 1 collapses columns), keeping rank 2.
    SumAxis(usize),
    /// Broadcast a matrix with unit dims up to `rows × cols`.
    Expand { rows: usize, cols: usize },
    /// Concatenate inputs along `axis`.
    Concat(usize),
    /// Rectangular window `[r0, r0+rows) × [c0, c0+cols)`.
    Slice {
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    },
    /// Place the input at `(r0, c0)` inside a zero matrix of `rows × cols`.
    Pad {
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    },
    /// Row-wise softmax.
    Softmax,
    /// Mean over rows of `-log softmax(x)[label]`.
    SoftmaxCrossEntropy(Rc<[usize]>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Abs => "abs",
            OpKind::Softplus => "softplus",
            OpKind::SumAll => "sum",
            OpKind::SumAxis(_) => "sum_axis",
            OpKind::Expand { .. } => "expand",
            OpKind::Concat(_) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Pad { .. } => "pad",
            OpKind::Softmax => "softmax",
            OpKind::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Leaf => Some(0),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::MatMul => Some(2),
            OpKind::Concat(_) => None,
            _ => Some(1),
        }
    }

    /// Evaluate the op on concrete inputs.
    pub(crate) fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let op = self.name();
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity {
                    op,
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::Arity {
                op,
                expected: 1,
                got: 0,
            });
        }
        for t in inputs {
            if t.shape().len() != 2 {
                return Err(TensorError::InvalidShape {
                    op,
                    shape: t.shape().to_vec(),
                    reason: "tape operations take rank-2 tensors".into(),
                });
            }
        }
        let out = match self {
            OpKind::Leaf => unreachable!("leaves are not evaluated"),
            OpKind::Add => broadcast_binary(op, inputs[0], inputs[1], |a, b| a + b)?,
            OpKind::Sub => broadcast_binary(op, inputs[0], inputs[1], |a, b| a - b)?,
            OpKind::Mul => broadcast_binary(op, inputs[0], inputs[1], |a, b| a * b)?,
            OpKind::Div => {
                if inputs[1].data().iter().any(|&b| b == 0.0) {
                    return Err(TensorError::Domain {
                        op,
                        detail: "division by zero".into(),
                    });
                }
                broadcast_binary(op, inputs[0], inputs[1], |a, b| a / b)?
            }
            OpKind::Neg => inputs[0].map(|x| -x),
            OpKind::Scale(c) => inputs[0].map(|x| c * x),
            OpKind::Shift(c) => inputs[0].map(|x| x + c),
            OpKind::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = a.dims2();
                let (k2, n) = b.dims2();
                if k != k2 {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let mut out = vec![0.0; m * n];
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)?
            }
            OpKind::Transpose => inputs[0].transpose(),
            OpKind::Sigmoid => inputs[0].map(sigmoid),
            OpKind::Tanh => inputs[0].map(f64::tanh),
            OpKind::Relu => inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }),
            OpKind::Exp => inputs[0].map(f64::exp),
            OpKind::Log => {
                if let Some(&bad) = inputs[0].data().iter().find(|&&x| x <= 0.0) {
                    return Err(TensorError::Domain {
                        op,
                        detail: format!("log of non-positive value {bad}"),
                    });
                }
                inputs[0].map(f64::ln)
            }
            OpKind::Sqrt => {
                if let Some(&bad) = inputs[0].data().iter().find(|&&x| x < 0.0) {
                    return Err(TensorError::Domain {
                        op,
                        detail: format!("sqrt of negative value {bad}"),
                    });
                }
                inputs[0].map(f64::sqrt)
            }
            OpKind::Square => inputs[0].map(|x| x * x),
            OpKind::Abs => inputs[0].map(f64::abs),
            OpKind::Softplus => inputs[0].map(softplus),
            OpKind::SumAll => Tensor::scalar(inputs[0].data().iter().sum()),
            OpKind::SumAxis(axis) => sum_axis(op, inputs[0], *axis)?,
            OpKind::Expand { rows, cols } => expand(op, inputs[0], *rows, *cols)?,
            OpKind::Concat(axis) => concat(op, inputs, *axis)?,
            OpKind::Slice { r0, c0, rows, cols } => slice(op, inputs[0], *r0, *c0, *rows, *cols)?,
            OpKind::Pad { r0, c0, rows, cols } => pad(op, inputs[0], *r0, *c0, *rows, *cols)?,
            OpKind::Softmax => softmax_rows(inputs[0]),
            OpKind::SoftmaxCrossEntropy(labels) => softmax_xent(op, inputs[0], labels)?,
        };
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Output shape of a 2-D broadcast, or `None` if incompatible.
pub(crate) fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    if (ar, ac) == (br, bc) {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::matrix(ar, ac, data);
    }
    let (r, c) = broadcast_shape((ar, ac), (br, bc)).ok_or_else(|| TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i * ac };
        let bi = if br == 1 { 0 } else { i * bc };
        for j in 0..c {
            let x = ad[ai + if ac == 1 { 0 } else { j }];
            let y = bd[bi + if bc == 1 { 0 } else { j }];
            data.push(f(x, y));
        }
    }
    Tensor::matrix(r, c, data)
}

fn sum_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<Tensor> {
    let (r, c) = t.dims2();
    match axis {
        0 => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, &x) in out.iter_mut().zip(t.row_slice(i)) {
                    *o += x;
                }
            }
            Tensor::matrix(1, c, out)
        }
        1 => Tensor::matrix(r, 1, (0..r).map(|i| t.row_slice(i).iter().sum()).collect()),
        _ => Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: format!("axis {axis} out of range"),
        }),
    }
}

fn expand(op: &'static str, t: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (r, c) = t.dims2();
    if (r != 1 && r != rows) || (c != 1 && c != cols) {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![rows, cols],
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ri = if r == 1 { 0 } else { i };
        for j in 0..cols {
            data.push(t.get(ri, if c == 1 { 0 } else { j }));
        }
    }
    Tensor::matrix(rows, cols, data)
}

fn concat(op: &'static str, inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let (r0, c0) = inputs[0].dims2();
    match axis {
        0 => {
            let mut data = Vec::new();
            let mut rows = 0;
            for t in inputs {
                if t.cols() != c0 {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        lhs: inputs[0].shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c0, data)
        }
        1 => {
            for t in inputs {
                if t.rows() != r0 {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        lhs: inputs[0].shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
            }
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for t in inputs {
                    data.extend_from_slice(t.row_slice(i));
                }
            }
            Tensor::matrix(r0, cols, data)
        }
        _ => Err(TensorError::InvalidShape {
            op,
            shape: inputs[0].shape().to_vec(),
            reason: format!("axis {axis} out of range"),
        }),
    }
}

fn slice(op: &'static str, t: &Tensor, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Tensor> {
    let (r, c) = t.dims2();
    if rows == 0 || cols == 0 || r0 + rows > r || c0 + cols > c {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: format!("window {rows}x{cols} at ({r0},{c0}) out of bounds"),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in r0..r0 + rows {
        data.extend_from_slice(&t.row_slice(i)[c0..c0 + cols]);
    }
    Tensor::matrix(rows, cols, data)
}

fn pad(op: &'static str, t: &Tensor, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Tensor> {
    let (r, c) = t.dims2();
    if r0 + r > rows || c0 + c > cols {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: format!("does not fit in {rows}x{cols} at ({r0},{c0})"),
        });
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..r {
        let dst = (r0 + i) * cols + c0;
        out.data_mut()[dst..dst + c].copy_from_slice(t.row_slice(i));
    }
    Ok(out)
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = t.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut z = 0.0;
        for &x in row {
            let e = (x - max).exp();
            z += e;
            data.push(e);
        }
        for v in &mut data[start..] {
            *v /= z;
        }
    }
    Tensor { shape: vec![r, c], data }
}

fn softmax_xent(op: &'static str, t: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (r, c) = t.dims2();
    if labels.len() != r {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Domain {
            op,
            detail: format!("label {bad} out of range for {c} classes"),
        });
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = t.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(Tensor::scalar(total / r as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let out = OpKind::Sigmoid.forward(&[&Tensor::scalar(0.0)]).unwrap();
        assert_eq!(out.item(), 0.5);
    }

    #[test]
    fn uniform_logits_give_log_num_classes() {
        let logits = Tensor::full(3, 5, 0.7);
        let labels: Rc<[usize]> = vec![0, 4, 2].into();
        let out = OpKind::SoftmaxCrossEntropy(labels).forward(&[&logits]).unwrap();
        assert!((out.item() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn row_broadcast_add() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = m(1, 3, &[10., 20., 30.]);
        let out = OpKind::Add.forward(&[&a, &b]).unwrap();
        assert_eq!(out.data(), &[11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn incompatible_shapes_name_the_op() {
        let a = m(2, 3, &[0.; 6]);
        let b = m(3, 2, &[0.; 6]);
        match OpKind::Mul.forward(&[&a, &b]) {
            Err(TensorError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "mul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let a = m(1, 2, &[1.0, 0.0]);
        assert!(matches!(OpKind::Log.forward(&[&a]), Err(TensorError::Domain { op: "log", .. })));
    }

    #[test]
    fn pad_then_slice_roundtrips() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        let p = OpKind::Pad { r0: 1, c0: 2, rows: 4, cols: 5 }.forward(&[&a]).unwrap();
        let s = OpKind::Slice { r0: 1, c0: 2, rows: 2, cols: 2 }.forward(&[&p]).unwrap();
        assert_eq!(s, a);
        assert_eq!(p.data().iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
