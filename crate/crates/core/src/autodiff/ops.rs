//! Forward definitions of the recorded operators.

use super::kernels::{self, ConvGeometry};
use super::tape::{NodeId, Op, Tape};
use super::LAYER_NORM_EPS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// Output shape for an elementwise op: equal shapes, or one side holds a
    /// single value and broadcasts.
    fn elementwise_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<Vec<usize>> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if sa == sb || lb == 1 {
            Ok(sa.to_vec())
        } else if la == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::shape(format!("{op}: shapes {sa:?} and {sb:?} do not conform")))
        }
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n = av.len().max(bv.len());
        (0..n)
            .map(|i| f(kernels::bcast(av, i), kernels::bcast(bv, i)))
            .collect()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_shape(a, b, "add")?;
        let value = Tensor::new(shape, self.zip_with(a, b, |x, y| x + y))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_shape(a, b, "sub")?;
        let value = Tensor::new(shape, self.zip_with(a, b, |x, y| x - y))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_shape(a, b, "mul_elementwise")?;
        let value = Tensor::new(shape, self.zip_with(a, b, |x, y| x * y))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplication by a fixed real.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).scale(factor);
        Ok(self.push(value, Op::Scale(a, factor)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(Error::shape(format!(
                "matmul needs 2-D operands, got {sa:?} and {sb:?}"
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dimensions differ: {sa:?} x {sb:?}")));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new([m, n], data)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let &[r, c] = self.value(a).shape() else {
            return Err(Error::shape(format!(
                "transpose needs a 2-D tensor, got {:?}",
                self.value(a).shape()
            )));
        };
        let value = Tensor::new([c, r], kernels::transpose(self.value(a).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(a)?;
        let value = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(value, Op::Sum(a)))
    }

    /// One element (by flat index) as a scalar.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        self.check(a)?;
        let len = self.value(a).len();
        if index >= len {
            return Err(Error::input(format!(
                "select index {index} out of range for {len} values"
            )));
        }
        let value = Tensor::scalar(self.value(a).data()[index]);
        Ok(self.push(value, Op::Select(a, index)))
    }

    /// Concatenation along the leading dimension.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::shape(format!("concat: shapes {sa:?} and {sb:?} do not conform")));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// 2-D cross-correlation (no kernel flip) with zero padding.
    ///
    /// `input` is `[C,H,W]`, `kernels` is `[D,C,k,k]`, `bias` is `[D]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check(input)?;
        self.check(kernels)?;
        self.check(bias)?;
        let geom = ConvGeometry::new(self.value(input).shape(), self.value(kernels).shape(), stride, padding)?;
        if self.value(bias).shape() != [geom.filters] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{}], got {:?}",
                geom.filters,
                self.value(bias).shape()
            )));
        }
        let data = geom.forward(
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new([geom.filters, geom.out_h, geom.out_w], data)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        Ok(self.push(value, Op::Relu(a)))
    }

    /// Max pooling over `[C,H,W]` without padding.
    pub fn max_pool2d(&mut self, a: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        self.check(a)?;
        let &[c, h, w] = self.value(a).shape() else {
            return Err(Error::shape(format!(
                "max_pool2d input must be [C,H,W], got {:?}",
                self.value(a).shape()
            )));
        };
        let (out_h, out_w) = match (
            kernels::conv_out_dim(h, window, stride, 0),
            kernels::conv_out_dim(w, window, stride, 0),
        ) {
            (Some(oh), Some(ow)) if window > 0 => (oh, ow),
            _ => {
                return Err(Error::config(format!(
                    "max_pool2d window {window}/stride {stride} does not fit {h}x{w}"
                )))
            }
        };
        let (data, argmax) = kernels::max_pool(self.value(a).data(), (c, h, w), window, stride, (out_h, out_w));
        let value = Tensor::new([c, out_h, out_w], data)?;
        Ok(self.push(value, Op::MaxPool2d { input: a, argmax }))
    }

    /// Spatial mean of `[D,H,W]`, giving `[D]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let &[d, h, w] = self.value(a).shape() else {
            return Err(Error::shape(format!(
                "global_avg_pool input must be [D,H,W], got {:?}",
                self.value(a).shape()
            )));
        };
        let plane = h * w;
        let data = self
            .value(a)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new([d], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(a)))
    }

    /// Affine map `a·W + b` applied to a vector `[in]` or to each row of
    /// `[n,in]`, with `W` shaped `[in,out]` and `b` shaped `[out]`.
    pub fn dense(&mut self, a: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(weight)?;
        self.check(bias)?;
        let sa = self.value(a).shape().to_vec();
        let &[n_in, n_out] = self.value(weight).shape() else {
            return Err(Error::shape(format!(
                "dense weight must be [in,out], got {:?}",
                self.value(weight).shape()
            )));
        };
        let rows = match *sa.as_slice() {
            [n] if n == n_in => 1,
            [r, n] if n == n_in => r,
            _ => {
                return Err(Error::shape(format!(
                    "dense input {sa:?} does not match weight [{n_in},{n_out}]"
                )))
            }
        };
        if self.value(bias).shape() != [n_out] {
            return Err(Error::shape(format!(
                "dense bias must be [{n_out}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let (av, wv, bv) = (self.value(a).data(), self.value(weight).data(), self.value(bias).data());
        let mut data = Vec::with_capacity(rows * n_out);
        for r in 0..rows {
            let mut row = bv.to_vec();
            for (i, &ai) in av[r * n_in..(r + 1) * n_in].iter().enumerate() {
                row.iter_mut()
                    .zip(&wv[i * n_out..(i + 1) * n_out])
                    .for_each(|(o, &w)| *o += ai * w);
            }
            data.extend(row);
        }
        let out_shape = if sa.len() == 1 { vec![n_out] } else { vec![rows, n_out] };
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Dense { input: a, weight, bias }))
    }

    /// Normalizes the last axis to zero mean and unit variance (no learned
    /// gain or offset).
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(self.value(a).len());
        let mut inv_std = Vec::new();
        for row in self.value(a).data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            data.extend(row.iter().map(|v| (v - mean) * s));
            inv_std.push(s);
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::LayerNorm { input: a, inv_std }))
    }

    /// Softmax over the last axis, computed after subtracting the row max.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).data().chunks(n) {
            data.extend(softmax_row(row));
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// `-log softmax(logits)[label]` via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        self.check(logits)?;
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(Error::shape(format!(
                "cross_entropy logits must be 1-D, got {:?}",
                z.shape()
            )));
        }
        if label >= z.len() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let m = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.data().iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum_exp.ln();
        let loss = lse - z.data()[label];
        let probs = softmax_row(z.data());
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }))
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax of a plain vector, outside any tape.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    softmax_row(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(&[1.0, 2.0]));
        let b = tape.constant(Tensor::vector(&[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn scalar_broadcast_only() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(&[1.0, 2.0, 3.0]));
        let s = tape.constant(Tensor::scalar(2.0));
        let c = tape.mul(a, s).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 4.0, 6.0]);
        let b = tape.constant(Tensor::vector(&[1.0, 2.0]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn matmul_identity() {
        let m = t(&[3, 3], &[1.5, -2.0, 0.25, 3.0, 4.0, -1.0, 0.0, 7.0, 2.0]);
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let e = tape.constant(eye);
        let x = tape.constant(m.clone());
        let y = tape.matmul(e, x).unwrap();
        assert_eq!(tape.value(y), &m);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_identity_kernel() {
        let img = t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), &img);
    }

    #[test]
    fn conv_ones_kernel_on_one_hot() {
        let mut img = Tensor::zeros([1, 5, 5]);
        img.data_mut()[2 * 5 + 2] = 1.0;
        let mut tape = Tape::new();
        let x = tape.constant(img);
        let k = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 5, 5]);
        for r in 0..5 {
            for c in 0..5 {
                let expected = if (1..=3).contains(&r) && (1..=3).contains(&c) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(out.data()[r * 5 + c], expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn conv_rejects_non_positive_output() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 2]));
        let k = tape.constant(Tensor::zeros([1, 1, 5, 5]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_uniform_and_relu() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        let s = tape.softmax(z).unwrap();
        for &p in tape.value(s).data() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let r_in = tape.constant(Tensor::vector(&[-1.0, 0.0, 2.0]));
        let r = tape.relu(r_in).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        for label in 0..3 {
            let l = tape.cross_entropy(z, label).unwrap();
            assert_abs_diff_eq!(tape.value(l).item().unwrap(), 3f64.ln(), epsilon = 1e-12);
        }
        let z = tape.constant(Tensor::vector(&[20.0, -20.0, -20.0]));
        let l = tape.cross_entropy(z, 0).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-15);
        assert!(matches!(tape.cross_entropy(z, 3), Err(Error::Input(_))));
    }

    #[test]
    fn max_pool_and_gap_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([8, 64, 64]));
        let p = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).shape(), &[8, 32, 32]);
        let g = tape.global_avg_pool(p).unwrap();
        assert_eq!(tape.value(g).shape(), &[8]);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]));
        let y = tape.layer_norm(x).unwrap();
        for row in tape.value(y).data().chunks(4) {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        }
    }
}
