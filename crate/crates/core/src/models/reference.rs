//! Straight-loop model evaluator, generic over the scalar type and sharing no
//! code with the tape. Evaluated in [`DoubleDouble`] it gives a
//! finite-difference oracle whose rounding noise sits far below the
//! difference step, so whole-model gradients can be checked entry by entry.

use super::config::LayerKind;
use super::params::ModelParams;
use crate::autodiff::{GradCheckReport, LAYER_NORM_EPS};
use crate::ddouble::{DoubleDouble, Real};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activation with its shape (`[C,H,W]` or `[N]`).
#[derive(Clone, Debug)]
struct Act<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Model parameters converted to scalar type `T`.
#[derive(Clone, Debug)]
pub struct ReferenceModel<T> {
    kinds: Vec<LayerKind>,
    shapes: Vec<Vec<Vec<usize>>>,
    params: Vec<Vec<Vec<T>>>,
    input_shape: [usize; 3],
}

fn conv<T: Real>(x: &Act<T>, w: &[T], w_shape: &[usize], b: &[T], stride: usize, pad: usize) -> Act<T> {
    let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (d, k) = (w_shape[0], w_shape[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(d * oh * ow);
    for f in 0..d {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[f];
                for ch in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xv = x.data[(ch * h + iy as usize) * wd + ix as usize];
                            acc = acc + w[((f * c + ch) * k + ky) * k + kx] * xv;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Act {
        shape: vec![d, oh, ow],
        data: out,
    }
}

fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn max_pool<T: Real>(x: &Act<T>, window: usize, stride: usize) -> Act<T> {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x.data[(ch * h + oy * stride) * w + ox * stride];
                for dy in 0..window {
                    for dx in 0..window {
                        let v = x.data[(ch * h + oy * stride + dy) * w + ox * stride + dx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Act {
        shape: vec![c, oh, ow],
        data: out,
    }
}

/// `rows × n_in` times `[n_in, n_out]` plus bias, per row.
fn dense_rows<T: Real>(a: &[T], n_in: usize, w: &[T], b: &[T]) -> Vec<T> {
    let n_out = b.len();
    let mut out = Vec::with_capacity(a.len() / n_in * n_out);
    for row in a.chunks(n_in) {
        for j in 0..n_out {
            let mut acc = b[j];
            for (i, &v) in row.iter().enumerate() {
                acc = acc + v * w[i * n_out + j];
            }
            out.push(acc);
        }
    }
    out
}

fn layer_norm_rows<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let nn = T::from_f64(n as f64);
    let mut out = Vec::with_capacity(a.len());
    for row in a.chunks(n) {
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nn;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nn;
        let sd = (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
        out.extend(row.iter().map(|&v| (v - mean) / sd));
    }
    out
}

fn softmax_rows<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for row in a.chunks(n) {
        let m = row.iter().skip(1).fold(row[0], |m, &v| if v > m { v } else { m });
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s = e.iter().fold(T::zero(), |s, &v| s + v);
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

fn attention<T: Real>(x: &Act<T>, p: &[Vec<T>], e: usize) -> Act<T> {
    let t = x.shape[1] * x.shape[2];
    let mut tokens = vec![T::zero(); t * e];
    for ch in 0..e {
        for i in 0..t {
            tokens[i * e + ch] = x.data[ch * t + i];
        }
    }
    let h = layer_norm_rows(&tokens, e);
    let q = dense_rows(&h, e, &p[0], &p[1]);
    let k = dense_rows(&h, e, &p[2], &p[3]);
    let v = dense_rows(&h, e, &p[4], &p[5]);
    let scale = T::from_f64(1.0 / (e as f64).sqrt());
    let mut scores = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let dot = (0..e).fold(T::zero(), |s, c| s + q[i * e + c] * k[j * e + c]);
            scores.push(dot * scale);
        }
    }
    let weights = softmax_rows(&scores, t);
    let mut mixed = Vec::with_capacity(t * e);
    for i in 0..t {
        for c in 0..e {
            mixed.push((0..t).fold(T::zero(), |s, j| s + weights[i * t + j] * v[j * e + c]));
        }
    }
    let attended = dense_rows(&mixed, e, &p[6], &p[7]);
    let r1: Vec<T> = tokens.iter().zip(&attended).map(|(&a, &b)| a + b).collect();
    let h2 = layer_norm_rows(&r1, e);
    let m: Vec<T> = dense_rows(&h2, e, &p[8], &p[9]).into_iter().map(relu).collect();
    let m = dense_rows(&m, 2 * e, &p[10], &p[11]);
    let r2: Vec<T> = r1.iter().zip(&m).map(|(&a, &b)| a + b).collect();
    let mut data = vec![T::zero(); t * e];
    for ch in 0..e {
        for i in 0..t {
            data[ch * t + i] = r2[i * e + ch];
        }
    }
    Act {
        shape: x.shape.clone(),
        data,
    }
}

impl<T: Real> ReferenceModel<T> {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let config = params.config();
        config.validate()?;
        Ok(Self {
            kinds: config.layers.iter().map(|l| l.kind.clone()).collect(),
            shapes: params
                .layers()
                .iter()
                .map(|ts| ts.iter().map(|t| t.shape().to_vec()).collect())
                .collect(),
            params: params
                .layers()
                .iter()
                .map(|ts| {
                    ts.iter()
                        .map(|t| t.data().iter().map(|&v| T::from_f64(v)).collect())
                        .collect()
                })
                .collect(),
            input_shape: config.input_shape,
        })
    }

    /// Parameter values grouped like [`ModelParams::layers`].
    pub fn params_mut(&mut self) -> &mut [Vec<Vec<T>>] {
        &mut self.params
    }

    fn layer(&self, i: usize, x: &Act<T>) -> Act<T> {
        let p = &self.params[i];
        match self.kinds[i] {
            LayerKind::Center => Act {
                shape: x.shape.clone(),
                data: x.data.iter().zip(&p[0]).map(|(&v, &m)| v - m).collect(),
            },
            LayerKind::Conv { stride, padding, .. } => conv(x, &p[0], &self.shapes[i][0], &p[1], stride, padding),
            LayerKind::Relu => Act {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| relu(v)).collect(),
            },
            LayerKind::MaxPool { window, stride } => max_pool(x, window, stride),
            LayerKind::GlobalAvgPool => {
                let n = x.shape[1] * x.shape[2];
                let nn = T::from_f64(n as f64);
                Act {
                    shape: vec![x.shape[0]],
                    data: x
                        .data
                        .chunks(n)
                        .map(|ch| ch.iter().fold(T::zero(), |s, &v| s + v) / nn)
                        .collect(),
                }
            }
            LayerKind::Dense { .. } => Act {
                shape: vec![p[1].len()],
                data: dense_rows(&x.data, x.data.len(), &p[0], &p[1]),
            },
            LayerKind::PatchEmbed { patch_size, .. } => {
                let mut y = conv(x, &p[0], &self.shapes[i][0], &p[1], patch_size, 0);
                for (v, &pos) in y.data.iter_mut().zip(&p[2]) {
                    *v = *v + pos;
                }
                y
            }
            LayerKind::DenseBlock { kernel, .. } => {
                let y = conv(x, &p[0], &self.shapes[i][0], &p[1], 1, kernel / 2);
                let mut shape = x.shape.clone();
                shape[0] += y.shape[0];
                let mut data = x.data.clone();
                data.extend(y.data.into_iter().map(relu));
                Act { shape, data }
            }
            LayerKind::AttentionBlock { embed_dim } => attention(x, p, embed_dim),
        }
    }

    fn input(&self, x: &Tensor) -> Result<Act<T>> {
        if x.shape() != self.input_shape {
            return Err(Error::input(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(Act {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|&v| T::from_f64(v)).collect(),
        })
    }

    /// Inputs to every layer (index 0 is the image itself).
    fn layer_inputs(&self, x: Act<T>) -> Vec<Act<T>> {
        let mut acts = vec![x];
        for i in 0..self.kinds.len() - 1 {
            let next = self.layer(i, &acts[i]);
            acts.push(next);
        }
        acts
    }

    fn run_from(&self, from: usize, x: &Act<T>) -> Vec<T> {
        let mut h = self.layer(from, x);
        for i in from + 1..self.kinds.len() {
            h = self.layer(i, &h);
        }
        h.data
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<T>> {
        let input = self.input(x)?;
        Ok(self.run_from(0, &input))
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<T> {
        let z = self.logits(x)?;
        if label >= z.len() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        Ok(cross_entropy(&z, label))
    }
}

/// `-log softmax(z)[label]` via log-sum-exp.
pub fn cross_entropy<T: Real>(z: &[T], label: usize) -> T {
    let m = z.iter().skip(1).fold(z[0], |m, &v| if v > m { v } else { m });
    let s = z.iter().fold(T::zero(), |s, &v| s + (v - m).exp());
    m + s.ln() - z[label]
}

/// Checks every entry of the tape's cross-entropy parameter gradient for
/// `(x, label)` against a central difference with step `h`, evaluated in
/// double-double arithmetic by [`ReferenceModel`].
pub fn model_gradient_check(params: &ModelParams, x: &Tensor, label: usize, h: f64) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, analytic) = params.loss_and_gradients(x, label)?;
    let mut model = ReferenceModel::<DoubleDouble>::from_params(params)?;
    let inputs = model.layer_inputs(model.input(x)?);
    let step = DoubleDouble::new(h);
    let two_h = DoubleDouble::new(2.0 * h);
    let mut report = GradCheckReport::default();
    for (li, group) in analytic.iter().enumerate() {
        for (ti, grad) in group.iter().enumerate() {
            let mut numeric = Vec::with_capacity(grad.len());
            for j in 0..grad.len() {
                let orig = model.params[li][ti][j];
                model.params[li][ti][j] = orig + step;
                let plus = cross_entropy(&model.run_from(li, &inputs[li]), label);
                model.params[li][ti][j] = orig - step;
                let minus = cross_entropy(&model.run_from(li, &inputs[li]), label);
                model.params[li][ti][j] = orig;
                numeric.push(((plus - minus) / two_h).to_f64());
            }
            report.merge(&GradCheckReport::compare(grad.data(), &numeric)?);
        }
    }
    Ok(report)
}
