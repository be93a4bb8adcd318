//! Central finite differences and the per-operator gradient check catalog.
//!
//! The catalog builds random small instances of every differentiable
//! operator, reduces each output to a scalar with fixed random weights, and
//! compares [`Tape::backward`] against [`finite_diff_gradient`]. Instances
//! keep ReLU inputs and max-pool windows away from kinks and ties, where the
//! derivative is undefined and a finite difference straddles two branches,
//! and redraw instances with a gradient entry too small for the difference
//! to resolve (see [`MIN_RESOLVED_GRADIENT`]).

use rand::seq::SliceRandom;
use rand::Rng;

use super::tape::{NodeId, OpKind, Tape};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Central-difference step of the gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Floor for the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a-b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference estimate `(f(x+h·e) − f(x−h·e)) / 2h` for every
/// coordinate of `at`.
pub fn finite_diff_gradient<F>(mut f: F, at: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::input(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = at.clone();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let x = at.data()[i];
        probe.data_mut()[i] = x + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(at.shape(), grad)
}

/// Worst coordinate of an analytic/numeric comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn compare(analytic: &[f64], numeric: &[f64]) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::shape(format!(
                "gradient lengths differ: {} vs {}",
                analytic.len(),
                numeric.len()
            )));
        }
        let mut report = GradCheckReport {
            checked: analytic.len(),
            ..Default::default()
        };
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let e = relative_error(a, n);
            if e > report.max_rel_error || i == 0 {
                report.max_rel_error = e;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
        Ok(report)
    }

    /// Folds another report in, keeping the worst coordinate.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.checked == 0 {
            let offset = self.checked;
            *self = GradCheckReport {
                checked: self.checked,
                worst_index: offset + other.worst_index,
                ..other.clone()
            };
        }
        self.checked += other.checked;
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

type Builder = fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

/// One random instance of a differentiable operator.
#[derive(Clone)]
pub struct OpCase {
    pub op: OpKind,
    pub inputs: Vec<Tensor>,
    weights: Tensor,
    build: Builder,
}

impl std::fmt::Debug for OpCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpCase")
            .field("op", &self.op)
            .field("inputs", &self.inputs)
            .finish()
    }
}

impl OpCase {
    fn record(&self, tape: &mut Tape, inputs: &[Tensor], differentiable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|t| {
                if differentiable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let out = (self.build)(tape, &ids)?;
        let w = tape.constant(self.weights.clone());
        let weighted = tape.mul(out, w)?;
        let scalar = tape.sum(weighted)?;
        Ok((scalar, ids))
    }

    /// Weighted-sum scalar of the operator output for the given inputs.
    pub fn evaluate(&self, inputs: &[Tensor]) -> Result<f64> {
        let mut tape = Tape::new();
        let (scalar, _) = self.record(&mut tape, inputs, false)?;
        tape.value(scalar).item()
    }

    /// Analytic gradients of every input, in input order.
    pub fn analytic(&self, fault: Option<(OpKind, f64)>) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        if let Some((kind, factor)) = fault {
            tape.inject_fault(kind, factor);
        }
        let (scalar, ids) = self.record(&mut tape, &self.inputs, true)?;
        let mut grads = tape.backward(scalar, &ids)?;
        ids.iter()
            .map(|&id| grads.take(id).ok_or_else(|| Error::contract("missing gradient")))
            .collect()
    }

    /// Central-difference gradients of every input.
    pub fn numeric(&self, h: f64) -> Result<Vec<Tensor>> {
        (0..self.inputs.len())
            .map(|slot| {
                finite_diff_gradient(
                    |probe| {
                        let mut inputs = self.inputs.clone();
                        inputs[slot] = probe.clone();
                        self.evaluate(&inputs)
                    },
                    &self.inputs[slot],
                    h,
                )
            })
            .collect()
    }

    pub fn check(&self, h: f64, fault: Option<(OpKind, f64)>) -> Result<GradCheckReport> {
        let analytic = self.analytic(fault)?;
        let numeric = self.numeric(h)?;
        let mut report = GradCheckReport::default();
        for (a, n) in analytic.iter().zip(&numeric) {
            report.merge(&GradCheckReport::compare(a.data(), n.data())?);
        }
        Ok(report)
    }
}

/// Operators with a backward rule (everything except leaves).
pub const DIFFERENTIABLE_OPS: [OpKind; 18] = [
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::Matmul,
    OpKind::Transpose,
    OpKind::Reshape,
    OpKind::Sum,
    OpKind::Select,
    OpKind::Concat,
    OpKind::Conv2d,
    OpKind::Relu,
    OpKind::MaxPool2d,
    OpKind::GlobalAvgPool,
    OpKind::Dense,
    OpKind::LayerNorm,
    OpKind::Softmax,
    OpKind::CrossEntropy,
];

fn random_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("valid shape")
}

/// Random values at least `gap` away from zero.
fn away_from_zero(rng: &mut SplitMix64, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.uniform(gap, 1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Distinct values spaced by 1/n, shuffled, so pooling windows never tie.
fn distinct_values(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).expect("valid shape")
}

fn vector_or_matrix(rng: &mut SplitMix64) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        vec![rng.gen_range(1..=6)]
    } else {
        vec![rng.gen_range(1..=4), rng.gen_range(1..=4)]
    }
}

/// Smallest nonzero central-difference entry an instance may have.
///
/// A step of `1e-6` on a scalar summing dozens of `O(1)` terms leaves up to
/// `1e-8` of rounding noise in a difference quotient, so an entry below this
/// magnitude could miss a `1e-5` relative tolerance whatever the backward
/// rule does.
pub const MIN_RESOLVED_GRADIENT: f64 = 1e-3;

/// Redraws allowed per instance before giving up.
const MAX_REDRAWS: usize = 1000;

/// `count` random instances of `op`, deterministic in `seed`, each with a
/// central difference (step `h`) whose every entry is exactly zero or at
/// least [`MIN_RESOLVED_GRADIENT`] in magnitude. Selection looks only at
/// the finite difference, never at the backward rule under test.
pub fn random_op_cases(op: OpKind, count: usize, seed: u64) -> Result<Vec<OpCase>> {
    let mut rng = SplitMix64::derived(seed, &[op as u64]);
    (0..count)
        .map(|_| {
            for _ in 0..MAX_REDRAWS {
                let case = random_op_case(op, &mut rng)?;
                let resolved = case
                    .numeric(FD_STEP)?
                    .iter()
                    .all(|g| g.data().iter().all(|&v| v == 0.0 || v.abs() >= MIN_RESOLVED_GRADIENT));
                if resolved {
                    return Ok(case);
                }
            }
            Err(Error::contract(format!(
                "no well-resolved {op} instance in {MAX_REDRAWS} draws"
            )))
        })
        .collect()
}

fn random_op_case(op: OpKind, rng: &mut SplitMix64) -> Result<OpCase> {
    let (inputs, build): (Vec<Tensor>, Builder) = match op {
        OpKind::Leaf => return Err(Error::input("leaves have no backward rule")),
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let shape = vector_or_matrix(rng);
            let a = random_tensor(rng, &shape);
            let b = if rng.gen_bool(0.25) {
                Tensor::scalar(rng.uniform(-1.0, 1.0))
            } else {
                random_tensor(rng, &shape)
            };
            let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            let build: Builder = match op {
                OpKind::Add => |t, x| t.add(x[0], x[1]),
                OpKind::Sub => |t, x| t.sub(x[0], x[1]),
                _ => |t, x| t.mul(x[0], x[1]),
            };
            (vec![a, b], build)
        }
        OpKind::Scale => {
            let shape = vector_or_matrix(rng);
            (vec![random_tensor(rng, &shape)], |t, x| t.scale(x[0], -1.75))
        }
        OpKind::Matmul => {
            let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            (
                vec![random_tensor(rng, &[m, k]), random_tensor(rng, &[k, n])],
                |t, x| t.matmul(x[0], x[1]),
            )
        }
        OpKind::Transpose => {
            let shape = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
            (vec![random_tensor(rng, &shape)], |t, x| t.transpose(x[0]))
        }
        OpKind::Reshape => {
            let shape = [rng.gen_range(1..=4), rng.gen_range(1..=4)];
            (vec![random_tensor(rng, &shape)], |t, x| {
                let n = t.value(x[0]).len();
                t.reshape(x[0], &[n])
            })
        }
        OpKind::Sum => {
            let shape = vector_or_matrix(rng);
            (vec![random_tensor(rng, &shape)], |t, x| t.sum(x[0]))
        }
        OpKind::Select => {
            let shape = vector_or_matrix(rng);
            (vec![random_tensor(rng, &shape)], |t, x| {
                let last = t.value(x[0]).len() - 1;
                t.select(x[0], last)
            })
        }
        OpKind::Concat => {
            let (h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (ca, cb) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            (
                vec![random_tensor(rng, &[ca, h, w]), random_tensor(rng, &[cb, h, w])],
                |t, x| t.concat(x[0], x[1]),
            )
        }
        OpKind::Conv2d => {
            let kernel = rng.gen_range(1..=3);
            let padding = rng.gen_range(0..=1);
            let channels = rng.gen_range(1..=2);
            let filters = rng.gen_range(1..=3);
            let h = rng.gen_range(kernel..=6);
            let w = rng.gen_range(kernel..=6);
            // Stride is encoded by the builder choice below.
            let inputs = vec![
                random_tensor(rng, &[channels, h, w]),
                random_tensor(rng, &[filters, channels, kernel, kernel]),
                random_tensor(rng, &[filters]),
            ];
            let build: Builder = match (rng.gen_range(1..=2), padding) {
                (1, 0) => |t, x| t.conv2d(x[0], x[1], x[2], 1, 0),
                (1, _) => |t, x| t.conv2d(x[0], x[1], x[2], 1, 1),
                (_, 0) => |t, x| t.conv2d(x[0], x[1], x[2], 2, 0),
                _ => |t, x| t.conv2d(x[0], x[1], x[2], 2, 1),
            };
            (inputs, build)
        }
        OpKind::Relu => {
            let shape = vector_or_matrix(rng);
            (vec![away_from_zero(rng, &shape, 1e-3)], |t, x| t.relu(x[0]))
        }
        OpKind::MaxPool2d => {
            let c = rng.gen_range(1..=2);
            let h = rng.gen_range(2..=6);
            let w = rng.gen_range(2..=6);
            let build: Builder = if rng.gen_bool(0.5) {
                |t, x| t.max_pool2d(x[0], 2, 2)
            } else {
                |t, x| t.max_pool2d(x[0], 2, 1)
            };
            (vec![distinct_values(rng, &[c, h, w])], build)
        }
        OpKind::GlobalAvgPool => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
            (vec![random_tensor(rng, &shape)], |t, x| t.global_avg_pool(x[0]))
        }
        OpKind::Dense => {
            let (n_in, n_out) = (rng.gen_range(1..=5), rng.gen_range(1..=4));
            let a = if rng.gen_bool(0.5) {
                away_from_zero(rng, &[n_in], 0.1)
            } else {
                let rows = rng.gen_range(1..=3);
                away_from_zero(rng, &[rows, n_in], 0.1)
            };
            (
                vec![a, random_tensor(rng, &[n_in, n_out]), random_tensor(rng, &[n_out])],
                |t, x| t.dense(x[0], x[1], x[2]),
            )
        }
        OpKind::LayerNorm => {
            // A two-element row normalizes to ±1 up to ε, so its exact
            // gradient is O(ε) and below what any f64 difference resolves.
            let shape = [rng.gen_range(1..=3), rng.gen_range(3..=6)];
            (vec![random_tensor(rng, &shape)], |t, x| t.layer_norm(x[0]))
        }
        OpKind::Softmax => {
            let shape = if rng.gen_bool(0.5) {
                vec![rng.gen_range(2..=5)]
            } else {
                vec![rng.gen_range(1..=3), rng.gen_range(2..=5)]
            };
            let a = random_tensor(rng, &shape).scale(3.0);
            (vec![a], |t, x| t.softmax(x[0]))
        }
        OpKind::CrossEntropy => {
            let k = rng.gen_range(2..=5);
            let a = random_tensor(rng, &[k]).scale(3.0);
            let build: Builder = match rng.gen_range(0..2) {
                0 => |t, x| t.cross_entropy(x[0], 0),
                _ => |t, x| {
                    let last = t.value(x[0]).len() - 1;
                    t.cross_entropy(x[0], last)
                },
            };
            (vec![a], build)
        }
    };

    let mut probe = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = build(&mut probe, &ids)?;
    let out_shape = probe.value(out).shape().to_vec();
    let weights = away_from_zero(rng, &out_shape, 0.1);
    Ok(OpCase {
        op,
        inputs,
        weights,
        build,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sum_of_squares() {
        let g = finite_diff_gradient(
            |x| Ok(x.data().iter().map(|v| v * v).sum()),
            &Tensor::vector(&[1.0, 2.0]),
            1e-6,
        )
        .unwrap();
        assert_abs_diff_eq!(g.data()[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.data()[1], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_gradient(|_| Ok(0.0), &Tensor::scalar(1.0), 0.0).is_err());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(relative_error(1e-9, 0.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(relative_error(2.0, 1.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn every_op_passes_a_few_cases() {
        for op in DIFFERENTIABLE_OPS {
            for case in random_op_cases(op, 5, 11).unwrap() {
                let r = case.check(1e-6, None).unwrap();
                assert!(r.passes(1e-5), "{op}: {r:?} for {case:?}");
            }
        }
    }

    #[test]
    fn fault_injection_is_detected() {
        let case = &random_op_cases(OpKind::Relu, 1, 3).unwrap()[0];
        let r = case.check(1e-6, Some((OpKind::Relu, 1.5))).unwrap();
        assert!(!r.passes(1e-5));
    }
}
