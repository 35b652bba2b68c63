use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::fxp::{quantize_backward, quantize_train_forward, QuantGradBundle, QuantizerState};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Ste(Var),
    Quantize {
        x: Var,
        f: Var,
        i: Var,
        bundle: QuantGradBundle,
        state: QuantizerState,
    },
    Linear(Vec<(Var, Vec<f64>)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", format!("{n}x{k} by {k2}x{m}")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &mut out[r * m..(r + 1) * m];
            for t in 0..k {
                let av = ad[r * k + t];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[t * m..(t + 1) * m];
                for c in 0..m {
                    row[c] += av * brow[c];
                }
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    /// `x[r, c] + b[c]` for a rank-2 `x` and a vector `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2()?;
        if self.value(b).len() != m {
            return Err(mismatch(
                "add_row",
                format!("{n}x{m} plus vector of {}", self.value(b).len()),
            ));
        }
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(bd).map(|(&v, &c)| v + c))
            .collect();
        let value = Tensor::matrix(n, m, data)?;
        Ok(self.push(value, Op::AddRow(x, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        self.push(value, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s: f64 = va.data().iter().sum::<f64>() / va.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(mismatch(
                "softmax_cross_entropy",
                format!("{n} rows, {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &data[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = libm::exp(row[c] - mx);
                probs[r * k + c] = e;
                z += e;
            }
            for c in 0..k {
                probs[r * k + c] /= z;
            }
            loss += libm::log(z) + mx - row[labels[r]];
        }
        let value = Tensor::scalar(loss / n.max(1) as f64);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(mismatch(
                "mse",
                format!("{} predictions, {} targets", p.len(), target.len()),
            ));
        }
        let s: f64 = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(s / p.len().max(1) as f64);
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Records externally computed `values` whose gradient passes straight
    /// through to `x`.
    pub fn straight_through(&mut self, x: Var, values: Vec<f64>) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let value = Tensor::new(&shape, values)?;
        Ok(self.push(value, Op::Ste(x)))
    }

    /// Quantizes `x` with the bit-widths held in `f` and `i` (one entry per
    /// group). The tape values of `f` and `i` are written back into `state`.
    pub fn quantize(
        &mut self,
        x: Var,
        f: Var,
        i: Var,
        state: &mut QuantizerState,
        update_stats: bool,
    ) -> Result<Var> {
        if self.value(f).len() != state.groups() || self.value(i).len() != state.groups() {
            return Err(mismatch(
                "quantize",
                format!(
                    "bit-width vars of length {}/{} for {} groups",
                    self.value(f).len(),
                    self.value(i).len(),
                    state.groups()
                ),
            ));
        }
        state.f_cont.copy_from_slice(self.value(f).data());
        state.i_cont.copy_from_slice(self.value(i).data());
        let shape = self.value(x).shape().to_vec();
        let (q, bundle) = quantize_train_forward(self.value(x).data(), state, update_stats)?;
        let value = Tensor::new(&shape, q)?;
        Ok(self.push(
            value,
            Op::Quantize {
                x,
                f,
                i,
                bundle,
                state: state.clone(),
            },
        ))
    }

    /// Scalar node with value `value` and fixed partial derivatives
    /// `d value / d var = grad` for each `(var, grad)`.
    pub fn custom_scalar(&mut self, value: f64, partials: Vec<(Var, Vec<f64>)>) -> Result<Var> {
        for (v, g) in &partials {
            if self.value(*v).len() != g.len() {
                return Err(mismatch(
                    "custom_scalar",
                    format!("partial of length {} for var of {}", g.len(), self.value(*v).len()),
                ));
            }
        }
        Ok(self.push(Tensor::scalar(value), Op::Linear(partials)))
    }

    /// Populates gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::AlreadyBackpropagated);
        }
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NonScalarLoss { len });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize, f: impl Fn(usize) -> f64) {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (k, g) in slot.iter_mut().enumerate() {
                *g += f(k);
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (n, k) = self.value(*a).dims2()?;
                    let m = self.value(*b).dims2()?.1;
                    let ad = self.value(*a).data();
                    let bd = self.value(*b).data();
                    // dA = up * B^T, dB = A^T * up
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; k * m];
                    for r in 0..n {
                        for t in 0..k {
                            let mut s = 0.0;
                            for c in 0..m {
                                s += up[r * m + c] * bd[t * m + c];
                            }
                            da[r * k + t] = s;
                            let av = ad[r * k + t];
                            if av != 0.0 {
                                for c in 0..m {
                                    db[t * m + c] += av * up[r * m + c];
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, n * k, |j| da[j]);
                    acc(&mut grads, *b, k * m, |j| db[j]);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, up.len(), |j| up[j]);
                    acc(&mut grads, *b, up.len(), |j| up[j]);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, up.len(), |j| up[j]);
                    acc(&mut grads, *b, up.len(), |j| -up[j]);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, up.len(), |j| up[j] * bd[j]);
                    acc(&mut grads, *b, up.len(), |j| up[j] * ad[j]);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, up.len(), |j| up[j] * c),
                Op::AddRow(x, b) => {
                    let m = self.value(*b).len();
                    acc(&mut grads, *x, up.len(), |j| up[j]);
                    let mut db = vec![0.0; m];
                    for (j, &u) in up.iter().enumerate() {
                        db[j % m] += u;
                    }
                    acc(&mut grads, *b, m, |j| db[j]);
                }
                Op::Relu(a) => {
                    let ad = self.value(*a).data();
                    acc(&mut grads, *a, up.len(), |j| if ad[j] > 0.0 { up[j] } else { 0.0 });
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n, |_| up[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n, |_| up[0] / n as f64);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let (n, k) = self.value(*logits).dims2()?;
                    let scale = up[0] / n as f64;
                    acc(&mut grads, *logits, n * k, |j| {
                        let (r, c) = (j / k, j % k);
                        let hot = if labels[r] == c { 1.0 } else { 0.0 };
                        scale * (probs[j] - hot)
                    });
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let scale = 2.0 * up[0] / p.len() as f64;
                    acc(&mut grads, *pred, p.len(), |j| scale * (p[j] - target[j]));
                }
                Op::Ste(x) => acc(&mut grads, *x, up.len(), |j| up[j]),
                Op::Quantize {
                    x,
                    f,
                    i,
                    bundle,
                    state,
                } => {
                    let g = quantize_backward(bundle, &up, state)?;
                    acc(&mut grads, *x, g.input.len(), |j| g.input[j]);
                    acc(&mut grads, *f, g.f.len(), |j| g.f[j]);
                    acc(&mut grads, *i, g.i.len(), |j| g.i[j]);
                }
                Op::Linear(partials) => {
                    for (v, p) in partials {
                        acc(&mut grads, *v, p.len(), |j| up[0] * p[j]);
                    }
                }
            }
            grads[idx] = Some(up);
        }
        self.grads = Some(grads);
        Ok(())
    }
}
