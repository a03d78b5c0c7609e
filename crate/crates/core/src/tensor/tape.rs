use super::{attention, conv, loss, norm, pool, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: norm::Saved<T>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    SoftmaxChannel(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        saved: loss::Saved<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape belongs to one forward pass and is confined to one thread; build a
/// fresh one per training step.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked iff `tensor.requires_grad()`.
    /// Registers `tensor` as an input; any gradient it carries is dropped.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].value.grad()
    }

    pub(crate) fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub(crate) fn push(&mut self, mut value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        value.set_requires_grad(needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| p * s).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements as a rank-0 tensor. Accumulates in `f64`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::lit(total)), Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&p| if p > T::zero() { p } else { T::zero() })
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Relu(a), &[a])
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (n, c, h, w) = x.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&x.data()[base..base + len * plane]);
        }
        let out = Tensor::new(vec![n, len, h, w], data)?;
        Ok(self.push(out, Op::SliceChannels { input: a, start }, &[a]))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are added to the buffers of every node that requires them;
    /// calling `backward` twice without clearing accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (true, Some(g)) = (node.needs_grad, g) {
                node.value.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(y).map(|(&g, &y)| g * y).collect());
                send(*b, g.iter().zip(x).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|&g| g * *s).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                );
            }
            Op::SliceChannels { input, start } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut dx = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    dx[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                send(*input, dx);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let grads_in = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *stride,
                    *pad,
                    g,
                    conv::Wanted {
                        input: self.needs_grad(*input),
                        weight: self.needs_grad(*weight),
                        bias: bias.is_some_and(|b| self.needs_grad(b)),
                    },
                );
                if let Some(dx) = grads_in.input {
                    send(*input, dx);
                }
                if let Some(dw) = grads_in.weight {
                    send(*weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, grads_in.bias) {
                    send(*b, db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let shape = self.value(*input).dims4()?;
                let (dx, dgamma, dbeta) = norm::batch_norm_backward(
                    shape,
                    self.value(*gamma).data(),
                    saved,
                    g,
                );
                send(*input, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (&src, &g) in argmax.iter().zip(g) {
                    dx[src] += g;
                }
                send(*input, dx);
            }
            Op::SoftmaxChannel(a) => {
                let shape = node.value.dims4()?;
                send(*a, pool::softmax_channel_backward(shape, node.value.data(), g));
            }
            Op::Attention { q, k, v, probs } => {
                let (dq, dk, dv) = attention::attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    probs,
                    g,
                )?;
                send(*q, dq);
                send(*k, dk);
                send(*v, dv);
            }
            Op::CrossEntropy { logits, saved } => {
                let shape = self.value(*logits).dims4()?;
                send(*logits, loss::cross_entropy_backward(shape, saved, g[0]));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_tensor(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[1.0, -2.0, 3.0]).with_requires_grad(true));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[1.0, 2.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[1.0, 2.0]).with_requires_grad(true));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[1.0, 2.0]).with_requires_grad(true));
        let c = tape.leaf(vec_tensor(&[3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[-1.0, 0.0, 2.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(vec_tensor(&[-1.0, -0.5, -3.0]).with_requires_grad(true));
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }
}
