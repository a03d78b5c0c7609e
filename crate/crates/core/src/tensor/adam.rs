use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam moments and hyper-parameters for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`, standard betas and epsilon.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, lr: f64) -> Self {
        let m: Vec<Vec<T>> = params.into_iter().map(|p| vec![T::zero(); p.numel()]).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` from their gradient buffers.
///
/// Gradients are left in place; the caller clears them.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameters but state tracks {}",
            params.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.numel() != state.m[i].len() || p.numel() != state.v[i].len() {
            return Err(Error::shape(format!(
                "adam: parameter {i} has {} elements, moments have {}",
                p.numel(),
                state.m[i].len()
            )));
        }
        if p.grad().is_none() {
            return Err(Error::invalid(format!("adam: parameter {i} has no gradient")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, value) in p.data_mut().iter_mut().enumerate() {
            let g = grad[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            let update = state.lr * (mj / c1) / ((vj / c2).sqrt() + state.eps);
            *value = T::lit(value.as_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        p.accumulate_grad(&[0.0; 3]).unwrap();
        let before = p.data().to_vec();
        let mut st = AdamState::new([&p], 0.001);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &mut st).unwrap();
        }
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // closed form: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let mut p = Tensor::<f64>::new(vec![1], vec![0.3]).unwrap();
        p.accumulate_grad(&[1.0]).unwrap();
        let mut st = AdamState::new([&p], 0.001);
        adam_step(&mut [&mut p], &mut st).unwrap();
        let expected = 0.3 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn converges_on_a_parabola() {
        let mut x = Tensor::<f64>::new(vec![1], vec![1.0]).unwrap().with_requires_grad(true);
        let mut st = AdamState::new([&x], 0.1);
        for _ in 0..100 {
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone());
            let sq = tape.mul(v, v).unwrap();
            let l = tape.sum(sq);
            tape.backward(l).unwrap();
            x.zero_grad();
            x.accumulate_grad(tape.grad(v).unwrap()).unwrap();
            adam_step(&mut [&mut x], &mut st).unwrap();
        }
        assert!(x.data()[0].abs() < 0.1, "x = {}", x.data()[0]);
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut p = Tensor::<f64>::zeros(vec![2]);
        p.accumulate_grad(&[1.0, 1.0]).unwrap();
        let other = Tensor::<f64>::zeros(vec![3]);
        let mut st = AdamState::new([&other], 0.1);
        assert!(adam_step(&mut [&mut p], &mut st).is_err());
        let mut fresh = Tensor::<f64>::zeros(vec![3]);
        assert!(adam_step(&mut [&mut fresh], &mut st).is_err());
    }
}
