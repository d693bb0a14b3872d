//! Adam optimizer with bias correction.

use super::{Gradients, ParamId, ParamStore, Scalar, Tensor};

/// Adaptive moment estimation over a [`ParamStore`]. Moment buffers are
/// allocated per parameter at construction and shape-match throughout.
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: T) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .map(|(_, _, v)| Tensor::zeros(v.shape()))
            .collect();
        Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter; a parameter absent from `grads` is
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step as i32);
        let bc2 = one - self.beta2.powi(self.step as i32);
        let zero = Tensor::zeros(&[0]);
        for idx in 0..store.len() {
            let id = ParamId(idx);
            let grad = grads.get(id);
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let param = store.value_mut(id);
            debug_assert_eq!(m.shape(), param.shape());
            let gdata = grad.map_or(zero.data(), |g| g.data());
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            for i in 0..pd.len() {
                let g = if gdata.is_empty() { T::zero() } else { gdata[i] };
                md[i] = self.beta1 * md[i] + (one - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (one - self.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] = pd[i] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
