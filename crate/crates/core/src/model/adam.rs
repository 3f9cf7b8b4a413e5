use super::{ModelError, Params, Scalar};

/// Adam with bias-corrected moments: `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, learning_rate: f64) -> Self {
        let zeros = |p: &Params<T>| {
            let mut z = p.clone();
            for t in z.tensors_mut() {
                t.iter_mut().for_each(|v| *v = T::zero());
            }
            z
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Tensors listed in `frozen` (by index into
    /// [`Params::tensors`]) are left untouched.
    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>, frozen: usize) -> Result<(), ModelError> {
        let shapes = |p: &Params<T>| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        if shapes(params) != shapes(grads) || shapes(params) != shapes(&self.m) {
            return Err(ModelError::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let v_all = self.v.tensors_mut();
        for (i, (((w, g), m), v)) in params
            .tensors_mut()
            .into_iter()
            .zip(g_all)
            .zip(m_all)
            .zip(v_all)
            .enumerate()
        {
            if i < frozen {
                continue;
            }
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = tb1 * *m + ob1 * g;
                *v = tb2 * *v + ob2 * g * g;
                let m_hat = *m * ic1;
                let v_hat = *v * ic2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
