use super::linalg::Float;
use super::params::{check_congruent, Gradients, ModelParams};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl<F: Float> AdamState<F> {
    pub fn new(params: &ModelParams<F>, lr: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &Gradients<F>) -> Result<()> {
        check_congruent(params, grads)?;
        check_congruent(params, &self.m)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let c1 = F::from_f64(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = F::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        let one = F::ONE;
        let tensors = params
            .named_mut()
            .into_iter()
            .zip(grads.named())
            .zip(self.m.named_mut().into_iter().zip(self.v.named_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi * c1;
                let vhat = *vi * c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<F: Float>(params: &mut ModelParams<F>, grads: &Gradients<F>, state: &mut AdamState<F>) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::super::params::tests::tiny_dims;
    use super::*;

    #[test]
    fn zero_gradient_decays_moments_only() {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        st.m.node_emb.data[0] = 1.0;
        st.v.node_emb.data[0] = 1.0;
        let zero = p.zeros_like();
        st.step(&mut p, &zero).unwrap();
        assert_eq!(st.step, 1);
        assert!((st.m.node_emb.data[0] - 0.9).abs() < 1e-15);
        assert!((st.v.node_emb.data[0] - 0.999).abs() < 1e-15);
        // only the entry with leftover momentum moved
        let moved = p
            .named()
            .iter()
            .zip(before.named())
            .flat_map(|((_, a), (_, b))| a.data.iter().zip(b.data.clone()).map(|(x, y)| (*x != y) as usize).collect::<Vec<_>>())
            .sum::<usize>();
        assert_eq!(moved, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 1).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (_, m) in g.named_mut() {
            m.data.iter_mut().for_each(|x| *x = 1.0);
        }
        let mut st = AdamState::new(&p, 0.01);
        adam_step(&mut p, &g, &mut st).unwrap();
        for ((_, a), (_, b)) in p.named().into_iter().zip(before.named()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((y - x) - 0.01).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 1).unwrap();
        let mut dims = tiny_dims();
        dims.num_nodes += 1;
        let g = ModelParams::<f64>::zeros(dims);
        let mut st = AdamState::new(&p, 0.01);
        assert!(matches!(st.step(&mut p, &g), Err(crate::Error::Contract(_))));
    }
}
