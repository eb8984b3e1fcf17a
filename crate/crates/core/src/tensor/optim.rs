use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `params`.
/// `t` is the 1-based step count.
pub fn adam_step(params: &mut ParamStore, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("adam step count starts at 1"));
    }
    for id in params.ids().collect::<Vec<_>>() {
        if params.get(id).grad.is_none() {
            return Err(Error::MissingGradient(params.name(id).to_string()));
        }
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.get(id).len();
        let m = &mut params.moments[id.index()];
        if m.first.len() != n {
            m.first = vec![0.0; n];
            m.second = vec![0.0; n];
        }
        let mut first = std::mem::take(&mut m.first);
        let mut second = std::mem::take(&mut m.second);
        let tensor = params.get_mut(id);
        let grad = tensor.grad.as_ref().expect("checked above");
        for i in 0..n {
            let g = grad[i];
            first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
            second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = first[i] / c1;
            let vhat = second[i] / c2;
            tensor.values[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        let m = &mut params.moments[id.index()];
        m.first = first;
        m.second = second;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Gradients;

    fn store_with_grad(g: f64) -> ParamStore {
        let mut s = ParamStore::new(3);
        let w = s.add("w", &[4]).unwrap();
        let mut grads = Gradients::zeros_like(&s);
        grads.slots[w.index()] = Some(vec![g; 4]);
        s.set_grads(&grads);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with_grad(1.0);
        let before = s.by_name("w").unwrap().values.clone();
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        for (a, b) in before.iter().zip(&s.by_name("w").unwrap().values) {
            assert!((a - b - 0.001).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store_with_grad(0.0);
        let before = s.by_name("w").unwrap().values.clone();
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(before, s.by_name("w").unwrap().values);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        // scalar recurrence: m_t, v_t from constant g; step = lr * mhat / (sqrt(vhat) + eps)
        let cfg = AdamConfig::default();
        let g = 0.3;
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            expected.push(x);
        }
        let mut s = store_with_grad(g);
        let x0 = s.by_name("w").unwrap().values[0];
        let mut seen = vec![];
        for t in 1..=2 {
            adam_step(&mut s, &cfg, t).unwrap();
            seen.push(s.by_name("w").unwrap().values[0] - x0);
        }
        assert!(seen[1] < seen[0] && seen[0] < 0.0);
        for (a, b) in seen.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::new(0);
        s.add("w", &[1]).unwrap();
        assert!(matches!(
            adam_step(&mut s, &AdamConfig::default(), 1),
            Err(Error::MissingGradient(_))
        ));
    }
}
