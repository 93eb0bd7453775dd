use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Vec<f64>],
    s: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::contract(format!("learning rate {lr} must be positive")));
    }
    if grads.len() != params.len() || s.m.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    for (id, g) in params.ids().zip(grads) {
        let t = params.get(id);
        if g.len() != t.len() || s.m[id.index()].len() != t.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: t.shape().to_vec(),
                right: vec![g.len()],
            });
        }
    }
    s.step += 1;
    let (b1, b2) = (s.beta1, s.beta2);
    let c1 = 1.0 - b1.powi(s.step as i32);
    let c2 = 1.0 - b2.powi(s.step as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = &grads[i];
        let (m, v) = (&mut s.m[i], &mut s.v[i]);
        let values = params.get_mut(id).values_mut();
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            values[k] -= lr * m_hat / (v_hat.sqrt() + s.epsilon);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most
/// `threshold`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::contract(format!("clip threshold {threshold} must be positive")));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let scale = threshold / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    Ok(norm)
}

/// Linear ramp from 0 to 1 over `ramp` batches; `ramp == 0` disables it.
pub fn kl_anneal_weight(batch_index: usize, ramp: usize) -> f64 {
    if ramp == 0 {
        1.0
    } else {
        (batch_index as f64 / ramp as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(&[0.5, -2.0]);
        let mut s = AdamState::new(&p);
        for _ in 0..20 {
            adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, 0.1).unwrap();
        }
        assert_eq!(p.by_name("x").unwrap().values(), &[0.5, -2.0]);
        assert_eq!(s.step, 20);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(&[1.0, 1.0, 1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![3.0, -0.02, 1e3]], &mut s, 0.01).unwrap();
        let v = p.by_name("x").unwrap().values();
        // m_hat / sqrt(v_hat) = g / |g| after one step
        for (x, dir) in v.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - (1.0 + 0.01 * dir)).abs() < 1e-8);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            let x = p.by_name("x").unwrap().values()[0];
            adam_step(&mut p, &[vec![2.0 * x]], &mut s, 0.1).unwrap();
        }
        // reference trajectory of the same recurrences
        let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let got = p.by_name("x").unwrap().values()[0];
        assert!(got.abs() < 0.5);
        assert!((got - x).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_mismatches() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[vec![1.0, 2.0]], &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &[], &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &[vec![1.0]], &mut s, 0.0).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);

        let mut small = vec![vec![0.1, -0.2]];
        clip_gradients(&mut small, 1.0).unwrap();
        assert_eq!(small, vec![vec![0.1, -0.2]]);

        for scale in [0.01, 1.0, 7.0, 1e6] {
            let mut g = vec![vec![scale, -2.0 * scale, 0.5 * scale]];
            let before = clip_gradients(&mut g, 1.5).unwrap();
            assert!((global_norm(&g) - before.min(1.5)).abs() < 1e-12);
        }
        assert!(clip_gradients(&mut g, 0.0).is_err());
    }

    #[test]
    fn anneal_schedule() {
        assert_eq!(kl_anneal_weight(0, 60_000), 0.0);
        assert_eq!(kl_anneal_weight(75_000, 75_000), 1.0);
        assert_eq!(kl_anneal_weight(30_000, 60_000), 0.5);
        assert_eq!(kl_anneal_weight(0, 0), 1.0);
        assert_eq!(kl_anneal_weight(10, 3), 1.0);
        let w: Vec<f64> = (0..120).map(|b| kl_anneal_weight(b, 100)).collect();
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
        assert_eq!(*w.last().unwrap(), 1.0);
    }
}
