//! Adam with bias correction and L2 weight decay, plus global-norm clipping.

use crate::error::{NumericsError, Result};
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(NumericsError::Shape {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.first.len()],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape()
            || p.shape() != state.first[i].shape()
            || p.shape() != state.second[i].shape()
        {
            return Err(NumericsError::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() / (T::one() - b1.powi(t));
    let c2 = T::one() / (T::one() - b2.powi(t));
    let (lr, eps, wd) = (T::of(cfg.lr), T::of(cfg.eps), T::of(cfg.weight_decay));

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj + wd * *w;
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mh = m[j] * c1;
            let vh = v[j] * c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.squared_norm().as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = vec![Tensor::<f64>::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![3.0, -0.25, 1e-3])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let want = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, b) in p[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let orig = Tensor::<f64>::vector(vec![0.3, -0.7]);
        let mut p = vec![orig.clone()];
        let g = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p[0], orig);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn weight_decay_shrinks_towards_zero() {
        let mut p = vec![Tensor::<f64>::vector(vec![2.0])];
        let g = vec![Tensor::zeros(&[1])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 1e-2,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!(p[0].item() < 2.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let g = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![Tensor::<f32>::vector(vec![0.1, 0.2, 0.3])];
            let mut st = AdamState::new(&p);
            for k in 0..10 {
                let g = vec![Tensor::vector(vec![k as f32 * 0.1, -0.5, 0.25])];
                adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::<f64>::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let after: f64 = g.iter().map(|t| t.squared_norm()).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
