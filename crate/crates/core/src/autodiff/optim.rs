use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore};

/// First and second moment estimates for one flat parameter buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every parameter of a store. Parameters without a gradient in a
/// step are left untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
            states: Vec::new(),
        }
    }

    /// Dense gradients update every coordinate; row-sparse gradients update
    /// only the touched rows (moments of other rows are left as they are).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        for id in store.ids().collect::<Vec<_>>() {
            if !grads.contains(id) {
                continue;
            }
            if self.states.len() <= id.0 {
                self.states.resize(id.0 + 1, AdamState::default());
            }
            let p = store.get_mut(id);
            let state = &mut self.states[id.0];
            if state.m.len() != p.len() {
                *state = AdamState::zeros(p.len());
            }
            if let Some(g) = grads.dense(id) {
                adam_step(p.data_mut(), g.data(), state, self.lr, self.betas, self.eps);
                continue;
            }
            let (row_len, rows) = grads.sparse_rows(id).expect("gradient present");
            let (b1, b2) = self.betas;
            state.t += 1;
            let c1 = 1.0 - b1.powi(state.t as i32);
            let c2 = 1.0 - b2.powi(state.t as i32);
            let data = p.data_mut();
            for (&r, g) in rows {
                for (k, &gk) in g.iter().enumerate() {
                    let i = r * row_len + k;
                    state.m[i] = b1 * state.m[i] + (1.0 - b1) * gk;
                    state.v[i] = b2 * state.v[i] + (1.0 - b2) * gk * gk;
                    data[i] -= self.lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// Piecewise-constant learning rate: `base * gamma^k` where `k` counts the
/// milestones already reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
            gamma: 1.0,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(k as i32)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, (0.9, 0.999), 1e-8);
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [0.5, -2.0, 1e-3];
        let mut s = AdamState::zeros(3);
        adam_step(&mut p, &g, &mut s, 0.01, (0.9, 0.999), 1e-8);
        // m_hat = g, v_hat = g^2 so the step is lr * g / (|g| + eps)
        for (pi, gi) in p.iter().zip(g) {
            let expected = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!(((1.0 - pi).abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        // hand-rolled scalar Adam
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let grads = [0.4, -0.1];
        let mut x = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = vec![2.0];
        let mut s = AdamState::zeros(1);
        for g in grads {
            adam_step(&mut p, &[g], &mut s, lr, (b1, b2), eps);
        }
        assert_eq!(p[0], x);
    }

    #[test]
    fn multistep_schedule_halves() {
        let s = LrSchedule {
            base: 1e-3,
            milestones: vec![150, 250, 350, 450],
            gamma: 0.5,
        };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(149), 1e-3);
        assert_eq!(s.lr_at(150), 5e-4);
        assert_eq!(s.lr_at(300), 2.5e-4);
        assert_eq!(s.lr_at(499), 1e-3 / 16.0);
    }
}
