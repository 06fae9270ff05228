/// Linear warmup to the base rate over `warmup_steps`, then linear decay to
/// zero at `total_steps`. Steps are 0-based, so the very first update runs
/// at multiplier 0 whenever there is a warmup phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmupLinear {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl WarmupLinear {
    pub fn new(total_steps: usize, warmup_ratio: f64) -> Self {
        Self {
            total_steps,
            warmup_steps: (warmup_ratio * total_steps as f64).ceil() as usize,
        }
    }

    pub fn multiplier(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            step as f64 / self.warmup_steps as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

/// Adam with bias correction; beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            if *m != 0.0 {
                params[i] -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
