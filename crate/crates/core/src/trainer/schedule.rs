/// Cosine annealing with warm restarts. Cycle `k` has length
/// `t0 * t_mult^k` and includes its end point, so `lr_at(t0) == lr_min` and
/// the next step restarts at `lr_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineRestarts {
    pub lr_max: f64,
    pub lr_min: f64,
    pub t0: usize,
    pub t_mult: usize,
}

impl CosineRestarts {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.t0 == 0 {
            return self.lr_max;
        }
        let mut start = 0usize;
        let mut len = self.t0;
        while step > start + len {
            start += len + 1;
            len = len.saturating_mul(self.t_mult.max(1));
        }
        let p = (step - start) as f64 / len as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + libm::cos(core::f64::consts::PI * p))
    }
}
