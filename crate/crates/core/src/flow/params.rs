use crate::error::{Error, Result};

/// Variational flow settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Base smoothness weight, scaled per pixel by `exp(-kappa |grad I|)`.
    pub alpha_scale: f32,
    /// Matching term weight at the coarsest level.
    pub beta: f32,
    /// Gradient constancy weight.
    pub gamma: f32,
    /// Color constancy weight.
    pub delta: f32,
    /// Gaussian pre-smoothing of both images.
    pub sigma: f32,
    /// Exponent of the per-level matching weight `beta (k / k_max)^b`.
    pub b: f32,
    /// Floor inside the data term normalization.
    pub zeta: f32,
    pub epsilon: f32,
    /// Slope of the local smoothness weight, on intensities in `[0, 1]`.
    pub kappa: f32,
    /// Bandwidth of the match reliability kernel.
    pub sigma_m: f32,
    /// Downsampling factor between pyramid levels.
    pub eta: f32,
    /// Smallest allowed level side.
    pub min_size: usize,
    pub fp_iters: usize,
    pub sor_iters: usize,
    pub sor_omega: f32,
    pub parallel: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha_scale: 1.0,
            beta: 300.0,
            gamma: 0.8,
            delta: 0.0,
            sigma: 0.5,
            b: 0.6,
            zeta: 0.1,
            epsilon: 0.001,
            kappa: 5.0,
            sigma_m: 50.0,
            eta: 0.95,
            min_size: 16,
            fp_iters: 5,
            sor_iters: 25,
            sor_omega: 1.6,
            parallel: crate::par::PARALLEL_AVAILABLE,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must be in (0, 1)");
        }
        if self.fp_iters == 0 || self.sor_iters == 0 {
            return bad("iteration counts must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return bad("SOR relaxation must be in (0, 2)");
        }
        if !(self.sigma_m > 0.0) {
            return bad("sigma_m must be > 0");
        }
        let nonneg = [
            self.alpha_scale,
            self.beta,
            self.gamma,
            self.delta,
            self.sigma,
            self.b,
            self.zeta,
            self.kappa,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("weights must be finite and >= 0");
        }
        if self.min_size == 0 {
            return bad("min_size must be >= 1");
        }
        Ok(())
    }

    /// Matching weight at level `k` of `0..=k_max` (0 finest).
    pub fn beta_at(&self, k: usize, k_max: usize) -> f32 {
        if k_max == 0 {
            return self.beta;
        }
        self.beta * (k as f32 / k_max as f32).powf(self.b)
    }

    /// Level sizes from finest to coarsest.
    pub fn level_sizes(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let mut sizes = vec![(width, height)];
        for k in 1.. {
            let f = self.eta.powi(k);
            let s = (
                (width as f32 * f).round() as usize,
                (height as f32 * f).round() as usize,
            );
            if s.0.min(s.1) < self.min_size || s == *sizes.last().unwrap() {
                break;
            }
            sizes.push(s);
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_schedule_endpoints() {
        let p = FlowParams::default();
        assert_eq!(p.beta_at(10, 10), 300.0);
        assert_eq!(p.beta_at(0, 10), 0.0);
        assert!(p.beta_at(3, 10) < p.beta_at(7, 10));
    }

    #[test]
    fn pyramid_stops_at_min_side() {
        let p = FlowParams::default();
        let s = p.level_sizes(64, 40);
        assert_eq!(s[0], (64, 40));
        assert!(s.iter().all(|(w, h)| (*w).min(*h) >= 16));
        let last = *s.last().unwrap();
        let next = 0.95f32.powi(s.len() as i32);
        assert!(((40.0 * next).round() as usize) < 16, "{last:?}");
        assert_eq!(p.level_sizes(10, 10), vec![(10, 10)]);
    }

    #[test]
    fn defaults_are_the_tuned_values() {
        let p = FlowParams::default();
        assert_eq!(
            (p.beta, p.gamma, p.delta, p.sigma, p.b),
            (300.0, 0.8, 0.0, 0.5, 0.6)
        );
        assert_eq!(
            (p.zeta, p.epsilon, p.kappa, p.sigma_m),
            (0.1, 0.001, 5.0, 50.0)
        );
        assert_eq!((p.eta, p.fp_iters, p.sor_iters), (0.95, 5, 25));
        assert!(p.validate().is_ok());
    }
}
