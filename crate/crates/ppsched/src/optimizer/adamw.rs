//! AdamW with decoupled weight decay, an exact in-place rollback, and a
//! norm-clipping step wrapper.
//!
//! The step is arithmetically reversible: given the gradient it consumed,
//! every assignment can be solved for the previous value (the moment updates
//! are affine in the old moments, and the parameter update is affine in the
//! old parameters once the bias-corrected moments are recomputed from the
//! current state). Rollback therefore needs no snapshot — only the gradient
//! of the step being undone, which callers retain until the step has been
//! validated.

use thiserror::Error;

/// Why a state could not be built or a rollback could not proceed.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum AdamWError {
    #[error("moment decay {name} = {value} is outside (0, 1); both updates divide by it on rollback")]
    DecayOutOfRange { name: &'static str, value: f64 },
    #[error("learning rate x weight decay = 1 exactly; rollback divides by 1 - lr*decay")]
    UnitDecayProduct,
    #[error("hyper-parameter {name} = {value} must be finite and non-negative")]
    InvalidHyper { name: &'static str, value: f64 },
    #[error("second moment at index {index} is {value}; moments must start non-negative")]
    NegativeSecondMoment { index: usize, value: f64 },
    #[error("cannot roll back a state at timestamp 0; no step has happened")]
    RollbackAtZero,
}

/// What [`AdamWState::clipped_step`] did with the gradient it was handed.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum StepAction {
    /// Norm within threshold; plain step taken.
    Stepped,
    /// Norm above threshold; step taken with the gradient scaled down.
    SteppedClipped,
    /// Gradient contained NaN/Inf; no step, timestamp untouched.
    SkippedNonFinite,
}

/// Full optimizer state for one parameter shard: hyper-parameters, both
/// moment vectors, the parameters, and the step timestamp.
#[derive(Clone, PartialEq, Debug)]
pub struct AdamWState {
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub t: u32,
}

impl AdamWState {
    /// Fresh state (zero moments, timestamp 0) over the given parameters.
    pub fn new(
        gamma: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        lambda: f64,
        theta: Vec<f64>,
    ) -> Result<AdamWState, AdamWError> {
        let dim = theta.len();
        AdamWState::with_moments(gamma, beta1, beta2, epsilon, lambda, vec![0.0; dim], vec![0.0; dim], theta, 0)
    }

    /// State with explicit moments and timestamp; validates every invariant
    /// the step/rollback pair relies on.
    #[allow(clippy::too_many_arguments)]
    pub fn with_moments(
        gamma: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        lambda: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        theta: Vec<f64>,
        t: u32,
    ) -> Result<AdamWState, AdamWError> {
        for (name, value) in [("beta1", beta1), ("beta2", beta2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(AdamWError::DecayOutOfRange { name, value });
            }
        }
        for (name, value) in [("gamma", gamma), ("epsilon", epsilon), ("lambda", lambda)] {
            if !value.is_finite() || value < 0.0 {
                return Err(AdamWError::InvalidHyper { name, value });
            }
        }
        if gamma * lambda == 1.0 {
            return Err(AdamWError::UnitDecayProduct);
        }
        if let Some(index) = v.iter().position(|&x| !(x >= 0.0)) {
            return Err(AdamWError::NegativeSecondMoment { index, value: v[index] });
        }
        assert_eq!(m.len(), theta.len(), "first moment must match parameter count");
        assert_eq!(v.len(), theta.len(), "second moment must match parameter count");
        Ok(AdamWState { gamma, beta1, beta2, epsilon, lambda, m, v, theta, t })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// One in-place step: advance the timestamp, decay the moments toward the
    /// gradient, and move the parameters by decoupled weight decay plus the
    /// bias-corrected Adam direction.
    pub fn step(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.dim(), "gradient must match parameter count");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..self.dim() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            self.theta[i] = self.theta[i]
                - self.gamma * self.lambda * self.theta[i]
                - self.gamma * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }

    /// Exact inverse of [`step`](AdamWState::step) given the same gradient:
    /// recompute the bias-corrected moments from the current state, undo the
    /// parameter move, then peel the gradient back out of both moments.
    pub fn rollback(&mut self, g: &[f64]) -> Result<(), AdamWError> {
        assert_eq!(g.len(), self.dim(), "gradient must match parameter count");
        if self.t == 0 {
            return Err(AdamWError::RollbackAtZero);
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..self.dim() {
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            self.theta[i] = (self.theta[i] + self.gamma * m_hat / (v_hat.sqrt() + self.epsilon))
                / (1.0 - self.gamma * self.lambda);
            self.m[i] = (self.m[i] - (1.0 - self.beta1) * g[i]) / self.beta1;
            self.v[i] = (self.v[i] - (1.0 - self.beta2) * g[i] * g[i]) / self.beta2;
        }
        self.t -= 1;
        Ok(())
    }

    /// Step under a global norm bound: scale the gradient to the threshold
    /// when the reduced norm exceeds it, and skip entirely (timestamp
    /// untouched) when the gradient is not finite.
    pub fn clipped_step(&mut self, g: &[f64], clip_threshold: f64, global_norm: f64) -> StepAction {
        assert!(global_norm >= 0.0, "a norm cannot be negative");
        if g.iter().any(|x| !x.is_finite()) {
            return StepAction::SkippedNonFinite;
        }
        if global_norm > clip_threshold {
            let scale = clip_threshold / global_norm;
            let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
            self.step(&scaled);
            StepAction::SteppedClipped
        } else {
            self.step(g);
            StepAction::Stepped
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper() -> (f64, f64, f64, f64, f64) {
        (0.1, 0.9, 0.999, 1e-8, 0.01)
    }

    #[test]
    fn zero_gradient_only_decays_the_parameters() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut st = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![2.0, -3.0]).unwrap();
        st.step(&[0.0, 0.0]);
        assert_eq!(st.t, 1);
        assert_eq!(st.m, vec![0.0, 0.0]);
        assert_eq!(st.v, vec![0.0, 0.0]);
        assert_eq!(st.theta, vec![2.0 * (1.0 - gamma * lambda), -3.0 * (1.0 - gamma * lambda)]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // Fresh state, unit gradient: the bias corrections exactly cancel the
        // (1 - beta) factors, so both corrected moments are 1.
        let mut st = AdamWState::new(0.1, 0.9, 0.999, 1e-8, 0.0, vec![5.0]).unwrap();
        st.step(&[1.0]);
        assert!((st.m[0] - 0.1).abs() < 1e-15);
        assert!((st.v[0] - 0.001).abs() < 1e-15);
        let expected = 5.0 - 0.1 / (1.0 + 1e-8);
        assert!((st.theta[0] - expected).abs() < 1e-15, "theta {} vs {}", st.theta[0], expected);
    }

    #[test]
    fn rollback_undoes_the_latest_of_two_steps() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut st = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![1.0, 2.0, 3.0]).unwrap();
        let g1 = [0.5, -0.25, 0.125];
        let g2 = [-1.0, 2.0, -3.0];
        st.step(&g1);
        let after_one = st.clone();
        st.step(&g2);
        st.rollback(&g2).unwrap();
        assert_eq!(st.t, after_one.t);
        for i in 0..3 {
            assert!((st.theta[i] - after_one.theta[i]).abs() <= 1e-12 * after_one.theta[i].abs());
            assert!((st.m[i] - after_one.m[i]).abs() <= 1e-12 * after_one.m[i].abs().max(1.0));
            assert!((st.v[i] - after_one.v[i]).abs() <= 1e-12 * after_one.v[i].abs().max(1.0));
        }
    }

    #[test]
    fn rollback_without_a_step_is_an_error() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut st = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![1.0]).unwrap();
        assert_eq!(st.rollback(&[1.0]), Err(AdamWError::RollbackAtZero));
    }

    #[test]
    fn degenerate_hypers_are_rejected_at_construction() {
        assert!(matches!(
            AdamWState::new(0.1, 0.0, 0.999, 1e-8, 0.0, vec![1.0]),
            Err(AdamWError::DecayOutOfRange { name: "beta1", .. })
        ));
        assert!(matches!(
            AdamWState::new(0.1, 0.9, 1.0, 1e-8, 0.0, vec![1.0]),
            Err(AdamWError::DecayOutOfRange { name: "beta2", .. })
        ));
        assert!(matches!(
            AdamWState::new(2.0, 0.9, 0.999, 1e-8, 0.5, vec![1.0]),
            Err(AdamWError::UnitDecayProduct)
        ));
        assert!(matches!(
            AdamWState::with_moments(0.1, 0.9, 0.999, 1e-8, 0.0, vec![0.0], vec![-1.0], vec![1.0], 0),
            Err(AdamWError::NegativeSecondMoment { index: 0, .. })
        ));
    }

    #[test]
    fn clipping_scales_exactly_to_the_threshold_ratio() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut clipped = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![1.0, 1.0]).unwrap();
        let mut manual = clipped.clone();
        let g = [3.0, 4.0];
        // Norm 2 against threshold 1 halves the gradient.
        assert_eq!(clipped.clipped_step(&g, 1.0, 2.0), StepAction::SteppedClipped);
        manual.step(&[1.5, 2.0]);
        assert_eq!(clipped, manual);
    }

    #[test]
    fn within_threshold_clipping_is_a_plain_step() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut a = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![1.0]).unwrap();
        let mut b = a.clone();
        assert_eq!(a.clipped_step(&[0.5], 1.0, 0.5), StepAction::Stepped);
        b.step(&[0.5]);
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradients_skip_without_advancing_time() {
        let (gamma, beta1, beta2, epsilon, lambda) = hyper();
        let mut st = AdamWState::new(gamma, beta1, beta2, epsilon, lambda, vec![1.0, 2.0]).unwrap();
        let before = st.clone();
        assert_eq!(st.clipped_step(&[f64::NAN, 1.0], 1.0, 5.0), StepAction::SkippedNonFinite);
        assert_eq!(st.clipped_step(&[f64::INFINITY, 1.0], 1.0, 5.0), StepAction::SkippedNonFinite);
        assert_eq!(st, before, "a skipped update must leave the state untouched");
    }

    #[test]
    fn random_states_round_trip_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0ADA_3157);
        for _ in 0..200 {
            let dim = rng.gen_range(1..6);
            let gamma = rng.gen_range(1e-4..0.2);
            let beta1 = rng.gen_range(0.5..0.99);
            let beta2 = rng.gen_range(0.9..0.9999);
            let epsilon = rng.gen_range(1e-10..1e-6);
            let lambda = rng.gen_range(0.0..0.3);
            let t = rng.gen_range(1..100);
            let m: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(1e-8..4.0)).collect();
            let theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let st = AdamWState::with_moments(gamma, beta1, beta2, epsilon, lambda, m, v, theta, t)
                .unwrap();
            let mut walked = st.clone();
            walked.step(&g);
            walked.rollback(&g).unwrap();
            assert_eq!(walked.t, st.t);
            for i in 0..dim {
                let tol = |x: f64| 1e-12 * x.abs().max(1.0);
                assert!((walked.theta[i] - st.theta[i]).abs() <= tol(st.theta[i]));
                assert!((walked.m[i] - st.m[i]).abs() <= tol(st.m[i]));
                assert!((walked.v[i] - st.v[i]).abs() <= tol(st.v[i]));
            }
        }
    }
}
