//! Hyper-parameter ascent rules: per-parameter sign-adaptive rates for
//! batch training and ADADELTA for stochastic training.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::objective::GradientVector;

pub const RATE_MIN: f64 = 1e-10;
pub const RATE_MAX: f64 = 1e3;

/// Per-parameter learning rates that grow 2% while the gradient sign holds
/// and halve when it flips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveRateState {
    pub rates: DVector<f64>,
    pub prev_signs: Vec<i8>,
}

impl AdaptiveRateState {
    pub fn new(rates: DVector<f64>) -> Self {
        let n = rates.len();
        Self {
            rates,
            prev_signs: vec![0; n],
        }
    }

    /// Uniform initial rate for every parameter.
    pub fn uniform(n: usize, rate: f64) -> Self {
        Self::new(DVector::from_element(n, rate))
    }

    /// Ascent step Δξ = rate ∘ g, after the sign-based rate adaptation.
    /// A zero gradient component leaves its rate and records sign 0.
    pub fn step(&mut self, gradient: &GradientVector) -> DVector<f64> {
        let g = &gradient.values;
        assert_eq!(g.len(), self.rates.len());
        let mut delta = DVector::zeros(g.len());
        for j in 0..g.len() {
            let sign = if g[j] > 0.0 {
                1i8
            } else if g[j] < 0.0 {
                -1i8
            } else {
                0i8
            };
            if sign != 0 && self.prev_signs[j] != 0 {
                if sign == self.prev_signs[j] {
                    self.rates[j] *= 1.02;
                } else {
                    self.rates[j] *= 0.5;
                }
                self.rates[j] = self.rates[j].clamp(RATE_MIN, RATE_MAX);
            }
            self.prev_signs[j] = sign;
            delta[j] = self.rates[j] * g[j];
        }
        delta
    }
}

/// ADADELTA with decay ρ and stabilizer ε, ascent convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdadeltaState {
    pub accum_sq_grad: DVector<f64>,
    pub accum_sq_update: DVector<f64>,
    pub rho: f64,
    pub epsilon: f64,
}

impl AdadeltaState {
    pub fn new(n: usize, rho: f64, epsilon: f64) -> Self {
        Self {
            accum_sq_grad: DVector::zeros(n),
            accum_sq_update: DVector::zeros(n),
            rho,
            epsilon,
        }
    }

    pub fn step(&mut self, gradient: &GradientVector) -> DVector<f64> {
        let g = &gradient.values;
        assert_eq!(g.len(), self.accum_sq_grad.len());
        let mut delta = DVector::zeros(g.len());
        for j in 0..g.len() {
            self.accum_sq_grad[j] =
                self.rho * self.accum_sq_grad[j] + (1.0 - self.rho) * g[j] * g[j];
            let dx = (self.accum_sq_update[j] + self.epsilon).sqrt()
                / (self.accum_sq_grad[j] + self.epsilon).sqrt()
                * g[j];
            self.accum_sq_update[j] =
                self.rho * self.accum_sq_update[j] + (1.0 - self.rho) * dx * dx;
            delta[j] = dx;
        }
        delta
    }
}

/// Either optimizer behind one interface, for the trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum OptimizerState {
    Adaptive(AdaptiveRateState),
    Adadelta(AdadeltaState),
}

impl OptimizerState {
    pub fn step(&mut self, gradient: &GradientVector) -> DVector<f64> {
        match self {
            OptimizerState::Adaptive(s) => s.step(gradient),
            OptimizerState::Adadelta(s) => s.step(gradient),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grad(values: &[f64]) -> GradientVector {
        GradientVector {
            values: DVector::from_vec(values.to_vec()),
        }
    }

    #[test]
    fn rate_grows_two_percent_on_repeated_sign() {
        let mut st = AdaptiveRateState::uniform(1, 0.01);
        let d1 = st.step(&grad(&[1.0]));
        assert_relative_eq!(d1[0], 0.01, max_relative = 1e-15);
        let d2 = st.step(&grad(&[1.0]));
        assert_relative_eq!(d2[0], 0.01 * 1.02, max_relative = 1e-15);
    }

    #[test]
    fn rate_halves_on_sign_flip() {
        let mut st = AdaptiveRateState::uniform(1, 0.01);
        st.step(&grad(&[1.0]));
        let d = st.step(&grad(&[-1.0]));
        assert_relative_eq!(d[0], -0.005, max_relative = 1e-15);
    }

    #[test]
    fn zero_gradient_freezes_rate_and_records_zero_sign() {
        let mut st = AdaptiveRateState::uniform(1, 0.01);
        st.step(&grad(&[1.0]));
        let d = st.step(&grad(&[0.0]));
        assert_eq!(d[0], 0.0);
        assert_eq!(st.prev_signs[0], 0);
        assert_eq!(st.rates[0], 0.01);
        // sign was reset to 0, so the next step adapts nothing
        st.step(&grad(&[-1.0]));
        assert_eq!(st.rates[0], 0.01);
    }

    #[test]
    fn rate_trajectory_is_multiplicative() {
        let mut st = AdaptiveRateState::uniform(1, 0.01);
        let signs = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0];
        let mut ups = 0;
        let mut downs = 0;
        let mut prev = 0.0f64;
        for &s in &signs {
            st.step(&grad(&[s]));
            if prev != 0.0 {
                if s == prev {
                    ups += 1;
                } else {
                    downs += 1;
                }
            }
            prev = s;
        }
        let expect = 0.01 * 1.02f64.powi(ups) * 0.5f64.powi(downs);
        assert_relative_eq!(st.rates[0], expect, max_relative = 1e-13);
    }

    #[test]
    fn adadelta_first_step_value() {
        let mut st = AdadeltaState::new(1, 0.9, 1e-5);
        let d = st.step(&grad(&[1.0]));
        let expect = (1e-5f64).sqrt() / (0.1 + 1e-5f64).sqrt();
        assert_relative_eq!(d[0], expect, max_relative = 1e-12);
        assert!((d[0] - 0.0099995).abs() < 1e-6);
    }

    #[test]
    fn adadelta_zero_gradient_decays() {
        let mut st = AdadeltaState::new(1, 0.9, 1e-5);
        st.step(&grad(&[1.0]));
        let e0 = st.accum_sq_grad[0];
        for _ in 0..50 {
            let d = st.step(&grad(&[0.0]));
            assert_eq!(d[0], 0.0);
        }
        assert!(st.accum_sq_grad[0] < e0 * 0.01);
    }

    #[test]
    fn adadelta_is_scale_free() {
        let mut a = AdadeltaState::new(1, 0.9, 1e-5);
        let mut b = AdadeltaState::new(1, 0.9, 1e-5);
        let mut last_a = 0.0;
        let mut last_b = 0.0;
        for _ in 0..20 {
            last_a = a.step(&grad(&[1.0]))[0];
            last_b = b.step(&grad(&[10.0]))[0];
        }
        let ratio = (last_b / last_a).abs();
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn both_rules_preserve_ascent_direction() {
        let mut ad = AdaptiveRateState::uniform(3, 0.01);
        let mut dd = AdadeltaState::new(3, 0.9, 1e-5);
        let g = grad(&[0.3, -2.0, 0.0]);
        for _ in 0..5 {
            for d in [ad.step(&g), dd.step(&g)] {
                for j in 0..3 {
                    assert!(d[j] * g.values[j] >= 0.0);
                    if g.values[j] == 0.0 {
                        assert_eq!(d[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn state_serialization_round_trips_bit_exactly() {
        let mut st = AdaptiveRateState::uniform(4, 0.01);
        st.step(&grad(&[1.0, -1.0, 0.5, 0.0]));
        st.step(&grad(&[1.0, 1.0, -0.5, 0.2]));
        let js = serde_json::to_string(&OptimizerState::Adaptive(st.clone())).unwrap();
        match serde_json::from_str::<OptimizerState>(&js).unwrap() {
            OptimizerState::Adaptive(back) => {
                assert_eq!(back.rates, st.rates);
                assert_eq!(back.prev_signs, st.prev_signs);
            }
            _ => panic!("wrong variant"),
        }

        let mut dd = AdadeltaState::new(2, 0.9, 1e-5);
        dd.step(&grad(&[0.7, -0.1]));
        let js = serde_json::to_string(&dd).unwrap();
        let back: AdadeltaState = serde_json::from_str(&js).unwrap();
        assert_eq!(back.accum_sq_grad, dd.accum_sq_grad);
        assert_eq!(back.accum_sq_update, dd.accum_sq_update);
    }
}
