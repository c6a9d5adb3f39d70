//! Step-size sequences and averaging weights.
//!
//! The base sequence is `alpha_k = gamma / (gamma + k)`. The constrained
//! variant scales it by `1/(2 mu)` into the actual step `lambda_k`; the
//! scalar unconstrained variant scales by `1/(2 x_k^2)` so the update
//! collapses to `omega - alpha_k (omega - y/x)`.
//!
//! The weighted average over iterates uses weights proportional to `1/alpha_i`
//! (constrained) or to `beta_0 = 1, beta_k = 1/alpha_{k-1}` (scalar). Both
//! families admit an O(1) recursive update through the running normalizer `S`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Projected updates with `lambda_k = alpha_k / (2 mu)`; requires
    /// `gamma >= 2`.
    Constrained { mu: f64 },
    /// d = 1, unbounded set, `lambda_k = alpha_k / (2 x_k^2)`; requires
    /// `gamma >= 1`.
    ScalarUnconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    gamma: f64,
    kind: ScheduleKind,
}

impl StepSchedule {
    pub fn constrained(gamma: f64, mu: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 2.0) {
            return Err(Error::InvalidParameter(
                "gamma must be >= 2 for the constrained schedule".into(),
            ));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter("mu must be > 0".into()));
        }
        Ok(Self {
            gamma,
            kind: ScheduleKind::Constrained { mu },
        })
    }

    pub fn scalar_unconstrained(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return Err(Error::InvalidParameter(
                "gamma must be >= 1 for the scalar unconstrained schedule".into(),
            ));
        }
        Ok(Self {
            gamma,
            kind: ScheduleKind::ScalarUnconstrained,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn mu(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::Constrained { mu } => Some(mu),
            ScheduleKind::ScalarUnconstrained => None,
        }
    }

    /// Base sequence `gamma / (gamma + k)`; equals 1 at k = 0 and decreases
    /// strictly to 0.
    pub fn alpha(&self, k: u64) -> f64 {
        self.gamma / (self.gamma + k as f64)
    }

    /// Step size of the constrained variant: `alpha_k / (2 mu)`.
    pub fn lambda(&self, k: u64) -> Result<f64> {
        match self.kind {
            ScheduleKind::Constrained { mu } => Ok(self.alpha(k) / (2.0 * mu)),
            ScheduleKind::ScalarUnconstrained => Err(Error::WrongScheduleKind {
                required: "constrained",
            }),
        }
    }

    /// Step size of the scalar variant: `alpha_k / (2 x^2)`. The division
    /// makes x = 0 undefined; callers skip such samples.
    pub fn lambda_scalar(&self, k: u64, x: f64) -> Result<f64> {
        match self.kind {
            ScheduleKind::ScalarUnconstrained => {
                if x == 0.0 {
                    return Err(Error::ZeroFeature);
                }
                Ok(self.alpha(k) / (2.0 * x * x))
            }
            ScheduleKind::Constrained { .. } => Err(Error::WrongScheduleKind {
                required: "scalar_unconstrained",
            }),
        }
    }

    /// Unnormalized averaging weight of iterate index `k`: `1/alpha_k` for the
    /// constrained family, `beta_0 = 1` and `beta_k = 1/alpha_{k-1}` for the
    /// scalar family.
    pub fn weight_increment(&self, k: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constrained { .. } => (self.gamma + k as f64) / self.gamma,
            ScheduleKind::ScalarUnconstrained => {
                if k == 0 {
                    1.0
                } else {
                    (self.gamma + (k - 1) as f64) / self.gamma
                }
            }
        }
    }

    /// Normalizer state at index 0, where the average equals the initial
    /// iterate.
    pub fn initial_weights(&self) -> AverageWeights {
        AverageWeights {
            s: self.weight_increment(0),
            k: 0,
        }
    }
}

/// Running normalizer `S_k` (the sum of unnormalized weights up to index k)
/// together with the index it refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageWeights {
    s: f64,
    k: u64,
}

impl AverageWeights {
    pub fn normalizer(&self) -> f64 {
        self.s
    }

    pub fn index(&self) -> u64 {
        self.k
    }

    /// Advances the normalizer one index and returns the convex mixing
    /// coefficient for the new iterate, so that
    /// `avg_k = (1 - mix) * avg_{k-1} + mix * omega_k`.
    ///
    /// The returned mix equals the normalized final weight `beta_{k,k}`
    /// exactly (it is computed as `w_k / S_k`, not via `1 - S_{k-1}/S_k`).
    pub fn advance(self, schedule: &StepSchedule) -> (Self, f64) {
        let k = self.k + 1;
        let w = schedule.weight_increment(k);
        let s = self.s + w;
        (Self { s, k }, w / s)
    }
}

/// Scans `alpha_k^2 >= 1 / sum_{r=0..k} (1/alpha_r)` and returns the first
/// violating index, if any. The inequality is what lets the squared step
/// absorb the averaging normalizer; it holds for every k when `gamma >= 2`
/// and fails at a finite k for any smaller gamma.
pub fn step_inequality_violation(gamma: f64, k_max: u64) -> Option<u64> {
    let mut inv_alpha_sum = 0.0;
    for k in 0..=k_max {
        let alpha = gamma / (gamma + k as f64);
        inv_alpha_sum += 1.0 / alpha;
        if alpha * alpha < 1.0 / inv_alpha_sum {
            return Some(k);
        }
    }
    None
}

/// Verifies the step inequality for every `k <= k_max`. Errors when
/// `gamma < 2` (the precondition under which the inequality is guaranteed);
/// use [`step_inequality_violation`] directly to scan outside it.
pub fn check_step_inequality(gamma: f64, k_max: u64) -> Result<bool> {
    if !(gamma.is_finite() && gamma >= 2.0) {
        return Err(Error::InvalidParameter(
            "gamma must be >= 2 for the step inequality check".into(),
        ));
    }
    Ok(step_inequality_violation(gamma, k_max).is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_values() {
        let s = StepSchedule::constrained(2.0, 1.0).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.alpha(2), 0.5);
        let s10 = StepSchedule::constrained(10.0, 1.0).unwrap();
        assert_relative_eq!(s10.alpha(90), 0.1);
    }

    #[test]
    fn alpha_strictly_decreasing_to_zero() {
        let s = StepSchedule::constrained(3.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..1000 {
            let a = s.alpha(k);
            assert!(a < prev);
            prev = a;
        }
        assert!(s.alpha(1_000_000_000) < 1e-8);
    }

    #[test]
    fn lambda_constrained_values() {
        assert_eq!(
            StepSchedule::constrained(2.0, 1.0).unwrap().lambda(0).unwrap(),
            0.5
        );
        assert_eq!(
            StepSchedule::constrained(2.0, 0.5).unwrap().lambda(2).unwrap(),
            0.5
        );
        assert_eq!(
            StepSchedule::constrained(2.0, 2.0).unwrap().lambda(0).unwrap(),
            0.25
        );
    }

    #[test]
    fn lambda_wrong_kind_errors() {
        let scalar = StepSchedule::scalar_unconstrained(1.0).unwrap();
        assert!(scalar.lambda(0).is_err());
        let constrained = StepSchedule::constrained(2.0, 1.0).unwrap();
        assert!(constrained.lambda_scalar(0, 1.0).is_err());
    }

    #[test]
    fn lambda_scalar_values() {
        let s = StepSchedule::scalar_unconstrained(1.0).unwrap();
        assert_eq!(s.lambda_scalar(0, 1.0).unwrap(), 0.5);
        assert_eq!(s.lambda_scalar(1, 1.0).unwrap(), 0.25);
        assert_eq!(s.lambda_scalar(0, 2.0).unwrap(), 0.125);
        assert!(matches!(
            s.lambda_scalar(0, 0.0),
            Err(Error::ZeroFeature)
        ));
    }

    #[test]
    fn advance_weights_constrained() {
        let s = StepSchedule::constrained(2.0, 1.0).unwrap();
        let w0 = s.initial_weights();
        assert_eq!(w0.normalizer(), 1.0);
        let (w1, mix1) = w0.advance(&s);
        assert_relative_eq!(w1.normalizer(), 2.5);
        assert_relative_eq!(mix1, 0.6);
        let (w2, mix2) = w1.advance(&s);
        assert_relative_eq!(w2.normalizer(), 4.5);
        assert_relative_eq!(mix2, 2.0 / 4.5);
    }

    #[test]
    fn advance_weights_scalar() {
        let s = StepSchedule::scalar_unconstrained(1.0).unwrap();
        let w0 = s.initial_weights();
        assert_eq!(w0.normalizer(), 1.0);
        let (w1, mix1) = w0.advance(&s);
        assert_eq!(w1.normalizer(), 2.0);
        assert_eq!(mix1, 0.5);
    }

    #[test]
    fn mix_equals_final_weight_exactly() {
        for gamma in [2.0, 3.0, 10.0] {
            let s = StepSchedule::constrained(gamma, 1.0).unwrap();
            let mut w = s.initial_weights();
            for _ in 0..200 {
                let (next, mix) = w.advance(&s);
                let beta_kk = s.weight_increment(next.index()) / next.normalizer();
                assert_eq!(mix, beta_kk);
                w = next;
            }
        }
    }

    #[test]
    fn reconstructed_weights_sum_to_one() {
        let schedules: Vec<StepSchedule> = [2.0, 3.0, 10.0]
            .into_iter()
            .map(|g| StepSchedule::constrained(g, 1.0).unwrap())
            .chain(
                [1.0, 2.0, 10.0]
                    .into_iter()
                    .map(|g| StepSchedule::scalar_unconstrained(g).unwrap()),
            )
            .collect();
        for s in schedules {
            let mut w = s.initial_weights();
            for _ in 0..10_000 {
                w = w.advance(&s).0;
            }
            let k = w.index();
            // Direct sum of the unnormalized weights, accumulated
            // independently of the recursion.
            let direct: f64 = (0..=k).map(|i| s.weight_increment(i)).sum();
            let total: f64 = (0..=k).map(|i| s.weight_increment(i) / w.normalizer()).sum();
            assert_relative_eq!(direct, w.normalizer(), max_relative = 1e-12);
            assert_relative_eq!(total, 1.0, max_relative = 1e-12);
            // Weights are nonnegative (spot-check endpoints).
            assert!(s.weight_increment(0) / w.normalizer() >= 0.0);
            assert!(s.weight_increment(k) / w.normalizer() >= 0.0);
        }
    }

    #[test]
    fn normalizer_strictly_increasing() {
        let s = StepSchedule::scalar_unconstrained(2.0).unwrap();
        let mut w = s.initial_weights();
        for _ in 0..1000 {
            let (next, mix) = w.advance(&s);
            assert!(next.normalizer() > w.normalizer());
            assert!(mix > 0.0 && mix <= 1.0);
            w = next;
        }
    }

    #[test]
    fn step_inequality_detail_at_small_k() {
        // gamma = 2, k = 1: alpha_1^2 = 4/9 >= 1 / (1 + 1.5) = 0.4.
        assert!((2.0f64 / 3.0).powi(2) >= 1.0 / 2.5);
        assert_eq!(step_inequality_violation(2.0, 1), None);
    }

    #[test]
    fn step_inequality_holds_for_valid_gammas() {
        for gamma in [2.0, 2.5, 3.0, 10.0] {
            assert!(check_step_inequality(gamma, 10_000).unwrap());
        }
    }

    #[test]
    fn step_inequality_fails_below_two() {
        assert!(check_step_inequality(1.5, 100).is_err());
        let first = step_inequality_violation(1.5, 100);
        assert!(first.is_some());
        // gamma = 1.9 fails once k(1.52 - 0.1 k) goes negative, at k = 16.
        assert_eq!(step_inequality_violation(1.9, 10_000), Some(16));
    }

    #[test]
    fn constructor_preconditions() {
        assert!(StepSchedule::constrained(1.9, 1.0).is_err());
        assert!(StepSchedule::constrained(2.0, 0.0).is_err());
        assert!(StepSchedule::scalar_unconstrained(0.9).is_err());
        assert!(StepSchedule::scalar_unconstrained(1.0).is_ok());
    }
}
