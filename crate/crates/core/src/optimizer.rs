//! Streaming methods: projected SGD (PSGD), projected SGD with constant step
//! and uniform averaging (PSGD-A), and projected SGD with weighted averaging
//! (PSGD-WA), plus the d = 1 unconstrained fast path.
//!
//! The projected update is implemented in closed form: a gradient step
//! followed by Euclidean projection, which solves the per-iteration proximal
//! subproblem exactly.

use crate::error::{Error, Result};
use crate::schedule::{AverageWeights, ScheduleKind, StepSchedule};
use crate::types::{ConstraintSet, Sample, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Projected SGD; the reported estimate is the iterate itself.
    Psgd,
    /// Projected SGD with a constant step and a uniform running average over
    /// all iterates (including the initial point).
    PsgdA { constant_step: f64 },
    /// Projected SGD with the weighted iterate average as the reported
    /// estimate.
    PsgdWa,
}

/// State of one streaming run: current iterate, running average, averaging
/// normalizer, and the iteration counter. Values move through `step`; nothing
/// is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    method: Method,
    omega: Vector,
    omega_bar: Vector,
    weights: AverageWeights,
    k: u64,
    skipped: u64,
}

/// Single-sample gradient estimate `2 x (x^T omega - y)`.
pub fn gradient_estimate(omega: &Vector, sample: &Sample) -> Result<Vector> {
    sample.x.check_dim(omega.dim())?;
    let r = sample.x.dot(omega) - sample.y;
    let coords = sample.x.as_slice().iter().map(|xi| 2.0 * xi * r).collect();
    Vector::new(coords)
}

impl OptimizerState {
    pub fn new(method: Method, omega0: Vector, schedule: &StepSchedule) -> Result<Self> {
        if let Method::PsgdA { constant_step } = method {
            if !(constant_step.is_finite() && constant_step > 0.0) {
                return Err(Error::InvalidParameter(
                    "PSGD-A constant step must be > 0".into(),
                ));
            }
        }
        Ok(Self {
            method,
            omega_bar: omega0.clone(),
            omega: omega0,
            weights: schedule.initial_weights(),
            k: 0,
            skipped: 0,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn omega(&self) -> &Vector {
        &self.omega
    }

    pub fn omega_bar(&self) -> &Vector {
        match self.method {
            Method::Psgd => &self.omega,
            _ => &self.omega_bar,
        }
    }

    pub fn weights(&self) -> AverageWeights {
        self.weights
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Samples skipped by the scalar path because x was exactly zero.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// The estimate the method reports: the average for PSGD-A and PSGD-WA,
    /// the raw iterate for PSGD.
    pub fn estimate(&self) -> &Vector {
        match self.method {
            Method::Psgd => &self.omega,
            _ => &self.omega_bar,
        }
    }

    /// One projected update `omega <- P(omega - lambda_k g_k)` followed by the
    /// method's averaging rule. PSGD and PSGD-WA take `lambda_k` from the
    /// constrained schedule; PSGD-A uses its constant step.
    pub fn step(
        mut self,
        sample: &Sample,
        schedule: &StepSchedule,
        set: &ConstraintSet,
    ) -> Result<Self> {
        sample.x.check_dim(self.omega.dim())?;
        let lambda = match self.method {
            Method::Psgd | Method::PsgdWa => schedule.lambda(self.k)?,
            Method::PsgdA { constant_step } => constant_step,
        };
        let residual = sample.x.dot(&self.omega) - sample.y;
        let scale = 2.0 * lambda * residual;
        for (w, xi) in self
            .omega
            .as_mut_slice()
            .iter_mut()
            .zip(sample.x.as_slice())
        {
            *w -= scale * xi;
        }
        set.project_in_place(&mut self.omega);
        self.k += 1;
        self.advance_average(schedule);
        Ok(self)
    }

    /// d = 1 unconstrained update `omega <- omega - alpha_k (omega - y/x)`,
    /// with the scalar-family averaging weights. A sample with x = 0 is
    /// skipped entirely: no iterate update, no weight advance, only the skip
    /// counter moves.
    pub fn step_scalar(mut self, sample: &Sample, schedule: &StepSchedule) -> Result<Self> {
        if !matches!(schedule.kind(), ScheduleKind::ScalarUnconstrained) {
            return Err(Error::WrongScheduleKind {
                required: "scalar_unconstrained",
            });
        }
        sample.x.check_dim(1)?;
        self.omega.check_dim(1)?;
        if let Method::PsgdA { constant_step } = self.method {
            // Constant-step SGD needs no division by x; process every sample.
            let x = sample.x.as_slice()[0];
            let w = self.omega.as_mut_slice();
            w[0] -= constant_step * 2.0 * x * (x * w[0] - sample.y);
            self.k += 1;
            self.advance_average(schedule);
            return Ok(self);
        }
        let x = sample.x.as_slice()[0];
        if x == 0.0 {
            self.skipped += 1;
            return Ok(self);
        }
        let alpha = schedule.alpha(self.k);
        let w = self.omega.as_mut_slice();
        w[0] -= alpha * (w[0] - sample.y / x);
        self.k += 1;
        self.advance_average(schedule);
        Ok(self)
    }

    fn advance_average(&mut self, schedule: &StepSchedule) {
        match self.method {
            Method::Psgd => {}
            Method::PsgdA { .. } => {
                // Uniform average over omega_0..omega_k (k+1 points before
                // this update landed, k+2 after).
                let n_prev = self.k as f64; // k was already incremented
                let mix = 1.0 / (n_prev + 1.0);
                for (b, w) in self
                    .omega_bar
                    .as_mut_slice()
                    .iter_mut()
                    .zip(self.omega.as_slice())
                {
                    *b = (1.0 - mix) * *b + mix * *w;
                }
            }
            Method::PsgdWa => {
                let (weights, mix) = self.weights.advance(schedule);
                self.weights = weights;
                for (b, w) in self
                    .omega_bar
                    .as_mut_slice()
                    .iter_mut()
                    .zip(self.omega.as_slice())
                {
                    *b = (1.0 - mix) * *b + mix * *w;
                }
            }
        }
    }
}

/// Default initial point: the projection of the origin onto the set.
pub fn default_initial_point(set: &ConstraintSet, d: usize) -> Vector {
    set.project(&Vector::zeros(d))
}

/// Drives a method over a sample stream for `n_steps` updates and records the
/// reported estimate at every checkpoint index (1-based step counts).
/// Dispatches to the scalar path when the schedule is scalar-unconstrained.
pub fn run<I: Iterator<Item = Sample>>(
    mut stream: I,
    method: Method,
    schedule: &StepSchedule,
    set: &ConstraintSet,
    omega0: Option<Vector>,
    n_steps: u64,
    checkpoints: &[u64],
) -> Result<Vec<(u64, Vector)>> {
    if n_steps < 1 {
        return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
    }
    validate_checkpoints(checkpoints, n_steps)?;
    let scalar = matches!(schedule.kind(), ScheduleKind::ScalarUnconstrained);

    let mut first = None;
    let omega0 = match omega0 {
        Some(v) => v,
        None => {
            // Infer the dimension from the set, or from the first sample when
            // the set is unbounded.
            match set.dim() {
                Some(d) => default_initial_point(set, d),
                None => {
                    let s = stream.next().ok_or(Error::StreamExhausted {
                        needed: n_steps,
                        got: 0,
                    })?;
                    let d = s.x.dim();
                    first = Some(s);
                    default_initial_point(set, d)
                }
            }
        }
    };

    let mut state = OptimizerState::new(method, omega0, schedule)?;
    let mut trajectory = Vec::with_capacity(checkpoints.len());
    let mut next_checkpoint = checkpoints.iter().copied().peekable();
    for step_idx in 1..=n_steps {
        let sample = match first.take() {
            Some(s) => s,
            None => stream.next().ok_or(Error::StreamExhausted {
                needed: n_steps,
                got: step_idx - 1,
            })?,
        };
        state = if scalar {
            state.step_scalar(&sample, schedule)?
        } else {
            state.step(&sample, schedule, set)?
        };
        if next_checkpoint.peek() == Some(&step_idx) {
            next_checkpoint.next();
            trajectory.push((step_idx, state.estimate().clone()));
        }
    }
    Ok(trajectory)
}

pub(crate) fn validate_checkpoints(checkpoints: &[u64], n_steps: u64) -> Result<()> {
    let mut prev = 0;
    for &c in checkpoints {
        if c <= prev {
            return Err(Error::InvalidParameter(
                "checkpoints must be strictly increasing and >= 1".into(),
            ));
        }
        if c > n_steps {
            return Err(Error::InvalidParameter(format!(
                "checkpoint {c} exceeds n_steps = {n_steps}"
            )));
        }
        prev = c;
    }
    Ok(())
}
