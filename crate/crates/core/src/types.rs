//! Domain types shared by every module: dense vectors, stream samples,
//! convex constraint sets, and the regression problem with exact
//! excess-risk evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense d-dimensional real vector. Length is fixed at construction and all
/// entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector {
    coords: Vec<f64>,
}

impl Vector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter(
                "vector dimension must be at least 1".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("vector coordinates".into()));
        }
        Ok(Self { coords })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            coords: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Squared Euclidean distance to `other`.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let coords = Vec::<f64>::deserialize(deserializer)?;
        Vector::new(coords).map_err(serde::de::Error::custom)
    }
}

/// One observation from the stream: features `x` and response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vector, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::NonFinite("sample response".into()));
        }
        Ok(Self { x, y })
    }
}

/// Convex constraint set for the parameter iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    Unbounded,
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
}

impl ConstraintSet {
    pub fn new_box(lower: Vector, upper: Vector) -> Result<Self> {
        let set = ConstraintSet::Box { lower, upper };
        set.validate()?;
        Ok(set)
    }

    pub fn new_ball(center: Vector, radius: f64) -> Result<Self> {
        let set = ConstraintSet::Ball { center, radius };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::Unbounded => Ok(()),
            ConstraintSet::Box { lower, upper } => {
                lower.check_dim(upper.dim()).map_err(|_| {
                    Error::InvalidParameter("box bounds must have equal dimensions".into())
                })?;
                let ok = lower
                    .as_slice()
                    .iter()
                    .zip(upper.as_slice())
                    .all(|(lo, hi)| lo < hi);
                if !ok {
                    return Err(Error::InvalidParameter(
                        "box requires lower[i] < upper[i] for every coordinate".into(),
                    ));
                }
                Ok(())
            }
            ConstraintSet::Ball { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidParameter("ball radius must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, ConstraintSet::Unbounded)
    }

    /// Dimension pinned by the set, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConstraintSet::Unbounded => None,
            ConstraintSet::Box { lower, .. } => Some(lower.dim()),
            ConstraintSet::Ball { center, .. } => Some(center.dim()),
        }
    }

    /// Euclidean projection onto the set. Boxes clamp per coordinate, balls
    /// rescale radially, the unbounded set is the identity.
    pub fn project(&self, v: &Vector) -> Vector {
        let mut out = v.clone();
        self.project_in_place(&mut out);
        out
    }

    pub(crate) fn project_in_place(&self, v: &mut Vector) {
        match self {
            ConstraintSet::Unbounded => {}
            ConstraintSet::Box { lower, upper } => {
                for ((c, lo), hi) in v
                    .as_mut_slice()
                    .iter_mut()
                    .zip(lower.as_slice())
                    .zip(upper.as_slice())
                {
                    *c = c.clamp(*lo, *hi);
                }
            }
            ConstraintSet::Ball { center, radius } => {
                let r2 = radius * radius;
                let dist_sq = v.distance_sq(center);
                if dist_sq <= r2 {
                    return;
                }
                let mut scale = radius / dist_sq.sqrt();
                let offset: Vec<f64> = v
                    .as_slice()
                    .iter()
                    .zip(center.as_slice())
                    .map(|(c, ctr)| c - ctr)
                    .collect();
                // Rounding can land the rescaled point an ulp outside the
                // boundary; shrink until membership holds under the same
                // arithmetic, so projecting twice is exactly a no-op.
                for _ in 0..8 {
                    for ((c, ctr), off) in v
                        .as_mut_slice()
                        .iter_mut()
                        .zip(center.as_slice())
                        .zip(&offset)
                    {
                        *c = ctr + off * scale;
                    }
                    if v.distance_sq(center) <= r2 {
                        return;
                    }
                    scale *= 1.0 - 2.0 * f64::EPSILON;
                }
            }
        }
    }

    /// Membership up to an absolute slack `tol` per coordinate (box) or on
    /// the radius (ball).
    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        match self {
            ConstraintSet::Unbounded => true,
            ConstraintSet::Box { lower, upper } => v
                .as_slice()
                .iter()
                .zip(lower.as_slice())
                .zip(upper.as_slice())
                .all(|((c, lo), hi)| *c >= lo - tol && *c <= hi + tol),
            ConstraintSet::Ball { center, radius } => {
                v.distance_sq(center).sqrt() <= radius + tol
            }
        }
    }

    pub fn strictly_contains(&self, v: &Vector) -> bool {
        match self {
            ConstraintSet::Unbounded => true,
            ConstraintSet::Box { lower, upper } => v
                .as_slice()
                .iter()
                .zip(lower.as_slice())
                .zip(upper.as_slice())
                .all(|((c, lo), hi)| *c > *lo && *c < *hi),
            ConstraintSet::Ball { center, radius } => v.distance_sq(center) < radius * radius,
        }
    }

    /// sup over the set of the squared distance to `from`; `None` when the
    /// set is unbounded. Boxes attain the supremum at a corner, balls on the
    /// far side of the boundary.
    pub fn max_sq_distance(&self, from: &Vector) -> Option<f64> {
        match self {
            ConstraintSet::Unbounded => None,
            ConstraintSet::Box { lower, upper } => Some(
                from.as_slice()
                    .iter()
                    .zip(lower.as_slice())
                    .zip(upper.as_slice())
                    .map(|((f, lo), hi)| {
                        let a = f - lo;
                        let b = hi - f;
                        (a * a).max(b * b)
                    })
                    .sum(),
            ),
            ConstraintSet::Ball { center, radius } => {
                let reach = radius + center.distance_sq(from).sqrt();
                Some(reach * reach)
            }
        }
    }
}

/// Synthetic regression problem with known correlation matrix and true
/// parameter, so the excess risk is available in closed form.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    d: usize,
    omega_star: Vector,
    sigma2: f64,
    correlation: DMatrix<f64>,
    mu: f64,
    constraint: ConstraintSet,
}

impl RegressionProblem {
    /// Builds and validates the problem description. `mu` is supplied by the
    /// caller and checked numerically against the spectrum of `correlation`:
    /// it must be positive and no larger than the smallest eigenvalue.
    pub fn new(
        omega_star: Vector,
        sigma2: f64,
        correlation: DMatrix<f64>,
        mu: f64,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        let d = omega_star.dim();
        if correlation.nrows() != d || correlation.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: correlation.nrows(),
            });
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise variance sigma2 must be finite and >= 0".into(),
            ));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter("mu must be > 0".into()));
        }
        let scale = correlation.amax().max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidParameter(
                        "correlation matrix must be symmetric".into(),
                    ));
                }
            }
        }
        let eigen = correlation.clone().symmetric_eigen();
        let lambda_min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lambda_min <= 0.0 {
            return Err(Error::InvalidParameter(
                "correlation matrix must be positive definite".into(),
            ));
        }
        if mu > lambda_min * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mu = {mu} exceeds the smallest correlation eigenvalue {lambda_min:.6e}"
            )));
        }
        constraint.validate()?;
        if let Some(set_dim) = constraint.dim() {
            if set_dim != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: set_dim,
                });
            }
        }
        if constraint.is_bounded() && !constraint.strictly_contains(&omega_star) {
            return Err(Error::InvalidParameter(
                "omega_star must lie strictly inside a bounded constraint set".into(),
            ));
        }
        Ok(Self {
            d,
            omega_star,
            sigma2,
            correlation,
            mu,
            constraint,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn omega_star(&self) -> &Vector {
        &self.omega_star
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    /// Exact excess risk `(omega - omega_star)^T R_x (omega - omega_star)`.
    /// Zero exactly at the minimizer since `R_x` is invertible.
    pub fn excess_risk(&self, omega: &Vector) -> Result<f64> {
        omega.check_dim(self.d)?;
        let w = omega.as_slice();
        let s = self.omega_star.as_slice();
        let mut total = 0.0;
        for i in 0..self.d {
            let ri = w[i] - s[i];
            let mut row = 0.0;
            for j in 0..self.d {
                row += self.correlation[(i, j)] * (w[j] - s[j]);
            }
            total += ri * row;
        }
        Ok(total)
    }
}

/// Mean squared residual `(1/n) sum (x_i^T omega - y_i)^2` over a sample
/// list; the evaluation metric when the true problem is unknown.
pub fn empirical_risk(samples: &[Sample], omega: &Vector) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut total = 0.0;
    for s in samples {
        s.x.check_dim(omega.dim())?;
        let r = s.x.dot(omega) - s.y;
        total += r * r;
    }
    Ok(total / samples.len() as f64)
}

/// Mean absolute prediction error `(1/n) sum |x_i^T omega - y_i|`.
pub fn mean_abs_error(samples: &[Sample], omega: &Vector) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut total = 0.0;
    for s in samples {
        s.x.check_dim(omega.dim())?;
        total += (s.x.dot(omega) - s.y).abs();
    }
    Ok(total / samples.len() as f64)
}
