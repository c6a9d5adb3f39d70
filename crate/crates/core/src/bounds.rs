//! Closed-form evaluation of the finite-sample error bounds and the
//! ERM-relative error ratio, with direct numeric verification of the
//! inequalities the bounds rest on.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::data::{Covariance, SyntheticSpec};
use crate::error::{Error, Result};
use crate::types::Sample;

/// Matrix norm used for the sample second moment `E[||x x^T||^2]`.
///
/// For a rank-one outer product both norms coincide with `||x||^2`
/// (the Frobenius norm is the root of the single squared singular value), so
/// the choice is recorded for transparency but cannot change any number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixNorm {
    Frobenius,
    Spectral,
}

/// The two feature moments entering the bounds: `E[||x x^T||^2]` and
/// `E[||x||^2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    /// `E[||x x^T||^2]`; equals `E[||x||^4]` for either supported norm.
    pub exx_norm2: f64,
    /// `E[||x||^2]`.
    pub ex_norm2: f64,
}

impl MomentEstimates {
    /// Exact moments for the supported Gaussian (and fixed) designs, via the
    /// fourth-moment identities for independent normals:
    /// `E[||x||^4] = 2 sum v_i^2 + (sum v_i)^2` for `x ~ N(0, diag(v))`.
    pub fn analytic(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let (ex_norm2, exx_norm2) = match &spec.covariance {
            Covariance::Identity => {
                let d = spec.d as f64;
                (d, d * (d + 2.0))
            }
            Covariance::Diagonal { values } => {
                let trace: f64 = values.iter().sum();
                let sq: f64 = values.iter().map(|v| v * v).sum();
                (trace, 2.0 * sq + trace * trace)
            }
            Covariance::FixedX { values } => {
                let norm2: f64 = values.iter().map(|v| v * v).sum();
                (norm2, norm2 * norm2)
            }
        };
        Ok(Self {
            exx_norm2,
            ex_norm2,
        })
    }

    /// Monte-Carlo moments from `n` stream samples.
    pub fn empirical<I: Iterator<Item = Sample>>(
        samples: I,
        n: usize,
        norm: MatrixNorm,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let mut ex = 0.0;
        let mut exx = 0.0;
        let mut seen = 0usize;
        for sample in samples.take(n) {
            let norm_sq = sample.x.norm_sq();
            ex += norm_sq;
            exx += sq_outer_product_norm(norm_sq, norm);
            seen += 1;
        }
        if seen < n {
            return Err(Error::StreamExhausted {
                needed: n as u64,
                got: seen as u64,
            });
        }
        Ok(Self {
            exx_norm2: exx / n as f64,
            ex_norm2: ex / n as f64,
        })
    }
}

/// `||x x^T||^2` for the requested norm, given `||x||^2`. The outer product
/// has the single singular value `||x||^2`, so Frobenius and spectral agree.
fn sq_outer_product_norm(x_norm_sq: f64, norm: MatrixNorm) -> f64 {
    match norm {
        MatrixNorm::Frobenius | MatrixNorm::Spectral => x_norm_sq * x_norm_sq,
    }
}

/// Bound `C^2 = 4 e_max d E[||x x^T||^2] + 4 sigma^2 E[||x||^2]` on the
/// second moment of the gradient estimate. `e_max` is the supremum of the
/// squared distance to the solution over the constraint set; it must be
/// finite, so an unbounded set has no such constant.
pub fn gradient_second_moment_bound(
    e_max: f64,
    d: usize,
    moments: &MomentEstimates,
    sigma2: f64,
) -> Result<f64> {
    if !e_max.is_finite() || e_max < 0.0 {
        return Err(Error::InvalidParameter(
            "e_max must be finite and >= 0 (bounded constraint set required)".into(),
        ));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be >= 1".into()));
    }
    Ok(4.0 * e_max * d as f64 * moments.exx_norm2 + 4.0 * sigma2 * moments.ex_norm2)
}

/// Finite-sample bound on the excess risk of the weighted average after k
/// steps of the constrained schedule:
///
/// `(log(k+1)+1) gamma^2 E[||x x^T||^2] C^2 / (mu^2 (gamma+k)^2)
///  + (k+1) gamma^2 E[||x||^2] sigma^2 / (mu (gamma+k)^2)`.
///
/// The first term carries the constraint-set diameter and decays like
/// `log k / k^2`; the noise term dominates and decays like `1/k`.
pub fn averaged_excess_risk_bound(
    k: u64,
    gamma: f64,
    mu: f64,
    moments: &MomentEstimates,
    c2: f64,
    sigma2: f64,
) -> f64 {
    let kf = k as f64;
    let denom = (gamma + kf) * (gamma + kf);
    let log_term = ((kf + 1.0).ln() + 1.0) * gamma * gamma * moments.exx_norm2 * c2
        / (mu * mu * denom);
    let noise_term = (kf + 1.0) * gamma * gamma * moments.ex_norm2 * sigma2 / (mu * denom);
    log_term + noise_term
}

/// Bound `C^2 / ((k+1) mu)` on the squared error of the raw iterate.
pub fn iterate_error_bound(k: u64, c2: f64, mu: f64) -> f64 {
    c2 / ((k as f64 + 1.0) * mu)
}

/// Leading term `4 gamma^2 sigma^2 E[x^2] E[1/x^2] / (3k)` of the scalar
/// unconstrained excess-risk bound; the `O(k^-2)` remainder is not
/// quantified and is reported separately by callers that need it.
pub fn scalar_risk_leading_term(
    k: u64,
    gamma: f64,
    sigma2: f64,
    ex2: f64,
    einv_x2: f64,
) -> f64 {
    debug_assert!(k >= 1);
    4.0 * gamma * gamma * sigma2 * ex2 * einv_x2 / (3.0 * k as f64)
}

/// Verifies, by direct evaluation of the contraction products
/// `M_{i+1,j} = beta_j prod_{r=i+2..j} (1 - alpha_{r-1})`, that
/// `sum_{j=i+1..k} M_{i+1,j} <= (i + gamma)(k - i) / gamma` for every
/// `0 <= i < k`. This is the mass bound that controls how much late iterates
/// can amplify early noise in the scalar weighted average.
pub fn check_contraction_sum_bound(gamma: f64, k: u64) -> Result<bool> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::InvalidParameter(
            "gamma must be >= 1 for the contraction sum bound".into(),
        ));
    }
    if k == 0 {
        return Ok(true);
    }
    for i in 0..k {
        let mut contraction = 1.0; // empty product at j = i+1
        let mut sum = 0.0;
        for j in (i + 1)..=k {
            if j > i + 1 {
                // multiply in (1 - alpha_{j-1}) = (j-1) / (gamma + j - 1)
                let m = (j - 1) as f64;
                contraction *= m / (gamma + m);
            }
            let beta_j = if j == 0 {
                1.0
            } else {
                (gamma + (j - 1) as f64) / gamma
            };
            sum += beta_j * contraction;
        }
        let bound = (i as f64 + gamma) * ((k - i) as f64) / gamma;
        if sum > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exact-arithmetic version of [`check_contraction_sum_bound`] over the
/// rationals, for a rational `gamma = gamma_num / gamma_den`. Cross-checks
/// the floating-point scan on small k.
pub fn contraction_sum_bound_exact(gamma_num: i64, gamma_den: i64, k: u64) -> Result<bool> {
    if gamma_den <= 0 || gamma_num < gamma_den {
        return Err(Error::InvalidParameter(
            "exact check requires rational gamma >= 1".into(),
        ));
    }
    let gamma = BigRational::new(BigInt::from(gamma_num), BigInt::from(gamma_den));
    let big = |v: u64| BigRational::from_integer(BigInt::from(v));
    for i in 0..k {
        let mut contraction = BigRational::one();
        let mut sum = BigRational::zero();
        for j in (i + 1)..=k {
            if j > i + 1 {
                let m = big(j - 1);
                contraction *= m.clone() / (gamma.clone() + m);
            }
            let beta_j = if j == 0 {
                BigRational::one()
            } else {
                (gamma.clone() + big(j - 1)) / gamma.clone()
            };
            sum += beta_j * contraction.clone();
        }
        let bound = (big(i) + gamma.clone()) * big(k - i) / gamma.clone();
        if sum > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Mean, over the last `tail_fraction` of aligned checkpoints, of the ratio
/// between a method's error and the ERM baseline's. Errors when the baseline
/// is missing or nonpositive anywhere on the tail.
pub fn erm_error_ratio(
    method_errors: &[f64],
    erm_errors: &[Option<f64>],
    tail_fraction: f64,
) -> Result<f64> {
    if method_errors.len() != erm_errors.len() {
        return Err(Error::DimensionMismatch {
            expected: method_errors.len(),
            found: erm_errors.len(),
        });
    }
    if method_errors.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidParameter(
            "tail_fraction must lie in (0, 1)".into(),
        ));
    }
    let n = method_errors.len();
    let n_tail = ((n as f64 * tail_fraction).ceil() as usize).clamp(1, n);
    let start = n - n_tail;
    let mut acc = 0.0;
    for idx in start..n {
        let erm = erm_errors[idx].ok_or(Error::MissingTailBaseline { index: idx })?;
        if !(erm > 0.0) {
            return Err(Error::MissingTailBaseline { index: idx });
        }
        acc += method_errors[idx] / erm;
    }
    Ok(acc / n_tail as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vector;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn identity_spec(d: usize) -> SyntheticSpec {
        SyntheticSpec {
            d,
            omega_star: Vector::new(vec![1.0; d]).unwrap(),
            sigma2: 0.0,
            covariance: Covariance::Identity,
            seed: 0,
        }
    }

    #[test]
    fn gradient_second_moment_examples() {
        let unit = MomentEstimates {
            exx_norm2: 1.0,
            ex_norm2: 1.0,
        };
        assert_eq!(
            gradient_second_moment_bound(1.0, 1, &unit, 0.0).unwrap(),
            4.0
        );
        assert_eq!(
            gradient_second_moment_bound(0.0, 1, &unit, 1.0).unwrap(),
            4.0
        );
        let m = MomentEstimates {
            exx_norm2: 3.0,
            ex_norm2: 2.0,
        };
        assert_eq!(
            gradient_second_moment_bound(2.0, 2, &m, 0.5).unwrap(),
            52.0
        );
        assert!(gradient_second_moment_bound(f64::INFINITY, 2, &m, 0.5).is_err());
    }

    #[test]
    fn averaged_bound_at_zero() {
        let m = MomentEstimates {
            exx_norm2: 1.0,
            ex_norm2: 1.0,
        };
        assert_relative_eq!(
            averaged_excess_risk_bound(0, 2.0, 1.0, &m, 4.0, 0.0),
            4.0
        );
    }

    #[test]
    fn noiseless_bound_decays_like_log_over_k_squared() {
        let m = MomentEstimates {
            exx_norm2: 675.0,
            ex_norm2: 25.0,
        };
        let c2 = gradient_second_moment_bound(100.0, 25, &m, 0.0).unwrap();
        let at = |k| averaged_excess_risk_bound(k, 2.0, 1.0, &m, c2, 0.0);
        assert!(at(10_000) / at(100) < 1e-3);
    }

    #[test]
    fn k_times_noise_bound_approaches_remark_limit() {
        // Identity design, gamma = 2: k * bound -> 4 d sigma^2.
        let d = 25;
        let m = MomentEstimates::analytic(&identity_spec(d)).unwrap();
        let sigma2 = 0.7;
        let k = 1_000_000_000u64;
        let bound = averaged_excess_risk_bound(k, 2.0, 1.0, &m, 0.0, sigma2);
        assert_relative_eq!(
            k as f64 * bound,
            4.0 * d as f64 * sigma2,
            max_relative = 1e-5
        );
    }

    #[test]
    fn iterate_error_bound_scaling() {
        assert_eq!(iterate_error_bound(0, 4.0, 1.0), 4.0);
        assert_eq!(iterate_error_bound(3, 4.0, 2.0), 0.5);
        let b = |k| iterate_error_bound(k, 7.0, 0.5);
        assert_relative_eq!(b(1), b(3) * 2.0);
    }

    #[test]
    fn scalar_leading_term_examples() {
        assert_relative_eq!(scalar_risk_leading_term(3, 1.0, 1.0, 1.0, 1.0), 4.0 / 9.0);
        let k = 12345;
        assert_relative_eq!(
            k as f64 * scalar_risk_leading_term(k, 1.0, 1.0, 1.0, 1.0),
            4.0 / 3.0
        );
        assert_eq!(scalar_risk_leading_term(5, 1.0, 0.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn contraction_sum_boundary_case() {
        // gamma = 1, k = 1, i = 0: the single term is beta_1 = 1 and the
        // bound is exactly 1.
        assert!(check_contraction_sum_bound(1.0, 1).unwrap());
    }

    #[test]
    fn contraction_sum_holds_at_k_200() {
        assert!(check_contraction_sum_bound(1.0, 200).unwrap());
        assert!(check_contraction_sum_bound(2.0, 200).unwrap());
    }

    #[test]
    fn contraction_sum_exact_matches_float() {
        for (num, den) in [(1i64, 1i64), (2, 1), (3, 2)] {
            let gamma = num as f64 / den as f64;
            for k in [1u64, 5, 17, 50] {
                assert_eq!(
                    contraction_sum_bound_exact(num, den, k).unwrap(),
                    check_contraction_sum_bound(gamma, k).unwrap(),
                    "gamma {gamma}, k {k}"
                );
            }
        }
    }

    #[test]
    fn contraction_sum_rejects_gamma_below_one() {
        assert!(check_contraction_sum_bound(0.5, 10).is_err());
        assert!(contraction_sum_bound_exact(1, 2, 10).is_err());
    }

    #[test]
    fn analytic_moments_identity_design() {
        let d = 25;
        let m = MomentEstimates::analytic(&identity_spec(d)).unwrap();
        // E[||x||^2] = d * mu with mu = 1.
        assert_eq!(m.ex_norm2, 25.0);
        assert_eq!(m.exx_norm2, 675.0);
    }

    #[test]
    fn analytic_moments_diagonal_and_fixed() {
        let spec = SyntheticSpec {
            d: 2,
            omega_star: Vector::new(vec![0.0, 0.0]).unwrap(),
            sigma2: 0.0,
            covariance: Covariance::Diagonal {
                values: vec![2.0, 3.0],
            },
            seed: 0,
        };
        let m = MomentEstimates::analytic(&spec).unwrap();
        assert_eq!(m.ex_norm2, 5.0);
        assert_eq!(m.exx_norm2, 2.0 * 13.0 + 25.0);

        let fixed = SyntheticSpec {
            d: 1,
            omega_star: Vector::new(vec![0.0]).unwrap(),
            sigma2: 0.0,
            covariance: Covariance::FixedX { values: vec![2.0] },
            seed: 0,
        };
        let m = MomentEstimates::analytic(&fixed).unwrap();
        assert_eq!(m.ex_norm2, 4.0);
        assert_eq!(m.exx_norm2, 16.0);
    }

    #[test]
    fn empirical_moments_converge_to_analytic() {
        let spec = identity_spec(25);
        let analytic = MomentEstimates::analytic(&spec).unwrap();
        let empirical =
            MomentEstimates::empirical(spec.stream(), 1_000_000, MatrixNorm::Frobenius)
                .unwrap();
        assert!((empirical.ex_norm2 - analytic.ex_norm2).abs() / analytic.ex_norm2 < 0.03);
        assert!((empirical.exx_norm2 - analytic.exx_norm2).abs() / analytic.exx_norm2 < 0.03);
    }

    #[test]
    fn outer_product_norms_coincide_on_rank_one() {
        // The shortcut ||x x^T|| = ||x||^2 backs both norm modes; verify it
        // against explicit matrix computations.
        let x = [1.5, -2.0, 0.25];
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        let outer = DMatrix::from_fn(3, 3, |i, j| x[i] * x[j]);
        let frobenius = outer.norm();
        let spectral = outer
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert_relative_eq!(frobenius, norm_sq, max_relative = 1e-12);
        assert_relative_eq!(spectral, norm_sq, max_relative = 1e-12);
        assert_relative_eq!(
            sq_outer_product_norm(norm_sq, MatrixNorm::Frobenius),
            frobenius * frobenius,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sq_outer_product_norm(norm_sq, MatrixNorm::Spectral),
            spectral * spectral,
            max_relative = 1e-12
        );
    }

    #[test]
    fn erm_ratio_examples() {
        let method = [2.0, 2.0, 2.0, 2.0, 2.0];
        let erm: Vec<Option<f64>> = method.iter().map(|v| Some(*v)).collect();
        assert_eq!(erm_error_ratio(&method, &erm, 0.2).unwrap(), 1.0);

        let erm_quarter: Vec<Option<f64>> = method.iter().map(|v| Some(v / 4.0)).collect();
        assert_relative_eq!(erm_error_ratio(&method, &erm_quarter, 0.4).unwrap(), 4.0);
    }

    #[test]
    fn erm_ratio_errors_on_missing_tail() {
        let method = [1.0, 1.0, 1.0];
        let erm = [Some(1.0), Some(1.0), None];
        assert!(matches!(
            erm_error_ratio(&method, &erm, 0.5),
            Err(Error::MissingTailBaseline { index: 2 })
        ));
        let erm_zero = [Some(1.0), Some(1.0), Some(0.0)];
        assert!(erm_error_ratio(&method, &erm_zero, 0.5).is_err());
    }
}
