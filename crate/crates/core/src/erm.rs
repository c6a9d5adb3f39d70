//! Streaming empirical risk minimizer: accumulate the normal-equation
//! sufficient statistics `A = sum x x^T`, `b = sum x y` and solve on demand
//! with a symmetric positive-definite factorization. No ridge term is ever
//! added; a checkpoint where the system is still rank-deficient reports
//! [`Error::NotYetIdentifiable`] instead.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{ConstraintSet, Sample, Vector};

/// Relative conditioning threshold beyond which the system is treated as
/// singular: the squared ratio of extreme Cholesky pivots estimates the
/// condition number.
const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Row-major d x d symmetric accumulator.
    a: Vec<f64>,
    b: Vec<f64>,
    d: usize,
    n: u64,
}

impl SufficientStats {
    pub fn zeros(d: usize) -> Self {
        Self {
            a: vec![0.0; d * d],
            b: vec![0.0; d],
            d,
            n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `A += x x^T`, `b += x y`, `n += 1`.
    pub fn absorb(&mut self, sample: &Sample) -> Result<()> {
        sample.x.check_dim(self.d)?;
        let x = sample.x.as_slice();
        for i in 0..self.d {
            let xi = x[i];
            let row = &mut self.a[i * self.d..(i + 1) * self.d];
            for (aij, xj) in row.iter_mut().zip(x) {
                *aij += xi * xj;
            }
        }
        for (bi, xi) in self.b.iter_mut().zip(x) {
            *bi += xi * sample.y;
        }
        self.n += 1;
        Ok(())
    }

    /// Field-wise addition, for merging statistics absorbed in parallel.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: other.d,
            });
        }
        for (a, oa) in self.a.iter_mut().zip(&other.a) {
            *a += oa;
        }
        for (b, ob) in self.b.iter_mut().zip(&other.b) {
            *b += ob;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.a[i * self.d + j])
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }

    /// Solves `A omega = b` with a Cholesky factorization and projects the
    /// solution onto the set. Returns [`Error::NotYetIdentifiable`] while `A`
    /// is singular or its estimated relative conditioning exceeds 1e12.
    pub fn solve(&self, set: &ConstraintSet) -> Result<Vector> {
        if self.n == 0 {
            return Err(Error::NotYetIdentifiable);
        }
        let chol = Cholesky::new(self.matrix()).ok_or(Error::NotYetIdentifiable)?;
        let l = chol.l_dirty();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..self.d {
            let p = l[(i, i)];
            min_pivot = min_pivot.min(p);
            max_pivot = max_pivot.max(p);
        }
        if !(min_pivot > 0.0) || (max_pivot / min_pivot).powi(2) > CONDITION_LIMIT {
            return Err(Error::NotYetIdentifiable);
        }
        let solution = chol.solve(&self.rhs());
        let omega = Vector::new(solution.iter().copied().collect())?;
        Ok(set.project(&omega))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::types::empirical_risk;

    fn v(coords: &[f64]) -> Vector {
        Vector::new(coords.to_vec()).unwrap()
    }

    fn sample(x: &[f64], y: f64) -> Sample {
        Sample::new(v(x), y).unwrap()
    }

    fn random_samples(n: usize, d: usize, seed: u64, noise: f64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega_star: Vec<f64> = (1..=d).map(|i| i as f64).collect();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let y: f64 = x
                    .iter()
                    .zip(&omega_star)
                    .map(|(xi, wi)| xi * wi)
                    .sum::<f64>()
                    + noise * rng.sample::<f64, _>(StandardNormal);
                sample(&x, y)
            })
            .collect()
    }

    #[test]
    fn absorb_rank_one_update() {
        let mut stats = SufficientStats::zeros(2);
        stats.absorb(&sample(&[1.0, 0.0], 2.0)).unwrap();
        assert_eq!(stats.matrix(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(stats.rhs(), DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(stats.n(), 1);
    }

    #[test]
    fn absorbing_zero_vector_only_counts() {
        let mut stats = SufficientStats::zeros(2);
        stats.absorb(&sample(&[0.0, 0.0], 5.0)).unwrap();
        assert_eq!(stats.matrix(), DMatrix::zeros(2, 2));
        assert_eq!(stats.n(), 1);
    }

    #[test]
    fn absorbs_commute() {
        let s1 = sample(&[1.0, 2.0], 3.0);
        let s2 = sample(&[-1.0, 0.5], 1.0);
        let mut a = SufficientStats::zeros(2);
        a.absorb(&s1).unwrap();
        a.absorb(&s2).unwrap();
        let mut b = SufficientStats::zeros(2);
        b.absorb(&s2).unwrap();
        b.absorb(&s1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absorb_dimension_mismatch() {
        let mut stats = SufficientStats::zeros(2);
        assert!(stats.absorb(&sample(&[1.0], 0.0)).is_err());
    }

    #[test]
    fn solve_consistent_system_recovers_parameter() {
        let samples = random_samples(50, 4, 1, 0.0);
        let mut stats = SufficientStats::zeros(4);
        for s in &samples {
            stats.absorb(s).unwrap();
        }
        let w = stats.solve(&ConstraintSet::Unbounded).unwrap();
        for (i, wi) in w.as_slice().iter().enumerate() {
            assert_relative_eq!(*wi, (i + 1) as f64, epsilon = 1e-10);
        }
    }

    #[test]
    fn underdetermined_is_not_yet_identifiable() {
        let mut stats = SufficientStats::zeros(3);
        stats.absorb(&sample(&[1.0, 0.5, -0.2], 1.0)).unwrap();
        stats.absorb(&sample(&[0.3, -1.0, 0.8], 2.0)).unwrap();
        assert!(matches!(
            stats.solve(&ConstraintSet::Unbounded),
            Err(Error::NotYetIdentifiable)
        ));
        let empty = SufficientStats::zeros(3);
        assert!(matches!(
            empty.solve(&ConstraintSet::Unbounded),
            Err(Error::NotYetIdentifiable)
        ));
    }

    #[test]
    fn scalar_two_sample_average() {
        let mut stats = SufficientStats::zeros(1);
        stats.absorb(&sample(&[1.0], 1.0)).unwrap();
        stats.absorb(&sample(&[1.0], 3.0)).unwrap();
        let w = stats.solve(&ConstraintSet::Unbounded).unwrap();
        assert_relative_eq!(w.as_slice()[0], 2.0);
    }

    #[test]
    fn streaming_matches_batch_least_squares() {
        // Independent oracle: solve the assembled n x d system by SVD.
        let n = 1000;
        let d = 25;
        let samples = random_samples(n, d, 9, 0.3);
        let mut stats = SufficientStats::zeros(d);
        for s in &samples {
            stats.absorb(s).unwrap();
        }
        let streamed = stats.solve(&ConstraintSet::Unbounded).unwrap();

        let design = DMatrix::from_fn(n, d, |i, j| samples[i].x.as_slice()[j]);
        let ys = DVector::from_fn(n, |i, _| samples[i].y);
        let batch = design
            .svd(true, true)
            .solve(&ys, 1e-12)
            .expect("full-rank least squares");
        for j in 0..d {
            assert_relative_eq!(
                streamed.as_slice()[j],
                batch[j],
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn residual_orthogonality_at_solution() {
        let d = 10;
        let samples = random_samples(400, d, 21, 1.0);
        let mut stats = SufficientStats::zeros(d);
        for s in &samples {
            stats.absorb(s).unwrap();
        }
        let w = stats.solve(&ConstraintSet::Unbounded).unwrap();
        let a = stats.matrix();
        let b = stats.rhs();
        let wv = DVector::from_column_slice(w.as_slice());
        let residual = &a * &wv - &b;
        let scale = a.norm() * wv.norm() + b.norm();
        assert!(residual.norm() <= 1e-8 * scale);
    }

    #[test]
    fn training_objective_monotone_under_new_samples() {
        // Two readings of the monotone-fit property, both checked:
        // (a) the absorbed set's own optimum fits it at least as well as any
        //     later solution, and
        // (b) the minimal sum of squared residuals never decreases as samples
        //     are added.
        let d = 3;
        let samples = random_samples(40, d, 33, 0.5);
        let mut stats = SufficientStats::zeros(d);
        let mut prev_min_ssr = 0.0f64;
        for n in 1..samples.len() {
            stats.absorb(&samples[n - 1]).unwrap();
            let Ok(w_n) = stats.solve(&ConstraintSet::Unbounded) else {
                continue;
            };
            let seen = &samples[..n];
            let risk_at_own = empirical_risk(seen, &w_n).unwrap();
            let mut next = stats.clone();
            next.absorb(&samples[n]).unwrap();
            if let Ok(w_next) = next.solve(&ConstraintSet::Unbounded) {
                let risk_at_next = empirical_risk(seen, &w_next).unwrap();
                assert!(
                    risk_at_own <= risk_at_next + 1e-10,
                    "n = {n}: own optimum beaten on its own set"
                );
            }
            let min_ssr = risk_at_own * n as f64;
            assert!(min_ssr + 1e-9 >= prev_min_ssr, "n = {n}: SSR decreased");
            prev_min_ssr = min_ssr;
        }
    }

    #[test]
    fn merge_equals_sequential_absorption() {
        let samples = random_samples(20, 3, 5, 0.2);
        let mut all = SufficientStats::zeros(3);
        for s in &samples {
            all.absorb(s).unwrap();
        }
        let mut left = SufficientStats::zeros(3);
        let mut right = SufficientStats::zeros(3);
        for s in &samples[..10] {
            left.absorb(s).unwrap();
        }
        for s in &samples[10..] {
            right.absorb(s).unwrap();
        }
        left.merge(&right).unwrap();
        assert_eq!(left.n(), all.n());
        for (a, b) in left.a.iter().zip(&all.a) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn solve_projects_onto_constraint() {
        let mut stats = SufficientStats::zeros(1);
        stats.absorb(&sample(&[1.0], 5.0)).unwrap();
        stats.absorb(&sample(&[2.0], 10.0)).unwrap();
        let set = ConstraintSet::new_box(v(&[0.0]), v(&[2.0])).unwrap();
        let w = stats.solve(&set).unwrap();
        assert_eq!(w.as_slice()[0], 2.0);
    }
}
