//! Regularized solves of `g x = b` for symmetric positive semi-definite `g`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// `(g + delta I) x = b`.
    DiagShift,
    /// `((g + delta I) / (1 + delta)) x = b`.
    NormalizedDiagShift,
    /// Inverts only eigendirections with eigenvalue at least `delta`.
    StableSubspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub threshold: f64,
    /// Interpret `threshold` as a fraction of the largest eigenvalue of `g`.
    #[serde(default)]
    pub relative: bool,
}

impl SolverConfig {
    pub fn new(method: SolverMethod, threshold: f64) -> Result<Self> {
        let c = SolverConfig { method, threshold, relative: false };
        c.validate()?;
        Ok(c)
    }

    pub fn relative(method: SolverMethod, fraction: f64) -> Result<Self> {
        let c = SolverConfig { method, threshold: fraction, relative: true };
        c.validate()?;
        Ok(c)
    }

    pub fn stable_subspace() -> Self {
        SolverConfig { method: SolverMethod::StableSubspace, threshold: 1e-2, relative: false }
    }

    pub fn diag_shift() -> Self {
        SolverConfig { method: SolverMethod::DiagShift, threshold: 1e-3, relative: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::invalid(format!("solver threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::stable_subspace()
    }
}

fn check_input(g: &DMatrix<f64>, b: &[f64]) -> Result<()> {
    if g.nrows() != g.ncols() || g.nrows() != b.len() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: b.len() });
    }
    if (g - g.transpose()).amax() > 1e-8 {
        return Err(Error::invalid("solver input is not symmetric"));
    }
    if g.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::numerical("solver input contains non-finite values"));
    }
    Ok(())
}

pub fn solve_regularized(g: &DMatrix<f64>, b: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
    config.validate()?;
    check_input(g, b)?;
    let d = b.len();
    let rhs = DVector::from_column_slice(b);
    let eig = || SymmetricEigen::new((g + g.transpose()) * 0.5);
    let delta = if config.relative {
        let top = eig().eigenvalues.max();
        if !(top > 0.0) {
            return Err(Error::numerical("relative threshold needs a positive largest eigenvalue"));
        }
        config.threshold * top
    } else {
        config.threshold
    };
    let x = match config.method {
        SolverMethod::DiagShift | SolverMethod::NormalizedDiagShift => {
            let shifted = g + DMatrix::identity(d, d) * delta;
            let x = match shifted.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => shifted.lu().solve(&rhs).ok_or_else(|| Error::numerical("shifted system is singular"))?,
            };
            if config.method == SolverMethod::NormalizedDiagShift {
                x * (1.0 + delta)
            } else {
                x
            }
        }
        SolverMethod::StableSubspace => {
            let e = eig();
            let mut x = DVector::zeros(d);
            for (j, &l) in e.eigenvalues.iter().enumerate() {
                if l >= delta {
                    let v = e.eigenvectors.column(j);
                    x += v * (v.dot(&rhs) / l);
                }
            }
            x
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("solver produced non-finite values"));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn singular_g0() -> DMatrix<f64> {
        let r = FRAC_1_SQRT_2;
        DMatrix::from_row_slice(4, 4, &[1.0, 0.0, r, 0.0, 0.0, 1.0, 0.0, r, r, 0.0, 1.0, 0.5, 0.0, r, 0.5, 1.0]) * 0.25
    }

    fn spd(seed: u64, d: usize) -> DMatrix<f64> {
        use rand::Rng;
        let mut r = crate::rng::stream(seed, "test");
        let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn identity_with_shift() {
        let b = [1.0, -2.0, 0.5];
        let x = solve_regularized(&DMatrix::identity(3, 3), &b, &SolverConfig::new(SolverMethod::DiagShift, 0.1).unwrap()).unwrap();
        for (xi, bi) in x.iter().zip(b) {
            assert_abs_diff_eq!(*xi, bi / 1.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn null_space_component_is_dropped() {
        let g = singular_g0();
        let null = DVector::from_vec(vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2, -1.0, 1.0]).normalize();
        let x = solve_regularized(&g, null.as_slice(), &SolverConfig::new(SolverMethod::StableSubspace, 1e-6).unwrap()).unwrap();
        assert!(DVector::from_vec(x).dot(&null).abs() < 1e-10);
    }

    #[test]
    fn tiny_shift_matches_dense_solve() {
        let g = spd(3, 5);
        let b = [0.3, -1.0, 2.0, 0.1, 0.7];
        let exact = g.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for method in [SolverMethod::DiagShift, SolverMethod::NormalizedDiagShift, SolverMethod::StableSubspace] {
            let x = solve_regularized(&g, &b, &SolverConfig::new(method, 1e-9).unwrap()).unwrap();
            assert!((DVector::from_vec(x) - &exact).amax() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(solve_regularized(&g, &[1.0, 1.0], &SolverConfig::default()).is_err());
        assert!(SolverConfig::new(SolverMethod::DiagShift, 0.0).is_err());
        assert!(solve_regularized(&DMatrix::identity(2, 2), &[1.0], &SolverConfig::default()).is_err());
    }

    #[test]
    fn relative_threshold_scales_with_spectrum() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 0.04]));
        let cfg = SolverConfig::relative(SolverMethod::StableSubspace, 0.005).unwrap();
        let x = solve_regularized(&g, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(x, vec![0.1, 0.0]);
    }

    #[test]
    fn large_normalized_shift_returns_rhs() {
        let g = spd(1, 4);
        let b = [1.0, -1.0, 0.5, 2.0];
        let x = solve_regularized(&g, &b, &SolverConfig::new(SolverMethod::NormalizedDiagShift, 1e9).unwrap()).unwrap();
        for (xi, bi) in x.iter().zip(b) {
            assert_abs_diff_eq!(*xi, bi, epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn stable_subspace_is_orthogonal_to_dropped_directions(seed in 0u64..1000, delta in 0.05f64..1.0) {
            let g = spd(seed, 5);
            let b: Vec<f64> = (0..5).map(|i| (i as f64 + seed as f64).sin()).collect();
            let x = DVector::from_vec(solve_regularized(&g, &b, &SolverConfig::new(SolverMethod::StableSubspace, delta).unwrap()).unwrap());
            let e = SymmetricEigen::new(g);
            for (j, l) in e.eigenvalues.iter().enumerate() {
                if *l < delta {
                    prop_assert!(e.eigenvectors.column(j).dot(&x).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn residual_shrinks_with_shift(seed in 0u64..1000) {
            let g = spd(seed, 4);
            let b = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
            let mut last = f64::INFINITY;
            for delta in [1.0, 0.3, 0.1, 0.03, 0.01, 0.001] {
                let x = DVector::from_vec(solve_regularized(&g, b.as_slice(), &SolverConfig::new(SolverMethod::DiagShift, delta).unwrap()).unwrap());
                let r = (&g * x - &b).norm();
                prop_assert!(r <= last + 1e-12);
                last = r;
            }
        }
    }
}
