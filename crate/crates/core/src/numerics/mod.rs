//! Dense linear algebra, box clipping and seeded sampling.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{spd_solve_right, Cholesky};
pub use matrix::Matrix;
pub(crate) use matrix::{axpy, dot};
pub use rng::{Rng, RngState};

use crate::error::{dim_mismatch, Result};

/// Elementwise `min(high, max(low, v))`.
pub fn clip_box(v: &[f64], low: &[f64], high: &[f64]) -> Result<Vec<f64>> {
    if v.len() != low.len() || v.len() != high.len() {
        return Err(dim_mismatch(
            "clip_box",
            v.len(),
            format!("bounds of length {}/{}", low.len(), high.len()),
        ));
    }
    Ok(v.iter()
        .zip(low.iter().zip(high))
        .map(|(&x, (&lo, &hi))| x.max(lo).min(hi))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn clip_examples() {
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        assert_eq!(clip_box(&[1.5, -0.3], &lo, &hi).unwrap(), vec![1.0, -0.3]);
        assert_eq!(clip_box(&[0.2, -0.9], &lo, &hi).unwrap(), vec![0.2, -0.9]);
        assert_eq!(clip_box(&[-7.0], &[-1.0], &[1.0]).unwrap(), vec![-1.0]);
        assert!(clip_box(&[0.0], &lo, &hi).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_feasible(
            v in prop::collection::vec(-1e3f64..1e3, 1..6),
            seed in any::<u64>(),
        ) {
            let mut rng = Rng::new(seed);
            let low: Vec<f64> = v.iter().map(|_| rng.uniform(-5.0, 0.0)).collect();
            let high: Vec<f64> = low.iter().map(|l| l + rng.uniform(0.0, 5.0)).collect();
            let once = clip_box(&v, &low, &high).unwrap();
            let twice = clip_box(&once, &low, &high).unwrap();
            prop_assert_eq!(&once, &twice);
            for ((x, l), h) in once.iter().zip(&low).zip(&high) {
                prop_assert!(l <= x && x <= h);
            }
        }
    }
}
