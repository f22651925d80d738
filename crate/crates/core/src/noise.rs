use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Dims;

/// Standard complex Gaussian: real and imaginary parts independent, each N(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Array3<Complex64> {
    Array3::from_shape_simple_fn(dims.shape(), || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    })
}

/// Whether injected noise is drawn or replaced by zeros (a test hook for the
/// deterministic skeleton of the sampler).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    Zero,
}

impl NoiseMode {
    pub fn draw<R: Rng + ?Sized>(self, dims: Dims, rng: &mut R) -> Array3<Complex64> {
        match self {
            NoiseMode::Gaussian => complex_normal(dims, rng),
            NoiseMode::Zero => Array3::zeros(dims.shape()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_variance_per_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = complex_normal(Dims::new(1, 200, 200), &mut rng);
        let count = n.len() as f64;
        let var_re = n.iter().map(|v| v.re * v.re).sum::<f64>() / count;
        let var_im = n.iter().map(|v| v.im * v.im).sum::<f64>() / count;
        assert!((var_re - 1.0).abs() < 0.02);
        assert!((var_im - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_mode_draws_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone();
        let n = NoiseMode::Zero.draw(Dims::new(2, 4, 4), &mut rng);
        assert!(n.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert_eq!(rng, before);
    }
}
