//! Synthetic low-rank tensors with known factors.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cp::KruskalModel;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// A rank-`rank` tensor built from uniform(0,1) factors plus dense
/// `N(noise_mu, noise_sigma²)` noise on every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub noise_mu: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: impl Into<Vec<usize>>, rank: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            dims: dims.into(),
            rank,
            noise_mu: 0.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, mu: f64, sigma: f64) -> SynthSpec {
        self.noise_mu = mu;
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<Shape> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() || !self.noise_mu.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise needs finite mu and sigma >= 0, got ({}, {})",
                self.noise_mu, self.noise_sigma
            )));
        }
        Shape::new(self.dims.clone())
    }

    /// The ground-truth model alone.
    pub fn ground_truth(&self) -> Result<KruskalModel> {
        self.validate()?;
        let factors = self
            .dims
            .iter()
            .enumerate()
            .map(|(mode, &d)| {
                let mut rng = rng::substream(self.seed, Purpose::Synthetic, 0, mode as u64, 0);
                Matrix::from_fn(d, self.rank, |_, _| rng.random::<f64>())
            })
            .collect();
        KruskalModel::from_factors(factors)
    }

    /// The noisy tensor and its ground truth.
    pub fn generate(&self) -> Result<(DenseTensor, KruskalModel)> {
        let truth = self.ground_truth()?;
        let mut data = truth.reconstruct().into_data();
        if self.noise_mu != 0.0 || self.noise_sigma != 0.0 {
            let noise = Normal::new(self.noise_mu, self.noise_sigma)
                .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
            let mut rng = rng::substream(self.seed, Purpose::Synthetic, 1, 0, 0);
            for v in &mut data {
                *v += noise.sample(&mut rng);
            }
        }
        let tensor = DenseTensor::from_vec(Shape::new(self.dims.clone())?, data)?;
        Ok((tensor, truth))
    }
}
