//! Synthetic speaker data shaped like log filterbank features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Noise standard deviation around each speaker's mean spectrum.
pub const NOISE_STD: f64 = 1.0;
/// Default standard deviation of the per-speaker mean spectra.
pub const DEFAULT_SEPARATION: f64 = 0.1;

/// `speakers` classes, each a mean spectrum over `feat_dim` bands. A sample
/// repeats its speaker's spectrum over `frames` and adds white noise; every
/// batch index draws fresh noise.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub speakers: usize,
    pub feat_dim: usize,
    pub frames: usize,
    /// Standard deviation of the class means, in units of the noise.
    pub separation: f64,
    seed: u64,
    means: Vec<Vec<f64>>,
}

impl SynthDataset {
    pub fn new(speakers: usize, feat_dim: usize, frames: usize, separation: f64, seed: u64) -> Result<Self> {
        if speakers == 0 || feat_dim == 0 || frames == 0 {
            return Err(config_err!("dataset needs positive sizes, got {speakers} speakers of {feat_dim}x{frames}"));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(config_err!("class separation must be non-negative, got {separation}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..speakers)
            .map(|_| (0..feat_dim).map(|_| separation * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        Ok(Self { speakers, feat_dim, frames, separation, seed, means })
    }

    pub fn mean(&self, speaker: usize) -> &[f64] {
        &self.means[speaker]
    }

    /// Batch number `index`: `per_speaker` samples of every speaker, ordered
    /// by class, shaped `(speakers * per_speaker, 1, feat_dim, frames)`.
    pub fn batch<S: Scalar>(&self, index: u64, per_speaker: usize) -> Result<(Tensor<S>, Vec<usize>)> {
        if per_speaker == 0 {
            return Err(config_err!("a batch needs at least one sample per speaker"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        let n = self.speakers * per_speaker;
        let mut samples = Vec::with_capacity(n * self.feat_dim * self.frames);
        let mut labels = Vec::with_capacity(n);
        for (k, mean) in self.means.iter().enumerate() {
            for _ in 0..per_speaker {
                labels.push(k);
                for &m in mean {
                    for _ in 0..self.frames {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        samples.push(m + NOISE_STD * z);
                    }
                }
            }
        }
        let x = Tensor::from_f64(Shape::new(n, 1, self.feat_dim, self.frames), &samples)?;
        Ok((x, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_shape() {
        let d = SynthDataset::new(3, 80, 5, 1.0, 1).unwrap();
        let (x, labels) = d.batch::<f32>(0, 4).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        assert_eq!(x.shape(), Shape::new(12, 1, 80, 5));
        assert!(SynthDataset::new(0, 80, 5, 1.0, 1).is_err());
        assert!(d.batch::<f32>(0, 0).is_err());
    }

    #[test]
    fn batches_are_seeded_and_distinct() {
        let a = SynthDataset::new(2, 4, 20, 2.0, 7).unwrap();
        let b = SynthDataset::new(2, 4, 20, 2.0, 7).unwrap();
        let (x0, _) = a.batch::<f64>(0, 3).unwrap();
        assert_eq!(x0, b.batch::<f64>(0, 3).unwrap().0);
        assert_ne!(x0, a.batch::<f64>(1, 3).unwrap().0);
    }

    #[test]
    fn samples_center_on_class_means() {
        let d = SynthDataset::new(2, 4, 20, 2.0, 7).unwrap();
        let (x, _) = d.batch::<f64>(3, 50).unwrap();
        // First band of the first speaker averaged over 50 x 20 noisy frames.
        let band: f64 = (0..50).map(|i| x.sample(i)[..20].iter().sum::<f64>()).sum::<f64>() / 1000.0;
        assert!((band - d.mean(0)[0]).abs() < 0.15);
    }
}
