use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Target, WindowSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Marks exactly `floor(ratio * T * C)` entries of the window as missing,
/// drawn uniformly without replacement.
pub fn random_mask(sample: &WindowSample, ratio: f64, seed: u64) -> Result<WindowSample> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {ratio} outside (0, 1)"
        )));
    }
    let n = sample.input.numel();
    let missing = (ratio * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![1.0; n];
    for i in rand::seq::index::sample(&mut rng, n, missing) {
        mask[i] = 0.0;
    }
    Ok(WindowSample {
        target: Target::Imputation {
            mask: Tensor::new(sample.input.dims(), mask)?,
        },
        ..sample.clone()
    })
}
