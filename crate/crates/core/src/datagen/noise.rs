use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sets `round(fraction * pixels)` distinct pixels of an interleaved 8-bit
/// image to black or white with equal odds.
pub fn add_salt_pepper_noise(image: &[u8], channels: usize, fraction: f64, seed: u64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("noise fraction {fraction} is outside [0, 1]")));
    }
    if channels == 0 || image.len() % channels != 0 {
        return Err(Error::Dimension(format!(
            "{} bytes do not split into {channels}-channel pixels",
            image.len()
        )));
    }
    let pixels = image.len() / channels;
    let count = (fraction * pixels as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.to_vec();
    for p in rand::seq::index::sample(&mut rng, pixels, count).into_vec() {
        let v = if rng.random_bool(0.5) { 255 } else { 0 };
        out[p * channels..(p + 1) * channels].fill(v);
    }
    Ok(out)
}
