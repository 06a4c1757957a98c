//! Seeded band-limited test fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifold::{ManifoldSnapshot, SpectralField};

/// A trigonometric (or Legendre) polynomial with seeded coefficients.
///
/// Coefficients are uniform in `[-1, 1]` and damped by `(1 + freq)^{-decay}`.
pub fn random_field(snapshot: ManifoldSnapshot, seed: u64, decay: f64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..snapshot.len())
        .map(|k| {
            let freq = snapshot.frequency(k).expect("in range") as f64;
            rng.random_range(-1.0..1.0) * (1.0 + freq).powf(-decay)
        })
        .collect();
    SpectralField::new(snapshot, coeffs).expect("finite coefficients")
}

/// Like [`random_field`] with the mean mode removed.
pub fn random_mean_free_field(snapshot: ManifoldSnapshot, seed: u64, decay: f64) -> SpectralField {
    random_field(snapshot, seed, decay).mean_free()
}

/// A field whose coefficients are nonzero only up to frequency `band`.
pub fn random_band_limited(
    snapshot: ManifoldSnapshot,
    band: usize,
    seed: u64,
    decay: f64,
) -> SpectralField {
    let full = random_field(snapshot, seed, decay);
    let coeffs = full
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| if snapshot.frequency(k).expect("in range") <= band { *c } else { 0.0 })
        .collect();
    SpectralField::new(snapshot, coeffs).expect("finite coefficients")
}
