//! Shared fixtures for the criterion benchmarks in `benches/`.

use randattract::{sample_two_sided_path, ChainBuilder, DiffusionField, NoiseSpectrum, WienerPath};

pub const SEED: u64 = 2024;

/// Default field and a path covering `[-a_drv, t_end]`.
pub fn fixture(dim: usize, dt: f64, t_end: f64) -> (ChainBuilder, WienerPath) {
    let field = DiffusionField::default();
    let spectrum = NoiseSpectrum::new(dim, 1.0).expect("valid spectrum");
    let path =
        sample_two_sided_path(&spectrum, -field.a_drv, t_end, dt, SEED).expect("valid window");
    (ChainBuilder::new(field, dim).expect("valid field"), path)
}
