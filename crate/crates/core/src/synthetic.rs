//! Seeded synthetic light fields with angularly smooth lenslet content
//! (a per-lenslet linear ramp plus a low-amplitude sinusoidal ripple whose
//! direction drifts across the lenslet grid).
//! Used by tests, benchmarks and demos in place of captured data.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lightfield::LightField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothFieldParams {
    /// Peak deviation of the per-lenslet ramp from its mean, per axis.
    pub slope: f64,
    /// Amplitude of the angular ripple.
    pub ripple: f64,
    /// Ripple frequency in cycles per lenslet width.
    pub ripple_cycles: f64,
    /// Spatial period (in lenslets) of the mean-level variation.
    pub spatial_period: f64,
}

impl Default for SmoothFieldParams {
    fn default() -> Self {
        Self {
            slope: 0.15,
            ripple: 0.04,
            ripple_cycles: 0.6,
            spatial_period: 9.0,
        }
    }
}

impl SmoothFieldParams {
    pub fn generate(
        &self,
        channels: usize,
        height: usize,
        width: usize,
        angular: usize,
        seed: u64,
    ) -> LightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phase = || rng.random_range(0.0..TAU);
        let phases: Vec<[f64; 6]> = (0..channels)
            .map(|_| [phase(), phase(), phase(), phase(), phase(), phase()])
            .collect();
        let theta = phase();
        let centre = (angular.max(2) - 1) as f64;
        let p = *self;
        LightField::from_fn(channels, height, width, angular, |c, s, t, u, v| {
            let ph = &phases[c];
            let (sf, tf) = (s as f64 / p.spatial_period, t as f64 / p.spatial_period);
            let level = 0.5
                + 0.04 * c as f64
                + 0.18 * (TAU * sf + ph[0]).sin() * (TAU * 0.7 * tf + ph[1]).cos();
            let du = p.slope * (TAU * 0.5 * sf + ph[2]).sin();
            let dv = p.slope * (TAU * 0.6 * tf + ph[3]).cos();
            let (x, y) = (u as f64 / centre - 0.5, v as f64 / centre - 0.5);
            let ripple_phase = TAU * (sf + tf) * 0.8 + ph[4];
            let dir = theta + TAU * (0.37 * sf + 0.23 * tf);
            let ripple = p.ripple
                * (TAU * p.ripple_cycles * (x * dir.cos() + y * dir.sin()) + ripple_phase).sin();
            (level + 2.0 * du * x + 2.0 * dv * y + ripple).clamp(0.0, 1.0)
        })
        .expect("generated samples are clamped to [0, 1]")
    }
}

/// Smooth field with default parameters.
pub fn smooth_field(
    channels: usize,
    height: usize,
    width: usize,
    angular: usize,
    seed: u64,
) -> LightField {
    SmoothFieldParams::default().generate(channels, height, width, angular, seed)
}

/// Field of i.i.d. uniform samples.
pub fn random_field(
    channels: usize,
    height: usize,
    width: usize,
    angular: usize,
    seed: u64,
) -> LightField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LightField::from_fn(channels, height, width, angular, |_, _, _, _, _| {
        rng.random_range(0.0..=1.0)
    })
    .expect("uniform samples are in range")
}
