//! Synthetic multi-station series driven by sparse stable linear dynamics.
//!
//! Used for end-to-end checks where the generating dynamics are known.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::series::{SeriesMatrix, Space};

/// Simulates `x_{t+1} = A x_t + ε_t` for `steps` rows starting at `x0`.
/// Row `n` of the result is `x_n`.
pub fn simulate_linear(
    a: &DMatrix<f64>,
    x0: &DVector<f64>,
    steps: usize,
    noise_sd: f64,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    let width = a.nrows();
    let mut out = DMatrix::zeros(steps, width);
    let mut x = x0.clone();
    for n in 0..steps {
        out.row_mut(n).copy_from(&x.transpose());
        let eps = DVector::from_fn(width, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
        x = a * &x + eps;
    }
    out
}

/// `episodes` independent runs of [`simulate_linear`], each starting from a
/// standard normal state and lasting `length` rows, stacked into one
/// normalized series with a fully masked row between runs so no one-step
/// pair spans two runs. Yields `episodes × (length − 1)` usable pairs.
pub fn simulate_episodes(
    a: &DMatrix<f64>,
    episodes: usize,
    length: usize,
    noise_sd: f64,
    start_hour: i64,
    rng: &mut impl Rng,
) -> SeriesMatrix {
    let width = a.nrows();
    let mut values = Vec::with_capacity(episodes * (length + 1) * width);
    for e in 0..episodes {
        if e > 0 {
            values.extend(std::iter::repeat(f64::NAN).take(width));
        }
        let x0 = DVector::from_fn(width, |_, _| rng.sample::<f64, _>(StandardNormal));
        let run = simulate_linear(a, &x0, length, noise_sd, rng);
        for n in 0..length {
            values.extend(run.row(n).iter());
        }
    }
    let ids = (1..=width).map(|i| format!("x{i}")).collect();
    SeriesMatrix::from_values(start_hour, ids, values, Space::Normalized)
        .expect("episode shape is consistent")
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Sparse stable transition matrix: a persistent diagonal plus one coupling
/// per row, rescaled so the spectral radius stays at or below `max_radius`.
pub fn sparse_stable_matrix(stations: usize, max_radius: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(stations, stations);
    for i in 0..stations {
        a[(i, i)] = rng.gen_range(0.6..0.9);
        if stations > 1 {
            let j = (i + 1 + rng.gen_range(0..stations - 1)) % stations;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            a[(i, j)] = sign * rng.gen_range(0.1..0.3);
        }
    }
    let rho = spectral_radius(&a);
    if rho > max_radius {
        a *= max_radius / rho;
    }
    a
}

/// Parameters of a synthetic hourly dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub stations: usize,
    pub hours: usize,
    pub start_hour: i64,
    /// Per-station persistence on the diagonal of the transition matrix.
    pub persistence: f64,
    /// Weight of the single off-diagonal coupling per row.
    pub coupling: f64,
    /// Innovation noise, split between a network-wide shock and a
    /// station-specific part.
    pub process_noise: f64,
    /// Share of innovation variance carried by the network-wide shock.
    pub shared_noise_share: f64,
    /// Measurement noise added in normalized units.
    pub observation_noise: f64,
    /// Fraction of cells masked at random before any experiment.
    pub baseline_missing: f64,
    pub level: f64,
    pub scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            stations: 5,
            // 2016 and 2017, from 2016-01-01T00:00
            hours: 17_544,
            start_hour: 403_224,
            persistence: 0.85,
            coupling: 0.1,
            process_noise: 0.3,
            shared_noise_share: 0.6,
            observation_noise: 0.02,
            baseline_missing: 0.03,
            level: 25.0,
            scale: 15.0,
            seed: 2016,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub series: SeriesMatrix,
    pub transition: DMatrix<f64>,
}

/// Ring-coupled transition: `a_ii = persistence`, `a_i,i+1 = coupling`.
pub fn ring_transition(stations: usize, persistence: f64, coupling: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(stations, stations);
    for i in 0..stations {
        a[(i, i)] = persistence;
        if stations > 1 {
            a[(i, (i + 1) % stations)] += coupling;
        }
    }
    a
}

/// Generates a raw-space dataset `level + scale · x_t` with station ids
/// `station_1 … station_S`.
pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = ring_transition(spec.stations, spec.persistence, spec.coupling);
    let shared_sd = spec.process_noise * spec.shared_noise_share.sqrt();
    let own_sd = spec.process_noise * (1.0 - spec.shared_noise_share).sqrt();
    let obs = Normal::new(0.0, spec.observation_noise.max(0.0)).expect("finite sd");

    let width = spec.stations;
    let burn_in = 500;
    let mut x = DVector::zeros(width);
    let mut values = Vec::with_capacity(spec.hours * width);
    for n in 0..burn_in + spec.hours {
        if n >= burn_in {
            for s in 0..width {
                let noisy = x[s] + obs.sample(&mut rng);
                let missing = rng.gen_bool(spec.baseline_missing.clamp(0.0, 1.0));
                values.push(if missing {
                    f64::NAN
                } else {
                    spec.level + spec.scale * noisy
                });
            }
        }
        let shock: f64 = rng.sample(StandardNormal);
        let eps = DVector::from_fn(width, |_, _| {
            shared_sd * shock + own_sd * rng.sample::<f64, _>(StandardNormal)
        });
        x = &a * &x + eps;
    }
    let ids = (1..=width).map(|i| format!("station_{i}")).collect();
    let series = SeriesMatrix::from_values(spec.start_hour, ids, values, Space::Raw)
        .expect("generated shape is consistent");
    SyntheticData {
        series,
        transition: a,
    }
}
