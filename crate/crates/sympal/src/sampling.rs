//! Deterministic sampling utilities.
//!
//! All randomness flows from one seed through counter-based substreams
//! (ChaCha streams), so parallel schedules cannot perturb results. Halton
//! points cover low-dimensional boxes; high-dimensional polydiscs fall back
//! to the seeded generator, where low-discrepancy constructions stop being
//! meaningful.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent substream `stream` of the master seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

pub const HALTON_MAX_DIM: usize = PRIMES.len();

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= base as f64;
        inv += (n % base) as f64 / denom;
        n /= base;
    }
    inv
}

/// `i`-th Halton point in `[0,1)^dim`, `dim ≤ HALTON_MAX_DIM`. Index 0 is
/// skipped internally to avoid the all-zeros point.
pub fn halton(i: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= HALTON_MAX_DIM, "Halton limited to {HALTON_MAX_DIM} dims");
    (0..dim).map(|d| radical_inverse(i as u64 + 1, PRIMES[d] as u64)).collect()
}

/// Uniform point in the Euclidean ball of radius `r` in `R^d`.
pub fn ball_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    let dir = sphere_point(rng, d);
    let u: f64 = rng.random_range(0.0..1.0f64);
    let rad = r * u.powf(1.0 / d as f64);
    dir.into_iter().map(|c| c * rad).collect()
}

/// Uniform point on the unit sphere in `R^d`.
pub fn sphere_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs; rejection only guards the degenerate draw.
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let u1: f64 = rng.random_range(1e-12..1.0f64);
                let u2: f64 = rng.random_range(0.0..1.0f64);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_fills_unit_square() {
        let pts: Vec<Vec<f64>> = (0..64).map(|i| halton(i, 2)).collect();
        for p in &pts {
            assert!(p.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
        // crude equidistribution: each quadrant gets its share
        let q00 = pts.iter().filter(|p| p[0] < 0.5 && p[1] < 0.5).count();
        assert!((10..=22).contains(&q00), "quadrant count {q00}");
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = rng_stream(7, 3);
        let mut b = rng_stream(7, 3);
        let mut c = rng_stream(7, 4);
        let xa: f64 = a.random_range(0.0..1.0f64);
        let xb: f64 = b.random_range(0.0..1.0f64);
        let xc: f64 = c.random_range(0.0..1.0f64);
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn sphere_points_are_unit() {
        let mut rng = rng_stream(1, 0);
        for d in [1usize, 2, 4] {
            let p = sphere_point(&mut rng, d);
            let n = p.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
