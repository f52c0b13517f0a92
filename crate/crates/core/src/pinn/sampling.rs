//! Latin-hypercube sampling of the training domain.

use nalgebra::{Vector2, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SamplingDomain;
use crate::dynamics::ControlInput;
use crate::net::BatchPoint;

/// `n` samples in `[0, 1]^dims` with exactly one sample per equal-width
/// stratum in every coordinate (independent permutations per dimension,
/// uniform jitter inside each stratum).
pub fn latin_hypercube_unit(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    assert!(n >= 1);
    let mut samples = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        strata.shuffle(rng);
        for (i, sample) in samples.iter_mut().enumerate() {
            sample[d] = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    samples
}

/// Latin-hypercube collocation points over `[0, t_max] x X x U`.
pub fn latin_hypercube(n: usize, domain: &SamplingDomain, seed: u64) -> super::CollocationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.full_bounds();
    let unit = latin_hypercube_unit(n, 7, &mut rng);
    let points = unit
        .into_iter()
        .map(|s| {
            let v: Vec<f64> = (0..7).map(|i| lo[i] + s[i] * (hi[i] - lo[i])).collect();
            BatchPoint {
                t: v[0],
                x0: Vector4::new(v[1], v[2], v[3], v[4]),
                u: Vector2::new(v[5], v[6]),
            }
        })
        .collect();
    super::CollocationSet { points, seed }
}

/// Seeded uniform piecewise-constant control sequence inside the control box
/// (the shape of the open-loop test inputs).
pub fn random_controls(n: usize, domain: &SamplingDomain, seed: u64) -> Vec<ControlInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &domain.control_box;
    (0..n)
        .map(|_| {
            ControlInput::new(
                rng.random_range(b.lo[0]..b.hi[0]),
                rng.random_range(b.lo[1]..b.hi[1]),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_lies_inside_the_box() {
        let domain = SamplingDomain::default();
        let set = latin_hypercube(1, &domain, 9);
        assert_eq!(set.points.len(), 1);
        let p = &set.points[0];
        assert!(p.t >= 0.0 && p.t <= domain.t_max);
        assert!(domain.state_box.contains(&[p.x0[0], p.x0[1], p.x0[2], p.x0[3]]));
        assert!(domain.control_box.contains(&[p.u[0], p.u[1]]));
    }

    #[test]
    fn strata_are_occupied_exactly_once_per_dimension() {
        for (n, seed) in [(10usize, 0u64), (137, 3), (20_000, 42)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let unit = latin_hypercube_unit(n, 7, &mut rng);
            for d in 0..7 {
                let mut hist = vec![0usize; n];
                for s in &unit {
                    let idx = ((s[d] * n as f64) as usize).min(n - 1);
                    hist[idx] += 1;
                }
                assert!(hist.iter().all(|&c| c == 1), "n={n} dim {d}: occupancy != 1");
            }
        }
    }

    #[test]
    fn sorted_projection_falls_in_consecutive_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let unit = latin_hypercube_unit(n, 3, &mut rng);
        for d in 0..3 {
            let mut vals: Vec<f64> = unit.iter().map(|s| s[d]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (j, v) in vals.iter().enumerate() {
                let w = 1.0 / n as f64;
                assert!(*v >= j as f64 * w && *v < (j + 1) as f64 * w);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let domain = SamplingDomain::default();
        let a = latin_hypercube(50, &domain, 7);
        let b = latin_hypercube(50, &domain, 7);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.t.to_bits(), q.t.to_bits());
            assert_eq!(p.x0, q.x0);
            assert_eq!(p.u, q.u);
        }
    }
}
