//! Seeded synthetic datasets. CSV ingestion lives in the CLI crate.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Dataset, Error, Label, Result, Vector};

/// Recipe for a synthetic dataset. The bias coordinate is chosen separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticSpec {
    /// Two classes on either side of a random hyperplane through a random
    /// offset; every point is at least `gap/2` from the plane, so the data
    /// are linearly separable (with bias) whenever `gap > 0`.
    GaussianBlobs { d: usize, n: usize, gap: f64, seed: u64 },
    /// `(x1, −1)` and `(x2, +1)` on the real line, without bias.
    TwoPoint1d { x1: f64, x2: f64 },
    /// Positive points near the origin (one exactly at it) and negative
    /// points in antipodal pairs on a shell; never linearly separable.
    RingVsCenter { d: usize, n: usize, seed: u64 },
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| normal(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Builds the dataset described by `spec`, appending a constant-1 bias
/// coordinate when `bias` is set.
pub fn generate(spec: &SyntheticSpec, bias: bool) -> Result<Dataset> {
    match *spec {
        SyntheticSpec::GaussianBlobs { d, n, gap, seed } => {
            if d == 0 || n < 2 {
                return Err(Error::Config(format!("blobs need d ≥ 1 and n ≥ 2 (got d={d}, n={n})")));
            }
            if !(gap > 0.0 && gap.is_finite()) {
                return Err(Error::Config(format!("blob gap {gap} must be positive")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_unit(&mut rng, d);
            let center = Vector::from_fn(d, |_, _| 0.5 * normal(&mut rng));
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                let z = Vector::from_fn(d, |_, _| normal(&mut rng));
                let z_perp = &z - &u * u.dot(&z);
                let along = gap / 2.0 + normal(&mut rng).abs();
                let x = &center + z_perp + &u * (y.sign() * along);
                rows.push((x.as_slice().to_vec(), y));
            }
            Dataset::from_rows(format!("gaussian-blobs-d{d}-n{n}-seed{seed}"), &rows, bias)
        }
        SyntheticSpec::TwoPoint1d { x1, x2 } => {
            if bias {
                return Err(Error::Config("the two-point dataset has no bias coordinate".into()));
            }
            Dataset::from_rows(
                "two-point-1d",
                &[(alloc::vec![x1], Label::Negative), (alloc::vec![x2], Label::Positive)],
                false,
            )
        }
        SyntheticSpec::RingVsCenter { d, n, seed } => {
            if d == 0 || n < 3 {
                return Err(Error::Config(format!("ring needs d ≥ 1 and n ≥ 3 (got d={d}, n={n})")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = (n - 1) / 2;
            let centers = n - 2 * pairs;
            let mut rows = Vec::with_capacity(n);
            rows.push((alloc::vec![0.0; d], Label::Positive));
            for _ in 1..centers {
                let r = 0.5 * rng.random::<f64>();
                let p = random_unit(&mut rng, d) * r;
                rows.push((p.as_slice().to_vec(), Label::Positive));
            }
            for _ in 0..pairs {
                let r = 1.5 + 0.5 * rng.random::<f64>();
                let p = random_unit(&mut rng, d) * r;
                rows.push((p.as_slice().to_vec(), Label::Negative));
                rows.push(((-p).as_slice().to_vec(), Label::Negative));
            }
            Dataset::from_rows(format!("ring-vs-center-d{d}-n{n}-seed{seed}"), &rows, bias)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_separable() {
        let spec = SyntheticSpec::GaussianBlobs {
            d: 2,
            n: 20,
            gap: 2.0,
            seed: 7,
        };
        let a = generate(&spec, true).unwrap();
        let b = generate(&spec, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.dim(), 3);
        assert!(a.samples().iter().all(|s| s.x[2] == 1.0));
    }

    #[test]
    fn two_point_matches_definition() {
        let data = generate(&SyntheticSpec::TwoPoint1d { x1: 1.0, x2: 2.0 }, false).unwrap();
        assert_eq!(data.samples()[0].x[0], 1.0);
        assert_eq!(data.samples()[0].y, Label::Negative);
        assert_eq!(data.samples()[1].y, Label::Positive);
    }

    #[test]
    fn ring_has_requested_size() {
        for n in [3, 4, 9, 10] {
            let data = generate(&SyntheticSpec::RingVsCenter { d: 2, n, seed: 1 }, true).unwrap();
            assert_eq!(data.len(), n);
        }
    }
}
