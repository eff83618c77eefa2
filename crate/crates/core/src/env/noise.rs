//! Sensor and friction perturbations used for robustness evaluation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::Wrench;

/// Lower bound of the per-channel noise reference: 1 N for forces, 0.1 N·m for torques.
pub const REFERENCE_FLOOR: [f64; 6] = [1.0, 1.0, 1.0, 0.1, 0.1, 0.1];

/// Additive zero-mean Gaussian noise with per-channel standard deviation
/// `fraction * scale[c]`.
pub fn inject_noise<R: Rng + ?Sized>(
    wrench: &Wrench,
    fraction: f64,
    scale: &[f64; 6],
    rng: &mut R,
) -> Wrench {
    if fraction == 0.0 {
        return *wrench;
    }
    let mut a = wrench.to_array();
    for (v, s) in a.iter_mut().zip(scale) {
        let z: f64 = StandardNormal.sample(rng);
        *v += fraction * s * z;
    }
    Wrench::from_array(a)
}

/// `mu * (1 + N(0, fraction^2))`, clamped at zero.
pub fn perturb_friction<R: Rng + ?Sized>(mu: f64, fraction: f64, rng: &mut R) -> f64 {
    if fraction == 0.0 {
        return mu;
    }
    let z: f64 = StandardNormal.sample(rng);
    (mu * (1.0 + fraction * z)).max(0.0)
}

/// Running RMS of the clean signal over the current episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningRms {
    sum_sq: [f64; 6],
    count: u64,
}

impl RunningRms {
    pub fn push(&mut self, w: &Wrench) {
        for (s, v) in self.sum_sq.iter_mut().zip(w.to_array()) {
            *s += v * v;
        }
        self.count += 1;
    }

    /// Reference scale per channel: the RMS so far, floored at [`REFERENCE_FLOOR`].
    pub fn scale(&self) -> [f64; 6] {
        let mut out = REFERENCE_FLOOR;
        if self.count > 0 {
            for (o, s) in out.iter_mut().zip(self.sum_sq) {
                *o = o.max((s / self.count as f64).sqrt());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_fraction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Wrench::from_array([1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
        assert_eq!(inject_noise(&w, 0.0, &REFERENCE_FLOOR, &mut rng), w);
        assert_eq!(perturb_friction(0.3, 0.0, &mut rng), 0.3);
    }

    #[test]
    fn wrench_noise_standard_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Wrench::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let scale = [1.0, 1.0, 1.0, 0.1, 0.1, 0.1];
        let n = 100_000;
        let (mut s, mut s2) = ([0.0; 6], [0.0; 6]);
        for _ in 0..n {
            let o = inject_noise(&w, 0.2, &scale, &mut rng).to_array();
            for c in 0..6 {
                s[c] += o[c];
                s2[c] += o[c] * o[c];
            }
        }
        for c in 0..6 {
            let mean = s[c] / n as f64;
            let sd = (s2[c] / n as f64 - mean * mean).sqrt();
            let target = 0.2 * scale[c];
            assert!((sd - target).abs() <= 0.02 * target, "channel {c}: {sd} vs {target}");
        }
    }

    #[test]
    fn friction_noise_mean_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mu = perturb_friction(0.3, 0.2, &mut rng);
            assert!(mu >= 0.0);
            sum += mu;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.3).abs() <= 0.02 * 0.3);
        // Heavy noise must still clamp at zero.
        assert!((0..1000).all(|_| perturb_friction(0.3, 5.0, &mut rng) >= 0.0));
    }

    #[test]
    fn rms_scale_is_floored() {
        let mut rms = RunningRms::default();
        assert_eq!(rms.scale(), REFERENCE_FLOOR);
        rms.push(&Wrench::from_array([3.0, 0.0, 0.0, 0.0, 0.0, 0.5]));
        rms.push(&Wrench::from_array([4.0, 0.0, 0.0, 0.0, 0.0, 0.5]));
        let s = rms.scale();
        assert!((s[0] - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[1], 1.0);
        assert!((s[5] - 0.5).abs() < 1e-12);
    }
}
