use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;

/// Compares `analytic` against central differences of `loss` on `n_probe`
/// coordinates drawn with `seed` (all coordinates when `n_probe` covers them).
/// Returns the largest relative error, measured against `max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F>(params: &mut ParamStore, analytic: &[f64], h: f64, n_probe: usize, seed: u64, mut loss: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let len = params.len();
    assert_eq!(analytic.len(), len, "analytic gradient length");
    let probes: Vec<usize> = if n_probe >= len {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, len, n_probe).into_vec()
    };
    let mut worst: f64 = 0.0;
    for i in probes {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + h;
        let up = loss(params);
        params.values_mut()[i] = orig - h;
        let down = loss(params);
        params.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
