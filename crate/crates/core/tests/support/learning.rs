use finrag::{Route, RouterFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Isotonic fit at each distinct x through the min-max formula
/// f(i) = max_{j<=i} min_{k>=i} mean(y[j..=k]), over pooled distinct x.
pub fn minmax_isotonic(pairs: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let groups: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| {
            let ys: Vec<f64> = pairs.iter().filter(|p| p.0 == x).map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
            (ys.iter().sum(), ys.len() as f64)
        })
        .collect();
    let n = groups.len();
    (0..n)
        .map(|i| {
            let best = (0..=i)
                .map(|j| {
                    (i..n)
                        .map(|k| {
                            let (s, w) = groups[j..=k].iter().fold((0.0, 0.0), |a, g| (a.0 + g.0, a.1 + g.1));
                            s / w
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (xs[i], best)
        })
        .collect()
}

pub fn separable(n: usize, seed: u64) -> (Vec<RouterFeatures>, Vec<Route>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let complex = rng.random_bool(0.42);
            let mut a = [0.0; 12];
            for v in a.iter_mut() {
                *v = rng.random_range(0.0..3.0);
            }
            // periods and sub-questions carry the signal
            a[4] = if complex { rng.random_range(3..6) as f64 } else { rng.random_range(1..3) as f64 };
            a[6] = if complex { rng.random_range(2..4) as f64 } else { rng.random_range(0..2) as f64 };
            (RouterFeatures::from_array(a), if complex { Route::Complex } else { Route::Simple })
        })
        .unzip()
}

