//! Seeded inputs shared by the benchmarks.

use finrag::{Passage, PassageKind, Route, RouterFeatures};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "revenue", "income", "expenses", "margin", "cash", "debt", "equity", "assets", "segment", "fiscal", "growth",
    "operating", "gross", "net", "interest", "tax", "capital", "inventory", "goodwill", "lease", "dividend", "share",
];

pub fn passages(n: usize, seed: u64) -> Vec<Passage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(20..80);
            let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            let text = format!("{} {}", words.join(" "), 2000 + i % 25);
            Passage {
                id: format!("p{i:05}"),
                token_count: len + 1,
                text,
                kind: PassageKind::TextChunk,
                doc_id: format!("d{}", i / 20),
                position: i % 20,
            }
        })
        .collect()
}

pub fn queries(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..rng.random_range(2..6)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "))
        .collect()
}

/// Router training data where two features decide the label.
pub fn router_data(n: usize, seed: u64) -> (Vec<RouterFeatures>, Vec<Route>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let complex = rng.random_bool(0.42);
            let mut a = [0.0; 12];
            for v in a.iter_mut() {
                *v = rng.random_range(0.0..3.0);
            }
            a[4] = if complex { rng.random_range(3..6) } else { rng.random_range(1..3) } as f64;
            a[6] = if complex { rng.random_range(2..4) } else { rng.random_range(0..2) } as f64;
            (RouterFeatures::from_array(a), if complex { Route::Complex } else { Route::Simple })
        })
        .unzip()
}

pub fn calibration_pairs(n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            (x, rng.random_bool(0.1 + 0.8 * x))
        })
        .collect()
}
