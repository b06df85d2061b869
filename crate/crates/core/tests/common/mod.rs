#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Low-rank synthetic ratings on 1..=5 as a `user item rating` TSV.
pub fn synthetic_tsv(n_users: usize, n_items: usize, density: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_f: Vec<[f64; 3]> = (0..n_users).map(|_| factors(&mut rng)).collect();
    let item_f: Vec<[f64; 3]> = (0..n_items).map(|_| factors(&mut rng)).collect();
    let mut out = String::from("user\titem\trating\n");
    for (u, uf) in user_f.iter().enumerate() {
        for (i, vf) in item_f.iter().enumerate() {
            if rng.random::<f64>() >= density {
                continue;
            }
            let dot: f64 = uf.iter().zip(vf).map(|(a, b)| a * b).sum();
            let noise = rng.random_range(-0.7..0.7);
            let r = (3.4 + dot + noise).round().clamp(1.0, 5.0) as i32;
            out.push_str(&format!("u{u}\tm{i}\t{r}\n"));
        }
    }
    out
}

fn factors(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.5..0.5),
    ]
}

pub fn write_synthetic(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("ratings.tsv");
    std::fs::write(&path, synthetic_tsv(120, 60, 0.35, seed)).unwrap();
    path
}

/// The public benchmark file fetched by `scripts/fetch-movielens.sh`.
pub fn movielens_path() -> PathBuf {
    std::env::var_os("NOISYCF_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k.tsv"))
}
