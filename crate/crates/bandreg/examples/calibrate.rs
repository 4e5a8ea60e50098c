// Scratch calibration harness (not part of the deliverable surface):
// measures registration speed/quality on the desk-scale bull-eye config.

use std::time::Instant;

use bandreg::data::{gen_bulleye, pair_indices, ImagePair};
use bandreg::registration::{register, RegConfig};

fn main() {
    let n_pairs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let cfg = RegConfig {
        band: 8,
        grid: 32,
        ..RegConfig::default()
    };
    let eyes = gen_bulleye(2 * n_pairs, 20260810, cfg.grid).unwrap();
    let pairs: Vec<ImagePair> = pair_indices(eyes.len(), 7)
        .into_iter()
        .map(|(a, b)| ImagePair::from_bulleyes(&eyes[a], &eyes[b]))
        .collect();

    let mut ratios = Vec::new();
    let total = Instant::now();
    for (i, p) in pairs.iter().enumerate() {
        let start = Instant::now();
        match register(&p.source, &p.target, &cfg) {
            Ok(r) => {
                let ratio = r.final_ssd / r.initial_ssd.max(1e-300);
                ratios.push(ratio);
                println!(
                    "pair {i}: {:.2}s iters={} ssd {:.4e} -> {:.4e} (ratio {:.3}) detjac {:.3} conv={} bt={}",
                    start.elapsed().as_secs_f64(),
                    r.iterations,
                    r.initial_ssd,
                    r.final_ssd,
                    ratio,
                    r.min_detjac,
                    r.converged,
                    r.backtracking_exhausted
                );
            }
            Err(e) => println!("pair {i}: FAILED {e}"),
        }
    }
    let mean_ratio: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
    println!(
        "total {:.1}s for {} pairs; mean ssd ratio {:.3}",
        total.elapsed().as_secs_f64(),
        pairs.len(),
        mean_ratio
    );
}
