//! The tape-based relational losses against explicit all-pairs and
//! all-triples loops.

use distilforge_core::losses::{angle_distill_loss, distance_distill_loss, huber};
use distilforge_core::{Diagnostics, Tape, Tensor, TupleSets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn oracle_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
        .collect();
    let mu = |e: &[Vec<f64>]| {
        pairs.iter().map(|&(u, v)| dist(&e[u], &e[v])).sum::<f64>() / pairs.len() as f64
    };
    let (mu_a, mu_b) = (mu(a), mu(b));
    pairs
        .iter()
        .map(|&(u, v)| huber(dist(&a[u], &a[v]) / mu_a, dist(&b[u], &b[v]) / mu_b))
        .sum::<f64>()
        / pairs.len() as f64
}

fn cosine_at(e: &[Vec<f64>], u: usize, v: usize, w: usize) -> f64 {
    let x: Vec<f64> = e[u].iter().zip(&e[v]).map(|(p, q)| p - q).collect();
    let y: Vec<f64> = e[w].iter().zip(&e[v]).map(|(p, q)| p - q).collect();
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
    let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
    dot / (nx * ny)
}

fn oracle_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for u in 0..n {
        for v in 0..n {
            for w in 0..n {
                if u == v || v == w || u == w {
                    continue;
                }
                total += huber(cosine_at(a, u, v, w), cosine_at(b, u, v, w));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

#[test]
fn vectorized_relational_losses_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..20 {
        for n in 3..=5 {
            let (d_a, d_b) = (rng.random_range(2..6), rng.random_range(2..6));
            // A wide scale on the peer pushes some residuals onto the
            // linear branch of the Huber loss. Widths differ between peers.
            let a = random_rows(&mut rng, n, d_a, 1.0);
            let b = random_rows(&mut rng, n, d_b, 4.0);
            for tuples in [TupleSets::all(n), TupleSets::for_batch(n, trial)] {
                let mut tape = Tape::new();
                let e = tape.constant(to_tensor(&a));
                let mut diag = Diagnostics::default();
                let dd = distance_distill_loss(&mut tape, e, &to_tensor(&b), &tuples, &mut diag)
                    .unwrap();
                let ad = angle_distill_loss(&mut tape, e, &to_tensor(&b), &tuples, &mut diag)
                    .unwrap()
                    .unwrap();
                let (dd, ad) = (
                    tape.value(dd).item().unwrap(),
                    tape.value(ad).item().unwrap(),
                );
                let (want_dd, want_ad) = (oracle_distance(&a, &b), oracle_angle(&a, &b));
                assert!(
                    (dd - want_dd).abs() < 1e-10,
                    "trial {trial} n {n}: dd {dd} vs {want_dd}"
                );
                assert!(
                    (ad - want_ad).abs() < 1e-10,
                    "trial {trial} n {n}: ad {ad} vs {want_ad}"
                );
                assert_eq!(diag, Diagnostics::default());
            }
        }
    }
}
