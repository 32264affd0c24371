use lflctr_core::metrics::bootstrap_median_ci;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(1..=1000) as f64).collect()
}

#[test]
fn median_interval_narrows_with_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let reps = 20;
    let mut widths = [0.0; 2];
    let mut covered = 0;
    for r in 0..reps {
        for (slot, n) in [100, 1000].into_iter().enumerate() {
            let ci = bootstrap_median_ci(&draws(&mut rng, n), 2000, 0.05, 0.95, r as u64).unwrap();
            widths[slot] += (ci.hi - ci.lo) / reps as f64;
            if n == 1000 && ci.lo <= 500.5 && 500.5 <= ci.hi {
                covered += 1;
            }
        }
    }
    let ratio = widths[0] / widths[1];
    let expected = 10f64.sqrt();
    assert!((ratio / expected - 1.0).abs() <= 0.3, "width ratio {ratio}");
    assert!(
        covered >= 15,
        "{covered} of {reps} intervals contain the median"
    );
}
