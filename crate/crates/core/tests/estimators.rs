use mimlfast::objective::estimate_rank_expectation;
use mimlfast::training::find_violation;
use mimlfast::{Bag, LabelSpace, Model, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

#[test]
fn closed_form_matches_geometric_draws() {
    let p = 0.5;
    let draws = 1_000_000;
    let geo = Geometric::new(p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        // rand_distr counts failures before the first success.
        let x = 1.0 / (geo.sample(&mut rng) + 1) as f64;
        sum += x;
        sq += x * x;
    }
    let mean = sum / draws as f64;
    let sigma = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    let exact = estimate_rank_expectation(p);
    assert!((mean - exact).abs() <= 3.0 * sigma, "mean {mean} vs {exact} (sigma {sigma})");
}

/// A one-dimensional model whose pool labels violate with probability `p`.
fn pool_model(pool: usize, p: f64) -> Model {
    let violating = (p * pool as f64).round() as usize;
    let mut heads = vec![0.0];
    heads.extend((0..pool).map(|i| if i < violating { 0.5 } else { -5.0 }));
    heads.push(-5.0); // dummy
    let ls = LabelSpace::new(pool + 1).unwrap();
    Model::from_parts(Variant::Full, 1, 1, ls, 1, 100.0, vec![1.0], heads).unwrap()
}

#[test]
fn sampled_rank_fraction_tracks_closed_form() {
    let bag = Bag::new("b", vec![vec![1.0]], vec![0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for pool_size in [50, 100] {
        let pool: Vec<usize> = (1..=pool_size).collect();
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let model = pool_model(pool_size, p);
            let runs = 20_000;
            let mut total = 0.0;
            let mut hits = 0;
            while hits < runs {
                let Some(t) = find_violation(&model, &bag, 0, 0, &pool, &mut rng) else { continue };
                total += (pool_size / t.v) as f64 / pool_size as f64;
                hits += 1;
            }
            let mean = total / runs as f64;
            let exact = estimate_rank_expectation(p);
            assert!((mean - exact).abs() / exact <= 0.10, "pool {pool_size} p {p}: {mean} vs {exact}");
        }
    }
}

#[test]
fn sampled_rank_is_biased_upward_of_the_violation_share() {
    // The estimator targets E[1/v], which exceeds p for every p in (0, 1).
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for p in [0.1, 0.5, 0.9] {
        let mean: f64 = (0..100_000)
            .map(|_| {
                let v = (1..).find(|_| rng.random_bool(p)).unwrap();
                1.0 / v as f64
            })
            .sum::<f64>()
            / 100_000.0;
        assert!(mean > p, "p {p}: {mean}");
    }
}
