use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tli_core::bc::{train, BcConfig, MlpPolicy};
use tli_core::types::{Matrix, Vector};

fn linear_pairs(count: usize, seed: u64) -> Vec<(Vector, Vector)> {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -0.8]);
    let c = Vector::from_vec(vec![0.5, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = Vector::from_vec(vec![rng.random(), rng.random()]);
            let d = &a * (&x - &c);
            (x, d)
        })
        .collect()
}

fn rmse(p: &MlpPolicy, pairs: &[(Vector, Vector)]) -> f64 {
    let s: f64 = pairs.iter().map(|(x, d)| (p.predict(x) - d).norm_squared()).sum();
    (s / pairs.len() as f64).sqrt()
}

#[test]
fn memorizes_a_small_linear_field() {
    let pairs = linear_pairs(10, 1);
    let p = train(&pairs, &BcConfig::default()).unwrap();
    let mean_speed = pairs.iter().map(|(_, d)| d.norm()).sum::<f64>() / pairs.len() as f64;
    let err = rmse(&p, &pairs);
    assert!(err <= 0.05 * mean_speed, "rmse {err} vs mean speed {mean_speed}");
    // each training point lands inside the training-error ball
    for (x, d) in &pairs {
        assert!((p.predict(x) - d).norm() <= err * (pairs.len() as f64).sqrt() + 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let pairs = linear_pairs(10, 2);
    let cfg = BcConfig { epochs: 200, ..Default::default() };
    let a = train(&pairs, &cfg).unwrap();
    let b = train(&pairs, &cfg).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: MlpPolicy = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn far_inputs_stay_bounded() {
    let p = train(&linear_pairs(10, 3), &BcConfig { epochs: 300, ..Default::default() }).unwrap();
    for x in [[100.0, -100.0], [1e4, 3e4], [-7e5, 2.0]] {
        let y = p.predict(&Vector::from_vec(x.to_vec()));
        assert!(y.iter().all(|c| c.is_finite() && c.abs() <= 50.0));
    }
}
