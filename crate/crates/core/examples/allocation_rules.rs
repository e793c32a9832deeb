//! Every classical allocation rule on one estimation window.

use ctrl_mv::strategies::{allocate, StrategyId, StrategyRequest};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> ctrl_mv::Result<()> {
    let (months, d) = (120, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let market: Vec<f64> = (0..months).map(|_| 0.007 + 0.045 * noise.sample(&mut rng)).collect();
    let factors = DMatrix::from_fn(months, 3, |i, k| if k == 0 { market[i] } else { 0.02 * noise.sample(&mut rng) });
    let window = DMatrix::from_fn(months, d, |i, j| 0.001 * j as f64 + (0.7 + 0.15 * j as f64) * market[i] + 0.04 * noise.sample(&mut rng));
    let caps = DVector::from_vec(vec![5.0, 3.0, 2.0, 1.0, 1.0]);
    for id in StrategyId::ALL {
        let req = StrategyRequest {
            id,
            window: &window,
            market: Some(&market),
            factors: Some(&factors),
            caps: Some(&caps),
            mu_star: 1.15f64.powf(1.0 / 12.0) - 1.0,
            z: 1.15,
            x: 1.0,
            x0: 1.0,
            r: 0.0,
            delta: None,
            horizon: 1.0,
        };
        match allocate(&req) {
            Ok(w) => println!("{:>5}: {:>7.3?}", id.name(), w.as_slice()),
            Err(e) => println!("{:>5}: {e}", id.name()),
        }
    }
    Ok(())
}
