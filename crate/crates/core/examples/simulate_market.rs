//! Simulates greedy-policy episodes on the two-stock market and compares the
//! terminal-wealth Sharpe ratio with its closed form.

use ctrl_mv::market::{simulate_episode, MarketModel, SimConfig};
use ctrl_mv::oracles::{optimal_params, sharpe_closed_form};

fn main() -> ctrl_mv::Result<()> {
    let model = MarketModel::two_stock();
    let oracle = optimal_params(&model, 0.1, 1.4, 1.0, 1.0)?;
    let w = oracle.w()?;
    let phi1 = oracle.phi1_star.clone();
    let n = 5000;
    let mut terminal = Vec::with_capacity(n);
    for seed in 0..n as u64 {
        let cfg = SimConfig { absorb: false, ..SimConfig::new(1.0, 1.0, 1.0 / 250.0, seed) };
        let mut greedy = |_t: f64, x: f64, _rng: &mut ctrl_mv::rng::StreamRng, out: &mut [f64]| {
            for (o, p) in out.iter_mut().zip(phi1.iter()) {
                *o = -p * (x - w);
            }
        };
        terminal.push(simulate_episode(&model, &cfg, &mut greedy)?.terminal_wealth());
    }
    let mean = terminal.iter().sum::<f64>() / n as f64;
    let sd = (terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    println!("E[x(T)] = {mean:.4} (target 1.4), sd = {sd:.4}");
    println!("Sharpe: simulated {:.4}, closed form {:.4}", (mean - 1.0) / sd, sharpe_closed_form(&phi1, &model, 1.0));
    Ok(())
}
