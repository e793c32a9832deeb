//! Episodic actor-critic training on the simulated two-stock market.
//!
//! `cargo run --release --example train_baseline -- 20000`

use ctrl_mv::market::MarketModel;
use ctrl_mv::oracles::{optimal_params, sharpe_closed_form};
use ctrl_mv::train::{default_init, train_baseline, Schedule, TrainConfig};

fn main() -> ctrl_mv::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let model = MarketModel::two_stock();
    let cfg = TrainConfig { episodes, record_every: episodes / 10, seed: 1, ..TrainConfig::default() };
    let oracle = optimal_params(&model, cfg.gamma, cfg.z, cfg.x0, cfg.horizon)?;
    let out = train_baseline(&model, &cfg, &Schedule::harmonic(5.0, 50.0), default_init(2, 1.0, cfg.gamma))?;
    println!("{:>7} {:>8} {:>8} {:>8} {:>8}", "episode", "|dphi1|", "|dphi2|", "w", "SR");
    for r in &out.history {
        println!(
            "{:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.n,
            (&r.phi1 - &oracle.phi1_star).norm(),
            (&r.phi2 - &oracle.phi2_star).norm(),
            r.w,
            sharpe_closed_form(&r.phi1, &model, cfg.horizon)
        );
    }
    println!("optimum: w* = {:.4}, SR* = {:.4}", oracle.w()?, oracle.sr_star);
    Ok(())
}
