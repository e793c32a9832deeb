//! Online learner with greedy execution, risky-only projection and
//! counterfactual mini-batches, fed by a simulated market.

use ctrl_mv::actor_critic::{PolicyParams, ValueParams};
use ctrl_mv::market::MarketModel;
use ctrl_mv::metrics::evaluate;
use ctrl_mv::online::{run_online, Feed, OnlineConfig};
use ctrl_mv::train::Schedule;
use nalgebra::{DMatrix, DVector};

fn main() -> ctrl_mv::Result<()> {
    let model = MarketModel::two_stock();
    let cfg = OnlineConfig { episodes: 20, gamma: 0.1, seed: 3, ..OnlineConfig::default() };
    let init = (
        ValueParams { theta1: 0.0, theta2: 0.0, theta3: 1.0 },
        PolicyParams { phi1: DVector::from_element(2, 1.0), phi2: DMatrix::identity(2, 2), phi3: 1.0, w: 1.0, gamma: cfg.gamma },
    );
    let out = run_online(Feed::Model(&model), init, &cfg, &Schedule::constant(0.005, 0.05))?;
    for (r, traj) in out.history.iter().zip(&out.executed).step_by(4) {
        let m = evaluate(&traj.wealth, 0.0)?;
        println!("episode {:>2}: phi1 = {:.3?}, w = {:.3}, year return {:.3}", r.n, r.phi1.as_slice(), r.w, m.ann_return);
    }
    let all: Vec<f64> = out.executed.iter().fold(vec![1.0], |mut acc, t| {
        let base = *acc.last().unwrap();
        acc.extend(t.wealth[1..].iter().map(|x| base * x / t.wealth[0]));
        acc
    });
    let m = evaluate(&all, 0.0)?;
    println!("chained {} years: return {:.3}, vol {:.3}, Sharpe {:?}", out.executed.len(), m.ann_return, m.ann_vol, m.sharpe);
    Ok(())
}
