//! Closed-form optimum of the two-stock market and the mean increments at a
//! perturbed parameter.

use ctrl_mv::market::MarketModel;
use ctrl_mv::oracles::{h1, h2, hw, optimal_params};

fn main() -> ctrl_mv::Result<()> {
    let model = MarketModel::two_stock();
    let (gamma, z, x0, t) = (0.1, 1.4, 1.0, 1.0);
    let o = optimal_params(&model, gamma, z, x0, t)?;
    println!("phi1* = {:.4?}", o.phi1_star.as_slice());
    println!("phi2* = {:.4?}", o.phi2_star.as_slice());
    println!("w*    = {:.4}", o.w()?);
    println!("SR*   = {:.4}  (k = {:.4})", o.sr_star, o.k);

    let phi1 = &o.phi1_star * 0.8;
    let phi2 = &o.phi2_star * 1.5;
    let w = o.w()? + 0.2;
    println!("h1 = {:.4?}", h1(&phi1, &phi2, w, &model, 1.0, x0, t)?.as_slice());
    println!("h2 = {:.4?}", h2(&phi2, &model, gamma, t)?.as_slice());
    println!("hw = {:.4}", hw(&phi1, w, &model, x0, z, t)?);
    Ok(())
}
