//! Rolling-window backtest of every strategy on a synthetic factor panel.

use chrono::NaiveDate;
use ctrl_mv::backtest::{factor_market, replicate, synthetic_panel, BacktestConfig, CtrlSettings, SyntheticPanelSpec};

fn main() -> ctrl_mv::Result<()> {
    let spec = SyntheticPanelSpec { assets: 12, days: 252 * 10, seed: 4, ..SyntheticPanelSpec::default() };
    let panel = synthetic_panel(&factor_market(spec.assets, spec.r, spec.seed)?, &spec)?;
    let cfg = BacktestConfig {
        test_start: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        window_months: 48,
        subset_size: 8,
        replications: 3,
        ctrl: CtrlSettings { pretrain_episodes: 500, ..CtrlSettings::default() },
        ..BacktestConfig::default()
    };
    let rep = replicate(&panel, &cfg)?;
    println!("{:>7} {:>8} {:>8} {:>8} {:>8}", "rule", "return", "vol", "sharpe", "mdd");
    for row in &rep.summary {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        println!("{:>7} {:>8} {:>8} {:>8} {:>8}", row.strategy, f(row.mean.ret), f(row.mean.vol), f(row.mean.sharpe), f(row.mean.mdd));
    }
    Ok(())
}
