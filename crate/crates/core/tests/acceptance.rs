//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of the outcome so the workspace test run stays usable;
//! set `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit and
//! `ACCEPTANCE_ONLY=4,7` to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use ctrl_mv::actor_critic::{self, PolicyParams, ValueParams};
use ctrl_mv::backtest::{self, BacktestConfig, BacktestStrategy, CtrlSettings, SyntheticPanelSpec};
use ctrl_mv::experiments::{self, ExperimentConfig};
use ctrl_mv::market::{self, MarketModel, SimConfig};
use ctrl_mv::metrics::{self, Recovery};
use ctrl_mv::oracles;
use ctrl_mv::rng;
use ctrl_mv::strategies::{self, StrategyId, StrategyRequest};
use ctrl_mv::train::{self, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng) * scale);
    &a * a.transpose() + DMatrix::identity(d, d) * ridge
}

fn c1_c2_c3() -> (Outcome, Outcome, Outcome) {
    let base = ExperimentConfig::default();
    let model = base.model().unwrap();
    let oracle = base.oracle(&model).unwrap();
    // frozen closed-form values for the two-stock model
    let sigma_inv = model.cov().clone().try_inverse().unwrap();
    let frozen = (oracle.phi1_star[0] - 1.7845).abs() < 1e-4
        && (oracle.phi1_star[1] - 1.6162).abs() < 1e-4
        && (&oracle.phi2_star - sigma_inv * 0.05).amax() < 1e-12
        && (oracle.w().unwrap() - 1.7425).abs() < 1e-4;

    let cfg = ExperimentConfig { episodes: Some(10_000), replications: Some(100), ..base.clone() };
    let rep = experiments::convergence(&cfg).unwrap();
    let (s1, s2, sw) = (rep.slope_phi1, rep.slope_phi2, rep.slope_w);
    let c1 = check(
        (-1.3..=-0.85).contains(&s1) && (-1.15..=-0.70).contains(&s2) && (-1.2..=-0.75).contains(&sw),
        format!(
            "slopes phi1 {s1:.3} (want [-1.3,-0.85]), phi2 {s2:.3} (want [-1.15,-0.70]), w {sw:.3} (want [-1.2,-0.75]); {} reps x {} episodes",
            rep.replications, rep.episodes
        ),
    );
    let sr = rep.slope_regret;
    let c2 = check((0.42..=0.62).contains(&sr), format!("regret slope {sr:.3} (want [0.42,0.62]), burn-in {}", cfg.burn_in));

    let cfg = ExperimentConfig { episodes: Some(100_000), replications: Some(20), ..base };
    let rep = experiments::convergence(&cfg).unwrap();
    let [e1, e2, ew] = rep.final_error_median;
    let c3 = check(
        frozen && e1 < 0.05 && e2 < 0.05 && ew < 0.05,
        format!("median final errors phi1 {e1:.4}, phi2 {e2:.4}, w {ew:.4} (want < 0.05); oracle values frozen: {frozen}; {} reps", rep.replications),
    );
    (c1, c2, c3)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn c4() -> Outcome {
    let model = MarketModel::two_stock();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let samples = 100_000;
    let mut worst: f64 = 0.0;
    for point in 0..5 {
        let phi1 = DVector::from_fn(2, |_, _| rng.random_range(1.0..2.5));
        let phi2 = random_spd(&mut rng, 2, 0.3, 0.05);
        let phi3 = rng.random_range(1.0..2.0);
        let w = rng.random_range(1.2..2.2);
        let gamma = 0.1;
        let policy = PolicyParams { phi1: phi1.clone(), phi2: phi2.clone(), phi3, w, gamma };
        let value = ValueParams { theta1: normal(&mut rng), theta2: normal(&mut rng), theta3: phi3 };
        let cfg = TrainConfig { seed: 4000 + point, gamma, ..TrainConfig::default() };
        let inc = train::sample_increments(&model, &cfg, &value, &policy, samples).unwrap();
        let h1 = oracles::h1(&phi1, &phi2, w, &model, phi3, cfg.x0, cfg.horizon).unwrap();
        let h2 = oracles::h2(&phi2, &model, gamma, cfg.horizon).unwrap();
        let hw = oracles::hw(&phi1, w, &model, cfg.x0, cfg.z, cfg.horizon).unwrap();
        let mut score = |vals: Vec<f64>, want: f64| {
            let (m, se) = mean_se(&vals);
            worst = worst.max((m - want).abs() / se);
        };
        for i in 0..2 {
            score(inc.iter().map(|x| x.z1[i]).collect(), h1[i]);
            for j in 0..2 {
                score(inc.iter().map(|x| x.z2[(i, j)]).collect(), h2[(i, j)]);
            }
        }
        score(inc.iter().map(|x| x.terminal_gap).collect(), hw);
    }
    check(worst < 4.0, format!("largest |mean - h| over 5 points x 7 components: {worst:.2} SE (want < 4), {samples} episodes each"))
}

fn c5() -> Outcome {
    let rep = experiments::tradeoff(&ExperimentConfig::default()).unwrap();
    let curve: Vec<String> = rep.points.iter().map(|p| format!("{:.0}", p.var_z1)).collect();
    check(
        rep.interior_minimum && rep.points.iter().all(|p| p.var_z1 > 0.0),
        format!("minimum at grid index {} of {} (scale {:.3}); Var(Z1) = [{}]", rep.argmin, rep.points.len(), rep.points[rep.argmin].scale, curve.join(", ")),
    )
}

fn terminal_wealth_mc(model: &MarketModel, phi1: &DVector<f64>, cov: &DMatrix<f64>, phi3: f64, w: f64, seed: u64, n: usize) -> Vec<f64> {
    let sim = SimConfig { absorb: false, ..SimConfig::new(1.0, 1.0, 0.004, seed) };
    let chol = cov.clone().cholesky().unwrap().l();
    let d = phi1.len();
    let mut eps = DVector::zeros(d);
    (0..n)
        .map(|k| {
            let mut rng = rng::stream(seed, k as u64, 0);
            let mut rule = |t: f64, x: f64, r: &mut rng::StreamRng, out: &mut [f64]| {
                for e in eps.iter_mut() {
                    *e = r.sample(StandardNormal);
                }
                let u = phi1 * -(x - w) + &chol * &eps * (0.5 * phi3 * (1.0 - t)).exp();
                out.copy_from_slice(u.as_slice());
            };
            market::simulate_episode_with(model, &sim, &mut rule, &mut rng).unwrap().terminal_wealth()
        })
        .collect()
}

fn c6() -> Outcome {
    let model = MarketModel::two_stock();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut min_gap = f64::INFINITY;
    let mut worst_z: f64 = 0.0;
    for pair in 0..50 {
        let phi1 = DVector::from_fn(2, |_, _| rng.random_range(0.5..2.5));
        let c_hat = random_spd(&mut rng, 2, 0.3, 0.01);
        let c = &c_hat + random_spd(&mut rng, 2, 0.3, 0.0);
        let phi3 = rng.random_range(0.8..1.5);
        let w = rng.random_range(1.2..2.2);
        let ode = |m: &DMatrix<f64>| {
            let path = |t: f64| m * (phi3 * (1.0 - t)).exp();
            oracles::wealth_moments_ode(&model, &phi1, &path, w, 1.0, 1.0, 2000).unwrap()
        };
        let ((_, var_c), (_, var_hat)) = (ode(&c), ode(&c_hat));
        min_gap = min_gap.min(var_c - var_hat);
        // common random numbers: the same return and noise draws under both covariances
        let seed = 6000 + pair;
        let a = terminal_wealth_mc(&model, &phi1, &c, phi3, w, seed, 2000);
        let b = terminal_wealth_mc(&model, &phi1, &c_hat, phi3, w, seed, 2000);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (m, se) = mean_se(&diff);
        worst_z = worst_z.max(m.abs() / se);
    }
    check(
        min_gap >= 0.0 && worst_z < 3.0,
        format!("min Var_C - Var_Chat over 50 pairs {min_gap:.3e} (want >= 0); largest paired mean difference {worst_z:.2} SE (want < 3)"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(2..5);
        let horizon = 1.0;
        let t = rng.random_range(0.0..horizon);
        let x = rng.random_range(0.5..2.5);
        let w = rng.random_range(0.5..2.5);
        let p = PolicyParams {
            phi1: DVector::from_fn(d, |_, _| normal(&mut rng)),
            phi2: random_spd(&mut rng, d, 0.4, 0.1),
            phi3: rng.random_range(0.5..2.0),
            w,
            gamma: 0.1,
        };
        let u = DVector::from_fn(d, |_, _| normal(&mut rng));
        let v = ValueParams { theta1: normal(&mut rng), theta2: normal(&mut rng), theta3: p.phi3 };

        let h = 1e-5;
        let fd_theta = [0, 1].map(|k| {
            let (mut up, mut dn) = (v, v);
            if k == 0 {
                up.theta1 += h;
                dn.theta1 -= h;
            } else {
                up.theta2 += h;
                dn.theta2 -= h;
            }
            (actor_critic::value_j(t, x, &up, w, 1.4, horizon) - actor_critic::value_j(t, x, &dn, w, 1.4, horizon)) / (2.0 * h)
        });
        worst = worst.max(rel_err(&actor_critic::grad_j_theta(t, horizon), &fd_theta));

        let g1 = actor_critic::grad_log_pi_phi1(&u, t, x, &p, horizon).unwrap();
        let fd1: Vec<f64> = (0..d)
            .map(|i| {
                let (mut up, mut dn) = (p.clone(), p.clone());
                up.phi1[i] += h;
                dn.phi1[i] -= h;
                (actor_critic::log_pi(&u, t, x, &up, horizon).unwrap() - actor_critic::log_pi(&u, t, x, &dn, horizon).unwrap()) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(g1.as_slice(), &fd1));

        let g2 = actor_critic::grad_log_pi_phi2inv(&u, t, x, &p, horizon).unwrap();
        let precision = p.phi2.clone().try_inverse().unwrap();
        let lp = |m: &DMatrix<f64>| actor_critic::log_pi_with_precision(&u, t, x, &p.phi1, m, p.phi3, w, horizon).unwrap();
        let mut fd2 = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (mut up, mut dn) = (precision.clone(), precision.clone());
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                fd2[(i, j)] = (lp(&up) - lp(&dn)) / (2.0 * h);
            }
        }
        worst = worst.max(rel_err(g2.as_slice(), fd2.as_slice()));
    }
    check(worst < 1e-6, format!("largest relative error over 20 points x 3 gradients: {worst:.2e} (want < 1e-6)"))
}

/// Active-set enumeration for min wᵀΣw s.t. 𝟙ᵀw = 1 and, when `mu` is
/// given, μᵀw = μ* (`equality`) or μᵀw ≥ μ*; equality constraints are
/// eliminated through an explicit null-space basis.
fn brute_force_qp(sigma: &DMatrix<f64>, mu: &DVector<f64>, mu_star: f64, equality: bool) -> DVector<f64> {
    let d = sigma.nrows();
    let solve = |rows: &[DVector<f64>], rhs: &[f64]| -> DVector<f64> {
        let a = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
        let b = DVector::from_column_slice(rhs);
        let pinv = a.clone().pseudo_inverse(1e-14).unwrap();
        let w0 = &pinv * b;
        // orthonormal basis of the null space from the eigenvectors of I − A⁺A
        let proj = nalgebra::SymmetricEigen::new(DMatrix::identity(d, d) - &pinv * &a);
        let cols: Vec<DVector<f64>> = (0..d).filter(|&i| proj.eigenvalues[i] > 0.5).map(|i| proj.eigenvectors.column(i).into_owned()).collect();
        if cols.is_empty() {
            return w0;
        }
        let basis = DMatrix::from_columns(&cols);
        let reduced = basis.transpose() * sigma * &basis;
        let grad = basis.transpose() * sigma * &w0;
        let y = reduced.lu().solve(&(-grad)).unwrap();
        w0 + basis * y
    };
    let ones = DVector::from_element(d, 1.0);
    let bound = solve(&[ones.clone(), mu.clone()], &[1.0, mu_star]);
    if equality {
        return bound;
    }
    let free = solve(&[ones], &[1.0]);
    if mu.dot(&free) >= mu_star {
        free
    } else {
        bound
    }
}

fn c8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut mv_err, mut drmv_err, mut rp_spread, mut sum_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..200 {
        let d = rng.random_range(2..5);
        let sigma = random_spd(&mut rng, d, 0.05, 0.002);
        let mu = DVector::from_fn(d, |_, _| 0.005 + 0.01 * normal(&mut rng));
        let target = mu.mean() + 0.005 * normal(&mut rng);
        let mv = strategies::solve_mv(&mu, &sigma, target).unwrap();
        mv_err = mv_err.max((&mv - brute_force_qp(&sigma, &mu, target, true)).amax());
        let dr = strategies::solve_drmv(&mu, &sigma, target, 0.0).unwrap();
        drmv_err = drmv_err.max((&dr - brute_force_qp(&sigma, &mu, target, false)).amax());
        let rp = strategies::solve_risk_parity(&sigma).unwrap();
        let rc = strategies::risk_contributions(&rp, &sigma);
        rp_spread = rp_spread.max((rc.max() - rc.min()) / rc.sum());
    }
    let mut declined = 0;
    for _ in 0..20 {
        let (t, d) = (60, rng.random_range(3..8));
        let market: Vec<f64> = (0..t).map(|_| 0.008 + 0.04 * normal(&mut rng)).collect();
        let factors = DMatrix::from_fn(t, 3, |i, k| if k == 0 { market[i] } else { 0.02 * normal(&mut rng) });
        let window = DMatrix::from_fn(t, d, |i, j| 0.002 * j as f64 + (0.6 + 0.2 * j as f64) * market[i] + 0.03 * normal(&mut rng));
        let caps = DVector::from_fn(d, |_, _| rng.random_range(1.0..10.0));
        for id in StrategyId::ALL {
            let req = StrategyRequest {
                id,
                window: &window,
                market: Some(&market),
                factors: Some(&factors),
                caps: Some(&caps),
                mu_star: 1.15f64.powf(1.0 / 12.0) - 1.0,
                z: 1.15,
                x: rng.random_range(0.5..1.5),
                x0: 1.0,
                r: 0.0,
                delta: None,
                horizon: 1.0,
            };
            // an unreachable robust target is a documented outcome, not a weight vector
            match strategies::allocate(&req) {
                Ok(w) => sum_err = sum_err.max((w.sum() - 1.0).abs()),
                Err(ctrl_mv::Error::Infeasible(_)) => declined += 1,
                Err(e) => panic!("{}: {e}", id.name()),
            }
        }
    }
    check(
        mv_err < 1e-6 && drmv_err < 1e-6 && rp_spread < 1e-8 && sum_err < 1e-10,
        format!("mv vs QP {mv_err:.1e}, drmv(0) vs QP {drmv_err:.1e} (want < 1e-6); rp contribution spread {rp_spread:.1e} (want < 1e-8); budget error {sum_err:.1e} (want < 1e-10), {declined} infeasible drmv windows"),
    )
}

fn c9() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let growth: Vec<f64> = (0..=252).map(|i| 1.001f64.powi(i)).collect();
    let (ret, vol) = metrics::annualize(&growth).unwrap();
    expect("constant growth return", (ret - (1.001f64.powi(252) - 1.0)).abs() < 1e-12 && (ret - 0.2865).abs() < 5e-4);
    expect("constant growth vol", vol < 1e-12);
    expect("flat wealth", metrics::annualize(&[1.0, 1.0, 1.0]).unwrap() == (0.0, 0.0));
    expect("bankruptcy", metrics::annualize(&[1.0, 0.4, 0.0]).unwrap().0 == -1.0);
    expect("monotone mdd", metrics::max_drawdown(&growth).unwrap() == 0.0);
    expect("monotone rt", metrics::recovery_time(&growth).unwrap() == Recovery::Days(0));
    expect("[1, .5, .75] mdd", metrics::max_drawdown(&[1.0, 0.5, 0.75]).unwrap() == 0.5);
    expect("[1, .5, .75] rt", metrics::recovery_time(&[1.0, 0.5, 0.75]).unwrap() == Recovery::NotRecovered);
    expect("[1, .5, 1] rt", metrics::recovery_time(&[1.0, 0.5, 1.0]).unwrap() == Recovery::Days(1));
    let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
    expect("wilcoxon p(a,a)", metrics::wilcoxon_paired(&a, &a).unwrap() == 0.5);
    check(failures.is_empty(), if failures.is_empty() { "all 10 fixtures exact".into() } else { format!("failed: {}", failures.join(", ")) })
}

fn c10() -> Outcome {
    let date = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
    let model = backtest::factor_market(6, 0.0, 10).unwrap();
    let spec = SyntheticPanelSpec { assets: 6, days: 252 * 8, start: date(2000, 1, 3), seed: 10, r: 0.0, shift: None };
    let panel = backtest::synthetic_panel(&model, &spec).unwrap();
    let ctrl = CtrlSettings { pretrain_episodes: 50, ..CtrlSettings::default() };
    let cfg = BacktestConfig { test_start: date(2005, 1, 1), window_months: 60, ctrl, ..BacktestConfig::default() };
    let base = backtest::run_backtest(&panel, &cfg, 3).unwrap();

    // accounting identity on every strategy and day
    let mut acct: f64 = 0.0;
    for r in &base.runs {
        let t = &r.trajectory;
        for k in 0..t.steps() {
            let x = t.wealth[k];
            if x > 0.0 {
                let want = (x + t.actions[k].dot(&r.simple_returns[k])).max(0.0);
                acct = acct.max((t.wealth[k + 1] - want).abs() / x.max(1.0));
            }
        }
    }

    // rewrite everything from a rebalance date on; earlier weights must not move
    let cut = base.rebalance_dates[base.rebalance_dates.len() / 2];
    let from = panel.dates.iter().position(|d| *d == cut).unwrap();
    let mut mutated = panel.clone();
    for i in from..panel.len() {
        for j in 0..panel.assets() {
            mutated.returns[(i, j)] = 0.002 - 0.7 * panel.returns[(i, j)];
        }
        for col in [&mut mutated.mkt, &mut mutated.smb, &mut mutated.hml, &mut mutated.mktrf].into_iter().flatten() {
            col[i] = -col[i];
        }
        if let Some(c) = mutated.caps.as_mut() {
            for j in 0..panel.assets() {
                c[(i, j)] *= 2.0 + j as f64;
            }
        }
    }
    let after = backtest::run_backtest(&mutated, &cfg, 3).unwrap();
    let leaked: Vec<&str> = base
        .runs
        .iter()
        .zip(&after.runs)
        .filter(|(a, b)| {
            let keep = |r: &backtest::StrategyRun| r.weights.iter().filter(|w| w.date <= cut).map(|w| w.weight.to_bits()).collect::<Vec<_>>();
            keep(a) != keep(b)
        })
        .map(|(a, _)| a.strategy.name())
        .collect();

    let rcfg = BacktestConfig {
        replications: 3,
        subset_size: 4,
        seed: 1,
        strategies: vec![BacktestStrategy::Market, BacktestStrategy::Classical(StrategyId::Lw), BacktestStrategy::Ctrl],
        ..cfg
    };
    let (r1, r2) = (backtest::replicate(&panel, &rcfg).unwrap(), backtest::replicate(&panel, &rcfg).unwrap());
    let reproducible = r1.tables == r2.tables && r1.summary == r2.summary;
    check(
        acct < 1e-12 && leaked.is_empty() && reproducible,
        format!("accounting residual {acct:.1e} (want < 1e-12); strategies reacting to future data: {leaked:?}; replicate bit-reproducible: {reproducible}"),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    if wanted(1) || wanted(2) || wanted(3) {
        let (c1, c2, c3) = c1_c2_c3();
        results.extend([(1, c1), (2, c2), (3, c3)].into_iter().filter(|r| wanted(r.0)));
    }
    for (n, f) in [(4, c4 as fn() -> Outcome), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10)] {
        if wanted(n) {
            results.push((n, f()));
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n}: PASS: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed in {:.0?}", results.len() - failed, started.elapsed());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
