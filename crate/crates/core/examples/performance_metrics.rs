//! Metrics of two wealth paths and a paired Wilcoxon test between them.

use ctrl_mv::metrics::{evaluate, wilcoxon_paired};

fn main() -> ctrl_mv::Result<()> {
    let days = 756;
    let a: Vec<f64> = (0..=days).scan(1.0, |x, i| {
        let v = *x;
        *x *= 1.0 + 0.0006 + 0.012 * (i as f64 * 0.9).sin();
        Some(v)
    }).collect();
    let b: Vec<f64> = (0..=days).scan(1.0, |x, i| {
        let v = *x;
        *x *= 1.0 + 0.0003 + 0.015 * (i as f64 * 1.3).cos();
        Some(v)
    }).collect();
    for (name, path) in [("a", &a), ("b", &b)] {
        let m = evaluate(path, 0.01)?;
        println!(
            "{name}: return {:.4}, vol {:.4}, Sharpe {:.3?}, Sortino {:.3?}, Calmar {:.3?}, MDD {:.4}, RT {:?}",
            m.ann_return, m.ann_vol, m.sharpe, m.sortino, m.calmar, m.mdd, m.rt
        );
    }
    // quarterly Sharpe ratios as paired samples
    let quarterly = |p: &[f64]| -> ctrl_mv::Result<Vec<f64>> {
        p.chunks(63).filter(|c| c.len() > 2).map(|c| evaluate(c, 0.0).map(|m| m.sharpe.unwrap_or(0.0))).collect()
    };
    println!("Wilcoxon p(a > b) on quarterly Sharpe ratios: {:.4}", wilcoxon_paired(&quarterly(&a)?, &quarterly(&b)?)?);
    Ok(())
}
