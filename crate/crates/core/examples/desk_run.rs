//! Quick end-to-end desk run with timing, useful for eyeballing the
//! pipeline before touching configs.

use fedscrub::experiment::{
    prepare_data, run_pretrain, run_retrain, run_unlearn, target_rule_from_retrain,
    ExperimentConfig,
};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    if let Some(seed) = std::env::args().nth(1) {
        cfg.seed = seed.parse()?;
    }
    if let Some(bias) = std::env::args().nth(2) {
        cfg.fl.bias_probability = bias.parse()?;
    }
    let t0 = Instant::now();
    let data = prepare_data(&cfg)?;
    println!("data ready: {} train / {} test ({:.1?})", data.train.len(), data.test.len(), t0.elapsed());

    let t = Instant::now();
    let pre = run_pretrain(&cfg, &data)?;
    for r in pre.history.iter().step_by(40) {
        println!("  round {:>3}: U={:?} R={:?}", r.round, r.u_accuracy, r.r_accuracy);
    }
    let last = pre.history.last().unwrap();
    println!(
        "pretrain: {} rounds, U={:?} R={:?} ({:.1?})",
        pre.history.len(),
        last.u_accuracy,
        last.r_accuracy,
        t.elapsed()
    );

    let t = Instant::now();
    let retrain = run_retrain(&cfg, &data)?;
    let last = retrain.history.last().unwrap();
    println!(
        "retrain: {} rounds, U={:?} R={:?} ({:.1?})",
        retrain.history.len(),
        last.u_accuracy,
        last.r_accuracy,
        t.elapsed()
    );
    let target = target_rule_from_retrain(&retrain.history);
    println!("target rule: {target:?}");

    let t = Instant::now();
    let outcome = run_unlearn(&cfg, &data, &pre.model, target)?;
    for s in &outcome.snapshots {
        println!(
            "  stage {:<15} U={:?} R={:?} rounds={} converged={}",
            s.stage.to_string(),
            s.u_accuracy,
            s.r_accuracy,
            s.rounds,
            s.converged
        );
    }
    println!("unlearn done ({:.1?})", t.elapsed());

    if let Some(target) = target {
        let sp = fedscrub::eval::measure_speedup(&outcome.finetune_history, &retrain.history, target);
        println!("speedup: {sp:?}");
    }

    let t = Instant::now();
    let (fisher_snaps, _) = fedscrub::experiment::run_fisher(&cfg, &data, &pre.model, target)?;
    for s in &fisher_snaps {
        println!(
            "  fisher {:<10} U={:?} R={:?} rounds={} converged={}",
            s.rounds, s.u_accuracy, s.r_accuracy, s.rounds, s.converged
        );
    }
    println!("fisher done ({:.1?})", t.elapsed());
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
