//! Metrics: U/R-set accuracy, speedup, loss-threshold membership inference
//! and KL divergence of class-accuracy distributions; plus the JSON report.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fed::RoundResult;
use crate::model::PrunableModel;
use crate::nn::softmax_cross_entropy;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

const EVAL_CHUNK: usize = 256;

/// Argmax class predictions over a dataset.
pub fn predict(model: &PrunableModel, data: &LabeledDataset) -> Result<Vec<usize>> {
    let u = model.num_classes();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = crate::data::gather(data, chunk);
        let logits = model.forward(&batch.images)?;
        for row in logits.data().chunks_exact(u) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        let _ = &batch;
    }
    Ok(out)
}

/// Per-sample cross-entropy losses.
pub fn per_sample_losses(model: &PrunableModel, data: &LabeledDataset) -> Result<Vec<f32>> {
    let u = model.num_classes();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = crate::data::gather(data, chunk);
        let logits = model.forward(&batch.images)?;
        for (row, &label) in logits.data().chunks_exact(u).zip(&batch.labels) {
            out.push(softmax_cross_entropy(row, label)?.0);
        }
    }
    Ok(out)
}

/// Accuracy (percent) on the target classes and on the rest, computed over
/// disjoint covers of the test set. An empty split is reported as `None`.
pub fn eval_accuracy_split(
    model: &PrunableModel,
    test: &LabeledDataset,
    targets: &[usize],
) -> Result<(Option<f64>, Option<f64>)> {
    let preds = predict(model, test)?;
    let (mut u_hit, mut u_total, mut r_hit, mut r_total) = (0usize, 0usize, 0usize, 0usize);
    for (&pred, &label) in preds.iter().zip(&test.labels) {
        if targets.contains(&label) {
            u_total += 1;
            if pred == label {
                u_hit += 1;
            }
        } else {
            r_total += 1;
            if pred == label {
                r_hit += 1;
            }
        }
    }
    let pct = |hit: usize, total: usize| {
        if total == 0 {
            None
        } else {
            Some(100.0 * hit as f64 / total as f64)
        }
    };
    Ok((pct(u_hit, u_total), pct(r_hit, r_total)))
}

/// Per-class accuracy (percent) for every class not in `targets`.
pub fn per_class_accuracy(
    model: &PrunableModel,
    test: &LabeledDataset,
    targets: &[usize],
) -> Result<Vec<f64>> {
    let preds = predict(model, test)?;
    let u = model.num_classes();
    let mut hit = vec![0usize; u];
    let mut total = vec![0usize; u];
    for (&pred, &label) in preds.iter().zip(&test.labels) {
        total[label] += 1;
        if pred == label {
            hit[label] += 1;
        }
    }
    let mut out = Vec::new();
    for class in 0..u {
        if targets.contains(&class) {
            continue;
        }
        if total[class] == 0 {
            return Err(Error::Empty(format!("class {class} has no test samples")));
        }
        out.push(100.0 * hit[class] as f64 / total[class] as f64);
    }
    Ok(out)
}

/// First 1-based round index at which R-set accuracy reached the target.
pub fn rounds_to_target(history: &[RoundResult], target: f64) -> Option<usize> {
    history
        .iter()
        .position(|r| r.r_accuracy.map_or(false, |a| a >= target))
        .map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub finetune_rounds: Option<usize>,
    pub retrain_rounds: Option<usize>,
    /// retrain rounds-to-target divided by fine-tune rounds-to-target;
    /// absent when either arm never reached the target.
    pub ratio: Option<f64>,
}

/// Compare the two arms' histories under a common target rule.
pub fn measure_speedup(
    finetune: &[RoundResult],
    retrain: &[RoundResult],
    target: f64,
) -> SpeedupReport {
    let ft = rounds_to_target(finetune, target);
    let rt = rounds_to_target(retrain, target);
    let ratio = match (ft, rt) {
        (Some(f), Some(r)) if f > 0 => Some(r as f64 / f as f64),
        _ => None,
    };
    if ratio.is_none() {
        log::warn!("speedup undefined: finetune={ft:?}, retrain={rt:?} rounds-to-target");
    }
    SpeedupReport { finetune_rounds: ft, retrain_rounds: rt, ratio }
}

/// Loss-threshold membership inference. Member/non-member pools are split
/// into calibration and evaluation halves; the threshold maximizing balanced
/// accuracy on the calibration half is applied to the evaluation half, whose
/// balanced accuracy (percent) is returned.
pub fn mia_attack(
    model: &PrunableModel,
    members: &LabeledDataset,
    non_members: &LabeledDataset,
    seed: u64,
) -> Result<f64> {
    if members.len() < 2 || non_members.len() < 2 {
        return Err(Error::Empty("mia needs at least two samples per pool".into()));
    }
    let mut member_losses = per_sample_losses(model, members)?;
    let mut non_member_losses = per_sample_losses(model, non_members)?;
    let mut rng = crate::seeding::rng_from(crate::seeding::derive_seed(seed, &[0x31a]));
    member_losses.shuffle(&mut rng);
    non_member_losses.shuffle(&mut rng);
    let (m_cal, m_eval) = member_losses.split_at(member_losses.len() / 2);
    let (n_cal, n_eval) = non_member_losses.split_at(non_member_losses.len() / 2);

    let mut candidates: Vec<f32> = m_cal.iter().chain(n_cal.iter()).copied().collect();
    candidates.sort_by(f32::total_cmp);
    candidates.dedup();
    let mut thresholds = Vec::with_capacity(candidates.len() + 1);
    thresholds.push(candidates[0] - 1.0);
    for pair in candidates.windows(2) {
        thresholds.push((pair[0] + pair[1]) / 2.0);
    }
    thresholds.push(candidates[candidates.len() - 1] + 1.0);

    let balanced = |members: &[f32], non_members: &[f32], tau: f32| {
        let tpr = members.iter().filter(|&&l| l < tau).count() as f64 / members.len() as f64;
        let tnr =
            non_members.iter().filter(|&&l| l >= tau).count() as f64 / non_members.len() as f64;
        (tpr + tnr) / 2.0
    };
    let mut best_tau = thresholds[0];
    let mut best_acc = -1.0;
    for &tau in &thresholds {
        let acc = balanced(m_cal, n_cal, tau);
        if acc > best_acc {
            best_acc = acc;
            best_tau = tau;
        }
    }
    Ok(100.0 * balanced(m_eval, n_eval, best_tau))
}

/// KL divergence between two normalized accuracy vectors (`eps`-smoothed).
pub fn kl_divergence_vectors(reference: &[f64], other: &[f64], eps: f64) -> Result<f64> {
    if reference.len() != other.len() {
        return Err(Error::Dimension(format!(
            "accuracy vectors of length {} vs {}",
            reference.len(),
            other.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Empty("no classes to compare".into()));
    }
    if reference.iter().all(|&v| v == 0.0) || other.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("all-zero accuracy vector".into()));
    }
    let norm = |v: &[f64]| {
        let sum: f64 = v.iter().map(|&x| x + eps).sum();
        v.iter().map(|&x| (x + eps) / sum).collect::<Vec<f64>>()
    };
    let p = norm(reference);
    let q = norm(other);
    Ok(p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum::<f64>().max(0.0))
}

/// KL divergence of per-class accuracy distributions over the non-target
/// classes, `KL(reference model || other model)`. The reference arm is the
/// retrained model.
pub fn kl_accuracy_dist(
    reference: &PrunableModel,
    other: &PrunableModel,
    test: &LabeledDataset,
    targets: &[usize],
) -> Result<f64> {
    let a = per_class_accuracy(reference, test, targets)?;
    let b = per_class_accuracy(other, test, targets)?;
    kl_divergence_vectors(&a, &b, 1e-9)
}

/// Per-stage metrics in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub u_set_accuracy: Option<f64>,
    pub r_set_accuracy: Option<f64>,
    pub rounds: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Attack flavor; always the loss-threshold variant here.
    pub attack: String,
    pub unlearned_success_pct: f64,
    pub retrained_success_pct: f64,
    pub gap_pp: f64,
}

/// Full evaluation report, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub target_classes: Vec<usize>,
    pub stages: Vec<StageMetrics>,
    pub target_r_accuracy: Option<f64>,
    pub speedup: Option<SpeedupReport>,
    pub mia: Option<MiaReport>,
    pub kl_divergence: Option<f64>,
    /// Echo of the experiment configuration that produced the run.
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Bounds checks on everything the report carries.
    pub fn validate(&self) -> Result<()> {
        let ok_pct = |v: Option<f64>| v.map_or(true, |x| (0.0..=100.0).contains(&x));
        for s in &self.stages {
            if !ok_pct(s.u_set_accuracy) || !ok_pct(s.r_set_accuracy) {
                return Err(Error::Config(format!("stage {} accuracy out of [0,100]", s.stage)));
            }
        }
        if let Some(sp) = &self.speedup {
            if sp.ratio.map_or(false, |r| r <= 0.0) {
                return Err(Error::Config("speedup must be positive".into()));
            }
        }
        if self.kl_divergence.map_or(false, |k| k < 0.0) {
            return Err(Error::Config("KL divergence must be non-negative".into()));
        }
        Ok(())
    }
}

/// Write the report as pretty JSON.
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    report.validate()?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Write per-round accuracies as `round,u_acc,r_acc` CSV.
pub fn write_rounds_csv(history: &[RoundResult], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "round,u_acc,r_acc")?;
    for r in history {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        writeln!(f, "{},{},{}", r.round, fmt(r.u_accuracy), fmt(r.r_accuracy))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(accs: &[f64]) -> Vec<RoundResult> {
        accs.iter()
            .enumerate()
            .map(|(i, &a)| RoundResult {
                round: i,
                u_accuracy: None,
                r_accuracy: Some(a),
                snapshot: None,
            })
            .collect()
    }

    #[test]
    fn identical_histories_give_unit_speedup() {
        let h = history(&[10.0, 50.0, 80.0]);
        let s = measure_speedup(&h, &h, 75.0);
        assert_eq!(s.ratio, Some(1.0));
    }

    #[test]
    fn eight_to_one_speedup_arithmetic() {
        let mut rt = vec![10.0; 399];
        rt.push(90.0);
        let mut ft = vec![10.0; 49];
        ft.push(90.0);
        let s = measure_speedup(&history(&ft), &history(&rt), 90.0);
        assert_eq!(s.finetune_rounds, Some(50));
        assert_eq!(s.retrain_rounds, Some(400));
        assert_eq!(s.ratio, Some(8.0));
    }

    #[test]
    fn unconverged_arms_are_flagged_undefined() {
        let s = measure_speedup(&history(&[10.0]), &history(&[10.0]), 90.0);
        assert_eq!(s.ratio, None);
        assert_eq!(s.finetune_rounds, None);
    }

    #[test]
    fn kl_of_identical_vectors_is_zero() {
        let v = vec![90.0, 80.0, 70.0];
        assert_eq!(kl_divergence_vectors(&v, &v, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_single_class_delta() {
        let a = vec![50.0, 50.0];
        let b = vec![50.0, 60.0];
        let eps = 1e-9;
        let got = kl_divergence_vectors(&a, &b, eps).unwrap();
        let p = [0.5, 0.5];
        let qs: f64 = 110.0 + 2.0 * eps;
        let q = [(50.0 + eps) / qs, (60.0 + eps) / qs];
        let expected: f64 = p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got > 0.0);
    }

    #[test]
    fn kl_rejects_all_zero_vectors() {
        assert!(kl_divergence_vectors(&[0.0, 0.0], &[1.0, 2.0], 1e-9).is_err());
    }

    #[test]
    fn report_validation_bounds() {
        let mut report = EvalReport {
            seed: 0,
            target_classes: vec![9],
            stages: vec![StageMetrics {
                stage: "raw".into(),
                u_set_accuracy: Some(50.0),
                r_set_accuracy: Some(150.0),
                rounds: 0,
                converged: true,
            }],
            target_r_accuracy: None,
            speedup: None,
            mia: None,
            kl_divergence: None,
            config: serde_json::Value::Null,
        };
        assert!(report.validate().is_err());
        report.stages[0].r_set_accuracy = Some(90.0);
        report.validate().unwrap();
    }
}
