//! Config-driven experiment drivers: dataset preparation, the four training
//! arms (pretrain / unlearn / retrain / fisher) and report assembly. The CLI
//! and the acceptance suite both run through these.

use crate::data::{
    exclude_class, load_cifar10_binary, load_cifar10_test, partition_noniid, synth_blobs,
    ClientShard, LabeledDataset, PartitionConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    eval_accuracy_split, kl_accuracy_dist, measure_speedup, mia_attack, EvalReport, MiaReport,
    StageMetrics,
};
use crate::fed::{train_loop, FlConfig, FlMethod, RoundResult, StopRule};
use crate::model::{build_model, three_block_cnn, two_block_cnn, ModelSpec, PrunableModel};
use crate::scrub::SelectionMode;
use crate::seeding::derive_seed;
use crate::unlearn::{
    federated_unlearn, fine_tune, fisher_unlearn_baseline, FisherConfig, ReprParticipants,
    ScoreRefresh, Stage, StageSnapshot, UnlearnOptions, UnlearnOutcome, UnlearnRequest,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Synthetic class-conditioned blobs (the desk-scale default).
    SynthBlobs {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        /// Held-out pool for membership inference non-members.
        holdout_per_class: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    /// CIFAR-10 binary batches on disk.
    Cifar10 {
        dir: PathBuf,
        /// Truncate the train split to the first N samples (0 = all).
        #[serde(default)]
        train_subset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// "three_block" or "two_block".
    pub name: String,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlSection {
    pub total_clients: usize,
    pub participants_per_round: usize,
    pub method: FlMethod,
    pub local_epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub bias_probability: f64,
    pub pretrain_rounds: usize,
    pub retrain_rounds: usize,
    #[serde(default)]
    pub weighted_aggregation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnSection {
    pub targets: Vec<usize>,
    pub ratio: f32,
    pub finetune_budget: usize,
    /// Sample this many representation uploaders; 0 means every client.
    #[serde(default)]
    pub repr_sample: usize,
    #[serde(default = "default_score_refresh")]
    pub score_refresh: String,
    #[serde(default = "default_selection")]
    pub selection: String,
}

fn default_score_refresh() -> String {
    "mask_columns".into()
}

fn default_selection() -> String {
    "per_layer".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherSection {
    pub sigma: f32,
    pub damping: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub mia: bool,
    pub kl: bool,
}

/// Whole-experiment configuration, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub fl: FlSection,
    pub unlearn: UnlearnSection,
    pub fisher: FisherSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 11,
            deterministic: true,
            dataset: DatasetConfig::SynthBlobs {
                classes: 10,
                train_per_class: 150,
                test_per_class: 150,
                holdout_per_class: 150,
                channels: 1,
                height: 12,
                width: 12,
            },
            model: ModelConfig { name: "three_block".into(), widths: vec![8, 16, 32] },
            fl: FlSection {
                total_clients: 20,
                participants_per_round: 5,
                method: FlMethod::FedSgd,
                local_epochs: 1,
                learning_rate: 0.1,
                batch_size: 64,
                bias_probability: 0.1,
                pretrain_rounds: 400,
                retrain_rounds: 450,
                weighted_aggregation: false,
            },
            unlearn: UnlearnSection {
                targets: vec![9],
                ratio: 0.3,
                finetune_budget: 150,
                repr_sample: 0,
                score_refresh: default_score_refresh(),
                selection: default_selection(),
            },
            fisher: FisherSection { sigma: 1e-2, damping: 1e-1 },
            eval: EvalSection { mia: true, kl: true },
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec()?.validate()?;
        self.fl_config(1).validate()?;
        self.unlearn_request(None).validate(self.num_classes())?;
        self.unlearn_options()?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::SynthBlobs { classes, .. } => *classes,
            DatasetConfig::Cifar10 { .. } => 10,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let input = match &self.dataset {
            DatasetConfig::SynthBlobs { channels, height, width, .. } => {
                (*channels, *height, *width)
            }
            DatasetConfig::Cifar10 { .. } => (3, 32, 32),
        };
        match (self.model.name.as_str(), self.model.widths.as_slice()) {
            ("three_block", &[a, b, c]) => Ok(three_block_cnn(input, self.num_classes(), [a, b, c])),
            ("two_block", &[a, b]) => Ok(two_block_cnn(input, self.num_classes(), [a, b])),
            (name, widths) => Err(Error::Config(format!(
                "unknown model '{name}' with {} widths",
                widths.len()
            ))),
        }
    }

    pub fn fl_config(&self, max_rounds: usize) -> FlConfig {
        FlConfig {
            total_clients: self.fl.total_clients,
            participants_per_round: self.fl.participants_per_round,
            method: self.fl.method,
            local_epochs: self.fl.local_epochs,
            learning_rate: self.fl.learning_rate,
            batch_size: self.fl.batch_size,
            max_rounds,
            seed: self.seed,
            shuffle_batches: true,
            weighted_aggregation: self.fl.weighted_aggregation,
        }
    }

    pub fn unlearn_request(&self, target_r_accuracy: Option<f64>) -> UnlearnRequest {
        UnlearnRequest {
            targets: self.unlearn.targets.clone(),
            ratio: self.unlearn.ratio,
            finetune_budget: self.unlearn.finetune_budget,
            target_r_accuracy,
        }
    }

    pub fn unlearn_options(&self) -> Result<UnlearnOptions> {
        let repr_participants = if self.unlearn.repr_sample == 0 {
            ReprParticipants::All
        } else {
            ReprParticipants::Sample(self.unlearn.repr_sample)
        };
        let score_refresh = match self.unlearn.score_refresh.as_str() {
            "mask_columns" => ScoreRefresh::MaskColumns,
            "re_extract" => ScoreRefresh::ReExtract,
            other => return Err(Error::Config(format!("unknown score_refresh '{other}'"))),
        };
        let selection_mode = match self.unlearn.selection.as_str() {
            "per_layer" => SelectionMode::PerLayerTopFraction,
            "global_threshold" => SelectionMode::GlobalThreshold,
            other => return Err(Error::Config(format!("unknown selection '{other}'"))),
        };
        Ok(UnlearnOptions {
            repr_participants,
            score_refresh,
            selection_mode,
            weighted_repr: false,
        })
    }

    pub fn fisher_config(&self) -> FisherConfig {
        FisherConfig { sigma: self.fisher.sigma, damping: self.fisher.damping }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Materialized data for one experiment: splits plus client shards.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Same distribution as train but never trained on (MIA non-members).
    pub holdout: LabeledDataset,
    pub shards: ClientShard,
}

/// Build datasets and partition the train split among clients.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DeskData> {
    let (train, test, holdout) = match &cfg.dataset {
        DatasetConfig::SynthBlobs {
            classes,
            train_per_class,
            test_per_class,
            holdout_per_class,
            channels,
            height,
            width,
        } => {
            let shape = (*channels, *height, *width);
            let train = synth_blobs(*classes, *train_per_class, shape, derive_seed(cfg.seed, &[1]))?;
            let test = synth_blobs(*classes, *test_per_class, shape, derive_seed(cfg.seed, &[2]))?;
            let holdout =
                synth_blobs(*classes, *holdout_per_class, shape, derive_seed(cfg.seed, &[3]))?;
            (train, test, holdout)
        }
        DatasetConfig::Cifar10 { dir, train_subset } => {
            let mut train = load_cifar10_binary(dir)?;
            if *train_subset > 0 && *train_subset < train.len() {
                let keep: Vec<usize> = (0..*train_subset).collect();
                train = train.subset(&keep);
            }
            let full_test = load_cifar10_test(dir)?;
            let half = full_test.len() / 2;
            let test = full_test.subset(&(0..half).collect::<Vec<_>>());
            let holdout = full_test.subset(&(half..full_test.len()).collect::<Vec<_>>());
            (train, test, holdout)
        }
    };
    let shards = partition_noniid(
        &train,
        &PartitionConfig {
            num_clients: cfg.fl.total_clients,
            bias_probability: cfg.fl.bias_probability,
            num_classes: cfg.num_classes(),
            seed: derive_seed(cfg.seed, &[4]),
        },
    )?;
    Ok(DeskData { train, test, holdout, shards })
}

/// A trained arm: final model plus its round history.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub model: PrunableModel,
    pub history: Vec<RoundResult>,
    pub converged: bool,
}

fn eval_against<'a>(
    test: &'a LabeledDataset,
    targets: &'a [usize],
) -> impl FnMut(&PrunableModel) -> Result<(Option<f64>, Option<f64>)> + 'a {
    move |m| eval_accuracy_split(m, test, targets)
}

/// Train the global model from scratch on all data.
pub fn run_pretrain(cfg: &ExperimentConfig, data: &DeskData) -> Result<TrainArtifacts> {
    let spec = cfg.model_spec()?;
    let mut model = build_model(&spec, derive_seed(cfg.seed, &[10]))?;
    let fl = cfg.fl_config(cfg.fl.pretrain_rounds);
    let targets = cfg.unlearn.targets.clone();
    let history = train_loop(&mut model, &data.train, &data.shards, &fl, StopRule::Budget, |m, _| {
        eval_accuracy_split(m, &data.test, &targets)
    })?;
    Ok(TrainArtifacts { model, history, converged: true })
}

/// Retrain baseline: fresh initialization, target-free shards, full budget.
pub fn run_retrain(cfg: &ExperimentConfig, data: &DeskData) -> Result<TrainArtifacts> {
    let spec = cfg.model_spec()?;
    let targets = cfg.unlearn.targets.clone();
    let shards = data.shards.exclude_targets(&data.train.labels, &targets);
    let fl = cfg.fl_config(cfg.fl.retrain_rounds);
    let (model, history, converged) = crate::unlearn::full_retrain_baseline(
        &spec,
        derive_seed(cfg.seed, &[11]),
        &data.train,
        &shards,
        &fl,
        cfg.fl.retrain_rounds,
        StopRule::Budget,
        eval_against(&data.test, &targets),
    )?;
    Ok(TrainArtifacts { model, history, converged })
}

/// The fine-tune stop target derived from the converged retrain arm:
/// its final R-set accuracy minus half a percentage point.
pub fn target_rule_from_retrain(retrain_history: &[RoundResult]) -> Option<f64> {
    retrain_history.last().and_then(|r| r.r_accuracy).map(|r| r - 0.5)
}

/// Run the TF-IDF pruning pipeline against a pretrained model.
pub fn run_unlearn(
    cfg: &ExperimentConfig,
    data: &DeskData,
    pretrained: &PrunableModel,
    target_r_accuracy: Option<f64>,
) -> Result<UnlearnOutcome> {
    let request = cfg.unlearn_request(target_r_accuracy);
    let opts = cfg.unlearn_options()?;
    let fl = cfg.fl_config(request.finetune_budget);
    let targets = request.targets.clone();
    federated_unlearn(
        pretrained,
        &data.train,
        &data.shards,
        &request,
        &fl,
        &opts,
        eval_against(&data.test, &targets),
    )
}

/// Fisher baseline arm: corrective step plus noise on participant data, then
/// the same fine-tuning as the pruning path.
pub fn run_fisher(
    cfg: &ExperimentConfig,
    data: &DeskData,
    pretrained: &PrunableModel,
    target_r_accuracy: Option<f64>,
) -> Result<(Vec<StageSnapshot>, Vec<RoundResult>)> {
    let targets = cfg.unlearn.targets.clone();
    let fl = cfg.fl_config(cfg.unlearn.finetune_budget);
    let participants = crate::fed::select_clients(
        cfg.fl.total_clients,
        cfg.fl.participants_per_round,
        usize::MAX - 1,
        cfg.seed,
    )?;
    let excluded = data.shards.exclude_targets(&data.train.labels, &targets);
    let shard_refs: Vec<&[usize]> = participants.iter().map(|&id| excluded.client(id)).collect();
    let injected = fisher_unlearn_baseline(
        pretrained,
        &data.train,
        &shard_refs,
        &cfg.fisher_config(),
        derive_seed(cfg.seed, &[12]),
    )?;
    let mut eval = eval_against(&data.test, &targets);
    let (u, r) = eval(&injected)?;
    let mut snapshots = vec![StageSnapshot {
        stage: Stage::Fisher,
        model: injected.clone(),
        u_accuracy: u,
        r_accuracy: r,
        rounds: 0,
        converged: true,
    }];
    let mut model = injected;
    let stop = target_r_accuracy.map(StopRule::TargetRAccuracy).unwrap_or(StopRule::Budget);
    let (history, converged) = fine_tune(
        &mut model,
        &data.train,
        &excluded,
        &targets,
        &fl,
        cfg.unlearn.finetune_budget,
        stop,
        &mut eval,
    )?;
    let (u, r) = eval(&model)?;
    snapshots.push(StageSnapshot {
        stage: Stage::Fisher,
        model,
        u_accuracy: u,
        r_accuracy: r,
        rounds: history.len(),
        converged,
    });
    Ok((snapshots, history))
}

fn stage_metrics(s: &StageSnapshot) -> StageMetrics {
    StageMetrics {
        stage: s.stage.to_string(),
        u_set_accuracy: s.u_accuracy,
        r_set_accuracy: s.r_accuracy,
        rounds: s.rounds,
        converged: s.converged,
    }
}

/// Assemble the evaluation report from the unlearn and retrain arms.
pub fn build_report(
    cfg: &ExperimentConfig,
    data: &DeskData,
    unlearn: &UnlearnOutcome,
    retrain: &TrainArtifacts,
    target_r_accuracy: Option<f64>,
) -> Result<EvalReport> {
    let targets = &cfg.unlearn.targets;
    let mut stages: Vec<StageMetrics> = unlearn.snapshots.iter().map(stage_metrics).collect();
    let (rt_u, rt_r) = eval_accuracy_split(&retrain.model, &data.test, targets)?;
    stages.push(StageMetrics {
        stage: Stage::Retrained.to_string(),
        u_set_accuracy: rt_u,
        r_set_accuracy: rt_r,
        rounds: retrain.history.len(),
        converged: retrain.converged,
    });

    let speedup = target_r_accuracy
        .map(|t| measure_speedup(&unlearn.finetune_history, &retrain.history, t));

    let unlearned_model = &unlearn
        .snapshots
        .iter()
        .rev()
        .find(|s| s.stage == Stage::FineTuned)
        .ok_or_else(|| Error::Empty("no fine-tuned snapshot".into()))?
        .model;

    let mia = if cfg.eval.mia {
        let members = data.train.subset(&data.train.indices_of_classes(targets));
        let non_members = data.holdout.subset(&data.holdout.indices_of_classes(targets));
        let seed = derive_seed(cfg.seed, &[13]);
        let ours = mia_attack(unlearned_model, &members, &non_members, seed)?;
        let theirs = mia_attack(&retrain.model, &members, &non_members, seed)?;
        Some(MiaReport {
            attack: "threshold-mia".into(),
            unlearned_success_pct: ours,
            retrained_success_pct: theirs,
            gap_pp: (ours - theirs).abs(),
        })
    } else {
        None
    };

    let kl = if cfg.eval.kl {
        Some(kl_accuracy_dist(&retrain.model, unlearned_model, &data.test, targets)?)
    } else {
        None
    };

    let report = EvalReport {
        seed: cfg.seed,
        target_classes: targets.clone(),
        stages,
        target_r_accuracy,
        speedup,
        mia,
        kl_divergence: kl,
        config: cfg.to_json(),
    };
    report.validate()?;
    Ok(report)
}

/// Convenience path used by tests and `compare`: pretrain, retrain, unlearn
/// against the retrain-derived target, then report.
pub fn run_full_comparison(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let data = prepare_data(cfg)?;
    let pre = run_pretrain(cfg, &data)?;
    let retrain = run_retrain(cfg, &data)?;
    let target = target_rule_from_retrain(&retrain.history);
    let outcome = run_unlearn(cfg, &data, &pre.model, target)?;
    build_report(cfg, &data, &outcome, &retrain, target)
}

/// Dataset excluding the targets, for vacuous-evaluation guards.
pub fn rset_only(test: &LabeledDataset, targets: &[usize]) -> LabeledDataset {
    exclude_class(test, targets)
}
