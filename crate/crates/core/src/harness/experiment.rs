use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{Cell, DataSource, ExperimentConfig, Technique};
use super::data::{load_idx, synth_digits, Dataset};
use crate::error::{Error, Result};
use crate::math::{deviation_norm_sq, ParamVector};
use crate::mixreg::{Anchor, MixPolicy, Regularizer};
use crate::net::{self, NetworkSpec};
use crate::optim::{fit, TrainConfig};

/// Source and target splits of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub source_train: Dataset,
    pub source_val: Dataset,
    pub target_train: Dataset,
    pub target_val: Dataset,
}

impl ExperimentData {
    pub fn input_dim(&self) -> usize {
        self.source_train.dim()
    }

    pub fn classes(&self) -> usize {
        self.source_train.classes().max(self.target_train.classes())
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let (source, target) = match &cfg.data.source {
        DataSource::Synthetic(params) => synth_digits(params, cfg.seed)?,
        DataSource::Idx {
            source_images,
            source_labels,
            target_images,
            target_labels,
        } => (
            load_idx(source_images, source_labels)?,
            load_idx(target_images, target_labels)?,
        ),
    };
    if source.dim() != target.dim() {
        return Err(Error::config(format!(
            "source inputs have {} features, target inputs {}",
            source.dim(),
            target.dim()
        )));
    }
    let (source_train, source_val) = source.split(cfg.data.val_fraction, cfg.seed)?;
    let (mut target_train, target_val) =
        target.split(cfg.data.val_fraction, cfg.seed.wrapping_add(1))?;
    if let Some(k) = cfg.data.target_train_per_class {
        target_train = target_train.take_per_class(k);
    }
    Ok(ExperimentData {
        source_train,
        source_val,
        target_train,
        target_val,
    })
}

fn train_on(
    spec: &NetworkSpec,
    w: &mut ParamVector,
    reg: &Regularizer,
    train: &TrainConfig,
    data: &Dataset,
    val: &Dataset,
) -> Result<(Vec<EpochRecord>, f64)> {
    let mut epochs = Vec::with_capacity(train.epochs);
    let report = fit(
        spec,
        w,
        reg,
        train,
        data.len(),
        |idx| data.batch(idx),
        |stats, w| {
            epochs.push(EpochRecord {
                epoch: stats.epoch,
                train_loss: stats.train_loss,
                val_accuracy: net::accuracy(spec, w, val.inputs(), val.labels())?,
                drift: stats.drift,
            });
            Ok(())
        },
    )?;
    Ok((epochs, report.secs_per_step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainTrial {
    pub epochs: usize,
    pub repeat: usize,
    pub seed: u64,
    /// `None` when the run diverged.
    pub val_accuracy: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub trials: Vec<PretrainTrial>,
}

/// Pretraining regularizer: dropout on hidden units and decay toward the origin.
pub fn pretrain_policy(cfg: &ExperimentConfig) -> Result<MixPolicy> {
    Ok(MixPolicy::dropout(cfg.pretrain.dropout)?
        .excluding([0])
        .with_decay(Anchor::Origin, cfg.pretrain.weight_decay))
}

/// Trains one model per (epoch count, repeat) on the source task and keeps
/// the one with the best source validation accuracy.
pub fn pretrain(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<PretrainOutcome> {
    let spec = cfg.network_spec(data.input_dim(), data.classes());
    spec.validate()?;
    let reg = Regularizer::new(pretrain_policy(cfg)?, spec.layout())?;
    let jobs: Vec<(usize, usize)> = cfg
        .pretrain
        .epoch_grid
        .iter()
        .flat_map(|&e| (0..cfg.pretrain.repeats).map(move |r| (e, r)))
        .collect();
    let results: Vec<(PretrainTrial, Option<ParamVector>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(epochs, repeat))| {
            let seed = cfg.seed.wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = net::init_params(&spec, &mut rng);
            let train = cfg.pretrain.train_config(epochs, seed);
            let outcome = train_on(
                &spec,
                &mut w,
                &reg,
                &train,
                &data.source_train,
                &data.source_val,
            )
            .and_then(|_| {
                net::accuracy(
                    &spec,
                    &w,
                    data.source_val.inputs(),
                    data.source_val.labels(),
                )
            });
            match outcome {
                Ok(acc) => Ok((
                    PretrainTrial {
                        epochs,
                        repeat,
                        seed,
                        val_accuracy: Some(acc),
                        failure: None,
                    },
                    Some(w),
                )),
                Err(e @ Error::Numeric { .. }) => Ok((
                    PretrainTrial {
                        epochs,
                        repeat,
                        seed,
                        val_accuracy: None,
                        failure: Some(e.to_string()),
                    },
                    None,
                )),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let best = results
        .iter()
        .enumerate()
        .filter_map(|(i, (t, _))| t.val_accuracy.map(|a| (i, a)))
        .fold(None, |best: Option<(usize, f64)>, (i, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((i, a)),
        });
    let Some((index, accuracy)) = best else {
        let reasons: Vec<String> = results
            .iter()
            .filter_map(|(t, _)| t.failure.clone())
            .collect();
        return Err(Error::numeric(format!(
            "every pretraining run diverged: {}",
            reasons.join("; ")
        )));
    };
    let mut trials = Vec::with_capacity(results.len());
    let mut params = None;
    for (i, (t, w)) in results.into_iter().enumerate() {
        if i == index {
            params = w;
        }
        trials.push(t);
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            spec,
            params: params.expect("best run has parameters"),
            source_val_accuracy: accuracy,
            source_val_fingerprint: data.source_val.fingerprint(),
        },
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// `||w_t - w_0||` at the end of the epoch.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub technique: Technique,
    pub p: f64,
    pub restart: usize,
    pub seed: u64,
    /// Target validation accuracy.
    pub dev_score: f64,
    /// `||w_ft - w_pre||^2`.
    pub deviation_sq: f64,
    /// Source validation accuracy after finetuning.
    pub source_acc: f64,
    /// NaN unless timing is enabled.
    pub secs_per_step: f64,
    pub epochs: Vec<EpochRecord>,
    pub failure: Option<String>,
}

/// Finetuning regularizer for a sweep cell. Hidden units are mixed exactly
/// where pretraining applied dropout.
pub fn finetune_policy(
    cell: &Cell,
    w_pre: &ParamVector,
    head: Option<(usize, &ParamVector)>,
) -> Result<MixPolicy> {
    let policy = match cell.technique {
        Technique::Mixout => MixPolicy::mixout(Anchor::PretrainedSnapshot(w_pre.clone()), cell.p)?,
        Technique::Dropout => MixPolicy::dropout(cell.p)?,
    }
    .excluding([0]);
    Ok(match (cell.technique, head) {
        (Technique::Mixout, Some((layer, w0))) => {
            policy.with_layer_anchor(layer, Anchor::InitSnapshot(w0.clone()))
        }
        _ => policy,
    })
}

fn check_checkpoint(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ckpt: &Checkpoint,
) -> Result<()> {
    let spec = cfg.network_spec(data.input_dim(), data.classes());
    if ckpt.spec != spec {
        return Err(Error::config(
            "checkpoint network does not match the configured network",
        ));
    }
    if ckpt.source_val_fingerprint != data.source_val.fingerprint() {
        return Err(Error::Consistency(
            "checkpoint was pretrained on a different source validation split".into(),
        ));
    }
    Ok(())
}

/// Finetunes the checkpoint on the target task for one restart of `cell`.
///
/// Divergence is recorded in the returned record; configuration problems are errors.
pub fn finetune(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ckpt: &Checkpoint,
    cell: &Cell,
    restart: usize,
) -> Result<RunRecord> {
    check_checkpoint(cfg, data, ckpt)?;
    let spec = &ckpt.spec;
    let seed = cfg.seed.wrapping_add(restart as u64);
    let w_pre = &ckpt.params;
    let mut w = w_pre.clone();
    let head = if cfg.sweep.reinit_head {
        let layer = spec.output_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        net::reinit_layer(&mut w, layer, &mut rng)?;
        Some(layer)
    } else {
        None
    };
    let w0 = w.clone();
    let policy = finetune_policy(cell, w_pre, head.map(|l| (l, &w0)))?;
    let reg = Regularizer::new(policy, spec.layout())?;
    let train = TrainConfig {
        seed,
        ..cfg.finetune.clone()
    };
    let mut record = RunRecord {
        technique: cell.technique,
        p: cell.p,
        restart,
        seed,
        dev_score: f64::NAN,
        deviation_sq: f64::NAN,
        source_acc: f64::NAN,
        secs_per_step: f64::NAN,
        epochs: Vec::new(),
        failure: None,
    };
    match train_on(
        spec,
        &mut w,
        &reg,
        &train,
        &data.target_train,
        &data.target_val,
    ) {
        Ok((epochs, secs)) => {
            record.epochs = epochs;
            if cfg.sweep.timing {
                record.secs_per_step = secs;
            }
            record.dev_score =
                net::accuracy(spec, &w, data.target_val.inputs(), data.target_val.labels())?;
            record.source_acc =
                net::accuracy(spec, &w, data.source_val.inputs(), data.source_val.labels())?;
            record.deviation_sq = deviation_norm_sq(&w, w_pre)?;
        }
        Err(e @ Error::Numeric { .. }) => record.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub technique: Technique,
    pub p: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    /// Runs at or below the degenerate threshold, plus failed runs.
    pub degenerate_count: usize,
}

/// Aggregates dev scores per (technique, p), in first-appearance order.
pub fn summarize(records: &[(Technique, f64, f64)], threshold: f64) -> Vec<SummaryRow> {
    let mut cells: Vec<(Technique, f64)> = Vec::new();
    for &(t, p, _) in records {
        if !cells
            .iter()
            .any(|&(ct, cp)| ct == t && cp.to_bits() == p.to_bits())
        {
            cells.push((t, p));
        }
    }
    cells
        .into_iter()
        .map(|(t, p)| {
            let scores: Vec<f64> = records
                .iter()
                .filter(|&&(rt, rp, _)| rt == t && rp.to_bits() == p.to_bits())
                .map(|&(_, _, s)| s)
                .collect();
            let ok: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
            let n = ok.len() as f64;
            let mean = ok.iter().sum::<f64>() / n;
            let std = (ok.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
            let max = ok.iter().copied().fold(f64::NAN, f64::max);
            let degenerate_count = scores
                .iter()
                .filter(|&&s| !s.is_finite() || s <= threshold)
                .count();
            SummaryRow {
                technique: t,
                p,
                mean,
                std,
                max,
                degenerate_count,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub degenerate_threshold: f64,
}

pub fn degenerate_threshold(cfg: &ExperimentConfig, data: &ExperimentData) -> f64 {
    data.target_val.majority_fraction() + cfg.sweep.degenerate_margin
}

/// Runs every (cell, restart) pair. Records come back in
/// (technique, p, restart) order whatever the worker scheduling.
pub fn sweep(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ckpt: &Checkpoint,
) -> Result<SweepOutcome> {
    check_checkpoint(cfg, data, ckpt)?;
    let jobs: Vec<(Cell, usize)> = cfg
        .cells()
        .into_iter()
        .flat_map(|c| (0..cfg.sweep.restarts).map(move |r| (c, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|(cell, restart)| finetune(cfg, data, ckpt, cell, *restart))
        .collect::<Result<_>>()?;
    let threshold = degenerate_threshold(cfg, data);
    let keyed: Vec<(Technique, f64, f64)> = records
        .iter()
        .map(|r| (r.technique, r.p, r.dev_score))
        .collect();
    Ok(SweepOutcome {
        summary: summarize(&keyed, threshold),
        records,
        degenerate_threshold: threshold,
    })
}
