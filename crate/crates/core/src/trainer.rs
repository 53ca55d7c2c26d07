//! Two-stage training: independent cross-entropy pre-training followed by
//! collaborative training with mutual and self distillation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, make_batch, Batch, Dataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, total_loss, Diagnostics, LossParts, LossWeights, Terms, TupleSets,
};
use crate::models::{PeerNetwork, Prediction};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Ablation variants. `A` is the full objective; each other variant drops
/// one transfer strategy.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Variant {
    #[default]
    A,
    /// No self-distillation.
    B,
    /// No mutual KL.
    C,
    /// No relation transfer.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn terms(self) -> Terms {
        match self {
            Variant::A => Terms::ALL,
            Variant::B => Terms {
                self_distill: false,
                ..Terms::ALL
            },
            Variant::C => Terms {
                mutual_kl: false,
                ..Terms::ALL
            },
            Variant::D => Terms {
                relation: false,
                ..Terms::ALL
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        }
    }
}

/// Whether the second peer sees the first peer's freshly updated parameters
/// within a batch (`Sequential`) or both peers use pre-step outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    Sequential,
    Simultaneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub variant: Variant,
    pub update_order: UpdateOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 20,
            stage2_epochs: 20,
            batch_size: 32,
            lr: 0.1,
            lr_milestones: vec![6, 12, 16],
            lr_factor: 0.2,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            weights: LossWeights::default(),
            variant: Variant::A,
            update_order: UpdateOrder::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::config("lr_factor", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "lr_milestones",
                "must be strictly increasing",
            ));
        }
        if self
            .lr_milestones
            .last()
            .is_some_and(|&m| m >= self.stage2_epochs)
        {
            return Err(Error::config(
                "lr_milestones",
                "must be below stage2_epochs",
            ));
        }
        self.weights.validate()
    }

    /// Objective terms after applying the ablation variant.
    pub fn terms(&self) -> Terms {
        self.variant.terms()
    }
}

/// Learning rate for `epoch`: the base rate times `lr_factor` for every
/// milestone at or before `epoch`.
///
/// The product is rounded to 12 significant digits so that decimal schedules
/// (0.1 → 0.02 → 0.004) land on their decimal values instead of
/// accumulating binary rounding.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    let raw = (0..decays).fold(cfg.lr, |lr, _| lr * cfg.lr_factor);
    format!("{raw:.11e}").parse().unwrap_or(raw)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn for_network(net: &PeerNetwork) -> Self {
        Self::new(net.parameters())
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// SGD with momentum and L2 weight decay:
/// `g' = g + wd·w;  v ← μ·v + g';  w ← w − η·v`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::config(
            "parameters",
            "parameter, gradient and velocity counts differ",
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                param: format!("#{i}"),
            });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g_decayed = gi + weight_decay * *w;
            *vi = momentum * *vi + g_decayed;
            *w -= lr * *vi;
        }
    }
    Ok(())
}

fn step_network(
    net: &mut PeerNetwork,
    state: &mut OptimizerState,
    grads: Vec<Tensor>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = net.parameter_names();
    sgd_step(
        net.parameters_mut(),
        &grads,
        state,
        lr,
        cfg.momentum,
        cfg.weight_decay,
    )
    .map_err(|e| match e {
        Error::NonFiniteGradient { param } => {
            let idx: usize = param.trim_start_matches('#').parse().unwrap_or(0);
            Error::NonFiniteGradient {
                param: names.get(idx).cloned().unwrap_or(param),
            }
        }
        other => other,
    })
}

/// Fraction of samples whose highest logit (lowest index on ties) matches the
/// label.
pub fn evaluate_top1(net: &PeerNetwork, ds: &Dataset) -> Result<f64> {
    const CHUNK: usize = 1024;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let features = ds.features().select_rows(chunk)?;
        let logits = net.predict(&features)?.logits;
        let m = logits.shape()[1];
        for (row, &idx) in logits.data().chunks(m).zip(chunk) {
            if argmax(row) == ds.labels()[idx] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One CSV row: one network after one epoch of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub stage: u8,
    /// 1 or 2.
    pub net: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_kl_mutual: f64,
    pub loss_dd: f64,
    pub loss_ad: f64,
    pub loss_sd: f64,
    pub train_top1: f64,
    pub test_top1: f64,
    pub pi_collapses: u64,
    pub triples_skipped: u64,
}

pub const METRICS_HEADER: &str = "epoch,stage,net,lr,loss_total,loss_ce,loss_kl_mutual,loss_dd,loss_ad,loss_sd,train_top1,test_top1,pi_collapses,triples_skipped";

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.net,
            sig9(self.lr),
            sig9(self.loss_total),
            sig9(self.loss_ce),
            sig9(self.loss_kl_mutual),
            sig9(self.loss_dd),
            sig9(self.loss_ad),
            sig9(self.loss_sd),
            sig9(self.train_top1),
            sig9(self.test_top1),
            self.pi_collapses,
            self.triples_skipped,
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, records: &[MetricsRecord]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Sample-weighted running means of loss parts over an epoch.
#[derive(Default)]
struct EpochAccumulator {
    parts: LossParts,
    diag: Diagnostics,
    samples: usize,
}

impl EpochAccumulator {
    fn add(&mut self, parts: &LossParts, diag: Diagnostics, batch: usize) {
        let w = batch as f64;
        self.parts.total += parts.total * w;
        self.parts.ce += parts.ce * w;
        self.parts.kl_mutual += parts.kl_mutual * w;
        self.parts.distance += parts.distance * w;
        self.parts.angle += parts.angle * w;
        self.parts.self_distill += parts.self_distill * w;
        self.diag.merge(diag);
        self.samples += batch;
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        stage: u8,
        epoch: usize,
        net_index: usize,
        lr: f64,
        net: &PeerNetwork,
        train: &Dataset,
        test: &Dataset,
    ) -> Result<MetricsRecord> {
        let n = self.samples.max(1) as f64;
        let rec = MetricsRecord {
            epoch,
            stage,
            net: net_index + 1,
            lr,
            loss_total: self.parts.total / n,
            loss_ce: self.parts.ce / n,
            loss_kl_mutual: self.parts.kl_mutual / n,
            loss_dd: self.parts.distance / n,
            loss_ad: self.parts.angle / n,
            loss_sd: self.parts.self_distill / n,
            train_top1: evaluate_top1(net, train)?,
            test_top1: evaluate_top1(net, test)?,
            pi_collapses: self.diag.pi_collapses,
            triples_skipped: self.diag.triples_skipped + self.diag.angle_terms_skipped,
        };
        if !rec.loss_total.is_finite() {
            return Err(Error::Divergence {
                stage,
                epoch,
                net: net_index + 1,
            });
        }
        Ok(rec)
    }
}

fn diverged(e: Error, stage: u8, epoch: usize, net_index: usize) -> Error {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => {
            log::debug!("stage {stage} epoch {epoch} net {}: {e}", net_index + 1);
            Error::Divergence {
                stage,
                epoch,
                net: net_index + 1,
            }
        }
        other => other,
    }
}

/// One cross-entropy step on a batch; returns the batch loss.
pub fn ce_step(
    net: &mut PeerNetwork,
    state: &mut OptimizerState,
    batch: &Batch,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let x = tape.constant(batch.features.clone());
    let out = net.forward(&mut tape, &params, x)?;
    let loss = cross_entropy(&mut tape, out.logits, &batch.one_hot_labels)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|p| grads.get(*p).cloned().expect("trainable parameter"))
        .collect();
    step_network(net, state, grads, lr, cfg)?;
    Ok(value)
}

/// One epoch of plain cross-entropy training over the permutation for
/// `shuffle_epoch`. Returns the sample-weighted mean batch loss.
pub fn ce_epoch(
    net: &mut PeerNetwork,
    state: &mut OptimizerState,
    train: &Dataset,
    cfg: &TrainConfig,
    shuffle_epoch: u64,
    lr: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in batch_iterator(train, cfg.batch_size, cfg.seed, shuffle_epoch)? {
        total += ce_step(net, state, &batch, lr, cfg)? * batch.len() as f64;
    }
    Ok(total / train.len() as f64)
}

pub struct Stage1Output {
    pub snapshots: [PeerNetwork; 2],
    pub metrics: Vec<MetricsRecord>,
    /// Whether the last epoch changed the training CE by less than 0.1%.
    pub converged: [bool; 2],
}

/// Trains both networks independently with cross-entropy, then freezes a
/// copy of each as its self-distillation teacher.
pub fn pretrain_stage1(
    nets: &mut [PeerNetwork; 2],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Stage1Output> {
    cfg.validate()?;
    let mut states = [
        OptimizerState::for_network(&nets[0]),
        OptimizerState::for_network(&nets[1]),
    ];
    let mut metrics = Vec::new();
    let mut last_ce: [Option<f64>; 2] = [None, None];
    let mut converged = [false; 2];
    for epoch in 0..cfg.stage1_epochs {
        let lr = lr_at(epoch, cfg);
        for k in 0..2 {
            let ce = ce_epoch(&mut nets[k], &mut states[k], train, cfg, epoch as u64, lr)
                .map_err(|e| diverged(e, 1, epoch, k))?;
            let acc = EpochAccumulator {
                parts: LossParts {
                    total: ce,
                    ce,
                    ..LossParts::default()
                },
                diag: Diagnostics::default(),
                samples: 1,
            };
            metrics.push(acc.finish(1, epoch, k, lr, &nets[k], train, test)?);
            if let Some(prev) = last_ce[k] {
                converged[k] = ((prev - ce) / prev.max(f64::MIN_POSITIVE)).abs() < 1e-3;
            }
            last_ce[k] = Some(ce);
        }
    }
    for (k, c) in converged.iter().enumerate() {
        log::info!(
            "stage 1 net {}: {}",
            k + 1,
            if *c {
                "cross-entropy converged"
            } else {
                "epoch budget reached before convergence"
            }
        );
    }
    Ok(Stage1Output {
        snapshots: [nets[0].snapshot(), nets[1].snapshot()],
        metrics,
        converged,
    })
}

/// Seed for the triple subsample of one batch.
fn triple_seed(cfg: &TrainConfig, shuffle_epoch: u64, batch_index: usize) -> u64 {
    derive_seed(derive_seed(cfg.seed, shuffle_epoch), batch_index as u64 + 1)
}

#[allow(clippy::too_many_arguments)]
fn kd_step(
    net: &mut PeerNetwork,
    state: &mut OptimizerState,
    peer: Option<&Prediction>,
    snapshot_logits: Option<&Tensor>,
    batch: &Batch,
    tuples: &TupleSets,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(LossParts, Diagnostics)> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let x = tape.constant(batch.features.clone());
    let out = net.forward(&mut tape, &params, x)?;
    let mut diag = Diagnostics::default();
    let kd = total_loss(
        &mut tape,
        &out,
        peer,
        snapshot_logits,
        &batch.one_hot_labels,
        tuples,
        &cfg.weights,
        cfg.terms(),
        &mut diag,
    )?;
    let grads = tape.backward(kd.value)?;
    let grads = params
        .iter()
        .map(|p| grads.get(*p).cloned().expect("trainable parameter"))
        .collect();
    step_network(net, state, grads, lr, cfg)?;
    Ok((kd.parts, diag))
}

/// Trains both peers collaboratively, each on its own distillation objective
/// with the other peer's outputs held constant.
pub fn train_stage2(
    nets: &mut [PeerNetwork; 2],
    snapshots: &[PeerNetwork; 2],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let w = &cfg.weights;
    let terms = cfg.terms();
    let needs_peer = w.beta != 0.0 && (terms.relation || (terms.mutual_kl && w.beta2 != 0.0));
    let needs_snapshot = w.gamma != 0.0 && terms.self_distill;

    let mut states = [
        OptimizerState::for_network(&nets[0]),
        OptimizerState::for_network(&nets[1]),
    ];
    let mut metrics = Vec::new();
    for epoch in 0..cfg.stage2_epochs {
        let lr = lr_at(epoch, cfg);
        let shuffle_epoch = (cfg.stage1_epochs + epoch) as u64;
        let mut acc = [EpochAccumulator::default(), EpochAccumulator::default()];
        for (bi, batch) in batch_iterator(train, cfg.batch_size, cfg.seed, shuffle_epoch)?
            .iter()
            .enumerate()
        {
            let tuples = TupleSets::for_batch(batch.len(), triple_seed(cfg, shuffle_epoch, bi));
            let snap_logits: Vec<Option<Tensor>> = snapshots
                .iter()
                .map(|s| {
                    needs_snapshot
                        .then(|| s.predict(&batch.features).map(|p| p.logits))
                        .transpose()
                })
                .collect::<Result<_>>()?;
            let mut pre_step: [Option<Prediction>; 2] = [None, None];
            if needs_peer && cfg.update_order == UpdateOrder::Simultaneous {
                for k in 0..2 {
                    pre_step[k] = Some(nets[k].predict(&batch.features)?);
                }
            }
            for k in 0..2 {
                let peer = if !needs_peer {
                    None
                } else if cfg.update_order == UpdateOrder::Simultaneous {
                    pre_step[1 - k].clone()
                } else {
                    Some(nets[1 - k].predict(&batch.features)?)
                };
                let (parts, diag) = kd_step(
                    &mut nets[k],
                    &mut states[k],
                    peer.as_ref(),
                    snap_logits[k].as_ref(),
                    batch,
                    &tuples,
                    lr,
                    cfg,
                )
                .map_err(|e| diverged(e, 2, epoch, k))?;
                acc[k].add(&parts, diag, batch.len());
            }
        }
        for (k, a) in acc.into_iter().enumerate() {
            metrics.push(a.finish(2, epoch, k, lr, &nets[k], train, test)?);
        }
    }
    Ok(metrics)
}

/// Convenience wrapper: evaluates a batch made from explicit indices.
pub fn batch_for(ds: &Dataset, indices: &[usize]) -> Result<Batch> {
    make_batch(ds, indices)
}
