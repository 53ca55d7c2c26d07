//! Seed repetitions and the ablation grid, with their on-disk outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use distilforge_core::trainer::{
    evaluate_top1, pretrain_stage1, train_stage2, write_metrics_csv, Stage1Output,
};
use distilforge_core::{Dataset, MetricsRecord, PeerNetwork, TrainConfig, Variant};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Failure;
use crate::stats::Summary;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation.json";

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn checkpoint_name(net: usize, stage: u8) -> String {
    format!("net{net}_stage{stage}.json")
}

fn run_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = vec![dir.join(METRICS_FILE)];
    for stage in [1, 2] {
        for net in [1, 2] {
            files.push(dir.join(checkpoint_name(net, stage)));
        }
    }
    files
}

/// Refuses to proceed if any target exists, unless overwriting was asked for.
fn guard(paths: &[PathBuf], overwrite: bool) -> Result<(), Failure> {
    if overwrite {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Failure::Output(format!(
            "{} already exists (pass --overwrite to replace run outputs)",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn write_metrics(path: &Path, records: &[MetricsRecord]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records)?;
    write(path, &buf)
}

fn save_checkpoints(dir: &Path, nets: &[PeerNetwork; 2], stage: u8) -> anyhow::Result<()> {
    for (k, net) in nets.iter().enumerate() {
        let mut text = serde_json::to_string(&net.to_checkpoint())?;
        text.push('\n');
        write(&dir.join(checkpoint_name(k + 1, stage)), text.as_bytes())?;
    }
    Ok(())
}

struct Stage1 {
    nets: [PeerNetwork; 2],
    out: Stage1Output,
}

fn stage1(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> anyhow::Result<Stage1> {
    let [a, b] = cfg.networks_for(seed);
    let mut nets = [PeerNetwork::init(a)?, PeerNetwork::init(b)?];
    let out = pretrain_stage1(&mut nets, train, test, &cfg.train_for(seed))
        .with_context(|| format!("seed {seed}"))?;
    Ok(Stage1 { nets, out })
}

fn stage2(
    s1: &Stage1,
    train_cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> anyhow::Result<([PeerNetwork; 2], Vec<MetricsRecord>)> {
    let mut nets = s1.nets.clone();
    let metrics = train_stage2(&mut nets, &s1.out.snapshots, train, test, train_cfg)
        .with_context(|| format!("seed {}", train_cfg.seed))?;
    Ok((nets, metrics))
}

fn final_top1(nets: &[PeerNetwork; 2], test: &Dataset) -> anyhow::Result<[f64; 2]> {
    Ok([
        evaluate_top1(&nets[0], test)?,
        evaluate_top1(&nets[1], test)?,
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seeds: Vec<u64>,
    pub variant: Variant,
    /// Final test top-1 per network across seeds.
    pub net1: Summary,
    pub net2: Summary,
}

/// Stage 1 and Stage 2 for every seed repetition. Writes per-seed metrics
/// and checkpoints plus `summary.json` under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, overwrite: bool) -> anyhow::Result<RunSummary> {
    let seeds = cfg.seeds();
    let mut targets: Vec<PathBuf> = seeds
        .iter()
        .flat_map(|&s| run_files(&seed_dir(out, s)))
        .collect();
    targets.push(out.join(SUMMARY_FILE));
    guard(&targets, overwrite)?;

    let (train, test) = cfg.load_data()?;
    let mut finals = Vec::new();
    for &seed in &seeds {
        log::info!("seed {seed}: stage 1");
        let dir = seed_dir(out, seed);
        let s1 = stage1(cfg, &train, &test, seed)?;
        save_checkpoints(&dir, &s1.nets, 1)?;
        log::info!("seed {seed}: stage 2");
        let (nets, stage2_metrics) = stage2(&s1, &cfg.train_for(seed), &train, &test)?;
        save_checkpoints(&dir, &nets, 2)?;
        let mut metrics = s1.out.metrics.clone();
        metrics.extend(stage2_metrics);
        write_metrics(&dir.join(METRICS_FILE), &metrics)?;
        let top1 = final_top1(&nets, &test)?;
        log::info!(
            "seed {seed}: final test top-1 {:.4} / {:.4}",
            top1[0],
            top1[1]
        );
        finals.push(top1);
    }
    let summary = RunSummary {
        seeds,
        variant: cfg.train.variant,
        net1: Summary::of(&finals.iter().map(|f| f[0]).collect::<Vec<_>>()),
        net2: Summary::of(&finals.iter().map(|f| f[1]).collect::<Vec<_>>()),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub net: usize,
    pub top1: Summary,
}

/// Whether dropping self-distillation (variant B) costs the most accuracy.
/// Reported as pass or warn, never as an error.
#[derive(Clone, Debug, Serialize)]
pub struct OrderingCheck {
    /// Mean over both nets and all seeds, per variant.
    pub means: BTreeMap<String, f64>,
    pub b_largest_drop: bool,
    pub a_at_least_b: bool,
}

impl OrderingCheck {
    pub fn status(&self) -> &'static str {
        if self.b_largest_drop {
            "pass"
        } else {
            "warn"
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub ordering: OrderingCheck,
}

impl AblationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("variant,net,mean_top1,std_top1,seeds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.8e},{:.8e},{}\n",
                r.variant.name(),
                r.net,
                r.top1.mean,
                r.top1.std,
                r.top1.values.len()
            ));
        }
        out
    }
}

pub fn variant_dir(root: &Path, variant: Variant) -> PathBuf {
    root.join(format!("variant_{}", variant.name()))
}

/// Runs variants A-D over every seed. Stage 1 runs once per seed and is
/// shared, so all variants start Stage 2 from the same checkpoints.
pub fn ablate(
    cfg: &ExperimentConfig,
    out: &Path,
    overwrite: bool,
) -> anyhow::Result<AblationReport> {
    let seeds = cfg.seeds();
    let mut targets = vec![out.join(ABLATION_FILE), out.join(ABLATION_SUMMARY_FILE)];
    for v in Variant::ALL {
        for &s in &seeds {
            targets.extend(run_files(&seed_dir(&variant_dir(out, v), s)));
        }
    }
    guard(&targets, overwrite)?;

    let (train, test) = cfg.load_data()?;
    let mut finals: BTreeMap<Variant, Vec<[f64; 2]>> = BTreeMap::new();
    for &seed in &seeds {
        let s1 = stage1(cfg, &train, &test, seed)?;
        for variant in Variant::ALL {
            log::info!("seed {seed}: variant {}", variant.name());
            let dir = seed_dir(&variant_dir(out, variant), seed);
            save_checkpoints(&dir, &s1.nets, 1)?;
            let train_cfg = TrainConfig {
                variant,
                ..cfg.train_for(seed)
            };
            let (nets, stage2_metrics) = stage2(&s1, &train_cfg, &train, &test)?;
            save_checkpoints(&dir, &nets, 2)?;
            let mut metrics = s1.out.metrics.clone();
            metrics.extend(stage2_metrics);
            write_metrics(&dir.join(METRICS_FILE), &metrics)?;
            finals
                .entry(variant)
                .or_default()
                .push(final_top1(&nets, &test)?);
        }
    }

    let mut rows = Vec::new();
    let mut means = BTreeMap::new();
    for variant in Variant::ALL {
        let runs = &finals[&variant];
        for net in 0..2 {
            let values: Vec<f64> = runs.iter().map(|f| f[net]).collect();
            rows.push(AblationRow {
                variant,
                net: net + 1,
                top1: Summary::of(&values),
            });
        }
        let all: Vec<f64> = runs.iter().flatten().copied().collect();
        means.insert(variant.name().to_string(), Summary::of(&all).mean);
    }
    let m = |v: &str| means[v];
    let ordering = OrderingCheck {
        // A tie with A is no drop at all, so saturated accuracy warns.
        b_largest_drop: m("B") < m("A") && m("B") <= m("C") && m("B") <= m("D"),
        a_at_least_b: m("A") >= m("B"),
        means,
    };
    let report = AblationReport {
        seeds,
        rows,
        ordering,
    };
    write(&out.join(ABLATION_FILE), report.csv().as_bytes())?;
    write_json(&out.join(ABLATION_SUMMARY_FILE), &report)?;
    Ok(report)
}
