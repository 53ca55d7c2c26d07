//! The invariant suite behind `distilforge verify`.

use std::io::Write;
use std::time::{Duration, Instant};

use distilforge_core::data::synth_blobs;
use distilforge_core::losses::{
    self, angle_distill_loss, angle_potentials, cross_entropy, distance_distill_loss,
    distance_potentials, kl_mutual, mutual_distill_loss, relation_distill_loss,
    relation_distill_value, self_distill_kl, total_loss,
};
use distilforge_core::tape::softmax_rows;
use distilforge_core::trainer::{
    ce_epoch, lr_at, pretrain_stage1, sgd_step, train_stage2, write_metrics_csv,
};
use distilforge_core::{
    grad_check_many, Diagnostics, ForwardOutput, LossWeights, NetworkConfig, OptimizerState,
    PeerNetwork, Prediction, Tape, Tensor, Terms, TrainConfig, TupleSets, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Failure;

pub type HuberFn = fn(f64, f64) -> f64;

/// Hooks for mutation testing the suite itself.
#[derive(Clone, Copy)]
pub struct VerifyOptions {
    /// Reference Huber implementation the tape's Huber op is held to.
    pub huber: HuberFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            huber: losses::huber,
        }
    }
}

/// Huber with the linear branch off by a constant; `verify` must reject it.
pub fn corrupted_huber(a: f64, b: f64) -> f64 {
    let r = (a - b).abs();
    if r <= 1.0 {
        0.5 * r * r
    } else {
        r - 0.25
    }
}

type CheckResult = Result<String, String>;
type Check = fn(&VerifyOptions) -> CheckResult;

pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-10;
pub const INVARIANCE_TOL: f64 = 1e-9;

/// Every property, in reporting order.
pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("huber", check_huber),
        ("softmax", check_softmax),
        ("cross_entropy", check_cross_entropy),
        ("kl", check_kl),
        ("gradients", check_gradients),
        ("relation_oracle", check_relation_oracle),
        ("relation_invariance", check_relation_invariance),
        ("sgd", check_sgd),
        ("lr_schedule", check_lr_schedule),
        ("degenerate_reduction", check_degenerate_reduction),
        ("determinism", check_determinism),
    ]
}

pub fn run_check(name: &str, opts: &VerifyOptions) -> Option<CheckResult> {
    checks()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f(opts))
}

#[derive(Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub result: CheckResult,
    pub elapsed: Duration,
}

/// Runs every check, printing one table row each. Fails with the first
/// failing property.
pub fn verify(opts: &VerifyOptions, out: &mut impl Write) -> anyhow::Result<Vec<Outcome>> {
    let mut outcomes = Vec::new();
    for (name, check) in checks() {
        let start = Instant::now();
        let result = check(opts);
        let elapsed = start.elapsed();
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        writeln!(
            out,
            "{status}  {name:<22} {:>8.2}s  {detail}",
            elapsed.as_secs_f64()
        )?;
        outcomes.push(Outcome {
            name,
            result,
            elapsed,
        });
    }
    if let Some(bad) = outcomes.iter().find(|o| o.result.is_err()) {
        return Err(Failure::Verify {
            property: bad.name.to_string(),
            detail: bad.result.clone().unwrap_err(),
        }
        .into());
    }
    Ok(outcomes)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn near(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{what}: got {got:e}, want {want:e} (tol {tol:e})")
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn check_huber(opts: &VerifyOptions) -> CheckResult {
    let h = opts.huber;
    for (a, b, want) in [
        (2.0, 0.0, 1.5),
        (0.5, 0.0, 0.125),
        (0.0, 2.0, 1.5),
        (-3.0, 0.0, 2.5),
        (1.0, 0.0, 0.5),
    ] {
        ensure(h(a, b) == want, || {
            format!("huber({a}, {b}) = {}, want {want}", h(a, b))
        })?;
    }
    // The tape op against the reference on both branches.
    let rs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(rs.clone()).map_err(err)?);
    let b = tape.constant(Tensor::zeros(&[rs.len()]));
    let out = tape.huber(a, b).map_err(err)?;
    for (r, &v) in rs.iter().zip(tape.value(out).data()) {
        near(&format!("tape huber at residual {r}"), v, h(*r, 0.0), 1e-15)?;
    }
    Ok(format!("{} residuals", rs.len()))
}

fn check_softmax(_: &VerifyOptions) -> CheckResult {
    let z = Tensor::from_rows(&[[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0], [0.5, 0.5, 0.5]])
        .map_err(err)?;
    for t in [0.5, 1.0, 3.0] {
        let p = softmax_rows(&z, t, false).map_err(err)?;
        for row in p.data().chunks(3) {
            near("softmax row sum", row.iter().sum(), 1.0, 1e-12)?;
            ensure(row.iter().all(|v| v.is_finite() && *v >= 0.0), || {
                format!("invalid probabilities {row:?}")
            })?;
        }
        let shifted = z.map(|v| v + 7.0);
        let q = softmax_rows(&shifted, t, false).map_err(err)?;
        for (a, b) in p.data().iter().zip(q.data()) {
            near("shift invariance", *a, *b, 1e-12)?;
        }
    }
    // Higher temperature flattens the distribution.
    let cold = softmax_rows(&z, 1.0, false).map_err(err)?;
    let hot = softmax_rows(&z, 3.0, false).map_err(err)?;
    ensure(hot.data()[2] < cold.data()[2], || {
        "temperature does not soften".into()
    })?;
    Ok("sums, shift invariance, temperature".into())
}

fn check_cross_entropy(_: &VerifyOptions) -> CheckResult {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::zeros(&[2, 4]));
    let labels = Tensor::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]).map_err(err)?;
    let ce = cross_entropy(&mut tape, logits, &labels).map_err(err)?;
    near(
        "CE of uniform logits",
        tape.value(ce).item().map_err(err)?,
        4f64.ln(),
        1e-12,
    )?;
    Ok("uniform logits give ln 4".into())
}

fn check_kl(_: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let p = Tensor::new(
            vec![3, 5],
            (0..15).map(|_| rng.random_range(-4.0..4.0)).collect(),
        )
        .map_err(err)?;
        let q = Tensor::new(
            vec![3, 5],
            (0..15).map(|_| rng.random_range(-4.0..4.0)).collect(),
        )
        .map_err(err)?;
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let same = kl_mutual(&mut tape, pv, &p).map_err(err)?;
        near(
            "KL of identical logits",
            tape.value(same).item().map_err(err)?,
            0.0,
            1e-12,
        )?;
        let diff = self_distill_kl(&mut tape, pv, &q, 3.0).map_err(err)?;
        let d = tape.value(diff).item().map_err(err)?;
        ensure(d >= -1e-12, || format!("trial {trial}: negative KL {d:e}"))?;
    }
    Ok("zero on identical logits, non-negative otherwise".into())
}

struct GradFixture {
    net: PeerNetwork,
    features: Tensor,
    labels: Tensor,
    peer: Prediction,
    snapshot_logits: Tensor,
    tuples: TupleSets,
}

fn grad_fixture(seed: u64) -> Result<GradFixture, String> {
    const N: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = |s| NetworkConfig::new(4, vec![6, 5], 3, s);
    let mut net = PeerNetwork::init(cfg(seed)).map_err(err)?;
    // Zero biases put a layer exactly on the ReLU kink whenever a sample
    // silences every unit below it; finite differences are one-sided there.
    let params = net
        .parameters()
        .iter()
        .map(|p| match p.shape() {
            [n] => Tensor::new(
                vec![*n],
                (0..*n).map(|_| rng.random_range(-0.5..0.5)).collect(),
            ),
            _ => Ok(p.clone()),
        })
        .collect::<distilforge_core::Result<Vec<_>>>()
        .map_err(err)?;
    net.set_parameters(params).map_err(err)?;
    let features = Tensor::new(
        vec![N, 4],
        (0..N * 4).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .map_err(err)?;
    let mut labels = vec![0.0; N * 3];
    for r in 0..N {
        labels[r * 3 + rng.random_range(0..3)] = 1.0;
    }
    Ok(GradFixture {
        peer: PeerNetwork::init(cfg(seed + 50))
            .map_err(err)?
            .predict(&features)
            .map_err(err)?,
        snapshot_logits: PeerNetwork::init(cfg(seed + 90))
            .map_err(err)?
            .predict(&features)
            .map_err(err)?
            .logits,
        labels: Tensor::new(vec![N, 3], labels).map_err(err)?,
        features,
        net,
        tuples: TupleSets::all(N),
    })
}

type LossBuilder = fn(&GradFixture, &mut Tape, &ForwardOutput) -> distilforge_core::Result<Var>;

fn loss_builders() -> Vec<(&'static str, LossBuilder)> {
    vec![
        ("ce", |fx, t, o| cross_entropy(t, o.logits, &fx.labels)),
        ("kl_mutual", |fx, t, o| {
            kl_mutual(t, o.logits, &fx.peer.logits)
        }),
        ("sd", |fx, t, o| {
            self_distill_kl(t, o.logits, &fx.snapshot_logits, 3.0)
        }),
        ("dd", |fx, t, o| {
            distance_distill_loss(
                t,
                o.embedding,
                &fx.peer.embedding,
                &fx.tuples,
                &mut Diagnostics::default(),
            )
        }),
        ("ad", |fx, t, o| {
            angle_distill_loss(
                t,
                o.embedding,
                &fx.peer.embedding,
                &fx.tuples,
                &mut Diagnostics::default(),
            )?
            .ok_or(distilforge_core::Error::TooFewRows {
                op: "ad",
                need: 3,
                got: 0,
            })
        }),
        ("rd", |fx, t, o| {
            Ok(relation_distill_loss(
                t,
                o.embedding,
                &fx.peer.embedding,
                &fx.tuples,
                2.0,
                &mut Diagnostics::default(),
            )?
            .value)
        }),
        ("md", |fx, t, o| {
            let md = mutual_distill_loss(
                t,
                o,
                &fx.peer,
                &fx.tuples,
                &LossWeights::default(),
                Terms::ALL,
                &mut Diagnostics::default(),
            )?;
            md.value.ok_or(distilforge_core::Error::NonScalar(vec![]))
        }),
        ("kd", |fx, t, o| {
            Ok(total_loss(
                t,
                o,
                Some(&fx.peer),
                Some(&fx.snapshot_logits),
                &fx.labels,
                &fx.tuples,
                &LossWeights::default(),
                Terms::ALL,
                &mut Diagnostics::default(),
            )?
            .value)
        }),
    ]
}

/// Worst relative gradient error per loss, over parameters of a small net
/// on random 4-sample batches.
pub fn gradient_errors(seeds: std::ops::Range<u64>) -> Result<Vec<(&'static str, f64)>, String> {
    let mut worst = Vec::new();
    for (name, build) in loss_builders() {
        let mut w = 0.0_f64;
        for seed in seeds.clone() {
            let fx = grad_fixture(seed)?;
            let e = grad_check_many(
                |tape, params| {
                    let x = tape.constant(fx.features.clone());
                    let out = fx.net.forward(tape, params, x)?;
                    build(&fx, tape, &out)
                },
                fx.net.parameters(),
                1e-5,
            )
            .map_err(|e| format!("{name}: {e}"))?;
            w = w.max(e);
        }
        worst.push((name, w));
    }
    Ok(worst)
}

fn check_gradients(_: &VerifyOptions) -> CheckResult {
    let errors = gradient_errors(0..3)?;
    for (name, e) in &errors {
        ensure(*e < GRAD_TOL, || format!("{name}: relative error {e:e}"))?;
    }
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!("8 losses, worst relative error {worst:.1e}"))
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    t.data().chunks(t.shape()[1]).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// All-pairs distance loss by explicit loops.
pub fn oracle_distance_loss(a: &Tensor, b: &Tensor, huber: HuberFn) -> f64 {
    let (ra, rb) = (rows(a), rows(b));
    let n = ra.len();
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v {
                pairs.push((u, v));
            }
        }
    }
    let mean = |r: &[&[f64]]| {
        pairs.iter().map(|&(u, v)| euclid(r[u], r[v])).sum::<f64>() / pairs.len() as f64
    };
    let (ma, mb) = (mean(&ra), mean(&rb));
    pairs
        .iter()
        .map(|&(u, v)| huber(euclid(ra[u], ra[v]) / ma, euclid(rb[u], rb[v]) / mb))
        .sum::<f64>()
        / pairs.len() as f64
}

fn cos_at(r: &[&[f64]], u: usize, v: usize, w: usize) -> f64 {
    let x: Vec<f64> = r[u].iter().zip(r[v]).map(|(p, q)| p - q).collect();
    let y: Vec<f64> = r[w].iter().zip(r[v]).map(|(p, q)| p - q).collect();
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    dot / (x.iter().map(|p| p * p).sum::<f64>().sqrt()
        * y.iter().map(|p| p * p).sum::<f64>().sqrt())
}

/// All-triples angle loss by explicit loops.
pub fn oracle_angle_loss(a: &Tensor, b: &Tensor, huber: HuberFn) -> f64 {
    let (ra, rb) = (rows(a), rows(b));
    let n = ra.len();
    let (mut total, mut count) = (0.0, 0usize);
    for u in 0..n {
        for v in 0..n {
            for w in 0..n {
                if u != v && v != w && u != w {
                    total += huber(cos_at(&ra, u, v, w), cos_at(&rb, u, v, w));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Largest gap between the tape losses and the loop oracles over 20 random
/// trials per batch size 3-5.
pub fn relation_oracle_gap(huber: HuberFn) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut gap = 0.0_f64;
    for _ in 0..20 {
        for n in 3..=5 {
            let d = rng.random_range(2..6);
            let a = Tensor::new(
                vec![n, d],
                (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .map_err(err)?;
            let b = Tensor::new(
                vec![n, d],
                (0..n * d).map(|_| rng.random_range(-4.0..4.0)).collect(),
            )
            .map_err(err)?;
            let tuples = TupleSets::all(n);
            let mut tape = Tape::new();
            let e = tape.constant(a.clone());
            let mut diag = Diagnostics::default();
            let dd = distance_distill_loss(&mut tape, e, &b, &tuples, &mut diag).map_err(err)?;
            let ad = angle_distill_loss(&mut tape, e, &b, &tuples, &mut diag)
                .map_err(err)?
                .ok_or("no usable triples")?;
            gap = gap.max(
                (tape.value(dd).item().map_err(err)? - oracle_distance_loss(&a, &b, huber)).abs(),
            );
            gap = gap.max(
                (tape.value(ad).item().map_err(err)? - oracle_angle_loss(&a, &b, huber)).abs(),
            );
        }
    }
    Ok(gap)
}

fn check_relation_oracle(opts: &VerifyOptions) -> CheckResult {
    let gap = relation_oracle_gap(opts.huber)?;
    ensure(gap < ORACLE_TOL, || {
        format!("tape and loop oracle differ by {gap:e}")
    })?;
    Ok(format!("max gap {gap:.1e}"))
}

/// Worst deviation from each relational invariant over random embeddings.
pub struct InvarianceReport {
    pub similarity_loss: f64,
    pub potential_mean_gap: f64,
    pub angles_in_range: bool,
}

pub fn relation_invariances() -> Result<InvarianceReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut report = InvarianceReport {
        similarity_loss: 0.0,
        potential_mean_gap: 0.0,
        angles_in_range: true,
    };
    for _ in 0..10 {
        let (n, d) = (6, 4);
        let e = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .map_err(err)?;
        let tuples = TupleSets::all(n);
        for lambda in [0.5, 2.0, 10.0] {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let moved = Tensor::new(
                vec![n, d],
                e.data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| lambda * v + c[i % d])
                    .collect(),
            )
            .map_err(err)?;
            let l = relation_distill_value(&e, &moved, &tuples, 2.0).map_err(err)?;
            report.similarity_loss = report.similarity_loss.max(l.abs());
        }
        let pot = distance_potentials(&e, &tuples).map_err(err)?;
        let mean = pot.values.iter().sum::<f64>() / pot.values.len() as f64;
        report.potential_mean_gap = report.potential_mean_gap.max((mean - 1.0).abs());
        let ang = angle_potentials(&e, &tuples).map_err(err)?;
        report.angles_in_range &= ang.values.iter().all(|v| (-1.0..=1.0).contains(v));
    }
    Ok(report)
}

fn check_relation_invariance(_: &VerifyOptions) -> CheckResult {
    let r = relation_invariances()?;
    near(
        "relation loss under scaling and translation",
        r.similarity_loss,
        0.0,
        INVARIANCE_TOL,
    )?;
    near(
        "mean distance potential",
        r.potential_mean_gap,
        0.0,
        INVARIANCE_TOL,
    )?;
    ensure(r.angles_in_range, || {
        "angle potential outside [-1, 1]".into()
    })?;
    Ok("similarity invariance, unit mean potential, cosines bounded".into())
}

fn check_sgd(_: &VerifyOptions) -> CheckResult {
    let step = |w: f64, g: f64, st: &mut OptimizerState, lr, mom, wd| -> Result<f64, String> {
        let mut p = vec![Tensor::scalar(w)];
        sgd_step(&mut p, &[Tensor::scalar(g)], st, lr, mom, wd).map_err(err)?;
        Ok(p[0].data()[0])
    };
    let zero = [Tensor::scalar(0.0)];
    let mut st = OptimizerState::new(&zero);
    near(
        "plain step",
        step(0.0, 1.0, &mut st, 0.1, 0.0, 0.0)?,
        -0.1,
        1e-15,
    )?;
    let mut st = OptimizerState::new(&zero);
    let w1 = step(0.0, 1.0, &mut st, 0.1, 0.9, 0.0)?;
    let w2 = step(w1, 1.0, &mut st, 0.1, 0.9, 0.0)?;
    near("second momentum step", w2 - w1, -0.19, 1e-15)?;
    let mut st = OptimizerState::new(&zero);
    near(
        "decay-only step",
        step(2.0, 0.0, &mut st, 1.0, 0.0, 0.5)?,
        1.0,
        1e-15,
    )?;
    Ok("plain, momentum and decay steps".into())
}

fn check_lr_schedule(_: &VerifyOptions) -> CheckResult {
    let cfg = TrainConfig {
        lr: 0.1,
        lr_milestones: vec![60, 120, 160],
        lr_factor: 0.2,
        stage2_epochs: 200,
        ..TrainConfig::default()
    };
    for (epoch, want) in [(0, 0.1), (59, 0.1), (60, 0.02), (120, 0.004), (161, 0.0008)] {
        let got = lr_at(epoch, &cfg);
        ensure(got == want, || format!("epoch {epoch}: {got} != {want}"))?;
    }
    Ok("0.1 -> 0.02 -> 0.004 -> 0.0008".into())
}

fn tiny_setup() -> Result<
    (
        distilforge_core::Dataset,
        distilforge_core::Dataset,
        [PeerNetwork; 2],
    ),
    String,
> {
    let train = synth_blobs(3, 12, 3, 0.5, 1).map_err(err)?;
    let test = synth_blobs(3, 6, 3, 0.5, 2).map_err(err)?;
    let nets = [1, 2].map(|s| PeerNetwork::init(NetworkConfig::new(3, vec![8, 4], 3, s)));
    let [a, b] = nets;
    Ok((train, test, [a.map_err(err)?, b.map_err(err)?]))
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        stage1_epochs: 1,
        stage2_epochs: 3,
        batch_size: 8,
        lr: 0.05,
        lr_milestones: vec![2],
        seed: 9,
        ..TrainConfig::default()
    }
}

fn check_degenerate_reduction(_: &VerifyOptions) -> CheckResult {
    let (train, test, mut nets) = tiny_setup()?;
    let cfg = TrainConfig {
        weights: LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        },
        ..tiny_config()
    };
    let s1 = pretrain_stage1(&mut nets, &train, &test, &cfg).map_err(err)?;
    let mut reference = nets.clone();
    train_stage2(&mut nets, &s1.snapshots, &train, &test, &cfg).map_err(err)?;
    for (k, net) in reference.iter_mut().enumerate() {
        let mut st = OptimizerState::for_network(net);
        for epoch in 0..cfg.stage2_epochs {
            let shuffle = (cfg.stage1_epochs + epoch) as u64;
            ce_epoch(net, &mut st, &train, &cfg, shuffle, lr_at(epoch, &cfg)).map_err(err)?;
        }
        ensure(net.parameters() == nets[k].parameters(), || {
            format!(
                "net {} differs from independent cross-entropy training",
                k + 1
            )
        })?;
    }
    Ok("zero beta and gamma match independent CE bit for bit".into())
}

fn metrics_bytes() -> Result<Vec<u8>, String> {
    let (train, test, mut nets) = tiny_setup()?;
    let cfg = tiny_config();
    let s1 = pretrain_stage1(&mut nets, &train, &test, &cfg).map_err(err)?;
    let mut records = s1.metrics;
    records.extend(train_stage2(&mut nets, &s1.snapshots, &train, &test, &cfg).map_err(err)?);
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &records).map_err(err)?;
    Ok(buf)
}

fn check_determinism(_: &VerifyOptions) -> CheckResult {
    let (a, b) = (metrics_bytes()?, metrics_bytes()?);
    ensure(a == b, || "replayed metrics differ".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_huber_is_caught() {
        let opts = VerifyOptions {
            huber: corrupted_huber,
        };
        let msg = run_check("huber", &opts).unwrap().unwrap_err();
        assert!(msg.contains("huber"), "{msg}");
        assert!(run_check("relation_oracle", &opts).unwrap().is_err());
        assert!(run_check("huber", &VerifyOptions::default())
            .unwrap()
            .is_ok());
    }

    #[test]
    fn unknown_check_is_none() {
        assert!(run_check("nope", &VerifyOptions::default()).is_none());
    }
}
