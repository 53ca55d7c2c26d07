//! Stage-1/Stage-2 behaviour on small synthetic blobs.

use distilforge_core::data::{batch_iterator, synth_blobs};
use distilforge_core::losses::{cross_entropy, self_distill_kl};
use distilforge_core::trainer::{
    ce_epoch, evaluate_top1, lr_at, pretrain_stage1, sgd_step, train_stage2, MetricsRecord,
};
use distilforge_core::{
    Dataset, LossWeights, NetworkConfig, OptimizerState, PeerNetwork, Tape, TrainConfig,
    UpdateOrder,
};

fn blobs() -> (Dataset, Dataset) {
    (
        synth_blobs(3, 20, 4, 0.5, 11).unwrap(),
        synth_blobs(3, 10, 4, 0.5, 12).unwrap(),
    )
}

fn nets(seed1: u64, seed2: u64) -> [PeerNetwork; 2] {
    [seed1, seed2].map(|s| PeerNetwork::init(NetworkConfig::new(4, vec![8, 6], 3, s)).unwrap())
}

fn config(stage1: usize, stage2: usize) -> TrainConfig {
    TrainConfig {
        stage1_epochs: stage1,
        stage2_epochs: stage2,
        batch_size: 8,
        lr: 0.05,
        lr_milestones: vec![],
        seed: 5,
        ..TrainConfig::default()
    }
}

fn net_rows(metrics: &[MetricsRecord], net: usize) -> Vec<MetricsRecord> {
    metrics.iter().filter(|r| r.net == net).cloned().collect()
}

#[test]
fn zero_stage1_epochs_snapshot_initialization() {
    let (train, test) = blobs();
    let mut n = nets(1, 2);
    let init = n.clone();
    let out = pretrain_stage1(&mut n, &train, &test, &config(0, 0)).unwrap();
    for (snapshot, start) in out.snapshots.iter().zip(&init) {
        assert_eq!(snapshot.parameters(), start.parameters());
        assert!(snapshot.is_frozen());
    }
    assert!(out.metrics.is_empty());
}

#[test]
fn stage1_cross_entropy_decreases_over_first_epochs() {
    let (train, test) = blobs();
    let mut n = nets(1, 2);
    let out = pretrain_stage1(&mut n, &train, &test, &config(5, 0)).unwrap();
    for net in 1..=2 {
        let ce: Vec<f64> = net_rows(&out.metrics, net)
            .iter()
            .map(|r| r.loss_ce)
            .collect();
        assert_eq!(ce.len(), 5);
        assert!(ce.windows(2).all(|w| w[1] < w[0]), "net {net}: {ce:?}");
    }
}

#[test]
fn stage2_leaves_snapshots_untouched_and_is_deterministic() {
    let (train, test) = blobs();
    let cfg = config(2, 2);
    let run = || {
        let mut n = nets(1, 2);
        let s1 = pretrain_stage1(&mut n, &train, &test, &cfg).unwrap();
        let before = s1.snapshots.clone();
        let metrics = train_stage2(&mut n, &s1.snapshots, &train, &test, &cfg).unwrap();
        for (after, before) in s1.snapshots.iter().zip(&before) {
            assert_eq!(after.parameters(), before.parameters());
        }
        (n, metrics)
    };
    let (n1, m1) = run();
    let (n2, m2) = run();
    assert_eq!(m1, m2);
    for k in 0..2 {
        assert_eq!(n1[k].parameters(), n2[k].parameters());
    }
    assert!(m1.iter().all(|r| r.loss_total.is_finite()));
    assert!(m1.iter().all(|r| (0.0..=1.0).contains(&r.test_top1)));
}

#[test]
fn zero_beta_gamma_reduces_to_independent_cross_entropy() {
    let (train, test) = blobs();
    let cfg = TrainConfig {
        weights: LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        },
        ..config(1, 3)
    };
    let mut n = nets(1, 2);
    let s1 = pretrain_stage1(&mut n, &train, &test, &cfg).unwrap();
    let mut reference = n.clone();
    train_stage2(&mut n, &s1.snapshots, &train, &test, &cfg).unwrap();

    for net in &mut reference {
        let mut state = OptimizerState::for_network(net);
        for epoch in 0..cfg.stage2_epochs {
            let shuffle = (cfg.stage1_epochs + epoch) as u64;
            ce_epoch(net, &mut state, &train, &cfg, shuffle, lr_at(epoch, &cfg)).unwrap();
        }
    }
    for k in 0..2 {
        assert_eq!(
            n[k].parameters(),
            reference[k].parameters(),
            "net {}",
            k + 1
        );
    }
}

#[test]
fn zero_beta_reduces_to_self_distillation_only() {
    let (train, test) = blobs();
    let cfg = TrainConfig {
        weights: LossWeights {
            beta: 0.0,
            ..LossWeights::default()
        },
        ..config(2, 3)
    };
    let w = cfg.weights;
    let mut n = nets(1, 2);
    let s1 = pretrain_stage1(&mut n, &train, &test, &cfg).unwrap();
    let mut reference = n.clone();
    train_stage2(&mut n, &s1.snapshots, &train, &test, &cfg).unwrap();

    for (net, snapshot) in reference.iter_mut().zip(&s1.snapshots) {
        let mut state = OptimizerState::for_network(net);
        for epoch in 0..cfg.stage2_epochs {
            let shuffle = (cfg.stage1_epochs + epoch) as u64;
            for batch in batch_iterator(&train, cfg.batch_size, cfg.seed, shuffle).unwrap() {
                let teacher = snapshot.predict(&batch.features).unwrap().logits;
                let mut tape = Tape::new();
                let params = net.bind(&mut tape);
                let x = tape.constant(batch.features.clone());
                let out = net.forward(&mut tape, &params, x).unwrap();
                let ce = cross_entropy(&mut tape, out.logits, &batch.one_hot_labels).unwrap();
                let ce = tape.mul_scalar(ce, w.alpha).unwrap();
                let sd = self_distill_kl(&mut tape, out.logits, &teacher, w.temperature).unwrap();
                let sd = tape.mul_scalar(sd, w.gamma).unwrap();
                let loss = tape.add(ce, sd).unwrap();
                let grads = tape.backward(loss).unwrap();
                let grads: Vec<_> = params
                    .iter()
                    .map(|p| grads.get(*p).unwrap().clone())
                    .collect();
                let mut p = net.parameters().to_vec();
                sgd_step(
                    &mut p,
                    &grads,
                    &mut state,
                    lr_at(epoch, &cfg),
                    cfg.momentum,
                    cfg.weight_decay,
                )
                .unwrap();
                net.set_parameters(p).unwrap();
            }
        }
    }
    for k in 0..2 {
        assert_eq!(
            n[k].parameters(),
            reference[k].parameters(),
            "net {}",
            k + 1
        );
    }
}

#[test]
fn identical_peers_stay_identical_with_simultaneous_updates() {
    let (train, test) = blobs();
    let cfg = TrainConfig {
        update_order: UpdateOrder::Simultaneous,
        ..config(1, 2)
    };
    let mut n = nets(7, 7);
    let s1 = pretrain_stage1(&mut n, &train, &test, &cfg).unwrap();
    let metrics = train_stage2(&mut n, &s1.snapshots, &train, &test, &cfg).unwrap();
    assert_eq!(n[0].parameters(), n[1].parameters());
    let strip = |rows: Vec<MetricsRecord>| {
        rows.into_iter()
            .map(|r| MetricsRecord { net: 0, ..r })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(net_rows(&metrics, 1)), strip(net_rows(&metrics, 2)));
}

#[test]
fn swapping_peers_swaps_metric_streams() {
    let (train, test) = blobs();
    let cfg = TrainConfig {
        update_order: UpdateOrder::Simultaneous,
        ..config(1, 2)
    };
    let run = |a, b| {
        let mut n = nets(a, b);
        let mut all = pretrain_stage1(&mut n, &train, &test, &cfg)
            .unwrap()
            .metrics;
        let s = [n[0].snapshot(), n[1].snapshot()];
        all.extend(train_stage2(&mut n, &s, &train, &test, &cfg).unwrap());
        all
    };
    let forward = run(3, 4);
    let swapped = run(4, 3);
    let strip = |rows: Vec<MetricsRecord>| {
        rows.into_iter()
            .map(|r| MetricsRecord { net: 0, ..r })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(net_rows(&forward, 1)), strip(net_rows(&swapped, 2)));
    assert_eq!(strip(net_rows(&forward, 2)), strip(net_rows(&swapped, 1)));
}

#[test]
fn untrained_networks_score_near_chance() {
    let ds = synth_blobs(3, 100, 2, 0.5, 99).unwrap();
    let accs: Vec<f64> = (0..3)
        .map(|s| {
            evaluate_top1(
                &PeerNetwork::init(NetworkConfig::new(2, vec![16], 3, s)).unwrap(),
                &ds,
            )
            .unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((mean - 1.0 / 3.0).abs() <= 0.10, "{accs:?}");
}

#[test]
fn perfect_predictor_scores_one() {
    // Identity features through a linear readout: logit k = feature k.
    let ds = Dataset::new(
        "eye",
        distilforge_core::Tensor::from_rows(&[[5.0, 0.0], [0.0, 5.0]]).unwrap(),
        vec![0, 1],
        2,
    )
    .unwrap();
    let mut net = PeerNetwork::init(NetworkConfig::new(2, vec![2], 2, 0)).unwrap();
    let eye = distilforge_core::Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let zero = distilforge_core::Tensor::vector(vec![0.0, 0.0]).unwrap();
    net.set_parameters(vec![eye.clone(), zero.clone(), eye, zero])
        .unwrap();
    assert_eq!(evaluate_top1(&net, &ds).unwrap(), 1.0);
}
