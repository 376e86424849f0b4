use ifssl_core::dataio::{
    inject_uniform_noise, make_gaussian_clusters, normalize, BatchPlan, BatchScheduler, Dataset,
    FeatureStats, NoiseSpec, Sample,
};
use ifssl_core::filtering::PredictionBuffer;
use ifssl_core::losses::{ConsistencyKind, UnsupervisedTerm};
use ifssl_core::meanteacher::{
    evaluate, train_and_valid, LabelSource, TeacherStudentPair, TrainConfig, TrainData,
    TrainOutcome,
};
use ifssl_core::netcore::{argmax, softmax_rows, Matrix};
use ifssl_core::{derive_seed, ErrorCategory};

fn clusters(seed: u64, noise: f64) -> (Dataset, Dataset, Dataset) {
    let train = make_gaussian_clusters(4, 100, 2, 6.0, 1.5, seed).unwrap();
    let valid = make_gaussian_clusters(4, 20, 2, 6.0, 1.5, seed + 100).unwrap();
    let test = make_gaussian_clusters(4, 50, 2, 6.0, 1.5, seed + 200).unwrap();
    let noisy = inject_uniform_noise(&train, NoiseSpec { ratio: noise, seed }).unwrap();
    let (train, stats): (Dataset, FeatureStats) = normalize(&noisy).unwrap();
    (train, stats.apply(&valid).unwrap(), stats.apply(&test).unwrap())
}

fn train(cfg: &TrainConfig, train: &Dataset, valid: &Dataset) -> TrainOutcome {
    let init = TeacherStudentPair::init(train.dim(), train.classes(), cfg).unwrap();
    let buffer = PredictionBuffer::new(cfg.mva_alpha, train.classes()).unwrap();
    train_and_valid(
        TrainData {
            train,
            valid,
            original: Some(train),
        },
        cfg,
        init,
        buffer,
        0,
        &mut |_| {},
    )
    .unwrap()
}

#[test]
fn clean_clusters_are_learned_quickly() {
    let (tr, va, te) = clusters(1, 0.0);
    for term in [
        UnsupervisedTerm::None,
        UnsupervisedTerm::MeanTeacher(ConsistencyKind::Mse),
    ] {
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 50,
            term,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tr, &va);
        let acc = evaluate(&out.best.teacher, &te, LabelSource::True).unwrap();
        assert!(acc >= 0.98, "{term:?}: test accuracy {acc}");
    }
}

#[test]
fn patience_one_on_a_saturated_validation_set_stops_after_two_epochs() {
    let (tr, _, _) = clusters(8, 0.0);
    // copies of one sample far out along its class direction
    let far = tr
        .samples()
        .iter()
        .max_by(|a, b| a.features[0].total_cmp(&b.features[0]))
        .unwrap()
        .clone();
    let valid = Dataset::new(
        (0..5)
            .map(|i| Sample {
                id: i,
                ..far.clone()
            })
            .collect(),
        tr.classes(),
        tr.dim(),
    )
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 20,
        patience: 1,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &tr, &valid);
    assert_eq!(out.records[0].teacher_valid_acc, 1.0);
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn baseline_matches_a_plain_supervised_loop() {
    let (tr, va, _) = clusters(9, 0.3);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 6,
        term: UnsupervisedTerm::None,
        jitter: 0.0,
        seed: 21,
        ..TrainConfig::default()
    };
    let init = TeacherStudentPair::init(tr.dim(), tr.classes(), &cfg).unwrap();
    let mut net = init.student.clone();
    let out = train_and_valid(
        TrainData {
            train: &tr,
            valid: &va,
            original: None,
        },
        &cfg,
        init,
        PredictionBuffer::new(0.6, 4).unwrap(),
        0,
        &mut |_| {},
    )
    .unwrap();

    // plain minibatch softmax regression with Nesterov momentum and weight decay,
    // visiting samples in the same order
    let labeled = tr.labeled_ids();
    let mut order = BatchScheduler::new(
        &labeled,
        &labeled,
        BatchPlan {
            labeled_per_batch: 0,
            unlabeled_per_batch: 128,
            seed: derive_seed(cfg.seed, 0x7261_696e),
        },
    )
    .unwrap();
    let index = tr.index_map();
    let x_all = tr.feature_matrix();
    let mut velocity: Vec<Vec<f64>> = net.tensors().map(|t| vec![0.0; t.len()]).collect();
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    let mut snapshots = Vec::new();
    let mut accs = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = 0.5 * cfg.base_lr * (1.0 + (std::f64::consts::PI * epoch as f64 / 6.0).cos());
        for batch in order.next_epoch() {
            let ids = batch.unlabeled;
            let n = ids.len();
            let mut x = Matrix::zeros(n, tr.dim());
            for (r, id) in ids.iter().enumerate() {
                x.row_mut(r).copy_from_slice(x_all.row(index[id]));
            }
            let mut g = softmax_rows(&net.forward(&x).unwrap());
            for (r, id) in ids.iter().enumerate() {
                let y = tr.samples()[index[id]].given_label.unwrap();
                let row = g.row_mut(r);
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v /= n as f64);
            }
            let grads = net.backward(&x, &g).unwrap();
            let grads: Vec<Vec<f64>> = grads.tensors().map(<[f64]>::to_vec).collect();
            for ((w, gr), v) in net.tensors_mut().zip(&grads).zip(&mut velocity) {
                for ((wi, gi), vi) in w.iter_mut().zip(gr).zip(v.iter_mut()) {
                    let ge = gi + wd * *wi;
                    *vi = mu * *vi + ge;
                    *wi -= lr * (ge + mu * *vi);
                }
            }
        }
        let z = net.forward(&va.feature_matrix()).unwrap();
        let correct = va
            .samples()
            .iter()
            .zip(z.iter_rows())
            .filter(|(s, z)| s.given_label == Some(argmax(z)))
            .count();
        accs.push(correct as f64 / va.len() as f64);
        snapshots.push(net.clone());
    }

    let got: Vec<f64> = out.records.iter().map(|r| r.student_valid_acc).collect();
    assert_eq!(got, accs[..got.len()]);
    let reference = &snapshots[out.best_epoch];
    for (a, b) in out.best.student.tensors().zip(reference.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
    assert_eq!(out.best.teacher, out.best.student);
}

#[test]
fn early_stopping_counts_epochs_without_improvement() {
    let (tr, va, _) = clusters(2, 0.4);
    for patience in [1, 3] {
        let cfg = TrainConfig {
            max_epochs: 40,
            patience,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tr, &va);
        let n = out.records.len();
        assert!(n == cfg.max_epochs || n == out.best_epoch + 1 + patience);
        let best = out.records[out.best_epoch].teacher_valid_acc;
        assert_eq!(best, out.best_teacher_valid_acc);
        // earliest epoch reaching the maximum is kept
        assert!(out.records[..out.best_epoch].iter().all(|r| r.teacher_valid_acc < best));
        assert!(out.records.iter().all(|r| r.teacher_valid_acc <= best));
    }
}

#[test]
fn supervised_teacher_mirrors_student() {
    let (tr, va, _) = clusters(3, 0.2);
    for term in [UnsupervisedTerm::None, UnsupervisedTerm::Entropy] {
        let cfg = TrainConfig {
            max_epochs: 8,
            patience: 8,
            term,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tr, &va);
        assert_eq!(out.best.teacher, out.best.student);
        assert!(out
            .records
            .iter()
            .all(|r| r.student_valid_acc == r.teacher_valid_acc));
    }
}

#[test]
fn training_is_reproducible() {
    let (tr, va, _) = clusters(4, 0.4);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 6,
        seed: 77,
        ..TrainConfig::default()
    };
    let a = train(&cfg, &tr, &va);
    let b = train(&cfg, &tr, &va);
    assert_eq!(a.records, b.records);
    assert_eq!(a.best, b.best);
    let c = train(&TrainConfig { seed: 78, ..cfg }, &tr, &va);
    assert_ne!(a.best, c.best);
}

#[test]
fn buffer_covers_every_training_sample() {
    let (tr, va, _) = clusters(5, 0.4);
    let masked = tr.map_labels(|s| s.given_label.filter(|_| s.id % 2 == 0)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 4,
        patience: 4,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &masked, &va);
    assert_eq!(out.buffer.len(), masked.len());
    for s in masked.samples() {
        let p = out.buffer.get(s.id).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn change_variance(acc: impl Iterator<Item = f64>) -> f64 {
    let acc: Vec<f64> = acc.collect();
    let d: Vec<f64> = acc.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64
}

#[test]
fn teacher_is_smoother_than_student() {
    let mut smoother = 0;
    for seed in 0..5 {
        let (tr, va, _) = clusters(10 + seed, 0.4);
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 30,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tr, &va);
        let t = change_variance(out.records.iter().map(|r| r.teacher_valid_acc));
        let s = change_variance(out.records.iter().map(|r| r.student_valid_acc));
        if t <= s {
            smoother += 1;
        }
    }
    assert!(smoother >= 4, "teacher smoother in {smoother} of 5 seeds");
}

#[test]
fn unlabeled_only_needs_an_unsupervised_term() {
    let (tr, va, _) = clusters(6, 0.0);
    let unlabeled = tr.map_labels(|_| None).unwrap();
    let cfg = TrainConfig {
        term: UnsupervisedTerm::None,
        ..TrainConfig::default()
    };
    let init = TeacherStudentPair::init(2, 4, &cfg).unwrap();
    let err = train_and_valid(
        TrainData {
            train: &unlabeled,
            valid: &va,
            original: None,
        },
        &cfg,
        init,
        PredictionBuffer::new(0.6, 4).unwrap(),
        0,
        &mut |_| {},
    )
    .unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Input);
}

#[test]
fn mismatched_network_is_rejected() {
    let (tr, va, _) = clusters(7, 0.0);
    let cfg = TrainConfig::default();
    let init = TeacherStudentPair::init(3, 4, &cfg).unwrap();
    let err = train_and_valid(
        TrainData {
            train: &tr,
            valid: &va,
            original: None,
        },
        &cfg,
        init,
        PredictionBuffer::new(0.6, 4).unwrap(),
        0,
        &mut |_| {},
    )
    .unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Config);
}
