use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treecaps::ast::ProgramRecord;
use treecaps::capsules::RoutingKind;
use treecaps::corpus::{generate_split, make_naming_dataset};
use treecaps::training::checkpoint::{assemble, decode_checkpoint, encode_checkpoint, split_sections};
use treecaps::training::{
    batch_loss_and_grad, forward, grad_check, load_checkpoint, save_checkpoint, train, Model, ModelConfig, Optimizer, OptimizerKind,
    ParameterStore, Target, Task,
};
use treecaps::Error;

fn corpus() -> Vec<ProgramRecord> {
    generate_split(3, 10, 4).unwrap().records
}

fn tiny_model(task: Task, routing: RoutingKind) -> (Model<f32>, Vec<ProgramRecord>) {
    let records = match task {
        Task::Classify => corpus(),
        Task::Name => make_naming_dataset(&corpus()).unwrap(),
    };
    let mut cfg = ModelConfig::tiny(task, routing);
    cfg.seed = 5;
    (Model::from_records(&records, &cfg).unwrap(), records)
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for routing in [RoutingKind::Vts, RoutingKind::Drsw] {
        for task in [Task::Classify, Task::Name] {
            let (model, records) = tiny_model(task, routing);
            let path = dir.path().join("m.tcap");
            save_checkpoint(&path, &model).unwrap();
            let back: Model<f32> = load_checkpoint(&path).unwrap();
            assert_eq!(back, model);
            for r in &records[..5] {
                let p = model.prepare(&r.ast);
                let a = forward(&model.store, &model.config, &p).unwrap();
                let b = forward(&back.store, &back.config, &back.prepare(&r.ast)).unwrap();
                assert_eq!(a.cc, b.cc);
            }
            let wide: Model<f64> = Model {
                config: model.config.clone(),
                vocab: model.vocab.clone(),
                outputs: model.outputs.clone(),
                store: model.store.cast(),
            };
            assert_eq!(decode_checkpoint::<f64>(&encode_checkpoint(&wide).unwrap()).unwrap(), wide);
        }
    }
}

#[test]
fn checkpoint_rejects_damage() {
    let (model, _) = tiny_model(Task::Classify, RoutingKind::Vts);
    let bytes = encode_checkpoint(&model).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&bad_magic), Err(Error::Format(_))));

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(decode_checkpoint::<f32>(&bad_version), Err(Error::Version { found: 9, .. })));

    for cut in [2, 10, 40, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }

    assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::Format(_))));

    let (header, blobs) = split_sections(&bytes).unwrap();
    let mut json: serde_json::Value = serde_json::from_slice(header).unwrap();
    json["config"]["type_dim"] = serde_json::json!(5);
    let tampered = assemble(&serde_json::to_vec(&json).unwrap(), blobs);
    assert!(matches!(decode_checkpoint::<f32>(&tampered), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn grad_check_all_pipelines() {
    for routing in [RoutingKind::Vts, RoutingKind::Drsw] {
        for task in [Task::Classify, Task::Name] {
            let report = grad_check(task, routing, 1e-5, 0).unwrap();
            assert!(report.max_relative_error <= 1e-4, "{routing:?} {task:?}: {report:?}");
            assert!(report.coordinates > 100);
        }
    }
}

#[test]
fn duplicated_sample_has_the_same_mean_gradient() {
    let (model, records) = tiny_model(Task::Classify, RoutingKind::Drsw);
    let wide: ParameterStore<f64> = model.store.cast();
    let p = model.prepare(&records[0].ast);
    let t = Target::Class(records[0].label.unwrap());
    let (l1, g1) = batch_loss_and_grad(&wide, &model.config, &[(&p, t)]).unwrap();
    let (l2, g2) = batch_loss_and_grad(&wide, &model.config, &[(&p, t), (&p, t)]).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}

#[test]
fn training_is_reproducible_and_logged() {
    let records = corpus();
    let mut cfg = ModelConfig::tiny(Task::Classify, RoutingKind::Vts);
    cfg.epochs = 2;
    cfg.batch_size = 4;
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.jsonl");
    let a = train(&records, &cfg, Some(&log_path)).unwrap();
    let b = train(&records, &cfg, None).unwrap();
    assert_eq!(a.log.len(), 2);
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!((x.epoch, x.train_loss, x.val_metric, x.lr), (y.epoch, y.train_loss, y.val_metric, y.lr));
    }
    assert_eq!(a.model.store, b.model.store);
    let text = std::fs::read_to_string(&log_path).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in ["epoch", "train_loss", "val_metric", "wall_time"] {
        assert!(lines[0].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn naming_model_trains() {
    let records = make_naming_dataset(&corpus()).unwrap();
    let mut cfg = ModelConfig::tiny(Task::Name, RoutingKind::Vts);
    cfg.epochs = 1;
    let report = train(&records, &cfg, None).unwrap();
    assert!(report.log[0].train_loss.is_finite());
    assert!((0.0..=1.0).contains(&report.best_val));
}

/// Scalar RAdam written directly from the update equations.
fn scalar_radam(grad: f64, steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps {
        let t = t as i32;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        let m_hat = m / (1.0 - b1.powi(t));
        let rho = rho_inf - 2.0 * t as f64 * b2.powi(t) / (1.0 - b2.powi(t));
        if rho > 4.0 {
            let r = (((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
            let denom = v.sqrt() + eps;
            p -= lr * r * (1.0 - b2.powi(t)).sqrt() * m_hat / denom;
        } else {
            p -= lr * m_hat;
        }
        out.push(p);
    }
    out
}

#[test]
fn radam_matches_scalar_reference() {
    let (model, _) = tiny_model(Task::Classify, RoutingKind::Vts);
    let mut store: ParameterStore<f64> = model.store.cast();
    for (_, mut t) in store.tensors_mut() {
        t.fill(1.0);
    }
    let mut grads = store.clone();
    for (_, mut t) in grads.tensors_mut() {
        t.fill(1.0);
    }
    let mut opt = Optimizer::new(OptimizerKind::Radam, &store);
    let expected = scalar_radam(1.0, 10, 1e-3);
    for want in expected {
        opt.step(&mut store, &grads, 1e-3).unwrap();
        let first: &ArrayD<f64> = &store.tensors()[0].1.to_owned();
        assert!(first.iter().all(|&x| (x - want).abs() <= 1e-12));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fresh: ParameterStore<f64> = ParameterStore::init(&model.config, treecaps::training::StoreShape::new(&model.vocab, 3), &mut rng);
    let mut moved = fresh.clone();
    let zeros = fresh.zeros_like();
    let mut opt = Optimizer::new(OptimizerKind::Radam, &moved);
    opt.step(&mut moved, &zeros, 1e-3).unwrap();
    assert_eq!(moved, fresh);
    assert_eq!(opt.step, 1);
    opt.step(&mut moved, &grads, 0.0).unwrap();
    assert_eq!(moved, fresh);
}
