use graphmind::gcn::{gcn_train, predict_from_logits, GcnConfig, GcnModel};
use graphmind::graph::{adjacency_from_pearson, graclus_coarsen, pearson_matrix, GraphHierarchy};
use graphmind::tensor::{gradient_check_params, Mode, OptimizerKind, ParamStore, SeedStream, Tape, Tensor, Var};
use graphmind::Checkpoint;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_features(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    Tensor::new(vec![m, n], (0..m * n).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()
}

fn hierarchy_from(features: &Tensor, levels: usize) -> GraphHierarchy {
    let a = adjacency_from_pearson(&pearson_matrix(features).unwrap());
    graclus_coarsen(&a, levels).unwrap()
}

fn config(filters: &[usize]) -> GcnConfig {
    GcnConfig {
        filters: filters.to_vec(),
        batch_size: 8,
        learning_rate: 1e-3,
        epochs: 3,
        ..GcnConfig::default()
    }
}

fn logits_of(model: &GcnModel, features: &Tensor, mode: Mode) -> Tensor {
    let x = model.prepare(features).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (l, _) = model.forward(&mut tape, xv, mode).unwrap();
    tape.value(l).clone()
}

#[test]
fn default_depth_reduces_64_nodes_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_features(&mut rng, 40, 64);
    let h = hierarchy_from(&f, 6);
    assert_eq!(h.sizes, vec![64, 32, 16, 8, 4, 2, 1]);
    let model = GcnModel::new(&GcnConfig::default(), h, &SeedStream::new(1)).unwrap();
    assert_eq!(model.store.get(model.cls_w).shape(), &[512, 4]);
    assert_eq!(logits_of(&model, &f.slice_rows(0, 3), Mode::Eval).shape(), &[3, 4]);
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_features(&mut rng, 20, 16);
    let mut model = GcnModel::new(&config(&[4, 4]), hierarchy_from(&f, 2), &SeedStream::new(2)).unwrap();
    for id in model.store.decayed_ids() {
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let p = model.predict(&f).unwrap();
    assert!(p.probabilities.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    assert!(p.labels.iter().all(|&l| l == 0));
}

#[test]
fn eval_rows_are_batch_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_features(&mut rng, 12, 16);
    let model = GcnModel::new(&config(&[3, 5, 2]), hierarchy_from(&f, 3), &SeedStream::new(3)).unwrap();
    let full = logits_of(&model, &f, Mode::Eval);
    let mut other = random_features(&mut rng, 12, 16);
    other.data_mut()[4 * 16..5 * 16].copy_from_slice(&f.data()[4 * 16..5 * 16]);
    let mixed = logits_of(&model, &other, Mode::Eval);
    assert_eq!(&full.data()[16..20], &mixed.data()[16..20]);
    assert!(model.prepare(&Tensor::zeros(&[2, 15])).is_err());
}

#[test]
fn prediction_rules() {
    let uniform = Tensor::full(&[3, 4], 0.7);
    let p = predict_from_logits(&uniform);
    assert_eq!(p.labels, vec![0, 0, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = Tensor::new(vec![50, 4], (0..200).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
    let p = predict_from_logits(&logits);
    for row in p.probabilities.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let shifted = Tensor::new(vec![50, 4], logits.data().iter().map(|v| v + 123.25).collect()).unwrap();
    assert_eq!(predict_from_logits(&shifted).labels, p.labels);
}

#[test]
fn zero_learning_rate_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_features(&mut rng, 24, 16);
    let labels: Vec<usize> = (0..24).map(|i| i % 4).collect();
    let h = hierarchy_from(&f, 2);
    let seeds = SeedStream::new(5);
    let frozen_cfg = GcnConfig {
        learning_rate: 0.0,
        ..config(&[4, 4])
    };
    let mut frozen = GcnModel::new(&frozen_cfg, h.clone(), &seeds).unwrap();
    let before = frozen.store.clone();
    gcn_train(&mut frozen, &f, &labels, &frozen_cfg, &seeds).unwrap();
    for id in before.trainable_ids() {
        assert_eq!(before.get(id).data(), frozen.store.get(id).data());
    }

    let cfg = config(&[4, 4]);
    let mut a = GcnModel::new(&cfg, h.clone(), &seeds).unwrap();
    let mut b = GcnModel::new(&cfg, h, &seeds).unwrap();
    let ha = gcn_train(&mut a, &f, &labels, &cfg, &seeds).unwrap();
    let hb = gcn_train(&mut b, &f, &labels, &cfg, &seeds).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(ha.loss.len(), 3);
    assert!(gcn_train(&mut a, &f.slice_rows(0, 0), &[], &cfg, &seeds).is_err());
}

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_features(&mut rng, 6, 8);
    let labels = [0, 1, 2, 3, 1, 0];
    let model = GcnModel::new(&config(&[2, 3, 4]), hierarchy_from(&f, 3), &SeedStream::new(6)).unwrap();
    let x = model.prepare(&f).unwrap();
    let report = gradient_check_params(
        &model.store,
        |tape: &mut Tape, store: &ParamStore| -> graphmind::Result<Var> {
            let mut m = model.clone();
            m.store = store.clone();
            let xv = tape.constant(x.clone());
            let (logits, _) = m.forward(tape, xv, Mode::Train)?;
            m.loss(tape, logits, &labels, 1e-3)
        },
        1e-4,
        usize::MAX,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn small_sgd_step_does_not_increase_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = random_features(&mut rng, 16, 16);
    let labels: Vec<usize> = (0..16).map(|i| (i * 3) % 4).collect();
    let mut model = GcnModel::new(&config(&[3, 3]), hierarchy_from(&f, 2), &SeedStream::new(7)).unwrap();
    let x = model.prepare(&f).unwrap();
    let eval = |m: &GcnModel| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (logits, _) = m.forward(&mut tape, xv, Mode::Train).unwrap();
        let loss = m.loss(&mut tape, logits, &labels, 0.0).unwrap();
        (tape, loss)
    };
    let (tape, loss) = eval(&model);
    let before = tape.value(loss).data()[0];
    tape.backward(loss, &mut model.store).unwrap();
    let mut opt = graphmind::tensor::Optimizer::new(OptimizerKind::Sgd, 1e-6, &model.store);
    opt.step(&mut model.store).unwrap();
    let (tape, loss) = eval(&model);
    assert!(tape.value(loss).data()[0] <= before);
}

#[test]
fn relabeled_nodes_give_identical_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 16;
    let f = random_features(&mut rng, 30, n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // column j of the relabeled matrix is column perm[j] of the original
    let mut g = Tensor::zeros(&[30, n]);
    for i in 0..30 {
        for j in 0..n {
            g.data_mut()[i * n + j] = f.at2(i, perm[j]);
        }
    }
    let p = pearson_matrix(&f).unwrap();
    let q = pearson_matrix(&g).unwrap();
    assert_eq!(q, DMatrix::from_fn(n, n, |i, j| p[(perm[i], perm[j])]));

    let h = hierarchy_from(&f, 2);
    let mut inverse = vec![0; n];
    for (j, &orig) in perm.iter().enumerate() {
        inverse[orig] = j;
    }
    let mut relabeled = h.clone();
    relabeled.permutation = h.permutation.iter().map(|p| p.map(|i| inverse[i])).collect();
    let model = GcnModel::new(&config(&[3, 2]), h, &SeedStream::new(8)).unwrap();
    let mut moved = model.clone();
    moved.hierarchy = relabeled;
    assert_eq!(model.predict(&f).unwrap(), moved.predict(&g).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = random_features(&mut rng, 10, 8);
    let h = hierarchy_from(&f, 3);
    let model = GcnModel::new(&config(&[2, 3, 4]), h.clone(), &SeedStream::new(9)).unwrap();
    let bytes = model.checkpoint().to_bytes();
    let back = GcnModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), h).unwrap();
    assert_eq!(back.order(), 2);
    assert_eq!(model.predict(&f).unwrap(), back.predict(&f).unwrap());
    let shallow = graclus_coarsen(&adjacency_from_pearson(&pearson_matrix(&f).unwrap()), 1).unwrap();
    assert!(GcnModel::from_checkpoint(&model.checkpoint(), shallow).is_err());
}
