use rand::Rng;

use super::*;

fn small_spec() -> NetSpec {
    NetSpec { input_size: 3, hidden: 8, proj: None, branches: vec![], body: vec![], output_size: 4 }
}

fn random_sample(spec: &NetSpec, steps: usize, seed: u64) -> SeqSample {
    let mut rng = crate::rng::stream(seed, &[99]);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    SeqSample {
        steps,
        inputs: draw(steps * spec.input_size),
        statics: spec.branches.iter().map(|b| draw(b.input)).collect(),
        targets: draw(steps * spec.output_size),
    }
}

fn model(spec: &NetSpec, seed: u64) -> SequenceModel {
    SequenceModel::init("test", spec.clone(), Normalization::identity(spec), seed).unwrap()
}

fn reach_loss(lambda: f64) -> LossSpec {
    LossSpec {
        terms: vec![
            LossTerm { kind: LossKind::Mse, start: 0, end: 3, weight: 1.0 },
            LossTerm { kind: LossKind::Mae, start: 3, end: 4, weight: 3.0 },
        ],
        lambda_smooth: lambda,
    }
}

#[test]
fn grad_check_mse() {
    let spec = small_spec();
    let m = model(&spec, 1);
    let s = random_sample(&spec, 6, 1);
    let r = grad_check(&m, &s, &LossSpec::mse(4), None, DEFAULT_EPS);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn grad_check_mae_away_from_kinks() {
    let spec = small_spec();
    let m = model(&spec, 1);
    let mut s = random_sample(&spec, 6, 2);
    let y = m.predict(&s).unwrap();
    for (t, p) in s.targets.iter_mut().zip(&y) {
        *t = p + if *t >= 0.0 { 0.1 } else { -0.1 };
    }
    let loss = LossSpec { terms: vec![LossTerm { kind: LossKind::Mae, start: 0, end: 4, weight: 1.0 }], lambda_smooth: 0.0 };
    let r = grad_check(&m, &s, &loss, None, DEFAULT_EPS);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn grad_check_with_smoothness_and_dropout() {
    let spec = NetSpec {
        input_size: 4,
        hidden: 8,
        proj: Some(6),
        branches: vec![BranchSpec { input: 4, units: 5 }, BranchSpec { input: 2, units: 3 }],
        body: vec![7],
        output_size: 4,
    };
    let m = model(&spec, 3);
    let mut s = random_sample(&spec, 5, 3);
    let y = m.predict(&s).unwrap();
    for (k, t) in s.targets.iter_mut().enumerate() {
        if k % 4 == 3 {
            *t = y[k] + 0.2;
        }
    }
    let mask = dropout_mask(0.2, 5 * 8, &mut crate::rng::stream(3, &[]));
    let r = grad_check(&m, &s, &reach_loss(0.5), Some(&mask), DEFAULT_EPS);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn zero_loss_gives_zero_gradient() {
    let spec = small_spec();
    let m = model(&spec, 4);
    let mut s = random_sample(&spec, 4, 4);
    s.targets = m.predict(&s).unwrap();
    let (l, g) = m.loss_and_grad(&s, &LossSpec::mse(4), None);
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn loss_weight_scales_its_gradient() {
    let spec = small_spec();
    let m = model(&spec, 5);
    let s = random_sample(&spec, 4, 5);
    let term = |w: f64| LossSpec { terms: vec![LossTerm { kind: LossKind::Mse, start: 0, end: 3, weight: w }], lambda_smooth: 0.0 };
    let (_, g1) = m.loss_and_grad(&s, &term(1.0), None);
    let (_, g2) = m.loss_and_grad(&s, &term(2.0), None);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

fn constant_dataset(spec: &NetSpec, n: usize) -> Vec<SeqSample> {
    (0..n)
        .map(|i| {
            let mut s = random_sample(spec, 3 + i % 4, 10 + i as u64);
            s.targets = [0.4, -0.2, 0.1, 0.7].iter().copied().cycle().take(s.steps * 4).collect();
            s
        })
        .collect()
}

#[test]
fn memorizes_a_constant_target() {
    let spec = NetSpec { input_size: 3, hidden: 8, proj: Some(6), branches: vec![], body: vec![], output_size: 4 };
    let data = constant_dataset(&spec, 16);
    let mut m = model(&spec, 6);
    let config = TrainConfig { epochs: 300, batch_size: 8, dropout_rate: 0.0, learning_rate: 0.01, ..TrainConfig::default() };
    let hist = train(&mut m, &data, &LossSpec::mse(4), &config).unwrap();
    assert!(hist.last().unwrap().loss <= 1e-4, "{:?}", hist.last());
    let y = m.predict(&data[0]).unwrap();
    assert!((y[y.len() - 1] - 0.7).abs() < 1e-2);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let spec = small_spec();
    let data: Vec<_> = (0..12).map(|i| random_sample(&spec, 4 + i % 3, i as u64)).collect();
    let config = TrainConfig { epochs: 3, batch_size: 5, ..TrainConfig::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m = model(&spec, 7);
            let h = train(&mut m, &data, &reach_loss(0.1), &config).unwrap();
            (m.params, h)
        })
    };
    let (p1, h1) = run(1);
    let (p4, h4) = run(4);
    assert_eq!(p1, p4);
    assert_eq!(h1, h4);
}

#[test]
fn non_finite_inputs_abort_training() {
    let spec = small_spec();
    let mut data = vec![random_sample(&spec, 3, 1)];
    data[0].targets[0] = f64::NAN;
    let mut m = model(&spec, 1);
    let err = train(&mut m, &data, &LossSpec::mse(4), &TrainConfig { epochs: 1, ..TrainConfig::default() });
    assert_eq!(err, Err(NeuralError::NonFiniteGradient { epoch: 0, batch: 0 }));
}

#[test]
fn checkpoint_round_trip() {
    let spec = NetSpec { input_size: 2, hidden: 3, proj: Some(2), branches: vec![BranchSpec { input: 1, units: 2 }], body: vec![3], output_size: 2 };
    let m = model(&spec, 8);
    let ck = Checkpoint::new(&m, Some(TrainConfig::default()), 8, vec![EpochStats { epoch: 0, loss: 0.5 }]);
    let text = ck.to_json();
    let back: Checkpoint = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.clone().into_model().unwrap(), m);
    let mut broken = back.clone();
    broken.params.pop();
    assert!(matches!(broken.into_model(), Err(NeuralError::Checkpoint(_))));
    let mut broken = back;
    broken.manifest[0].offset = 1;
    assert!(broken.into_model().is_err());
}

#[test]
fn scaler_fit() {
    let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
    let s = Scaler::fit(2, rows.iter().map(Vec::as_slice));
    assert_eq!(s.mean, vec![2.0, 5.0]);
    assert_eq!(s.std, vec![1.0, 1.0]);
}
