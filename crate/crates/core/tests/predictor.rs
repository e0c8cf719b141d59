use natsched::predictor::{loss_and_grad, mask_for_training, train, ModelDims, TrainConfig, TrainableModel};
use natsched::rng::stream;
use natsched::strategy::MaskRatioDist;
use natsched::toyworld::{make_chain, sample_dataset, sample_sequence};
use rand::seq::index;
use rand::Rng;

mod common;
use common::gradient_check;

fn default_dims() -> ModelDims {
    ModelDims { k: 8, n: 16, c: 4, d: 16, h: 64, w: 2 }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let dims = default_dims();
    let chain = make_chain(8, 16, 4, 0).unwrap();
    let mut g = stream(21, &[]);
    for (round, class) in [Some(2), None].into_iter().enumerate() {
        let model = TrainableModel::new(dims, 100 + round as u64).unwrap();
        let seq = sample_sequence(&chain, 1, &mut g);
        let (masked, positions) = mask_for_training(&seq, 0.5, &mut g);
        let (_, grad) = loss_and_grad(&model, &masked, &positions, &seq, class).unwrap();
        let live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).collect();
        let coords: Vec<usize> = index::sample(&mut g, live.len(), 50).into_iter().map(|j| live[j]).collect();
        let worst = gradient_check(&model, &masked, &positions, &seq, class, &coords);
        assert!(worst < 1e-4, "relative error {worst}");
    }
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let dims = ModelDims { k: 3, n: 10, c: 2, d: 4, h: 5, w: 1 };
    let model = TrainableModel::new(dims, 3).unwrap();
    let seq = vec![0usize; 10];
    let mut masked: Vec<Option<usize>> = seq.iter().map(|&v| Some(v)).collect();
    masked[0] = None;
    let (_, grad) = loss_and_grad(&model, &masked, &[0], &seq, Some(1)).unwrap();
    // Token 1 and 2 never appear and position 5 is outside the window.
    let d = dims.d;
    assert!(grad[d..3 * d].iter().all(|&x| x == 0.0));
    let pos_base = (dims.k + 1) * d + (dims.c + 1) * d;
    assert!(grad[pos_base + 5 * d..pos_base + 6 * d].iter().all(|&x| x == 0.0));
}

#[test]
fn training_beats_uniform_loss_on_held_out_data() {
    let chain = make_chain(4, 8, 2, 7).unwrap();
    let data = sample_dataset(&chain, 400, 1).unwrap();
    let dims = ModelDims { k: 4, n: 8, c: 2, d: 8, h: 16, w: 1 };
    let cfg = TrainConfig { steps: 2000, seed: 5, ..Default::default() };
    let (model, log) = train(TrainableModel::new(dims, 1).unwrap(), &data, &MaskRatioDist::Arcsine, &cfg).unwrap();
    assert!(!log.entries.is_empty());

    let mut g = stream(99, &[]);
    let mut total = 0.0;
    let trials = 500;
    for _ in 0..trials {
        let class = g.gen_range(0..2);
        let seq = sample_sequence(&chain, class, &mut g);
        let (masked, positions) = mask_for_training(&seq, 0.5, &mut g);
        total += loss_and_grad(&model, &masked, &positions, &seq, Some(class)).unwrap().0;
    }
    let held_out = total / trials as f64;
    assert!(held_out < 0.9 * (4f64).ln(), "held-out loss {held_out}");
}

#[test]
fn training_is_reproducible_bit_for_bit() {
    let chain = make_chain(3, 6, 2, 1).unwrap();
    let data = sample_dataset(&chain, 50, 2).unwrap();
    let dims = ModelDims { k: 3, n: 6, c: 2, d: 4, h: 8, w: 1 };
    let cfg = TrainConfig { steps: 200, seed: 9, ..Default::default() };
    let dist = MaskRatioDist::Beta { alpha: 2.0, beta: 3.0 };
    let run = || train(TrainableModel::new(dims, 4).unwrap(), &data, &dist, &cfg).unwrap().0;
    let (a, b) = (run(), run());
    let mut bytes_a = Vec::new();
    let mut bytes_b = Vec::new();
    a.write_checkpoint(&mut bytes_a).unwrap();
    b.write_checkpoint(&mut bytes_b).unwrap();
    assert_eq!(bytes_a, bytes_b);
}
