mod common;

use common::*;
use dpbn_core::data_io::IdxImages;
use dpbn_core::data_io::{gaussianify_images, prepare, Dither, RawMnist};
use dpbn_core::training::{batch_loss, evaluate, sampling_efficiency, train, Decoder, Hyperparams};
use dpbn_core::{ActivationKind, Error, SaddleOptions};

#[test]
fn linear_loss_is_least_squares_residual_power() {
    let net = small_net(ActivationKind::linear(), &[9, 4], 3, 1.0);
    let batch = batch_for(&net, 8, 5);
    let w = net.layers()[0].map.as_dense().unwrap().data().to_vec();
    let mut want = 0.0;
    for x in &batch {
        let z: Vec<f64> = (0..4).map(|j| (0..9).map(|k| w[k * 4 + j] * x[k]).sum()).collect();
        let p = min_norm_solution(&w, 9, 4, &z);
        want += x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    want /= (9 * batch.len()) as f64;
    let got = batch_loss(&net, &batch, Decoder::Dpbn, &SaddleOptions::default()).unwrap();
    assert!((got.mse - want).abs() < 1e-12, "{} vs {want}", got.mse);
    assert!(got.mask.iter().all(|&m| m));
}

#[test]
fn constant_auto_encoder_predicts_the_mean() {
    // With s = 0 the decoder outputs λ(recon_bias); choosing λ⁻¹ of the
    // per-pixel mean leaves exactly the per-pixel variance.
    let net = small_net(ActivationKind::Ted, &[5, 2], 4, 1.0);
    let batch = batch_for(&net, 9, 7);
    let mean: Vec<f64> = (0..5).map(|k| batch.iter().map(|x| x[k]).sum::<f64>() / 7.0).collect();
    let net = with_layers(&net, |layers| {
        layers[0].recon_scale = 0.0;
        layers[0].recon_bias = mean.iter().map(|&m| ActivationKind::Ted.lambda_inv(m).unwrap()).collect();
    });
    let var: f64 =
        batch.iter().flat_map(|x| x.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m))).sum::<f64>() / (5.0 * 7.0);
    let got = batch_loss(&net, &batch, Decoder::Aec, &SaddleOptions::default()).unwrap().mse;
    assert!((got - var).abs() < 1e-12, "{got} vs {var}");
}

fn hyper(lr: f64, epochs: usize) -> Hyperparams {
    Hyperparams { learning_rate: lr, momentum: 0.0, batch_size: 8, epochs, seed: 5, ..Default::default() }
}

#[test]
fn linear_training_decreases_monotonically() {
    let net = small_net(ActivationKind::linear(), &[12, 3], 6, 1.0);
    let data = batch_for(&net, 10, 64);
    let report = train(net, &data, &[], &hyper(0.02, 5), Decoder::Dpbn, &SaddleOptions::default()).unwrap();
    let mse: Vec<f64> = report.epochs.iter().map(|e| e.train.mse).collect();
    assert_eq!(mse.len(), 5);
    assert!(mse.windows(2).all(|w| w[1] < w[0]), "{mse:?}");
}

#[test]
fn fixed_seed_is_bit_identical() {
    let run = || {
        let net = small_net(ActivationKind::Ted, &[10, 5, 3], 12, 1.0);
        let data = batch_for(&net, 11, 40);
        let mut h = hyper(0.5, 3);
        h.momentum = 0.9;
        train(net, &data[..30], &data[30..], &h, Decoder::Dpbn, &SaddleOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!((x.train, x.test), (y.train, y.test));
    }
}

#[test]
fn efficiency_is_reported_not_raised() {
    let net = small_net(ActivationKind::Ted, &[8, 4, 2], 13, 1.0);
    let data = batch_for(&net, 12, 10);
    let opts = SaddleOptions::default();
    assert_eq!(sampling_efficiency(&small_net(ActivationKind::Ted, &[8, 3], 1, 1.0), &data, &opts).unwrap(), 1.0);
    // Features far outside the feasible set make every top solve fail.
    let huge = net.reconstruct_dpbn(&[1e6, -1e6], &opts).unwrap();
    assert!(huge.failed());
    let eff = sampling_efficiency(&net, &data, &opts).unwrap();
    assert!((0.0..=1.0).contains(&eff));
}

#[test]
fn divergence_names_epoch_and_batch() {
    let net = small_net(ActivationKind::linear(), &[12, 3], 6, 1.0);
    let data = batch_for(&net, 10, 64);
    let err = train(net, &data, &[], &hyper(1e6, 3), Decoder::Aec, &SaddleOptions::default()).unwrap_err();
    let Error::Diverged { epoch, batch, .. } = err else { panic!("expected divergence, got {err}") };
    assert!(epoch >= 1 && batch < 8);
    assert!(err.to_string().contains(&format!("epoch {epoch}")));
}

#[test]
fn evaluation_uses_training_tolerances() {
    let net = small_net(ActivationKind::trunc_gauss(), &[8, 3], 14, 1.0);
    let data = batch_for(&net, 15, 12);
    let opts = SaddleOptions::default();
    let e = evaluate(&net, &data, Decoder::Dpbn, &opts).unwrap();
    let b = batch_loss(&net, &data, Decoder::Dpbn, &opts).unwrap();
    assert!((e.mse - b.mse).abs() < 1e-15);
    assert_eq!(e.sampling_efficiency, 1.0);
}

fn raw(count: usize) -> RawMnist {
    let pixels = (0..count * 784).map(|i| ((i * 37) % 256) as u8).collect();
    RawMnist {
        images: IdxImages { count, rows: 28, cols: 28, pixels },
        labels: (0..count).map(|i| (i % 10) as u8).collect(),
    }
}

#[test]
fn preprocessing_is_deterministic_and_seeded() {
    let r = raw(3);
    let d = Dither::default();
    let a = prepare(&r, ActivationKind::Ted, 4, &d).unwrap();
    assert_eq!(a, prepare(&r, ActivationKind::Ted, 4, &d).unwrap());
    assert_ne!(a.vectors, prepare(&r, ActivationKind::Ted, 5, &d).unwrap().vectors);
    assert!(a.vectors.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
    // The range mapping is applied on top of one shared gaussianification.
    let g = gaussianify_images(&r, 4, &d).unwrap();
    let reals = prepare(&r, ActivationKind::linear(), 4, &d).unwrap();
    assert_eq!(reals.vectors, g);
}
