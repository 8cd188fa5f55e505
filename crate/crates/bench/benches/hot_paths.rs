use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kinetrace::dataset::{generate_synthetic_subject, LagWindowSpec, SyntheticConfig};
use kinetrace::decoders::{build_cnn_lstm, build_mlp, fit_mlr};
use kinetrace::eval::pcc;
use kinetrace::nn::{mse_loss, Mode, Tensor};
use kinetrace::pipeline::assemble;
use kinetrace::signal::{apply_fir, ChannelSeries, FrequencyBand};

fn subject() -> kinetrace::dataset::SubjectRecording {
    let cfg = SyntheticConfig { n_channels: 21, n_trials: 40, ..Default::default() };
    generate_synthetic_subject(&cfg).unwrap().0
}

fn filtering(c: &mut Criterion) {
    let rec = subject();
    let series = ChannelSeries::new(rec.eeg()[0].clone(), rec.rate_hz()).unwrap();
    let fb1 = FrequencyBand::Fb1.kernel(rec.rate_hz(), None).unwrap();
    c.bench_function("fir FB1 1001 taps, 4000 samples", |b| b.iter(|| apply_fir(black_box(&series), &fb1).unwrap()));
}

fn features_and_mlr(c: &mut Criterion) {
    let rec = subject();
    let spec = LagWindowSpec::new(150.0, 0.0, rec.rate_hz()).unwrap();
    let trials: Vec<usize> = (0..rec.trials().len()).collect();
    c.bench_function("lag features 40 trials x 21 ch x 16 lags", |b| {
        b.iter(|| assemble(black_box(&rec), &trials, &spec).unwrap())
    });
    let data = assemble(&rec, &trials, &spec).unwrap();
    c.bench_function("mLR fit 2400 x 336", |b| b.iter(|| fit_mlr(black_box(&data.features), &data.targets).unwrap()));
    let x = data.targets.axis(0);
    let y = data.targets.axis(1);
    c.bench_function("pcc 2400 samples", |b| b.iter(|| pcc(black_box(&x), &y).unwrap()));
}

fn networks(c: &mut Criterion) {
    let batch = 64;
    let (lags, channels) = (26, 21);
    let n = batch * lags * channels;
    let input = Tensor::new(vec![batch, channels, lags], (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let target = Tensor::new(vec![batch, 3], (0..batch * 3).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();

    let mut mlp = build_mlp(lags * channels, 0).unwrap();
    let flat = Tensor::new(vec![batch, lags * channels], input.data().to_vec()).unwrap();
    c.bench_function("MLP train step, batch 64, 546 inputs", |b| {
        b.iter(|| {
            let net = mlp.network_mut();
            net.zero_grad();
            let out = net.forward(black_box(&flat), Mode::Train).unwrap();
            let (_, g) = mse_loss(&out, &target).unwrap();
            net.backward(&g).unwrap();
        })
    });

    let mut cnn = build_cnn_lstm(lags, channels, 0).unwrap();
    c.bench_function("CNN-LSTM train step, batch 64, L 26, N 21", |b| {
        b.iter(|| {
            let net = cnn.network_mut();
            net.zero_grad();
            let out = net.forward(black_box(&input), Mode::Train).unwrap();
            let (_, g) = mse_loss(&out, &target).unwrap();
            net.backward(&g).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = filtering, features_and_mlr, networks
}
criterion_main!(benches);
