use criterion::{black_box, criterion_group, criterion_main, Criterion};
use irisward::defense::{strategy2_detect, DefenseConfig, Recognizer, Strategy};
use irisward::denoise::{train_bank, BankConfig};
use irisward::irispipe::{encode_hard, hamming, synth_dataset, GaborBank, GaborParams, GrayImage, SynthSpec};
use irisward::tensornet::TrainConfig;
use irisward::wavelet::{uniform_decompose, uniform_reconstruct, WaveletFilters};

fn dataset() -> irisward::irispipe::Dataset {
    synth_dataset(&SynthSpec {
        identities: 4,
        probes_per_identity: 1,
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn wavelet(c: &mut Criterion) {
    let ds = dataset();
    let img = ds.records[0].image.pixels().clone();
    let haar = WaveletFilters::haar();
    c.bench_function("decompose_l2_64x512", |b| b.iter(|| uniform_decompose(black_box(img.view()), 2, &haar).unwrap()));
    let set = uniform_decompose(img.view(), 2, &haar).unwrap();
    c.bench_function("reconstruct_l2_64x512", |b| b.iter(|| uniform_reconstruct(black_box(&set), &haar).unwrap()));
}

fn encode(c: &mut Criterion) {
    let ds = dataset();
    let rec = &ds.records[0];
    let (rows, cols) = rec.image.shape();
    let gabor = GaborBank::new(GaborParams::default(), rows, cols).unwrap();
    c.bench_function("encode_hard_64x512", |b| b.iter(|| encode_hard(black_box(rec), &gabor).unwrap()));
    let a = encode_hard(rec, &gabor).unwrap();
    let other = encode_hard(&ds.records[1], &gabor).unwrap();
    c.bench_function("hamming_with_shifts", |b| b.iter(|| hamming(black_box(&a), &other).unwrap()));
}

fn defend(c: &mut Criterion) {
    let ds = dataset();
    let images: Vec<GrayImage> = ds.records.iter().map(|r| r.image.clone()).collect();
    let cfg = BankConfig {
        width_scale: 0.125,
        train: TrainConfig {
            epochs: 1,
            ..BankConfig::default().train
        },
        long_bands: Vec::new(),
        ..BankConfig::default()
    };
    let (mut bank, _) = train_bank(&images, &cfg).unwrap();
    bank.calibrate(&images).unwrap();
    let rec = ds.probes().next().unwrap();
    let (rows, cols) = rec.image.shape();
    let gabor = GaborBank::new(GaborParams::default(), rows, cols).unwrap();
    let recognizer = Recognizer::from_records(gabor, ds.gallery(), Some(0.32)).unwrap();

    let set = uniform_decompose(rec.image.pixels().view(), 2, &WaveletFilters::haar()).unwrap();
    c.bench_function("denoise_all_bands", |b| b.iter(|| bank.denoise_all(black_box(&set)).unwrap()));
    let s2 = DefenseConfig {
        n: 5,
        ..DefenseConfig::for_strategy(Strategy::SuspectRemoval)
    };
    c.bench_function("strategy2_n5", |b| {
        b.iter(|| strategy2_detect(black_box(rec.image.pixels()), &rec.mask, &recognizer, &bank, &s2).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = wavelet, encode, defend
}
criterion_main!(benches);
