use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use linmm_core::demod::receiver_filter;
use linmm_core::{
    cmac_tag, comparator, compute_pid, receive_linmm_response, run_transaction, synth_linmm_response, AttackScenario,
    Capability, ChecksumModel, FrameId, MacKey, MacTag, Network, Node, NoiseModel, PhyConfig, ReceiveOptions,
    ResponseFrame, Transaction,
};

const DATA: [u8; 8] = [0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef];

fn key() -> MacKey {
    MacKey::from_hex("2b7e151628aed2a6abf7158809cf4f3c").unwrap()
}

fn frame() -> ResponseFrame {
    ResponseFrame::new(&DATA, ChecksumModel::Enhanced, compute_pid(0x10).unwrap()).unwrap()
}

fn bench_cmac(c: &mut Criterion) {
    let key = key();
    let msg = [0x50u8, 1, 2, 3, 4, 5, 6, 7, 8];
    c.bench_function("cmac_tag_9_bytes", |b| b.iter(|| cmac_tag(&key, black_box(&msg))));
}

fn bench_phy(c: &mut Criterion) {
    let cfg = PhyConfig::default();
    let frame = frame();
    let mac = MacTag::new(0xdead_beef_0bad_f00d);
    c.bench_function("synth_response", |b| {
        b.iter(|| synth_linmm_response(black_box(&frame), mac, &cfg).unwrap())
    });
    let w = synth_linmm_response(&frame, mac, &cfg).unwrap();
    c.bench_function("filter_and_comparator", |b| {
        b.iter(|| comparator(&receiver_filter(black_box(&w), &cfg).unwrap(), &cfg))
    });
    let pid = compute_pid(0x10).unwrap();
    let opts = ReceiveOptions::new(pid);
    let key = key();
    c.bench_function("receive_response", |b| {
        b.iter(|| receive_linmm_response(black_box(&w), &cfg, &key, pid, &opts).unwrap())
    });
}

fn bench_transaction(c: &mut Criterion) {
    let cfg = PhyConfig::default();
    let net = Network::new(vec![
        Node::master("master", Capability::LinMm),
        Node::slave("target", &[0x10], Capability::LinMm, Some(key()), &DATA).unwrap(),
    ])
    .unwrap();
    let tx = Transaction::new(FrameId::new(0x10).unwrap());
    let quiet = NoiseModel::quiet();
    let noisy = NoiseModel::gaussian(0.3, 1);
    c.bench_function("transaction_quiet", |b| {
        b.iter(|| run_transaction(&net, &tx, &AttackScenario::None, &quiet, &cfg).unwrap())
    });
    c.bench_function("transaction_noisy", |b| {
        b.iter(|| run_transaction(&net, &tx, &AttackScenario::None, &noisy, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_cmac, bench_phy, bench_transaction);
criterion_main!(benches);
