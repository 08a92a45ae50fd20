use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndecomp::boundary::{self, PgdConfig};
use ndecomp::contract::{evaluate_contract, ContractParams};
use ndecomp::data::gen_blobs;
use ndecomp::decomp::{train_components, LbmaskConfig};
use ndecomp::nn::{train_reference, TrainConfig};
use ndecomp::par;

const MODES: [(&str, usize); 2] = [("sequential", 1), ("parallel", 0)];

fn fixture() -> (ndecomp::data::Dataset, ndecomp::nn::DenseNetwork) {
    let data = gen_blobs(4, 20, 200, 8.0, 10, 11).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        batch_size: 32,
        seed: 3,
    };
    let net = train_reference(&data, &[20, 32, 32, 4], &cfg).unwrap();
    (data, net)
}

fn bench_stages(c: &mut Criterion) {
    let (data, net) = fixture();
    let pgd = PgdConfig::for_dataset(&data, 5);
    let mined = boundary::mine_boundary(&net, &data, &pgd, 1e-4, 60).unwrap();
    let calibration = boundary::build_calibration_set(&data, &mined.points, &net).unwrap();
    let lbmask = LbmaskConfig {
        steps: 100,
        ..Default::default()
    };
    let comps = train_components(&net, &calibration, &lbmask).unwrap();
    let params = ContractParams::default();

    let mut group = c.benchmark_group("pgd_flip_search");
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || boundary::find_flip_pairs(&net, &data, &pgd).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("lbmask_train");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || train_components(&net, &calibration, &lbmask).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("contract_eval");
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || evaluate_contract(&net, &comps, &data, &params).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_stages);
criterion_main!(benches);
