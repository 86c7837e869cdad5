//! Batch gradient on the rayon pool versus a plain loop over the same batch.

use criterion::{criterion_group, criterion_main, Criterion};
use midsim::losses::{ModelConfig, ModelId};
use midsim::net::{Arch, NetConfig, NetParams};
use midsim::trainer::{batch_gradient, build_dataset, DatasetSpec, Profile};

fn bench(c: &mut Criterion) {
    let spec = DatasetSpec { n_worlds: 5, n_examples: 8, perturbed_fraction: 0.0, profile: Profile::Desk, ..Default::default() };
    let ds = build_dataset(&spec).expect("dataset");
    let arch = Arch::new(&NetConfig::for_render(&ds.render)).expect("arch");
    let params = NetParams::init(&arch, 1);
    let model = ModelConfig::preset(ModelId::M4);
    let idx: Vec<usize> = (0..8).collect();
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("batch_gradient_desk_8");
    g.sample_size(10);
    for (name, parallel) in [("parallel", true), ("sequential", false)] {
        g.bench_function(name, |b| {
            b.iter(|| batch_gradient(&arch, &params, &ds, &idx, &model, &seeds, parallel).expect("batch"))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
