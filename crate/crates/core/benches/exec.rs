use chanshort::channel::{ChannelSpec, StandardChannel};
use chanshort::design::Shortener;
use chanshort::modulation::Modulation;
use chanshort::sim::{design_point, simulate_with, SimConfig};
use chanshort::Exec;
use criterion::{criterion_group, criterion_main, Criterion};

fn monte_carlo_blocks(c: &mut Criterion) {
    let mut cfg = SimConfig::new(
        ChannelSpec::preset(StandardChannel::Epr4, 0.0),
        Modulation::Qpsk,
        Shortener::Fom { sigma: 1.0 },
        1,
    );
    cfg.n_blocks = 16;
    cfg.block_len = 512;
    let (cir, filters, _) = design_point(&cfg, 10.0).unwrap();
    let d = cfg.decision_delay(cir.len());
    let mut group = c.benchmark_group("blocks");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let run = SimConfig { exec, ..cfg.clone() };
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| simulate_with(&run, &cir, &filters, d, 10.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo_blocks);
criterion_main!(benches);
