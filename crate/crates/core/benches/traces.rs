use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qsens_core::exec::Parallelism;
use qsens_core::floquet::{build_floquet, KickFamily, KickModel, TrigPolynomial};
use qsens_core::growth::run_series_with;
use qsens_core::lattice::{BlochSector, LatticeSpec};
use qsens_core::perturbation::{build_rho0, PerturbationSpec};

fn trace_series(c: &mut Criterion) {
    let mut group = c.benchmark_group("trace_series");
    group.sample_size(10);
    for k in [16usize, 32] {
        let l = LatticeSpec::new(k).unwrap();
        let p0 = [0.25, 0.25];
        let family = KickFamily::PositionKick { g: TrigPolynomial::cos_sum(), alpha: 1.0 };
        let op = build_floquet(&KickModel::resonant(family, 1).unwrap(), l, BlochSector::from_momentum(p0).unwrap())
            .unwrap();
        let spec = PerturbationSpec::new([0.0; 2], p0, [1.0, 0.0], [1.0, 0.0]).unwrap().with_k_window(3);
        let rho = build_rho0(&spec, l).unwrap();
        for (name, par) in [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, k), &par, |b, &par| {
                b.iter(|| run_series_with(black_box(&op), &rho, 8, 1e-4, par).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, trace_series);
criterion_main!(benches);
