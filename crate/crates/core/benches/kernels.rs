//! Sequential against parallel execution of the three hot kernels.
//!
//! Without the `parallel` feature both variants run sequentially.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sgap_core::arith::ResidueMatrix;
use sgap_core::groups::{enumerate_group, product_sets, SubsetHandle, DEFAULT_BUDGET};
use sgap_core::spectral::AveragingOperator;
use sgap_core::Exec;

fn sl3_gens(p: u64) -> Vec<ResidueMatrix> {
    let mut out = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                for a in [1, -1] {
                    let mut e = [1, 0, 0, 0, 1, 0, 0, 0, 1];
                    e[i * 3 + j] = a;
                    out.push(ResidueMatrix::from_i64(3, p, &e).unwrap());
                }
            }
        }
    }
    out
}

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_enumerate(c: &mut Criterion) {
    let gens = sl3_gens(3);
    let mut g = c.benchmark_group("enumerate_sl3_f3");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enumerate_group(&gens, DEFAULT_BUDGET, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_apply(c: &mut Criterion) {
    let t = Arc::new(enumerate_group(&sl3_gens(3), DEFAULT_BUDGET, Exec::default()).unwrap());
    let f: Vec<f64> = (0..t.order()).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let mut g = c.benchmark_group("operator_apply_sl3_f3");
    for (name, exec) in POLICIES {
        let op = AveragingOperator::new(t.clone(), t.generators().to_vec(), exec).unwrap();
        let mut out = vec![0.0; t.order()];
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| op.apply_into(&f, &mut out, exec)));
    }
    g.finish();
}

fn bench_product(c: &mut Criterion) {
    let t = Arc::new(enumerate_group(&sl3_gens(3), DEFAULT_BUDGET, Exec::default()).unwrap());
    let gens = t.generators();
    let h = SubsetHandle::generated(t.clone(), &[gens[0], gens[1], gens[4], gens[5]], Exec::default());
    // a product set of a few thousand elements against a conjugate of SL2
    let hs = h.product(&h.conjugate(gens[2], Exec::default()), Exec::default());
    let s = h.conjugate(gens[8], Exec::default());
    let mut g = c.benchmark_group("subset_product_sl3_f3");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| product_sets(&t, hs.bits(), s.bits(), exec))
        });
    }
    g.finish();
}

criterion_group!(kernels, bench_enumerate, bench_apply, bench_product);
criterion_main!(kernels);
