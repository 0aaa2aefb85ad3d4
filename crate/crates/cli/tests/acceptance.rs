//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgap_core::arith::{PadicTruncMatrix, ResidueMatrix};
use sgap_core::groups::{congruence_kernel, enumerate_group, ElementId, GroupTable, DEFAULT_BUDGET};
use sgap_core::padic::{
    adjoint_action, derivative_limit_check, grade_map, trunc_exp, trunc_log, ChartConfig, LieVector,
    Polynomial,
};
use sgap_core::pipeline::{lie_stage, load_study, run_prime, RunOptions, Stages, Study};
use sgap_core::spectral::{lambda_of, AveragingOperator, Policy, SpectralOptions};
use sgap_core::Exec;

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn catalog(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("catalog").join(name)
}

fn fixture(name: &str) -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn table(n: usize, m: u64, gens: &[[i64; 4]]) -> Arc<GroupTable> {
    let g: Vec<ResidueMatrix> = gens.iter().map(|e| ResidueMatrix::from_i64(n, m, e).unwrap()).collect();
    Arc::new(enumerate_group(&g, DEFAULT_BUDGET, Exec::default()).unwrap())
}

fn sl2(m: u64, a: i64) -> Arc<GroupTable> {
    table(2, m, &[[1, a, 0, 1], [1, -a, 0, 1], [1, 0, a, 1], [1, 0, -a, 1]])
}

#[test]
fn criterion_1_cyclic_spectra() {
    let start = Instant::now();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut agree = 0.0f64;
    for n in [3u64, 5, 7, 101] {
        // C_n generated by the unipotent g = [[1,1],[0,1]] mod n
        let g = table(2, n, &[[1, 1, 0, 1], [1, -1, 0, 1]]);
        assert_eq!(g.order() as u64, n);
        let op = AveragingOperator::new(g.clone(), g.generators().to_vec(), Exec::default()).unwrap();
        let dense = lambda_of(&op, &SpectralOptions { policy: Policy::Dense, ..Default::default() }).unwrap();
        let iter = lambda_of(&op, &SpectralOptions { policy: Policy::Iterative, ..Default::default() }).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI / n as f64;
        // largest signed eigenvalue is cos(2 pi/n); largest modulus is cos(pi/n) for odd n
        for r in [&dense, &iter] {
            worst = worst.max((r.second_eigenvalue - two_pi.cos()).abs());
            worst = worst.max((r.lambda - (two_pi / 2.0).cos()).abs());
        }
        agree = agree.max((dense.lambda - iter.lambda).abs()).max((dense.second_eigenvalue - iter.second_eigenvalue).abs());
        ok &= iter.converged;
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= worst < 1e-9 && agree < 1e-6 && secs < 5.0;
    report(1, ok, &format!("max error {worst:.2e}, dense/iterative gap {agree:.2e}, {secs:.2}s"));
    assert!(ok);
}

#[test]
fn criterion_2_uniform_gap_sl2() {
    let start = Instant::now();
    let fx = fixture("sl2_ab_lambda.json");
    let mut ok = true;
    let mut max_lambda = 0.0f64;
    let mut max_drift = 0.0f64;
    let mut max_cross = 0.0f64;
    for p in [3u64, 5, 7, 11, 13, 17, 19, 23] {
        let g = sl2(p, 2);
        let op = AveragingOperator::new(g.clone(), g.generators().to_vec(), Exec::default()).unwrap();
        let r = lambda_of(&op, &SpectralOptions::default()).unwrap();
        if p <= 7 {
            // both solvers on the small cases
            let other = if r.method == sgap_core::spectral::Method::Dense { Policy::Iterative } else { Policy::Dense };
            let s = lambda_of(&op, &SpectralOptions { policy: other, ..Default::default() }).unwrap();
            max_cross = max_cross.max((s.lambda - r.lambda).abs());
        }
        let frozen = fx["lambda"][p.to_string()].as_f64().unwrap();
        max_lambda = max_lambda.max(r.lambda);
        max_drift = max_drift.max((r.lambda - frozen).abs());
        ok &= r.lambda < 0.99 && r.generates && !r.bipartite;
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= max_drift < 1e-8 && max_cross < 1e-6 && secs < 300.0;
    report(2, ok, &format!("max lambda {max_lambda:.6}, fixture drift {max_drift:.2e}, {secs:.1}s"));
    assert!(ok);
}

#[test]
fn criterion_3_chart_exactness() {
    let mut failures = 0usize;
    let mut cases = 0usize;
    let n = 3;
    for p in [3u64, 5, 7] {
        for depth in [3u32, 4, 5] {
            let cfg = ChartConfig::new(p, depth, 1).unwrap();
            let q = cfg.modulus();
            let mut rng = ChaCha8Rng::seed_from_u64(p * 100 + depth as u64);
            for _ in 0..1000 {
                cases += 1;
                let v = rng.gen_range(1..depth);
                let pv = p.pow(v);
                let coords: Vec<u64> = (0..n * n).map(|_| rng.gen_range(0..q) * pv % q).collect();
                let x = LieVector::from_coords(p, depth, n, coords.clone()).unwrap();
                let g = trunc_exp(&x, &cfg).unwrap();
                let back = trunc_log(&g, &cfg).unwrap();
                if back.coords() != &coords[..] || g.minus_identity().norm() != x.norm() {
                    failures += 1;
                }
                // exp(log g) for g = I + y with y = 0 mod p
                let y: Vec<u64> = (0..n * n).map(|_| rng.gen_range(0..q) * pv % q).collect();
                let h = PadicTruncMatrix::new(p, depth, ResidueMatrix::new(n, q, y).unwrap().add(&ResidueMatrix::identity(n, q))).unwrap();
                let l = trunc_log(&h, &cfg).unwrap();
                if trunc_exp(&l, &cfg).unwrap() != h || l.norm() != h.minus_identity().norm() {
                    failures += 1;
                }
            }
        }
    }
    let ok = failures == 0;
    report(3, ok, &format!("{cases} cases over 9 (p, N) pairs, {failures} failures"));
    assert!(ok);
}

#[test]
fn criterion_4_derivative_limit() {
    let (p, depth) = (5u64, 6u32);
    let cfg = ChartConfig::new(p, depth, 1).unwrap();
    let q = cfg.modulus();
    let det = Polynomial::determinant(2);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut failures = 0;
    let mut total = 0;
    for n in 1..=3u32 {
        for _ in 0..100 {
            let coords: Vec<u64> = (0..4).map(|_| rng.gen_range(0..q) * p % q).collect();
            let x = LieVector::from_coords(p, depth, 2, coords).unwrap();
            total += 1;
            match derivative_limit_check(&det, &x, n, &cfg) {
                Ok(v) if v.holds => {}
                _ => failures += 1,
            }
        }
    }
    let ok = failures == 0;
    report(4, ok, &format!("{total} checks at p=5, N=6, n=1..3, {failures} failures"));
    assert!(ok);
}

#[test]
fn criterion_5_grade_structure() {
    let mut ok = true;
    let mut details = Vec::new();
    for p in [3u64, 5] {
        for k in [1u32, 2] {
            let m = p.pow(k + 1);
            let g = sl2(m, 1);
            let layer = congruence_kernel(&g, k, Exec::default()).unwrap();
            let ids = layer.members.ids();
            ok &= layer.order() as u64 == p.pow(3);
            // bijection onto sl_2(F_p): distinct, trace zero, p^3 of them
            let mut imgs: Vec<Vec<u64>> = ids
                .iter()
                .map(|&i| grade_map(&g.element(i), p, k).unwrap().coords().to_vec())
                .collect();
            ok &= imgs.iter().all(|x| (x[0] + x[3]) % p == 0);
            imgs.sort();
            imgs.dedup();
            ok &= imgs.len() as u64 == p.pow(3);
            let mut rng = ChaCha8Rng::seed_from_u64(m);
            let psi = |id: ElementId| grade_map(&g.element(id), p, k).unwrap();
            for _ in 0..200 {
                let a = ids[rng.gen_range(0..ids.len())];
                let b = ids[rng.gen_range(0..ids.len())];
                ok &= psi(g.mul(a, b)) == psi(a).add(&psi(b));
                let h = rng.gen_range(0..g.order()) as ElementId;
                let lhs = psi(g.conjugate(h, a));
                let rhs = adjoint_action(&g.element(h).reduce(p).unwrap(), &psi(a)).unwrap();
                ok &= lhs == rhs;
            }
            details.push(format!("p={p} k={k} |layer|={}", layer.order()));
        }
    }
    report(5, ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_6_saturation() {
    let mut study = Study::load(&catalog("sl2_in_sl3.toml")).unwrap();
    study.config.primes = vec![5, 7];
    let opts = RunOptions::default();
    let mut ok = true;
    let mut details = Vec::new();
    for p in [5u64, 7] {
        let a = lie_stage(&study, p, &opts).unwrap();
        let b = lie_stage(&study, p, &opts).unwrap();
        let cert = a.certificate.clone().unwrap();
        let rank2 = a.lattice2.as_ref().map_or(0, |l| l.rank());
        let sat = a.saturated.as_ref().map_or(0, |l| l.rank());
        ok &= a.depth == 3 && rank2 == 3 && sat == 8 && a.lattice1.rank() == 8;
        ok &= cert.len() <= 8 && cert.is_complete();
        ok &= a.saturated.as_ref().unwrap().is_sublattice_of(&a.lattice1);
        ok &= b.certificate.as_ref().map(|c| &c.words) == Some(&cert.words);
        details.push(format!("mod {p}^3: rank {rank2} -> {sat} with {} conjugators [{}]", cert.len(), cert.words.join(" ")));
    }
    report(6, ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_7_coverage_chain() {
    let study = Study::load(&catalog("sl2_in_sl3.toml")).unwrap();
    let fx = fixture("sl2_in_sl3_cover.json");
    let stages = Stages { enumerate: true, lie: true, cover: true, grades: true, ..Stages::NONE };
    let mut ok = true;
    let mut details = Vec::new();
    for p in [2u64, 3] {
        let r = run_prime(&study, p, stages, &RunOptions::default());
        let key = p.to_string();
        ok &= r.order1 == fx["order1"][&key].as_u64();
        ok &= r.greedy_covered == Some(true);
        ok &= r.greedy_fold.map(|c| c as u64) == fx["greedy_copies"][&key].as_u64();
        let c = r.fold_min;
        ok &= c.is_some_and(|c| c <= 24) && c.map(|c| c as u64) == fx["fold_min"][&key].as_u64();
        let k1 = r.grade_levels.iter().position(|&k| k == 1);
        ok &= k1.is_some_and(|i| r.grade_set_form[i] && r.grade_psi_form[i] && r.grade_agree[i]);
        details.push(format!("p={p}: |G|={} copies={} C={} grade(k=1)={}", r.order1.unwrap_or(0), r.greedy_fold.unwrap_or(0), c.map_or("none".into(), |c| c.to_string()), k1.is_some()));
    }
    report(7, ok, &details.join("; "));
    assert!(ok);
}

fn sgap(args: &[&str], cache: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sgap"))
        .args(args)
        .env("SGAP_CACHE_DIR", cache)
        .output()
        .unwrap()
}

#[test]
fn criterion_8_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("central.sgic");
    let cfg = catalog("central.toml");
    let run = sgap(&["--config", cfg.to_str().unwrap(), "induce", "--out", out.to_str().unwrap()], &dir.path().join("cache"));
    let mut ok = run.status.success();
    let cert = load_study(&out);
    ok &= cert.is_ok();
    let mut detail = format!("exit {:?}", run.status.code());
    if let Ok(cert) = cert {
        ok &= !cert.records.is_empty() && cert.records.len() == cert.summary.primes.len();
        for r in &cert.records {
            ok &= !r.induced && r.failed_at.iter().any(|s| s == "greedy") && r.greedy_covered == Some(false);
            ok &= r.lambda1.is_some() && r.lambda2.is_some() && r.lambda_prime.is_some();
        }
        ok &= cert.summary.induced_primes.is_empty();
        detail = format!("{detail}, failed at coverage for primes {:?}", cert.summary.failed_primes);
    }
    report(8, ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_9_determinism_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = catalog("sl2_in_sl3.toml");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a.sgic");
    let b = dir.path().join("b.sgic");
    // the second run reads group tables from the cache the first one wrote
    let cache = dir.path().join("cache");
    let ra = sgap(&["--config", cfg, "induce", "--out", a.to_str().unwrap()], &cache);
    let rb = sgap(&["--config", cfg, "induce", "--out", b.to_str().unwrap()], &cache);
    let same = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let rv = sgap(&["--config", cfg, "verify", "--study", a.to_str().unwrap()], &cache);
    let stdout = String::from_utf8_lossy(&rv.stdout);
    let ok = ra.status.success() && rb.status.success() && same && rv.status.success() && stdout.contains("confirmed");
    report(9, ok, &format!("byte-identical: {same}, verify: {}", stdout.trim()));
    assert!(ok);
}
