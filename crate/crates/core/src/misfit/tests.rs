use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn record(nt: usize, nr: usize, dt: f64, samples: Vec<f64>) -> ShotRecord {
    let receivers = (0..nr).map(|r| (r as f64, 0.0)).collect();
    ShotRecord::new(0, receivers, dt, nt, samples).unwrap()
}

fn single(trace: &[f64], dt: f64) -> ShotRecord {
    record(trace.len(), 1, dt, trace.to_vec())
}

fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Quantile coupling of two cell-mass vectors: every CDF breakpoint of either
/// side is sorted onto one axis and both quantile functions are integrated
/// exactly on each interval.
fn quantile_oracle(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |v: &[f64]| {
        let total: f64 = v.iter().map(|x| x * x).sum();
        let mut c = vec![0.0];
        for x in v {
            c.push(c.last().unwrap() + x * x / total);
        }
        c
    };
    let (fa, fb) = (cdf(a), cdf(b));
    let quantile = |c: &[f64], q: f64, at: f64| {
        let last = (0..c.len() - 1).rev().find(|&k| c[k + 1] > c[k]).unwrap();
        let k = (0..c.len() - 1).find(|&k| c[k + 1] > at).unwrap_or(last);
        k as f64 + (q - c[k]) / (c[k + 1] - c[k])
    };
    let mut qs: Vec<f64> = fa.iter().chain(&fb).map(|q| q.clamp(0.0, 1.0)).collect();
    qs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    qs.dedup();
    let mut total = 0.0;
    for w in qs.windows(2) {
        let (q0, q1) = (w[0], w[1]);
        if q1 - q0 < 1e-300 {
            continue;
        }
        let qm = 0.5 * (q0 + q1);
        let d = |q: f64| quantile(&fa, q, qm) - quantile(&fb, q, qm);
        total += (q1 - q0) / 6.0 * (d(q0).powi(2) + 4.0 * d(qm).powi(2) + d(q1).powi(2));
    }
    total
}

#[test]
fn l2_vanishes_on_equal_records() {
    let r = single(&[0.3, -1.0, 2.0], 0.1);
    let m = l2_misfit(&r, &r).unwrap();
    assert_eq!(m.value, 0.0);
    assert!(m.adjoint_source.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn l2_constant_offset_closed_form() {
    let (nt, dt) = (17, 0.25);
    let d = single(&vec![0.5; nt], dt);
    let s = single(&vec![1.5; nt], dt);
    let m = l2_misfit(&s, &d).unwrap();
    assert!((m.value - 0.5 * nt as f64 * dt).abs() < 1e-14);
    assert!((l2_misfit(&d, &s).unwrap().value - m.value).abs() == 0.0);
}

#[test]
fn l2_quadrature_scales_with_dt() {
    let s = [0.1, 0.7, -0.4];
    let d = [0.0, 0.2, 0.3];
    let a = l2_misfit(&single(&s, 0.01), &single(&d, 0.01))
        .unwrap()
        .value;
    let b = l2_misfit(&single(&s, 0.02), &single(&d, 0.02))
        .unwrap()
        .value;
    assert!((b / a - 2.0).abs() < 1e-14);
}

/// Relative L2 distance between the adjoint source and central differences.
fn fd_check(kind: MisfitKind, s: &ShotRecord, d: &ShotRecord, tol: f64) {
    let m = misfit(kind, s, d).unwrap();
    let h = 1e-6 * s.max_abs();
    let (mut err, mut norm) = (0.0, 0.0);
    for k in 0..s.samples().len() {
        let mut p = s.clone();
        p.samples_mut()[k] += h;
        let mut q = s.clone();
        q.samples_mut()[k] -= h;
        let fd =
            (misfit(kind, &p, d).unwrap().value - misfit(kind, &q, d).unwrap().value) / (2.0 * h);
        let an = m.adjoint_source.samples()[k];
        err += (fd - an).powi(2);
        norm += an * an;
    }
    let rel = (err / norm).sqrt();
    assert!(rel < tol, "{kind:?}: relative error {rel}");
}

#[test]
fn l2_adjoint_source_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = record(
        20,
        3,
        0.05,
        (0..60).map(|_| rng.random::<f64>() - 0.5).collect(),
    );
    let d = record(
        20,
        3,
        0.05,
        (0..60).map(|_| rng.random::<f64>() - 0.5).collect(),
    );
    fd_check(MisfitKind::L2, &s, &d, 1e-6);
}

#[test]
fn w2_vanishes_on_equal_densities() {
    let t = [0.0, 0.2, -1.0, 0.4, 0.0];
    let m = w2_misfit(&single(&t, 0.1), &single(&t, 0.1)).unwrap();
    assert!(m.value.abs() < 1e-15);
    assert!(m.adjoint_source.max_abs() < 1e-12);
    // Sign and scale are removed by the normalization.
    let neg: Vec<f64> = t.iter().map(|v| -3.0 * v).collect();
    assert!(
        w2_misfit(&single(&neg, 0.1), &single(&t, 0.1))
            .unwrap()
            .value
            .abs()
            < 1e-15
    );
}

#[test]
fn w2_of_two_spikes_is_squared_shift() {
    let dt = 0.5;
    for (a, b) in [(3usize, 10usize), (12, 1), (5, 5)] {
        let mut s = vec![0.0; 16];
        let mut d = vec![0.0; 16];
        s[a] = 1.0;
        d[b] = 1.0;
        let v = w2_misfit(&single(&s, dt), &single(&d, dt)).unwrap().value;
        let want = ((a as f64 - b as f64) * dt).powi(2);
        assert!((v - want).abs() < 1e-12, "{a} {b}: {v} vs {want}");
    }
}

#[test]
fn w2_matches_quantile_coupling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let a = random_trace(&mut rng, 64);
        let b = random_trace(&mut rng, 64);
        let v = w2_misfit(&single(&a, 1.0), &single(&b, 1.0)).unwrap().value;
        let o = quantile_oracle(&a, &b);
        assert!((v - o).abs() < 1e-8, "{v} vs {o}");
    }
}

#[test]
fn w2_with_sparse_support_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mut a = random_trace(&mut rng, 40);
        let mut b = random_trace(&mut rng, 40);
        for v in a.iter_mut().chain(b.iter_mut()) {
            if rng.random::<f64>() < 0.5 {
                *v = 0.0;
            }
        }
        a[3] = 1.0;
        b[30] = 1.0;
        let v = w2_misfit(&single(&a, 1.0), &single(&b, 1.0)).unwrap().value;
        assert!((v - quantile_oracle(&a, &b)).abs() < 1e-8);
        let back = w2_misfit(&single(&b, 1.0), &single(&a, 1.0)).unwrap().value;
        assert!((v - back).abs() < 1e-10);
    }
}

#[test]
fn w2_adjoint_source_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let s: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.3).collect();
        let d: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.3).collect();
        fd_check(
            MisfitKind::W2,
            &record(32, 2, 0.01, s),
            &record(32, 2, 0.01, d),
            1e-4,
        );
    }
}

#[test]
fn w2_adjoint_handles_silent_stretches() {
    let pulse = |c: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let x = (k as f64 - c) / 2.0;
                if x.abs() < 4.0 {
                    (1.0 - 2.0 * x * x) * (-x * x).exp()
                } else {
                    0.0
                }
            })
            .collect()
    };
    let s = single(&pulse(12.3, 48), 0.02);
    let d = single(&pulse(30.1, 48), 0.02);
    fd_check(MisfitKind::W2, &s, &d, 1e-4);
}

#[test]
fn w2_grows_with_shift() {
    let n = 80;
    let pulse = |c: f64| -> Vec<f64> {
        (0..n)
            .map(|k| (-((k as f64 - c) / 3.0).powi(2)).exp())
            .collect()
    };
    let d = single(&pulse(30.0), 1.0);
    let mut last = -1.0;
    for tau in 0..=10 {
        let v = w2_misfit(&single(&pulse(30.0 + tau as f64), 1.0), &d)
            .unwrap()
            .value;
        assert!(v > last || tau == 0, "shift {tau}");
        last = v;
    }
    assert!((last - 100.0).abs() < 1e-6);
}

#[test]
fn w2_rejects_silent_traces() {
    let s = record(4, 2, 1.0, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let d = record(4, 2, 1.0, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let e = w2_misfit(&s, &d).unwrap_err().to_string();
    assert!(e.contains("observed trace 1"), "{e}");
}

#[test]
fn misfit_kind_parses() {
    assert_eq!("W2".parse::<MisfitKind>().unwrap(), MisfitKind::W2);
    assert_eq!("l2".parse::<MisfitKind>().unwrap(), MisfitKind::L2);
    assert!("l1".parse::<MisfitKind>().is_err());
}

#[test]
fn record_mollification_fixes_constants_and_identity() {
    let c = record(50, 3, 0.1, vec![5.0; 150]);
    let out = mollify_record(&c, &MollifierSpec::new(6.0)).unwrap();
    assert!(out.samples().iter().all(|v| (v - 5.0).abs() < 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = record(30, 2, 0.1, random_trace(&mut rng, 60));
    assert_eq!(
        mollify_record(&r, &MollifierSpec::identity())
            .unwrap()
            .samples(),
        r.samples()
    );
}

#[test]
fn record_mollification_matches_direct_convolution() {
    let (nt, sigma) = (101, 2.0);
    let mut t = vec![0.0; nt];
    t[50] = 1.0;
    t[3] = -2.0;
    let out = mollify_record(&single(&t, 1.0), &MollifierSpec::new(sigma)).unwrap();
    let radius = (4.0 * sigma) as i64;
    for i in 0..nt as i64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in -radius..=radius {
            let j = i + k;
            if (0..nt as i64).contains(&j) {
                let w = (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
                num += w * t[j as usize];
                den += w;
            }
        }
        assert!((out.samples()[i as usize] - num / den).abs() < 1e-12);
    }
}

#[test]
fn record_mollification_transpose_is_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = record(40, 3, 0.1, random_trace(&mut rng, 120));
    let y = record(40, 3, 0.1, random_trace(&mut rng, 120));
    let spec = MollifierSpec::new(3.5);
    let kx = mollify_record(&x, &spec).unwrap();
    let kty = mollify_record_transpose(&y, &spec).unwrap();
    let a: f64 = kx
        .samples()
        .iter()
        .zip(y.samples())
        .map(|(p, q)| p * q)
        .sum();
    let b: f64 = x
        .samples()
        .iter()
        .zip(kty.samples())
        .map(|(p, q)| p * q)
        .sum();
    assert!((a - b).abs() < 1e-12 * a.abs());
}
