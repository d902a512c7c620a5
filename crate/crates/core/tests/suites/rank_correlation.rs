use o2b_core::stats::{average_ranks, spearman_p, spearman_p_exact, spearman_r, StatsError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Quadratic average rank: 1 + (smaller values) + (other equal values) / 2.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn classical(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Integer-valued vector with many ties.
pub fn tied(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.gen_range(2..=6);
    (0..n).map(|_| rng.gen_range(0..levels) as f64).collect()
}

pub fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[0] < w[1]) {
            return v;
        }
    }
}

pub fn matches_rank_then_pearson_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(3..=40);
        let x = tied(&mut rng, n);
        let y = if rng.gen_bool(0.5) { tied(&mut rng, n) } else { distinct(&mut rng, n) };
        assert_eq!(average_ranks(&x), oracle_ranks(&x));
        match spearman_r(&x, &y) {
            Ok(r) => {
                let expect = oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y));
                assert!((r - expect).abs() <= 1e-12, "{r} vs {expect}");
                checked += 1;
            }
            Err(StatsError::Undefined) => {
                assert!(x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]));
            }
            Err(e) => panic!("{e}"),
        }
    }
}

pub fn matches_classical_formula_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.gen_range(3..=50);
        let (x, y) = (distinct(&mut rng, n), distinct(&mut rng, n));
        let r = spearman_r(&x, &y).unwrap();
        let expect = classical(&x, &y);
        assert!((r - expect).abs() <= 1e-12, "{r} vs {expect}");
    }
}

pub fn invariant_under_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..100 {
        let n = rng.gen_range(3..=30);
        let x = if case % 2 == 0 { tied(&mut rng, n) } else { distinct(&mut rng, n) };
        let y = distinct(&mut rng, n);
        let Ok(r) = spearman_r(&x, &y) else { continue };
        let fx: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v - 5.0).collect();
        let gy: Vec<f64> = y.iter().map(|v| (v / 10.0).exp()).collect();
        assert_eq!(spearman_r(&fx, &gy).unwrap(), r);
    }
}

/// Permutation p-value by recursive enumeration.
pub fn oracle_exact_p(x: &[f64], y: &[f64]) -> f64 {
    fn perms(items: &mut Vec<f64>, k: usize, out: &mut Vec<Vec<f64>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            perms(items, k + 1, out);
            items.swap(k, i);
        }
    }
    let observed = oracle_pearson(&oracle_ranks(x), &oracle_ranks(y)).abs();
    let mut all = Vec::new();
    perms(&mut oracle_ranks(y), 0, &mut all);
    let rx = oracle_ranks(x);
    let hits = all.iter().filter(|p| oracle_pearson(&rx, p).abs() >= observed - 1e-12).count();
    hits as f64 / all.len() as f64
}

pub fn exact_permutation_p_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in [4, 5, 6, 7] {
        for _ in 0..5 {
            let (x, y) = (distinct(&mut rng, n), tied(&mut rng, n));
            if spearman_r(&x, &y).is_err() {
                continue;
            }
            let p = spearman_p_exact(&x, &y).unwrap();
            assert!((p - oracle_exact_p(&x, &y)).abs() < 1e-12);
        }
    }
    let eleven: Vec<f64> = (0..11).map(f64::from).collect();
    assert!(spearman_p_exact(&eleven, &eleven).is_err());
}

pub fn t_approximation_tracks_the_permutation_distribution() {
    // For n = 10 the two p-values agree to within a few hundredths across r.
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    for y in [
        [0.0, 2.0, 1.0, 3.0, 5.0, 4.0, 6.0, 8.0, 7.0, 9.0],
        [3.0, 0.0, 1.0, 2.0, 7.0, 5.0, 9.0, 4.0, 6.0, 8.0],
        [5.0, 1.0, 8.0, 0.0, 3.0, 9.0, 2.0, 6.0, 4.0, 7.0],
    ] {
        let r = spearman_r(&x, &y).unwrap();
        let approx = spearman_p(r, 10).unwrap();
        let exact = spearman_p_exact(&x, &y).unwrap();
        assert!((approx - exact).abs() < 0.03, "r={r}: {approx} vs {exact}");
    }
}
