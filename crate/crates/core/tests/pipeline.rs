use airfunc::channel::{check_peak_power, ChannelConfig};
use airfunc::concentration::DistributionSpec;
use airfunc::fmon::{evaluate, make_builtin, BuiltinKind, FmonSpec};
use airfunc::montecarlo::{
    bernstein_selfcheck, estimate_tail, sweep, Execution, InputStrategy, SweepGrid, TrialMode, TrialPlan,
};
use airfunc::rng::TrialStreams;
use airfunc::scheme::{effective_noise, estimate_once, preprocess, transmit_powers, Dither};
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plan(spec: FmonSpec<f64>, config: ChannelConfig<f64>, input: InputStrategy<f64>, trials: u64) -> TrialPlan<f64> {
    let mut p = TrialPlan::new(spec, config, input, 0.5, trials);
    p.master_seed = 2024;
    p
}

/// The harness must reproduce a plain loop over `estimate_once` exactly.
#[test]
fn harness_matches_full_trace_pipeline() {
    let rademacher = ChannelConfig::new(
        4,
        37,
        2.0,
        DistributionSpec::rademacher(),
        DistributionSpec::uniform(-0.7, 0.7).unwrap(),
        None,
        None,
    )
    .unwrap();
    let cases = vec![
        (make_builtin(BuiltinKind::Sum, 4).unwrap(), ChannelConfig::gaussian(4, 25, 1.0, 1.0).unwrap()),
        (make_builtin(BuiltinKind::Pnorm { p: 2.0 }, 4).unwrap(), rademacher),
        (make_builtin(BuiltinKind::Average, 4).unwrap(), ChannelConfig::gaussian(4, 10, 0.5, 0.3).unwrap()),
    ];
    for (spec, config) in cases {
        for input in [InputStrategy::AllMin, InputStrategy::AllMax, InputStrategy::Random] {
            let mut p = plan(spec.clone(), config.clone(), input.clone(), 300);
            p.execution = Execution::Serial;
            let tail = estimate_tail(&p).unwrap();
            let s = input.resolve(&spec, p.master_seed).unwrap();
            let target = evaluate(&spec, &s).unwrap();
            let (mut exceed, mut h_sum) = (0u64, 0.0f64);
            for i in 0..p.trials {
                let t = estimate_once(&spec, &config, &s, &TrialStreams::new(p.master_seed, i)).unwrap();
                assert_eq!(t.target, target);
                if (t.estimate - target).abs() >= p.eps {
                    exceed += 1;
                }
                h_sum += t.h_corrected;
            }
            assert_eq!(tail.exceed_count, exceed);
            assert_eq!(tail.h_mean, h_sum / p.trials as f64);
        }
    }
}

#[test]
fn parallel_equals_serial() {
    let spec = make_builtin(BuiltinKind::Sum, 6).unwrap();
    let config = ChannelConfig::gaussian(6, 40, 1.0, 1.0).unwrap();
    let mut p = plan(spec, config, InputStrategy::AllMax, 2000);
    p.eps = 1.0;
    let par = estimate_tail(&p).unwrap();
    p.execution = Execution::Serial;
    assert_eq!(par, estimate_tail(&p).unwrap());
    p.master_seed += 1;
    assert_ne!(par.h_mean, estimate_tail(&p).unwrap().h_mean);
}

#[test]
fn peak_power_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let kinds = [
        BuiltinKind::Sum,
        BuiltinKind::Average,
        BuiltinKind::Pnorm { p: 2.0 },
        BuiltinKind::Pnorm { p: 3.0 },
        BuiltinKind::LipschitzLinear { b: 2.0, lo: -3.0, hi: 1.0 },
    ];
    for case in 0..500 {
        let kind = kinds[case % kinds.len()];
        let k = rng.random_range(1..8);
        let spec = make_builtin::<f64>(kind, k).unwrap();
        let power = rng.random_range(0.1..10.0);
        let config = ChannelConfig::gaussian(k, 6, power, 1.0).unwrap();
        let mut s: Vec<f64> = spec
            .inners
            .iter()
            .map(|f| f.domain.lo + rng.random::<f64>() * f.domain.width())
            .collect();
        let at_max = case % 3 == 0;
        if at_max {
            s[0] = spec.inners[0].max_point();
        }
        let d = Dither::sample(k, 6, &TrialStreams::new(case as u64, 0));
        let x = preprocess(&spec, &config, &s, &d).unwrap();
        check_peak_power(&x, power).unwrap();
        let peak = x.data.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        assert!(peak <= power * (1.0 + 1e-12));
        if at_max {
            assert_relative_eq!(peak, power, max_relative = 1e-12);
        }
    }
}

#[test]
fn effective_noise_reconstruction_and_mean() {
    let spec = make_builtin::<f64>(BuiltinKind::Sum, 3).unwrap();
    let sigma = 0.9;
    let config = ChannelConfig::gaussian(3, 8, 1.5, sigma).unwrap();
    let s = [0.2, 1.0, 0.7];
    let g = transmit_powers(&spec, &config, &s).unwrap();
    let trials = 20_000u64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..trials {
        let t = estimate_once(&spec, &config, &s, &TrialStreams::new(5, i)).unwrap();
        let nbar = effective_noise(&spec, &config, &s, &t.dither, &t.fading, &t.noise).unwrap();
        let total: f64 = nbar.iter().sum();
        let signal: f64 = (0..3).map(|k| g[k] * t.fading.h.row(k).iter().map(|h| h.norm_sqr()).sum::<f64>()).sum();
        assert_relative_eq!(t.energy, signal + total, max_relative = 1e-9);
        let per_use = total / config.m as f64;
        sum += per_use;
        sum_sq += per_use * per_use;
    }
    let n = trials as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / n).sqrt();
    assert!((mean - 2.0 * sigma * sigma).abs() <= 2.576 * se, "mean {mean}, se {se}");
}

#[test]
fn estimator_unbiased_small_scale() {
    for kind in [BuiltinKind::Sum, BuiltinKind::Average, BuiltinKind::Pnorm { p: 2.0 }] {
        let spec = make_builtin::<f64>(kind, 5).unwrap();
        let config = ChannelConfig::gaussian(5, 200, 1.0, 1.0).unwrap();
        for input in [InputStrategy::AllMin, InputStrategy::AllMax] {
            let p = plan(spec.clone(), config.clone(), input.clone(), 20_000);
            let t = estimate_tail(&p).unwrap();
            let s = input.resolve(&spec, 0).unwrap();
            let truth = spec.inner_sum(&s).unwrap();
            assert!((t.h_mean - truth).abs() <= 3.5 * t.h_std_error, "{kind} {input}: {} vs {truth}", t.h_mean);
        }
    }
}

#[test]
fn injected_probability_within_band() {
    let spec = make_builtin(BuiltinKind::Sum, 1).unwrap();
    let mut p = plan(spec, ChannelConfig::gaussian(1, 1, 1.0, 1.0).unwrap(), InputStrategy::AllMax, 100_000);
    p.mode = TrialMode::Injected { p: 0.1 };
    let t = estimate_tail(&p).unwrap();
    // two-sided 99.9% normal band
    let half = 3.2905 * (0.1f64 * 0.9 / 1e5).sqrt();
    assert!((t.point_estimate - 0.1).abs() <= half, "{}", t.point_estimate);
    assert_eq!(t.exceed_count, estimate_tail(&p).unwrap().exceed_count);
}

#[test]
fn empirical_tail_falls_with_m() {
    let spec = make_builtin(BuiltinKind::Sum, 4).unwrap();
    let mut p = plan(spec, ChannelConfig::gaussian(4, 10, 1.0, 1.0).unwrap(), InputStrategy::AllMax, 4000);
    p.eps = 1.0;
    let grid = SweepGrid { m: vec![20, 80, 320], ..Default::default() };
    let rows = sweep(&p, &grid, None).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].tail.point_estimate <= w[0].tail.upper_confidence);
        assert!(w[1].bound.total_raw < w[0].bound.total_raw);
    }
    let again = sweep(&p, &grid, None).unwrap();
    assert!(rows.iter().zip(&again).all(|(a, b)| a.tail == b.tail && a.seed == b.seed));
}

#[test]
fn sweep_over_k_uses_factory() {
    let spec = make_builtin(BuiltinKind::Average, 2).unwrap();
    let p = plan(spec, ChannelConfig::gaussian(2, 50, 1.0, 1.0).unwrap(), InputStrategy::AllMax, 200);
    let grid = SweepGrid { k: vec![2, 4, 8], ..Default::default() };
    assert!(sweep(&p, &grid, None).is_err());
    let factory = |k| make_builtin(BuiltinKind::Average, k);
    let rows = sweep(&p, &grid, Some(&factory)).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 4, 8]);
    assert!(rows.iter().all(|r| r.tail.target == 1.0));
}

#[test]
fn bernstein_selfcheck_rademacher_and_exponential() {
    let r = bernstein_selfcheck(&DistributionSpec::<f64>::rademacher(), 1.0, 100, &[0.0, 10.0, 30.0], 100_000, 8)
        .unwrap();
    assert!(r.iter().all(|row| row.pass));
    assert_eq!(r[0].bound, 1.0);
    let e = DistributionSpec::<f64>::centered_exponential(1.0).unwrap();
    let r = bernstein_selfcheck(&e, 1.0, 50, &[5.0, 10.0, 20.0, 40.0], 100_000, 9).unwrap();
    assert!(r.iter().all(|row| row.pass), "{r:?}");
    assert!(r[0].empirical > 0.1);
}
