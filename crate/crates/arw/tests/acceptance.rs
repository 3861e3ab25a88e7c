//! Acceptance suite: one test per acceptance criterion, each printing a
//! single `criterion N (...): PASS|FAIL` line (visible with `--nocapture`)
//! before asserting. Tolerances and sample budgets are pinned here.

use std::time::{Duration, Instant};

use arw::coupling::coupled_stabilize;
use arw::engine::{stabilize_rule, EarlyStop, EngineState, ToppleRule, TopplingPolicy};
use arw::experiments::{
    activity_probe, ar_csv, bisect_mu_c, direct_round_stabilize, estimate_ar, fixation_csv,
    fixation_proxy, run_rounds, ssm_mu_c, wilson, InitialLaw, LawKind, RoundPlan,
};
use arw::labeled::{labeled_stabilize, left_count_function, single_site};
use arw::model::{Configuration, Site, SiteState};
use arw::rng::{derive_seed, CounterRng, DOMAIN_POLICY};
use arw::StackStore;

const POLICIES: [TopplingPolicy; 4] = [
    TopplingPolicy::LeftmostUnstable,
    TopplingPolicy::RightmostUnstable,
    TopplingPolicy::UniformRandomUnstable,
    TopplingPolicy::FifoQueue,
];

fn check(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} ({name}): {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

/// Random configuration with `|V| <= 9` and at most 8 particles.
fn random_small_config(seed: u64) -> Configuration {
    let mut rng = CounterRng::new(seed, DOMAIN_POLICY, 99);
    let half = 2 + rng.next_below(3) as i64;
    let mut cfg = Configuration::empty(-half, half);
    let particles = rng.next_below(9);
    for _ in 0..particles {
        let site = -half + rng.next_below((2 * half + 1) as u64) as i64;
        let st = cfg.state(site);
        cfg.set_state(site, SiteState::with_active(st.active_count() + 1));
    }
    cfg
}

/// Random active configuration with i.i.d. Poisson(`mu`) counts on `[-r, r]`.
fn random_poisson_config(seed: u64, r: i64, mu: f64) -> Configuration {
    InitialLaw::Poisson(mu).sample(-r, r, seed)
}

#[test]
fn criterion_01_stabilization_is_policy_independent() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..200u64 {
        let cfg = random_small_config(derive_seed(101, i));
        let seed = derive_seed(102, i);
        let mut store = StackStore::new(seed, 0.7, 0.5);
        let reference =
            stabilize_rule(&cfg, &mut store, ToppleRule::Arw, POLICIES[0], 1_000_000, None)
                .unwrap();
        for policy in &POLICIES[1..] {
            let mut store = StackStore::new(seed, 0.7, 0.5);
            let out =
                stabilize_rule(&cfg, &mut store, ToppleRule::Arw, *policy, 1_000_000, None)
                    .unwrap();
            let same_odometer = (cfg.universe().0..=cfg.universe().1)
                .all(|s| out.odometer.get(s) == reference.odometer.get(s));
            if out.config != reference.config || !same_odometer {
                ok = false;
                detail = format!("instance {i}, policy {policy:?}");
            }
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(10);
    check(1, "abelian stabilization", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_02_legal_prefixes_stay_below_the_odometer() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..200u64 {
        let cfg = random_small_config(derive_seed(201, i));
        let seed = derive_seed(202, i);
        let mut state = EngineState::new(cfg.clone(), ToppleRule::Arw);
        let mut store = StackStore::new(seed, 0.7, 0.5);
        let mut rng = CounterRng::new(derive_seed(203, i), DOMAIN_POLICY, 3);
        let budget = rng.next_below(60);
        for _ in 0..budget {
            let (lo, hi) = cfg.universe();
            let unstable: Vec<Site> =
                (lo..=hi).filter(|&s| state.config.state(s).active_count() > 0).collect();
            if unstable.is_empty() {
                break;
            }
            let site = unstable[rng.next_below(unstable.len() as u64) as usize];
            state.topple(&mut store, site).unwrap();
        }
        let mut full_store = StackStore::new(seed, 0.7, 0.5);
        let full =
            stabilize_rule(&cfg, &mut full_store, ToppleRule::Arw, POLICIES[0], 1_000_000, None)
                .unwrap();
        for site in cfg.universe().0..=cfg.universe().1 {
            if state.odometer.get(site) > full.odometer.get(site) {
                ok = false;
                detail = format!("instance {i}, site {site}");
            }
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(10);
    check(2, "least action principle", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_03_odometer_monotone_in_configuration_and_volume() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..200u64 {
        let cfg = random_small_config(derive_seed(301, i));
        let (lo, hi) = cfg.universe();
        let mut rng = CounterRng::new(derive_seed(302, i), DOMAIN_POLICY, 5);
        let grow = rng.next_below(4) as i64;
        let mut bigger = cfg.with_universe(lo - grow, hi + grow);
        for _ in 0..rng.next_below(3) {
            let site = lo - grow + rng.next_below((hi - lo + 2 * grow + 1) as u64) as i64;
            let st = bigger.state(site);
            bigger.set_state(site, SiteState::with_active(st.active_count() + 1));
        }
        let seed = derive_seed(303, i);
        let mut store = StackStore::new(seed, 0.7, 0.5);
        let small =
            stabilize_rule(&cfg, &mut store, ToppleRule::Arw, POLICIES[0], 1_000_000, None)
                .unwrap();
        store.reset_cursors();
        let big =
            stabilize_rule(&bigger, &mut store, ToppleRule::Arw, POLICIES[0], 1_000_000, None)
                .unwrap();
        for site in lo..=hi {
            if small.odometer.get(site) > big.odometer.get(site) {
                ok = false;
                detail = format!("instance {i}, site {site}");
            }
        }
    }
    // Nested intervals on shared stacks: the origin odometer is
    // nondecreasing in the interval size for the same sample.
    for i in 0..50u64 {
        let seed = derive_seed(304, i);
        let eta = InitialLaw::Poisson(0.6).sample(-128, 128, derive_seed(seed, 1));
        let mut store = StackStore::new(seed, 0.5, 0.5);
        let mut prev = 0u64;
        for m in [8i64, 32, 128] {
            store.reset_cursors();
            let sub = eta.restricted(-m, m);
            let out =
                stabilize_rule(&sub, &mut store, ToppleRule::Arw, POLICIES[0], 100_000_000, None)
                    .unwrap();
            let u = out.odometer.get(0);
            if u < prev {
                ok = false;
                detail = format!("nested sample {i}: u(0) dropped at M = {m}");
            }
            prev = u;
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(30);
    check(3, "monotonicity", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_04_coupling_dominates_the_labeled_odometer() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let geometries = [(8i64, 4i64), (16, 8), (32, 16), (64, 4), (16, 4), (32, 8), (64, 16), (8, 16)];
    let lambdas = [0.3, 0.5, 1.0];
    for i in 0..100u64 {
        let (r, k) = geometries[(i % geometries.len() as u64) as usize];
        let lambda = lambdas[(i % 3) as usize];
        let eta = random_poisson_config(derive_seed(401, i), r, 0.7);
        let mut store = StackStore::new(derive_seed(402, i), lambda, 0.5);
        match coupled_stabilize(&eta, r, k, &mut store, 1_000_000_000, true) {
            Ok(run) => {
                if !run.domination_holds() {
                    ok = false;
                    detail = format!("run {i}: r = {r}, K = {k}, lambda = {lambda}");
                }
            }
            Err(e) => {
                ok = false;
                detail = format!("run {i} errored: {e}");
            }
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(60);
    check(4, "coupling domination", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_05_lattice_point_statistics_are_local() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let geometries = [(8i64, 4i64), (12, 4), (16, 4), (16, 8), (8, 8)];
    for i in 0..100u64 {
        let (r, k) = geometries[(i % geometries.len() as u64) as usize];
        // Particles on the lattice points of [-r, r].
        let counts = InitialLaw::Poisson(0.9).sample(-r, r, derive_seed(501, i));
        let mut eta = Configuration::empty(-r, r);
        let mut site = -r;
        while site <= r {
            if site.rem_euclid(k) == 0 {
                eta.set_state(site, counts.state(site));
            }
            site += 1;
        }
        let store = StackStore::new(derive_seed(502, i), 0.5, 0.5);
        let out = labeled_stabilize(&eta, r, k, &store, 100_000_000).unwrap();
        let b = (2 * r) / k;
        for x in out.stats.indices().collect::<Vec<_>>() {
            if x.abs() == b {
                continue; // boundary points absorb and never topple
            }
            let ss = single_site(x, out.stats.m(x), k, &store, 100_000_000).unwrap();
            let row = out.stats.row(x);
            if ss.l_to != row.l_to
                || ss.r_to != row.r_to
                || ss.l_net != row.l_net
                || ss.r_net != row.r_net
                || ss.final_positions != out.system.sleepy_positions(x)
            {
                ok = false;
                detail = format!("run {i}: r = {r}, K = {k}, x = {x}");
            }
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(60);
    check(5, "single-site locality", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_06_left_counts_jump_by_at_most_two_k() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let ks = [2i64, 3, 4, 8, 16];
    for i in 0..100u64 {
        let k = ks[(i % ks.len() as u64) as usize];
        let mut rng = CounterRng::new(derive_seed(601, i), DOMAIN_POLICY, 11);
        let x = -5 + rng.next_below(11) as i64;
        let m = 20 + rng.next_below(181); // up to 200 particles
        let store = StackStore::new(derive_seed(602, i), 0.4, 0.5);
        let counts = left_count_function(x, k, &store, m, 100_000_000).unwrap();
        for w in counts.windows(2) {
            if w[1] < w[0] || w[1] - w[0] > 2 * k as u64 {
                ok = false;
                detail = format!("run {i}: K = {k}, x = {x}, jump {} -> {}", w[0], w[1]);
            }
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(60);
    check(6, "monotone jumps", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_07_walk_stacks_match_the_absorbing_chain_oracle() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let n = 10_000u64;
    for (k, lambda) in [(2i64, 0.1f64), (8, 0.01)] {
        let store = StackStore::new(701, lambda, 0.5);
        let mut total = 0u64;
        let mut right = 0u64;
        for index in 1..=n {
            let walk = store.walk_at(0, index, k).unwrap();
            total += walk.len() as u64;
            if walk.endpoint > 0 {
                right += 1;
            }
        }
        let mean = total as f64 / n as f64;
        let oracle = (k * k) as f64 * (1.0 + lambda);
        if (mean - oracle).abs() / oracle >= 0.05 {
            ok = false;
            detail = format!("K = {k}, lambda = {lambda}: mean length {mean} vs {oracle}");
        }
        let sigma = (0.25 * n as f64).sqrt();
        if (right as f64 - 0.5 * n as f64).abs() >= 3.0 * sigma {
            ok = false;
            detail = format!("K = {k}, lambda = {lambda}: {right} right exits of {n}");
        }
    }
    let in_time = start.elapsed() < Duration::from_secs(30);
    check(7, "walk-stack statistics", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_08_round_scheme_hits_the_origin_often_enough() {
    // Budgets, from single-core measurements: a full two-round sample costs
    // ~0.13 s, a full three-round sample ~83 s, and a single level-4 sample
    // exceeds 2e9 topplings (several minutes). Level 2 therefore runs all
    // 500 samples; levels 3 and 4 run marginal single-round samples (fresh
    // stacks, early stop once the origin topples) under a wall-clock
    // deadline, counting guard-tripped samples as misses. The 500-sample
    // requirement is asserted literally, so levels 3 and 4 fail it.
    const REQUIRED: u64 = 500;
    const GUARD: u64 = 500_000_000;
    const LAMBDA: f64 = 0.01;
    let law = InitialLaw::Poisson(1.0);
    let mut ok = true;
    let mut details = Vec::new();

    // Level 2: full sequential rounds, plus the exact per-sample bound that
    // the accumulated round odometer at the origin never exceeds the
    // one-shot stabilization of all seeded particles.
    let mut hits2 = 0u64;
    let mut bound_violations = 0u64;
    for i in 0..REQUIRED {
        let seed = derive_seed(801, i);
        let eta = law.sample(0, RoundPlan::v(2).1, derive_seed(seed, 1));
        let mut store = StackStore::new(seed, LAMBDA, 0.5);
        let w = run_rounds(&eta, RoundPlan::new(2), &mut store, GUARD).unwrap();
        if w[1] > 0 {
            hits2 += 1;
        }
        if i < 100 {
            for ell in 1..=2u32 {
                let mut fresh = StackStore::new(seed, LAMBDA, 0.5);
                let direct = direct_round_stabilize(&eta, ell, &mut fresh, GUARD).unwrap();
                let partial: u64 = w[..ell as usize].iter().sum();
                if partial > direct.get(0) {
                    bound_violations += 1;
                }
            }
        }
    }
    let est2 = wilson(hits2, REQUIRED);
    let half2 = 0.5 * (est2.ci_hi - est2.ci_lo);
    if est2.value < 0.25 - half2 {
        ok = false;
    }
    if bound_violations > 0 {
        ok = false;
    }
    details.push(format!(
        "ell=2: {hits2}/{REQUIRED} positive (p_hat {:.3}), {bound_violations} odometer-bound violations",
        est2.value
    ));

    // Levels 3 and 4: marginal samples under a deadline.
    for (ell, deadline) in [(3u32, 120u64), (4, 90)] {
        let t0 = Instant::now();
        let (ilo, ihi) = RoundPlan::seed_interval(ell);
        let (vlo, vhi) = RoundPlan::v(ell);
        let mut n = 0u64;
        let mut hits = 0u64;
        let mut guard_trips = 0u64;
        while n < REQUIRED && t0.elapsed() < Duration::from_secs(deadline) {
            let seed = derive_seed(800 + ell as u64, n);
            let eta = law.sample(ilo, ihi, derive_seed(seed, 1)).with_universe(vlo, vhi);
            let mut store = StackStore::new(seed, LAMBDA, 0.5);
            match stabilize_rule(
                &eta,
                &mut store,
                ToppleRule::Arw,
                TopplingPolicy::LeftmostUnstable,
                GUARD,
                Some(EarlyStop { site: 0, threshold: 1 }),
            ) {
                Ok(out) => {
                    if out.odometer.get(0) > 0 {
                        hits += 1;
                    }
                }
                Err(_) => guard_trips += 1, // counted as a miss
            }
            n += 1;
        }
        let est = if n > 0 { wilson(hits, n) } else { wilson(0, 1) };
        let half = 0.5 * (est.ci_hi - est.ci_lo);
        if n < REQUIRED || est.value < 0.25 - half {
            ok = false;
        }
        details.push(format!(
            "ell={ell}: {hits}/{n} positive of {REQUIRED} required ({guard_trips} guard trips) in {:?}",
            t0.elapsed()
        ));
    }
    let detail = details.join("; ");
    println!("  {detail}");
    check(8, "round scheme", ok, &detail);
}

#[test]
fn criterion_09_escape_probability_decays_in_r() {
    // Asserted at the pinned parameters (mu = 0.5, lambda = 1e-3, K = 16):
    // strictly decreasing escape-free probability with non-overlapping CIs
    // between r = 32 and r = 128.
    let rows = estimate_ar(&InitialLaw::Poisson(0.5), 1e-3, 16, &[32, 64, 128], 500, 901, 500_000_000);
    let mut detail = String::new();
    for row in &rows {
        detail.push_str(&format!(
            "r={}: p_hat {:.4} ci [{:.4}, {:.4}]; ",
            row.r, row.estimate.value, row.estimate.ci_lo, row.estimate.ci_hi
        ));
    }
    let decreasing = rows[0].estimate.value > rows[1].estimate.value
        && rows[1].estimate.value > rows[2].estimate.value;
    let separated = rows[0].estimate.ci_lo > rows[2].estimate.ci_hi;
    println!("  {detail}");
    check(9, "boundary-avoidance decay", decreasing && separated, &detail);
}

#[test]
fn criterion_10_totally_asymmetric_threshold_is_one_half() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let guard = 200_000_000;
    let (low, _) =
        activity_probe(ToppleRule::Arw, &InitialLaw::Poisson(0.3), 1.0, 0.0, 4096, 50, 200, 1001, guard);
    let (high, _) =
        activity_probe(ToppleRule::Arw, &InitialLaw::Poisson(0.7), 1.0, 0.0, 4096, 50, 200, 1002, guard);
    if low.value > 0.1 || high.value < 0.9 {
        ok = false;
        detail = format!("p_hat(0.3) = {:.3}, p_hat(0.7) = {:.3}", low.value, high.value);
    }
    let result = bisect_mu_c(
        ToppleRule::Arw,
        LawKind::Poisson,
        1.0,
        0.0,
        4096,
        50,
        64,
        1024,
        0.05,
        1003,
        guard,
        (0.12, 0.92),
    );
    if !result.conclusive || result.lo > 0.5 || result.hi < 0.5 {
        ok = false;
        detail = format!(
            "{detail}; bisection [{:.4}, {:.4}] conclusive={}",
            result.lo, result.hi, result.conclusive
        );
    }
    let in_time = start.elapsed() < Duration::from_secs(900);
    check(10, "totally asymmetric critical density", ok && in_time, &format!("{detail}; elapsed {:?}", start.elapsed()));
}

#[test]
fn criterion_11_sandpile_critical_density_bracket() {
    let start = Instant::now();
    let result = ssm_mu_c(LawKind::Poisson, 2048, 50, 200, 1600, 0.05, 1101, 200_000_000);
    let ok = result.conclusive && result.lo >= 0.85 && result.hi <= 1.0;
    let detail = format!(
        "bisection [{:.4}, {:.4}] conclusive={}; elapsed {:?}",
        result.lo,
        result.hi,
        result.conclusive,
        start.elapsed()
    );
    println!("  {detail}");
    check(11, "sandpile critical density bracket", ok && start.elapsed() < Duration::from_secs(1200), &detail);
}

#[test]
fn criterion_12_sleep_rate_separates_activity_from_fixation() {
    let start = Instant::now();
    let guard = 200_000_000;
    let (active, _) =
        activity_probe(ToppleRule::Arw, &InitialLaw::Poisson(0.5), 1e-3, 0.5, 4096, 50, 200, 1201, guard);
    let (fixed, _) =
        activity_probe(ToppleRule::Arw, &InitialLaw::Poisson(0.5), 10.0, 0.5, 4096, 50, 200, 1202, guard);
    let ok = active.value >= 0.9 && fixed.value <= 0.1;
    let detail = format!(
        "p_hat(lambda=1e-3) = {:.3}, p_hat(lambda=10) = {:.3}; elapsed {:?}",
        active.value,
        fixed.value,
        start.elapsed()
    );
    println!("  {detail}");
    check(12, "activity contrast in the sleep rate", ok && start.elapsed() < Duration::from_secs(900), &detail);
}

#[test]
fn criterion_13_reruns_are_byte_identical() {
    let a = ar_csv(&estimate_ar(&InitialLaw::Poisson(0.5), 0.5, 4, &[8, 16], 50, 1301, 10_000_000));
    let b = ar_csv(&estimate_ar(&InitialLaw::Poisson(0.5), 0.5, 4, &[8, 16], 50, 1301, 10_000_000));
    let law = InitialLaw::Poisson(0.6);
    let c = fixation_csv(&fixation_proxy(ToppleRule::Arw, &law, 0.5, 0.5, &[16, 32], &[5], 20, 1302, 10_000_000));
    let d = fixation_csv(&fixation_proxy(ToppleRule::Arw, &law, 0.5, 0.5, &[16, 32], &[5], 20, 1302, 10_000_000));
    check(13, "determinism", a == b && c == d, "re-run CSV differed");
}
