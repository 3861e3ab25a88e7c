//! Monte Carlo layer: sampling of initial configurations, the nested-round
//! lower-bound scheme, boundary-avoidance decay estimation, the
//! fixation-probability proxy, and critical-density bisection.
//!
//! Every sample derives its own store seed as a pure function of the master
//! seed and the sample index, so results do not depend on scheduling order.

use rayon::prelude::*;
use thiserror::Error;

use crate::coupling::{round_one, CouplingError};
use crate::engine::{stabilize_rule, EarlyStop, EngineError, ToppleRule, TopplingPolicy};
use crate::labeled::{LabeledError, LabeledSystem};
use crate::model::{Configuration, Odometer, Site, SiteState};
use crate::stacks::StackStore;
use crate::rng::{derive_seed, CounterRng, DOMAIN_SAMPLE};

pub const Z_95: f64 = 1.96;
pub const DEFAULT_SAMPLE_GUARD: u64 = 200_000_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Labeled(#[from] LabeledError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// A binomial point estimate with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub samples: u64,
    pub hits: u64,
}

pub fn wilson(hits: u64, samples: u64) -> Estimate {
    if samples == 0 {
        return Estimate { value: 0.0, ci_lo: 0.0, ci_hi: 1.0, samples: 0, hits: 0 };
    }
    let n = samples as f64;
    let p = hits as f64 / n;
    let z = Z_95;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Estimate {
        value: p,
        ci_lo: (centre - half).max(0.0),
        ci_hi: (centre + half).min(1.0),
        samples,
        hits,
    }
}

/// Product initial law: independent occupation numbers per site.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// 0/1 occupancy with the given mean; requires mean <= 1.
    Bernoulli(f64),
    Poisson(f64),
    Deterministic(Vec<(Site, u32)>),
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Bernoulli(mu) | InitialLaw::Poisson(mu) => *mu,
            InitialLaw::Deterministic(list) => {
                let total: u64 = list.iter().map(|&(_, n)| n as u64).sum();
                total as f64 / list.len().max(1) as f64
            }
        }
    }

    /// Sample on `[lo, hi]`. Draws are keyed by site, so the sample on a
    /// subinterval is literally the restriction of the sample on a larger
    /// one under the same seed.
    pub fn sample(&self, lo: Site, hi: Site, seed: u64) -> Configuration {
        let mut cfg = Configuration::empty(lo, hi);
        match self {
            InitialLaw::Bernoulli(mu) => {
                assert!((0.0..=1.0).contains(mu), "Bernoulli mean must be in [0, 1]");
                for site in lo..=hi {
                    let mut rng = CounterRng::new(seed, DOMAIN_SAMPLE, site as u64);
                    if rng.next_f64() < *mu {
                        cfg.set_state(site, SiteState::with_active(1));
                    }
                }
            }
            InitialLaw::Poisson(mu) => {
                assert!(*mu >= 0.0, "Poisson mean must be nonnegative");
                let limit = (-mu).exp();
                for site in lo..=hi {
                    let mut rng = CounterRng::new(seed, DOMAIN_SAMPLE, site as u64);
                    let mut n = 0u32;
                    let mut p = 1.0f64;
                    loop {
                        p *= rng.next_f64();
                        if p <= limit {
                            break;
                        }
                        n += 1;
                    }
                    if n > 0 {
                        cfg.set_state(site, SiteState::with_active(n));
                    }
                }
            }
            InitialLaw::Deterministic(list) => {
                for &(site, n) in list {
                    if site >= lo && site <= hi && n > 0 {
                        cfg.set_state(site, SiteState::with_active(n));
                    }
                }
            }
        }
        cfg
    }
}

/// Law family indexed by its mean, for bisection over the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    Bernoulli,
    Poisson,
}

impl LawKind {
    pub fn with_mean(self, mu: f64) -> InitialLaw {
        match self {
            LawKind::Bernoulli => InitialLaw::Bernoulli(mu),
            LawKind::Poisson => InitialLaw::Poisson(mu),
        }
    }
}

/// Geometry of the nested-round scheme: round `ell` seeds particles on
/// `[8^ell, 3 * 8^ell]` and stabilizes them on `[0, 4 * 8^ell]`. The seed
/// intervals are pairwise disjoint and each sits inside its round's
/// stabilization interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPlan {
    pub ell_max: u32,
}

impl RoundPlan {
    pub fn new(ell_max: u32) -> Self {
        assert!(ell_max >= 1 && ell_max <= 19, "round count out of range");
        RoundPlan { ell_max }
    }

    /// Stabilization interval of round `ell`.
    pub fn v(ell: u32) -> (Site, Site) {
        (0, 1i64 << (3 * ell + 2))
    }

    /// Seed interval of round `ell`.
    pub fn seed_interval(ell: u32) -> (Site, Site) {
        (1i64 << (3 * ell), 3 * (1i64 << (3 * ell)))
    }
}

/// Run the rounds in order on one shared store: round `ell` stabilizes the
/// restriction of `eta` to its seed interval on its stabilization interval,
/// consuming only draws unused by earlier rounds. Returns the odometer value
/// at the origin for each round.
pub fn run_rounds(
    eta: &Configuration,
    plan: RoundPlan,
    stacks: &mut StackStore,
    guard: u64,
) -> Result<Vec<u64>, ExperimentError> {
    let mut w = Vec::with_capacity(plan.ell_max as usize);
    for ell in 1..=plan.ell_max {
        let (ilo, ihi) = RoundPlan::seed_interval(ell);
        let (vlo, vhi) = RoundPlan::v(ell);
        let sub = eta.restricted(ilo, ihi).with_universe(vlo, vhi);
        let out = stabilize_rule(
            &sub,
            stacks,
            ToppleRule::Arw,
            TopplingPolicy::LeftmostUnstable,
            guard,
            None,
        )?;
        w.push(out.odometer.get(0));
    }
    Ok(w)
}

/// Direct stabilization of `eta` restricted to the union of the first `ell`
/// seed intervals, on round `ell`'s stabilization interval. Run on a fresh
/// store with the same seed, its origin odometer upper-bounds the summed
/// per-round values from `run_rounds`.
pub fn direct_round_stabilize(
    eta: &Configuration,
    ell: u32,
    stacks: &mut StackStore,
    guard: u64,
) -> Result<Odometer, ExperimentError> {
    let (vlo, vhi) = RoundPlan::v(ell);
    let mut cfg = Configuration::empty(vlo, vhi);
    for i in 1..=ell {
        let (ilo, ihi) = RoundPlan::seed_interval(i);
        for site in ilo..=ihi {
            if eta.contains(site) {
                cfg.set_state(site, eta.state(site));
            }
        }
    }
    let out = stabilize_rule(
        &cfg,
        stacks,
        ToppleRule::Arw,
        TopplingPolicy::LeftmostUnstable,
        guard,
        None,
    )?;
    Ok(out.odometer)
}

/// Per-`r` result of the boundary-avoidance experiment.
#[derive(Debug, Clone)]
pub struct ArRow {
    pub r: i64,
    pub samples: u64,
    pub hits: u64,
    pub estimate: Estimate,
    /// Same event for the plain unlabeled process on the doubled interval.
    pub unlabeled: Estimate,
    /// Estimate conditioned on enough particles reaching the lattice.
    pub conditional: Estimate,
    pub guard_failures: u64,
}

/// Estimate, for each `r`, the probability that the labeled process seeded
/// on `[-r, r]` never reaches `[-2r, 2r]`'s boundary. Particles are first
/// brought onto the lattice (spacing `k`); samples whose lattice particle
/// count is at least half the expected seed count also feed a conditional
/// estimate. Guard-tripped samples count as boundary hits and are tallied.
pub fn estimate_ar(
    law: &InitialLaw,
    lambda: f64,
    k: i64,
    r_list: &[i64],
    samples: u64,
    seed: u64,
    guard: u64,
) -> Vec<ArRow> {
    r_list
        .iter()
        .map(|&r| {
            assert!(r > 0 && (2 * r).rem_euclid(k) == 0, "each r must be a positive multiple of k");
            let r_seed = derive_seed(seed, r as u64);
            let per: Vec<(bool, bool, bool, bool)> = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let sseed = derive_seed(r_seed, i);
                    let mut store = StackStore::new(sseed, lambda, 0.5);
                    let eta = law.sample(-r, r, derive_seed(sseed, 0)).with_universe(-2 * r, 2 * r);
                    let expected = law.mean() * r as f64;
                    match labeled_ar_sample(&eta, k, &mut store, guard) {
                        Ok((a_r, tilde_count)) => {
                            let cond = 2.0 * tilde_count as f64 >= expected;
                            let u = unlabeled_ar_sample(&eta, r, derive_seed(sseed, 1), lambda, guard);
                            (a_r, u, cond, false)
                        }
                        Err(_) => (false, false, false, true),
                    }
                })
                .collect();
            let hits = per.iter().filter(|p| p.0).count() as u64;
            let u_hits = per.iter().filter(|p| p.1).count() as u64;
            let cond_n = per.iter().filter(|p| p.2).count() as u64;
            let cond_hits = per.iter().filter(|p| p.2 && p.0).count() as u64;
            let guard_failures = per.iter().filter(|p| p.3).count() as u64;
            ArRow {
                r,
                samples,
                hits,
                estimate: wilson(hits, samples),
                unlabeled: wilson(u_hits, samples),
                conditional: wilson(cond_hits, cond_n),
                guard_failures,
            }
        })
        .collect()
}

fn labeled_ar_sample(
    eta: &Configuration,
    k: i64,
    store: &mut StackStore,
    guard: u64,
) -> Result<(bool, u64), ExperimentError> {
    let first = round_one(eta, k, store, guard)?;
    let mut sys = LabeledSystem::new_full(&first.eta_tilde, k)?;
    sys.stabilize(store, guard, true)?;
    Ok((!sys.boundary_hit, first.eta_tilde.total_particles()))
}

fn unlabeled_ar_sample(eta: &Configuration, r: i64, seed: u64, lambda: f64, guard: u64) -> bool {
    // Stop as soon as the right end topples: the event under estimation is
    // already false then, and at small sleep rates the full stabilization
    // would be orders of magnitude more work.
    let mut store = StackStore::new(seed, lambda, 0.5);
    match stabilize_rule(
        eta,
        &mut store,
        ToppleRule::Arw,
        TopplingPolicy::FifoQueue,
        guard,
        Some(EarlyStop { site: 2 * r, threshold: 1 }),
    ) {
        Ok(out) => out.odometer.get(-2 * r) == 0 && out.odometer.get(2 * r) == 0,
        Err(_) => false,
    }
}

/// Per-(interval size, threshold) row of the fixation proxy.
#[derive(Debug, Clone)]
pub struct FixationRow {
    pub m: i64,
    pub t: u64,
    pub samples: u64,
    pub hits: u64,
    pub estimate: Estimate,
    pub guard_failures: u64,
}

/// Estimate `P(u_M(0) >= T)` for each interval half-length `M` and each
/// threshold `T`. Within a sample all `M` share one store (cursors reset
/// between sizes) and one site-keyed draw of the initial configuration, so
/// the per-sample origin odometer is nondecreasing in `M`; this is asserted.
/// Guard-tripped runs count as exceeding every threshold and are tallied.
pub fn fixation_proxy(
    rule: ToppleRule,
    law: &InitialLaw,
    lambda: f64,
    bias: f64,
    m_list: &[i64],
    t_list: &[u64],
    samples: u64,
    seed: u64,
    guard: u64,
) -> Vec<FixationRow> {
    assert!(m_list.windows(2).all(|w| w[0] < w[1]), "interval sizes must increase");
    let cap = t_list.iter().copied().max().expect("at least one threshold");
    let per: Vec<(Vec<u64>, Vec<bool>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let sseed = derive_seed(seed, i);
            let mut store = StackStore::new(sseed, lambda, bias);
            let sample_seed = derive_seed(sseed, 1);
            let mut u_vals = Vec::with_capacity(m_list.len());
            let mut guarded = Vec::with_capacity(m_list.len());
            let mut prev = 0u64;
            for (j, &m) in m_list.iter().enumerate() {
                store.reset_cursors();
                let eta = law.sample(-m, m, sample_seed);
                // FIFO order spreads work across the interval, so the
                // origin early-stop triggers long before the leftmost-first
                // order would reach it; the final odometer is order
                // independent, so the estimate is unchanged.
                let u = match stabilize_rule(
                    &eta,
                    &mut store,
                    rule,
                    TopplingPolicy::FifoQueue,
                    guard,
                    Some(EarlyStop { site: 0, threshold: cap }),
                ) {
                    Ok(out) => {
                        guarded.push(false);
                        out.odometer.get(0).min(cap)
                    }
                    Err(_) => {
                        guarded.push(true);
                        cap
                    }
                };
                if j > 0 {
                    assert!(u >= prev, "origin odometer decreased when the interval grew");
                }
                prev = u;
                u_vals.push(u);
            }
            (u_vals, guarded)
        })
        .collect();
    let mut rows = Vec::new();
    for (j, &m) in m_list.iter().enumerate() {
        let guard_failures = per.iter().filter(|p| p.1[j]).count() as u64;
        for &t in t_list {
            let hits = per.iter().filter(|p| p.0[j] >= t).count() as u64;
            rows.push(FixationRow {
                m,
                t,
                samples,
                hits,
                estimate: wilson(hits, samples),
                guard_failures,
            });
        }
    }
    rows
}

/// One activity probe at a fixed density: `P(u_M(0) >= T)` from independent
/// samples, guard trips counted as active.
pub fn activity_probe(
    rule: ToppleRule,
    law: &InitialLaw,
    lambda: f64,
    bias: f64,
    m: i64,
    t: u64,
    samples: u64,
    seed: u64,
    guard: u64,
) -> (Estimate, u64) {
    let per: Vec<(bool, bool)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let sseed = derive_seed(seed, i);
            let mut store = StackStore::new(sseed, lambda, bias);
            let eta = law.sample(-m, m, derive_seed(sseed, 1));
            match stabilize_rule(
                &eta,
                &mut store,
                rule,
                TopplingPolicy::FifoQueue,
                guard,
                Some(EarlyStop { site: 0, threshold: t }),
            ) {
                Ok(out) => (out.odometer.get(0) >= t, false),
                Err(_) => (true, true),
            }
        })
        .collect();
    let hits = per.iter().filter(|p| p.0).count() as u64;
    let guard_failures = per.iter().filter(|p| p.1).count() as u64;
    (wilson(hits, samples), guard_failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Fixates,
    Active,
    /// The confidence interval still straddles 1/2 at the sample cap.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub mu: f64,
    pub decision: Decision,
    pub estimate: Estimate,
    pub guard_failures: u64,
}

#[derive(Debug, Clone)]
pub struct BisectResult {
    pub lo: f64,
    pub hi: f64,
    pub probes: Vec<Probe>,
    /// False iff some probe came back inconclusive and the bisection
    /// stopped at its current bracket.
    pub conclusive: bool,
}

/// Decide on which side of 1/2 the activity probability at `mu` lies,
/// doubling the sample count until the interval excludes 1/2 or the cap is
/// reached.
#[allow(clippy::too_many_arguments)]
pub fn decide_at(
    rule: ToppleRule,
    kind: LawKind,
    mu: f64,
    lambda: f64,
    bias: f64,
    m: i64,
    t: u64,
    base_samples: u64,
    sample_cap: u64,
    seed: u64,
    guard: u64,
) -> Probe {
    let law = kind.with_mean(mu);
    let mut n = base_samples.max(8);
    let mut attempt = 0u64;
    loop {
        let probe_seed = derive_seed(derive_seed(seed, mu.to_bits()), attempt);
        let (est, guard_failures) =
            activity_probe(rule, &law, lambda, bias, m, t, n, probe_seed, guard);
        let decision = if est.ci_hi < 0.5 {
            Decision::Fixates
        } else if est.ci_lo > 0.5 {
            Decision::Active
        } else if n >= sample_cap {
            Decision::Inconclusive
        } else {
            n = (n * 2).min(sample_cap);
            attempt += 1;
            continue;
        };
        return Probe { mu, decision, estimate: est, guard_failures };
    }
}

/// Bisect the density at which the activity probability crosses 1/2. The
/// bracket endpoints are taken on trust (low end fixating, high end active);
/// an inconclusive probe stops the search and returns the current bracket.
#[allow(clippy::too_many_arguments)]
pub fn bisect_mu_c(
    rule: ToppleRule,
    kind: LawKind,
    lambda: f64,
    bias: f64,
    m: i64,
    t: u64,
    base_samples: u64,
    sample_cap: u64,
    tol: f64,
    seed: u64,
    guard: u64,
    bracket: (f64, f64),
) -> BisectResult {
    assert!(tol > 0.0 && bracket.0 < bracket.1);
    let (mut lo, mut hi) = bracket;
    let mut probes = Vec::new();
    let mut conclusive = true;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let probe =
            decide_at(rule, kind, mid, lambda, bias, m, t, base_samples, sample_cap, seed, guard);
        let decision = probe.decision;
        probes.push(probe);
        match decision {
            Decision::Fixates => lo = mid,
            Decision::Active => hi = mid,
            Decision::Inconclusive => {
                conclusive = false;
                break;
            }
        }
    }
    BisectResult { lo, hi, probes, conclusive }
}

/// Sleep draws never fire in the two-emission rule, but the store requires a
/// positive sleep rate; this stand-in is small enough to be unreachable in
/// any feasible run.
pub const SSM_LAMBDA: f64 = 1e-12;

/// Critical-density bisection for the two-emission (sandpile) rule.
pub fn ssm_mu_c(
    kind: LawKind,
    m: i64,
    t: u64,
    base_samples: u64,
    sample_cap: u64,
    tol: f64,
    seed: u64,
    guard: u64,
) -> BisectResult {
    bisect_mu_c(
        ToppleRule::Ssm,
        kind,
        SSM_LAMBDA,
        0.5,
        m,
        t,
        base_samples,
        sample_cap,
        tol,
        seed,
        guard,
        (0.6, 1.4),
    )
}

/// Two-sample Kolmogorov–Smirnov statistic `D` for integer-valued samples.
/// Reject equality at level alpha when
/// `D > c(alpha) * sqrt((n + m) / (n * m))`.
pub fn ks_two_sample(xs: &[u64], ys: &[u64]) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty());
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let n = a.len() as f64;
    let m = b.len() as f64;
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub fn ar_csv(rows: &[ArRow]) -> String {
    let mut out = String::from("r,samples,hits,p_hat,ci_lo,ci_hi,guard_failures\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.r,
            row.samples,
            row.hits,
            fmt(row.estimate.value),
            fmt(row.estimate.ci_lo),
            fmt(row.estimate.ci_hi),
            row.guard_failures
        ));
    }
    out
}

pub fn fixation_csv(rows: &[FixationRow]) -> String {
    let mut out = String::from("M,T,samples,hits,p_hat,ci_lo,ci_hi,guard_failures\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.m,
            row.t,
            row.samples,
            row.hits,
            fmt(row.estimate.value),
            fmt(row.estimate.ci_lo),
            fmt(row.estimate.ci_hi),
            row.guard_failures
        ));
    }
    out
}

pub fn rounds_csv(w: &[u64]) -> String {
    let mut out = String::from("ell,w\n");
    for (i, &wi) in w.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, wi));
    }
    out
}

pub fn bisect_csv(result: &BisectResult) -> String {
    let mut out = String::from("mu,decision,samples,p_hat,ci_lo,ci_hi,guard_failures\n");
    for p in &result.probes {
        let d = match p.decision {
            Decision::Fixates => "fixates",
            Decision::Active => "active",
            Decision::Inconclusive => "inconclusive",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt(p.mu),
            d,
            p.estimate.samples,
            fmt(p.estimate.value),
            fmt(p.estimate.ci_lo),
            fmt(p.estimate.ci_hi),
            p.guard_failures
        ));
    }
    out
}
