//! Discrete driven dynamics on a finite interval: legal topplings,
//! stabilization, and the toppling-order bookkeeping that the Abelian
//! property makes irrelevant for the final state.

use std::collections::BTreeSet;
use std::io::Write;

use thiserror::Error;

use crate::model::{apply_instruction, Configuration, Instruction, Odometer, Site};
use crate::rng::{CounterRng, DOMAIN_POLICY};
use crate::stacks::StackStore;

/// Default cap on total topplings in one stabilization run.
pub const DEFAULT_GUARD: u64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("illegal toppling at stable site {site}")]
    IllegalToppling { site: Site },
    #[error("toppling sequence illegal at position {0}")]
    IllegalSequence(usize),
    #[error("stabilization exceeded the guard of {guard} topplings")]
    GuardExceeded { guard: u64 },
    #[error("trace write failed: {0}")]
    Trace(String),
}

/// Which toppling rule the engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToppleRule {
    /// Activated random walk: one instruction per toppling.
    Arw,
    /// Stochastic sandpile: sites with two or more particles emit two
    /// particles with independent steps; sleep draws are skipped.
    Ssm,
}

/// Order in which unstable sites are selected. Any choice yields the same
/// final odometer and configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopplingPolicy {
    LeftmostUnstable,
    RightmostUnstable,
    UniformRandomUnstable,
    FifoQueue,
}

/// Toppling engine state: configuration, odometer and rule.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub config: Configuration,
    pub odometer: Odometer,
    pub rule: ToppleRule,
}

/// True iff `site` is stable for the activated-walk rule: empty, or a lone
/// sleeper.
#[inline]
pub fn is_stable(config: &Configuration, site: Site) -> bool {
    config.state(site).active_count() == 0
}

#[inline]
fn is_unstable(config: &Configuration, site: Site, rule: ToppleRule) -> bool {
    match rule {
        ToppleRule::Arw => config.state(site).active_count() > 0,
        ToppleRule::Ssm => config.state(site).occupancy() >= 2,
    }
}

impl EngineState {
    pub fn new(config: Configuration, rule: ToppleRule) -> Self {
        let (lo, hi) = config.universe();
        EngineState { config, odometer: Odometer::zero(lo, hi), rule }
    }

    pub fn is_stable_site(&self, site: Site) -> bool {
        !is_unstable(&self.config, site, self.rule)
    }

    /// Perform one toppling at `site`, consuming from `stacks`.
    pub fn topple(&mut self, stacks: &mut StackStore, site: Site) -> Result<Instruction, EngineError> {
        if !is_unstable(&self.config, site, self.rule) {
            return Err(EngineError::IllegalToppling { site });
        }
        match self.rule {
            ToppleRule::Arw => {
                let (instr, _) = stacks.consume_next(site);
                apply_instruction(&mut self.config, site, instr)
                    .map_err(|_| EngineError::IllegalToppling { site })?;
                self.odometer.record(site);
                Ok(instr)
            }
            ToppleRule::Ssm => {
                // Two independent emissions per toppling.
                let mut last = Instruction::StepRight;
                for _ in 0..2 {
                    let instr = stacks.consume_next_step(site);
                    apply_instruction(&mut self.config, site, instr)
                        .map_err(|_| EngineError::IllegalToppling { site })?;
                    last = instr;
                }
                self.odometer.record(site);
                Ok(last)
            }
        }
    }
}

/// Stop condition checked during stabilization: finish early once the
/// odometer at `site` reaches `threshold`.
#[derive(Debug, Clone, Copy)]
pub struct EarlyStop {
    pub site: Site,
    pub threshold: u64,
}

/// Result of a stabilization run.
#[derive(Debug, Clone)]
pub struct StabilizeOutcome {
    pub odometer: Odometer,
    pub config: Configuration,
    /// True if an `EarlyStop` condition fired before full stabilization.
    pub stopped_early: bool,
    pub topplings: u64,
}

enum Worklist {
    Ordered(BTreeSet<Site>, bool),
    Fifo(std::collections::VecDeque<Site>, Vec<bool>, Site),
    Random(Vec<Site>, Vec<bool>, Site, CounterRng),
}

impl Worklist {
    fn new(policy: TopplingPolicy, config: &Configuration, rule: ToppleRule, seed: u64) -> Self {
        let (lo, hi) = config.universe();
        let unstable: Vec<Site> =
            (lo..=hi).filter(|&s| is_unstable(config, s, rule)).collect();
        match policy {
            TopplingPolicy::LeftmostUnstable => {
                Worklist::Ordered(unstable.into_iter().collect(), true)
            }
            TopplingPolicy::RightmostUnstable => {
                Worklist::Ordered(unstable.into_iter().collect(), false)
            }
            TopplingPolicy::FifoQueue => {
                let mut flags = vec![false; (hi - lo + 1) as usize];
                for &s in &unstable {
                    flags[(s - lo) as usize] = true;
                }
                Worklist::Fifo(unstable.into(), flags, lo)
            }
            TopplingPolicy::UniformRandomUnstable => {
                let mut flags = vec![false; (hi - lo + 1) as usize];
                for &s in &unstable {
                    flags[(s - lo) as usize] = true;
                }
                Worklist::Random(unstable, flags, lo, CounterRng::new(seed, DOMAIN_POLICY, 0))
            }
        }
    }

    /// Next candidate site; stale entries are re-checked by the caller.
    fn pop(&mut self) -> Option<Site> {
        match self {
            Worklist::Ordered(set, leftmost) => {
                let site = if *leftmost {
                    set.iter().next().copied()
                } else {
                    set.iter().next_back().copied()
                }?;
                set.remove(&site);
                Some(site)
            }
            Worklist::Fifo(queue, flags, lo) => {
                let site = queue.pop_front()?;
                flags[(site - *lo) as usize] = false;
                Some(site)
            }
            Worklist::Random(list, flags, lo, rng) => {
                if list.is_empty() {
                    return None;
                }
                let idx = rng.next_below(list.len() as u64) as usize;
                let site = list.swap_remove(idx);
                flags[(site - *lo) as usize] = false;
                Some(site)
            }
        }
    }

    fn push(&mut self, site: Site) {
        match self {
            Worklist::Ordered(set, _) => {
                set.insert(site);
            }
            Worklist::Fifo(queue, flags, lo) => {
                let flag = &mut flags[(site - *lo) as usize];
                if !*flag {
                    *flag = true;
                    queue.push_back(site);
                }
            }
            Worklist::Random(list, flags, lo, _) => {
                let flag = &mut flags[(site - *lo) as usize];
                if !*flag {
                    *flag = true;
                    list.push(site);
                }
            }
        }
    }
}

/// Full stabilization driver. Topples policy-selected unstable sites until
/// the whole universe of `config` is stable, or until `early` fires.
pub fn stabilize_rule(
    config: &Configuration,
    stacks: &mut StackStore,
    rule: ToppleRule,
    policy: TopplingPolicy,
    guard: u64,
    early: Option<EarlyStop>,
) -> Result<StabilizeOutcome, EngineError> {
    let mut state = EngineState::new(config.clone(), rule);
    let mut work = Worklist::new(policy, &state.config, rule, stacks.master_seed());
    let mut topplings = 0u64;
    let mut stopped_early = false;

    while let Some(site) = work.pop() {
        if !is_unstable(&state.config, site, rule) {
            continue;
        }
        if topplings >= guard {
            return Err(EngineError::GuardExceeded { guard });
        }
        state.topple(stacks, site)?;
        topplings += 1;
        if is_unstable(&state.config, site, rule) {
            work.push(site);
        }
        for neighbour in [site - 1, site + 1] {
            if state.config.contains(neighbour) && is_unstable(&state.config, neighbour, rule) {
                work.push(neighbour);
            }
        }
        if let Some(stop) = early {
            if state.odometer.get(stop.site) >= stop.threshold {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(StabilizeOutcome {
        odometer: state.odometer,
        config: state.config,
        stopped_early,
        topplings,
    })
}

/// Stabilize under the activated-walk rule; the universe of `config` is the
/// toppling region. Returns the odometer and the final configuration.
pub fn stabilize(
    config: &Configuration,
    stacks: &mut StackStore,
    policy: TopplingPolicy,
    guard: u64,
) -> Result<(Odometer, Configuration), EngineError> {
    let out = stabilize_rule(config, stacks, ToppleRule::Arw, policy, guard, None)?;
    Ok((out.odometer, out.config))
}

/// Apply a given toppling sequence, checking legality step by step.
/// Returns the final configuration and the sequence odometer.
pub fn apply_sequence(
    config: &Configuration,
    sequence: &[Site],
    stacks: &mut StackStore,
) -> Result<(Configuration, Odometer), EngineError> {
    let mut state = EngineState::new(config.clone(), ToppleRule::Arw);
    for (i, &site) in sequence.iter().enumerate() {
        state.topple(stacks, site).map_err(|_| EngineError::IllegalSequence(i))?;
    }
    Ok((state.config, state.odometer))
}

/// Stabilize while writing a `step,site,instruction,resulting-occupancy`
/// record per toppling.
pub fn stabilize_traced(
    config: &Configuration,
    stacks: &mut StackStore,
    policy: TopplingPolicy,
    guard: u64,
    sink: &mut dyn Write,
) -> Result<(Odometer, Configuration), EngineError> {
    let mut state = EngineState::new(config.clone(), ToppleRule::Arw);
    let mut work = Worklist::new(policy, &state.config, ToppleRule::Arw, stacks.master_seed());
    let mut step = 0u64;
    while let Some(site) = work.pop() {
        if !is_unstable(&state.config, site, ToppleRule::Arw) {
            continue;
        }
        if step >= guard {
            return Err(EngineError::GuardExceeded { guard });
        }
        let instr = state.topple(stacks, site)?;
        step += 1;
        writeln!(sink, "{},{},{},{}", step, site, instr, state.config.occupancy(site))
            .map_err(|e| EngineError::Trace(e.to_string()))?;
        if is_unstable(&state.config, site, ToppleRule::Arw) {
            work.push(site);
        }
        for neighbour in [site - 1, site + 1] {
            if state.config.contains(neighbour)
                && is_unstable(&state.config, neighbour, ToppleRule::Arw)
            {
                work.push(neighbour);
            }
        }
    }
    Ok((state.odometer, state.config))
}

pub const ALL_POLICIES: [TopplingPolicy; 4] = [
    TopplingPolicy::LeftmostUnstable,
    TopplingPolicy::RightmostUnstable,
    TopplingPolicy::UniformRandomUnstable,
    TopplingPolicy::FifoQueue,
];
