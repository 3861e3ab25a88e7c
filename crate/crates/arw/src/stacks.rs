//! Deterministic, seed-keyed instruction stacks.
//!
//! Two stack families share one master seed: per-site single-step stacks for
//! the plain dynamics, and per-lattice-point killed lazy-walk stacks for the
//! renormalized dynamics. Every entry is a pure function of the seed and its
//! coordinates, so stacks need no storage and support random access; only
//! the consumption cursors are mutable state.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Instruction, Site};
use crate::rng::{self, DOMAIN_STEP, DOMAIN_WALK};

/// Default cap on the length of a materialized walk. For `lambda > 0` and
/// finite `K` walks are almost surely finite, so hitting the cap indicates
/// a bug or degenerate parameters.
pub const DEFAULT_WALK_GUARD: u64 = 100_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StackError {
    #[error("cursor snapshot belongs to a store with a different master seed")]
    RestoreMismatch,
    #[error("walk at lattice index {lattice_index}, stack index {index} exceeded {guard} steps")]
    WalkGuardExceeded { lattice_index: i64, index: u64, guard: u64 },
}

/// Seed-keyed stack store for one run.
///
/// `instruction_at` and `walk_step` are pure in their arguments; the per-site
/// cursors track which entries have been consumed.
#[derive(Debug, Clone)]
pub struct StackStore {
    master_seed: u64,
    lambda: f64,
    bias: f64,
    sleep_p: f64,
    left_edge: f64,
    cursors: HashMap<Site, u64>,
    walk_guard: u64,
}

/// Saved cursor state; restoring replays the exact consumption point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CursorSnapshot {
    master_seed: u64,
    cursors: HashMap<Site, u64>,
}

/// A killed lazy walk from a lattice point: the step sequence of the walk
/// started at `origin = lattice_index * K`, stopped on first hitting
/// `origin - K` or `origin + K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    pub origin: Site,
    pub steps: Vec<Instruction>,
    pub endpoint: Site,
}

impl WalkPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl StackStore {
    /// `lambda` must be positive; `bias` is the leftward step probability.
    pub fn new(master_seed: u64, lambda: f64, bias: f64) -> Self {
        assert!(lambda > 0.0, "lambda must be > 0");
        assert!((0.0..=1.0).contains(&bias), "bias must be in [0, 1]");
        let sleep_p = lambda / (lambda + 1.0);
        StackStore {
            master_seed,
            lambda,
            bias,
            sleep_p,
            left_edge: sleep_p + bias / (lambda + 1.0),
            cursors: HashMap::new(),
            walk_guard: DEFAULT_WALK_GUARD,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_walk_guard(&mut self, guard: u64) {
        self.walk_guard = guard;
    }

    #[inline]
    fn decode(&self, u: u64) -> Instruction {
        let x = rng::unit_f64(u);
        if x < self.sleep_p {
            Instruction::Sleep
        } else if x < self.left_edge {
            Instruction::StepLeft
        } else {
            Instruction::StepRight
        }
    }

    /// The `index`-th instruction (1-based) on the single-step stack at `site`.
    ///
    /// Sleep has probability `lambda / (lambda + 1)`; the remaining mass is
    /// split `bias : (1 - bias)` between left and right steps.
    #[inline]
    pub fn instruction_at(&self, site: Site, index: u64) -> Instruction {
        debug_assert!(index >= 1);
        self.decode(rng::prf([self.master_seed ^ DOMAIN_STEP, site as u64], [index, 0]))
    }

    /// Next unused cursor position at `site` without consuming it.
    pub fn cursor(&self, site: Site) -> u64 {
        self.cursors.get(&site).copied().unwrap_or(1)
    }

    /// Consume the first unused instruction at `site`; returns the
    /// instruction and the index it was read from.
    #[inline]
    pub fn consume_next(&mut self, site: Site) -> (Instruction, u64) {
        let cursor = self.cursors.entry(site).or_insert(1);
        let index = *cursor;
        *cursor += 1;
        (self.instruction_at(site, index), index)
    }

    /// Consume instructions at `site` until a step (non-sleep) appears.
    /// Used by the stochastic sandpile rule, which has no sleep mechanism.
    #[inline]
    pub fn consume_next_step(&mut self, site: Site) -> Instruction {
        loop {
            let (instr, _) = self.consume_next(site);
            if instr != Instruction::Sleep {
                return instr;
            }
        }
    }

    /// The `step`-th step (1-based) of walk `index` at `lattice_index`.
    /// Lazy steps are encoded as Sleep.
    #[inline]
    pub fn walk_step(&self, lattice_index: i64, index: u64, step: u64) -> Instruction {
        debug_assert!(index >= 1 && step >= 1);
        self.decode(rng::prf([self.master_seed ^ DOMAIN_WALK, lattice_index as u64], [index, step]))
    }

    /// Materialize walk `index` at `lattice_index`: the lazy walk from
    /// `lattice_index * k`, truncated on first hitting `lattice_index * k
    /// ± k`.
    pub fn walk_at(&self, lattice_index: i64, index: u64, k: i64) -> Result<WalkPath, StackError> {
        assert!(k >= 1, "k must be >= 1");
        let origin = lattice_index * k;
        let mut pos = origin;
        let mut steps = Vec::new();
        let mut t = 1u64;
        loop {
            if t > self.walk_guard {
                return Err(StackError::WalkGuardExceeded {
                    lattice_index,
                    index,
                    guard: self.walk_guard,
                });
            }
            let instr = self.walk_step(lattice_index, index, t);
            t += 1;
            match instr {
                Instruction::StepLeft => pos -= 1,
                Instruction::StepRight => pos += 1,
                Instruction::Sleep => {}
            }
            steps.push(instr);
            if (pos - origin).abs() == k {
                return Ok(WalkPath { origin, steps, endpoint: pos });
            }
        }
    }

    pub fn snapshot_cursors(&self) -> CursorSnapshot {
        CursorSnapshot { master_seed: self.master_seed, cursors: self.cursors.clone() }
    }

    pub fn restore_cursors(&mut self, snapshot: &CursorSnapshot) -> Result<(), StackError> {
        if snapshot.master_seed != self.master_seed {
            return Err(StackError::RestoreMismatch);
        }
        self.cursors = snapshot.cursors.clone();
        Ok(())
    }

    /// Reset every cursor to the top of its stack.
    pub fn reset_cursors(&mut self) {
        self.cursors.clear();
    }
}
