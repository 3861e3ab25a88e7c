//! Particle configurations on a finite integer interval.
//!
//! A site holds some number of active particles and at most one sleeping
//! particle; a sleeper is always alone at its site (an arriving active
//! particle wakes it instantly). Particles that step outside the universe
//! interval are deleted.

use thiserror::Error;

/// Lattice site coordinate. Signed so the universe can straddle the origin.
pub type Site = i64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("illegal toppling at stable site {site}")]
    IllegalToppling { site: Site },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// A single stack instruction: move one particle, or try to fall asleep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    StepLeft,
    StepRight,
    Sleep,
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Instruction::StepLeft => write!(f, "L"),
            Instruction::StepRight => write!(f, "R"),
            Instruction::Sleep => write!(f, "S"),
        }
    }
}

/// Particle content of one site: a count of active particles plus a sleeper
/// flag. The flag is set only when the sleeper is the lone particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SiteState {
    active: u32,
    sleeper: bool,
}

impl SiteState {
    pub const EMPTY: SiteState = SiteState { active: 0, sleeper: false };

    pub fn with_active(n: u32) -> Self {
        SiteState { active: n, sleeper: false }
    }

    pub fn asleep() -> Self {
        SiteState { active: 0, sleeper: true }
    }

    #[inline]
    pub fn active_count(&self) -> u32 {
        self.active
    }

    #[inline]
    pub fn has_sleeper(&self) -> bool {
        self.sleeper
    }

    /// Total number of particles at the site; a sleeper counts as one.
    #[inline]
    pub fn occupancy(&self) -> u32 {
        self.active + self.sleeper as u32
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.active == 0 && !self.sleeper
    }
}

/// Finite-support particle configuration over the interval `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    lo: Site,
    hi: Site,
    states: Vec<SiteState>,
}

impl Configuration {
    pub fn empty(lo: Site, hi: Site) -> Self {
        assert!(lo <= hi, "universe [{lo}, {hi}] is empty");
        Configuration { lo, hi, states: vec![SiteState::EMPTY; (hi - lo + 1) as usize] }
    }

    /// Build from `(site, active particle count)` pairs; all particles active.
    pub fn from_counts<I>(lo: Site, hi: Site, counts: I) -> Self
    where
        I: IntoIterator<Item = (Site, u32)>,
    {
        let mut cfg = Configuration::empty(lo, hi);
        for (site, n) in counts {
            assert!(cfg.contains(site), "site {site} outside universe [{lo}, {hi}]");
            let st = cfg.state(site);
            cfg.set_state(site, SiteState::with_active(st.active + n));
        }
        cfg
    }

    #[inline]
    pub fn universe(&self) -> (Site, Site) {
        (self.lo, self.hi)
    }

    #[inline]
    pub fn contains(&self, site: Site) -> bool {
        site >= self.lo && site <= self.hi
    }

    #[inline]
    fn index(&self, site: Site) -> usize {
        (site - self.lo) as usize
    }

    /// State of a site; sites outside the universe are empty.
    #[inline]
    pub fn state(&self, site: Site) -> SiteState {
        if self.contains(site) {
            self.states[self.index(site)]
        } else {
            SiteState::EMPTY
        }
    }

    #[inline]
    pub fn set_state(&mut self, site: Site, st: SiteState) {
        assert!(self.contains(site));
        let idx = self.index(site);
        self.states[idx] = st;
    }

    #[inline]
    pub fn occupancy(&self, site: Site) -> u32 {
        self.state(site).occupancy()
    }

    pub fn total_particles(&self) -> u64 {
        self.states.iter().map(|s| s.occupancy() as u64).sum()
    }

    /// Iterate over occupied sites in increasing order.
    pub fn occupied_sites(&self) -> impl Iterator<Item = (Site, SiteState)> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(move |(i, s)| (self.lo + i as Site, *s))
    }

    /// Copy of this configuration with particles kept only on `[lo, hi]`;
    /// the universe interval is unchanged.
    pub fn restricted(&self, lo: Site, hi: Site) -> Configuration {
        let mut cfg = Configuration::empty(self.lo, self.hi);
        for (site, st) in self.occupied_sites() {
            if site >= lo && site <= hi {
                cfg.set_state(site, st);
            }
        }
        cfg
    }

    /// Same particle content transplanted into a new universe interval.
    /// Panics if a particle would fall outside the new universe.
    pub fn with_universe(&self, lo: Site, hi: Site) -> Configuration {
        let mut cfg = Configuration::empty(lo, hi);
        for (site, st) in self.occupied_sites() {
            cfg.set_state(site, st);
        }
        cfg
    }
}

/// Number of particles at `site`, counting a sleeper as one.
pub fn occupancy(config: &Configuration, site: Site) -> u32 {
    config.occupancy(site)
}

/// Apply one instruction at an unstable site (at least one active particle).
///
/// Steps move one particle to the neighbouring site, waking any sleeper
/// there; a step outside the universe deletes the particle. Sleep turns the
/// lone particle into a sleeper and is a consumed no-op when the site holds
/// two or more particles.
pub fn apply_instruction(
    config: &mut Configuration,
    site: Site,
    instr: Instruction,
) -> Result<(), ModelError> {
    let st = config.state(site);
    if st.active == 0 {
        return Err(ModelError::IllegalToppling { site });
    }
    match instr {
        Instruction::Sleep => {
            if st.occupancy() == 1 {
                config.set_state(site, SiteState::asleep());
            }
        }
        Instruction::StepLeft | Instruction::StepRight => {
            config.set_state(site, SiteState { active: st.active - 1, sleeper: st.sleeper });
            let dest = if instr == Instruction::StepLeft { site - 1 } else { site + 1 };
            if config.contains(dest) {
                let d = config.state(dest);
                // Arrival wakes a sleeper: occupancy adds up, flag clears.
                config.set_state(dest, SiteState::with_active(d.occupancy() + 1));
            }
        }
    }
    Ok(())
}

/// Model parameters: particle density, sleep rate and step bias.
///
/// `bias` is the probability that a non-sleep step goes left; 1/2 is the
/// symmetric walk, 0 the totally asymmetric (rightward) one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub lambda: f64,
    pub bias: f64,
}

impl ModelParams {
    pub fn new(mu: f64, lambda: f64, bias: f64) -> Result<Self, ModelError> {
        if !(mu >= 0.0) {
            return Err(ModelError::InvalidParams(format!("mu must be >= 0, got {mu}")));
        }
        if !(lambda > 0.0) {
            return Err(ModelError::InvalidParams(format!("lambda must be > 0, got {lambda}")));
        }
        if !(0.0..=1.0).contains(&bias) {
            return Err(ModelError::InvalidParams(format!("bias must be in [0, 1], got {bias}")));
        }
        Ok(ModelParams { mu, lambda, bias })
    }

    pub fn symmetric(mu: f64, lambda: f64) -> Result<Self, ModelError> {
        ModelParams::new(mu, lambda, 0.5)
    }
}

/// Per-site toppling counts over an interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Odometer {
    lo: Site,
    hi: Site,
    counts: Vec<u64>,
}

impl Odometer {
    pub fn zero(lo: Site, hi: Site) -> Self {
        assert!(lo <= hi);
        Odometer { lo, hi, counts: vec![0; (hi - lo + 1) as usize] }
    }

    #[inline]
    pub fn universe(&self) -> (Site, Site) {
        (self.lo, self.hi)
    }

    #[inline]
    pub fn get(&self, site: Site) -> u64 {
        if site >= self.lo && site <= self.hi {
            self.counts[(site - self.lo) as usize]
        } else {
            0
        }
    }

    #[inline]
    pub fn record(&mut self, site: Site) {
        debug_assert!(site >= self.lo && site <= self.hi);
        self.counts[(site - self.lo) as usize] += 1;
    }

    pub fn add(&mut self, other: &Odometer) {
        for (site, n) in other.support() {
            assert!(site >= self.lo && site <= self.hi);
            self.counts[(site - self.lo) as usize] += n;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sites with a nonzero count, in increasing order.
    pub fn support(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(move |(i, &n)| (self.lo + i as Site, n))
    }

    /// Pointwise `self(x) <= other(x)` over both supports.
    pub fn dominated_by(&self, other: &Odometer) -> bool {
        self.support().all(|(site, n)| n <= other.get(site))
    }
}
