//! Labeled dynamics on the renormalized lattice.
//!
//! Particles carry a `(lattice origin, serial)` label and follow a dedicated
//! killed lazy walk between neighbouring lattice points `iK`. On reaching a
//! neighbouring lattice point a particle takes a fresh label there and a new
//! walk. Sleep and wake interactions are restricted to particles whose labels
//! share the first coordinate, which makes the per-lattice-point statistics
//! depend only on how many labels that point emitted.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::model::{Configuration, Instruction, Odometer, Site};
use crate::stacks::StackStore;

pub const DEFAULT_LABELED_GUARD: u64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabeledError {
    #[error("particle at site {site} is not on the renormalized lattice")]
    NotOnLattice { site: Site },
    #[error("no active particle to step")]
    NoActiveParticle,
    #[error("labeled stabilization exceeded the guard of {guard} instruction draws")]
    GuardExceeded { guard: u64 },
    #[error("bad geometry: {0}")]
    BadGeometry(String),
}

/// Particle label: lattice point of origin and a serial number, ordered
/// lexicographically. Serials at each lattice point are issued 1, 2, … and
/// never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub first: i64,
    pub second: u64,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.first, self.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleState {
    Active,
    Sleepy,
    /// Permanently stopped: reached the universe boundary (full runs) or the
    /// neighbouring lattice point (single-site runs).
    Inactive,
}

#[derive(Debug, Clone)]
pub struct LabeledParticle {
    pub position: Site,
    pub label: Label,
    /// 1-based index of the next unconsumed step of the walk attached to
    /// the current label.
    pub walk_cursor: u64,
    pub state: ParticleState,
    /// A freshly labeled particle waiting at its origin lattice point is
    /// dormant until the scheduler first reaches it: it neither blocks the
    /// sleep of same-origin particles nor wakes anyone. On its first
    /// scheduling it appears, waking same-origin sleepers at its site.
    /// This launch rule is what makes the per-lattice-point statistics an
    /// exact function of the label count there, independent of when labels
    /// were issued.
    pub launched: bool,
}

/// Per-lattice-point tallies of one labeled run.
///
/// `l_to` / `r_to` count particles from this point that reached the left /
/// right neighbouring lattice point; `l_net` / `r_net` additionally include
/// the sleepers that stopped on the corresponding side. Sleeper counts use
/// asymmetric brackets: `s_right` covers the open interval `(xK, (x+1)K)`
/// and `s_left` the half-open `((x-1)K, xK]`, so a sleeper at the lattice
/// point itself counts to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatticeRow {
    /// Labels issued at this point (serials used), including initial ones.
    pub issued: u64,
    /// Labels whose walk consumed at least one step.
    pub toppled: u64,
    pub l_to: u64,
    pub l_net: u64,
    pub r_net: u64,
    pub r_to: u64,
    pub s_right: u64,
    pub s_left: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatticeStats {
    rows: BTreeMap<i64, LatticeRow>,
}

impl LatticeStats {
    fn row_mut(&mut self, x: i64) -> &mut LatticeRow {
        self.rows.entry(x).or_default()
    }

    pub fn row(&self, x: i64) -> LatticeRow {
        self.rows.get(&x).copied().unwrap_or_default()
    }

    /// Renormalized odometer at `x`: labels used there.
    pub fn m(&self, x: i64) -> u64 {
        self.row(x).issued
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        self.rows.keys().copied()
    }

    /// Net crossings just right and just left of the lattice point `xK`.
    pub fn flux(&self, x: i64) -> (i64, i64) {
        let f_plus = self.row(x).r_net as i64 - self.row(x + 1).l_to as i64;
        let f_minus = self.row(x).l_net as i64 - self.row(x - 1).r_to as i64;
        (f_plus, f_minus)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,M,L_to,L_net,R_net,R_to,S_right,S_left,F_plus,F_minus\n");
        for (&x, row) in &self.rows {
            let (fp, fm) = self.flux(x);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                x, row.issued, row.l_to, row.l_net, row.r_net, row.r_to, row.s_right, row.s_left,
                fp, fm
            ));
        }
        out
    }
}

/// One consumed instruction, for mirroring into an unlabeled process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub site: Site,
    pub instruction: Instruction,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Relabel at interior lattice points; absorb at the universe boundary.
    Full,
    /// Single lattice point: absorb (without relabeling) at both neighbours.
    SingleSite,
}

#[derive(Debug, Clone)]
pub struct LabeledSystem {
    k: i64,
    lo: Site,
    hi: Site,
    mode: Mode,
    particles: Vec<LabeledParticle>,
    /// Particle indices at each site (`site - lo`), including inactive ones.
    site_particles: Vec<Vec<usize>>,
    fresh: BTreeMap<i64, u64>,
    heap: BinaryHeap<Reverse<(Label, usize)>>,
    pub odometer: Odometer,
    pub stats: LatticeStats,
    pub boundary_hit: bool,
    steps: u64,
}

/// Result of a full labeled stabilization.
#[derive(Debug, Clone)]
pub struct LabeledOutcome {
    pub odometer: Odometer,
    pub stats: LatticeStats,
    /// True iff no particle ever reached either end of the universe.
    pub a_r: bool,
    pub system: LabeledSystem,
}

/// Result of a single-lattice-point run with `m` particles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleSiteOutcome {
    pub l_to: u64,
    pub l_net: u64,
    pub r_net: u64,
    pub r_to: u64,
    /// Final sleeper positions, sorted.
    pub final_positions: Vec<Site>,
    pub odometer: Odometer,
}

impl LabeledSystem {
    /// Full-mode system from an active configuration supported on the
    /// lattice; the universe of `config` must have lattice-point endpoints.
    pub fn new_full(config: &Configuration, k: i64) -> Result<Self, LabeledError> {
        assert!(k >= 1, "k must be >= 1");
        let (lo, hi) = config.universe();
        if lo.rem_euclid(k) != 0 || hi.rem_euclid(k) != 0 {
            return Err(LabeledError::BadGeometry(format!(
                "universe endpoints {lo}, {hi} must be multiples of k = {k}"
            )));
        }
        let mut sys = LabeledSystem::bare(k, lo, hi, Mode::Full);
        for (site, st) in config.occupied_sites() {
            if site.rem_euclid(k) != 0 {
                return Err(LabeledError::NotOnLattice { site });
            }
            if st.has_sleeper() {
                return Err(LabeledError::BadGeometry(format!(
                    "initial configuration has a sleeper at {site}; all particles must be active"
                )));
            }
            let x = site.div_euclid(k);
            for _ in 0..st.active_count() {
                sys.spawn(x, site);
            }
        }
        Ok(sys)
    }

    /// Single-site system: `m` particles at `x * k`, universe
    /// `[(x-1)k, (x+1)k]` with absorbing endpoints.
    pub fn new_single_site(x: i64, m: u64, k: i64) -> Self {
        assert!(k >= 1, "k must be >= 1");
        let mut sys = LabeledSystem::bare(k, (x - 1) * k, (x + 1) * k, Mode::SingleSite);
        for _ in 0..m {
            sys.spawn(x, x * k);
        }
        sys
    }

    fn bare(k: i64, lo: Site, hi: Site, mode: Mode) -> Self {
        LabeledSystem {
            k,
            lo,
            hi,
            mode,
            particles: Vec::new(),
            site_particles: vec![Vec::new(); (hi - lo + 1) as usize],
            fresh: BTreeMap::new(),
            heap: BinaryHeap::new(),
            odometer: Odometer::zero(lo, hi),
            stats: LatticeStats::default(),
            boundary_hit: false,
            steps: 0,
        }
    }

    /// Issue the next label at `x` to a new dormant particle at `position`;
    /// it wakes same-origin sleepers when first scheduled.
    pub fn spawn(&mut self, x: i64, position: Site) -> Label {
        debug_assert_eq!(position, x * self.k);
        let label = self.issue(x);
        let idx = self.particles.len();
        self.particles.push(LabeledParticle {
            position,
            label,
            walk_cursor: 1,
            state: ParticleState::Active,
            launched: false,
        });
        self.site_particles[(position - self.lo) as usize].push(idx);
        self.heap.push(Reverse((label, idx)));
        label
    }

    fn issue(&mut self, x: i64) -> Label {
        let fresh = self.fresh.entry(x).or_insert(1);
        let label = Label { first: x, second: *fresh };
        *fresh += 1;
        self.stats.row_mut(x).issued += 1;
        label
    }

    pub fn particles(&self) -> &[LabeledParticle] {
        &self.particles
    }

    pub fn universe(&self) -> (Site, Site) {
        (self.lo, self.hi)
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn total_steps(&self) -> u64 {
        self.steps
    }

    /// Particles at `site` that have not gone permanently inactive.
    pub fn occupancy(&self, site: Site) -> u32 {
        self.count_at(site, |p| p.state != ParticleState::Inactive)
    }

    /// All particles at `site`, inactive ones included.
    pub fn occupancy_with_inactive(&self, site: Site) -> u32 {
        self.count_at(site, |_| true)
    }

    pub fn active_occupancy(&self, site: Site) -> u32 {
        self.count_at(site, |p| p.state == ParticleState::Active)
    }

    fn count_at(&self, site: Site, pred: impl Fn(&LabeledParticle) -> bool) -> u32 {
        if site < self.lo || site > self.hi {
            return 0;
        }
        self.site_particles[(site - self.lo) as usize]
            .iter()
            .filter(|&&i| pred(&self.particles[i]))
            .count() as u32
    }

    /// Sorted positions of sleepers whose label starts with `first`.
    pub fn sleepy_positions(&self, first: i64) -> Vec<Site> {
        let mut v: Vec<Site> = self
            .particles
            .iter()
            .filter(|p| p.state == ParticleState::Sleepy && p.label.first == first)
            .map(|p| p.position)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn has_active(&mut self) -> bool {
        while let Some(&Reverse((label, idx))) = self.heap.peek() {
            let p = &self.particles[idx];
            if p.state == ParticleState::Active && p.label == label {
                return true;
            }
            self.heap.pop();
        }
        false
    }

    fn wake_at(&mut self, site: Site, first: i64) {
        let slot = (site - self.lo) as usize;
        for i in 0..self.site_particles[slot].len() {
            let idx = self.site_particles[slot][i];
            let p = &mut self.particles[idx];
            if p.state == ParticleState::Sleepy && p.label.first == first {
                p.state = ParticleState::Active;
                self.heap.push(Reverse((p.label, idx)));
            }
        }
    }

    fn move_particle(&mut self, idx: usize, from: Site, to: Site) {
        let slot = (from - self.lo) as usize;
        let pos = self.site_particles[slot].iter().position(|&i| i == idx).unwrap();
        self.site_particles[slot].swap_remove(pos);
        self.site_particles[(to - self.lo) as usize].push(idx);
        self.particles[idx].position = to;
    }

    /// Topple the active particle with the smallest label: consume the next
    /// step of its walk and apply it.
    pub fn step(&mut self, stacks: &StackStore) -> Result<StepRecord, LabeledError> {
        let (label, idx) = loop {
            if !self.has_active() {
                return Err(LabeledError::NoActiveParticle);
            }
            let Reverse((label, idx)) = self.heap.pop().unwrap();
            if self.particles[idx].launched {
                break (label, idx);
            }
            // First scheduling: the particle appears, waking same-origin
            // sleepers at its site; any woken particle has a smaller label
            // and is toppled first.
            self.particles[idx].launched = true;
            let pos = self.particles[idx].position;
            self.wake_at(pos, label.first);
            self.heap.push(Reverse((label, idx)));
        };
        let site = self.particles[idx].position;
        let cursor = self.particles[idx].walk_cursor;
        let instr = stacks.walk_step(label.first, label.second, cursor);
        self.particles[idx].walk_cursor += 1;
        if cursor == 1 {
            self.stats.row_mut(label.first).toppled += 1;
        }
        self.odometer.record(site);
        self.steps += 1;

        match instr {
            Instruction::Sleep => {
                // Suppressed when another same-origin particle shares the
                // site; otherwise the particle falls asleep.
                let company = self.site_particles[(site - self.lo) as usize]
                    .iter()
                    .any(|&i| {
                        i != idx
                            && self.particles[i].launched
                            && self.particles[i].label.first == label.first
                            && self.particles[i].state != ParticleState::Inactive
                    });
                if company {
                    self.heap.push(Reverse((label, idx)));
                } else {
                    self.particles[idx].state = ParticleState::Sleepy;
                }
            }
            Instruction::StepLeft | Instruction::StepRight => {
                let dest = if instr == Instruction::StepLeft { site - 1 } else { site + 1 };
                self.move_particle(idx, site, dest);
                if dest == (label.first - 1) * self.k || dest == (label.first + 1) * self.k {
                    // End of this label's life at a neighbouring lattice point.
                    if dest < site {
                        self.stats.row_mut(label.first).l_to += 1;
                    } else {
                        self.stats.row_mut(label.first).r_to += 1;
                    }
                    match self.mode {
                        Mode::SingleSite => {
                            self.particles[idx].state = ParticleState::Inactive;
                        }
                        Mode::Full => {
                            let y = dest.div_euclid(self.k);
                            let new_label = self.issue(y);
                            self.particles[idx].label = new_label;
                            self.particles[idx].walk_cursor = 1;
                            // Dormant again under the fresh label; wakes
                            // same-origin sleepers on its next scheduling.
                            self.particles[idx].launched = false;
                            if dest == self.lo || dest == self.hi {
                                // Boundary absorption; the arrival is charged
                                // to the boundary odometer so a zero there
                                // means no particle ever arrived.
                                self.particles[idx].state = ParticleState::Inactive;
                                self.odometer.record(dest);
                                self.boundary_hit = true;
                            } else {
                                self.heap.push(Reverse((new_label, idx)));
                            }
                        }
                    }
                } else {
                    self.wake_at(dest, label.first);
                    self.heap.push(Reverse((label, idx)));
                }
            }
        }
        Ok(StepRecord { site, instruction: instr, label })
    }

    /// Run until no active particle remains, or until `stop_on_boundary`
    /// fires. Can be resumed after injecting more particles.
    pub fn stabilize(
        &mut self,
        stacks: &StackStore,
        guard: u64,
        stop_on_boundary: bool,
    ) -> Result<(), LabeledError> {
        while self.has_active() {
            if self.steps >= guard {
                return Err(LabeledError::GuardExceeded { guard });
            }
            self.step(stacks)?;
            if stop_on_boundary && self.boundary_hit {
                break;
            }
        }
        Ok(())
    }

    /// Fill in the sleeper-dependent tallies from the current sleepers.
    /// Idempotent; call after stabilization.
    pub fn finalize_stats(&mut self) {
        let sleepers: Vec<(i64, Site)> = self
            .particles
            .iter()
            .filter(|p| p.state == ParticleState::Sleepy)
            .map(|p| (p.label.first, p.position))
            .collect();
        for row in self.stats.rows.values_mut() {
            row.s_left = 0;
            row.s_right = 0;
        }
        for (x, pos) in sleepers {
            let row = self.stats.row_mut(x);
            if pos > x * self.k {
                row.s_right += 1;
            } else {
                row.s_left += 1;
            }
        }
        for row in self.stats.rows.values_mut() {
            row.l_net = row.l_to + row.s_left;
            row.r_net = row.r_to + row.s_right;
        }
    }
}

/// Label the particles of a lattice-supported configuration.
pub fn init_labels(config: &Configuration, k: i64) -> Result<LabeledSystem, LabeledError> {
    LabeledSystem::new_full(config, k)
}

/// Stabilize `eta_hat` (supported on the lattice within `[-r, r]`) in the
/// universe `[-2r, 2r]`.
pub fn labeled_stabilize(
    eta_hat: &Configuration,
    r: i64,
    k: i64,
    stacks: &StackStore,
    guard: u64,
) -> Result<LabeledOutcome, LabeledError> {
    if k < 1 || (2 * r).rem_euclid(k) != 0 {
        return Err(LabeledError::BadGeometry(format!("k = {k} must divide 2r = {}", 2 * r)));
    }
    for (site, _) in eta_hat.occupied_sites() {
        if site.abs() > r {
            return Err(LabeledError::BadGeometry(format!(
                "particle at {site} outside the seeding interval [-{r}, {r}]"
            )));
        }
    }
    let mut sys = LabeledSystem::new_full(&eta_hat.with_universe(-2 * r, 2 * r), k)?;
    sys.stabilize(stacks, guard, false)?;
    sys.finalize_stats();
    let a_r = !sys.boundary_hit;
    Ok(LabeledOutcome { odometer: sys.odometer.clone(), stats: sys.stats.clone(), a_r, system: sys })
}

/// Run `m` particles from the lattice point `x` alone in
/// `((x-1)K, (x+1)K)`, absorbing at the neighbouring lattice points.
pub fn single_site(
    x: i64,
    m: u64,
    k: i64,
    stacks: &StackStore,
    guard: u64,
) -> Result<SingleSiteOutcome, LabeledError> {
    let mut sys = LabeledSystem::new_single_site(x, m, k);
    sys.stabilize(stacks, guard, false)?;
    sys.finalize_stats();
    let row = sys.stats.row(x);
    Ok(SingleSiteOutcome {
        l_to: row.l_to,
        l_net: row.l_net,
        r_net: row.r_net,
        r_to: row.r_to,
        final_positions: sys.sleepy_positions(x),
        odometer: sys.odometer,
    })
}

/// Left-neighbour arrival counts as a function of the particle count:
/// element `j` is the number of particles that reached `(x-1)K` when `j`
/// particles are started at `xK`. Computed incrementally, adding one
/// particle at a time and re-stabilizing.
pub fn left_count_function(
    x: i64,
    k: i64,
    stacks: &StackStore,
    up_to: u64,
    guard: u64,
) -> Result<Vec<u64>, LabeledError> {
    let mut sys = LabeledSystem::new_single_site(x, 0, k);
    let mut out = Vec::with_capacity(up_to as usize + 1);
    out.push(0);
    for _ in 0..up_to {
        sys.spawn(x, x * k);
        sys.stabilize(stacks, guard, false)?;
        out.push(sys.stats.row(x).l_to);
    }
    Ok(out)
}
