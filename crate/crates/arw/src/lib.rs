//! Simulation engine for conservative particle dynamics on the integer line:
//! activated random walks with sleep, the stochastic sandpile, a labeled
//! renormalized variant, and the coupling between the two.

pub mod coupling;
pub mod engine;
pub mod experiments;
pub mod labeled;
pub mod model;
pub mod rng;
pub mod stacks;

pub use coupling::{coupled_stabilize, round_one, CoupledRun, CouplingError, RoundOne};
pub use engine::{stabilize, stabilize_rule, EarlyStop, EngineError, ToppleRule, TopplingPolicy};
pub use experiments::{
    activity_probe, bisect_mu_c, direct_round_stabilize, estimate_ar, fixation_proxy, run_rounds,
    ssm_mu_c, wilson, BisectResult, Decision, Estimate, InitialLaw, LawKind, RoundPlan,
};
pub use labeled::{
    init_labels, labeled_stabilize, left_count_function, single_site, Label, LabeledError,
    LabeledOutcome, LabeledSystem, LatticeRow, LatticeStats, SingleSiteOutcome,
};
pub use model::{
    apply_instruction, occupancy, Configuration, Instruction, ModelError, ModelParams, Odometer,
    Site, SiteState,
};
pub use stacks::{CursorSnapshot, StackError, StackStore, WalkPath};
