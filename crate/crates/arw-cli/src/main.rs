mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arw::coupling::coupled_stabilize;
use arw::experiments::{
    ar_csv, bisect_csv, bisect_mu_c, estimate_ar, fixation_csv, fixation_proxy, rounds_csv,
    run_rounds, Decision, InitialLaw, LawKind, RoundPlan, SSM_LAMBDA,
};
use arw::rng::derive_seed;
use arw::{stabilize_rule, StackStore, ToppleRule, TopplingPolicy};

use config::{parse_config, Settings};

/// Conservative particle dynamics on the line: stabilization runs and
/// Monte Carlo experiments with reproducible seeding.
#[derive(Parser)]
#[command(name = "arw", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stabilize one sampled configuration and dump the odometer.
    Stabilize(RunArgs),
    /// Sequential nested-round origin-odometer experiment.
    Rounds(RunArgs),
    /// Boundary-avoidance probability versus interval size.
    ArDecay(RunArgs),
    /// Fixation proxy: P(origin odometer >= T) for growing intervals.
    Fixation(RunArgs),
    /// Bisect the critical density for the activated-walk rule.
    Bisect(RunArgs),
    /// Bisect the critical density for the two-emission rule.
    SsmBisect(RunArgs),
    /// Run the labeled/unlabeled coupling and verify odometer domination.
    CoupleCheck(RunArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Stabilize(_) => "stabilize",
            Cmd::Rounds(_) => "rounds",
            Cmd::ArDecay(_) => "ar-decay",
            Cmd::Fixation(_) => "fixation",
            Cmd::Bisect(_) => "bisect",
            Cmd::SsmBisect(_) => "ssm-bisect",
            Cmd::CoupleCheck(_) => "couple-check",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Cmd::Stabilize(a)
            | Cmd::Rounds(a)
            | Cmd::ArDecay(a)
            | Cmd::Fixation(a)
            | Cmd::Bisect(a)
            | Cmd::SsmBisect(a)
            | Cmd::CoupleCheck(a) => a,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Optional config file (`key = value` lines); flags override it.
    config: Option<PathBuf>,
    /// Master seed; required so runs are reproducible by construction.
    #[arg(long)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Leftward step probability.
    #[arg(long)]
    bias: Option<f64>,
    /// Initial law: poisson or bernoulli.
    #[arg(long)]
    law: Option<String>,
    #[arg(long)]
    m: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    m_list: Option<Vec<i64>>,
    #[arg(long)]
    r: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    r_list: Option<Vec<i64>>,
    #[arg(long)]
    k: Option<i64>,
    #[arg(long)]
    ell_max: Option<u32>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    t: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<u64>>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    base_samples: Option<u64>,
    #[arg(long)]
    sample_cap: Option<u64>,
    #[arg(long)]
    guard: Option<u64>,
    #[arg(long)]
    bracket_lo: Option<f64>,
    #[arg(long)]
    bracket_hi: Option<f64>,
}

impl RunArgs {
    /// Resolve defaults <- file <- flags; remember whether the bracket was
    /// chosen explicitly (the two bisection rules default differently).
    fn resolve(&self, experiment: &str) -> Result<(Settings, bool), String> {
        let mut settings = Settings::default();
        let mut bracket_explicit = false;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let file = parse_config(&text).map_err(|e| format!("config: {e}"))?;
            if let Some(name) = &file.experiment {
                if name != experiment {
                    return Err(format!(
                        "config: experiment: file says {name:?} but the subcommand is {experiment:?}"
                    ));
                }
            }
            bracket_explicit |= file.bracket_lo.is_some() || file.bracket_hi.is_some();
            settings.apply_file(&file);
        }
        macro_rules! take {
            ($f:ident) => {
                if let Some(v) = &self.$f {
                    settings.$f = v.clone();
                }
            };
        }
        take!(mu);
        take!(lambda);
        take!(bias);
        take!(law);
        take!(m);
        take!(m_list);
        take!(r);
        take!(r_list);
        take!(k);
        take!(ell_max);
        take!(samples);
        take!(t);
        take!(t_list);
        take!(tol);
        take!(base_samples);
        take!(sample_cap);
        take!(guard);
        take!(bracket_lo);
        take!(bracket_hi);
        bracket_explicit |= self.bracket_lo.is_some() || self.bracket_hi.is_some();
        let needs_lattice = matches!(experiment, "ar-decay" | "couple-check");
        settings.validate(needs_lattice).map_err(|e| format!("config: {e}"))?;
        Ok((settings, bracket_explicit))
    }
}

struct Outcome {
    csv: String,
    summary: String,
    /// (exit code, machine-readable reason) when the run must not exit 0.
    failure: Option<(u8, String)>,
}

fn law_of(settings: &Settings) -> InitialLaw {
    law_kind(settings).with_mean(settings.mu)
}

fn law_kind(settings: &Settings) -> LawKind {
    match settings.law.as_str() {
        "bernoulli" => LawKind::Bernoulli,
        _ => LawKind::Poisson,
    }
}

fn guard_failure(total: u64) -> Option<(u8, String)> {
    (total > 0).then(|| (3, format!("reason=guard-saturation failures={total}")))
}

fn run_stabilize(s: &Settings, seed: u64) -> Result<Outcome, String> {
    let mut store = StackStore::new(seed, s.lambda, s.bias);
    let eta = law_of(s).sample(-s.m, s.m, derive_seed(seed, 1));
    let out = stabilize_rule(
        &eta,
        &mut store,
        ToppleRule::Arw,
        TopplingPolicy::LeftmostUnstable,
        s.guard,
        None,
    );
    match out {
        Ok(out) => {
            let mut csv = String::from("site,topplings,active,sleeper\n");
            for site in -s.m..=s.m {
                let st = out.config.state(site);
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    site,
                    out.odometer.get(site),
                    st.active_count(),
                    st.has_sleeper() as u8
                ));
            }
            let summary = format!(
                "stabilize m={} topplings={} origin={}",
                s.m,
                out.topplings,
                out.odometer.get(0)
            );
            Ok(Outcome { csv, summary, failure: None })
        }
        Err(e) => Ok(Outcome {
            csv: String::new(),
            summary: format!("stabilize m={} failed: {e}", s.m),
            failure: Some((3, "reason=guard-saturation failures=1".to_string())),
        }),
    }
}

fn run_rounds_cmd(s: &Settings, seed: u64) -> Result<Outcome, String> {
    let plan = RoundPlan::new(s.ell_max);
    let (_, vhi) = RoundPlan::v(s.ell_max);
    let eta = law_of(s).sample(0, vhi, derive_seed(seed, 1));
    let mut store = StackStore::new(seed, s.lambda, s.bias);
    match run_rounds(&eta, plan, &mut store, s.guard) {
        Ok(w) => {
            let total: u64 = w.iter().sum();
            let summary = format!("rounds ell_max={} w={:?} total={}", s.ell_max, w, total);
            Ok(Outcome { csv: rounds_csv(&w), summary, failure: None })
        }
        Err(e) => Ok(Outcome {
            csv: String::new(),
            summary: format!("rounds failed: {e}"),
            failure: Some((3, "reason=guard-saturation failures=1".to_string())),
        }),
    }
}

fn run_ar_decay(s: &Settings, seed: u64) -> Result<Outcome, String> {
    let rows = estimate_ar(&law_of(s), s.lambda, s.k, &s.r_list, s.samples, seed, s.guard);
    let guard_total: u64 = rows.iter().map(|r| r.guard_failures).sum();
    let last = rows.last().ok_or("ar-decay: empty r_list")?;
    let summary = format!(
        "ar-decay r={} p_hat={:.6} ci=[{:.6},{:.6}] cond={:.6} unlabeled={:.6}",
        last.r,
        last.estimate.value,
        last.estimate.ci_lo,
        last.estimate.ci_hi,
        last.conditional.value,
        last.unlabeled.value
    );
    Ok(Outcome { csv: ar_csv(&rows), summary, failure: guard_failure(guard_total) })
}

fn run_fixation(s: &Settings, seed: u64) -> Result<Outcome, String> {
    let rows = fixation_proxy(
        ToppleRule::Arw,
        &law_of(s),
        s.lambda,
        s.bias,
        &s.m_list,
        &s.t_list,
        s.samples,
        seed,
        s.guard,
    );
    let guard_total: u64 = rows.iter().map(|r| r.guard_failures).sum();
    let last = rows.last().ok_or("fixation: empty m_list/t_list")?;
    let summary = format!(
        "fixation M={} T={} p_hat={:.6} ci=[{:.6},{:.6}]",
        last.m, last.t, last.estimate.value, last.estimate.ci_lo, last.estimate.ci_hi
    );
    Ok(Outcome { csv: fixation_csv(&rows), summary, failure: guard_failure(guard_total) })
}

fn run_bisect(s: &Settings, seed: u64, rule: ToppleRule, lambda: f64, bracket: (f64, f64)) -> Outcome {
    let res = bisect_mu_c(
        rule,
        law_kind(s),
        lambda,
        s.bias,
        s.m,
        s.t,
        s.base_samples,
        s.sample_cap,
        s.tol,
        seed,
        s.guard,
        bracket,
    );
    let guard_total: u64 = res.probes.iter().map(|p| p.guard_failures).sum();
    let summary = format!(
        "bisect mu_lo={:.6} mu_hi={:.6} probes={} conclusive={}",
        res.lo,
        res.hi,
        res.probes.len(),
        res.conclusive
    );
    let failure = if !res.conclusive {
        let inconclusive = res
            .probes
            .iter()
            .find(|p| p.decision == Decision::Inconclusive)
            .map(|p| p.mu)
            .unwrap_or(f64::NAN);
        Some((2, format!("reason=inconclusive mu={inconclusive:.6} lo={:.6} hi={:.6}", res.lo, res.hi)))
    } else {
        guard_failure(guard_total)
    };
    Outcome { csv: bisect_csv(&res), summary, failure }
}

fn run_couple_check(s: &Settings, seed: u64) -> Outcome {
    let mut csv = String::from("sample,domination,tilde_count,a_r\n");
    let mut all_hold = true;
    let mut guard_total = 0u64;
    for i in 0..s.samples {
        let sseed = derive_seed(seed, i);
        let eta = law_of(s).sample(-s.r, s.r, derive_seed(sseed, 0));
        let mut store = StackStore::new(sseed, s.lambda, s.bias);
        match coupled_stabilize(&eta, s.r, s.k, &mut store, s.guard, true) {
            Ok(run) => {
                let holds = run.domination_holds();
                all_hold &= holds;
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    i, holds as u8, run.tilde_count, run.a_r as u8
                ));
            }
            Err(e) => {
                guard_total += 1;
                all_hold = false;
                csv.push_str(&format!("{i},error,{e},\n"));
            }
        }
    }
    let summary = format!(
        "couple-check samples={} r={} k={} domination={}",
        s.samples,
        s.r,
        s.k,
        if all_hold { "held" } else { "violated" }
    );
    let failure = if guard_total > 0 {
        guard_failure(guard_total)
    } else if !all_hold {
        Some((1, "reason=domination-violated".to_string()))
    } else {
        None
    };
    Outcome { csv, summary, failure }
}

fn run(cmd: &Cmd) -> Result<Outcome, String> {
    let args = cmd.args();
    let (settings, bracket_explicit) = args.resolve(cmd.name())?;
    if let Some(n) = args.threads {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = args.seed;
    match cmd {
        Cmd::Stabilize(_) => run_stabilize(&settings, seed),
        Cmd::Rounds(_) => run_rounds_cmd(&settings, seed),
        Cmd::ArDecay(_) => run_ar_decay(&settings, seed),
        Cmd::Fixation(_) => run_fixation(&settings, seed),
        Cmd::Bisect(_) => Ok(run_bisect(
            &settings,
            seed,
            ToppleRule::Arw,
            settings.lambda,
            (settings.bracket_lo, settings.bracket_hi),
        )),
        Cmd::SsmBisect(_) => {
            let bracket = if bracket_explicit {
                (settings.bracket_lo, settings.bracket_hi)
            } else {
                (0.6, 1.4)
            };
            Ok(run_bisect(&settings, seed, ToppleRule::Ssm, SSM_LAMBDA, bracket))
        }
        Cmd::CoupleCheck(_) => Ok(run_couple_check(&settings, seed)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match run(&cli.cmd) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    println!("{}", outcome.summary);
    if let Some(path) = &cli.cmd.args().out {
        if let Err(e) = std::fs::write(path, &outcome.csv) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
    } else if !outcome.csv.is_empty() {
        print!("{}", outcome.csv);
    }
    if let Some((code, reason)) = outcome.failure {
        println!("{reason}");
        return ExitCode::from(code);
    }
    ExitCode::SUCCESS
}
