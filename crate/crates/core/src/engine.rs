//! Timestep procedure: random sequential update of bank–firm pairs, the
//! interbank liquidity market under the three counterparty-ordering modes,
//! and default cascades.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::centrality::{
    debtrank_all_active, katz_scores, normalize_debtrank, rank_banks_active, CentralityError,
};
use crate::metrics::{self, CascadeReport, RunRecord, REFERENCE_STEP};
use crate::params::{Mode, RankMetric, SimParams};
use crate::world::{init_world, ConservationError, EventKind, InitError, Loan, RiskView, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModePolicy {
    pub mode: Mode,
    /// Ignored in normal mode.
    pub rank_metric: RankMetric,
}

impl ModePolicy {
    pub fn new(mode: Mode, rank_metric: RankMetric) -> Self {
        Self { mode, rank_metric }
    }

    pub fn of(params: &SimParams) -> Self {
        Self::new(params.mode, params.rank_metric)
    }

    fn ranked(&self) -> bool {
        self.mode != Mode::Normal
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Conservation(#[from] ConservationError),
    #[error("equity bookkeeping drifted by {error:e} (relative) at t={t}")]
    EquityDrift { t: u32, error: f64 },
    #[error("risk scoring failed: {0}")]
    Scoring(#[from] CentralityError),
}

/// Amounts below this are treated as zero when matching cash to needs.
const CASH_EPS: f64 = 1e-9;

/// Systemic-risk score of every active bank; defaulted banks score 0.
pub fn risk_scores(world: &WorldState, metric: RankMetric) -> Result<Vec<f64>, CentralityError> {
    let active = world.active_banks();
    let l = world.liability_matrix();
    match metric {
        RankMetric::DebtRank => debtrank_all_active(&l, &world.capital(), 1.0, &active),
        RankMetric::KatzRank => {
            let all_active = active.iter().all(|&a| a);
            let l = if all_active { l } else { l.restricted(&active) };
            let mut k = katz_scores(&l, 1.0)?.scores;
            for (s, &a) in k.iter_mut().zip(&active) {
                if !a {
                    *s = 0.0;
                }
            }
            Ok(k)
        }
    }
}

/// Recompute scores and ranks from the current balance sheets.
pub fn refresh_risk(world: &mut WorldState, metric: RankMetric) -> Result<(), CentralityError> {
    let scores = risk_scores(world, metric)?;
    let tie_seed = world.rng.ties.next_u64();
    let ranks = rank_banks_active(&scores, &world.active_banks(), tie_seed).0;
    world.risk = Some(RiskView { scores, ranks });
    Ok(())
}

fn ensure_risk(world: &mut WorldState, policy: ModePolicy) -> Result<(), CentralityError> {
    if world.risk.is_none() {
        refresh_risk(world, policy.rank_metric)?;
    }
    Ok(())
}

/// Sort `banks` so the least risky (largest rank number) comes first.
fn sort_least_risky_first(world: &WorldState, banks: &mut [usize]) {
    let ranks = &world.risk.as_ref().expect("risk view present").ranks;
    banks.sort_by(|&a, &b| ranks[b].cmp(&ranks[a]));
}

fn score_of(world: &WorldState, bank: usize) -> f64 {
    world.risk.as_ref().map_or(0.0, |r| r.scores[bank])
}

/// Non-defaulted neighbours of `i` in the order `i` will ask them.
///
/// Normal mode shuffles them with the counterparty stream. The ranked modes
/// use the current risk view: in transparent mode it is computed at the
/// start of the step, in fast mode it is dropped after every interbank
/// transaction and recomputed here on demand.
pub fn order_counterparties(
    world: &mut WorldState,
    i: usize,
    policy: ModePolicy,
) -> Result<Vec<usize>, CentralityError> {
    let mut banks: Vec<usize> = world
        .relation
        .neighbors(i)
        .iter()
        .copied()
        .filter(|&j| !world.banks[j].defaulted)
        .collect();
    if policy.ranked() {
        ensure_risk(world, policy)?;
        sort_least_risky_first(world, &mut banks);
    } else {
        banks.shuffle(&mut world.rng.counterparty);
    }
    Ok(banks)
}

/// Borrow up to `amount` from neighbours of `i`, each lending
/// `min(free cash, remaining need)`. Returns the total raised.
pub fn ib_funding_round(
    world: &mut WorldState,
    i: usize,
    amount: f64,
    policy: ModePolicy,
) -> Result<f64, CentralityError> {
    let mut queue = order_counterparties(world, i, policy)?;
    let mut remaining = amount;
    let mut raised = 0.0;
    let mut next = 0;
    while remaining > CASH_EPS && next < queue.len() {
        let j = queue[next];
        next += 1;
        let score = if policy.ranked() { score_of(world, j) } else { 0.0 };
        world.log(EventKind::IbAsk, i, Some(j), score);
        let lend = free_cash(world, j).min(remaining);
        if lend <= 0.0 {
            continue;
        }
        world.book_ib_loan(j, i, lend);
        remaining -= lend;
        raised += lend;
        if policy.mode == Mode::Fast {
            world.risk = None;
            if remaining > CASH_EPS && next < queue.len() {
                ensure_risk(world, policy)?;
                sort_least_risky_first(world, &mut queue[next..]);
            }
        }
    }
    Ok(raised)
}

/// Lenders offer their whole cash balance; there is no reserve rule.
fn free_cash(world: &WorldState, j: usize) -> f64 {
    world.banks[j].cash.max(0.0)
}

/// Firm loan of `request` from `bank`, all or nothing. Interbank funds
/// raised for a loan that is then refused stay with the bank.
pub fn request_firm_loan(
    world: &mut WorldState,
    firm: usize,
    request: f64,
    policy: ModePolicy,
) -> Result<f64, CentralityError> {
    let bank = world.firms[firm].main_bank;
    let short = request - world.banks[bank].cash;
    if short > 0.0 {
        ib_funding_round(world, bank, short, policy)?;
    }
    Ok(grant_if_covered(world, firm, request))
}

fn grant_if_covered(world: &mut WorldState, firm: usize, request: f64) -> f64 {
    let bank = world.firms[firm].main_bank;
    if request <= 0.0 {
        return 0.0;
    }
    if world.banks[bank].cash + CASH_EPS < request {
        world.log(EventKind::FirmLoanDenied, firm, Some(bank), request);
        return 0.0;
    }
    world.book_firm_loan(firm, request);
    world.stats_mut().granted += request;
    world.log(EventKind::FirmLoanGranted, firm, Some(bank), request);
    request
}

/// Default `initial` and propagate: every interbank creditor of a defaulted
/// bank writes off its full exposure, and creditors left with negative
/// equity default in turn, breadth first.
pub fn resolve_defaults(world: &mut WorldState, initial: usize) -> CascadeReport {
    let mut defaulted = vec![initial];
    world.banks[initial].defaulted = true;
    world.log(EventKind::BankDefault, initial, None, world.banks[initial].equity);
    let mut head = 0;
    while head < defaulted.len() {
        let d = defaulted[head];
        head += 1;
        let mut creditors: Vec<usize> = world.banks[d]
            .ib_liabilities
            .iter()
            .map(|l| l.counterparty)
            .collect();
        creditors.sort_unstable();
        creditors.dedup();
        for c in creditors {
            if world.banks[c].defaulted {
                continue;
            }
            world.write_off_ib(c, d);
            if world.banks[c].equity < 0.0 {
                world.banks[c].defaulted = true;
                world.log(EventKind::BankDefault, c, None, world.banks[c].equity);
                defaulted.push(c);
            }
        }
    }
    world.risk = None;
    CascadeReport {
        trigger_bank: initial,
        defaulted_banks: defaulted,
        t0: world.t,
        capital_before: world.capital_at_step_start.clone(),
        capital_after: world.capital(),
    }
}

/// Step-level draws shared by all pair updates of one timestep.
struct StepDraws {
    /// Demand shock `1 + ε` of every firm.
    shock: Vec<f64>,
}

fn draw_step(world: &mut WorldState) -> (Vec<usize>, StepDraws) {
    let p = &world.params;
    let sd = p.firm_return_sd * p.consumption_dispersion;
    let shock = world
        .firms
        .iter()
        .map(|firm| {
            // one draw per firm and step, defaulted or not, to keep streams aligned
            let eps = match Normal::new(firm.return_mean, sd) {
                Ok(d) => d.sample(&mut world.rng.economy),
                Err(_) => firm.return_mean,
            };
            (1.0 + eps).max(0.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..world.firms.len()).collect();
    order.shuffle(&mut world.rng.economy);
    (order, StepDraws { shock })
}

/// Steps (i)–(viii) for firm `f` and its main bank. Returns the bank that
/// defaulted, if any.
fn update_pair(
    world: &mut WorldState,
    f: usize,
    policy: ModePolicy,
) -> Result<Option<usize>, CentralityError> {
    let b = world.firms[f].main_bank;
    let t = world.t;
    let tau = world.params.tau;
    let matured = |l: &Loan| l.issued + tau == t;

    // (i) firm repays loans at maturity; the bank's own dues are settled in (vi)
    let mut firm_alive = !world.firms[f].defaulted;
    if firm_alive {
        let due: Vec<Loan> = world.firms[f].bank_loans.iter().copied().filter(matured).collect();
        for loan in due {
            if !world.settle_firm_loan(f, loan) {
                world.default_firm(f);
                firm_alive = false;
                break;
            }
        }
    }
    let ib_due: Vec<Loan> = world.banks[b].ib_liabilities.iter().copied().filter(matured).collect();

    // (ii) firm collects the spending committed to it
    if firm_alive {
        world.collect_consumption(f);
    }

    // (iii) deposit interest
    world.credit_deposit_interest(b, f);

    // (iv) loan request
    let request = if firm_alive && world.params.loan_request_max > 0.0 {
        world.rng.economy.random_range(0.0..world.params.loan_request_max)
    } else {
        0.0
    };
    if request > 0.0 {
        world.stats_mut().requested += request;
        world.log(EventKind::FirmLoanRequest, f, Some(b), request);
    }

    // (v) household withdraws its deposits at this bank; they are paid out
    // in (vi) and re-allocated afterwards
    let withdrawal = world.household.deposits[b];
    let target = pick_alive_bank(world);

    // (vi) liquidity management: one funding round covers interbank dues,
    // the withdrawal and the loan request
    let ib_owed: f64 = ib_due.iter().map(|l| l.principal * (1.0 + world.params.r_ib)).sum();
    let mandatory = ib_owed + withdrawal;
    let need = mandatory + request - world.banks[b].cash;
    if need > CASH_EPS {
        ib_funding_round(world, b, need, policy)?;
    }
    if world.banks[b].cash + CASH_EPS < mandatory {
        return Ok(Some(b));
    }
    for loan in ib_due {
        world.settle_ib_loan(b, loan);
    }
    if withdrawal > 0.0 {
        world.household_withdraw(b, withdrawal);
    }
    let granted = grant_if_covered(world, f, request);
    redistribute_household(world, target);

    // (vii) salaries and investment, surplus deposited
    if firm_alive {
        let paid = world.params.invest_fraction * granted;
        world.pay_household(f, paid);
        world.deposit_firm_surplus(f);
    }

    // (viii) default checks
    if firm_alive && world.firms[f].equity < world.params.firm_default_threshold {
        world.default_firm(f);
    }
    if world.banks[b].equity < 0.0 {
        return Ok(Some(b));
    }
    Ok(None)
}

fn pick_alive_bank(world: &mut WorldState) -> usize {
    let n = world.n_banks();
    // alive banks are all banks until the run-ending cascade
    let alive: Vec<usize> = (0..n).filter(|&j| !world.banks[j].defaulted).collect();
    alive[world.rng.economy.random_range(0..alive.len())]
}

/// Household splits its free cash: a fraction ρ is deposited at `target`,
/// the rest is set aside for this step's consumption.
fn redistribute_household(world: &mut WorldState, target: usize) {
    let pool = world.household.cash;
    if pool <= 0.0 {
        return;
    }
    let deposit = world.params.deposit_fraction * pool;
    world.household.cash = 0.0;
    world.household.spending += pool - deposit;
    world.household.cash += deposit;
    world.household_deposit(target, deposit);
}

/// Commit the step's consumption budget to firms: each firm is paid back
/// what it paid out this step times its demand shock, and the remaining
/// surplus or shortfall is spread evenly (never below zero per firm).
/// Collected at the next step.
fn allocate_consumption(world: &mut WorldState, draws: &StepDraws) {
    let alive: Vec<usize> = (0..world.firms.len()).filter(|&f| !world.firms[f].defaulted).collect();
    let budget = world.household.spending;
    if alive.is_empty() || budget <= 0.0 {
        return;
    }
    let base: Vec<f64> = alive
        .iter()
        .map(|&f| world.firms[f].last_investment * draws.shock[f])
        .collect();
    let shift = even_shift(&base, budget);
    let mut committed = 0.0;
    for (&f, b) in alive.iter().zip(&base) {
        let x = (b + shift).max(0.0);
        world.household.consumption_due[f] += x;
        committed += x;
    }
    world.household.spending = (budget - committed).max(0.0);
    // rounding residue stays with the household
    world.household.cash += budget - committed - world.household.spending;
}

/// The `δ` with `Σ max(0, base_i + δ) = budget`, for `budget > 0`.
pub fn even_shift(base: &[f64], budget: f64) -> f64 {
    let n = base.len() as f64;
    let total: f64 = base.iter().sum();
    if budget >= total {
        return (budget - total) / n;
    }
    let mut sorted = base.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut top = 0.0;
    for (k, &b) in sorted.iter().enumerate() {
        top += b;
        let shift = (budget - top) / (k + 1) as f64;
        let next = sorted.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if next + shift <= 0.0 {
            return shift;
        }
    }
    (budget - total) / n
}

/// Execute one timestep. Returns the cascade report when a bank defaulted,
/// in which case `t` stays at the cascade step; otherwise `t` advances.
pub fn run_timestep(world: &mut WorldState, policy: ModePolicy) -> Result<Option<CascadeReport>, EngineError> {
    debug_assert!(!world.any_bank_defaulted());
    world.capital_at_step_start = world.capital();
    world.stats_mut();
    world.risk = None;
    if policy.ranked() {
        refresh_risk(world, policy.rank_metric)?;
    }
    let (order, draws) = draw_step(world);
    let mut report = None;
    for f in order {
        if let Some(bank) = update_pair(world, f, policy)? {
            report = Some(resolve_defaults(world, bank));
            break;
        }
    }
    if report.is_none() {
        allocate_consumption(world, &draws);
    }
    world.check_conservation()?;
    let drift = world.equity_identity_error();
    if drift > crate::world::CONSERVATION_TOL {
        return Err(EngineError::EquityDrift { t: world.t, error: drift });
    }
    if report.is_none() {
        world.t += 1;
    }
    Ok(report)
}

/// Normalized DebtRank of every bank under the current balance sheets.
pub fn debtrank_profile(world: &WorldState) -> Result<Vec<f64>, CentralityError> {
    let scores = risk_scores(world, RankMetric::DebtRank)?;
    Ok(normalize_debtrank(&scores).0)
}

/// Run to the first bank-default cascade or `T_max`, returning the record
/// and the final world.
pub fn simulate(params: SimParams, seed: u64, log_events: bool) -> Result<(RunRecord, WorldState), EngineError> {
    let policy = ModePolicy::of(&params);
    let mut world = init_world(params, seed)?;
    world.log_events = log_events;
    let mut cascade = None;
    let mut profile = None;
    while world.t <= world.params.max_timesteps {
        let step = world.t;
        cascade = run_timestep(&mut world, policy)?;
        if cascade.is_some() {
            break;
        }
        if step == REFERENCE_STEP {
            profile = Some(debtrank_profile(&world)?);
        }
    }
    let completed = match &cascade {
        Some(c) => c.t0 - 1,
        None => world.t - 1,
    };
    let steps = &world.stats[1..];
    let requested: Vec<f64> = steps.iter().map(|s| s.requested).collect();
    let granted: Vec<f64> = steps.iter().map(|s| s.granted).collect();
    let volume = if completed >= REFERENCE_STEP {
        let t = REFERENCE_STEP as usize;
        let earlier = t.checked_sub(world.params.tau as usize).filter(|&e| e > 0);
        Some(world.stats[t].ib_issued + earlier.map_or(0.0, |e| world.stats[e].ib_issued))
    } else {
        None
    };
    let p = &world.params;
    let record = RunRecord {
        seed,
        mode: p.mode,
        rank_metric: p.rank_metric,
        network: p.network_kind,
        t_fd: cascade.as_ref().map(|c| c.t0),
        losses: cascade.as_ref().map_or(0.0, metrics::losses),
        cascade_size: cascade.as_ref().map_or(0, metrics::cascade_size),
        efficiency: metrics::efficiency(&requested, &granted),
        volume,
        debtrank_profile: profile,
        requested,
        granted,
        cascade,
    };
    Ok((record, world))
}

pub fn run_simulation(params: SimParams, seed: u64) -> Result<RunRecord, EngineError> {
    simulate(params, seed, false).map(|(r, _)| r)
}
