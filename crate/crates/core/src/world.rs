//! Balance sheets of banks, firms and the household in a closed monetary
//! system, with dated loan ledgers and an append-only event log.
//!
//! Every primitive that moves cash moves it between two agents, so the sum
//! of all cash holdings never changes. Equity of banks and firms is also
//! tracked incrementally; [`WorldState::check_equity_identity`] recomputes
//! it from the raw ledgers.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::centrality::LiabilityMatrix;
use crate::network::{self, NetworkError, RelationNetwork};
use crate::params::{ConfigError, SimParams};

/// Relative tolerance of the cash-conservation and equity checks.
pub const CONSERVATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InitError {
    #[error(transparent)]
    Params(#[from] ConfigError),
    #[error("relation network: {0}")]
    Network(#[from] NetworkError),
}

/// One dated ledger entry. Interbank loans carry the same `id` in the
/// lender's assets and the borrower's liabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loan {
    pub id: u64,
    pub counterparty: usize,
    pub principal: f64,
    pub issued: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankState {
    pub cash: f64,
    pub firm_loans: Vec<Loan>,
    pub ib_assets: Vec<Loan>,
    pub ib_liabilities: Vec<Loan>,
    pub household_deposits: f64,
    pub firm_deposits: f64,
    pub defaulted: bool,
    /// Incrementally maintained equity.
    pub equity: f64,
}

impl BankState {
    fn new(cash: f64) -> Self {
        Self {
            cash,
            firm_loans: Vec::new(),
            ib_assets: Vec::new(),
            ib_liabilities: Vec::new(),
            household_deposits: 0.0,
            firm_deposits: 0.0,
            defaulted: false,
            equity: cash,
        }
    }

    /// Balance-sheet identity evaluated from the raw fields.
    pub fn equity_from_ledgers(&self) -> f64 {
        self.cash + sum(&self.firm_loans) + sum(&self.ib_assets)
            - self.household_deposits
            - self.firm_deposits
            - sum(&self.ib_liabilities)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmState {
    pub cash: f64,
    /// Loans from the main bank; `counterparty` is the bank id.
    pub bank_loans: Vec<Loan>,
    pub deposits_at_bank: f64,
    pub main_bank: usize,
    pub return_mean: f64,
    pub defaulted: bool,
    pub equity: f64,
    /// Salaries and investment paid out at the firm's latest update; sets
    /// its weight in household consumption.
    pub last_investment: f64,
}

impl FirmState {
    pub fn equity_from_ledgers(&self) -> f64 {
        self.cash + self.deposits_at_bank - sum(&self.bank_loans)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdState {
    pub cash: f64,
    /// Deposits held at each bank.
    pub deposits: Vec<f64>,
    /// Cash set aside for consumption during the current step, allocated
    /// to firms when the step ends.
    pub spending: f64,
    /// Consumption spending committed to each firm and not yet collected.
    /// Still household cash until the firm collects it.
    pub consumption_due: Vec<f64>,
}

impl HouseholdState {
    pub fn total_cash(&self) -> f64 {
        self.cash + self.spending + self.consumption_due.iter().sum::<f64>()
    }
}

fn sum(ledger: &[Loan]) -> f64 {
    ledger.iter().map(|l| l.principal).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FirmLoanRequest,
    FirmLoanGranted,
    FirmLoanDenied,
    FirmRepayment,
    FirmDefault,
    FirmWriteOff,
    Consumption,
    Investment,
    HouseholdDeposit,
    HouseholdWithdrawal,
    /// Borrower asked a lender; `amount` is the lender's risk score used for
    /// the ordering (0 in normal mode).
    IbAsk,
    IbLoan,
    IbRepayment,
    IbWriteOff,
    BankDefault,
}

/// One audit record: `(timestep, kind, agent ids, amount)`.
///
/// Agent order: loans and repayments list (borrower, lender); asks list
/// (borrower, lender); write-offs list (creditor, debtor).
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: u32,
    pub kind: EventKind,
    pub agents: (usize, Option<usize>),
    pub amount: f64,
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Event", 4)?;
        st.serialize_field("t", &self.t)?;
        st.serialize_field("kind", &self.kind)?;
        match self.agents {
            (a, Some(b)) => st.serialize_field("agents", &[a, b])?,
            (a, None) => st.serialize_field("agents", &[a])?,
        }
        st.serialize_field("amount", &self.amount)?;
        st.end()
    }
}

/// Firm-credit and interbank aggregates of one timestep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub requested: f64,
    pub granted: f64,
    /// Principal of interbank loans issued this step.
    pub ib_issued: f64,
    /// Principal of interbank loans repaid this step.
    pub ib_repaid: f64,
}

/// Counterparty risk scores and ranks in force for the transparent modes.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskView {
    pub scores: Vec<f64>,
    pub ranks: Vec<usize>,
}

/// Independent random streams of one run. Economic draws (pair order,
/// loan requests, household choices) never share a stream with
/// counterparty shuffles, so runs that differ only in mode stay paired.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStreams {
    pub economy: ChaCha8Rng,
    pub counterparty: ChaCha8Rng,
    pub ties: ChaCha8Rng,
}

pub const STREAM_NETWORK: u64 = 0;
pub const STREAM_ECONOMY: u64 = 1;
pub const STREAM_COUNTERPARTY: u64 = 2;
pub const STREAM_TIES: u64 = 3;

/// Deterministic sub-seed of `seed` for one random stream.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    /// Timestep currently being (or next to be) executed; starts at 1.
    pub t: u32,
    pub banks: Vec<BankState>,
    pub firms: Vec<FirmState>,
    pub household: HouseholdState,
    pub relation: RelationNetwork,
    pub params: SimParams,
    pub seed: u64,
    pub network_seed: u64,
    pub rng: RngStreams,
    pub events: Vec<Event>,
    /// Index `t` holds the aggregates of timestep `t` (index 0 unused).
    pub stats: Vec<StepStats>,
    pub risk: Option<RiskView>,
    /// Bank equities at the start of the current timestep.
    pub capital_at_step_start: Vec<f64>,
    pub initial_cash: f64,
    /// When false, [`WorldState::log`] discards events (ensemble runs).
    pub log_events: bool,
    next_loan_id: u64,
}

/// Cash-conservation breach; never a modelled outcome.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("cash not conserved at t={t}: total {total} vs baseline {baseline}\n{dump}")]
pub struct ConservationError {
    pub t: u32,
    pub total: f64,
    pub baseline: f64,
    pub dump: String,
}

pub fn init_world(params: SimParams, seed: u64) -> Result<WorldState, InitError> {
    params.validate()?;
    let n = params.n_banks;
    let network_seed = sub_seed(seed, STREAM_NETWORK);
    let relation = network::generate(params.network_kind, n, network_seed)?;
    let banks = (0..n).map(|_| BankState::new(params.initial_bank_cash)).collect();
    let firms = (0..params.n_firms)
        .map(|i| FirmState {
            cash: params.initial_firm_cash,
            bank_loans: Vec::new(),
            deposits_at_bank: 0.0,
            main_bank: i % n,
            return_mean: params.return_mean_of(i),
            defaulted: false,
            equity: params.initial_firm_cash,
            // expected payout, so demand is spread evenly before any loan
            last_investment: params.invest_fraction * params.loan_request_max / 2.0,
        })
        .collect();
    let household = HouseholdState {
        cash: params.initial_household_cash,
        deposits: vec![0.0; n],
        spending: 0.0,
        consumption_due: vec![0.0; params.n_firms],
    };
    let capital_at_step_start = vec![params.initial_bank_cash; n];
    let initial_cash = n as f64 * params.initial_bank_cash
        + params.n_firms as f64 * params.initial_firm_cash
        + params.initial_household_cash;
    Ok(WorldState {
        t: 1,
        banks,
        firms,
        household,
        relation,
        params,
        seed,
        network_seed,
        rng: RngStreams {
            economy: stream(seed, STREAM_ECONOMY),
            counterparty: stream(seed, STREAM_COUNTERPARTY),
            ties: stream(seed, STREAM_TIES),
        },
        events: Vec::new(),
        stats: vec![StepStats::default(); 2],
        risk: None,
        capital_at_step_start,
        initial_cash,
        log_events: true,
        next_loan_id: 0,
    })
}

impl WorldState {
    pub fn n_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn total_cash(&self) -> f64 {
        self.banks.iter().map(|b| b.cash).sum::<f64>()
            + self.firms.iter().map(|f| f.cash).sum::<f64>()
            + self.household.total_cash()
    }

    /// Equity of bank `i` from its balance-sheet identity.
    pub fn bank_equity(&self, i: usize) -> f64 {
        self.banks[i].equity_from_ledgers()
    }

    /// Incrementally tracked equities of all banks.
    pub fn capital(&self) -> Vec<f64> {
        self.banks.iter().map(|b| b.equity).collect()
    }

    pub fn active_banks(&self) -> Vec<bool> {
        self.banks.iter().map(|b| !b.defaulted).collect()
    }

    pub fn any_bank_defaulted(&self) -> bool {
        self.banks.iter().any(|b| b.defaulted)
    }

    /// Gross liabilities: `L[i][j]` sums `i`'s liabilities toward `j`.
    pub fn liability_matrix(&self) -> LiabilityMatrix {
        let mut l = LiabilityMatrix::zeros(self.n_banks());
        for (i, b) in self.banks.iter().enumerate() {
            for loan in &b.ib_liabilities {
                l.add(i, loan.counterparty, loan.principal);
            }
        }
        l
    }

    /// Liability matrix rebuilt from the lenders' side.
    pub fn liability_matrix_from_assets(&self) -> LiabilityMatrix {
        let mut l = LiabilityMatrix::zeros(self.n_banks());
        for (j, b) in self.banks.iter().enumerate() {
            for loan in &b.ib_assets {
                l.add(loan.counterparty, j, loan.principal);
            }
        }
        l
    }

    pub fn stats_mut(&mut self) -> &mut StepStats {
        let t = self.t as usize;
        if self.stats.len() <= t {
            self.stats.resize(t + 1, StepStats::default());
        }
        &mut self.stats[t]
    }

    pub fn log(&mut self, kind: EventKind, a: usize, b: Option<usize>, amount: f64) {
        if !self.log_events {
            return;
        }
        self.events.push(Event {
            t: self.t,
            kind,
            agents: (a, b),
            amount,
        });
    }

    pub fn check_conservation(&self) -> Result<(), ConservationError> {
        let total = self.total_cash();
        let scale = self.initial_cash.abs().max(1.0);
        if (total - self.initial_cash).abs() / scale <= CONSERVATION_TOL {
            return Ok(());
        }
        Err(ConservationError {
            t: self.t,
            total,
            baseline: self.initial_cash,
            dump: self.dump(),
        })
    }

    /// Worst relative gap between tracked and recomputed equity over all
    /// banks and firms.
    pub fn equity_identity_error(&self) -> f64 {
        let rel = |tracked: f64, raw: f64| (tracked - raw).abs() / raw.abs().max(1.0);
        let banks = self
            .banks
            .iter()
            .map(|b| rel(b.equity, b.equity_from_ledgers()));
        let firms = self
            .firms
            .iter()
            .map(|f| rel(f.equity, f.equity_from_ledgers()));
        banks.chain(firms).fold(0.0, f64::max)
    }

    pub fn check_equity_identity(&self) -> bool {
        self.equity_identity_error() <= CONSERVATION_TOL
    }

    /// Interbank ledgers of active banks mirror each other entry by entry.
    pub fn ledgers_consistent(&self) -> bool {
        for (i, b) in self.banks.iter().enumerate() {
            if b.defaulted {
                continue;
            }
            for loan in &b.ib_liabilities {
                let lender = &self.banks[loan.counterparty];
                if lender.defaulted {
                    continue;
                }
                let mirrored = lender
                    .ib_assets
                    .iter()
                    .any(|a| a.id == loan.id && a.counterparty == i && a.principal == loan.principal && a.issued == loan.issued);
                if !mirrored {
                    return false;
                }
            }
            for loan in &b.ib_assets {
                let borrower = &self.banks[loan.counterparty];
                if !borrower.ib_liabilities.iter().any(|l| l.id == loan.id) {
                    return false;
                }
            }
        }
        true
    }

    fn dump(&self) -> String {
        let mut s = String::new();
        for (i, b) in self.banks.iter().enumerate() {
            s.push_str(&format!(
                "bank {i}: cash={} equity={} defaulted={}\n",
                b.cash, b.equity, b.defaulted
            ));
        }
        for (i, f) in self.firms.iter().enumerate() {
            s.push_str(&format!(
                "firm {i}: cash={} deposits={} equity={} defaulted={}\n",
                f.cash, f.deposits_at_bank, f.equity, f.defaulted
            ));
        }
        s.push_str(&format!(
            "household: cash={} spending={} due={}\n",
            self.household.cash,
            self.household.spending,
            self.household.consumption_due.iter().sum::<f64>()
        ));
        s
    }

    // ---- primitive operations -------------------------------------------

    fn new_loan_id(&mut self) -> u64 {
        self.next_loan_id += 1;
        self.next_loan_id
    }

    /// Pay out a firm loan from the firm's main bank.
    pub fn book_firm_loan(&mut self, firm: usize, amount: f64) {
        let bank = self.firms[firm].main_bank;
        let id = self.new_loan_id();
        let t = self.t;
        self.banks[bank].cash -= amount;
        self.banks[bank].firm_loans.push(Loan {
            id,
            counterparty: firm,
            principal: amount,
            issued: t,
        });
        let f = &mut self.firms[firm];
        f.cash += amount;
        f.bank_loans.push(Loan {
            id,
            counterparty: bank,
            principal: amount,
            issued: t,
        });
    }

    /// Interbank loan of `lender` to `borrower`, issued now.
    pub fn book_ib_loan(&mut self, lender: usize, borrower: usize, amount: f64) {
        let id = self.new_loan_id();
        let t = self.t;
        self.banks[lender].cash -= amount;
        self.banks[lender].ib_assets.push(Loan {
            id,
            counterparty: borrower,
            principal: amount,
            issued: t,
        });
        self.banks[borrower].cash += amount;
        self.banks[borrower].ib_liabilities.push(Loan {
            id,
            counterparty: lender,
            principal: amount,
            issued: t,
        });
        self.stats_mut().ib_issued += amount;
        self.log(EventKind::IbLoan, borrower, Some(lender), amount);
    }

    /// Settle one interbank liability of `borrower` in cash, with interest.
    /// The caller guarantees the borrower holds enough cash.
    pub fn settle_ib_loan(&mut self, borrower: usize, loan: Loan) {
        let interest = loan.principal * self.params.r_ib;
        let lender = loan.counterparty;
        let paid = loan.principal + interest;
        let b = &mut self.banks[borrower];
        b.ib_liabilities.retain(|l| l.id != loan.id);
        b.cash -= paid;
        b.equity -= interest;
        let l = &mut self.banks[lender];
        l.ib_assets.retain(|a| a.id != loan.id);
        l.cash += paid;
        l.equity += interest;
        self.stats_mut().ib_repaid += loan.principal;
        self.log(EventKind::IbRepayment, borrower, Some(lender), loan.principal);
    }

    /// Settle a firm loan with interest, paying from cash first and then
    /// from deposits at the main bank. Returns `false` (and changes
    /// nothing) when the firm cannot pay in full.
    pub fn settle_firm_loan(&mut self, firm: usize, loan: Loan) -> bool {
        let interest = loan.principal * self.params.r_floan;
        let due = loan.principal + interest;
        let f = &self.firms[firm];
        if f.cash + f.deposits_at_bank < due {
            return false;
        }
        let bank = loan.counterparty;
        let from_cash = f.cash.min(due);
        let from_deposits = due - from_cash;
        let f = &mut self.firms[firm];
        f.cash -= from_cash;
        f.deposits_at_bank -= from_deposits;
        f.bank_loans.retain(|l| l.id != loan.id);
        f.equity -= interest;
        let b = &mut self.banks[bank];
        b.cash += from_cash;
        b.firm_deposits -= from_deposits;
        b.firm_loans.retain(|l| l.id != loan.id);
        b.equity += interest;
        self.log(EventKind::FirmRepayment, firm, Some(bank), loan.principal);
        true
    }

    /// Mark a firm bankrupt; its bank writes off every outstanding loan.
    /// The firm's own books are frozen as they stand. Returns the loss.
    pub fn default_firm(&mut self, firm: usize) -> f64 {
        let bank = self.firms[firm].main_bank;
        self.firms[firm].defaulted = true;
        let b = &mut self.banks[bank];
        let mut loss = 0.0;
        b.firm_loans.retain(|l| {
            if l.counterparty == firm {
                loss += l.principal;
                false
            } else {
                true
            }
        });
        b.equity -= loss;
        // committed but uncollected spending stays with the household
        let due = std::mem::take(&mut self.household.consumption_due[firm]);
        self.household.cash += due;
        self.log(EventKind::FirmDefault, firm, Some(bank), 0.0);
        self.log(EventKind::FirmWriteOff, bank, Some(firm), loss);
        loss
    }

    /// `creditor` writes off everything `debtor` owes it, with no recovery.
    /// The debtor's (defaulted) books are left frozen.
    pub fn write_off_ib(&mut self, creditor: usize, debtor: usize) -> f64 {
        let c = &mut self.banks[creditor];
        let mut loss = 0.0;
        c.ib_assets.retain(|a| {
            if a.counterparty == debtor {
                loss += a.principal;
                false
            } else {
                true
            }
        });
        c.equity -= loss;
        if loss > 0.0 {
            self.log(EventKind::IbWriteOff, creditor, Some(debtor), loss);
        }
        loss
    }

    /// Credit deposit interest of bank `bank` to the household and to the
    /// firms whose deposits it holds.
    pub fn credit_deposit_interest(&mut self, bank: usize, firm: usize) {
        let hh = self.household.deposits[bank] * self.params.r_h;
        let fd = if self.firms[firm].defaulted {
            0.0
        } else {
            self.firms[firm].deposits_at_bank * self.params.r_fdeposit
        };
        self.household.deposits[bank] += hh;
        let f = &mut self.firms[firm];
        f.deposits_at_bank += fd;
        f.equity += fd;
        let b = &mut self.banks[bank];
        b.household_deposits += hh;
        b.firm_deposits += fd;
        b.equity -= hh + fd;
    }

    pub fn household_deposit(&mut self, bank: usize, amount: f64) {
        self.household.cash -= amount;
        self.household.deposits[bank] += amount;
        let b = &mut self.banks[bank];
        b.cash += amount;
        b.household_deposits += amount;
        self.log(EventKind::HouseholdDeposit, bank, None, amount);
    }

    /// Withdraw household deposits; the bank must hold the cash.
    pub fn household_withdraw(&mut self, bank: usize, amount: f64) {
        self.household.cash += amount;
        self.household.deposits[bank] -= amount;
        let b = &mut self.banks[bank];
        b.cash -= amount;
        b.household_deposits -= amount;
        self.log(EventKind::HouseholdWithdrawal, bank, None, amount);
    }

    /// Firm collects the consumption spending committed to it.
    pub fn collect_consumption(&mut self, firm: usize) -> f64 {
        let due = std::mem::take(&mut self.household.consumption_due[firm]);
        let f = &mut self.firms[firm];
        f.cash += due;
        f.equity += due;
        if due > 0.0 {
            self.log(EventKind::Consumption, firm, None, due);
        }
        due
    }

    /// Salaries and investments flow from the firm to the household.
    pub fn pay_household(&mut self, firm: usize, amount: f64) {
        let f = &mut self.firms[firm];
        f.cash -= amount;
        f.equity -= amount;
        f.last_investment = amount;
        self.household.cash += amount;
        self.log(EventKind::Investment, firm, None, amount);
    }

    /// Firm moves all its cash into its account at the main bank.
    pub fn deposit_firm_surplus(&mut self, firm: usize) {
        let f = &mut self.firms[firm];
        let amount = f.cash;
        if amount <= 0.0 {
            return;
        }
        f.cash = 0.0;
        f.deposits_at_bank += amount;
        let b = &mut self.banks[f.main_bank];
        b.cash += amount;
        b.firm_deposits += amount;
    }
}

impl fmt::Display for WorldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}
