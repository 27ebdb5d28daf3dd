//! Simulation parameters and the flat key-value config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counterparty-selection regime for the interbank market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Normal,
    Transparent,
    Fast,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Transparent => "transparent",
            Mode::Fast => "fast",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Mode::Normal),
            "transparent" => Ok(Mode::Transparent),
            "fast" => Ok(Mode::Fast),
            other => Err(format!("unknown mode `{other}` (expected normal|transparent|fast)")),
        }
    }
}

/// Which systemic-risk score orders counterparties in the transparent modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RankMetric {
    #[serde(rename = "debtrank")]
    DebtRank,
    #[serde(rename = "katz")]
    KatzRank,
}

impl RankMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMetric::DebtRank => "debtrank",
            RankMetric::KatzRank => "katz",
        }
    }
}

impl FromStr for RankMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "debtrank" | "debt" => Ok(RankMetric::DebtRank),
            "katz" | "katzrank" => Ok(RankMetric::KatzRank),
            other => Err(format!("unknown rank metric `{other}` (expected debtrank|katz)")),
        }
    }
}

/// Topology of the interbank relation network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NetworkKind {
    Complete,
    /// Erdős–Rényi with independent edge probability.
    Er(f64),
    /// Barabási–Albert with `m` edges per arriving node.
    Ba(usize),
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkKind::Complete => f.write_str("complete"),
            NetworkKind::Er(p) => write!(f, "er:{p}"),
            NetworkKind::Ba(m) => write!(f, "ba:{m}"),
        }
    }
}

impl FromStr for NetworkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "complete" {
            return Ok(NetworkKind::Complete);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("unknown network `{s}` (expected complete|er:<p>|ba:<m>)"))?;
        match kind {
            "er" => arg
                .parse::<f64>()
                .map(NetworkKind::Er)
                .map_err(|_| format!("bad ER edge probability `{arg}`")),
            "ba" => arg
                .parse::<usize>()
                .map(NetworkKind::Ba)
                .map_err(|_| format!("bad BA attachment count `{arg}`")),
            _ => Err(format!("unknown network kind `{kind}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n_banks: usize,
    pub n_firms: usize,
    pub max_timesteps: u32,
    /// Loan maturity in timesteps, for both firm and interbank loans.
    pub tau: u32,
    /// Interbank interest per loan term.
    pub r_ib: f64,
    /// Firm-loan interest per loan term.
    pub r_floan: f64,
    /// Household deposit interest per timestep.
    pub r_h: f64,
    /// Firm deposit interest per timestep.
    pub r_fdeposit: f64,
    pub loan_request_max: f64,
    pub invest_fraction: f64,
    pub deposit_fraction: f64,
    pub consumption_dispersion: f64,
    pub firm_return_mean: f64,
    pub firm_return_sd: f64,
    /// Per-firm overrides of `firm_return_mean`; empty means homogeneous firms.
    pub firm_return_means: Vec<f64>,
    pub firm_default_threshold: f64,
    pub initial_bank_cash: f64,
    pub initial_firm_cash: f64,
    pub initial_household_cash: f64,
    pub mode: Mode,
    pub rank_metric: RankMetric,
    pub network_kind: NetworkKind,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_banks: 100,
            n_firms: 100,
            max_timesteps: 500,
            tau: 10,
            r_ib: 0.01,
            r_floan: 0.02,
            r_h: 0.002,
            r_fdeposit: 0.0017,
            loan_request_max: 20.0,
            invest_fraction: 0.8,
            deposit_fraction: 0.5,
            consumption_dispersion: 0.08,
            firm_return_mean: 0.0,
            firm_return_sd: 0.5,
            firm_return_means: Vec::new(),
            firm_default_threshold: -10.0,
            initial_bank_cash: 14.0,
            initial_firm_cash: 10.0,
            initial_household_cash: 1200.0,
            mode: Mode::Normal,
            rank_metric: RankMetric::DebtRank,
            network_kind: NetworkKind::Complete,
        }
    }
}

/// One offending config field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not a valid key-value document: {0}")]
    Syntax(String),
    #[error("invalid parameters:\n{}", list(.0))]
    Invalid(Vec<FieldError>),
}

fn list(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConfigError {
    /// Names of every offending field, in document order.
    pub fn fields(&self) -> Vec<&str> {
        match self {
            ConfigError::Syntax(_) => Vec::new(),
            ConfigError::Invalid(errs) => errs.iter().map(|e| e.field.as_str()).collect(),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "n_banks",
    "n_firms",
    "max_timesteps",
    "tau",
    "r_ib",
    "r_floan",
    "r_h",
    "r_fdeposit",
    "loan_request_max",
    "invest_fraction",
    "deposit_fraction",
    "consumption_dispersion",
    "firm_return_mean",
    "firm_return_sd",
    "firm_return_means",
    "firm_default_threshold",
    "initial_bank_cash",
    "initial_firm_cash",
    "initial_household_cash",
    "mode",
    "rank_metric",
    "network_kind",
];

impl SimParams {
    /// Desk-scale profile used by the ensemble defaults.
    pub fn desk_scale() -> Self {
        Self {
            n_banks: 50,
            n_firms: 50,
            // household stock scales with the number of firms it buys from
            initial_household_cash: 600.0,
            ..Self::default()
        }
    }

    /// Return mean of firm `i`, honouring per-firm overrides.
    pub fn return_mean_of(&self, firm: usize) -> f64 {
        self.firm_return_means
            .get(firm)
            .copied()
            .unwrap_or(self.firm_return_mean)
    }

    /// Check every invariant and report all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        if self.n_banks < 2 {
            bad("n_banks", format!("must be at least 2, got {}", self.n_banks));
        }
        if self.n_firms != self.n_banks {
            bad(
                "n_firms",
                format!("must equal n_banks ({}), got {}", self.n_banks, self.n_firms),
            );
        }
        if self.tau < 1 {
            bad("tau", "must be at least 1".into());
        }
        if !(self.r_ib > 0.0) {
            bad("r_ib", format!("must be positive, got {}", self.r_ib));
        }
        if !(self.r_floan > self.r_ib) {
            bad(
                "r_floan",
                format!("must exceed r_ib ({}), got {}", self.r_ib, self.r_floan),
            );
        }
        for (name, v) in [("r_h", self.r_h), ("r_fdeposit", self.r_fdeposit)] {
            if !(v >= 0.0) {
                bad(name, format!("must be nonnegative, got {v}"));
            }
        }
        if !(self.loan_request_max >= 0.0) || !self.loan_request_max.is_finite() {
            bad(
                "loan_request_max",
                format!("must be finite and nonnegative, got {}", self.loan_request_max),
            );
        }
        for (name, v) in [
            ("invest_fraction", self.invest_fraction),
            ("deposit_fraction", self.deposit_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bad(name, format!("must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("consumption_dispersion", self.consumption_dispersion),
            ("firm_return_sd", self.firm_return_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bad(name, format!("must be finite and nonnegative, got {v}"));
            }
        }
        if !self.firm_return_mean.is_finite() {
            bad("firm_return_mean", "must be finite".into());
        }
        if !self.firm_return_means.is_empty() && self.firm_return_means.len() != self.n_firms {
            bad(
                "firm_return_means",
                format!(
                    "must list one value per firm ({}), got {}",
                    self.n_firms,
                    self.firm_return_means.len()
                ),
            );
        }
        if !(self.firm_default_threshold < 0.0) {
            bad(
                "firm_default_threshold",
                format!("must be negative, got {}", self.firm_default_threshold),
            );
        }
        for (name, v) in [
            ("initial_bank_cash", self.initial_bank_cash),
            ("initial_firm_cash", self.initial_firm_cash),
            ("initial_household_cash", self.initial_household_cash),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bad(name, format!("must be finite and nonnegative, got {v}"));
            }
        }
        match self.network_kind {
            NetworkKind::Er(p) if !(0.0..=1.0).contains(&p) => {
                bad("network_kind", format!("ER probability must lie in [0, 1], got {p}"))
            }
            NetworkKind::Ba(m) if m < 1 || m >= self.n_banks => bad(
                "network_kind",
                format!("BA attachment count must satisfy 1 <= m < n_banks, got {m}"),
            ),
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Parse a flat key-value document. Missing keys keep their defaults;
    /// unknown keys and bad values are all reported together.
    pub fn from_config_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_config_str_over(text, SimParams::default())
    }

    /// Like [`SimParams::from_config_str`], with missing keys taken from `base`.
    pub fn from_config_str_over(text: &str, base: SimParams) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut p = base;
        let mut errs = Vec::new();
        for (key, value) in &table {
            if let Err(message) = p.set(key, value) {
                errs.push(FieldError {
                    field: key.clone(),
                    message,
                });
            }
        }
        if let Err(ConfigError::Invalid(more)) = p.validate() {
            for e in more {
                if !errs.iter().any(|x| x.field == e.field) {
                    errs.push(e);
                }
            }
        }
        if errs.is_empty() {
            Ok(p)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn set(&mut self, key: &str, value: &toml::Value) -> Result<(), String> {
        fn num(v: &toml::Value) -> Result<f64, String> {
            match v {
                toml::Value::Float(x) => Ok(*x),
                toml::Value::Integer(i) => Ok(*i as f64),
                other => Err(format!("expected a number, got {}", other.type_str())),
            }
        }
        fn count(v: &toml::Value) -> Result<i64, String> {
            match v {
                toml::Value::Integer(i) if *i >= 0 => Ok(*i),
                toml::Value::Integer(i) => Err(format!("expected a nonnegative integer, got {i}")),
                other => Err(format!("expected an integer, got {}", other.type_str())),
            }
        }
        fn text(v: &toml::Value) -> Result<&str, String> {
            v.as_str()
                .ok_or_else(|| format!("expected a string, got {}", v.type_str()))
        }
        match key {
            "n_banks" => self.n_banks = count(value)? as usize,
            "n_firms" => self.n_firms = count(value)? as usize,
            "max_timesteps" => self.max_timesteps = count(value)? as u32,
            "tau" => self.tau = count(value)? as u32,
            "r_ib" => self.r_ib = num(value)?,
            "r_floan" => self.r_floan = num(value)?,
            "r_h" => self.r_h = num(value)?,
            "r_fdeposit" => self.r_fdeposit = num(value)?,
            "loan_request_max" => self.loan_request_max = num(value)?,
            "invest_fraction" => self.invest_fraction = num(value)?,
            "deposit_fraction" => self.deposit_fraction = num(value)?,
            "consumption_dispersion" => self.consumption_dispersion = num(value)?,
            "firm_return_mean" => self.firm_return_mean = num(value)?,
            "firm_return_sd" => self.firm_return_sd = num(value)?,
            "firm_return_means" => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| format!("expected an array, got {}", value.type_str()))?;
                self.firm_return_means = arr.iter().map(num).collect::<Result<_, _>>()?;
            }
            "firm_default_threshold" => self.firm_default_threshold = num(value)?,
            "initial_bank_cash" => self.initial_bank_cash = num(value)?,
            "initial_firm_cash" => self.initial_firm_cash = num(value)?,
            "initial_household_cash" => self.initial_household_cash = num(value)?,
            "mode" => self.mode = text(value)?.parse()?,
            "rank_metric" => self.rank_metric = text(value)?.parse()?,
            "network_kind" => self.network_kind = text(value)?.parse()?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Render as a config document accepted by [`SimParams::from_config_str`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("n_banks", self.n_banks.to_string());
        kv("n_firms", self.n_firms.to_string());
        kv("max_timesteps", self.max_timesteps.to_string());
        kv("tau", self.tau.to_string());
        kv("r_ib", fmt_f(self.r_ib));
        kv("r_floan", fmt_f(self.r_floan));
        kv("r_h", fmt_f(self.r_h));
        kv("r_fdeposit", fmt_f(self.r_fdeposit));
        kv("loan_request_max", fmt_f(self.loan_request_max));
        kv("invest_fraction", fmt_f(self.invest_fraction));
        kv("deposit_fraction", fmt_f(self.deposit_fraction));
        kv("consumption_dispersion", fmt_f(self.consumption_dispersion));
        kv("firm_return_mean", fmt_f(self.firm_return_mean));
        kv("firm_return_sd", fmt_f(self.firm_return_sd));
        if !self.firm_return_means.is_empty() {
            let vals: Vec<String> = self.firm_return_means.iter().map(|v| fmt_f(*v)).collect();
            kv("firm_return_means", format!("[{}]", vals.join(", ")));
        }
        kv("firm_default_threshold", fmt_f(self.firm_default_threshold));
        kv("initial_bank_cash", fmt_f(self.initial_bank_cash));
        kv("initial_firm_cash", fmt_f(self.initial_firm_cash));
        kv("initial_household_cash", fmt_f(self.initial_household_cash));
        kv("mode", format!("\"{}\"", self.mode));
        kv("rank_metric", format!("\"{}\"", self.rank_metric.as_str()));
        kv("network_kind", format!("\"{}\"", self.network_kind));
        out
    }
}

fn fmt_f(v: f64) -> String {
    // `{:?}` always keeps a decimal point, so TOML reads it back as a float.
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimParams::default().validate().unwrap();
        SimParams::desk_scale().validate().unwrap();
    }

    #[test]
    fn deposit_fraction_out_of_range_names_the_field() {
        let err = SimParams::from_config_str("deposit_fraction = 1.5").unwrap_err();
        assert_eq!(err.fields(), vec!["deposit_fraction"]);
        assert!(err.to_string().contains("deposit_fraction"));
    }

    #[test]
    fn all_errors_are_listed() {
        let doc = "deposit_fraction = 1.5\nbogus = 3\ntau = 0\nmode = \"sideways\"\n";
        let err = SimParams::from_config_str(doc).unwrap_err();
        let mut fields = err.fields();
        fields.sort();
        assert_eq!(fields, vec!["bogus", "deposit_fraction", "mode", "tau"]);
    }

    #[test]
    fn rate_ordering_is_enforced() {
        let err = SimParams::from_config_str("r_ib = 0.05\nr_floan = 0.02").unwrap_err();
        assert_eq!(err.fields(), vec!["r_floan"]);
    }

    #[test]
    fn config_string_round_trips() {
        let p = SimParams {
            n_banks: 7,
            n_firms: 7,
            mode: Mode::Fast,
            rank_metric: RankMetric::KatzRank,
            network_kind: NetworkKind::Er(0.115),
            firm_return_means: vec![0.0, 0.1, -0.1, 0.0, 0.0, 0.0, 0.2],
            ..SimParams::default()
        };
        let back = SimParams::from_config_str(&p.to_config_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn network_kind_parsing() {
        assert_eq!("complete".parse::<NetworkKind>(), Ok(NetworkKind::Complete));
        assert_eq!("er:0.115".parse::<NetworkKind>(), Ok(NetworkKind::Er(0.115)));
        assert_eq!("BA:6".parse::<NetworkKind>(), Ok(NetworkKind::Ba(6)));
        assert!("ws:3".parse::<NetworkKind>().is_err());
    }
}
