//! Seeded ensembles of independent runs, their CSV tables and summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_simulation, ModePolicy};
use crate::metrics::{summary_stats, RunRecord, SummaryStats};
use crate::params::{Mode, RankMetric, SimParams};

pub const ENSEMBLE_HEADER: &str =
    "run_id,seed,mode,network,t_fd,censored,losses,cascade_size,efficiency,volume";
pub const PROFILE_HEADER: &str = "run_id,bank_rank_position,normalized_debtrank";

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub params: SimParams,
    pub n_runs: usize,
    pub base_seed: u64,
    pub modes: Vec<ModePolicy>,
    /// When false every mode gets its own disjoint seed range.
    pub paired: bool,
}

impl EnsembleConfig {
    pub fn new(params: SimParams, n_runs: usize, base_seed: u64, modes: Vec<ModePolicy>) -> Self {
        Self {
            params,
            n_runs,
            base_seed,
            modes,
            paired: true,
        }
    }

    /// Seed of run `k` under the `m`-th mode.
    pub fn seed_of(&self, k: usize, m: usize) -> u64 {
        let offset = if self.paired { k } else { m * self.n_runs + k };
        self.base_seed.wrapping_add(offset as u64)
    }
}

/// Column label for a mode; transparent and fast modes scored with the
/// Katz rank get a `-katz` suffix so both metrics can share one table.
pub fn mode_label(policy: ModePolicy) -> String {
    match (policy.mode, policy.rank_metric) {
        (Mode::Normal, _) | (_, RankMetric::DebtRank) => policy.mode.to_string(),
        (mode, RankMetric::KatzRank) => format!("{mode}-katz"),
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleRow {
    pub run_id: usize,
    pub seed: u64,
    pub policy: ModePolicy,
    /// Failed runs keep their error message.
    pub outcome: Result<RunRecord, String>,
}

/// Rows ordered by run index, then by position in the mode list.
#[derive(Debug, Clone)]
pub struct EnsembleTable {
    pub modes: Vec<ModePolicy>,
    pub rows: Vec<EnsembleRow>,
}

impl EnsembleTable {
    /// Successful records of one mode, in run order.
    pub fn records(&self, policy: ModePolicy) -> Vec<&RunRecord> {
        self.rows
            .iter()
            .filter(|r| r.policy == policy)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &EnsembleRow> {
        self.rows.iter().filter(|r| r.outcome.is_err())
    }
}

/// Run every (run, mode) pair on `workers` threads (0 means rayon's
/// default). The table does not depend on the worker count.
pub fn run_ensemble(cfg: &EnsembleConfig, workers: usize) -> Result<EnsembleTable, rayon::ThreadPoolBuildError> {
    let jobs: Vec<(usize, usize)> = (0..cfg.n_runs)
        .flat_map(|k| (0..cfg.modes.len()).map(move |m| (k, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, m)| {
                let policy = cfg.modes[m];
                let seed = cfg.seed_of(k, m);
                let params = SimParams {
                    mode: policy.mode,
                    rank_metric: policy.rank_metric,
                    ..cfg.params.clone()
                };
                EnsembleRow {
                    run_id: k,
                    seed,
                    policy,
                    outcome: run_simulation(params, seed).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(EnsembleTable {
        modes: cfg.modes.clone(),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_ensemble_csv<W: Write>(table: &EnsembleTable, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ENSEMBLE_HEADER.split(','))?;
    for row in &table.rows {
        let Ok(r) = &row.outcome else { continue };
        out.write_record([
            row.run_id.to_string(),
            row.seed.to_string(),
            mode_label(row.policy),
            r.network.to_string(),
            r.t_fd.map_or_else(String::new, |t| t.to_string()),
            r.censored().to_string(),
            r.losses.to_string(),
            r.cascade_size.to_string(),
            opt(r.efficiency),
            opt(r.volume),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Profiles of one mode, each sorted most risky first (position 1).
pub fn write_profile_csv<W: Write>(table: &EnsembleTable, policy: ModePolicy, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PROFILE_HEADER.split(','))?;
    for row in table.rows.iter().filter(|r| r.policy == policy) {
        let Some(profile) = row.outcome.as_ref().ok().and_then(|r| r.debtrank_profile.as_ref()) else {
            continue;
        };
        for (pos, v) in sorted_desc(profile).iter().enumerate() {
            out.write_record([row.run_id.to_string(), (pos + 1).to_string(), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Rank-ordered profile averaged over runs; `None` without profiles.
pub fn mean_profile<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Option<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for p in records.into_iter().filter_map(|r| r.debtrank_profile.as_ref()) {
        if sum.is_empty() {
            sum = vec![0.0; p.len()];
        }
        for (s, v) in sum.iter_mut().zip(sorted_desc(p)) {
            *s += v;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Mean of the top decile over the mean of the bottom decile of a profile
/// sorted most risky first. Infinite when the bottom decile is all zero.
pub fn decile_ratio(profile: &[f64]) -> f64 {
    let d = (profile.len() / 10).max(1);
    let top: f64 = profile[..d].iter().sum::<f64>() / d as f64;
    let bottom: f64 = profile[profile.len() - d..].iter().sum::<f64>() / d as f64;
    if bottom == 0.0 {
        if top == 0.0 { f64::NAN } else { f64::INFINITY }
    } else {
        top / bottom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges; bin `i` is `[edges[i], edges[i+1])`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Left-closed bins of width `bin_width` aligned at 0, spanning the
/// occupied range. Non-finite values (censored runs) are skipped.
pub fn histogram(values: &[f64], bin_width: f64) -> Histogram {
    assert!(bin_width > 0.0, "bin width must be positive");
    let idx: Vec<i64> = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| (v / bin_width).floor() as i64)
        .collect();
    let (Some(&lo), Some(&hi)) = (idx.iter().min(), idx.iter().max()) else {
        return Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        };
    };
    let mut counts = vec![0; (hi - lo + 1) as usize];
    for i in idx {
        counts[(i - lo) as usize] += 1;
    }
    let edges = (lo..=hi + 1).map(|i| i as f64 * bin_width).collect();
    Histogram { edges, counts }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub runs: usize,
    pub failed: usize,
    pub censored: usize,
    /// `None` when a column has fewer than two values.
    pub metrics: BTreeMap<&'static str, Option<SummaryStats>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub modes: BTreeMap<String, ModeSummary>,
    pub failures: Vec<FailedRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedRun {
    pub run_id: usize,
    pub seed: u64,
    pub mode: String,
    pub error: String,
}

pub fn summarize(table: &EnsembleTable) -> EnsembleSummary {
    let mut modes = BTreeMap::new();
    for &policy in &table.modes {
        let recs = table.records(policy);
        let column = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<SummaryStats> {
            let v: Vec<f64> = recs.iter().filter_map(|r| f(r)).collect();
            summary_stats(&v).ok()
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("t_fd", column(&|r| r.t_fd.map(f64::from)));
        metrics.insert("losses", column(&|r| Some(r.losses)));
        metrics.insert("cascade_size", column(&|r| Some(r.cascade_size as f64)));
        metrics.insert("efficiency", column(&|r| r.efficiency));
        metrics.insert("volume", column(&|r| r.volume));
        let failed = table.failures().filter(|r| r.policy == policy).count();
        modes.insert(
            mode_label(policy),
            ModeSummary {
                runs: recs.len() + failed,
                failed,
                censored: recs.iter().filter(|r| r.censored()).count(),
                metrics,
            },
        );
    }
    let failures = table
        .failures()
        .map(|r| FailedRun {
            run_id: r.run_id,
            seed: r.seed,
            mode: mode_label(r.policy),
            error: r.outcome.as_ref().err().cloned().unwrap_or_default(),
        })
        .collect();
    EnsembleSummary { modes, failures }
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// File names written by [`write_outputs`].
pub fn output_files(modes: &[ModePolicy]) -> Vec<String> {
    let mut files = vec!["ensemble.csv".to_string(), "summary.json".to_string()];
    files.extend(modes.iter().map(|&m| format!("profile_{}.csv", mode_label(m))));
    files
}

/// `ensemble.csv`, one `profile_<mode>.csv` per mode and `summary.json`.
pub fn write_outputs(table: &EnsembleTable, dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir)?;
    write_ensemble_csv(table, fs::File::create(dir.join("ensemble.csv"))?)?;
    for &policy in &table.modes {
        let name = format!("profile_{}.csv", mode_label(policy));
        write_profile_csv(table, policy, fs::File::create(dir.join(name))?)?;
    }
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summarize(table))?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        assert_eq!(histogram(&[], 1.0).counts, Vec::<usize>::new());
        let h = histogram(&[1.0, 1.0, 2.0], 1.0);
        assert_eq!(h.edges, vec![1.0, 2.0, 3.0]);
        assert_eq!(h.counts, vec![2, 1]);
        let h = histogram(&[0.5, f64::NAN, 3.0], 1.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn histogram_refinement_conserves_counts() {
        let v: Vec<f64> = (0..97).map(|i| (i as f64 * 1.37) % 23.0).collect();
        for w in [0.25, 0.5, 1.0, 4.0] {
            let h = histogram(&v, w);
            assert_eq!(h.counts.iter().sum::<usize>(), v.len());
            assert_eq!(h.edges.len(), h.counts.len() + 1);
        }
    }

    #[test]
    fn unpaired_seeds_are_disjoint() {
        let modes = vec![
            ModePolicy::new(Mode::Normal, RankMetric::DebtRank),
            ModePolicy::new(Mode::Transparent, RankMetric::DebtRank),
        ];
        let mut cfg = EnsembleConfig::new(SimParams::desk_scale(), 3, 10, modes);
        assert_eq!(cfg.seed_of(2, 0), cfg.seed_of(2, 1));
        cfg.paired = false;
        assert_eq!((cfg.seed_of(2, 0), cfg.seed_of(2, 1)), (12, 15));
    }

    #[test]
    fn decile_ratio_flags_flat_and_empty_bottoms() {
        let mut p = vec![1.0; 10];
        assert_eq!(decile_ratio(&p), 1.0);
        p[9] = 0.0;
        assert_eq!(decile_ratio(&p), f64::INFINITY);
        assert!(decile_ratio(&[0.0; 10]).is_nan());
    }

    #[test]
    fn labels() {
        assert_eq!(mode_label(ModePolicy::new(Mode::Normal, RankMetric::KatzRank)), "normal");
        assert_eq!(mode_label(ModePolicy::new(Mode::Fast, RankMetric::KatzRank)), "fast-katz");
        assert_eq!(mode_label(ModePolicy::new(Mode::Transparent, RankMetric::DebtRank)), "transparent");
    }
}
