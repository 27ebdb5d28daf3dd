//! Systemic-risk and efficiency observables of single runs, and the sample
//! statistics used to compare ensembles.

use serde::Serialize;
use thiserror::Error;

use crate::params::{Mode, NetworkKind, RankMetric};
use crate::world::{Event, EventKind, StepStats};

/// Timestep at which transaction volume and the DebtRank profile are read.
pub const REFERENCE_STEP: u32 = 100;

/// Outcome of one bank-default cascade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeReport {
    pub trigger_bank: usize,
    /// Defaulted banks in the order they failed, trigger first.
    pub defaulted_banks: Vec<usize>,
    pub t0: u32,
    /// Bank equities at the start of the cascade timestep.
    pub capital_before: Vec<f64>,
    /// Bank equities once the cascade has been resolved.
    pub capital_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: Mode,
    pub rank_metric: RankMetric,
    #[serde(serialize_with = "display")]
    pub network: NetworkKind,
    /// Timestep of the first bank default; `None` when censored at T_max.
    pub t_fd: Option<u32>,
    pub losses: f64,
    pub cascade_size: usize,
    /// `None` when no firm ever requested a loan.
    pub efficiency: Option<f64>,
    /// `None` when the run ended before the reference step.
    pub volume: Option<f64>,
    /// Normalized DebtRank of every bank at the end of the reference step.
    pub debtrank_profile: Option<Vec<f64>>,
    pub requested: Vec<f64>,
    pub granted: Vec<f64>,
    pub cascade: Option<CascadeReport>,
}

fn display<S: serde::Serializer>(v: &NetworkKind, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl RunRecord {
    pub fn censored(&self) -> bool {
        self.t_fd.is_none()
    }
}

/// `𝓛 = −Σ_i [C_i(t0) − C_i(t0−1)]` over all banks.
pub fn losses(report: &CascadeReport) -> f64 {
    -report
        .capital_after
        .iter()
        .zip(&report.capital_before)
        .map(|(after, before)| after - before)
        .sum::<f64>()
}

pub fn cascade_size(report: &CascadeReport) -> usize {
    report.defaulted_banks.len()
}

/// Time average of the per-step granted/requested ratio; steps without
/// requests are skipped. `None` when every step is empty.
pub fn efficiency(requested: &[f64], granted: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = requested
        .iter()
        .zip(granted)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, g)| g / r)
        .collect();
    if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

/// IB volume at `t`: loans issued at `t` plus those issued at `t − τ`
/// (which fall due at `t`), read from the event log. `None` unless the run
/// completed timestep `t`.
pub fn transaction_volume(events: &[Event], t: u32, tau: u32, completed: u32) -> Option<f64> {
    if completed < t {
        return None;
    }
    let earlier = t.checked_sub(tau);
    Some(
        events
            .iter()
            .filter(|e| e.kind == EventKind::IbLoan && (e.t == t || Some(e.t) == earlier))
            .map(|e| e.amount)
            .sum(),
    )
}

/// Volume from the per-step ledger aggregates: issued plus repaid at `t`.
pub fn volume_from_stats(stats: &[StepStats], t: u32) -> Option<f64> {
    stats.get(t as usize).map(|s| s.ib_issued + s.ib_repaid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    /// `None` when all values coincide.
    pub skewness: Option<f64>,
    /// Non-excess kurtosis; a Gaussian gives 3.
    pub kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("summary statistics need at least 2 values, got {0}")]
pub struct TooFewValues(pub usize);

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats, TooFewValues> {
    let n = values.len();
    if n < 2 {
        return Err(TooFewValues(n));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let sd = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let shaped = m2 > 0.0 && m2 > f64::EPSILON * mean.abs() * mean.abs();
    Ok(SummaryStats {
        n,
        mean,
        sd,
        skewness: shaped.then(|| m3 / m2.powf(1.5)),
        kurtosis: shaped.then(|| m4 / (m2 * m2)),
    })
}

/// Empirical `q`-quantile with linear interpolation between order
/// statistics. NaNs are ignored.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(before: Vec<f64>, after: Vec<f64>) -> CascadeReport {
        CascadeReport {
            trigger_bank: 0,
            defaulted_banks: vec![0],
            t0: 1,
            capital_before: before,
            capital_after: after,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(losses(&report(vec![5.0, 7.0], vec![5.0, 7.0])), 0.0);
        assert_eq!(losses(&report(vec![50.0, 7.0, 3.0], vec![40.0, 7.0, 3.0])), 10.0);
        assert_eq!(cascade_size(&report(vec![], vec![])), 1);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(&[10.0, 4.0], &[10.0, 4.0]), Some(1.0));
        assert_eq!(efficiency(&[10.0, 4.0], &[0.0, 0.0]), Some(0.0));
        assert_eq!(efficiency(&[10.0, 4.0], &[5.0, 2.0]), Some(0.5));
        assert_eq!(efficiency(&[0.0, 4.0], &[0.0, 4.0]), Some(1.0));
        assert_eq!(efficiency(&[0.0, 0.0], &[0.0, 0.0]), None);
    }

    fn loan(t: u32, amount: f64) -> Event {
        Event {
            t,
            kind: EventKind::IbLoan,
            agents: (0, Some(1)),
            amount,
        }
    }

    #[test]
    fn volume_examples() {
        assert_eq!(transaction_volume(&[], 100, 10, 100), Some(0.0));
        assert_eq!(transaction_volume(&[loan(100, 10.0)], 100, 10, 100), Some(10.0));
        let events = [loan(90, 7.0), loan(95, 3.0), loan(100, 5.0)];
        assert_eq!(transaction_volume(&events, 100, 10, 120), Some(12.0));
        assert_eq!(transaction_volume(&events, 100, 10, 99), None);
    }

    #[test]
    fn summary_examples() {
        let s = summary_stats(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.skewness, s.kurtosis), (1.0, 0.0, None, None));
        let s = summary_stats(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summary_stats(&[1.0]), Err(TooFewValues(1)));
    }

    #[test]
    fn gaussian_sample_has_kurtosis_three() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summary_stats(&xs).unwrap();
        assert!((s.kurtosis.unwrap() - 3.0).abs() < 0.02);
        assert!(s.skewness.unwrap().abs() < 0.01);
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), Some(3.0));
        assert_eq!(quantile(&v, 1.0), Some(5.0));
        assert_eq!(quantile(&v, 0.25), Some(2.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]), 0.5);
        assert_eq!(ks_statistic(&[0.0, 0.0], &[0.0]), 0.0);
    }
}
