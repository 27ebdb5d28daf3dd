//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::time::{Duration, Instant};

use ibrisk::centrality::{debtrank, debtrank_all, economic_value, impact_matrix, katz_residual, katz_scores, LiabilityMatrix};
use ibrisk::engine::{run_timestep, ModePolicy};
use ibrisk::ensemble::{decile_ratio, mean_profile, run_ensemble, EnsembleConfig, EnsembleTable};
use ibrisk::metrics::{ks_statistic, quantile, summary_stats, RunRecord};
use ibrisk::network::{gen_ba, gen_er};
use ibrisk::params::{Mode, NetworkKind, RankMetric, SimParams};
use ibrisk::world::init_world;
use rand::Rng;

use common::{oracle_debtrank, random_snapshot, rng};

const N_RUNS: usize = 1000;
const BASE_SEED: u64 = 20_000;

const NORMAL: ModePolicy = ModePolicy {
    mode: Mode::Normal,
    rank_metric: RankMetric::DebtRank,
};
const TRANSPARENT: ModePolicy = ModePolicy {
    mode: Mode::Transparent,
    rank_metric: RankMetric::DebtRank,
};
const TRANSPARENT_KATZ: ModePolicy = ModePolicy {
    mode: Mode::Transparent,
    rank_metric: RankMetric::KatzRank,
};
const FAST: ModePolicy = ModePolicy {
    mode: Mode::Fast,
    rank_metric: RankMetric::DebtRank,
};

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} [{name}] {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn conservation(report: &mut Report) {
    let start = Instant::now();
    let nets = [NetworkKind::Complete, NetworkKind::Er(0.115), NetworkKind::Ba(6)];
    let modes = [Mode::Normal, Mode::Transparent, Mode::Fast];
    let mut violations = 0;
    let mut steps = 0u64;
    let results: Vec<(usize, u64)> = {
        use rayon::prelude::*;
        (0..200u64)
            .into_par_iter()
            .map(|k| {
                let p = SimParams {
                    mode: modes[k as usize % 3],
                    network_kind: nets[(k as usize / 3) % 3],
                    ..SimParams::desk_scale()
                };
                let mut w = init_world(p, 7_000 + k).unwrap();
                let policy = ModePolicy::of(&w.params);
                let base = w.initial_cash;
                let (mut bad, mut n) = (0, 0);
                while w.t <= w.params.max_timesteps {
                    let res = run_timestep(&mut w, policy);
                    n += 1;
                    let drift = (w.total_cash() - base).abs() / base.abs().max(1.0);
                    if res.is_err() || drift > 1e-9 {
                        bad += 1;
                        break;
                    }
                    if res.unwrap().is_some() {
                        break;
                    }
                }
                (bad, n)
            })
            .collect()
    };
    for (bad, n) in results {
        violations += bad;
        steps += n;
    }
    let elapsed = start.elapsed();
    report.line(
        "conservation",
        violations == 0 && elapsed < Duration::from_secs(60),
        format!("200 desk-scale runs, {steps} step boundaries, {violations} violations at 1e-9 relative, {} (limit 60s)", secs(elapsed)),
    );
}

fn debtrank_oracle(report: &mut Report) {
    let mut r = rng(2024);
    let (mut mismatches, mut out_of_range, mut slow) = (0, 0, 0);
    for case in 0..1000 {
        let n = 1 + case % 6;
        let (l, c) = random_snapshot(&mut r, n);
        let (expected, _) = oracle_debtrank(&l, &c);
        let lm = LiabilityMatrix::from_rows(&l);
        let got = debtrank_all(&lm, &c, 1.0).unwrap();
        if got != expected {
            mismatches += 1;
        }
        out_of_range += got.iter().filter(|x| !(0.0..=1.0).contains(*x)).count();
        let w = impact_matrix(&lm, &c).unwrap();
        let v = economic_value(&lm);
        slow += (0..n).filter(|&s| debtrank(&w, &v, &[s], 1.0).rounds > n).count();
    }
    report.line(
        "debtrank-oracle",
        mismatches == 0 && out_of_range == 0 && slow == 0,
        format!("1000 networks B<=6: {mismatches} mismatches vs brute force, {out_of_range} scores outside [0,1], {slow} seeds over B rounds"),
    );
}

fn katz(report: &mut Report) {
    let mut r = rng(77);
    let (mut worst, mut min_k) = (0.0f64, f64::INFINITY);
    for case in 0..1000 {
        let n = 1 + case % 20;
        let density: f64 = r.random_range(0.05..1.0);
        let mut l = LiabilityMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if r.random_bool(density) {
                    l.set(i, j, r.random_range(0.0..100.0));
                }
            }
        }
        let k = katz_scores(&l, 1.0).unwrap();
        worst = worst.max(katz_residual(&l, k.alpha, 1.0, &k.scores));
        min_k = k.scores.iter().copied().fold(min_k, f64::min);
    }
    let two = katz_scores(&LiabilityMatrix::from_entries(2, [(0, 1, 10.0)]), 1.0).unwrap().scores;
    let oriented = two[0] > two[1];
    report.line(
        "katz-fixpoint",
        worst <= 1e-10 && min_k >= 1.0 && oriented,
        format!("1000 matrices B<=20: max residual {worst:.2e} (<=1e-10), min K {min_k:.4} (>=1), 2-bank borrower {:.3} > lender {:.3}", two[0], two[1]),
    );
}

fn ensemble(net: NetworkKind, modes: Vec<ModePolicy>) -> (EnsembleTable, Duration) {
    let start = Instant::now();
    let params = SimParams {
        network_kind: net,
        ..SimParams::desk_scale()
    };
    let cfg = EnsembleConfig::new(params, N_RUNS, BASE_SEED, modes);
    let table = run_ensemble(&cfg, 0).unwrap();
    (table, start.elapsed())
}

fn losses_of(recs: &[&RunRecord]) -> Vec<f64> {
    recs.iter().map(|r| r.losses).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn complete_graph_criteria(report: &mut Report) {
    let (table, elapsed) = ensemble(NetworkKind::Complete, vec![NORMAL, TRANSPARENT, FAST, TRANSPARENT_KATZ]);
    let failures = table.failures().count();
    let n = table.records(NORMAL);
    let t = table.records(TRANSPARENT);
    let f = table.records(FAST);
    let k = table.records(TRANSPARENT_KATZ);

    let (ln, lt, lf, lk) = (losses_of(&n), losses_of(&t), losses_of(&f), losses_of(&k));
    let (p99n, p99t) = (quantile(&ln, 0.99).unwrap(), quantile(&lt, 0.99).unwrap());
    let maxc = |recs: &[&RunRecord]| recs.iter().map(|r| r.cascade_size).max().unwrap_or(0);
    let (cn, ct) = (maxc(&n), maxc(&t));
    let (mf, mt) = (max_of(&lf), max_of(&lt));
    let fast_time = elapsed < Duration::from_secs(600);
    report.line(
        "mode-ordering (a) loss p99",
        p99t < p99n && failures == 0,
        format!("transparent {p99t:.2} < normal {p99n:.2} over {N_RUNS} paired runs, B=50, complete graph ({failures} failed runs)"),
    );
    report.line("mode-ordering (b) max cascade", ct < cn, format!("transparent {ct} < normal {cn}"));
    report.line("mode-ordering (c) fast max loss", mf <= mt, format!("fast {mf:.2} <= transparent {mt:.2}"));
    report.line("mode-ordering runtime", fast_time, format!("{} for 4 x {N_RUNS} runs (limit 600s)", secs(elapsed)));

    let eff = |recs: &[&RunRecord]| mean(&recs.iter().filter_map(|r| r.efficiency).collect::<Vec<_>>());
    let (en, et) = (eff(&n), eff(&t));
    report.line(
        "efficiency",
        en >= 0.95 && et >= 0.95 && (en - et).abs() <= 0.02,
        format!("normal {en:.4}, transparent {et:.4} (>=0.95, gap {:.4} <= 0.02)", (en - et).abs()),
    );

    let vol = |recs: &[&RunRecord]| mean(&recs.iter().filter_map(|r| r.volume).collect::<Vec<_>>());
    let (vn, vt) = (vol(&n), vol(&t));
    report.line("volume", vt >= vn, format!("mean V transparent {vt:.2} >= normal {vn:.2}"));

    let tfd = |recs: &[&RunRecord]| recs.iter().filter_map(|r| r.t_fd.map(f64::from)).collect::<Vec<_>>();
    let (tn, tt) = (tfd(&n), tfd(&t));
    let (sn, st) = (summary_stats(&tn).unwrap(), summary_stats(&tt).unwrap());
    let pooled = summary_stats(&[tn.clone(), tt.clone()].concat()).unwrap().sd;
    let gap = (sn.mean - st.mean).abs();
    let kn = sn.kurtosis.unwrap_or(f64::NAN);
    let kt = st.kurtosis.unwrap_or(f64::NAN);
    let shape = |k: f64| (2.5..=4.5).contains(&k);
    report.line(
        "tfd-mode-independence",
        gap <= 0.05 * pooled && shape(kn) && shape(kt),
        format!(
            "normal {:.1} +- {:.1}, transparent {:.1} +- {:.1}, gap {gap:.2} <= {:.2}; kurtosis {kn:.2} / {kt:.2} in [2.5, 4.5]; skewness {:.2}",
            sn.mean,
            sn.sd,
            st.mean,
            st.sd,
            0.05 * pooled,
            sn.skewness.unwrap_or(f64::NAN)
        ),
    );

    let ks = ks_statistic(&lt, &lk);
    report.line("metric-insensitivity", ks <= 0.1, format!("KS(transparent DebtRank, transparent Katz) losses = {ks:.4} <= 0.1"));
}

fn profile_flattening(report: &mut Report) {
    let (table, elapsed) = ensemble(NetworkKind::Er(0.115), vec![NORMAL, TRANSPARENT]);
    let ratio = |p: ModePolicy| mean_profile(table.records(p)).map_or(f64::NAN, |m| decile_ratio(&m));
    let (rn, rt) = (ratio(NORMAL), ratio(TRANSPARENT));
    let bottom = |p: ModePolicy| {
        mean_profile(table.records(p)).map_or(f64::NAN, |m| {
            let d = m.len() / 10;
            m[m.len() - d..].iter().sum::<f64>() / d as f64
        })
    };
    report.line(
        "debtrank-profile",
        rt < rn,
        format!(
            "top/bottom decile ratio at t=100 over {N_RUNS} ER runs: transparent {rt:.3} < normal {rn:.3} (bottom-decile means {:.2e} / {:.2e}, {})",
            bottom(TRANSPARENT),
            bottom(NORMAL),
            secs(elapsed)
        ),
    );
}

fn generators(report: &mut Report) {
    let means: Vec<f64> = (0..1000).map(|s| gen_er(100, 0.115, s).unwrap().mean_degree()).collect();
    let s = summary_stats(&means).unwrap();
    let se = s.sd / (means.len() as f64).sqrt();
    let target = 0.115 * 99.0;
    let er_ok = (s.mean - target).abs() <= 3.0 * se;
    let ba_ok = (0..1000).all(|seed| gen_ba(100, 6, seed).unwrap().edge_count() == 6 * 94 + 15);
    report.line(
        "generators",
        er_ok && ba_ok,
        format!("ER mean degree {:.4} vs {target:.3} (3 SE = {:.4}); BA(100, 6) edge count exact: {ba_ok}", s.mean, 3.0 * se),
    );
}

fn main() {
    let mut report = Report { failed: 0 };
    conservation(&mut report);
    debtrank_oracle(&mut report);
    katz(&mut report);
    complete_graph_criteria(&mut report);
    profile_flattening(&mut report);
    generators(&mut report);
    if report.failed > 0 {
        println!("{} acceptance criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
