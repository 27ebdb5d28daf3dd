//! Shared oracles and generators for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum State {
    U,
    D,
    I,
}

/// Literal distress propagation with explicit state tables.
/// `l[i][j]` is what `i` owes `j`. Returns the single-seed scores with
/// full initial distress and the number of rounds each seed needed.
pub fn oracle_debtrank(l: &[Vec<f64>], c: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = l.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if l[i][j] > 0.0 {
                w[i][j] = if c[j] <= 0.0 { 1.0 } else { f64::min(1.0, l[i][j] / c[j]) };
            }
        }
    }
    let mut lent = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            lent[j] += l[i][j];
        }
    }
    let total: f64 = lent.iter().sum();
    let v: Vec<f64> = if total > 0.0 {
        lent.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };

    let mut scores = vec![0.0; n];
    let mut rounds = vec![0; n];
    for k in 0..n {
        let mut h = vec![0.0; n];
        let mut s = vec![State::U; n];
        h[k] = 1.0;
        s[k] = State::D;
        let mut t = 0;
        while s.contains(&State::D) {
            t += 1;
            let mut h_next = h.clone();
            for i in 0..n {
                let mut inflow = 0.0;
                for j in 0..n {
                    if s[j] == State::D {
                        inflow += w[j][i] * h[j];
                    }
                }
                h_next[i] = f64::min(1.0, h[i] + inflow);
            }
            let s_next: Vec<State> = (0..n)
                .map(|i| match s[i] {
                    State::D => State::I,
                    State::U if h_next[i] > 0.0 => State::D,
                    other => other,
                })
                .collect();
            h = h_next;
            s = s_next;
        }
        let reached: f64 = (0..n).map(|j| h[j] * v[j]).sum();
        scores[k] = reached - v[k];
        rounds[k] = t;
    }
    (scores, rounds)
}

/// Random snapshot with integer-valued exposures, so every sum the
/// implementations form is exact.
pub fn random_snapshot(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let density: f64 = rng.random_range(0.1..0.9);
    let mut l = vec![vec![0.0; n]; n];
    for (i, row) in l.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j && rng.random_bool(density) {
                *x = rng.random_range(1..60) as f64;
            }
        }
    }
    let c = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1 => -(rng.random_range(1..20) as f64),
            _ => rng.random_range(1..120) as f64,
        })
        .collect();
    (l, c)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
