#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qvi_workbench::mdp::{validate, Mdp, RawMdp, RawRewards};

pub fn scalar_mdp(reward: f64, gamma: f64) -> Mdp {
    validate(&RawMdp {
        num_states: 1,
        num_actions: 1,
        gamma,
        transitions: vec![vec![vec![1.0]]],
        rewards: RawRewards::Flat(vec![reward]),
    })
    .unwrap()
}

/// Bellman update written as the elementwise loop
/// `R(s,a) + gamma sum_s' P(s'|s,a) max_a' Q(s',a')`, on plain slices.
pub fn bellman_loop(mdp: &Mdp, q: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let qa = |s: usize, a: usize| q[a * ns + s];
    let mut out = vec![0.0; ns * na];
    for a in 0..na {
        for s in 0..ns {
            let mut acc = 0.0;
            for t in 0..ns {
                let best = (0..na).map(|b| qa(t, b)).fold(f64::NEG_INFINITY, f64::max);
                acc += mdp.prob(s, a, t) * best;
            }
            out[a * ns + s] = mdp.reward(s, a) + mdp.gamma() * acc;
        }
    }
    out
}

/// Dense `|S| x |S||A|` selector built entry by entry from a policy.
pub fn dense_selector(actions: &[usize], num_actions: usize) -> DMatrix<f64> {
    let ns = actions.len();
    let mut m = DMatrix::zeros(ns, ns * num_actions);
    for (s, &a) in actions.iter().enumerate() {
        m[(s, a * ns + s)] = 1.0;
    }
    m
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_abs_mat(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Truncated Neumann series `sum_{i<terms} (A^T / rate)^i w`.
pub fn neumann_v(a: &DMatrix<f64>, rate: f64, w: &DVector<f64>, terms: usize) -> DVector<f64> {
    let step = a.transpose() / rate;
    let mut term = w.clone();
    let mut sum = w.clone();
    for _ in 1..terms {
        term = &step * term;
        sum += &term;
    }
    sum
}

/// Fixed point of `M <- rate^{-2} A^T M A + I`, iterated from `I`.
pub fn lyapunov_fixed_point(a: &DMatrix<f64>, rate: f64, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::identity(n, n);
    for _ in 0..1_000_000 {
        let next = a.transpose() * &m * a / (rate * rate) + DMatrix::identity(n, n);
        let diff = max_abs_mat(&(&next - &m));
        m = next;
        if diff < tol {
            break;
        }
    }
    m
}
