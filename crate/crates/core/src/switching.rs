//! Q-value iteration written as a switched affine system
//! `Q_{k+1} - Q* = A_{Q_k} (Q_k - Q*) + b_{Q_k}` whose mode is the greedy policy.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Mdp, QVector};
use crate::policy::{bellman_operator, greedy_policy, ActionTransitionMatrix};

/// Absolute slack below which an inequality check counts as violated.
pub const VIOLATION_TOL: f64 = 1e-9;

/// One mode of the system, realized for a given `Q` and `Q*`.
#[derive(Debug, Clone)]
pub struct SwitchedAffineSystem {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub mode_policy: DeterministicPolicy,
}

impl SwitchedAffineSystem {
    pub fn new(q: &QVector, qstar: &QVector, mdp: &Mdp) -> Self {
        let mode_policy = greedy_policy(q, mdp);
        Self {
            a_matrix: mode_matrix(&mode_policy, mdp),
            b_vector: affine_term(q, qstar, mdp),
            mode_policy,
        }
    }

    /// `A x + b`
    pub fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_matrix * x + &self.b_vector
    }
}

/// `gamma P Pi` for a fixed policy.
pub fn mode_matrix(pi: &DeterministicPolicy, mdp: &Mdp) -> DMatrix<f64> {
    ActionTransitionMatrix::new(pi, mdp).right_multiply(mdp.transitions()) * mdp.gamma()
}

/// `A_Q = gamma P Pi_Q`, with `Pi_Q` the greedy selector of `q`.
pub fn system_matrix(q: &QVector, mdp: &Mdp) -> DMatrix<f64> {
    mode_matrix(&greedy_policy(q, mdp), mdp)
}

/// `b_Q = gamma P (Pi_Q - Pi_{Q*}) Q*`.
pub fn affine_term(q: &QVector, qstar: &QVector, mdp: &Mdp) -> DVector<f64> {
    let pi_q = ActionTransitionMatrix::new(&greedy_policy(q, mdp), mdp);
    let pi_star = ActionTransitionMatrix::new(&greedy_policy(qstar, mdp), mdp);
    let gap = pi_q.apply(qstar.values()) - pi_star.apply(qstar.values());
    mdp.transitions() * gap * mdp.gamma()
}

/// Maximum absolute row sum `||A_Q||_inf`; equals `gamma` for every `Q`.
pub fn verify_infnorm_lemma(q: &QVector, mdp: &Mdp) -> f64 {
    inf_norm_matrix(&system_matrix(q, mdp))
}

pub fn inf_norm_matrix(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn inf_norm(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Componentwise slack of
/// `A_{Q*} (Q_k - Q*) <= Q_{k+1} - Q* <= A_{Q_k} (Q_k - Q*)`.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    /// `(Q_{k+1} - Q*) - A_{Q*} (Q_k - Q*)`
    pub lower_slack: Vec<f64>,
    /// `A_{Q_k} (Q_k - Q*) - (Q_{k+1} - Q*)`
    pub upper_slack: Vec<f64>,
    pub min_lower_slack: f64,
    pub min_upper_slack: f64,
    /// `||F Q* - Q*||_inf` of the supplied `Q*`, so violations can be attributed
    /// to an inaccurate ground truth.
    pub qstar_residual: f64,
}

impl SandwichReport {
    pub fn min_slack(&self) -> f64 {
        self.min_lower_slack.min(self.min_upper_slack)
    }

    pub fn holds(&self) -> bool {
        self.min_slack() >= -VIOLATION_TOL
    }

    fn first_violation(&self) -> Option<Error> {
        let find = |v: &[f64], side| {
            v.iter()
                .position(|&s| s < -VIOLATION_TOL)
                .map(|component| Error::BoundViolation {
                    component,
                    side,
                    slack: v[component],
                })
        };
        find(&self.lower_slack, "lower").or_else(|| find(&self.upper_slack, "upper"))
    }
}

/// Slack of both sandwich inequalities, without failing.
pub fn sandwich_slacks(
    q_k: &QVector,
    q_next: &QVector,
    qstar: &QVector,
    mdp: &Mdp,
) -> SandwichReport {
    let a_star = system_matrix(qstar, mdp);
    let qstar_residual = inf_norm(&bellman_operator(qstar, mdp).diff(qstar));
    sandwich_slacks_with(&a_star, q_k, q_next, qstar, mdp, qstar_residual)
}

pub(crate) fn sandwich_slacks_with(
    a_star: &DMatrix<f64>,
    q_k: &QVector,
    q_next: &QVector,
    qstar: &QVector,
    mdp: &Mdp,
    qstar_residual: f64,
) -> SandwichReport {
    let delta = q_k.diff(qstar);
    let delta_next = q_next.diff(qstar);
    let lower = a_star * &delta;
    let upper = system_matrix(q_k, mdp) * &delta;
    let lower_slack: Vec<f64> = (&delta_next - lower).iter().copied().collect();
    let upper_slack: Vec<f64> = (upper - &delta_next).iter().copied().collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    SandwichReport {
        min_lower_slack: min(&lower_slack),
        min_upper_slack: min(&upper_slack),
        lower_slack,
        upper_slack,
        qstar_residual,
    }
}

/// Checks the sandwich bounds and fails with [`Error::BoundViolation`] when
/// either side is off by more than [`VIOLATION_TOL`].
pub fn sandwich_bounds(
    q_k: &QVector,
    q_next: &QVector,
    qstar: &QVector,
    mdp: &Mdp,
) -> Result<SandwichReport> {
    let report = sandwich_slacks(q_k, q_next, qstar, mdp);
    match report.first_violation() {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
