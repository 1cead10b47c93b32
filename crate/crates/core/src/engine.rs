//! Ground-truth `Q*`, instrumented Q-value iteration and the per-iteration
//! invariant checker.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certificate::LyapunovCertificate;
use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Mdp, QVector};
use crate::policy::{bellman_operator, greedy_policy, state_action_chain};
use crate::switching::{inf_norm, sandwich_slacks_with, system_matrix, VIOLATION_TOL};

/// Upper limit on `|A|^|S|` for exhaustive enumeration.
pub const MAX_ENUMERATED_POLICIES: usize = 1_000_000;
const MAX_IMPROVEMENT_STEPS: usize = 100_000;

/// `Q^pi = (I - gamma P Pi^pi)^{-1} R`
pub fn evaluate_policy(pi: &DeterministicPolicy, mdp: &Mdp) -> Result<QVector> {
    let n = mdp.dim();
    let system = DMatrix::identity(n, n) - state_action_chain(pi, mdp) * mdp.gamma();
    let values = system.lu().solve(mdp.rewards()).ok_or(Error::SingularEvaluation)?;
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularEvaluation);
    }
    QVector::new(mdp, values)
}

/// Policy iteration with exact evaluation.
///
/// Improvement keeps the incumbent action unless another action is strictly
/// better, so the policy sequence cannot cycle among tied policies.
pub fn solve_qstar_policy_iteration(mdp: &Mdp) -> Result<QVector> {
    let mut policy = DeterministicPolicy::from_actions_unchecked(vec![0; mdp.num_states()]);
    for _ in 0..MAX_IMPROVEMENT_STEPS {
        let q = evaluate_policy(&policy, mdp)?;
        let greedy = greedy_policy(&q, mdp);
        let improved: Vec<usize> = (0..mdp.num_states())
            .map(|s| {
                let cur = policy.action(s);
                let best = greedy.action(s);
                let top = q.get(s, best);
                if q.get(s, cur) >= top - 1e-12 * top.abs().max(1.0) {
                    cur
                } else {
                    best
                }
            })
            .collect();
        if improved == policy.actions() {
            return Ok(q);
        }
        policy = DeterministicPolicy::from_actions_unchecked(improved);
    }
    Err(Error::PolicyIterationStalled(MAX_IMPROVEMENT_STEPS))
}

/// Componentwise maximum of `Q^pi` over every deterministic policy. Test oracle.
pub fn solve_qstar_bruteforce(mdp: &Mdp) -> Result<QVector> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let count = (na as f64).powi(ns as i32);
    if count > MAX_ENUMERATED_POLICIES as f64 {
        return Err(Error::TooManyPolicies {
            count,
            cap: MAX_ENUMERATED_POLICIES,
        });
    }
    let mut actions = vec![0usize; ns];
    let mut best = DVector::from_element(mdp.dim(), f64::NEG_INFINITY);
    loop {
        let pi = DeterministicPolicy::from_actions_unchecked(actions.clone());
        let q = evaluate_policy(&pi, mdp)?;
        best.zip_apply(q.values(), |b, x| *b = b.max(x));
        // mixed-radix increment
        let mut pos = 0;
        loop {
            if pos == ns {
                return QVector::new(mdp, best);
            }
            actions[pos] += 1;
            if actions[pos] < na {
                break;
            }
            actions[pos] = 0;
            pos += 1;
        }
    }
}

/// Constant start `-1/(1-gamma)`, which lies below `Q*`.
pub fn orthant_start(mdp: &Mdp) -> QVector {
    QVector::constant(mdp, -mdp.qstar_norm_bound())
}

/// Metrics for iterate `k`.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub k: usize,
    /// `||Q_k - Q*||_inf`
    pub inf_norm: f64,
    /// `||Q_k - Q*||_M`
    pub m_norm: Option<f64>,
    /// `v^T (Q_k - Q*)`
    pub v_functional: Option<f64>,
    /// `(gamma+eps)^k v^T (Q_0 - Q*)`
    pub v_bound: Option<f64>,
    /// Two-term lower bound on `v^T (Q_k - Q*)` from the previous step,
    /// `(gamma+eps) (v - w)^T (Q_{k-1} - Q*)`; absent at `k = 0`.
    pub v_sharp_lower: Option<f64>,
    /// `min_i (Q* - Q_k)_i`; nonnegative inside the orthant.
    pub min_orthant_slack: f64,
    pub policy: DeterministicPolicy,
    /// Sandwich slacks of the step `k -> k+1`; absent at the last iterate.
    pub sandwich_lower_slack: Option<f64>,
    pub sandwich_upper_slack: Option<f64>,
}

/// Instrumented run of `Q_{k+1} = F Q_k`.
#[derive(Debug, Clone)]
pub struct QviTrace {
    pub gamma: f64,
    pub iterates: Vec<QVector>,
    pub qstar: QVector,
    pub qstar_residual: f64,
    pub per_step: Vec<StepRecord>,
    /// `gamma + eps` of the attached certificate.
    pub certificate_rate: Option<f64>,
}

impl QviTrace {
    pub fn num_iters(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn delta(&self, k: usize) -> DVector<f64> {
        self.iterates[k].diff(&self.qstar)
    }

    /// `Q_0 <= Q*` componentwise, up to [`VIOLATION_TOL`].
    pub fn starts_in_orthant(&self) -> bool {
        self.delta(0).iter().all(|&d| d <= VIOLATION_TOL)
    }

    /// Fills the certificate-dependent metrics of every step.
    pub fn attach_certificate(&mut self, cert: &LyapunovCertificate) {
        let rate = cert.rate();
        let deltas: Vec<DVector<f64>> = (0..self.iterates.len()).map(|k| self.delta(k)).collect();
        let v0 = cert.v_functional(&deltas[0]);
        let vw = &cert.v_vector - &cert.w_vector;
        for (k, rec) in self.per_step.iter_mut().enumerate() {
            rec.m_norm = Some(cert.m_norm(&deltas[k]));
            rec.v_functional = Some(cert.v_functional(&deltas[k]));
            rec.v_bound = Some(rate.powi(k as i32) * v0);
            rec.v_sharp_lower = (k > 0).then(|| rate * vw.dot(&deltas[k - 1]));
        }
        self.certificate_rate = Some(rate);
    }
}

/// Runs `num_iters` steps from `q0`, computing `Q*` by policy iteration.
pub fn run_qvi(mdp: &Mdp, q0: &QVector, num_iters: usize) -> Result<QviTrace> {
    let qstar = solve_qstar_policy_iteration(mdp)?;
    run_qvi_with_qstar(mdp, &qstar, q0, num_iters)
}

pub fn run_qvi_with_qstar(
    mdp: &Mdp,
    qstar: &QVector,
    q0: &QVector,
    num_iters: usize,
) -> Result<QviTrace> {
    q0.check_sized_for(mdp)?;
    qstar.check_sized_for(mdp)?;
    let mut iterates = Vec::with_capacity(num_iters + 1);
    iterates.push(q0.clone());
    for k in 0..num_iters {
        let next = bellman_operator(&iterates[k], mdp);
        iterates.push(next);
    }

    let a_star = system_matrix(qstar, mdp);
    let qstar_residual = inf_norm(&bellman_operator(qstar, mdp).diff(qstar));
    let per_step = (0..=num_iters)
        .map(|k| {
            let q = &iterates[k];
            let delta = q.diff(qstar);
            let sandwich = (k < num_iters).then(|| {
                sandwich_slacks_with(&a_star, q, &iterates[k + 1], qstar, mdp, qstar_residual)
            });
            StepRecord {
                k,
                inf_norm: inf_norm(&delta),
                m_norm: None,
                v_functional: None,
                v_bound: None,
                v_sharp_lower: None,
                min_orthant_slack: -delta.max(),
                policy: greedy_policy(q, mdp),
                sandwich_lower_slack: sandwich.as_ref().map(|s| s.min_lower_slack),
                sandwich_upper_slack: sandwich.as_ref().map(|s| s.min_upper_slack),
            }
        })
        .collect();

    Ok(QviTrace {
        gamma: mdp.gamma(),
        iterates,
        qstar: qstar.clone(),
        qstar_residual,
        per_step,
        certificate_rate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// Outcome of one claim over a whole trace. `worst_slack` is the minimum
/// over iterations of (bound side minus checked side); the claim fails when
/// it drops below `-1e-9`. For per-step claims `worst_k` is the step's
/// starting index.
#[derive(Debug, Clone, Serialize)]
pub struct ClaimResult {
    pub status: ClaimStatus,
    pub worst_slack: Option<f64>,
    pub worst_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ClaimResult {
    fn not_applicable(note: &str) -> Self {
        Self {
            status: ClaimStatus::NotApplicable,
            worst_slack: None,
            worst_k: None,
            note: Some(note.to_owned()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != ClaimStatus::Fail
    }
}

/// Running minimum of a slack sequence.
#[derive(Default)]
struct Worst(Option<(f64, usize)>);

impl Worst {
    fn update(&mut self, slack: f64, k: usize) {
        // NaN counts as the worst possible slack
        let slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
        match self.0 {
            Some((s, _)) if s <= slack => {}
            _ => self.0 = Some((slack, k)),
        }
    }

    fn finish(self) -> ClaimResult {
        let (status, worst_slack, worst_k) = match self.0 {
            Some((s, k)) => (
                if s >= -VIOLATION_TOL { ClaimStatus::Pass } else { ClaimStatus::Fail },
                Some(s),
                Some(k),
            ),
            None => (ClaimStatus::Pass, None, None),
        };
        ClaimResult {
            status,
            worst_slack,
            worst_k,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    /// `||Δ_{k+1}||_inf <= gamma ||Δ_k||_inf`
    pub infnorm_contraction: ClaimResult,
    /// `||Δ_k||_inf <= gamma^k ||Δ_0||_inf`
    pub geometric_rate: ClaimResult,
    /// `A_{Q*} Δ_k <= Δ_{k+1} <= A_{Q_k} Δ_k`
    pub sandwich_bounds: ClaimResult,
    /// `Δ_k <= 0`
    pub orthant_invariance: ClaimResult,
    /// `||Δ_{k+1}||_M <= (gamma+eps) ||Δ_k||_M`
    pub m_norm_contraction: ClaimResult,
    /// `(gamma+eps) v^T Δ_k <= v^T Δ_{k+1} <= 0`
    pub linear_functional: ClaimResult,
    /// `(gamma+eps)^k v^T Δ_0 <= v^T Δ_k <= 0`
    pub cumulative_linear: ClaimResult,
}

impl InvariantReport {
    pub fn claims(&self) -> [(&'static str, &ClaimResult); 7] {
        [
            ("infnorm_contraction", &self.infnorm_contraction),
            ("geometric_rate", &self.geometric_rate),
            ("sandwich_bounds", &self.sandwich_bounds),
            ("orthant_invariance", &self.orthant_invariance),
            ("m_norm_contraction", &self.m_norm_contraction),
            ("linear_functional", &self.linear_functional),
            ("cumulative_linear", &self.cumulative_linear),
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.claims().iter().all(|(_, c)| c.passed())
    }

    pub fn first_violation(&self) -> Option<Error> {
        self.claims().into_iter().find_map(|(claim, c)| {
            (c.status == ClaimStatus::Fail).then(|| Error::ClaimViolation {
                claim,
                k: c.worst_k.unwrap_or(0),
                slack: c.worst_slack.unwrap_or(f64::NAN),
            })
        })
    }

    pub fn into_result(self) -> Result<Self> {
        match self.first_violation() {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Evaluates every per-iteration claim on a trace.
///
/// The orthant, M-norm and linear-functional claims require `Q_0 <= Q*`;
/// otherwise they are marked not applicable. The last two also need a
/// certificate.
pub fn check_invariants(trace: &QviTrace, cert: Option<&LyapunovCertificate>) -> InvariantReport {
    let gamma = trace.gamma;
    let kmax = trace.num_iters();
    let deltas: Vec<DVector<f64>> = (0..=kmax).map(|k| trace.delta(k)).collect();
    let inf: Vec<f64> = deltas.iter().map(inf_norm).collect();

    let mut contraction = Worst::default();
    let mut sandwich = Worst::default();
    for k in 0..kmax {
        contraction.update(gamma * inf[k] - inf[k + 1], k);
        let rec = &trace.per_step[k];
        if let (Some(lo), Some(hi)) = (rec.sandwich_lower_slack, rec.sandwich_upper_slack) {
            sandwich.update(lo.min(hi), k);
        }
    }
    let mut geometric = Worst::default();
    for (k, &n) in inf.iter().enumerate() {
        geometric.update(gamma.powi(k as i32) * inf[0] - n, k);
    }

    let in_orthant = trace.starts_in_orthant();
    let outside = "Q_0 is not below Q*";
    let no_cert = "no certificate supplied";

    let orthant_invariance = if in_orthant {
        let mut w = Worst::default();
        for (k, d) in deltas.iter().enumerate() {
            w.update(-d.max(), k);
        }
        w.finish()
    } else {
        ClaimResult::not_applicable(outside)
    };

    let (m_norm_contraction, linear_functional, cumulative_linear) = match (in_orthant, cert) {
        (false, _) => (
            ClaimResult::not_applicable(outside),
            ClaimResult::not_applicable(outside),
            ClaimResult::not_applicable(outside),
        ),
        (true, None) => (
            ClaimResult::not_applicable(no_cert),
            ClaimResult::not_applicable(no_cert),
            ClaimResult::not_applicable(no_cert),
        ),
        (true, Some(cert)) => {
            let rate = cert.rate();
            let m: Vec<f64> = deltas.iter().map(|d| cert.m_norm(d)).collect();
            let v: Vec<f64> = deltas.iter().map(|d| cert.v_functional(d)).collect();
            let mut mc = Worst::default();
            let mut lf = Worst::default();
            for k in 0..kmax {
                mc.update(rate * m[k] - m[k + 1], k);
                lf.update((v[k + 1] - rate * v[k]).min(-v[k + 1]), k);
            }
            let mut cl = Worst::default();
            for (k, &vk) in v.iter().enumerate() {
                cl.update((vk - rate.powi(k as i32) * v[0]).min(-vk), k);
            }
            (mc.finish(), lf.finish(), cl.finish())
        }
    };

    InvariantReport {
        infnorm_contraction: contraction.finish(),
        geometric_rate: geometric.finish(),
        sandwich_bounds: sandwich.finish(),
        orthant_invariance,
        m_norm_contraction,
        linear_functional,
        cumulative_linear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate, RawMdp, RawRewards};

    fn scalar(r: f64, gamma: f64) -> Mdp {
        validate(&RawMdp {
            num_states: 1,
            num_actions: 1,
            gamma,
            transitions: vec![vec![vec![1.0]]],
            rewards: RawRewards::Flat(vec![r]),
        })
        .unwrap()
    }

    #[test]
    fn scalar_qstar() {
        let m = scalar(0.5, 0.9);
        let q = solve_qstar_policy_iteration(&m).unwrap();
        assert!((q.values()[0] - 5.0).abs() < 1e-12);
        let b = solve_qstar_bruteforce(&m).unwrap();
        assert!((b.values()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_qstar_is_reward() {
        let m = validate(&RawMdp {
            num_states: 2,
            num_actions: 2,
            gamma: 0.0,
            transitions: vec![vec![vec![0.5, 0.5]; 2]; 2],
            rewards: RawRewards::Flat(vec![0.1, 0.2, -0.3, 0.4]),
        })
        .unwrap();
        assert_eq!(solve_qstar_policy_iteration(&m).unwrap().values(), m.rewards());
    }

    #[test]
    fn dominant_action_wins() {
        // identical transitions, action 1 pays more everywhere
        let m = validate(&RawMdp {
            num_states: 2,
            num_actions: 2,
            gamma: 0.8,
            transitions: vec![vec![vec![0.3, 0.7], vec![0.6, 0.4]]; 2],
            rewards: RawRewards::Flat(vec![0.1, -0.2, 0.5, 0.3]),
        })
        .unwrap();
        let q = solve_qstar_bruteforce(&m).unwrap();
        assert_eq!(greedy_policy(&q, &m).actions(), &[1, 1]);
    }

    #[test]
    fn too_many_policies() {
        let n = 13; // 3^13 > 1e6
        let m = validate(&RawMdp {
            num_states: n,
            num_actions: 3,
            gamma: 0.5,
            transitions: vec![vec![{
                let mut r = vec![0.0; n];
                r[0] = 1.0;
                r
            }; n]; 3],
            rewards: RawRewards::Flat(vec![0.0; 3 * n]),
        })
        .unwrap();
        assert!(matches!(solve_qstar_bruteforce(&m), Err(Error::TooManyPolicies { .. })));
    }

    #[test]
    fn scalar_iterates() {
        let m = scalar(0.5, 0.9);
        let t = run_qvi(&m, &QVector::zeros(&m), 2).unwrap();
        let vals: Vec<f64> = t.iterates.iter().map(|q| q.values()[0]).collect();
        assert_eq!(vals[0], 0.0);
        assert!((vals[1] - 0.5).abs() < 1e-15);
        assert!((vals[2] - 0.95).abs() < 1e-15);
        assert_eq!(t.per_step.len(), 3);
    }

    #[test]
    fn orthant_start_values() {
        assert!(orthant_start(&scalar(0.0, 0.9)).values().iter().all(|&x| (x + 10.0).abs() < 1e-12));
        assert_eq!(orthant_start(&scalar(0.0, 0.0)).values()[0], -1.0);
    }

    #[test]
    fn fixed_point_trace_is_flat() {
        let m = scalar(0.5, 0.9);
        let qstar = solve_qstar_policy_iteration(&m).unwrap();
        let t = run_qvi_with_qstar(&m, &qstar, &qstar, 10).unwrap();
        for q in &t.iterates {
            assert!((q.values()[0] - 5.0).abs() < 1e-12);
        }
        let cert = LyapunovCertificate::build(
            &system_matrix(&qstar, &m),
            0.9,
            0.05,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let r = check_invariants(&t, Some(&cert));
        assert!(r.all_passed());
        assert_eq!(r.m_norm_contraction.status, ClaimStatus::Pass);
    }

    #[test]
    fn claims_gate_on_start() {
        let m = scalar(0.5, 0.9);
        let t = run_qvi(&m, &QVector::constant(&m, 8.0), 5).unwrap();
        let r = check_invariants(&t, None);
        assert_eq!(r.orthant_invariance.status, ClaimStatus::NotApplicable);
        assert_eq!(r.infnorm_contraction.status, ClaimStatus::Pass);
        let t = run_qvi(&m, &orthant_start(&m), 5).unwrap();
        let r = check_invariants(&t, None);
        assert_eq!(r.orthant_invariance.status, ClaimStatus::Pass);
        assert_eq!(r.m_norm_contraction.status, ClaimStatus::NotApplicable);
    }

    #[test]
    fn corrupted_trace_fails() {
        let m = scalar(0.5, 0.9);
        let mut t = run_qvi(&m, &orthant_start(&m), 5).unwrap();
        t.iterates[3] = QVector::constant(&m, 6.0);
        let r = check_invariants(&t, None);
        assert_eq!(r.orthant_invariance.status, ClaimStatus::Fail);
        assert_eq!(r.orthant_invariance.worst_k, Some(3));
        assert!(matches!(r.into_result(), Err(Error::ClaimViolation { .. })));
    }
}
