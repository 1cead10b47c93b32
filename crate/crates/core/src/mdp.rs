//! MDP data model, canonical state-action indexing and validation.
//!
//! All state-action vectors use action-major layout: the entry for `(s, a)`
//! sits at `a * |S| + s`, so a vector is the stack `[Q(., 0); Q(., 1); ...]`.
//! The stacked transition matrix `P` uses the same row layout, which lets
//! `P`, `R` and `Q` be combined without permutation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Flat position of `(state, action)` for a model with `num_states` states.
#[inline]
pub fn flat_index_unchecked(state: usize, action: usize, num_states: usize) -> usize {
    action * num_states + state
}

/// Validated discounted MDP. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    /// `|S||A| x |S|`, row `a*|S| + s` is `P(. | s, a)`.
    transitions: DMatrix<f64>,
    /// Expected one-step reward `R(s, a)`, action-major.
    rewards: DVector<f64>,
}

/// Rewards as they appear on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawRewards {
    /// Expected rewards `R(s, a)`, action-major.
    Flat(Vec<f64>),
    /// Per-transition rewards `r(s, a, s')` indexed `[action][from][to]`.
    Tensor(Vec<Vec<Vec<f64>>>),
}

/// Unvalidated MDP fields, in the `mdp.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// `[action][from][to]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: RawRewards,
}

/// Checks every standing assumption and builds an [`Mdp`].
///
/// A per-transition reward tensor is bounds-checked entrywise and then
/// contracted to `R(s, a) = sum_s' P(s'|s,a) r(s,a,s')`.
pub fn validate(raw: &RawMdp) -> Result<Mdp> {
    let (ns, na) = (raw.num_states, raw.num_actions);
    if ns == 0 || na == 0 {
        return Err(Error::Config("num_states and num_actions must be positive".into()));
    }
    if raw.transitions.len() != na {
        return Err(Error::DimensionMismatch {
            what: "transitions (actions)",
            expected: na,
            got: raw.transitions.len(),
        });
    }
    let mut p = DMatrix::zeros(ns * na, ns);
    for (a, block) in raw.transitions.iter().enumerate() {
        if block.len() != ns {
            return Err(Error::DimensionMismatch {
                what: "transitions (from-states)",
                expected: ns,
                got: block.len(),
            });
        }
        for (s, row) in block.iter().enumerate() {
            if row.len() != ns {
                return Err(Error::DimensionMismatch {
                    what: "transitions (to-states)",
                    expected: ns,
                    got: row.len(),
                });
            }
            for (t, &x) in row.iter().enumerate() {
                p[(flat_index_unchecked(s, a, ns), t)] = x;
            }
        }
    }

    let rewards = match &raw.rewards {
        RawRewards::Flat(r) => {
            if r.len() != ns * na {
                return Err(Error::DimensionMismatch {
                    what: "rewards",
                    expected: ns * na,
                    got: r.len(),
                });
            }
            DVector::from_column_slice(r)
        }
        RawRewards::Tensor(r) => {
            if r.len() != na || r.iter().any(|b| b.len() != ns || b.iter().any(|row| row.len() != ns)) {
                return Err(Error::Config(format!(
                    "reward tensor must be shaped [{na}][{ns}][{ns}]"
                )));
            }
            let mut out = DVector::zeros(ns * na);
            for (a, block) in r.iter().enumerate() {
                for (s, row) in block.iter().enumerate() {
                    let i = flat_index_unchecked(s, a, ns);
                    for (t, &x) in row.iter().enumerate() {
                        if !x.is_finite() {
                            return Err(Error::NonFinite("rewards"));
                        }
                        if x.abs() > 1.0 {
                            return Err(Error::RewardOutOfBounds { index: i, value: x });
                        }
                        out[i] += p[(i, t)] * x;
                    }
                }
            }
            out
        }
    };

    Mdp::new(ns, na, raw.gamma, p, rewards)
}

impl Mdp {
    /// Builds from the stacked matrices directly.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transitions: DMatrix<f64>,
        rewards: DVector<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Config("num_states and num_actions must be positive".into()));
        }
        let n = num_states * num_actions;
        if transitions.shape() != (n, num_states) {
            return Err(Error::DimensionMismatch {
                what: "transition matrix rows",
                expected: n,
                got: transitions.nrows(),
            });
        }
        if rewards.len() != n {
            return Err(Error::DimensionMismatch {
                what: "rewards",
                expected: n,
                got: rewards.len(),
            });
        }
        if !gamma.is_finite() {
            return Err(Error::NonFinite("gamma"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::BadGamma(gamma));
        }
        if transitions.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transitions"));
        }
        if rewards.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("rewards"));
        }
        for (row, r) in transitions.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            let in_range = r.iter().all(|&x| (0.0..=1.0).contains(&x));
            if !in_range || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NonStochasticRow { row, sum });
            }
        }
        if let Some((index, &value)) = rewards.iter().enumerate().find(|(_, r)| r.abs() > 1.0) {
            return Err(Error::RewardOutOfBounds { index, value });
        }
        Ok(Self {
            num_states,
            num_actions,
            gamma,
            transitions,
            rewards,
        })
    }

    /// Runs validation again on this model's own fields.
    pub fn revalidate(&self) -> Result<Self> {
        validate(&self.to_raw())
    }

    pub fn to_raw(&self) -> RawMdp {
        let (ns, na) = (self.num_states, self.num_actions);
        let transitions = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|s| {
                        let i = flat_index_unchecked(s, a, ns);
                        (0..ns).map(|t| self.transitions[(i, t)]).collect()
                    })
                    .collect()
            })
            .collect();
        RawMdp {
            num_states: ns,
            num_actions: na,
            gamma: self.gamma,
            transitions,
            rewards: RawRewards::Flat(self.rewards.iter().copied().collect()),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `|S| * |A|`
    pub fn dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    /// `P(next | state, action)`
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transitions[(flat_index_unchecked(state, action, self.num_states), next)]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[flat_index_unchecked(state, action, self.num_states)]
    }

    /// Checked flat index of `(state, action)`.
    pub fn flat_index(&self, state: usize, action: usize) -> Result<usize> {
        if state >= self.num_states || action >= self.num_actions {
            return Err(Error::IndexOutOfRange {
                state,
                action,
                num_states: self.num_states,
                num_actions: self.num_actions,
            });
        }
        Ok(flat_index_unchecked(state, action, self.num_states))
    }

    /// Inverse of [`Mdp::flat_index`]: `(state, action)`.
    pub fn unflatten(&self, index: usize) -> (usize, usize) {
        (index % self.num_states, index / self.num_states)
    }

    /// Upper bound `1 / (1 - gamma)` on the sup-norm of the optimal Q-function.
    pub fn qstar_norm_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }
}

/// A state-action value vector tied to a model's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector {
    num_states: usize,
    num_actions: usize,
    values: DVector<f64>,
}

impl QVector {
    pub fn new(mdp: &Mdp, values: DVector<f64>) -> Result<Self> {
        if values.len() != mdp.dim() {
            return Err(Error::DimensionMismatch {
                what: "Q-vector",
                expected: mdp.dim(),
                got: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Q-vector"));
        }
        Ok(Self {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            values,
        })
    }

    pub fn from_slice(mdp: &Mdp, values: &[f64]) -> Result<Self> {
        Self::new(mdp, DVector::from_column_slice(values))
    }

    pub fn zeros(mdp: &Mdp) -> Self {
        Self::constant(mdp, 0.0)
    }

    pub fn constant(mdp: &Mdp, c: f64) -> Self {
        Self {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            values: DVector::from_element(mdp.dim(), c),
        }
    }

    /// Wraps a vector already known to have the right length.
    pub(crate) fn from_parts(num_states: usize, num_actions: usize, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), num_states * num_actions);
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[flat_index_unchecked(state, action, self.num_states)]
    }

    pub fn is_sized_for(&self, mdp: &Mdp) -> bool {
        self.num_states == mdp.num_states && self.num_actions == mdp.num_actions
    }

    pub(crate) fn check_sized_for(&self, mdp: &Mdp) -> Result<()> {
        if self.is_sized_for(mdp) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "Q-vector",
                expected: mdp.dim(),
                got: self.values.len(),
            })
        }
    }

    /// `self - other` as a plain vector.
    pub fn diff(&self, other: &QVector) -> DVector<f64> {
        &self.values - &other.values
    }
}

/// Deterministic policy: one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(mdp: &Mdp, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != mdp.num_states {
            return Err(Error::DimensionMismatch {
                what: "policy",
                expected: mdp.num_states,
                got: actions.len(),
            });
        }
        if let Some((state, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= mdp.num_actions) {
            return Err(Error::IndexOutOfRange {
                state,
                action,
                num_states: mdp.num_states,
                num_actions: mdp.num_actions,
            });
        }
        Ok(Self { actions })
    }

    pub(crate) fn from_actions_unchecked(actions: Vec<usize>) -> Self {
        Self { actions }
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn num_states(&self) -> usize {
        self.actions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(p: Vec<Vec<Vec<f64>>>, r: Vec<f64>, gamma: f64) -> RawMdp {
        RawMdp {
            num_states: p[0].len(),
            num_actions: p.len(),
            gamma,
            transitions: p,
            rewards: RawRewards::Flat(r),
        }
    }

    #[test]
    fn single_state_is_valid() {
        let m = validate(&raw(vec![vec![vec![1.0]]], vec![0.5], 0.9)).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.reward(0, 0), 0.5);
    }

    #[test]
    fn rejects_row_summing_past_one() {
        let r = raw(vec![vec![vec![0.6, 0.5], vec![0.5, 0.5]]], vec![0.0, 0.0], 0.9);
        assert!(matches!(validate(&r), Err(Error::NonStochasticRow { row: 0, .. })));
    }

    #[test]
    fn rejects_negative_entry_even_if_row_sums_to_one() {
        let r = raw(vec![vec![vec![1.5, -0.5], vec![0.5, 0.5]]], vec![0.0, 0.0], 0.9);
        assert!(matches!(validate(&r), Err(Error::NonStochasticRow { .. })));
    }

    #[test]
    fn rejects_large_reward() {
        let r = raw(vec![vec![vec![1.0]]], vec![1.5], 0.9);
        assert!(matches!(validate(&r), Err(Error::RewardOutOfBounds { .. })));
    }

    #[test]
    fn gamma_range() {
        assert!(validate(&raw(vec![vec![vec![1.0]]], vec![0.0], 0.0)).is_ok());
        for g in [1.0, -0.1, 1.5] {
            let r = raw(vec![vec![vec![1.0]]], vec![0.0], g);
            assert!(matches!(validate(&r), Err(Error::BadGamma(_))), "gamma={g}");
        }
        let r = raw(vec![vec![vec![1.0]]], vec![0.0], f64::NAN);
        assert!(validate(&r).is_err());
    }

    #[test]
    fn reward_tensor_is_contracted() {
        let r = RawMdp {
            num_states: 2,
            num_actions: 1,
            gamma: 0.5,
            transitions: vec![vec![vec![0.25, 0.75], vec![1.0, 0.0]]],
            rewards: RawRewards::Tensor(vec![vec![vec![1.0, -1.0], vec![0.5, 0.9]]]),
        };
        let m = validate(&r).unwrap();
        assert!((m.reward(0, 0) - (0.25 - 0.75)).abs() < 1e-15);
        assert!((m.reward(1, 0) - 0.5).abs() < 1e-15);

        let mut bad = r.clone();
        bad.rewards = RawRewards::Tensor(vec![vec![vec![1.0, -1.0], vec![0.5, 1.2]]]);
        // 1.2 has zero probability but the raw reward is still out of bounds
        assert!(matches!(validate(&bad), Err(Error::RewardOutOfBounds { .. })));
    }

    #[test]
    fn flat_index_examples() {
        let p = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ];
        let m = validate(&raw(p, vec![0.0; 4], 0.9)).unwrap();
        assert_eq!(m.flat_index(0, 0).unwrap(), 0);
        assert_eq!(m.flat_index(1, 0).unwrap(), 1);
        assert_eq!(m.flat_index(0, 1).unwrap(), 2);
        assert_eq!(m.unflatten(3), (1, 1));
        assert!(matches!(m.flat_index(2, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(m.flat_index(0, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn qstar_bound_values() {
        for (g, want) in [(0.9, 10.0), (0.0, 1.0), (0.5, 2.0)] {
            let m = validate(&raw(vec![vec![vec![1.0]]], vec![0.0], g)).unwrap();
            assert!((m.qstar_norm_bound() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn revalidate_is_idempotent() {
        let p = vec![vec![vec![0.3, 0.7], vec![0.9, 0.1]]];
        let m = validate(&raw(p, vec![0.2, -0.4], 0.7)).unwrap();
        assert_eq!(m.revalidate().unwrap(), m);
    }

    #[test]
    fn policy_rejects_bad_action() {
        let m = validate(&raw(vec![vec![vec![1.0]]], vec![0.0], 0.5)).unwrap();
        assert!(DeterministicPolicy::new(&m, vec![1]).is_err());
        assert!(DeterministicPolicy::new(&m, vec![0, 0]).is_err());
        assert!(DeterministicPolicy::new(&m, vec![0]).is_ok());
    }
}
