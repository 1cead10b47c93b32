//! Greedy policies, the action transition matrix and the Bellman optimality operator.

use nalgebra::{DMatrix, DVector};

use crate::mdp::{flat_index_unchecked, DeterministicPolicy, Mdp, QVector};

/// Greedy policy w.r.t. `q`. Ties go to the smallest action index.
pub fn greedy_policy(q: &QVector, mdp: &Mdp) -> DeterministicPolicy {
    debug_assert!(q.is_sized_for(mdp));
    let actions = (0..mdp.num_states())
        .map(|s| {
            let mut best = 0;
            let mut best_val = q.get(s, 0);
            for a in 1..mdp.num_actions() {
                let v = q.get(s, a);
                if v > best_val {
                    best = a;
                    best_val = v;
                }
            }
            best
        })
        .collect();
    DeterministicPolicy::from_actions_unchecked(actions)
}

/// Sparse `|S| x |S||A|` selector `Pi`: row `s` has a single one at `(s, pi(s))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTransitionMatrix {
    num_states: usize,
    num_actions: usize,
    policy: DeterministicPolicy,
}

impl ActionTransitionMatrix {
    pub fn new(policy: &DeterministicPolicy, mdp: &Mdp) -> Self {
        debug_assert_eq!(policy.num_states(), mdp.num_states());
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            policy: policy.clone(),
        }
    }

    pub fn policy(&self) -> &DeterministicPolicy {
        &self.policy
    }

    pub fn nrows(&self) -> usize {
        self.num_states
    }

    pub fn ncols(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Column holding the one in row `state`.
    #[inline]
    pub fn column_of(&self, state: usize) -> usize {
        flat_index_unchecked(state, self.policy.action(state), self.num_states)
    }

    /// `(row, col)` of every nonzero; all nonzeros equal 1.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states).map(move |s| (s, self.column_of(s)))
    }

    /// `Pi x` for `x` of length `|S||A|`: picks `x(s, pi(s))` per state.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.num_states, (0..self.num_states).map(|s| x[self.column_of(s)]))
    }

    /// `Pi^T y` for `y` of length `|S|`.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        for (s, c) in self.nonzeros() {
            out[c] += y[s];
        }
        out
    }

    /// `M Pi` for `M` with `|S|` columns, produced without a dense `Pi`.
    pub fn right_multiply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.ncols(), self.num_states);
        let mut out = DMatrix::zeros(m.nrows(), self.ncols());
        for (s, c) in self.nonzeros() {
            out.set_column(c, &m.column(s));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for (s, c) in self.nonzeros() {
            d[(s, c)] = 1.0;
        }
        d
    }
}

pub fn action_transition_matrix(pi: &DeterministicPolicy, mdp: &Mdp) -> ActionTransitionMatrix {
    ActionTransitionMatrix::new(pi, mdp)
}

/// State-action chain `P Pi` under `pi`; row-stochastic.
pub fn state_action_chain(pi: &DeterministicPolicy, mdp: &Mdp) -> DMatrix<f64> {
    ActionTransitionMatrix::new(pi, mdp).right_multiply(mdp.transitions())
}

/// `F Q = R + gamma P Pi_Q Q`.
pub fn bellman_operator(q: &QVector, mdp: &Mdp) -> QVector {
    let pi = ActionTransitionMatrix::new(&greedy_policy(q, mdp), mdp);
    let next = pi.apply(q.values());
    let values = mdp.rewards() + mdp.gamma() * (mdp.transitions() * next);
    QVector::from_parts(mdp.num_states(), mdp.num_actions(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate, RawMdp, RawRewards};

    fn two_by_two() -> Mdp {
        validate(&RawMdp {
            num_states: 2,
            num_actions: 2,
            gamma: 0.9,
            transitions: vec![
                vec![vec![0.2, 0.8], vec![0.6, 0.4]],
                vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            ],
            rewards: RawRewards::Flat(vec![0.1, -0.3, 0.7, 0.0]),
        })
        .unwrap()
    }

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
    fn greedy_examples() {
        let m = two_by_two();
        let q = QVector::from_slice(&m, &[1.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(greedy_policy(&q, &m).actions(), &[1, 0]);

        let s = scalar(0.0, 0.5);
        assert_eq!(greedy_policy(&QVector::constant(&s, 3.0), &s).actions(), &[0]);
    }

    #[test]
    fn greedy_ties_take_smallest_action() {
        let m = validate(&RawMdp {
            num_states: 3,
            num_actions: 2,
            gamma: 0.5,
            transitions: vec![vec![vec![1.0, 0.0, 0.0]; 3]; 2],
            rewards: RawRewards::Flat(vec![0.0; 6]),
        })
        .unwrap();
        let q = QVector::from_slice(&m, &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]).unwrap();
        assert_eq!(greedy_policy(&q, &m).actions(), &[0, 0, 0]);
    }

    #[test]
    fn selector_examples() {
        let m = two_by_two();
        let pi = DeterministicPolicy::new(&m, vec![1, 0]).unwrap();
        let d = action_transition_matrix(&pi, &m).to_dense();
        assert_eq!(d, DMatrix::from_row_slice(2, 4, &[0., 0., 1., 0., 0., 1., 0., 0.]));

        let s = scalar(0.0, 0.5);
        let pi = DeterministicPolicy::new(&s, vec![0]).unwrap();
        assert_eq!(action_transition_matrix(&pi, &s).to_dense(), DMatrix::identity(1, 1));

        let one_action = validate(&RawMdp {
            num_states: 2,
            num_actions: 1,
            gamma: 0.5,
            transitions: vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
            rewards: RawRewards::Flat(vec![0.0; 2]),
        })
        .unwrap();
        let pi = DeterministicPolicy::new(&one_action, vec![0, 0]).unwrap();
        assert_eq!(action_transition_matrix(&pi, &one_action).to_dense(), DMatrix::identity(2, 2));
    }

    #[test]
    fn sparse_products_match_dense() {
        let m = two_by_two();
        let pi = DeterministicPolicy::new(&m, vec![1, 1]).unwrap();
        let sel = action_transition_matrix(&pi, &m);
        let dense = sel.to_dense();
        assert_eq!(sel.right_multiply(m.transitions()), m.transitions() * &dense);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sel.apply(&x), &dense * &x);
        let y = DVector::from_vec(vec![5.0, 6.0]);
        assert_eq!(sel.apply_transpose(&y), dense.transpose() * &y);
    }

    #[test]
    fn bellman_scalar() {
        let s = scalar(0.5, 0.9);
        let out = bellman_operator(&QVector::constant(&s, 1.0), &s);
        assert!((out.values()[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn bellman_zero_discount_returns_rewards() {
        let m = validate(&RawMdp {
            gamma: 0.0,
            ..two_by_two().to_raw()
        })
        .unwrap();
        let q = QVector::from_slice(&m, &[5.0, -3.0, 8.0, 1.0]).unwrap();
        assert_eq!(bellman_operator(&q, &m).values(), m.rewards());
    }
}
