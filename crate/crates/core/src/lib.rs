//! Discounted-MDP Q-value iteration viewed as a switched affine system.
//!
//! The error `Q_k - Q*` of value iteration evolves as
//! `Δ_{k+1} = A_{Q_k} Δ_k + b_{Q_k}` with `A_Q = gamma P Pi_Q`, and is pinned
//! between the positive linear systems driven by `A_{Q*}` and `A_{Q_k}`.
//! This crate builds those systems, constructs quadratic (`M`) and linear
//! (`v`) Lyapunov certificates for the lower one, and checks every
//! per-iteration inequality they imply on concrete instances.

pub mod certificate;
pub mod engine;
pub mod error;
pub mod mdp;
pub mod policy;
pub mod switching;
pub mod workbench;

pub use certificate::{
    lyapunov_matrix, lyapunov_vector, verify_m_bounds, verify_v_bounds, weighted_norm,
    LyapunovCertificate,
};
pub use engine::{
    check_invariants, orthant_start, run_qvi, run_qvi_with_qstar, solve_qstar_bruteforce,
    solve_qstar_policy_iteration, ClaimStatus, InvariantReport, QviTrace,
};
pub use error::{Error, Result};
pub use mdp::{validate, DeterministicPolicy, Mdp, QVector, RawMdp, RawRewards};
pub use policy::{action_transition_matrix, bellman_operator, greedy_policy, ActionTransitionMatrix};
pub use switching::{
    affine_term, sandwich_bounds, system_matrix, verify_infnorm_lemma, SwitchedAffineSystem,
};
