//! generate -> solve -> certify -> trace -> verify, with artifacts on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::config::{ExperimentConfig, Q0Mode, WMode};
use super::generate::{generate_mdp, random_q0, random_weights, RNG_ALGORITHM};
use super::io::{
    emit_halfplane_data, load_mdp, load_qvector, read_json, save_mdp, write_json, write_trace_csv,
    QStarRecord,
};
use crate::certificate::{
    verify_m_bounds, verify_v_bounds, CertificateRecord, LyapunovCertificate, MBoundsReport,
    VBoundsReport, EQ5_RESIDUAL_TOL,
};
use crate::engine::{
    check_invariants, orthant_start, run_qvi_with_qstar, solve_qstar_bruteforce,
    solve_qstar_policy_iteration, ClaimStatus, InvariantReport, QviTrace,
};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, QVector};
use crate::policy::{bellman_operator, greedy_policy};
use crate::switching::{inf_norm, inf_norm_matrix, system_matrix};

pub const QSTAR_RESIDUAL_TOL: f64 = 1e-10;
pub const ORACLE_TOL: f64 = 1e-9;
/// Brute-force cross-check of `Q*` runs when `|A|^|S|` is at most this.
pub const ORACLE_POLICY_LIMIT: f64 = 10_000.0;

pub const MDP_FILE: &str = "mdp.json";
pub const QSTAR_FILE: &str = "qstar.json";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const HALFPLANE_FILE: &str = "halfplane.csv";

#[derive(Debug, Clone, Serialize)]
pub struct QStarCheck {
    pub method: &'static str,
    pub bellman_residual: f64,
    pub residual_status: ClaimStatus,
    /// `||Q*_PI - Q*_enum||_inf` when enumeration is affordable.
    pub oracle_gap: Option<f64>,
    pub oracle_status: ClaimStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome<T> {
    pub status: ClaimStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<T> CheckOutcome<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(report) => Self {
                status: ClaimStatus::Pass,
                report: Some(report),
                error: None,
            },
            Err(e) => Self {
                status: ClaimStatus::Fail,
                report: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Eq5Check {
    pub residual: f64,
    pub status: ClaimStatus,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rng_algorithm: &'static str,
    pub config: Option<ExperimentConfig>,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub num_iters: usize,
    pub q0_in_orthant: bool,
    pub qstar: QStarCheck,
    pub m_bounds: CheckOutcome<MBoundsReport>,
    pub v_bounds: CheckOutcome<VBoundsReport>,
    pub eq5: Eq5Check,
    pub invariants: InvariantReport,
    pub failed_clauses: Vec<String>,
    pub passed: bool,
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub trace: QviTrace,
    pub certificate: LyapunovCertificate,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed {
            0
        } else {
            1
        }
    }
}

fn status(ok: bool) -> ClaimStatus {
    if ok {
        ClaimStatus::Pass
    } else {
        ClaimStatus::Fail
    }
}

pub fn check_qstar(mdp: &Mdp, qstar: &QVector) -> Result<QStarCheck> {
    let residual = inf_norm(&bellman_operator(qstar, mdp).diff(qstar));
    let policies = (mdp.num_actions() as f64).powi(mdp.num_states() as i32);
    let oracle_gap = if policies <= ORACLE_POLICY_LIMIT {
        Some(inf_norm(&solve_qstar_bruteforce(mdp)?.diff(qstar)))
    } else {
        None
    };
    Ok(QStarCheck {
        method: "policy-iteration",
        bellman_residual: residual,
        residual_status: status(residual <= QSTAR_RESIDUAL_TOL),
        oracle_status: match oracle_gap {
            Some(g) => status(g <= ORACLE_TOL),
            None => ClaimStatus::NotApplicable,
        },
        oracle_gap,
    })
}

/// Recomputes the diagnostics of a certificate against `a_star` instead of
/// trusting stored values.
pub fn recheck_certificate(cert: &LyapunovCertificate, a_star: &DMatrix<f64>) -> LyapunovCertificate {
    let n = cert.m_matrix.nrows();
    let rate = cert.rate();
    let m = &cert.m_matrix;
    let lyap = a_star.transpose() * m * a_star - (m - DMatrix::identity(n, n)) * (rate * rate);
    let eq5 = a_star.transpose() * &cert.v_vector - (&cert.v_vector - &cert.w_vector) * rate;
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let mut out = cert.clone();
    out.diagnostics.matrix.lyapunov_residual = inf_norm_matrix(&lyap);
    out.diagnostics.matrix.lambda_min = eig.min();
    out.diagnostics.matrix.lambda_max = eig.max();
    out.diagnostics.matrix.min_entry = m.min();
    out.diagnostics.eq5_residual = inf_norm(&eq5);
    out
}

/// Every check for a given model, ground truth, certificate and start.
pub fn evaluate(
    mdp: &Mdp,
    qstar: &QVector,
    cert: &LyapunovCertificate,
    q0: &QVector,
    num_iters: usize,
    config: Option<ExperimentConfig>,
) -> Result<ExperimentOutcome> {
    let qstar_check = check_qstar(mdp, qstar)?;
    let m_bounds = CheckOutcome::from_result(verify_m_bounds(cert, mdp));
    let v_bounds = CheckOutcome::from_result(verify_v_bounds(
        &cert.v_vector,
        &cert.w_vector,
        cert.gamma,
        cert.epsilon,
    ));
    let eq5 = Eq5Check {
        residual: cert.diagnostics.eq5_residual,
        status: status(cert.diagnostics.eq5_residual <= EQ5_RESIDUAL_TOL),
    };

    let mut trace = run_qvi_with_qstar(mdp, qstar, q0, num_iters)?;
    trace.attach_certificate(cert);
    let invariants = check_invariants(&trace, Some(cert));

    let mut failed = Vec::new();
    let mut note = |name: &str, s: ClaimStatus| {
        if s == ClaimStatus::Fail {
            failed.push(name.to_owned());
        }
    };
    note("qstar_residual", qstar_check.residual_status);
    note("qstar_oracle", qstar_check.oracle_status);
    note("m_bounds", m_bounds.status);
    note("v_bounds", v_bounds.status);
    note("eq5_residual", eq5.status);
    for (name, c) in invariants.claims() {
        note(name, c.status);
    }

    let report = ExperimentReport {
        rng_algorithm: RNG_ALGORITHM,
        config,
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        gamma: mdp.gamma(),
        epsilon: cert.epsilon,
        num_iters,
        q0_in_orthant: trace.starts_in_orthant(),
        qstar: qstar_check,
        m_bounds,
        v_bounds,
        eq5,
        invariants,
        passed: failed.is_empty(),
        failed_clauses: failed,
    };
    Ok(ExperimentOutcome {
        report,
        trace,
        certificate: cert.clone(),
    })
}

pub fn weights_for(mode: WMode, dim: usize, seed: u64) -> DVector<f64> {
    match mode {
        WMode::Ones => DVector::from_element(dim, 1.0),
        WMode::RandomPositive => random_weights(dim, seed, 1).remove(0),
    }
}

pub fn initial_q(mode: &Q0Mode, mdp: &Mdp, seed: u64) -> Result<QVector> {
    Ok(match mode {
        Q0Mode::Orthant => orthant_start(mdp),
        Q0Mode::Random => random_q0(mdp, seed),
        Q0Mode::Zero => QVector::zeros(mdp),
        Q0Mode::CustomFile(p) => load_qvector(p, mdp)?,
    })
}

/// The MDP named by the config: loaded from `mdp_file`, or generated from the seed.
pub fn config_mdp(config: &ExperimentConfig) -> Result<Mdp> {
    match &config.mdp_file {
        Some(p) => load_mdp(p),
        None => generate_mdp(config.seed, config.num_states, config.num_actions, config.gamma),
    }
}

/// Certificates for the half-plane table: the run's own first, then
/// `halfplane_draws` random-positive weights at the same epsilon.
fn halfplane_certificates(
    config: &ExperimentConfig,
    cert: &LyapunovCertificate,
    a_star: &DMatrix<f64>,
) -> Result<Vec<LyapunovCertificate>> {
    let mut certs = vec![cert.clone()];
    if config.halfplane_draws > 0 {
        let dim = a_star.nrows();
        // skip the draw already used by a random-positive run certificate
        let skip = usize::from(config.w_mode == WMode::RandomPositive);
        for w in random_weights(dim, config.seed, skip + config.halfplane_draws)
            .into_iter()
            .skip(skip)
        {
            certs.push(LyapunovCertificate::build(a_star, cert.gamma, cert.epsilon, w)?);
        }
    }
    Ok(certs)
}

/// Runs one experiment and writes `mdp.json`, `qstar.json`,
/// `certificate.json`, `trace.csv`, `halfplane.csv` and `report.json` into
/// `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mdp = config_mdp(config)?;
    let epsilon = config.check_epsilon(mdp.gamma())?;
    let qstar = solve_qstar_policy_iteration(&mdp)?;
    let a_star = system_matrix(&qstar, &mdp);
    let w = weights_for(config.w_mode, mdp.dim(), config.seed);
    let cert = LyapunovCertificate::build(&a_star, mdp.gamma(), epsilon, w)?;
    let q0 = initial_q(&config.q0_mode, &mdp, config.seed)?;

    let outcome = evaluate(&mdp, &qstar, &cert, &q0, config.num_iters, Some(config.clone()))?;

    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    save_mdp(&dir.join(MDP_FILE), &mdp)?;
    write_json(
        &dir.join(QSTAR_FILE),
        &QStarRecord::new(
            &mdp,
            &qstar,
            &greedy_policy(&qstar, &mdp),
            outcome.report.qstar.method,
            outcome.report.qstar.bellman_residual,
        ),
    )?;
    write_json(&dir.join(CERTIFICATE_FILE), &cert.to_record())?;
    write_trace_csv(&outcome.trace, BufWriter::new(File::create(dir.join(TRACE_FILE))?))?;
    let certs = halfplane_certificates(config, &cert, &a_star)?;
    emit_halfplane_data(
        &outcome.trace,
        &certs,
        BufWriter::new(File::create(dir.join(HALFPLANE_FILE))?),
    )?;
    write_json(&dir.join(REPORT_FILE), &outcome.report)?;
    Ok(outcome)
}

/// Re-checks the artifacts in `dir` from scratch: the stored `Q*` against a
/// fresh solve, the stored certificate against `A_{Q*}` rebuilt from the
/// stored MDP, and a fresh trace from `q0_mode`.
pub fn verify_artifacts(
    dir: &Path,
    q0_mode: &Q0Mode,
    num_iters: usize,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let mdp = load_mdp(&dir.join(MDP_FILE))?;
    let qstar = load_qvector(&dir.join(QSTAR_FILE), &mdp)?;
    let rec: CertificateRecord = read_json(&dir.join(CERTIFICATE_FILE))?;
    let stored = LyapunovCertificate::from_record(&rec)?;
    if stored.m_matrix.nrows() != mdp.dim() {
        return Err(Error::DimensionMismatch {
            what: "certificate vs MDP",
            expected: mdp.dim(),
            got: stored.m_matrix.nrows(),
        });
    }
    if (stored.gamma - mdp.gamma()).abs() > 0.0 {
        return Err(Error::Config(format!(
            "certificate gamma {} differs from MDP gamma {}",
            stored.gamma,
            mdp.gamma()
        )));
    }
    let fresh = solve_qstar_policy_iteration(&mdp)?;
    let gap = inf_norm(&fresh.diff(&qstar));
    let a_star = system_matrix(&qstar, &mdp);
    let cert = recheck_certificate(&stored, &a_star);
    let q0 = initial_q(q0_mode, &mdp, seed)?;
    let mut outcome = evaluate(&mdp, &qstar, &cert, &q0, num_iters, None)?;
    if gap > ORACLE_TOL {
        outcome.report.failed_clauses.push("qstar_matches_fresh_solve".into());
        outcome.report.passed = false;
    }
    Ok(outcome)
}

/// Output directory for one seed of a batch.
pub fn batch_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed:06}"))
}
