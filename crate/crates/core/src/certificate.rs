//! Lyapunov certificates for the lower comparison system `x_{k+1} = A_{Q*} x_k`.
//!
//! The quadratic certificate is
//!
//! ```text
//! M = sum_{k>=0} (gamma + eps)^{-2k} (A^k)^T A^k,   A^T M A = (gamma + eps)^2 (M - I)
//! ```
//!
//! and the linear one, for a positive weight `w`, is
//!
//! ```text
//! v = (sum_{i>=0} (gamma + eps)^{-i} A^i)^T w,      v^T A = (gamma + eps)(v^T - w^T)
//! ```
//!
//! `M` is built by summing the series term by term, which keeps it entrywise
//! nonnegative by construction. `v` is one linear solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::switching::{inf_norm, inf_norm_matrix};

/// Series terms with sup-norm below this are dropped.
pub const SERIES_CUTOFF: f64 = 1e-14;
/// Guards malformed input; valid `A` converges long before this.
pub const MAX_SERIES_TERMS: usize = 1_000_000;
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-8;
pub const EQ5_RESIDUAL_TOL: f64 = 1e-9;
pub const LAMBDA_MIN_TOL: f64 = 1e-9;
pub const LAMBDA_MAX_TOL: f64 = 1e-6;
pub const NONNEGATIVE_TOL: f64 = 1e-12;

/// `(1 - gamma) / 2`
pub fn default_epsilon(gamma: f64) -> f64 {
    (1.0 - gamma) / 2.0
}

fn check_epsilon(gamma: f64, epsilon: f64) -> Result<f64> {
    let rate = gamma + epsilon;
    if !(epsilon > 0.0 && rate > 0.0 && rate < 1.0) {
        return Err(Error::BadEpsilon { gamma, epsilon });
    }
    Ok(rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDiagnostics {
    /// `||A^T M A - (gamma+eps)^2 (M - I)||_inf`
    pub lyapunov_residual: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub min_entry: f64,
    /// Number of series terms summed, including `k = 0`.
    pub series_terms: usize,
}

/// `M` and its diagnostics.
pub fn lyapunov_matrix(
    a_star: &DMatrix<f64>,
    gamma: f64,
    epsilon: f64,
) -> Result<(DMatrix<f64>, MatrixDiagnostics)> {
    let rate = check_epsilon(gamma, epsilon)?;
    let n = a_star.nrows();
    if a_star.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "A (square)",
            expected: n,
            got: a_star.ncols(),
        });
    }
    let scaled = a_star / rate;
    // power = (A / rate)^k
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut terms = 1;
    loop {
        if terms >= MAX_SERIES_TERMS {
            return Err(Error::NonConvergentSeries(MAX_SERIES_TERMS));
        }
        power = &power * &scaled;
        let term = power.transpose() * &power;
        let size = inf_norm_matrix(&term);
        if !size.is_finite() {
            return Err(Error::NonConvergentSeries(terms));
        }
        if size < SERIES_CUTOFF {
            break;
        }
        m += term;
        terms += 1;
    }
    // the series is symmetric term by term; remove rounding asymmetry
    let m = (&m + m.transpose()) * 0.5;

    let residual = a_star.transpose() * &m * a_star - (&m - DMatrix::identity(n, n)) * (rate * rate);
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let diag = MatrixDiagnostics {
        lyapunov_residual: inf_norm_matrix(&residual),
        lambda_min: eig.min(),
        lambda_max: eig.max(),
        min_entry: m.min(),
        series_terms: terms,
    };
    Ok((m, diag))
}

/// `v` solving `(I - A^T / (gamma + eps)) v = w`, plus the residual
/// `||v^T A - (gamma+eps)(v^T - w^T)||_inf`.
pub fn lyapunov_vector(
    a_star: &DMatrix<f64>,
    gamma: f64,
    epsilon: f64,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let rate = check_epsilon(gamma, epsilon)?;
    let n = a_star.nrows();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            what: "w",
            expected: n,
            got: w.len(),
        });
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveW { index, value });
    }
    let system = DMatrix::identity(n, n) - a_star.transpose() / rate;
    let v = system.lu().solve(w).ok_or(Error::SingularEvaluation)?;
    let residual = inf_norm(&(a_star.transpose() * &v - (&v - w) * rate));
    Ok((v, residual))
}

/// `sqrt(x^T M x)`
pub fn weighted_norm(m_matrix: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m_matrix * x)).max(0.0).sqrt()
}

/// Quadratic and linear certificates for one `(A_{Q*}, eps, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub gamma: f64,
    pub epsilon: f64,
    pub m_matrix: DMatrix<f64>,
    pub w_vector: DVector<f64>,
    pub v_vector: DVector<f64>,
    pub diagnostics: CertificateDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDiagnostics {
    #[serde(flatten)]
    pub matrix: MatrixDiagnostics,
    /// `||v^T A - (gamma+eps)(v^T - w^T)||_inf`
    pub eq5_residual: f64,
}

impl LyapunovCertificate {
    pub fn build(a_star: &DMatrix<f64>, gamma: f64, epsilon: f64, w: DVector<f64>) -> Result<Self> {
        let (m_matrix, matrix) = lyapunov_matrix(a_star, gamma, epsilon)?;
        let (v_vector, eq5_residual) = lyapunov_vector(a_star, gamma, epsilon, &w)?;
        Ok(Self {
            gamma,
            epsilon,
            m_matrix,
            w_vector: w,
            v_vector,
            diagnostics: CertificateDiagnostics {
                matrix,
                eq5_residual,
            },
        })
    }

    /// `gamma + eps`
    pub fn rate(&self) -> f64 {
        self.gamma + self.epsilon
    }

    pub fn m_norm(&self, x: &DVector<f64>) -> f64 {
        weighted_norm(&self.m_matrix, x)
    }

    pub fn v_functional(&self, x: &DVector<f64>) -> f64 {
        self.v_vector.dot(x)
    }

    pub fn to_record(&self) -> CertificateRecord {
        CertificateRecord {
            gamma: self.gamma,
            epsilon: self.epsilon,
            dim: self.m_matrix.nrows(),
            w: self.w_vector.iter().copied().collect(),
            v: self.v_vector.iter().copied().collect(),
            m_matrix: self
                .m_matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn from_record(rec: &CertificateRecord) -> Result<Self> {
        let n = rec.dim;
        let bad = |what, got| Error::DimensionMismatch {
            what,
            expected: n,
            got,
        };
        for (what, len) in [("certificate w", rec.w.len()), ("certificate v", rec.v.len())] {
            if len != n {
                return Err(bad(what, len));
            }
        }
        if let Some(r) = rec.m_matrix.iter().find(|r| r.len() != n) {
            return Err(bad("certificate matrix row", r.len()));
        }
        if rec.m_matrix.len() != n {
            return Err(bad("certificate matrix", rec.m_matrix.len()));
        }
        let flat: Vec<f64> = rec.m_matrix.iter().flatten().copied().collect();
        Ok(Self {
            gamma: rec.gamma,
            epsilon: rec.epsilon,
            m_matrix: DMatrix::from_row_slice(n, n, &flat),
            w_vector: DVector::from_column_slice(&rec.w),
            v_vector: DVector::from_column_slice(&rec.v),
            diagnostics: rec.diagnostics.clone(),
        })
    }
}

/// JSON layout of a certificate; `m_matrix` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub gamma: f64,
    pub epsilon: f64,
    pub dim: usize,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub m_matrix: Vec<Vec<f64>>,
    pub diagnostics: CertificateDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MBoundsReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `|S||A| / (1 - (gamma / (gamma + eps))^2)`
    pub lambda_max_bound: f64,
    pub min_entry: f64,
    pub lyapunov_residual: f64,
}

/// Eigenvalue bounds, nonnegativity and the Lyapunov identity of `M`.
///
/// Eigenvalues are recomputed from `cert.m_matrix`, not read from the
/// stored diagnostics.
pub fn verify_m_bounds(cert: &LyapunovCertificate, mdp: &Mdp) -> Result<MBoundsReport> {
    let n = cert.m_matrix.nrows();
    if n != mdp.dim() {
        return Err(Error::DimensionMismatch {
            what: "certificate vs MDP",
            expected: mdp.dim(),
            got: n,
        });
    }
    let rate = cert.rate();
    let eig = SymmetricEigen::new(cert.m_matrix.clone()).eigenvalues;
    let ratio = cert.gamma / rate;
    let report = MBoundsReport {
        lambda_min: eig.min(),
        lambda_max: eig.max(),
        lambda_max_bound: n as f64 / (1.0 - ratio * ratio),
        min_entry: cert.m_matrix.min(),
        lyapunov_residual: cert.diagnostics.matrix.lyapunov_residual,
    };
    if report.lambda_min < 1.0 - LAMBDA_MIN_TOL {
        return Err(Error::CertificateInvalid(format!(
            "lambda_min(M) = {} < 1",
            report.lambda_min
        )));
    }
    if report.lambda_max > report.lambda_max_bound + LAMBDA_MAX_TOL {
        return Err(Error::CertificateInvalid(format!(
            "lambda_max(M) = {} exceeds {}",
            report.lambda_max, report.lambda_max_bound
        )));
    }
    if report.min_entry < -NONNEGATIVE_TOL {
        return Err(Error::CertificateInvalid(format!(
            "M has negative entry {}",
            report.min_entry
        )));
    }
    if report.lyapunov_residual.is_nan() || report.lyapunov_residual > LYAPUNOV_RESIDUAL_TOL {
        return Err(Error::CertificateInvalid(format!(
            "Lyapunov residual {:e} exceeds {:e}",
            report.lyapunov_residual, LYAPUNOV_RESIDUAL_TOL
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBoundsReport {
    pub v_inf: f64,
    pub w_inf: f64,
    pub w_l1: f64,
    pub min_v: f64,
    /// `||w||_1 / (1 - gamma)`, informational only.
    pub stated_upper_bound: f64,
    pub stated_upper_holds: bool,
    /// `||w||_1 (gamma + eps) / eps`
    pub corrected_upper_bound: f64,
    pub corrected_upper_holds: bool,
    pub lower_holds: bool,
}

/// Norm bounds on `v`.
///
/// The upper bound `||w||_1 / (1 - gamma)` ignores the `(gamma+eps)^{-i}`
/// weights of the series and fails already for a single state (v = 19 > 10
/// at gamma = 0.9, eps = 0.05). It is recorded but never fails the check.
/// Keeping the weights gives `||v||_inf <= ||v||_1 <= ||w||_1 (gamma+eps)/eps`,
/// which is enforced.
pub fn verify_v_bounds(
    v: &DVector<f64>,
    w: &DVector<f64>,
    gamma: f64,
    epsilon: f64,
) -> Result<VBoundsReport> {
    let rate = check_epsilon(gamma, epsilon)?;
    let v_inf = inf_norm(v);
    let w_inf = inf_norm(w);
    let w_l1 = w.iter().map(|x| x.abs()).sum::<f64>();
    let stated = w_l1 / (1.0 - gamma);
    let corrected = w_l1 * rate / epsilon;
    // rounding room for the equality cases
    let slack = 1e-12 * corrected.max(1.0);
    let report = VBoundsReport {
        v_inf,
        w_inf,
        w_l1,
        min_v: v.min(),
        stated_upper_bound: stated,
        stated_upper_holds: v_inf <= stated + slack,
        corrected_upper_bound: corrected,
        corrected_upper_holds: v_inf <= corrected + slack,
        lower_holds: v_inf >= w_inf - 1e-12 * w_inf.max(1.0),
    };
    if report.min_v.is_nan() || report.min_v <= 0.0 {
        return Err(Error::CertificateInvalid(format!("v has nonpositive entry {}", report.min_v)));
    }
    if !report.lower_holds {
        return Err(Error::CertificateInvalid(format!(
            "||v||_inf = {v_inf} < ||w||_inf = {w_inf}"
        )));
    }
    if !report.corrected_upper_holds {
        return Err(Error::CertificateInvalid(format!(
            "||v||_inf = {v_inf} exceeds ||w||_1 (gamma+eps)/eps = {corrected}"
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_a(g: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, g)
    }

    #[test]
    fn scalar_matrix_is_geometric_series() {
        let (m, d) = lyapunov_matrix(&scalar_a(0.9), 0.9, 0.05).unwrap();
        let want = 361.0 / 37.0;
        assert!((m[(0, 0)] - want).abs() < 1e-11, "{}", m[(0, 0)]);
        assert!(d.lyapunov_residual < 1e-11);
        let bound = 1.0 / (1.0 - (0.9f64 / 0.95).powi(2));
        assert!((bound - want).abs() < 1e-11);
    }

    #[test]
    fn zero_discount_gives_identity() {
        for eps in [0.1, 0.5, 0.99] {
            let (m, d) = lyapunov_matrix(&DMatrix::zeros(3, 3), 0.0, eps).unwrap();
            assert_eq!(m, DMatrix::identity(3, 3));
            assert_eq!(d.series_terms, 1);
            let w = DVector::from_vec(vec![1.0, 2.0, 0.5]);
            let (v, r) = lyapunov_vector(&DMatrix::zeros(3, 3), 0.0, eps, &w).unwrap();
            assert_eq!(v, w);
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn bad_epsilon() {
        let a = scalar_a(0.9);
        for eps in [0.0, -0.1, 0.1, 0.2] {
            assert!(matches!(lyapunov_matrix(&a, 0.9, eps), Err(Error::BadEpsilon { .. })), "{eps}");
        }
        let w = DVector::from_element(1, 1.0);
        assert!(matches!(lyapunov_vector(&a, 0.9, 0.1, &w), Err(Error::BadEpsilon { .. })));
    }

    #[test]
    fn nonpositive_w() {
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            lyapunov_vector(&DMatrix::zeros(2, 2), 0.5, 0.1, &w),
            Err(Error::NonPositiveW { index: 1, .. })
        ));
    }

    #[test]
    fn malformed_a_is_caught() {
        // spectral radius above gamma + eps
        let a = DMatrix::from_element(1, 1, 2.0);
        assert!(matches!(lyapunov_matrix(&a, 0.5, 0.1), Err(Error::NonConvergentSeries(_))));
    }

    #[test]
    fn scalar_vector() {
        let w = DVector::from_element(1, 1.0);
        let (v, r) = lyapunov_vector(&scalar_a(0.9), 0.9, 0.05, &w).unwrap();
        assert!((v[0] - 19.0).abs() < 1e-12);
        assert!(r < 1e-12);
        let rep = verify_v_bounds(&v, &w, 0.9, 0.05).unwrap();
        assert!(!rep.stated_upper_holds);
        assert_eq!(rep.stated_upper_bound, 1.0 / (1.0 - 0.9));
        assert!(rep.corrected_upper_holds);
        assert!((rep.corrected_upper_bound - 19.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_norm_examples() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(weighted_norm(&DMatrix::identity(2, 2), &x), 5.0);
        assert_eq!(weighted_norm(&DMatrix::identity(2, 2), &DVector::zeros(2)), 0.0);
        let m = DMatrix::from_element(1, 1, 361.0 / 37.0);
        let got = weighted_norm(&m, &DVector::from_element(1, 1.0));
        assert!((got - 3.123_580_758_801_788_5).abs() < 1e-12, "{got}");
    }

    #[test]
    fn record_round_trip() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.4]);
        let cert = LyapunovCertificate::build(&a, 0.5, 0.25, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let json = serde_json::to_string(&cert.to_record()).unwrap();
        let back: CertificateRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(LyapunovCertificate::from_record(&back).unwrap(), cert);
    }
}
