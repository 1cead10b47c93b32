//! On-disk formats: `mdp.json`, `qstar.json`, `certificate.json`, `trace.csv`
//! and the half-plane table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::LyapunovCertificate;
use crate::engine::QviTrace;
use crate::error::{Error, Result};
use crate::mdp::{validate, DeterministicPolicy, Mdp, QVector, RawMdp};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Pretty-printed, trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_mdp(path: &Path) -> Result<Mdp> {
    let raw: RawMdp = read_json(path)?;
    validate(&raw)
}

pub fn save_mdp(path: &Path, mdp: &Mdp) -> Result<()> {
    write_json(path, &mdp.to_raw())
}

/// `qstar.json`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStarRecord {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub method: String,
    pub bellman_residual: f64,
    pub policy: Vec<usize>,
    /// Action-major `Q*(s, a)`.
    pub values: Vec<f64>,
}

impl QStarRecord {
    pub fn new(mdp: &Mdp, qstar: &QVector, policy: &DeterministicPolicy, method: &str, residual: f64) -> Self {
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            gamma: mdp.gamma(),
            method: method.to_owned(),
            bellman_residual: residual,
            policy: policy.actions().to_vec(),
            values: qstar.values().iter().copied().collect(),
        }
    }
}

/// A Q-vector file: either a bare array or any object with a `values` array
/// (so `qstar.json` can be reused as a start point).
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum QFile {
    Bare(Vec<f64>),
    Object { values: Vec<f64> },
}

pub fn load_qvector(path: &Path, mdp: &Mdp) -> Result<QVector> {
    let values = match read_json::<QFile>(path)? {
        QFile::Bare(v) | QFile::Object { values: v } => v,
    };
    QVector::from_slice(mdp, &values)
}

/// First 16 hex digits of SHA-256 over the comma-joined action list.
pub fn policy_hash(policy: &DeterministicPolicy) -> String {
    let text = policy
        .actions()
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",");
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const TRACE_COLUMNS: [&str; 9] = [
    "k",
    "inf_norm",
    "inf_ratio",
    "m_norm",
    "m_ratio",
    "v_functional",
    "v_bound",
    "min_orthant_slack",
    "policy_hash",
];

fn ratio(cur: f64, prev: f64) -> Option<f64> {
    (prev > 0.0).then(|| cur / prev)
}

/// One row per iterate. Metrics that do not exist (ratios at `k = 0`,
/// certificate metrics without a certificate) are empty fields.
pub fn write_trace_csv<W: Write>(trace: &QviTrace, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for (k, rec) in trace.per_step.iter().enumerate() {
        let prev = k.checked_sub(1).map(|j| &trace.per_step[j]);
        let inf_ratio = prev.and_then(|p| ratio(rec.inf_norm, p.inf_norm));
        let m_ratio = prev.and_then(|p| match (rec.m_norm, p.m_norm) {
            (Some(c), Some(p)) => ratio(c, p),
            _ => None,
        });
        w.write_record([
            rec.k.to_string(),
            fmt_f64(rec.inf_norm),
            fmt_opt(inf_ratio),
            fmt_opt(rec.m_norm),
            fmt_opt(m_ratio),
            fmt_opt(rec.v_functional),
            fmt_opt(rec.v_bound),
            fmt_f64(rec.min_orthant_slack),
            policy_hash(&rec.policy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `[k, v_0^T Δ_k, bound_0(k), v_1^T Δ_k, bound_1(k), ...]` per iterate, where
/// `bound_j(k) = (gamma + eps_j)^k v_j^T Δ_0`.
pub fn halfplane_rows(trace: &QviTrace, certs: &[LyapunovCertificate]) -> Vec<Vec<f64>> {
    let d0 = trace.delta(0);
    let base: Vec<f64> = certs.iter().map(|c| c.v_functional(&d0)).collect();
    (0..trace.iterates.len())
        .map(|k| {
            let dk = trace.delta(k);
            let mut row = vec![k as f64];
            for (c, b) in certs.iter().zip(&base) {
                row.push(c.v_functional(&dk));
                row.push(c.rate().powi(k as i32) * b);
            }
            row
        })
        .collect()
}

/// Writes the data behind the half-plane picture: for each certificate the
/// functional `v^T (Q_k - Q*)` and its geometric bound.
pub fn emit_halfplane_data<W: Write>(
    trace: &QviTrace,
    certs: &[LyapunovCertificate],
    out: W,
) -> Result<()> {
    if certs.iter().any(|c| c.v_vector.len() != trace.qstar.values().len()) {
        return Err(Error::Config("certificate dimension does not match trace".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["k".to_owned()];
    for j in 0..certs.len() {
        header.push(format!("v_functional_{j}"));
        header.push(format!("v_bound_{j}"));
    }
    w.write_record(&header)?;
    for row in halfplane_rows(trace, certs) {
        let mut fields = vec![(row[0] as usize).to_string()];
        fields.extend(row[1..].iter().map(|&x| fmt_f64(x)));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0, -9.0, 1e-300, 123456.789, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(9.0), "9.0");
    }

    #[test]
    fn hash_depends_on_actions() {
        let a = DeterministicPolicy::from_actions_unchecked(vec![0, 1]);
        let b = DeterministicPolicy::from_actions_unchecked(vec![1, 0]);
        assert_eq!(policy_hash(&a).len(), 16);
        assert_ne!(policy_hash(&a), policy_hash(&b));
        // "1,0" vs "10": the separator keeps them apart
        let c = DeterministicPolicy::from_actions_unchecked(vec![10]);
        assert_ne!(policy_hash(&b), policy_hash(&c));
    }
}
