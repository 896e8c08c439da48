use serde::Serialize;

use super::mcmc::{effective_sample_size, psrf};
use crate::error::{Error, Result};
use crate::samplers::ChainTrace;

pub const RHAT_CHECKPOINTS: [usize; 4] = [1000, 2000, 5000, 10_000];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub ess_per_chain: Vec<f64>,
    pub mean_ess: f64,
    pub psrf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub format_version: u32,
    pub scheme: String,
    pub n_chains: usize,
    pub samples_per_chain: usize,
    pub params: Vec<ParamDiagnostics>,
    /// Per chain, the smallest ESS over sampled parameters; then averaged.
    pub min_ess: f64,
    pub min_ess_per_chain: Vec<f64>,
    pub acceptance_rate: f64,
    pub acceptance_per_chain: Vec<f64>,
    /// Largest R̂ over parameters using the first `k` samples of each chain.
    pub rhat_checkpoints: Vec<(usize, f64)>,
    pub mean_cubic_ops: f64,
    pub min_ess_per_cubic_op: f64,
    pub failures: u64,
    pub aborted_chains: Vec<usize>,
}

/// ESS that treats a chain stuck on one value as a single sample.
fn ess_or_one(x: &[f64]) -> Result<f64> {
    match effective_sample_size(x) {
        Ok(v) => Ok(v),
        Err(Error::Undefined(_)) => Ok(1.0),
        Err(e) => Err(e),
    }
}

fn max_psrf(cols: &[Vec<Vec<f64>>], len: usize) -> Option<f64> {
    cols.iter()
        .filter_map(|chains| {
            let cut: Vec<Vec<f64>> = chains.iter().map(|c| c[..len].to_vec()).collect();
            psrf(&cut).ok()
        })
        .reduce(f64::max)
}

/// Summaries over post-burn-in samples of completed chains. Parameters that
/// never move in any chain (held fixed) are skipped.
pub fn diagnose(traces: &[ChainTrace]) -> Result<DiagnosticsReport> {
    let done: Vec<&ChainTrace> = traces.iter().filter(|t| t.aborted.is_none()).collect();
    let first = done
        .first()
        .ok_or_else(|| Error::InvalidArgument("no completed chains to diagnose".into()))?;
    let names = first.psi_names.clone();
    let per_chain: Vec<Vec<Vec<f64>>> = done.iter().map(|t| t.psi_columns()).collect();
    let len = per_chain.iter().map(|c| c[0].len()).min().unwrap_or(0);
    if len < 10 {
        return Err(Error::InvalidArgument(format!(
            "only {len} post-burn-in samples per chain (need 10)"
        )));
    }
    // cols[param][chain] truncated to a common length.
    let mut cols: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut kept_names = Vec::new();
    for (p, name) in names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = per_chain.iter().map(|c| c[p][..len].to_vec()).collect();
        let moves = chains.iter().any(|c| c.iter().any(|v| *v != c[0]));
        if moves {
            cols.push(chains);
            kept_names.push(name.clone());
        }
    }
    let mut params = Vec::new();
    for (name, chains) in kept_names.iter().zip(&cols) {
        let ess = chains.iter().map(|c| ess_or_one(c)).collect::<Result<Vec<_>>>()?;
        params.push(ParamDiagnostics {
            name: name.clone(),
            mean_ess: ess.iter().sum::<f64>() / ess.len() as f64,
            ess_per_chain: ess,
            psrf: if chains.len() >= 2 { psrf(chains).ok() } else { None },
        });
    }
    let min_ess_per_chain: Vec<f64> = (0..done.len())
        .map(|c| params.iter().map(|p| p.ess_per_chain[c]).fold(f64::INFINITY, f64::min))
        .collect();
    let min_ess = if params.is_empty() {
        0.0
    } else {
        min_ess_per_chain.iter().sum::<f64>() / done.len() as f64
    };
    let acceptance_per_chain: Vec<f64> = done.iter().map(|t| t.acceptance_rate().unwrap_or(0.0)).collect();
    let ops: Vec<f64> = done.iter().filter_map(|t| t.mean_cubic_ops()).collect();
    let mean_cubic_ops = ops.iter().sum::<f64>() / ops.len().max(1) as f64;
    let rhat_checkpoints = if done.len() >= 2 {
        RHAT_CHECKPOINTS
            .iter()
            .filter(|&&k| k <= len)
            .filter_map(|&k| max_psrf(&cols, k).map(|r| (k, r)))
            .collect()
    } else {
        Vec::new()
    };
    Ok(DiagnosticsReport {
        format_version: 1,
        scheme: first.scheme.tag().to_string(),
        n_chains: done.len(),
        samples_per_chain: len,
        min_ess,
        min_ess_per_cubic_op: if mean_cubic_ops > 0.0 { min_ess / mean_cubic_ops } else { f64::NAN },
        params,
        min_ess_per_chain,
        acceptance_rate: acceptance_per_chain.iter().sum::<f64>() / done.len() as f64,
        acceptance_per_chain,
        rhat_checkpoints,
        mean_cubic_ops,
        failures: traces.iter().map(|t| t.counters.failures).sum(),
        aborted_chains: traces.iter().filter(|t| t.aborted.is_some()).map(|t| t.chain_id).collect(),
    })
}

/// `quantity,chain_set,value` rows.
pub fn report_to_csv(r: &DiagnosticsReport) -> String {
    let mut out = String::from("quantity,chain_set,value\n");
    let mut row = |q: &str, set: &str, v: f64| out.push_str(&format!("{q},{set},{v}\n"));
    for p in &r.params {
        for (c, e) in p.ess_per_chain.iter().enumerate() {
            row(&format!("ess_{}", p.name), &format!("chain{c}"), *e);
        }
        row(&format!("ess_{}", p.name), "mean", p.mean_ess);
        if let Some(v) = p.psrf {
            row(&format!("rhat_{}", p.name), "all", v);
        }
    }
    row("min_ess", "mean", r.min_ess);
    row("min_ess_per_cubic_op", "mean", r.min_ess_per_cubic_op);
    row("acceptance_rate", "mean", r.acceptance_rate);
    row("mean_cubic_ops", "mean", r.mean_cubic_ops);
    for (k, v) in &r.rhat_checkpoints {
        row("rhat_max", &format!("first{k}"), *v);
    }
    out
}
