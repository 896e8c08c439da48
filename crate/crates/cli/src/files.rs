//! Reading and writing the CLI's artifacts.

use std::path::{Path, PathBuf};

use pmgp::gp::{Dataset, Hyperparams};
use pmgp::io::{ingest_csv, ingest_csv_with_meta, ExperimentConfig, IngestMeta, Ingested, RowFilter};
use pmgp::samplers::{ChainTrace, Phase, ProposalConfig, Scheme, StepCounters, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub path: PathBuf,
    pub label_column: String,
    pub standardize: bool,
    pub filter: Option<RowFilter>,
}

impl DataSpec {
    pub fn load(&self) -> CliResult<Ingested> {
        let ing = ingest_csv(&self.path, &self.label_column, self.standardize, self.filter.as_ref())?;
        for w in &ing.warnings {
            eprintln!("warning: {w}");
        }
        Ok(ing)
    }

    /// A second file transformed with the statistics learnt from this one.
    pub fn load_like(&self, meta: &IngestMeta, path: &Path) -> CliResult<Dataset> {
        Ok(ingest_csv_with_meta(path, meta, self.filter.as_ref())?.dataset)
    }
}

/// File settings overlaid with `key=value` pairs. Values are TOML literals;
/// anything that does not parse as one is taken as a bare string.
pub fn resolve_config(file: Option<&Path>, sets: &[String]) -> CliResult<ExperimentConfig> {
    let mut table: toml::Table = match file {
        Some(p) => std::fs::read_to_string(p)?.parse()?,
        None => toml::Table::new(),
    };
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Failure::new("config", format!("override '{s}' is not of the form key=value")))?;
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        table.insert(key.trim().to_string(), value);
    }
    let cfg = ExperimentConfig::from_toml_str(&table.to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_text(dir: &Path, name: &str, text: &str, artifacts: &mut Vec<String>) -> CliResult {
    std::fs::write(dir.join(name), text)?;
    artifacts.push(name.to_string());
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T, artifacts: &mut Vec<String>) -> CliResult {
    pmgp::io::write_json(&dir.join(name), value)?;
    artifacts.push(name.to_string());
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// One posterior draw of `(θ, f)` as stored by `sample`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredDraw {
    pub chain_id: usize,
    pub iteration: usize,
    pub hyper: Hyperparams,
    pub latents: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentsFile {
    pub format_version: u32,
    pub draws: Vec<StoredDraw>,
}

impl LatentsFile {
    pub fn from_traces(traces: &[ChainTrace]) -> Self {
        let draws = traces
            .iter()
            .flat_map(|t| {
                t.latents.iter().map(|s| StoredDraw {
                    chain_id: t.chain_id,
                    iteration: s.iteration,
                    hyper: s.hyper.clone(),
                    latents: s.latents.clone(),
                })
            })
            .collect();
        Self {
            format_version: pmgp::io::FORMAT_VERSION,
            draws,
        }
    }
}

fn bad_trace(line: usize, msg: impl std::fmt::Display) -> Failure {
    Failure::new("trace", format!("trace line {line}: {msg}"))
}

/// Reads the merged trace CSV back into per-chain traces. Only what the
/// diagnostics need is restored.
pub fn read_traces(path: &Path, scheme: Scheme, theta_repeats: usize) -> CliResult<Vec<ChainTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad_trace(1, "missing header"))?.split(',').collect();
    let n_psi = header.len().checked_sub(7).ok_or_else(|| bad_trace(1, "too few columns"))?;
    let psi_names: Vec<String> = header[2..2 + n_psi].iter().map(|s| s.to_string()).collect();
    let mut traces: Vec<ChainTrace> = Vec::new();
    for (k, line) in lines.enumerate() {
        let no = k + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad_trace(no, format!("expected {} cells, found {}", header.len(), cells.len())));
        }
        let num = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|e| bad_trace(no, format!("column {}: {e}", header[i])))
        };
        let int = |i: usize| {
            cells[i]
                .parse::<u64>()
                .map_err(|e| bad_trace(no, format!("column {}: {e}", header[i])))
        };
        let chain_id = int(1)? as usize;
        let psi = (2..2 + n_psi).map(num).collect::<CliResult<Vec<_>>>()?;
        let at = 2 + n_psi;
        let log_p_tilde = if cells[at + 1].is_empty() { None } else { Some(num(at + 1)?) };
        let phase = match cells[at + 2] {
            "burnin" => Phase::Burnin,
            "sampling" => Phase::Sampling,
            other => return Err(bad_trace(no, format!("unknown phase '{other}'"))),
        };
        let marginal = match cells[at + 4] {
            "approx" => "approx",
            "pm" => "pm",
            "none" => "none",
            other => return Err(bad_trace(no, format!("unknown marginal tag '{other}'"))),
        };
        let record = TraceRecord {
            iteration: int(0)? as usize,
            psi,
            accepted: int(at)? as u32,
            proposals: theta_repeats as u32,
            log_p_tilde,
            phase,
            marginal,
            cubic_ops: int(at + 3)?,
        };
        let pos = match traces.iter().position(|t| t.chain_id == chain_id) {
            Some(p) => p,
            None => {
                traces.push(ChainTrace {
                    chain_id,
                    scheme,
                    psi_names: psi_names.clone(),
                    records: Vec::new(),
                    latents: Vec::new(),
                    final_proposal: ProposalConfig::uniform(n_psi, 1.0),
                    counters: StepCounters::default(),
                    aborted: None,
                });
                traces.len() - 1
            }
        };
        traces[pos].records.push(record);
    }
    Ok(traces)
}

/// Probabilities from a `point_id,prob_positive,method` file, in row order.
pub fn read_predictions(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, line)| {
            line.split(',')
                .nth(1)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|p| (0.0..=1.0).contains(p))
                .ok_or_else(|| Failure::new("predictions", format!("line {}: no probability in [0, 1]", k + 1)))
        })
        .collect()
}

/// `lo:hi:count` → evenly spaced values.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || {
        Failure::new(
            "invalid_argument",
            format!("grid '{spec}' is not lo:hi:count with 0 < lo ≤ hi and count ≥ 1"),
        )
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else { return Err(bad()) };
    let (lo, hi, count): (f64, f64, usize) = (
        lo.parse().map_err(|_| bad())?,
        hi.parse().map_err(|_| bad())?,
        count.parse().map_err(|_| bad())?,
    );
    if !(lo > 0.0 && hi >= lo && count >= 1) {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}
