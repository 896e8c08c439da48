use std::path::{Path, PathBuf};

use nalgebra::DVector;
use pmgp::approx::{ApproxConfig, ApproxMethod};
use pmgp::diag::{auc, capacity_scores, diagnose as diagnose_traces, report_to_csv, DiagnosticsReport, RHAT_CHECKPOINTS};
use pmgp::gp::{CovarianceKind, Dataset, HyperPriors, Hyperparams};
use pmgp::io::{dataset_to_csv, generate_synthetic, ingest_csv, ExperimentConfig, Manifest, FORMAT_VERSION};
use pmgp::pm::{curve_to_csv, pm_posterior_curve, CurveSpec};
use pmgp::predict::{gaussian_predictions, mc_predictive, predictions_to_csv};
use pmgp::samplers::{run_chain, traces_to_csv, AbortRecord, ChainTrace, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};
use crate::files::*;
use crate::{BenchArgs, CurveArgs, DataArgs, DiagnoseArgs, EvalArgs, GenArgs, PredictArgs, SampleArgs};

#[derive(Deserialize)]
struct ManifestIn<C> {
    command: String,
    config: C,
}

fn read_manifest<C: for<'de> Deserialize<'de>>(path: &Path, command: &str) -> CliResult<C> {
    let m: ManifestIn<C> = read_json(path)?;
    if m.command != command {
        return Err(Failure::new(
            "invalid_argument",
            format!("{} was written by '{}', expected '{command}'", path.display(), m.command),
        ));
    }
    Ok(m.config)
}

fn finish<C: Serialize>(dir: &Path, command: &str, config: C, artifacts: Vec<String>) -> CliResult {
    Manifest::new(command, config, artifacts).write(&dir.join("manifest.json"))?;
    Ok(())
}

impl From<&DataArgs> for DataSpec {
    fn from(a: &DataArgs) -> Self {
        Self {
            path: a.data.clone(),
            label_column: a.label_column.clone(),
            standardize: a.standardize,
            filter: a.filter.clone(),
        }
    }
}

fn rows(data: &Dataset) -> Vec<Vec<f64>> {
    data.inputs().row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct GenSpec {
    n: usize,
    d: usize,
    tau: f64,
    sigma: f64,
    seed: u64,
    kind: CovarianceKind,
}

pub fn gen(a: GenArgs) -> CliResult {
    let hyper = Hyperparams::from_natural(a.sigma, &vec![a.tau; a.kind.num_lengthscales(a.d)])?;
    let data = generate_synthetic(a.n, a.d, &hyper, a.kind, a.seed)?;
    ensure_dir(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, "data.csv", &dataset_to_csv(&data), &mut artifacts)?;
    let spec = GenSpec {
        n: a.n,
        d: a.d,
        tau: a.tau,
        sigma: a.sigma,
        seed: a.seed,
        kind: a.kind,
    };
    finish(&a.out, "gen", spec, artifacts)
}

/// Everything needed to reproduce a `sample` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleSpec {
    data: DataSpec,
    experiment: ExperimentConfig,
    /// Resolved master seed of every chain (informational).
    chain_seeds: Vec<u64>,
}

/// Per-chain bookkeeping that the trace CSV does not carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainSummary {
    chain_id: usize,
    final_step_sizes: Vec<f64>,
    cubic_ops: u64,
    failures: u64,
    evaluations: u64,
    aborted: Option<AbortRecord>,
}

fn run_chains(data: &Dataset, cfg: &ExperimentConfig) -> CliResult<Vec<ChainTrace>> {
    let g = cfg.gibbs(data.d())?;
    // Each chain writes only its own trace; merging happens afterwards.
    Ok((0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(data, &g, c, cfg.chain_seed(c)))
        .collect::<pmgp::Result<Vec<_>>>()?)
}

pub fn sample(a: SampleArgs) -> CliResult {
    let spec = match &a.replay {
        Some(p) => read_manifest::<SampleSpec>(p, "sample")?,
        None => {
            let experiment = resolve_config(a.config.config.as_deref(), &a.config.set)?;
            let data = DataSpec {
                path: a.data.clone().expect("clap enforces --data without --replay"),
                label_column: a.label_column.clone(),
                standardize: a.standardize,
                filter: a.filter.clone(),
            };
            SampleSpec {
                chain_seeds: (0..experiment.chains).map(|c| experiment.chain_seed(c)).collect(),
                data,
                experiment,
            }
        }
    };
    let out = a.out.clone().unwrap_or_else(|| spec.experiment.output_dir.clone());
    ensure_dir(&out.join("chains"))?;
    let ing = spec.data.load()?;
    let traces = run_chains(&ing.dataset, &spec.experiment)?;
    let names = spec.experiment.initial_hyper(ing.dataset.d())?.psi_names();

    let mut artifacts = Vec::new();
    for t in &traces {
        write_text(
            &out,
            &format!("chains/chain_{}.csv", t.chain_id),
            &traces_to_csv(&names, std::slice::from_ref(t)),
            &mut artifacts,
        )?;
    }
    write_text(&out, "trace.csv", &traces_to_csv(&names, &traces), &mut artifacts)?;
    let summaries: Vec<ChainSummary> = traces
        .iter()
        .map(|t| ChainSummary {
            chain_id: t.chain_id,
            final_step_sizes: t.final_proposal.step_sizes.clone(),
            cubic_ops: t.counters.cubic_ops,
            failures: t.counters.failures,
            evaluations: t.counters.evaluations,
            aborted: t.aborted.clone(),
        })
        .collect();
    write_json(&out, "chains.json", &summaries, &mut artifacts)?;
    if spec.experiment.record_latents {
        write_json(&out, "latents.json", &LatentsFile::from_traces(&traces), &mut artifacts)?;
    }
    write_json(&out, "ingest_meta.json", &ing.meta, &mut artifacts)?;
    for t in traces.iter().filter(|t| t.aborted.is_some()) {
        eprintln!(
            "warning: chain {} aborted: {}",
            t.chain_id,
            t.aborted.as_ref().map(|a| a.message.as_str()).unwrap_or("")
        );
    }
    finish(&out, "sample", spec, artifacts)
}

#[derive(Serialize)]
struct PredictSpec {
    train: DataSpec,
    test: PathBuf,
    source: String,
    kind: CovarianceKind,
    clamped_variances: u64,
}

pub fn predict(a: PredictArgs) -> CliResult {
    let spec = DataSpec::from(&a.data);
    let ing = spec.load()?;
    let test = spec.load_like(&ing.meta, &a.test)?;
    let x_stars = rows(&test);
    let (probs, source, clamps) = if let Some(path) = &a.latents {
        let file: LatentsFile = read_json(path)?;
        let samples: Vec<(DVector<f64>, Hyperparams)> = file.draws.into_iter().map(|d| (DVector::from_vec(d.latents), d.hyper)).collect();
        let r = mc_predictive(&samples, &ing.dataset, a.kind, &x_stars)?;
        (r.probs, format!("mc:{}", path.display()), r.clamps)
    } else if let (Some(sigma), Some(tau)) = (a.sigma, a.tau) {
        let h = Hyperparams::from_natural(sigma, &vec![tau; a.kind.num_lengthscales(ing.dataset.d())])?;
        let r = gaussian_predictions(&ing.dataset, &h, a.kind, a.method, &ApproxConfig::default(), &x_stars)?;
        (
            r.iter().map(|p| p.prob_positive).collect(),
            format!("{}:sigma={sigma},tau={tau}", a.method.tag()),
            0,
        )
    } else {
        return Err(Failure::new("invalid_argument", "give --latents, or --sigma and --tau"));
    };
    let tag = if a.latents.is_some() { "MC" } else { a.method.tag() };
    ensure_dir(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, "predictions.csv", &predictions_to_csv(&probs, tag), &mut artifacts)?;
    let cfg = PredictSpec {
        train: spec,
        test: a.test,
        source,
        kind: a.kind,
        clamped_variances: clamps,
    };
    finish(&a.out, "predict", cfg, artifacts)
}

pub fn diagnose(a: DiagnoseArgs) -> CliResult {
    let spec: SampleSpec = read_manifest(&a.run.join("manifest.json"), "sample")?;
    let mut traces = read_traces(&a.run.join("trace.csv"), spec.experiment.scheme, spec.experiment.theta_repeats)?;
    let summaries: Vec<ChainSummary> = read_json(&a.run.join("chains.json"))?;
    for t in &mut traces {
        if let Some(s) = summaries.iter().find(|s| s.chain_id == t.chain_id) {
            t.aborted = s.aborted.clone();
            t.counters.failures = s.failures;
        }
    }
    let report = diagnose_traces(&traces)?;
    let out = a.out.unwrap_or_else(|| a.run.join("diagnose"));
    ensure_dir(&out)?;
    let mut artifacts = Vec::new();
    write_json(&out, "diagnostics.json", &report, &mut artifacts)?;
    write_text(&out, "diagnostics.csv", &report_to_csv(&report), &mut artifacts)?;
    #[derive(Serialize)]
    struct DiagnoseSpec {
        run: PathBuf,
        sample: SampleSpec,
    }
    finish(&out, "diagnose", DiagnoseSpec { run: a.run, sample: spec }, artifacts)
}

#[derive(Serialize)]
struct CurveRunSpec {
    data: DataSpec,
    sigma: f64,
    taus: Vec<f64>,
    methods: Vec<ApproxMethod>,
    n_imp: Vec<usize>,
    reps: usize,
    seed: u64,
    normalize: bool,
    kind: CovarianceKind,
}

pub fn curve(a: CurveArgs) -> CliResult {
    let spec = DataSpec::from(&a.data);
    let data = spec.load()?.dataset;
    let taus = parse_grid(&a.taus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rows = Vec::new();
    for &method in &a.methods {
        for &n_imp in &a.n_imp {
            let cs = CurveSpec {
                data: &data,
                kind: a.kind,
                sigma: a.sigma,
                taus: &taus,
                priors: HyperPriors::synthetic(data.d()),
                method,
                n_imp,
                reps: a.reps,
                approx: ApproxConfig::default(),
                normalize: a.normalize,
            };
            rows.extend(pm_posterior_curve(&cs, &mut rng)?);
        }
    }
    ensure_dir(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, "curve.csv", &curve_to_csv(&rows), &mut artifacts)?;
    let cfg = CurveRunSpec {
        data: spec,
        sigma: a.sigma,
        taus,
        methods: a.methods,
        n_imp: a.n_imp,
        reps: a.reps,
        seed: a.seed,
        normalize: a.normalize,
        kind: a.kind,
    };
    finish(&a.out, "curve", cfg, artifacts)
}

/// `PM:EP:64`, `PM:LA` (N_imp from the config) or a bare scheme name.
fn parse_row(s: &str) -> CliResult<(Scheme, Option<ApproxMethod>, Option<usize>)> {
    let parts: Vec<&str> = s.split(':').collect();
    let scheme: Scheme = parts[0].parse()?;
    let method = parts.get(1).map(|m| m.parse::<ApproxMethod>()).transpose()?;
    let n_imp = parts
        .get(2)
        .map(|n| {
            n.parse::<usize>()
                .map_err(|_| Failure::new("invalid_argument", format!("bad N_imp in '{s}'")))
        })
        .transpose()?;
    if parts.len() > 3 || (scheme != Scheme::Pm && parts.len() > 1) {
        return Err(Failure::new(
            "invalid_argument",
            format!("scheme row '{s}' is not SCHEME or PM:METHOD[:N_imp]"),
        ));
    }
    Ok((scheme, method, n_imp))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

#[derive(Serialize)]
struct BenchRow {
    label: String,
    reports: Vec<DiagnosticsReport>,
}

pub fn bench(a: BenchArgs) -> CliResult {
    let spec = DataSpec::from(&a.data);
    let data = spec.load()?.dataset;
    let base = resolve_config(a.config.config.as_deref(), &a.config.set)?;
    if a.repeats == 0 {
        return Err(Failure::new("invalid_argument", "repeats must be at least 1"));
    }
    let rows = a.schemes.iter().map(|s| parse_row(s)).collect::<CliResult<Vec<_>>>()?;
    let mut table = format!(
        "n,d,kind,scheme,n_imp,ess,ess_sd,{},acceptance,acceptance_sd,cubic_ops\n",
        RHAT_CHECKPOINTS.iter().map(|k| format!("rhat_{k}")).collect::<Vec<_>>().join(",")
    );
    let mut detail = Vec::new();
    for (label, (scheme, method, n_imp)) in a.schemes.iter().zip(rows) {
        let mut cfg = base.clone();
        cfg.scheme = scheme;
        cfg.approx = method.unwrap_or(cfg.approx);
        cfg.n_imp = n_imp.unwrap_or(cfg.n_imp);
        cfg.seeds.clear();
        let mut reports = Vec::new();
        for r in 0..a.repeats {
            let mut c = cfg.clone();
            c.seed = base.seed + r;
            reports.push(diagnose_traces(&run_chains(&data, &c)?)?);
        }
        let (ess, ess_sd) = mean_sd(&reports.iter().map(|r| r.min_ess).collect::<Vec<_>>());
        let (acc, acc_sd) = mean_sd(&reports.iter().map(|r| r.acceptance_rate).collect::<Vec<_>>());
        let (ops, _) = mean_sd(&reports.iter().map(|r| r.mean_cubic_ops).collect::<Vec<_>>());
        let rhats: Vec<String> = RHAT_CHECKPOINTS
            .iter()
            .map(|k| {
                let v: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.rhat_checkpoints.iter().find(|(i, _)| i == k).map(|(_, v)| *v))
                    .collect();
                fmt_cell((v.len() == reports.len()).then(|| median(v)))
            })
            .collect();
        let scheme_cell = match scheme {
            Scheme::Pm => format!("PM {}", cfg.approx.tag()),
            s => s.tag().to_string(),
        };
        let n_imp_cell = if scheme == Scheme::Pm {
            cfg.n_imp.to_string()
        } else {
            String::new()
        };
        let kind = match cfg.kind {
            CovarianceKind::Isotropic => "isotropic",
            CovarianceKind::Ard => "ard",
        };
        table.push_str(&format!(
            "{},{},{kind},{scheme_cell},{n_imp_cell},{ess},{ess_sd},{},{acc},{acc_sd},{ops}\n",
            data.n(),
            data.d(),
            rhats.join(",")
        ));
        detail.push(BenchRow {
            label: label.clone(),
            reports,
        });
    }
    ensure_dir(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, "bench.csv", &table, &mut artifacts)?;
    write_json(&a.out, "bench.json", &detail, &mut artifacts)?;
    #[derive(Serialize)]
    struct BenchSpec {
        data: DataSpec,
        experiment: ExperimentConfig,
        schemes: Vec<String>,
        repeats: u64,
    }
    let cfg = BenchSpec {
        data: spec,
        experiment: base,
        schemes: a.schemes,
        repeats: a.repeats,
    };
    finish(&a.out, "bench", cfg, artifacts)
}

#[derive(Serialize)]
struct Scores {
    format_version: u32,
    n: usize,
    auc: Option<f64>,
    capacity_accuracy: f64,
    capacity_auc: Option<f64>,
    curve: Vec<pmgp::diag::CapacityPoint>,
}

pub fn eval(a: EvalArgs) -> CliResult {
    let probs = read_predictions(&a.predictions)?;
    let labels: Vec<f64> = ingest_csv(&a.test, &a.label_column, false, None)?
        .dataset
        .labels()
        .iter()
        .copied()
        .collect();
    if probs.len() != labels.len() {
        return Err(Failure::new(
            "invalid_argument",
            format!("{} predictions for {} test points", probs.len(), labels.len()),
        ));
    }
    let cap = capacity_scores(&probs, &labels)?;
    let scores = Scores {
        format_version: FORMAT_VERSION,
        n: probs.len(),
        auc: auc(&probs, &labels).ok(),
        capacity_accuracy: cap.capacity_accuracy,
        capacity_auc: cap.capacity_auc,
        curve: cap.curve,
    };
    ensure_dir(&a.out)?;
    let mut artifacts = Vec::new();
    write_json(&a.out, "scores.json", &scores, &mut artifacts)?;
    #[derive(Serialize)]
    struct EvalSpec {
        predictions: PathBuf,
        test: PathBuf,
        label_column: String,
    }
    let cfg = EvalSpec {
        predictions: a.predictions,
        test: a.test,
        label_column: a.label_column,
    };
    finish(&a.out, "eval", cfg, artifacts)
}
