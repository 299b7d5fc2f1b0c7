//! Multi-trial experiment runner with trial-level parallelism, parameter
//! sweeps, and tidy CSV emission for the figure configs.
//!
//! Trials run concurrently over a rayon pool but are joined in trial
//! order, each with its own RNG stream seeded `seed + trial`, so every
//! output is identical to a sequential run regardless of worker count.

use crate::error::{Error, Result};
use crate::problems::{add_sphere_noise, default_eta, generate_gaussian, Problem};
use crate::sampling::{build_variant_with_alpha, SamplingScheme, Variant};
use crate::solvers::{run, Method, RunTrace, SolverConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Stream offset separating per-trial scheme draws (v3/v4 weights) from
/// the solver streams `seed + trial`.
const SCHEME_STREAM_SALT: u64 = 0x9E37_79B9;
/// Stream for the sphere-noise direction.
const NOISE_STREAM_SALT: u64 = 0x4E01_5E00;

/// A run is marked diverged when some recorded residual exceeds this
/// multiple of the initial one.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// ell = r * ||b||
    Relative(f64),
    /// ell given directly
    Absolute(f64),
}

impl NoiseSpec {
    pub fn radius(&self, b_norm: f64) -> f64 {
        match self {
            NoiseSpec::Relative(r) => r * b_norm,
            NoiseSpec::Absolute(l) => *l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub variant: Option<Variant>,
    pub lambda: f64,
    /// Defaults to 1 + floor(min(m,n)/10) for RSKA, 1 otherwise.
    #[serde(default)]
    pub eta: Option<usize>,
    /// Uniform-weight relaxation override (v1/v2 only).
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub label: Option<String>,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut base = match (self.method, self.variant) {
            (Method::Rska, Some(v)) => format!("RSKA-{v}"),
            (m, _) => m.to_string(),
        };
        if let Some(alpha) = self.alpha {
            base.push_str(&format!("-alpha{alpha}"));
        }
        base
    }

    pub fn effective_eta(&self, m: usize, n: usize) -> usize {
        match self.method {
            Method::Rska => self.eta.unwrap_or_else(|| default_eta(m, n)),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    pub methods: Vec<MethodSpec>,
    pub trials: usize,
    pub max_iters: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Early-stop residual; zero keeps every trial on the full budget so
    /// aggregate series share one iteration grid.
    #[serde(default)]
    pub residual_tol: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_record_every() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method required".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.line(), e.column(), e.to_string()))
    }

    /// Generate the (possibly noisy) problem instance for this spec.
    pub fn build_problem(&self) -> Result<Problem> {
        let problem = generate_gaussian(self.m, self.n, self.s, self.seed)?;
        match &self.noise {
            Some(spec) => {
                let ell = spec.radius(crate::matrix::norm2(&problem.b));
                add_sphere_noise(&problem, ell, self.seed.wrapping_add(NOISE_STREAM_SALT))
            }
            None => Ok(problem),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAggregate {
    pub label: String,
    pub res_mean: Vec<f64>,
    pub res_std: Vec<f64>,
    pub err_mean: Vec<f64>,
    pub err_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub grid: Vec<usize>,
    pub methods: Vec<MethodAggregate>,
}

impl AggregateSeries {
    /// First grid iteration at which the mean residual reaches `tol`.
    pub fn first_mean_hit(&self, label: &str, tol: f64) -> Option<usize> {
        let m = self.methods.iter().find(|m| m.label == label)?;
        self.grid
            .iter()
            .zip(&m.res_mean)
            .find(|(_, r)| **r <= tol)
            .map(|(k, _)| *k)
    }

    pub fn to_csv(&self) -> String {
        let mut header = String::from("k");
        for m in &self.methods {
            header.push_str(&format!(
                ",{l}_res_mean,{l}_res_std,{l}_err_mean,{l}_err_std",
                l = m.label
            ));
        }
        let mut out = header;
        out.push('\n');
        for (idx, k) in self.grid.iter().enumerate() {
            out.push_str(&k.to_string());
            for m in &self.methods {
                out.push_str(&format!(
                    ",{},{},{},{}",
                    m.res_mean[idx], m.res_std[idx], m.err_mean[idx], m.err_std[idx]
                ));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub struct MethodTraces {
    pub label: String,
    pub traces: Vec<RunTrace>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub aggregate: AggregateSeries,
    pub per_method: Vec<MethodTraces>,
}

fn scheme_for(
    spec: &MethodSpec,
    problem: &Problem,
    eta: usize,
    base_seed: u64,
    trial: usize,
) -> Result<Option<SamplingScheme>> {
    if spec.method == Method::LinBreg {
        return Ok(None);
    }
    let variant = spec.variant.unwrap_or(Variant::V1);
    let scheme_seed = base_seed
        .wrapping_add(SCHEME_STREAM_SALT)
        .wrapping_add(trial as u64);
    Ok(Some(build_variant_with_alpha(
        &problem.a,
        variant,
        eta,
        scheme_seed,
        spec.alpha,
    )?))
}

fn variant_redraws_per_trial(v: Option<Variant>) -> bool {
    matches!(v, Some(Variant::V3) | Some(Variant::V4))
}

/// Run `trials` independent seeded runs per method and aggregate mean and
/// (population) standard deviation of the relative residual and error on
/// the shared iteration grid.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let problem = spec.build_problem()?;

    // (method, trial) jobs, flattened; collect preserves order
    let mut jobs = Vec::new();
    for (mi, ms) in spec.methods.iter().enumerate() {
        for trial in 0..spec.trials {
            jobs.push((mi, trial));
        }
    }
    // v1/v2 schemes are trial-independent; build once and share
    let shared_schemes: Vec<Option<SamplingScheme>> = spec
        .methods
        .iter()
        .map(|ms| {
            if variant_redraws_per_trial(ms.variant) || ms.method == Method::LinBreg {
                Ok(None)
            } else {
                scheme_for(ms, &problem, ms.effective_eta(spec.m, spec.n), spec.seed, 0)
            }
        })
        .collect::<Result<_>>()?;

    let traces: Vec<RunTrace> = jobs
        .par_iter()
        .map(|&(mi, trial)| {
            let ms = &spec.methods[mi];
            let eta = ms.effective_eta(spec.m, spec.n);
            let scheme = match &shared_schemes[mi] {
                Some(s) => Some(s.clone()),
                None => scheme_for(ms, &problem, eta, spec.seed, trial)?,
            };
            let config = SolverConfig {
                method: ms.method,
                lambda: ms.lambda,
                eta,
                max_iters: spec.max_iters,
                residual_tol: spec.residual_tol,
                seed: spec.seed.wrapping_add(trial as u64),
                scheme,
                record_every: spec.record_every,
                stop_above: None,
                record_walltime: false,
            };
            run(&config, &problem)
        })
        .collect::<Result<_>>()?;

    let mut per_method = Vec::with_capacity(spec.methods.len());
    for (mi, ms) in spec.methods.iter().enumerate() {
        let slice: Vec<RunTrace> = traces
            .iter()
            .enumerate()
            .filter(|(j, _)| jobs[*j].0 == mi)
            .map(|(_, t)| t.clone())
            .collect();
        per_method.push(MethodTraces {
            label: ms.label(),
            traces: slice,
        });
    }
    let aggregate = aggregate(&per_method);
    Ok(ExperimentResult {
        aggregate,
        per_method,
    })
}

fn aggregate(per_method: &[MethodTraces]) -> AggregateSeries {
    // common grid: shortest record list across all traces
    let min_len = per_method
        .iter()
        .flat_map(|m| m.traces.iter().map(|t| t.records.len()))
        .min()
        .unwrap_or(0);
    let grid: Vec<usize> = per_method
        .first()
        .and_then(|m| m.traces.first())
        .map(|t| t.records[..min_len].iter().map(|r| r.k).collect())
        .unwrap_or_default();

    let methods = per_method
        .iter()
        .map(|m| {
            let trials = m.traces.len() as f64;
            let mut res_mean = vec![0.0; min_len];
            let mut res_std = vec![0.0; min_len];
            let mut err_mean = vec![0.0; min_len];
            let mut err_std = vec![0.0; min_len];
            for idx in 0..min_len {
                let res: Vec<f64> = m.traces.iter().map(|t| t.records[idx].rel_residual).collect();
                let err: Vec<f64> = m
                    .traces
                    .iter()
                    .map(|t| t.records[idx].rel_error.unwrap_or(f64::NAN))
                    .collect();
                let mean = |v: &[f64]| v.iter().sum::<f64>() / trials;
                let rm = mean(&res);
                let em = mean(&err);
                res_mean[idx] = rm;
                err_mean[idx] = em;
                res_std[idx] = (res.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / trials).sqrt();
                err_std[idx] = (err.iter().map(|e| (e - em) * (e - em)).sum::<f64>() / trials).sqrt();
            }
            MethodAggregate {
                label: m.label.clone(),
                res_mean,
                res_std,
                err_mean,
                err_std,
            }
        })
        .collect();
    AggregateSeries { grid, methods }
}

/// Write aggregate.csv plus one raw trace CSV per (method, trial).
/// Returns the written paths, aggregate first.
pub fn write_experiment_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let agg = dir.join("aggregate.csv");
    std::fs::write(&agg, result.aggregate.to_csv())?;
    written.push(agg);
    for m in &result.per_method {
        for (t, trace) in m.traces.iter().enumerate() {
            let path = dir.join(format!("{}_trial{t}.csv", m.label));
            trace.write_csv(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Eta,
    Alpha,
    Lambda,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    #[serde(flatten)]
    pub base: ExperimentSpec,
    #[serde(default = "default_target")]
    pub target: f64,
}

fn default_target() -> f64 {
    1e-6
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.line(), e.column(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    pub label: String,
    /// Mean first iteration reaching the target, if every trial reached it.
    pub mean_iters_to_target: Option<f64>,
    pub final_res_mean: f64,
    pub final_err_mean: f64,
    pub diverged: bool,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub protocol: String,
    pub target: f64,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "parameter,value,label,mean_iters_to_target,final_res_mean,final_err_mean,diverged,budget\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:?},{},{},{},{},{},{},{}\n",
                self.parameter,
                c.value,
                c.label,
                c.mean_iters_to_target.map(|v| v.to_string()).unwrap_or_default(),
                c.final_res_mean,
                c.final_err_mean,
                c.diverged,
                c.budget,
            ));
        }
        out
    }

    pub fn cell(&self, label: &str, value: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.label == label && c.value == value)
    }
}

/// Final-iterate statistics per grid point per method, with divergence
/// markers (residual above `DIVERGENCE_FACTOR` times the initial one).
/// Lambda sweeps emit two tables: a fixed iteration budget and the
/// (1 + lambda)-scaled budget.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepTable>> {
    spec.base.validate()?;
    let problem = spec.base.build_problem()?;
    let protocols: Vec<(String, bool)> = match spec.parameter {
        SweepParameter::Lambda => vec![
            ("fixed-budget".into(), false),
            ("scaled-budget".into(), true),
        ],
        _ => vec![("fixed-budget".into(), false)],
    };

    let mut tables = Vec::new();
    for (protocol, scaled) in protocols {
        let mut jobs = Vec::new();
        for (gi, &value) in spec.grid.iter().enumerate() {
            for (mi, _) in spec.base.methods.iter().enumerate() {
                for trial in 0..spec.base.trials {
                    jobs.push((gi, mi, trial));
                }
            }
        }
        let traces: Vec<(RunTrace, usize)> = jobs
            .par_iter()
            .map(|&(gi, mi, trial)| {
                let value = spec.grid[gi];
                let mut ms = spec.base.methods[mi].clone();
                match spec.parameter {
                    SweepParameter::Eta => {
                        let eta = value.round() as usize;
                        if eta == 0 {
                            return Err(Error::InvalidEta {
                                eta,
                                context: "eta sweep grid",
                            });
                        }
                        ms.eta = Some(eta);
                    }
                    SweepParameter::Alpha => ms.alpha = Some(value),
                    SweepParameter::Lambda => ms.lambda = value,
                }
                let budget = if scaled {
                    ((1.0 + ms.lambda) * spec.base.max_iters as f64).round() as usize
                } else {
                    spec.base.max_iters
                };
                let eta = ms.effective_eta(spec.base.m, spec.base.n);
                let scheme = scheme_for(&ms, &problem, eta, spec.base.seed, trial)?;
                let config = SolverConfig {
                    method: ms.method,
                    lambda: ms.lambda,
                    eta,
                    max_iters: budget,
                    residual_tol: spec.target,
                    seed: spec.base.seed.wrapping_add(trial as u64),
                    scheme,
                    record_every: spec.base.record_every,
                    stop_above: Some(DIVERGENCE_FACTOR),
                    record_walltime: false,
                };
                run(&config, &problem).map(|t| (t, budget))
            })
            .collect::<Result<_>>()?;

        let mut cells = Vec::new();
        for (gi, &value) in spec.grid.iter().enumerate() {
            for (mi, ms) in spec.base.methods.iter().enumerate() {
                let group: Vec<&(RunTrace, usize)> = jobs
                    .iter()
                    .zip(&traces)
                    .filter(|((g, m, _), _)| *g == gi && *m == mi)
                    .map(|(_, t)| t)
                    .collect();
                let trials = group.len() as f64;
                let hits: Vec<Option<usize>> =
                    group.iter().map(|(t, _)| t.first_hit(spec.target)).collect();
                let mean_iters = if hits.iter().all(|h| h.is_some()) {
                    Some(hits.iter().map(|h| h.unwrap() as f64).sum::<f64>() / trials)
                } else {
                    None
                };
                let final_res_mean = group
                    .iter()
                    .map(|(t, _)| t.final_record().rel_residual)
                    .sum::<f64>()
                    / trials;
                let final_err_mean = group
                    .iter()
                    .map(|(t, _)| t.final_record().rel_error.unwrap_or(f64::NAN))
                    .sum::<f64>()
                    / trials;
                let diverged = group.iter().any(|(t, _)| t.diverged(DIVERGENCE_FACTOR));
                cells.push(SweepCell {
                    value,
                    label: ms.label(),
                    mean_iters_to_target: mean_iters,
                    final_res_mean,
                    final_err_mean,
                    diverged,
                    budget: group.first().map(|(_, b)| *b).unwrap_or(0),
                });
            }
        }
        tables.push(SweepTable {
            parameter: spec.parameter,
            protocol,
            target: spec.target,
            cells,
        });
    }
    Ok(tables)
}

pub fn write_sweep_outputs(tables: &[SweepTable], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for table in tables {
        let path = dir.join(format!("sweep_{}.csv", table.protocol));
        std::fs::write(&path, table.to_csv())?;
        written.push(path);
    }
    Ok(written)
}

/// Either config file shape accepted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigFile {
    Sweep(SweepSpec),
    Experiment(ExperimentSpec),
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.line(), e.column(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            m: 20,
            n: 8,
            s: 4,
            seed: 77,
            noise: None,
            methods: vec![
                MethodSpec {
                    method: Method::Rsk,
                    variant: None,
                    lambda: 0.5,
                    eta: None,
                    alpha: None,
                    label: None,
                },
                MethodSpec {
                    method: Method::Rska,
                    variant: Some(Variant::V2),
                    lambda: 0.5,
                    eta: Some(3),
                    alpha: None,
                    label: None,
                },
            ],
            trials: 4,
            max_iters: 120,
            record_every: 1,
            residual_tol: 0.0,
            output: None,
        }
    }

    #[test]
    fn single_trial_aggregate_is_the_trace_with_zero_std() {
        let mut spec = tiny_spec();
        spec.trials = 1;
        let result = run_experiment(&spec).unwrap();
        let agg = &result.aggregate;
        let trace = &result.per_method[0].traces[0];
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(agg.methods[0].res_mean[i], r.rel_residual);
            assert_eq!(agg.methods[0].res_std[i], 0.0);
        }
    }

    #[test]
    fn aggregate_grids_are_shared_across_methods() {
        let result = run_experiment(&tiny_spec()).unwrap();
        let agg = result.aggregate;
        assert_eq!(agg.grid.len(), 121);
        for m in &agg.methods {
            assert_eq!(m.res_mean.len(), agg.grid.len());
            assert!(m.res_std.iter().all(|s| *s >= 0.0));
            assert!(m.err_std.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn outputs_are_thread_count_invariant() {
        let spec = tiny_spec();
        let csv_under = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let result = run_experiment(&spec).unwrap();
                let mut all = result.aggregate.to_csv();
                for m in &result.per_method {
                    for t in &m.traces {
                        all.push_str(&t.to_csv());
                    }
                }
                all
            })
        };
        let one = csv_under(1);
        assert_eq!(one, csv_under(4));
        assert_eq!(one, csv_under(8));
    }

    #[test]
    fn method_labels() {
        let spec = tiny_spec();
        assert_eq!(spec.methods[0].label(), "RSK");
        assert_eq!(spec.methods[1].label(), "RSKA-v2");
    }

    #[test]
    fn experiment_json_round_trip() {
        let spec = tiny_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back = ExperimentSpec::from_json(&text).unwrap();
        assert_eq!(back.methods.len(), 2);
        assert_eq!(back.seed, 77);
    }

    #[test]
    fn config_file_distinguishes_sweeps() {
        let exp = serde_json::to_string(&tiny_spec()).unwrap();
        assert!(matches!(
            ConfigFile::from_json(&exp).unwrap(),
            ConfigFile::Experiment(_)
        ));
        let sweep_spec = SweepSpec {
            parameter: SweepParameter::Eta,
            grid: vec![1.0, 2.0],
            base: tiny_spec(),
            target: 1e-6,
        };
        let text = serde_json::to_string(&sweep_spec).unwrap();
        assert!(matches!(
            ConfigFile::from_json(&text).unwrap(),
            ConfigFile::Sweep(_)
        ));
    }

    #[test]
    fn eta_sweep_produces_one_cell_per_grid_point_per_method() {
        let mut base = tiny_spec();
        base.max_iters = 4000;
        base.record_every = 5;
        base.trials = 2;
        let spec = SweepSpec {
            parameter: SweepParameter::Eta,
            grid: vec![1.0, 4.0],
            base,
            target: 1e-6,
        };
        let tables = sweep(&spec).unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].cells.len(), 4);
        for cell in &tables[0].cells {
            assert!(!cell.diverged);
        }
    }

    #[test]
    fn lambda_sweep_emits_both_budget_protocols() {
        let mut base = tiny_spec();
        base.max_iters = 200;
        base.trials = 2;
        let spec = SweepSpec {
            parameter: SweepParameter::Lambda,
            grid: vec![0.1, 1.0],
            base,
            target: 1e-6,
        };
        let tables = sweep(&spec).unwrap();
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].protocol, "fixed-budget");
        assert_eq!(tables[1].protocol, "scaled-budget");
        // scaled budget grows with lambda
        let scaled = &tables[1];
        let b01 = scaled.cells.iter().find(|c| c.value == 0.1).unwrap().budget;
        let b1 = scaled.cells.iter().find(|c| c.value == 1.0).unwrap().budget;
        assert_eq!(b01, 220);
        assert_eq!(b1, 400);
    }

    #[test]
    fn written_outputs_exist_and_are_utf8_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec();
        spec.trials = 2;
        spec.max_iters = 10;
        let result = run_experiment(&spec).unwrap();
        let files = write_experiment_outputs(&result, dir.path()).unwrap();
        assert_eq!(files.len(), 1 + 2 * 2);
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert!(text.lines().count() > 1);
        }
    }
}
