//! Experiment configuration and the drivers behind the command-line tool.

use crate::bench::{assemble_adr, import_problem, synthetic_multiparam, BenchmarkProblem, SyntheticSpec};
use crate::eim::{eim, tabulate_coefficients, tabulate_products, EimModel, DEFAULT_REL_TOL};
use crate::error::{Error, Result};
use crate::greedy::{
    fmt_f64, fmt_point, greedy_delta, greedy_frob, greedy_frob_continue, lhs_preconditioner, write_history_csv,
    GreedyOptions, Preconditioner, PreconditionerState,
};
use crate::precond::ConstraintMode;
use crate::reduction::{pod_basis, rb_greedy, truth_solutions, RbMode, RbOptions, ReducedModel};
use crate::rng::derive_seed;
use crate::sketch::{min_sketch_columns, SketchKind, SketchMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Adr {
        #[serde(default = "default_mesh_side")]
        mesh_side: usize,
        #[serde(default = "default_advection")]
        advection: f64,
    },
    Synthetic {
        d: usize,
        n: usize,
        num_terms: usize,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
    },
    Import {
        path: PathBuf,
    },
}

fn default_mesh_side() -> usize {
    40
}
fn default_advection() -> f64 {
    50.0
}
fn default_grid_size() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub columns: usize,
}

impl Default for SketchSpec {
    fn default() -> Self {
        Self { kind: SketchKind::Psrht, columns: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    FrobResidual,
    DeltaRm,
    Lhs,
    /// Fixed points from the configuration.
    Points,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbSpec {
    #[serde(default = "default_rb_mode")]
    pub mode: RbMode,
    #[serde(default = "default_rb_iterations")]
    pub iterations: usize,
    #[serde(default = "default_stride")]
    pub validation_stride: usize,
}

fn default_rb_mode() -> RbMode {
    RbMode::PrecondReuse
}
fn default_rb_iterations() -> usize {
    25
}
fn default_stride() -> usize {
    5
}

impl Default for RbSpec {
    fn default() -> Self {
        Self { mode: default_rb_mode(), iterations: default_rb_iterations(), validation_stride: default_stride() }
    }
}

/// Reduced space used by the δ-based point selection: POD of snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodSpec {
    pub snapshots: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub sketch: SketchSpec,
    #[serde(default)]
    pub constraint: ConstraintMode,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed_point: Option<Vec<f64>>,
    #[serde(default)]
    pub diagnostics: bool,
    /// Basis sizes at which κ is evaluated when diagnostics are on (all if empty).
    #[serde(default)]
    pub kappa_at: Vec<usize>,
    #[serde(default)]
    pub rb: RbSpec,
    #[serde(default)]
    pub pod: Option<PodSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_iterations() -> usize {
    10
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            config_error(&e.path().to_string(), e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| config_error(&path.as_ref().display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sketch.columns == 0 {
            return Err(config_error("sketch.columns", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(config_error("iterations", "must be positive"));
        }
        if self.strategy == Strategy::Points && self.points.is_empty() {
            return Err(config_error("points", "strategy `points` needs at least one point"));
        }
        if self.strategy == Strategy::DeltaRm && self.pod.is_none() {
            return Err(config_error("pod", "strategy `delta-rm` needs a `pod` section"));
        }
        if let Some(p) = &self.pod {
            if p.rank == 0 || p.rank > p.snapshots {
                return Err(config_error("pod.rank", "must lie in 1..=snapshots"));
            }
        }
        if let ConstraintMode::Kappa(k) = self.constraint {
            if !(k > 0.0) {
                return Err(config_error("constraint", "kappa bound must be positive"));
            }
        }
        match &self.problem {
            ProblemSpec::Adr { mesh_side, .. } if *mesh_side < 4 => Err(config_error("problem.mesh_side", "must be at least 4")),
            ProblemSpec::Synthetic { d, num_terms, .. } if *d < 1 || *num_terms < 2 => {
                Err(config_error("problem", "synthetic problems need d ≥ 1 and num_terms ≥ 2"))
            }
            _ => Ok(()),
        }
    }

    pub fn build_problem(&self) -> Result<BenchmarkProblem> {
        match &self.problem {
            ProblemSpec::Adr { mesh_side, advection } => assemble_adr(*mesh_side, *advection),
            ProblemSpec::Synthetic { d, n, num_terms, grid_size } => synthetic_multiparam(&SyntheticSpec {
                d: *d,
                n: *n,
                num_terms: *num_terms,
                grid_size: *grid_size,
                seed: derive_seed(self.seed, "problem"),
            }),
            ProblemSpec::Import { path } => import_problem(path),
        }
    }

    pub fn build_sketch(&self, n: usize) -> Result<SketchMatrix> {
        SketchMatrix::new(self.sketch.kind, n, self.sketch.columns, derive_seed(self.seed, "sketch"))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("paraprec-out"))
    }

    fn greedy_options(&self) -> GreedyOptions {
        let kappa_at = if !self.diagnostics {
            Vec::new()
        } else if self.kappa_at.is_empty() {
            (0..=self.iterations).collect()
        } else {
            self.kappa_at.clone()
        };
        GreedyOptions { seed_point: self.seed_point.clone(), kappa_at, kappa_tol: 1e-4, stop_score: 0.0 }
    }
}

/// Writes a file through a closure, creating parent directories.
pub fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Minimal sketch sizes on the grid n ∈ {10⁴, 10⁶, 10⁸}, m ∈ {2, 5, 10, 20, 50}.
pub fn sketch_bounds_table(kind: SketchKind, ratio: f64, delta: f64) -> Result<Vec<(usize, usize, u64)>> {
    let mut out = Vec::new();
    for n in [10_000usize, 1_000_000, 100_000_000] {
        for m in [2usize, 5, 10, 20, 50] {
            out.push((n, m, min_sketch_columns(kind, n, m, ratio, delta)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecondSummary {
    pub points: Vec<Vec<f64>>,
    pub constraint: ConstraintMode,
    pub sup_sketch_residual: f64,
    pub q97_sketch_residual: f64,
    pub sup_kappa: Option<f64>,
}

/// Per-ξ sweep CSV of a preconditioner: sketched residual, optional κ, λ(ξ).
pub const SWEEP_SCHEMA: &str = "# schema: paraprec-sweep v1";

pub fn sweep(p: &Preconditioner, grid: &[Vec<f64>], kappa: bool, out: &Path) -> Result<PrecondSummary> {
    let rows: Vec<(f64, Option<f64>, Vec<f64>)> = grid
        .par_iter()
        .map(|xi| {
            let r = p.sketched_residual(xi)?;
            let k = if kappa { Some(p.kappa_at(xi, 1e-4)?) } else { None };
            let lambda = if p.is_empty() { Vec::new() } else { p.coefficients(xi)?.lambda };
            Ok((r, k, lambda))
        })
        .collect::<Result<_>>()?;
    write_file(out, |w| {
        writeln!(w, "{SWEEP_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(&mut *w);
        let mut header = vec!["xi".to_string(), "sketch_residual".into(), "kappa".into()];
        header.extend((1..=p.len()).map(|i| format!("lambda_{i}")));
        csv.write_record(&header)?;
        for (xi, (r, k, l)) in grid.iter().zip(&rows) {
            let mut rec = vec![fmt_point(xi), fmt_f64(*r), k.map(fmt_f64).unwrap_or_default()];
            rec.extend(l.iter().map(|v| fmt_f64(*v)));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let res: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(PrecondSummary {
        points: p.points().to_vec(),
        constraint: p.mode(),
        sup_sketch_residual: res.iter().copied().fold(0.0, f64::max),
        q97_sketch_residual: crate::reduction::quantile(&res, 0.97),
        sup_kappa: kappa.then(|| rows.iter().filter_map(|r| r.1).fold(0.0, f64::max)),
    })
}

/// Builds a preconditioner from fixed points (or an LHS sample) and sweeps it over Ξ.
pub fn run_build_precond(cfg: &ExperimentConfig) -> Result<PrecondSummary> {
    let prob = cfg.build_problem()?;
    let v = cfg.build_sketch(prob.dim())?;
    let p = match cfg.strategy {
        Strategy::Lhs => lhs_preconditioner(&prob.op, &prob.grid, v, cfg.iterations, cfg.constraint, derive_seed(cfg.seed, "lhs"))?,
        _ => {
            if cfg.points.is_empty() {
                return Err(config_error("points", "build-precond needs `points` (or strategy `lhs`)"));
            }
            let mut p = Preconditioner::from_points(&prob.op, v, &prob.grid, cfg.constraint, &cfg.points)?;
            p.strategy = "points".into();
            p
        }
    };
    let dir = cfg.output_dir();
    write_json(&dir.join("precond.json"), &p.state())?;
    let summary = sweep(&p, &prob.grid, cfg.diagnostics, &dir.join("sweep.csv"))?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// POD basis from snapshots at the first grid points of an LHS/uniform subsample.
pub fn pod_model(prob: &BenchmarkProblem, spec: &PodSpec) -> Result<ReducedModel> {
    let g = &prob.grid;
    let step = (g.len() / spec.snapshots.max(1)).max(1);
    let snaps: Vec<Vec<f64>> = (0..spec.snapshots.min(g.len()))
        .into_par_iter()
        .map(|i| crate::reduction::solve_full(&prob.op, &prob.rhs, &g[(i * step) % g.len()]))
        .collect::<Result<_>>()?;
    let basis = pod_basis(&snaps, &prob.norm, spec.rank)?;
    let mut model = ReducedModel::from_columns(&prob.op, &prob.rhs, Arc::new(prob.norm.clone()), &basis)?;
    model.mode = "pod".into();
    Ok(model)
}

/// Greedy preconditioner construction; `resume` continues from a saved state.
pub fn run_greedy_precond(cfg: &ExperimentConfig, resume: Option<&PreconditionerState>) -> Result<PrecondSummary> {
    let prob = cfg.build_problem()?;
    let opts = cfg.greedy_options();
    let p = match (resume, cfg.strategy) {
        (Some(st), Strategy::FrobResidual) => {
            if st.mode != cfg.constraint {
                return Err(config_error("constraint", "differs from the resumed preconditioner"));
            }
            let mut p = Preconditioner::from_state(&prob.op, &prob.grid, st)?;
            greedy_frob_continue(&mut p, &prob.grid, cfg.iterations, &opts)?;
            p
        }
        (Some(_), _) => return Err(config_error("strategy", "only the frob-residual strategy can be resumed")),
        (None, Strategy::FrobResidual) => {
            let v = cfg.build_sketch(prob.dim())?;
            greedy_frob(&prob.op, &prob.grid, v, cfg.iterations, cfg.constraint, &opts)?
        }
        (None, Strategy::DeltaRm) => {
            let spec = cfg.pod.as_ref().ok_or_else(|| config_error("pod", "missing"))?;
            let model = pod_model(&prob, spec)?;
            let v = cfg.build_sketch(prob.dim())?;
            greedy_delta(&prob.op, &prob.grid, &model, v, cfg.iterations, cfg.constraint, &opts)?
        }
        (None, Strategy::Lhs) => {
            let v = cfg.build_sketch(prob.dim())?;
            lhs_preconditioner(&prob.op, &prob.grid, v, cfg.iterations, cfg.constraint, derive_seed(cfg.seed, "lhs"))?
        }
        (None, Strategy::Points) => {
            let v = cfg.build_sketch(prob.dim())?;
            Preconditioner::from_points(&prob.op, v, &prob.grid, cfg.constraint, &cfg.points)?
        }
    };
    let dir = cfg.output_dir();
    write_file(&dir.join("history.csv"), |w| write_history_csv(&p, w))?;
    write_json(&dir.join("precond.json"), &p.state())?;
    let summary = PrecondSummary {
        points: p.points().to_vec(),
        constraint: p.mode(),
        sup_sketch_residual: p.history.last().map_or(p.initial_sup_score.unwrap_or(f64::NAN), |h| h.sup_score),
        q97_sketch_residual: f64::NAN,
        sup_kappa: p.history.last().and_then(|h| h.sup_kappa),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Sweeps a saved preconditioner over the grid.
pub fn run_sweep(cfg: &ExperimentConfig, state: &PreconditionerState) -> Result<PrecondSummary> {
    let prob = cfg.build_problem()?;
    let p = Preconditioner::from_state(&prob.op, &prob.grid, state)?;
    let dir = cfg.output_dir();
    let summary = sweep(&p, &prob.grid, cfg.diagnostics, &dir.join("sweep.csv"))?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbSummary {
    pub mode: RbMode,
    pub rank: usize,
    pub stagnated: bool,
    pub final_sup_rel_err: f64,
    pub final_q97_rel_err: f64,
    pub final_eff_interval: (f64, f64),
}

pub fn run_rb_greedy(cfg: &ExperimentConfig) -> Result<RbSummary> {
    let prob = cfg.build_problem()?;
    let truth = truth_solutions(&prob)?;
    let opts = RbOptions {
        sketch: cfg.build_sketch(prob.dim())?,
        constraint: cfg.constraint,
        validation_stride: cfg.rb.validation_stride,
    };
    let fixed = if cfg.rb.mode == RbMode::PrecondFixed {
        let v = cfg.build_sketch(prob.dim())?;
        let p = if cfg.points.is_empty() {
            greedy_frob(&prob.op, &prob.grid, v, cfg.iterations, cfg.constraint, &GreedyOptions { seed_point: cfg.seed_point.clone(), ..Default::default() })?
        } else {
            Preconditioner::from_points(&prob.op, v, &prob.grid, cfg.constraint, &cfg.points)?
        };
        Some(p)
    } else {
        None
    };
    let out = rb_greedy(&prob, &truth, cfg.rb.iterations, cfg.rb.mode, &opts, fixed)?;
    let dir = cfg.output_dir();
    write_file(&dir.join("trace.csv"), |w| out.trace.write_csv(w))?;
    out.model.save(dir.join("model"))?;
    if let Some(p) = &out.precond {
        write_json(&dir.join("precond.json"), &p.state())?;
    }
    let last = out.trace.records.last();
    let summary = RbSummary {
        mode: cfg.rb.mode,
        rank: out.model.rank(),
        stagnated: out.trace.stagnated,
        final_sup_rel_err: last.map_or(f64::NAN, |t| t.sup_rel_err),
        final_q97_rel_err: last.map_or(f64::NAN, |t| t.q97_rel_err),
        final_eff_interval: last.map_or((f64::NAN, f64::NAN), |t| (t.eff_lo, t.eff_hi)),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EimSummary {
    pub operator_products: EimModel,
    pub coefficients: EimModel,
}

/// EIM of the coefficient products and of the coefficients over the grid.
pub fn run_eim_inspect(cfg: &ExperimentConfig) -> Result<EimSummary> {
    let prob = cfg.build_problem()?;
    let c = tabulate_coefficients(&prob.op, &prob.grid)?;
    let summary = EimSummary {
        operator_products: eim(&tabulate_products(&c), &prob.grid, DEFAULT_REL_TOL)?,
        coefficients: eim(&c, &prob.grid, DEFAULT_REL_TOL)?,
    };
    write_json(&cfg.output_dir().join("eim.json"), &summary)?;
    Ok(summary)
}

pub fn read_state(path: impl AsRef<Path>) -> Result<PreconditionerState> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|e| config_error(&p.display().to_string(), e.to_string()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| config_error(&e.path().to_string(), e.inner().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rejections() {
        let c = ExperimentConfig::from_json(r#"{"problem": {"kind": "adr", "mesh_side": 8}}"#).unwrap();
        assert_eq!(c.sketch, SketchSpec::default());
        assert_eq!(c.constraint, ConstraintMode::Unconstrained);
        let e = ExperimentConfig::from_json(r#"{"problem": {"kind": "adr"}, "bogus": 1}"#).unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        let e = ExperimentConfig::from_json(r#"{"problem": {"kind": "adr", "mesh_side": 8}, "constraint": "kappa:x"}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "constraint"),
            other => panic!("{other:?}"),
        }
    }
}
