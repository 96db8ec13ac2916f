//! Run directories: a manifest, the copied model config, hashed value grids,
//! and the derived risk, safe-set, policy, simulation and export artifacts.
//!
//! Every file a manifest references is hash-checked on load. Solving is
//! resumable: converged grids are kept, unconverged ones continue from their
//! stored iterate, and a rerun with nothing to do leaves the directory untouched.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::MdpModel;
use crate::policy::{synthesize, PrecommitmentPolicy};
use crate::risk::{
    compute_v_alpha, safe_set, solve_with_gamma_stopping, Checkpoint, GammaOptions, GammaRecord, RiskResult, SafeSet,
    VsFamily,
};
use crate::sim::{estimate_cvar, rollout_indexed, CvarEstimate, Horizon};
use crate::store::{self, GridRecord};
use crate::vi::{BellmanOperator, ViSolution};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const GRID_DIR: &str = "grids";
pub const CHECKPOINTS_FILE: &str = "gamma_checkpoints.json";
pub const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_ALPHAS: [f64; 2] = [0.05, 0.0005];
pub const DEFAULT_R_LEVELS: [f64; 8] = [0.2, 0.5, 0.6, 0.8, 1.0, 1.2, 1.5, 1.8];

/// How the per-`s` value iterations are stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stopping {
    /// Each `s` independently, until the sup-norm step is at most `tol`.
    Tolerance { tol: f64, max_iter: usize },
    /// All `s` in lockstep until the checkpoint criterion holds for every alpha.
    Gamma {
        alphas: Vec<f64>,
        stride: usize,
        threshold: f64,
        max_iter: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub s: f64,
    pub record_file: String,
    pub record_hash: String,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSummary {
    pub stopped_at: Option<usize>,
    pub history: Vec<GammaRecord>,
    pub checkpoints_file: String,
    pub checkpoints_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub model_hash: String,
    pub config_file: String,
    pub config_hash: String,
    pub shift: f64,
    pub s_values: Vec<f64>,
    pub stopping: Stopping,
    pub grids: Vec<GridEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSummary>,
    /// Derived outputs, relative path to content hash.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn status(&self) -> RunStatus {
        let complete = match &self.gamma {
            Some(g) => g.stopped_at.is_some(),
            None => self.grids.iter().all(|g| g.converged),
        };
        if complete {
            RunStatus::Complete
        } else {
            RunStatus::Partial
        }
    }

    pub fn unconverged(&self) -> Vec<f64> {
        self.grids.iter().filter(|g| !g.converged).map(|g| g.s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    /// Some `s` hit the iteration cap, or the gamma criterion was never met.
    Partial,
}

#[derive(Debug, Clone)]
pub struct SolveRequest {
    pub config_text: String,
    pub s_values: Vec<f64>,
    pub stopping: Stopping,
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub manifest: RunManifest,
    pub status: RunStatus,
    /// Number of `s` values whose grids were (re)computed by this call.
    pub computed: usize,
}

fn read_manifest(dir: &Path) -> Result<RunManifest> {
    store::read_json(&dir.join(MANIFEST_FILE))
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    store::write_json(&dir.join(MANIFEST_FILE), m).map(|_| ())
}

fn grid_stem(s: f64) -> String {
    format!("s{s}")
}

fn load_entry(dir: &Path, entry: &GridEntry) -> Result<(GridRecord, ViSolution)> {
    let grids = dir.join(GRID_DIR);
    let rpath = grids.join(&entry.record_file);
    store::verify_file(&rpath, &entry.record_hash)?;
    let record: GridRecord = store::read_json(&rpath)?;
    let sol = store::load_solution(&grids, &record)?;
    Ok((record, sol))
}

fn save_entry(dir: &Path, sol: &ViSolution, model_hash: &str, tol: f64) -> Result<GridEntry> {
    let stem = grid_stem(sol.value.s());
    let (record, hash) = store::save_solution(&dir.join(GRID_DIR), &stem, sol, model_hash, tol)?;
    Ok(GridEntry {
        s: record.s,
        record_file: format!("{stem}.json"),
        record_hash: hash,
        converged: record.report.converged,
        iterations: record.report.iterations_run,
    })
}

/// Solves (or resumes) every requested `s` and writes the run directory.
pub fn solve(dir: &Path, req: &SolveRequest) -> Result<SolveOutcome> {
    let config = ModelConfig::parse(&req.config_text)?;
    let model = config.build(req.shift)?;
    let model_hash = model.identity().to_string();
    if req.s_values.is_empty() {
        return Err(Error::validation("s_grid", "at least one s value is required"));
    }
    let previous = match read_manifest(dir) {
        Ok(m) => Some(m),
        Err(Error::MissingArtifacts(_)) => None,
        Err(e) => return Err(e),
    };
    if let Some(prev) = &previous {
        if prev.model_hash != model_hash {
            return Err(Error::validation(
                "out",
                format!("directory holds a run of model {}, not {model_hash}", prev.model_hash),
            ));
        }
    }
    std::fs::create_dir_all(dir)?;
    let config_hash = store::write_json(&dir.join(CONFIG_FILE), &config)?;

    let (grids, gamma, computed) = match &req.stopping {
        Stopping::Tolerance { tol, max_iter } => solve_tolerance(dir, &model, req, previous.as_ref(), *tol, *max_iter)?,
        Stopping::Gamma { .. } => solve_gamma(dir, &model, req, previous.as_ref())?,
    };
    let mut manifest = RunManifest {
        format_version: FORMAT_VERSION,
        model_hash,
        config_file: CONFIG_FILE.into(),
        config_hash,
        shift: req.shift,
        s_values: req.s_values.clone(),
        stopping: req.stopping.clone(),
        grids,
        gamma,
        artifacts: BTreeMap::new(),
    };
    if let Some(prev) = previous {
        if computed == 0 && prev.grids == manifest.grids && prev.gamma == manifest.gamma {
            manifest.artifacts = prev.artifacts.clone();
        }
        if prev == manifest {
            let status = manifest.status();
            return Ok(SolveOutcome {
                manifest,
                status,
                computed,
            });
        }
    }
    write_manifest(dir, &manifest)?;
    let status = manifest.status();
    Ok(SolveOutcome {
        manifest,
        status,
        computed,
    })
}

type Solved = (Vec<GridEntry>, Option<GammaSummary>, usize);

fn solve_tolerance(
    dir: &Path,
    model: &MdpModel,
    req: &SolveRequest,
    previous: Option<&RunManifest>,
    tol: f64,
    max_iter: usize,
) -> Result<Solved> {
    let model_hash = model.identity();
    let op = BellmanOperator::new(model);
    let prior: BTreeMap<u64, &GridEntry> = previous
        .filter(|p| p.gamma.is_none())
        .map(|p| p.grids.iter().map(|g| (g.s.to_bits(), g)).collect())
        .unwrap_or_default();
    let results = req
        .s_values
        .par_iter()
        .map(|&s| -> Result<(GridEntry, bool)> {
            if let Some(entry) = prior.get(&s.to_bits()) {
                // a damaged or missing grid is simply recomputed
                if let Ok((record, sol)) = load_entry(dir, entry) {
                    let done = if record.report.converged {
                        record.tol <= tol
                    } else {
                        record.report.iterations_run >= max_iter
                    };
                    if done {
                        return Ok(((*entry).clone(), false));
                    }
                    let sol = op.resume(sol, max_iter, tol)?;
                    return Ok((save_entry(dir, &sol, model_hash, tol)?, true));
                }
            }
            let sol = op.solve(model, s, max_iter, tol)?;
            Ok((save_entry(dir, &sol, model_hash, tol)?, true))
        })
        .collect::<Result<Vec<_>>>()?;
    let computed = results.iter().filter(|(_, c)| *c).count();
    Ok((results.into_iter().map(|(e, _)| e).collect(), None, computed))
}

fn solve_gamma(dir: &Path, model: &MdpModel, req: &SolveRequest, previous: Option<&RunManifest>) -> Result<Solved> {
    let Stopping::Gamma {
        alphas,
        stride,
        threshold,
        max_iter,
    } = &req.stopping
    else {
        unreachable!("called for gamma stopping only");
    };
    if let Some(prev) = previous {
        if prev.stopping == req.stopping && prev.s_values == req.s_values && verify_run_files(dir, prev).is_ok() {
            return Ok((prev.grids.clone(), prev.gamma.clone(), 0));
        }
    }
    let opts = GammaOptions {
        stride: *stride,
        threshold: *threshold,
        max_iter: *max_iter,
    };
    let run = solve_with_gamma_stopping(model, &req.s_values, alphas, &opts)?;
    let grids = run
        .solutions
        .par_iter()
        .map(|sol| save_entry(dir, sol, model.identity(), 0.0))
        .collect::<Result<Vec<_>>>()?;
    let checkpoints_hash = store::write_json(&dir.join(CHECKPOINTS_FILE), &run.checkpoints)?;
    let computed = grids.len();
    Ok((
        grids,
        Some(GammaSummary {
            stopped_at: run.stopped_at,
            history: run.history,
            checkpoints_file: CHECKPOINTS_FILE.into(),
            checkpoints_hash,
        }),
        computed,
    ))
}

fn verify_run_files(dir: &Path, m: &RunManifest) -> Result<()> {
    for g in &m.grids {
        load_entry(dir, g)?;
    }
    if let Some(g) = &m.gamma {
        store::verify_file(&dir.join(&g.checkpoints_file), &g.checkpoints_hash)?;
    }
    Ok(())
}

/// A loaded, hash-verified run.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub model: MdpModel,
    pub family: VsFamily,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let cpath = dir.join(&manifest.config_file);
        store::verify_file(&cpath, &manifest.config_hash)?;
        let text = std::fs::read_to_string(&cpath)?;
        let model = ModelConfig::parse(&text)?.build(manifest.shift)?;
        if model.identity() != manifest.model_hash {
            return Err(Error::Consistency(format!(
                "config rebuilds to model {}, manifest says {}",
                model.identity(),
                manifest.model_hash
            )));
        }
        let mut missing = Vec::new();
        let mut solutions = Vec::with_capacity(manifest.grids.len());
        for entry in &manifest.grids {
            match load_entry(dir, entry) {
                Ok((_, sol)) => solutions.push(sol),
                Err(Error::MissingArtifacts(_)) => missing.push(entry.s),
                Err(e) => return Err(e),
            }
        }
        let listed: Vec<u64> = manifest.grids.iter().map(|g| g.s.to_bits()).collect();
        missing.extend(manifest.s_values.iter().filter(|s| !listed.contains(&s.to_bits())));
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(format!("value grids for s = {missing:?}")));
        }
        let family = VsFamily::from_solutions(model.layout(), manifest.s_values.clone(), solutions)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            model,
            family,
        })
    }

    pub fn risk(&self, alpha: f64) -> Result<RiskResult> {
        compute_v_alpha(&self.family, alpha)
    }

    /// Safe set for `r` in the original (unshifted) cost units.
    pub fn safe_set(&self, result: &RiskResult, r: f64) -> SafeSet {
        let mut set = safe_set(result, r + result.cost_shift);
        set.r = r;
        set
    }

    pub fn policy(&self, alpha: f64, x0: &[f64]) -> Result<(RiskResult, PrecommitmentPolicy)> {
        let result = self.risk(alpha)?;
        let policy = synthesize(&self.family, &result, x0)?;
        Ok((result, policy))
    }

    pub fn checkpoints(&self) -> Result<Option<Vec<Checkpoint>>> {
        match &self.manifest.gamma {
            None => Ok(None),
            Some(g) => {
                let path = self.dir.join(&g.checkpoints_file);
                store::verify_file(&path, &g.checkpoints_hash)?;
                Ok(Some(store::read_json(&path)?))
            }
        }
    }

    fn record(&mut self, rel: &str, hash: String) -> Result<()> {
        self.manifest.artifacts.insert(rel.to_string(), hash);
        write_manifest(&self.dir, &self.manifest)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        let hash = store::write_atomic(&path, bytes)?;
        self.record(rel, hash)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn coord_header(&self) -> String {
        (1..=self.model.state_grid().dim())
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn coords(&self, k: usize) -> String {
        join(&self.model.state_grid().node(k))
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn tag(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSetSummary {
    pub r: f64,
    pub count: usize,
    pub rectangularity: Option<f64>,
    pub file: String,
}

/// Metadata written next to the per-alpha risk tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMetadata {
    pub alpha: f64,
    pub model_hash: String,
    pub s_values: Vec<f64>,
    pub quantization_bound: f64,
    pub cost_shift: f64,
    pub unconverged_s: Vec<f64>,
    pub risk_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour_file: Option<String>,
    pub safe_sets: Vec<SafeSetSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_stopped_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_history: Vec<GammaRecord>,
}

/// Writes `V*_alpha`, `s*`, contour tables and one mask per `r` for each alpha.
pub fn safesets(dir: &Path, alphas: &[f64], rs: &[f64]) -> Result<Vec<RiskMetadata>> {
    let mut run = Run::open(dir)?;
    let shape = run.model.state_grid().shape();
    let mut out = Vec::new();
    for &alpha in alphas {
        let result = run.risk(alpha)?;
        let base = format!("risk/alpha{alpha}");
        let v = result.unshifted_v_star();

        let mut csv = format!("{},v_star,s_star\n", run.coord_header());
        for k in 0..result.len() {
            writeln!(csv, "{},{},{}", run.coords(k), v[k], result.s_star[k]).unwrap();
        }
        let risk_file = format!("{base}.csv");
        run.write(&risk_file, csv.as_bytes())?;

        let contour_file = if shape.len() == 2 {
            let rel = format!("{base}.contour.csv");
            run.write(&rel, contour_table(&run.model, &v).as_bytes())?;
            Some(rel)
        } else {
            None
        };

        let mut safe_sets = Vec::new();
        for &r in rs {
            let set = run.safe_set(&result, r);
            let mut csv = format!("{},safe\n", run.coord_header());
            for (k, &m) in set.mask.iter().enumerate() {
                writeln!(csv, "{},{}", run.coords(k), u8::from(m)).unwrap();
            }
            let file = format!("{base}.r{r}.csv");
            run.write(&file, csv.as_bytes())?;
            safe_sets.push(SafeSetSummary {
                r,
                count: set.count(),
                rectangularity: set.rectangularity(&shape),
                file,
            });
        }
        let meta = RiskMetadata {
            alpha,
            model_hash: run.manifest.model_hash.clone(),
            s_values: run.manifest.s_values.clone(),
            quantization_bound: result.quantization_bound,
            cost_shift: result.cost_shift,
            unconverged_s: run.manifest.unconverged(),
            risk_file,
            contour_file,
            safe_sets,
            gamma_stopped_at: run.manifest.gamma.as_ref().and_then(|g| g.stopped_at),
            gamma_history: run.manifest.gamma.as_ref().map(|g| g.history.clone()).unwrap_or_default(),
        };
        run.write_json(&format!("{base}.json"), &meta)?;
        out.push(meta);
    }
    Ok(out)
}

/// `V` as a matrix: one row per `x2` node, one column per `x1` node.
fn contour_table(model: &MdpModel, v: &[f64]) -> String {
    let axes = model.state_grid().axes();
    let (a1, a2) = (&axes[0], &axes[1]);
    let mut out = String::from("x2\\x1");
    for x1 in a1.nodes() {
        write!(out, ",{x1}").unwrap();
    }
    out.push('\n');
    for (j, x2) in a2.nodes().enumerate() {
        write!(out, "{x2}").unwrap();
        for i in 0..a1.len() {
            write!(out, ",{}", v[model.state_grid().flat_index(&[i, j])]).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub alpha: f64,
    pub x0: Vec<f64>,
    /// Grid node the commitment was read at.
    pub x0_node: Vec<f64>,
    pub s_star: f64,
    pub v_star: f64,
    pub quantization_bound: f64,
    pub model_hash: String,
    pub selector_file: String,
    pub selector_hash: String,
}

/// Writes the committed selector tensor and its metadata.
pub fn policy(dir: &Path, alpha: f64, x0: &[f64]) -> Result<PolicyMetadata> {
    let mut run = Run::open(dir)?;
    check_x0(&run.model, x0)?;
    let (result, pol) = run.policy(alpha, x0)?;
    let base = format!("policy/alpha{alpha}.x{}", tag(x0));
    let sel = &pol.greedy.selector;
    let selector_file = format!("{base}.selector.bin");
    let bytes = store::encode_u32(&[sel.n_states(), sel.nz()], sel.indices());
    run.write(&selector_file, &bytes)?;
    let meta = PolicyMetadata {
        alpha,
        x0: x0.to_vec(),
        x0_node: run.model.state_grid().node(run.model.state_grid().nearest(x0)),
        s_star: pol.s_star,
        v_star: pol.v_star - result.cost_shift,
        quantization_bound: result.quantization_bound,
        model_hash: run.manifest.model_hash.clone(),
        selector_hash: store::sha256_bytes(&bytes),
        selector_file,
    };
    run.write_json(&format!("{base}.json"), &meta)?;
    Ok(meta)
}

fn check_x0(model: &MdpModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.state_grid().dim() || !model.state_grid().contains(x0) {
        return Err(Error::validation("x0", format!("initial state {x0:?} outside the grid box")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateRequest {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub n: usize,
    pub horizon: Horizon,
    pub seed: u64,
    /// Number of leading rollouts to dump as trajectory CSVs.
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub s_star: f64,
    /// Solver value at the nearest state node, unshifted.
    pub solver_v_star: f64,
    pub quantization_bound: f64,
    /// Estimate and interval in unshifted cost units.
    pub estimate: CvarEstimate,
    /// `estimate <= V* + quantization bound + CI half-width`.
    pub within_upper_bound: bool,
    pub model_hash: String,
    pub trajectory_files: Vec<String>,
}

pub fn simulate(dir: &Path, req: &SimulateRequest) -> Result<SimulationReport> {
    let mut run = Run::open(dir)?;
    check_x0(&run.model, &req.x0)?;
    let (result, pol) = run.policy(req.alpha, &req.x0)?;
    let shift = result.cost_shift;
    let mut est = estimate_cvar(&run.model, &pol, &req.x0, req.alpha, req.n, req.horizon, req.seed)?;
    est.point -= shift;
    est.ci_low -= shift;
    est.ci_high -= shift;
    est.mean -= shift;
    for (_, v) in &mut est.horizon_trace {
        *v -= shift;
    }
    let base = format!("simulate/alpha{}.x{}.seed{}", req.alpha, tag(&req.x0), req.seed);
    let mut trajectory_files = Vec::new();
    for i in 0..req.trajectories.min(req.n) {
        let traj = rollout_indexed(&run.model, &pol, &req.x0, est.horizon, req.seed, i as u64)?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let rel = format!("{base}.traj{i}.csv");
        run.write(&rel, &buf)?;
        trajectory_files.push(rel);
    }
    let v_star = pol.v_star - shift;
    let report = SimulationReport {
        alpha: req.alpha,
        x0: req.x0.clone(),
        s_star: pol.s_star,
        solver_v_star: v_star,
        quantization_bound: result.quantization_bound,
        within_upper_bound: est.point <= v_star + result.quantization_bound + est.ci_half_width(),
        estimate: est,
        model_hash: run.manifest.model_hash.clone(),
        trajectory_files,
    };
    run.write_json(&format!("{base}.json"), &report)?;
    Ok(report)
}

/// Dumps `(x, z, v, u)` tables for the selected `s` values (all when empty).
pub fn export(dir: &Path, s_filter: &[f64]) -> Result<Vec<PathBuf>> {
    let mut run = Run::open(dir)?;
    let chosen: Vec<usize> = if s_filter.is_empty() {
        (0..run.family.s_values().len()).collect()
    } else {
        s_filter
            .iter()
            .map(|s| {
                run.family
                    .s_values()
                    .iter()
                    .position(|v| (v - s).abs() <= 1e-9 * v.abs().max(1.0))
                    .ok_or_else(|| Error::MissingArtifacts(format!("no value grid for s = {s}")))
            })
            .collect::<Result<_>>()?
    };
    let z = run.model.z_axis().clone();
    let ctrl = run.model.control_axis().clone();
    let mut paths = Vec::new();
    for i in chosen {
        let sol = run.family.solution(i);
        let mut csv = format!("{},z,v,u\n", run.coord_header());
        for k in 0..sol.value.n_states() {
            let xs = run.coords(k);
            for (iz, zn) in z.nodes().enumerate() {
                let u = ctrl.node(sol.selector.get(k, iz));
                writeln!(csv, "{xs},{zn},{},{u}", sol.value.get(k, iz)).unwrap();
            }
        }
        let rel = format!("export/{}.csv", grid_stem(run.family.s_values()[i]));
        paths.push(run.write(&rel, csv.as_bytes())?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
        "state_grid": [{"lo": 0, "hi": 1, "n": 5}],
        "z_grid": {"n": 5},
        "control_grid": {"lo": 0, "hi": 1, "n": 3},
        "cost": {"builtin": "max_excess", "thresholds": [0.5]},
        "dynamics": {"builtin": "affine", "a": [[1.0]], "b": [-0.25]},
        "disturbance": {"atoms": [{"value": [0.0], "prob": 0.5}, {"value": [0.25], "prob": 0.5}]},
        "cost_bound": 0.5
    }"#;

    fn request(max_iter: usize) -> SolveRequest {
        SolveRequest {
            config_text: CHAIN.into(),
            s_values: vec![0.0, 0.25, 0.5],
            stopping: Stopping::Tolerance { tol: 1e-9, max_iter },
            shift: 0.0,
        }
    }

    #[test]
    fn solve_then_rerun_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let first = solve(dir.path(), &request(500)).unwrap();
        assert_eq!(first.status, RunStatus::Complete);
        assert_eq!(first.computed, 3);
        let before = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let again = solve(dir.path(), &request(500)).unwrap();
        assert_eq!(again.computed, 0);
        assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
    }

    #[test]
    fn partial_run_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let partial = solve(dir.path(), &request(1)).unwrap();
        assert_eq!(partial.status, RunStatus::Partial);
        let resumed = solve(dir.path(), &request(500)).unwrap();
        assert_eq!(resumed.status, RunStatus::Complete);
        let fresh_dir = tempfile::tempdir().unwrap();
        let fresh = solve(fresh_dir.path(), &request(500)).unwrap();
        assert_eq!(resumed.manifest.grids, fresh.manifest.grids);
    }

    #[test]
    fn derived_outputs_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        solve(dir.path(), &request(500)).unwrap();
        let meta = safesets(dir.path(), &[0.5], &[0.0, 0.5]).unwrap();
        assert_eq!(meta[0].safe_sets[1].count, 5);
        let m = read_manifest(dir.path()).unwrap();
        assert!(m.artifacts.contains_key("risk/alpha0.5.csv"));
        for (rel, hash) in &m.artifacts {
            store::verify_file(&dir.path().join(rel), hash).unwrap();
        }
    }

    #[test]
    fn missing_grid_lists_s_value() {
        let dir = tempfile::tempdir().unwrap();
        solve(dir.path(), &request(500)).unwrap();
        std::fs::remove_file(dir.path().join(GRID_DIR).join("s0.25.value.bin")).unwrap();
        match Run::open(dir.path()) {
            Err(Error::MissingArtifacts(msg)) => assert!(msg.contains("0.25"), "{msg}"),
            other => panic!("expected missing artifacts, got {:?}", other.err()),
        }
    }

    #[test]
    fn x0_outside_box_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        solve(dir.path(), &request(500)).unwrap();
        let err = policy(dir.path(), 0.5, &[2.0]).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }
}
