//! Config-driven experiment recipes.
//!
//! Every recipe loads and validates all inputs, computes every run, and only
//! then writes its files, finishing with `manifest.toml`. CSV numbers use
//! six fixed decimals so reruns are byte-identical. Runs execute on a
//! `jobs`-sized thread pool and are merged back in seed order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::auit::{self, ComplexityCell, MovementPattern, ScoreRow, TeamConfig};
use crate::baselines::{run_baseline, Algo};
use crate::config::{resolve, ConfigError, ExperimentKind, ManifestRun, RunConfig, RunManifest};
use crate::grid::{
    frame_to_pgm, load_pattern, render_frame, AgentId, GridSpec, LabeledMask, Occupancy,
};
use crate::seal::{run, RunRecord, SealConfig, SealError};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExpError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Invariant(_) => 3,
            ExpError::Io { .. } => 4,
        }
    }
}

impl From<ConfigError> for ExpError {
    fn from(e: ConfigError) -> Self {
        ExpError::Config(e.to_string())
    }
}

impl From<SealError> for ExpError {
    fn from(e: SealError) -> Self {
        match e {
            SealError::Invariant { .. } | SealError::QBound { .. } => {
                ExpError::Invariant(e.to_string())
            }
            other => ExpError::Config(other.to_string()),
        }
    }
}

impl From<auit::AuitError> for ExpError {
    fn from(e: auit::AuitError) -> Self {
        ExpError::Config(e.to_string())
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Replaces the config's output directory.
    pub out: Option<PathBuf>,
    /// Replaces the config's seed count.
    pub seeds: Option<usize>,
    /// Worker threads; defaults to the available cores.
    pub jobs: Option<usize>,
}

/// A validated config with its pattern loaded.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub spec: GridSpec,
    pub mask: LabeledMask,
    pub jobs: Option<usize>,
}

pub fn prepare(
    config_path: &Path,
    opts: &Options,
    kind: ExperimentKind,
) -> Result<Prepared, ExpError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(k) = config.kind {
        if k != kind {
            return Err(ExpError::Config(format!(
                "config is for {} but {} was requested",
                k.name(),
                kind.name()
            )));
        }
    }
    if let Some(n) = opts.seeds {
        config.seeds = n;
    }
    if config.seeds == 0 {
        return Err(ExpError::Config("seeds must be positive".into()));
    }
    if opts.jobs == Some(0) {
        return Err(ExpError::Config("--jobs must be positive".into()));
    }
    config.seal.validate()?;
    let base_dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let pattern_path = resolve(&base_dir, &config.pattern);
    let text = fs::read_to_string(&pattern_path).map_err(|e| {
        ExpError::Config(format!(
            "cannot read pattern {}: {e}",
            pattern_path.display()
        ))
    })?;
    let (spec, mask) = load_pattern(&text)
        .map_err(|e| ExpError::Config(format!("bad pattern {}: {e}", pattern_path.display())))?;
    if config.agents > spec.cell_count() {
        return Err(ExpError::Config(format!(
            "{} agents do not fit on {} cells",
            config.agents,
            spec.cell_count()
        )));
    }
    let out_dir = opts
        .out
        .clone()
        .unwrap_or_else(|| resolve(&base_dir, &config.out_dir));
    Ok(Prepared {
        config,
        base_dir,
        out_dir,
        spec,
        mask,
        jobs: opts.jobs,
    })
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ExpError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| ExpError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

struct Timed<T> {
    value: T,
    secs: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> Timed<T> {
    let start = Instant::now();
    let value = f();
    Timed {
        value,
        secs: start.elapsed().as_secs_f64(),
    }
}

/// Files staged in memory, written together at the end.
#[derive(Default)]
struct Staged {
    files: Vec<(String, String)>,
}

impl Staged {
    fn add(&mut self, name: impl Into<String>, contents: String) -> String {
        let name = name.into();
        self.files.push((name.clone(), contents));
        name
    }

    fn write(self, dir: &Path, manifest: &RunManifest) -> Result<(), ExpError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExpError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(io(&path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest.to_toml()).map_err(io(&path))
    }
}

fn trace_csv(record: &RunRecord) -> String {
    let mut out = String::from("iteration,similarity\n");
    for (i, s) in record.similarity.iter().enumerate() {
        out.push_str(&format!("{},{s:.6}\n", i + 1));
    }
    out
}

fn final_frame(prep: &Prepared, record: &RunRecord) -> String {
    let mut occ = Occupancy::new(prep.spec);
    for (i, &p) in record.final_positions.iter().enumerate() {
        occ.place(AgentId(i), p)
            .expect("final positions are distinct and in bounds");
    }
    render_frame(&prep.mask, &occ)
}

fn seal_config_for(prep: &Prepared, seed: u64, noise_std: f64) -> SealConfig {
    SealConfig {
        seed,
        noise_std,
        ..prep.config.seal.clone()
    }
}

fn manifest(prep: &Prepared, kind: ExperimentKind, seeds: Vec<u64>) -> RunManifest {
    RunManifest {
        experiment: kind.name().to_string(),
        config_hash: prep.config.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        summary_files: Vec::new(),
        runs: Vec::new(),
    }
}

/// Per seed: a similarity trace CSV and the final frame.
pub fn seal_run(prep: &Prepared) -> Result<RunManifest, ExpError> {
    let seeds = prep.config.seed_list(prep.config.seal.seed);
    let noise = prep.config.seal.noise_std;
    let results = in_pool(prep.jobs, || {
        seeds
            .par_iter()
            .map(|&seed| {
                timed(|| {
                    run(
                        &seal_config_for(prep, seed, noise),
                        prep.spec,
                        &prep.mask,
                        prep.config.agents,
                    )
                })
            })
            .collect::<Vec<_>>()
    })?;
    let mut staged = Staged::default();
    let mut man = manifest(prep, ExperimentKind::SealRun, seeds.clone());
    for (&seed, t) in seeds.iter().zip(results) {
        let record = t.value?;
        let csv = staged.add(format!("seal_seed_{seed}.csv"), trace_csv(&record));
        let frame = staged.add(
            format!("seal_seed_{seed}_frame.pat"),
            final_frame(prep, &record),
        );
        man.runs.push(ManifestRun {
            label: "seal".into(),
            seed,
            files: vec![csv, frame],
            wall_clock_secs: t.secs,
        });
    }
    staged.write(&prep.out_dir, &man)?;
    Ok(man)
}

/// Final similarity per (noise level, seed) plus per-level median rows.
pub fn noise_sweep(prep: &Prepared) -> Result<RunManifest, ExpError> {
    let levels = &prep.config.noise_sweep.levels;
    if levels.is_empty() {
        return Err(ExpError::Config("noise_sweep.levels is empty".into()));
    }
    for &level in levels {
        seal_config_for(prep, 0, level).validate()?;
    }
    let seeds = prep.config.seed_list(prep.config.seal.seed);
    let jobs: Vec<(f64, u64)> = levels
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let results = in_pool(prep.jobs, || {
        jobs.par_iter()
            .map(|&(level, seed)| {
                timed(|| {
                    run(
                        &seal_config_for(prep, seed, level),
                        prep.spec,
                        &prep.mask,
                        prep.config.agents,
                    )
                })
            })
            .collect::<Vec<_>>()
    })?;

    let mut man = manifest(prep, ExperimentKind::NoiseSweep, seeds.clone());
    let mut csv = String::from("N0,seed,final_similarity,median_flag\n");
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    for (i, (&(level, seed), t)) in jobs.iter().zip(results).enumerate() {
        let record = t.value?;
        let fin = record.final_similarity().unwrap_or(0.0);
        finals[i / seeds.len()].push(fin);
        csv.push_str(&format!("{level:.6},{seed},{fin:.6},0\n"));
        man.runs.push(ManifestRun {
            label: format!("N0={level:.6}"),
            seed,
            files: Vec::new(),
            wall_clock_secs: t.secs,
        });
    }
    for (level, values) in levels.iter().zip(&finals) {
        csv.push_str(&format!("{level:.6},,{:.6},1\n", median(values)));
    }
    let mut staged = Staged::default();
    man.summary_files.push(staged.add("noise_sweep.csv", csv));
    staged.write(&prep.out_dir, &man)?;
    Ok(man)
}

/// One engine in the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Seal,
    Baseline(Algo),
}

impl Engine {
    pub const ALL: [Engine; 4] = [
        Engine::Seal,
        Engine::Baseline(Algo::Iql),
        Engine::Baseline(Algo::Hql),
        Engine::Baseline(Algo::Lmrl),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Seal => "SEAL",
            Engine::Baseline(Algo::Iql) => "IQL",
            Engine::Baseline(Algo::Hql) => "HQL",
            Engine::Baseline(Algo::Lmrl) => "LMRL",
        }
    }

    fn run(self, prep: &Prepared, seed: u64) -> Result<RunRecord, SealError> {
        let cfg = seal_config_for(prep, seed, prep.config.seal.noise_std);
        match self {
            Engine::Seal => run(&cfg, prep.spec, &prep.mask, prep.config.agents),
            Engine::Baseline(algo) => run_baseline(
                algo,
                &cfg,
                &prep.config.baselines.learning,
                prep.spec,
                &prep.mask,
                prep.config.agents,
            ),
        }
    }
}

/// Median similarity of each engine at the comparison point, in
/// [`Engine::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub compare_at: usize,
    pub medians: Vec<(Engine, f64)>,
}

impl Ordering {
    pub fn seal_leads(&self) -> bool {
        let seal = self.medians[0].1;
        self.medians[1..].iter().all(|&(_, m)| seal >= m)
    }

    pub fn report(&self) -> String {
        let mut out = format!("median similarity at iteration {}\n", self.compare_at);
        for (engine, m) in &self.medians {
            out.push_str(&format!("{:<5} {m:.6}\n", engine.name()));
        }
        let verdict = if self.seal_leads() {
            "SEAL >= every baseline"
        } else {
            "SEAL trails a baseline"
        };
        out.push_str(verdict);
        out.push('\n');
        out
    }
}

/// SEAL and the three baselines on the same seeds: a summary CSV with
/// median rows, per-run traces and a median ordering report.
pub fn baseline_compare(prep: &Prepared) -> Result<(RunManifest, Ordering), ExpError> {
    prep.config.baselines.learning.validate()?;
    let at = prep.config.baselines.compare_at;
    if at == 0 || at > prep.config.seal.max_iterations {
        return Err(ExpError::Config(format!(
            "compare_at must lie in 1..={}",
            prep.config.seal.max_iterations
        )));
    }
    let seeds = prep.config.seed_list(prep.config.seal.seed);
    let jobs: Vec<(Engine, u64)> = Engine::ALL
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| (e, s)))
        .collect();
    let results = in_pool(prep.jobs, || {
        jobs.par_iter()
            .map(|&(engine, seed)| timed(|| engine.run(prep, seed)))
            .collect::<Vec<_>>()
    })?;

    let mut man = manifest(prep, ExperimentKind::BaselineCompare, seeds.clone());
    let mut staged = Staged::default();
    let mut csv = format!("algo,seed,similarity_at_{at},final_similarity\n");
    let mut at_values: Vec<Vec<f64>> = vec![Vec::new(); Engine::ALL.len()];
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); Engine::ALL.len()];
    for (i, (&(engine, seed), t)) in jobs.iter().zip(results).enumerate() {
        let record = t.value?;
        let (s_at, fin) = (
            record.similarity_at(at).unwrap_or(0.0),
            record.final_similarity().unwrap_or(0.0),
        );
        at_values[i / seeds.len()].push(s_at);
        finals[i / seeds.len()].push(fin);
        csv.push_str(&format!("{},{seed},{s_at:.6},{fin:.6}\n", engine.name()));
        let mut trace = String::from("algo,iteration,similarity\n");
        for (k, s) in record.similarity.iter().enumerate() {
            trace.push_str(&format!("{},{},{s:.6}\n", engine.name(), k + 1));
        }
        let file = staged.add(
            format!(
                "trace_{}_seed_{seed}.csv",
                engine.name().to_ascii_lowercase()
            ),
            trace,
        );
        man.runs.push(ManifestRun {
            label: engine.name().into(),
            seed,
            files: vec![file],
            wall_clock_secs: t.secs,
        });
    }
    for (e, engine) in Engine::ALL.iter().enumerate() {
        csv.push_str(&format!(
            "{},median,{:.6},{:.6}\n",
            engine.name(),
            median(&at_values[e]),
            median(&finals[e])
        ));
    }
    let ordering = Ordering {
        compare_at: at,
        medians: Engine::ALL
            .iter()
            .zip(&at_values)
            .map(|(&e, v)| (e, median(v)))
            .collect(),
    };
    man.summary_files
        .push(staged.add("baseline_compare.csv", csv));
    man.summary_files
        .push(staged.add("baseline_ordering.txt", ordering.report()));
    staged.write(&prep.out_dir, &man)?;
    Ok((man, ordering))
}

fn complexity_cells(prep: &Prepared) -> Result<Vec<ComplexityCell>, ExpError> {
    let section = &prep.config.auit;
    let patterns: Vec<(String, MovementPattern)> = if section.patterns.is_empty() {
        auit::reference_patterns()
            .into_iter()
            .map(|(id, p)| (id.to_string(), p))
            .collect()
    } else {
        section
            .patterns
            .iter()
            .map(|p| {
                let path = resolve(&prep.base_dir, p);
                let text = fs::read_to_string(&path).map_err(|e| {
                    ExpError::Config(format!("cannot read pattern {}: {e}", path.display()))
                })?;
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.clone());
                Ok((id, MovementPattern::parse(&text)?))
            })
            .collect::<Result<_, ExpError>>()?
    };
    if section.sizes.is_empty() {
        return Err(ExpError::Config("auit.sizes is empty".into()));
    }
    Ok(patterns
        .iter()
        .flat_map(|(id, p)| {
            section.sizes.iter().map(move |&[w, h]| ComplexityCell {
                pattern_id: id.clone(),
                pattern: p.clone(),
                width: w,
                height: h,
            })
        })
        .collect())
}

/// AUIT score tables, one CSV per seed covering every complexity cell and
/// communication mode, plus a per-mode median report.
pub fn auit_eval(prep: &Prepared) -> Result<RunManifest, ExpError> {
    let section = &prep.config.auit;
    if section.comm_modes.is_empty() {
        return Err(ExpError::Config("auit.comm_modes is empty".into()));
    }
    let cells = complexity_cells(prep)?;
    let seeds = prep.config.seed_list(section.seed);
    let team = |seed: u64, comm| TeamConfig {
        agents: section.agents,
        policy: section.policy,
        comm,
        sense_radius: section.sense_radius,
        episodes: section.episodes,
        steps: section.steps,
        report_every: section.report_every,
        seed,
    };
    for &comm in &section.comm_modes {
        team(0, comm).validate()?;
    }
    let results = in_pool(prep.jobs, || {
        seeds
            .par_iter()
            .map(|&seed| {
                timed(|| {
                    section
                        .comm_modes
                        .iter()
                        .map(|&comm| auit::evaluate_ci(&team(seed, comm), &cells))
                        .collect::<Result<Vec<Vec<ScoreRow>>, _>>()
                })
            })
            .collect::<Vec<_>>()
    })?;

    let mut man = manifest(prep, ExperimentKind::AuitEval, seeds.clone());
    let mut staged = Staged::default();
    let mut per_mode: Vec<Vec<f64>> = vec![Vec::new(); section.comm_modes.len()];
    for (&seed, t) in seeds.iter().zip(results) {
        let by_mode = t.value?;
        let mut csv = format!("{}\n", ScoreRow::CSV_HEADER);
        for (m, rows) in by_mode.iter().enumerate() {
            for row in rows {
                csv.push_str(&row.to_csv());
                csv.push('\n');
            }
            let finals: Vec<f64> = rows
                .iter()
                .filter(|r| r.prefix_steps == section.steps)
                .map(|r| r.anytime_score)
                .collect();
            if !finals.is_empty() {
                per_mode[m].push(finals.iter().sum::<f64>() / finals.len() as f64);
            }
        }
        let file = staged.add(format!("auit_seed_{seed}.csv"), csv);
        man.runs.push(ManifestRun {
            label: "auit".into(),
            seed,
            files: vec![file],
            wall_clock_secs: t.secs,
        });
    }
    let mut report = String::from("median over seeds of the mean final anytime score\n");
    for (comm, values) in section.comm_modes.iter().zip(&per_mode) {
        if !values.is_empty() {
            report.push_str(&format!("{:<9} {:.6}\n", comm.name(), median(values)));
        }
    }
    man.summary_files
        .push(staged.add("auit_report.txt", report));
    staged.write(&prep.out_dir, &man)?;
    Ok(man)
}

/// Converts a frame file to a graymap named after it, written to `out_dir`
/// or next to the frame.
pub fn render(frame: &Path, out_dir: Option<&Path>) -> Result<PathBuf, ExpError> {
    let text = fs::read_to_string(frame).map_err(|source| ExpError::Io {
        path: frame.to_path_buf(),
        source,
    })?;
    let pgm = frame_to_pgm(&text)
        .map_err(|e| ExpError::Config(format!("bad frame {}: {e}", frame.display())))?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| frame.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = frame
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExpError::Io { path, source }
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(io(&dir))?;
    }
    let path = dir.join(format!("{stem}.pgm"));
    fs::write(&path, pgm).map_err(io(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExpError::Config(String::new()).exit_code(), 2);
        assert_eq!(ExpError::Invariant(String::new()).exit_code(), 3);
        let io = ExpError::Io {
            path: PathBuf::new(),
            source: std::io::Error::other("x"),
        };
        assert_eq!(io.exit_code(), 4);
        let qb = SealError::QBound {
            iteration: 1,
            value: 60.0,
            bound: 50.0,
        };
        assert_eq!(ExpError::from(qb).exit_code(), 3);
    }
}
