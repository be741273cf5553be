//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seal::auit::{
    self, env_entropy, pattern_complexity, CommMode, ComplexityCell, MovementPattern, Policy,
    RewardSpec, TeamConfig,
};
use seal::baselines::{
    epsilon_greedy, hql_update, iql_update, run_baseline, Algo, BaselineParams, HqlParams, QTable,
    ACTIONS,
};
use seal::config::RunConfig;
use seal::federated::{
    aggregate, ExperienceBatch, GradientVector, LinearQ, ParamVector, Transition, FEATURE_DIM,
};
use seal::grid::{load_pattern, Boundary, GridSpec, LabeledMask, Position};
use seal::pheromone::Sensed;
use seal::seal::{placement_rng, run, run_rng, select_attractor, RunRecord, SealConfig, World};
use seal::view::VIEW_COUNT;

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn reference() -> (RunConfig, GridSpec, LabeledMask) {
    let cfg =
        RunConfig::load(&crate_dir().join("configs/reference.toml")).expect("reference config");
    let text = fs::read_to_string(crate_dir().join("configs").join(&cfg.pattern))
        .expect("reference pattern");
    let (spec, mask) = load_pattern(&text).expect("pattern parses");
    (cfg, spec, mask)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn seal_cfg(cfg: &RunConfig, i: u64, noise: f64) -> SealConfig {
    SealConfig {
        seed: cfg.seal.seed + i,
        noise_std: noise,
        ..cfg.seal.clone()
    }
}

/// Runs a SEAL configuration tick by tick, checking every structural
/// invariant after each tick, and confirms the library runner agrees.
fn checked_run(
    cfg: &SealConfig,
    spec: GridSpec,
    mask: &LabeledMask,
    agents: usize,
) -> Result<RunRecord, String> {
    let mut world = World::random(
        spec,
        mask.clone(),
        cfg.pheromone,
        agents,
        &mut placement_rng(cfg.seed),
    )
    .map_err(|e| e.to_string())?;
    let mut rng = run_rng(cfg.seed);
    let mut trace = Vec::new();
    for it in 1..=cfg.max_iterations {
        let report = world.tick(cfg, &mut rng);
        let occ = world.occupancy();
        let mut cells = std::collections::HashSet::new();
        for a in world.agents() {
            if occ.agent_at(a.pos) != Some(a.id) || !cells.insert(a.pos) {
                return Err(format!(
                    "seed {} tick {it}: exclusivity broken at {}",
                    cfg.seed, a.pos
                ));
            }
        }
        if occ.len() != agents || world.agents().len() != agents {
            return Err(format!("seed {} tick {it}: agent count changed", cfg.seed));
        }
        let cap = world.field().params().cap;
        for y in 0..spec.height() {
            for x in 0..spec.width() {
                let a = world.field().amount(Position::new(x, y));
                if !(0.0..=cap).contains(&a) {
                    return Err(format!(
                        "seed {} tick {it}: pheromone {a} out of bounds",
                        cfg.seed
                    ));
                }
            }
        }
        world
            .check_invariants()
            .map_err(|v| format!("seed {} tick {it}: {v}", cfg.seed))?;
        trace.push(report.similarity);
    }
    let record = run(cfg, spec, mask, agents).map_err(|e| e.to_string())?;
    if record.similarity != trace {
        return Err(format!(
            "seed {}: library runner diverged from the checked loop",
            cfg.seed
        ));
    }
    Ok(record)
}

struct Shared {
    invariant_errors: Vec<String>,
    invariant_ticks: usize,
}

fn criterion_1(shared: &mut Shared) -> Outcome {
    let (cfg, spec, mask) = reference();
    let mut finals = Vec::new();
    let mut at150 = Vec::new();
    let mut at10 = Vec::new();
    let mut slowest = Duration::ZERO;
    for i in 0..SEEDS {
        let c = seal_cfg(&cfg, i, cfg.seal.noise_std);
        let start = Instant::now();
        match checked_run(&c, spec, &mask, cfg.agents) {
            Ok(r) => {
                slowest = slowest.max(start.elapsed());
                shared.invariant_ticks += r.similarity.len();
                finals.push(r.final_similarity().unwrap_or(0.0));
                at150.push(r.similarity_at(150).unwrap_or(0.0));
                at10.push(r.similarity_at(10).unwrap_or(0.0));
            }
            Err(e) => {
                shared.invariant_errors.push(e.clone());
                return outcome(false, e);
            }
        }
    }
    let (mf, m150, m10) = (median(&finals), median(&at150), median(&at10));
    let pass = cfg.agents == 119
        && mask.labeled_count() == 119
        && cfg.seal.max_iterations <= 300
        && mf >= 0.90
        && m150 >= m10
        && slowest <= Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "median final {mf:.4} (>= 0.90), median@150 {m150:.4} >= median@10 {m10:.4}, slowest run {:.2}s",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_2(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let (cfg, spec, mask) = reference();
    let levels = [0.0, 0.5, 1.0, 2.0];
    let mut medians = Vec::new();
    for &level in &levels {
        let mut finals = Vec::new();
        for i in 0..SEEDS {
            match checked_run(&seal_cfg(&cfg, i, level), spec, &mask, cfg.agents) {
                Ok(r) => {
                    shared.invariant_ticks += r.similarity.len();
                    finals.push(r.final_similarity().unwrap_or(0.0));
                }
                Err(e) => {
                    shared.invariant_errors.push(e.clone());
                    return outcome(false, e);
                }
            }
        }
        medians.push(median(&finals));
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let elapsed = start.elapsed();
    let shown: Vec<String> = levels
        .iter()
        .zip(&medians)
        .map(|(l, m)| format!("N0={l}: {m:.4}"))
        .collect();
    outcome(
        monotone && elapsed <= Duration::from_secs(120),
        format!("{} in {:.1}s", shown.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (cfg, spec, mask) = reference();
    let params = cfg.baselines.learning;
    let at = 150;
    let mut seal_at = Vec::new();
    for i in 0..SEEDS {
        match run(&seal_cfg(&cfg, i, 0.0), spec, &mask, cfg.agents) {
            Ok(r) => seal_at.push(r.similarity_at(at).unwrap_or(0.0)),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let seal_median = median(&seal_at);
    let mut pass = true;
    let mut parts = vec![format!("SEAL {seal_median:.4}")];
    for algo in Algo::ALL {
        let mut values = Vec::new();
        for i in 0..SEEDS {
            match run_baseline(
                algo,
                &seal_cfg(&cfg, i, 0.0),
                &params,
                spec,
                &mask,
                cfg.agents,
            ) {
                Ok(r) => values.push(r.similarity_at(at).unwrap_or(0.0)),
                Err(e) => return outcome(false, e.to_string()),
            }
        }
        let m = median(&values);
        pass &= seal_median >= m;
        parts.push(format!("{} {m:.4}", algo.name().to_uppercase()));
    }
    let elapsed = start.elapsed();
    pass &= elapsed <= Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "medians at iteration {at}: {} in {:.1}s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn output_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(Result::ok)
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|name| name != "manifest.toml")
                .map(|name| {
                    let bytes = fs::read(dir.join(&name)).unwrap_or_default();
                    (name, bytes)
                })
                .collect()
        })
        .unwrap_or_default()
}

fn criterion_4() -> Outcome {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let config = crate_dir().join("configs/reference.toml");
    let mut compared = 0;
    for cmd in ["seal-run", "noise-sweep", "baseline-compare", "auit-eval"] {
        let mut outputs = Vec::new();
        for (rerun, jobs) in [(0, "1"), (1, "4")] {
            let out = tmp.path().join(format!("{cmd}-{rerun}"));
            let status = Command::new(env!("CARGO_BIN_EXE_seal"))
                .args([cmd, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .args(["--jobs", jobs])
                .output();
            match status {
                Ok(o) if o.status.success() => outputs.push(output_files(&out)),
                other => return outcome(false, format!("{cmd} failed: {other:?}")),
            }
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return outcome(false, format!("{cmd} outputs differ between reruns"));
        }
        compared += outputs[0].len();
    }
    let frame = tmp.path().join("seal-run-0/seal_seed_1_frame.pat");
    let mut pgms = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("render-{i}"));
        let ok = Command::new(env!("CARGO_BIN_EXE_seal"))
            .arg("render")
            .arg(&frame)
            .arg("--out")
            .arg(&out)
            .output()
            .is_ok_and(|o| o.status.success());
        if !ok {
            return outcome(false, "render failed");
        }
        pgms.push(fs::read(out.join("seal_seed_1_frame.pgm")).unwrap_or_default());
    }
    let pass = !pgms[0].is_empty() && pgms[0] == pgms[1];
    outcome(
        pass,
        format!(
            "{} output files byte-identical across reruns and job counts",
            compared + 1
        ),
    )
}

/// Transition built from random binary features, as a featurized view.
fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let mut features = || {
        let mut f = vec![0.0; FEATURE_DIM];
        for v in f.iter_mut().take(5) {
            *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
        f[5 + rng.random_range(0..9)] = 1.0;
        f
    };
    let (features, next_features) = (features(), features());
    Transition {
        features,
        action: rng.random_range(0..5),
        reward: rng.random_range(-5.0..5.0),
        next_features,
        terminal: rng.random_bool(0.2),
    }
}

/// Independent oracle: the squared TD loss written out from scratch.
fn oracle_loss(theta: &[f64], frozen: &[f64], batch: &[Transition], gamma: f64) -> f64 {
    let q = |p: &[f64], x: &[f64], a: usize| -> f64 {
        (0..FEATURE_DIM)
            .map(|j| p[a * FEATURE_DIM + j] * x[j])
            .sum()
    };
    let mut total = 0.0;
    for t in batch {
        let bootstrap = (0..5)
            .map(|a| q(frozen, &t.next_features, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let target = if t.terminal {
            t.reward
        } else {
            t.reward + gamma * bootstrap
        };
        let e = target - q(theta, &t.features, t.action);
        total += e * e;
    }
    total / batch.len() as f64
}

fn criterion_5() -> Outcome {
    let model = LinearQ::new(FEATURE_DIM, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..model.dimension())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let n = rng.random_range(1..9);
        let batch: Vec<Transition> = (0..n).map(|_| random_transition(&mut rng)).collect();
        let gamma = rng.random_range(0.0..0.99);
        let params = ParamVector::new(theta.clone()).expect("finite");
        let analytic = model
            .local_gradient(
                &params,
                &ExperienceBatch::new(batch.clone()).expect("non-empty"),
                gamma,
            )
            .expect("dimensions match");
        let h = 1e-3;
        for i in 0..theta.len() {
            let (mut plus, mut minus) = (theta.clone(), theta.clone());
            plus[i] += h;
            minus[i] -= h;
            let numeric = (oracle_loss(&plus, &theta, &batch, gamma)
                - oracle_loss(&minus, &theta, &batch, gamma))
                / (2.0 * h);
            let a = analytic.as_slice()[i];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale == 0.0 {
                0.0
            } else {
                (a - numeric).abs() / scale
            };
            // Entries below rounding level are compared absolutely.
            let err = if scale < 1e-9 {
                (a - numeric).abs()
            } else {
                rel
            };
            worst = worst.max(err);
        }
    }

    // Permutation invariance on random vectors, singleton identity and the
    // federated-round identity on dyadic instances where every operation is
    // exact.
    let grads: Vec<GradientVector> = (0..7)
        .map(|_| {
            GradientVector::new((0..70).map(|_| rng.random_range(-10.0..10.0)).collect())
                .expect("finite")
        })
        .collect();
    let reference = aggregate(&grads).expect("non-empty");
    let mut perm_ok = true;
    for _ in 0..50 {
        let mut shuffled = grads.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        perm_ok &= aggregate(&shuffled).expect("non-empty") == reference;
    }
    let single_ok = aggregate(&grads[..1]).expect("non-empty") == grads[0];

    let dyadic = |rng: &mut ChaCha8Rng| -> Transition {
        let mut t = random_transition(rng);
        t.reward = rng.random_range(-8i32..8) as f64 / 4.0;
        t
    };
    let mut round_ok = true;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..model.dimension())
            .map(|_| rng.random_range(-8i32..8) as f64 / 8.0)
            .collect();
        let params = ParamVector::new(theta).expect("finite");
        let batches: Vec<Vec<Transition>> = (0..4)
            .map(|_| (0..2).map(|_| dyadic(&mut rng)).collect())
            .collect();
        let local: Vec<GradientVector> = batches
            .iter()
            .map(|b| {
                model
                    .local_gradient(
                        &params,
                        &ExperienceBatch::new(b.clone()).expect("non-empty"),
                        0.5,
                    )
                    .expect("dims")
            })
            .collect();
        let union = ExperienceBatch::new(batches.concat()).expect("non-empty");
        round_ok &= aggregate(&local).expect("non-empty")
            == model.local_gradient(&params, &union, 0.5).expect("dims");
    }
    outcome(
        worst <= 1e-5 && perm_ok && single_ok && round_ok,
        format!(
            "max relative error {worst:.2e} over 100 instances; permutation {perm_ok}, singleton {single_ok}, round = union {round_ok}"
        ),
    )
}

fn total_variation(counts: &[usize], probs: &[f64], n: usize) -> f64 {
    0.5 * counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

fn criterion_6() -> Outcome {
    let n = 100_000;
    let spec = GridSpec::new(9, 9, Boundary::Bounded).expect("valid");
    let from = Position::new(4, 4);
    let sensed: Vec<Sensed> = [
        (3, 4, 2.0),
        (5, 5, 1.0),
        (4, 1, 4.0),
        (6, 4, 0.0),
        (2, 2, 3.0),
        (7, 7, 0.5),
    ]
    .iter()
    .map(|&(x, y, a)| Sensed {
        pos: Position::new(x, y),
        perceived: a,
    })
    .collect();
    let sigma = 1.5;
    let weights: Vec<f64> = sensed
        .iter()
        .map(|s| {
            let dx = s.pos.x as f64 - from.x as f64;
            let dy = s.pos.y as f64 - from.y as f64;
            s.perceived * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut counts = vec![0usize; sensed.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..n {
        let pick = select_attractor(from, &sensed, sigma, &spec, &mut rng).expect("positive mass");
        counts[sensed
            .iter()
            .position(|s| s.pos == pick)
            .expect("sensed cell")] += 1;
    }
    let tv_attractor = total_variation(&counts, &probs, n);

    let mut q = QTable::new();
    q.set(7, 1, 2.0);
    q.set(7, 3, 2.0);
    q.set(7, 0, -1.0);
    let epsilon = 0.3;
    let probs: Vec<f64> = (0..ACTIONS)
        .map(|a| {
            epsilon / ACTIONS as f64
                + if a == 1 || a == 3 {
                    (1.0 - epsilon) / 2.0
                } else {
                    0.0
                }
        })
        .collect();
    let mut counts = vec![0usize; ACTIONS];
    for _ in 0..n {
        counts[epsilon_greedy(&q, 7, epsilon, &mut rng)] += 1;
    }
    let tv_greedy = total_variation(&counts, &probs, n);
    outcome(
        tv_attractor <= 0.01 && tv_greedy <= 0.01,
        format!("TV select_attractor {tv_attractor:.4}, epsilon_greedy {tv_greedy:.4} (<= 0.01)"),
    )
}

fn criterion_7(shared: &Shared) -> Outcome {
    let (cfg, spec, mask) = reference();
    let mut baseline_ticks = 0;
    for algo in Algo::ALL {
        for i in 0..3 {
            match run_baseline(
                algo,
                &seal_cfg(&cfg, i, 0.0),
                &cfg.baselines.learning,
                spec,
                &mask,
                cfg.agents,
            ) {
                Ok(r) => baseline_ticks += r.similarity.len(),
                Err(e) => return outcome(false, e.to_string()),
            }
        }
    }
    let pass = shared.invariant_errors.is_empty() && shared.invariant_ticks > 0;
    let detail = if pass {
        format!(
            "0 violations over {} SEAL ticks and {baseline_ticks} baseline ticks",
            shared.invariant_ticks
        )
    } else {
        shared.invariant_errors.join("; ")
    };
    outcome(pass, detail)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (alpha, gamma) = (0.1, 0.9);
    let mut iql = QTable::new();
    let mut hql = QTable::new();
    let params = HqlParams {
        alpha,
        beta: alpha,
        gamma,
    };
    let mut identical = true;
    for _ in 0..10_000 {
        let s = rng.random_range(0..VIEW_COUNT);
        let a = rng.random_range(0..ACTIONS);
        let next = rng.random_range(0..VIEW_COUNT);
        let r = rng.random_range(-5.0..5.0);
        iql_update(&mut iql, s, a, r, next, alpha, gamma);
        hql_update(&mut hql, s, a, r, next, &params);
        identical &= iql.get(s, a).to_bits() == hql.get(s, a).to_bits();
    }
    identical &= iql == hql;

    let (cfg, spec, mask) = reference();
    let cooled = BaselineParams {
        initial_temperature: 0.0,
        ..cfg.baselines.learning
    };
    let mut traces_equal = true;
    for i in 0..3 {
        let task = seal_cfg(&cfg, i, 0.0);
        let a = run_baseline(Algo::Iql, &task, &cooled, spec, &mask, cfg.agents);
        let b = run_baseline(Algo::Lmrl, &task, &cooled, spec, &mask, cfg.agents);
        traces_equal &= matches!((a, b), (Ok(a), Ok(b)) if a == b);
    }
    outcome(
        identical && traces_equal,
        format!("HQL(beta=alpha) == IQL over 10^4 updates: {identical}; cooled LMRL == IQL on 3 seeds: {traces_equal}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut antisymmetric = true;
    for _ in 0..10_000 {
        let spec = GridSpec::new(
            rng.random_range(2..33),
            rng.random_range(2..33),
            Boundary::Toroidal,
        )
        .expect("valid");
        let mut cell = || spec.position(rng.random_range(0..spec.cell_count()));
        let (a, g, e) = (cell(), cell(), cell());
        let r = RewardSpec::for_space(&spec);
        antisymmetric &= r.reward(&spec, a, g, e) == -r.reward(&spec, a, e, g);
    }

    let period8 = auit::reference_patterns()
        .into_iter()
        .find(|(id, _)| *id == "period8")
        .expect("shipped")
        .1;
    let cell = ComplexityCell {
        pattern_id: "period8".into(),
        pattern: period8,
        width: 8,
        height: 8,
    };
    let mean_score = |policy| {
        let team = TeamConfig {
            policy,
            comm: CommMode::Direct,
            episodes: 100,
            ..Default::default()
        };
        let total: f64 = (0..100)
            .map(|e| {
                let r = auit::run_episode(&team, &cell, e).expect("valid team");
                r.iter().sum::<f64>() / r.len() as f64
            })
            .sum();
        total / 100.0
    };
    let (greedy, random) = (
        mean_score(Policy::GreedyTowardGood),
        mean_score(Policy::UniformRandom),
    );

    let entropy = env_entropy(&GridSpec::new(8, 8, Boundary::Toroidal).expect("valid"));
    let constant = pattern_complexity(&MovementPattern::parse("R").expect("valid"));
    let wins = (0..100u64)
        .filter(|&s| {
            let random = MovementPattern::random_walk(auit::COMPLEXITY_LENGTH, 10_000 + s)
                .expect("non-empty");
            constant < pattern_complexity(&random)
        })
        .count();
    outcome(
        antisymmetric && greedy > random && entropy == 6.0 && wins == 100,
        format!(
            "antisymmetry on 10^4 configs {antisymmetric}; greedy {greedy:.4} > random {random:.4}; entropy(8x8) {entropy}; constant < random {wins}/100"
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut shared = Shared {
        invariant_errors: Vec::new(),
        invariant_ticks: 0,
    };
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "pattern formation", criterion_1(&mut shared)),
        (2, "noise degradation", criterion_2(&mut shared)),
        (3, "baseline ordering", criterion_3()),
        (4, "determinism", criterion_4()),
        (5, "gradient oracle", criterion_5()),
        (6, "sampling oracles", criterion_6()),
        (7, "structural invariants", criterion_7(&shared)),
        (8, "baseline equivalences", criterion_8()),
        (9, "AUIT properties", criterion_9()),
    ];
    let elapsed = start.elapsed();
    results.push((
        10,
        "suite runtime",
        outcome(
            elapsed <= Duration::from_secs(600),
            format!("{:.1}s (<= 600s)", elapsed.as_secs_f64()),
        ),
    ));

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
