//! Acceptance suite. Each criterion runs under a wall-clock limit and prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use attrscout::evaluation::{
    EvalError, ExternalConfig, ExternalEvaluator, ReferenceTable, SurfaceParams, SyntheticSurface,
    TableEvaluator,
};
use attrscout::exploration::{Explorer, RunConfig};
use attrscout::metrics;
use attrscout::rng;
use attrscout::selection::{generate_covering_selection, StrategySpec};
use attrscout::surrogate::{benchmark_predictor, fit_lasso, fit_lasso_traced, PredictorSpec};
use attrscout::{AttributeSchema, Domain, Evaluator, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ATTRSCOUT: &str = env!("CARGO_BIN_EXE_attrscout");
const STUB: &str = env!("CARGO_BIN_EXE_stub-evaluator");

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn dog_domain() -> Domain {
    Domain::build(AttributeSchema::load(repo_path("schemas/dogs.toml")).unwrap())
}

fn surface_table(domain: &Domain, params: &SurfaceParams) -> ReferenceTable {
    let schema = domain.schema();
    let surface = SyntheticSurface::generate(schema, params);
    ReferenceTable::from_fn(domain, |s| surface.accuracy(schema, s))
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn sample_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn c1_table_fidelity() -> Result<String, String> {
    let schema = AttributeSchema::load(repo_path("schemas/dogs_reference.toml")).unwrap();
    let domain = Domain::build(schema.clone());
    let table = ReferenceTable::load(
        &schema,
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_rows.csv"),
    )
    .map_err(|e| e.to_string())?;
    let evaluator = TableEvaluator::new(schema.clone(), table).unwrap();
    let rows: [(usize, [&str; 5], f64); 4] = [
        (0, ["side", "white", "day", "at the beach", "sunny"], 0.98),
        (1, ["side", "white", "day", "at the beach", "snowing"], 0.94),
        (2, ["side", "white", "day", "at the beach", "raining"], 0.86),
        (1031, ["rear", "blue", "night", "in the mountains", "foggy"], 0.66),
    ];
    check(domain.len() == 1032, || format!("domain has {} subdomains", domain.len()))?;
    for (index, values, expected) in rows {
        let s = schema.subdomain_from_values(&values).map_err(|e| e.to_string())?;
        check(domain.get(index) == &s, || format!("{values:?} is not row {index}"))?;
        let got = evaluator.evaluate(&s).map_err(|e| e.to_string())?.accuracy;
        check(got == expected, || format!("{values:?}: {got} != {expected}"))?;
    }
    Ok("4 rows exact".into())
}

fn c2_oracle_optimality() -> Result<String, String> {
    let mut notes = Vec::new();
    let dogs = dog_domain();
    let table_schema = AttributeSchema::load(repo_path("schemas/dogs_reference.toml")).unwrap();
    let cases = [
        (dogs, SurfaceParams { seed: 2, interactions: 10, noise_scale: 0.02, ..Default::default() }),
        (
            Domain::build(table_schema),
            SurfaceParams { seed: 21, interactions: 4, noise_scale: 0.05, ..Default::default() },
        ),
    ];
    for (domain, params) in cases {
        let table = surface_table(&domain, &params);
        let evaluator = TableEvaluator::new(domain.schema().clone(), table.clone()).unwrap();
        let history = Explorer::new(&domain, &evaluator)
            .with_table(&table)
            .run(&RunConfig::new(StrategySpec::Oracle, domain.len(), 0))
            .map_err(|e| e.to_string())?;
        let mut sorted = table.accuracies(&domain).unwrap();
        sorted.sort_by(f64::total_cmp);
        let got = history.accuracies();
        check(got.len() == sorted.len(), || "oracle stopped early".into())?;
        if let Some(k) = (0..got.len()).find(|&k| got[k] != sorted[k]) {
            return Err(format!("step {k}: {} != sorted {}", got[k], sorted[k]));
        }
        let targets = metrics::bottom_k_target(&domain, &table, 0.1).map_err(|e| e.to_string())?;
        check(targets.len() == 103, || format!("{} targets", targets.len()))?;
        let coverage = metrics::bottom_k_coverage(&history, &domain, &table, 0.1)
            .map_err(|e| e.to_string())?;
        let first_full = coverage.mean.iter().position(|&c| c == 1.0);
        check(first_full == Some(102), || format!("full coverage first at {first_full:?}"))?;
        notes.push(domain.schema().fingerprint().to_string());
    }
    Ok(format!("full coverage at step 102 on tables {}", notes.join(", ")))
}

fn c3_strategy_ordering() -> Result<String, String> {
    let domain = dog_domain();
    let table = surface_table(
        &domain,
        &SurfaceParams { seed: 3, interactions: 12, ..Default::default() },
    );
    let mut sorted = table.accuracies(&domain).unwrap();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[domain.len() / 10];
    let evaluator = TableEvaluator::new(domain.schema().clone(), table.clone()).unwrap();
    let explorer = Explorer::new(&domain, &evaluator).with_table(&table);
    let seeds: Vec<u64> = (0..10).collect();
    let counts = |spec: StrategySpec| -> Result<Vec<f64>, String> {
        let runs = explorer
            .run_multi_seed(&RunConfig::new(spec, 61, 0), &seeds, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        Ok(runs
            .iter()
            .map(|h| h.accuracies().iter().filter(|&&a| a < threshold).count() as f64)
            .collect())
    };
    let bo = counts(StrategySpec::bayesian())?;
    let ga = counts(StrategySpec::genetic())?;
    let random = counts(StrategySpec::Random)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_bo, m_ga, m_rand) = (mean(&bo), mean(&ga), mean(&random));
    let pooled = ((sample_std(&bo).powi(2) + sample_std(&random).powi(2)) / 2.0).sqrt();
    let summary = format!("BO {m_bo:.1}, GA {m_ga:.1}, random {m_rand:.1}, pooled std {pooled:.2}");
    check(m_bo >= m_ga && m_ga >= m_rand, || format!("ordering broken: {summary}"))?;
    check(m_bo - m_rand >= 2.0 * pooled, || format!("margin too small: {summary}"))?;
    Ok(summary)
}

fn c4_bo_efficiency() -> Result<String, String> {
    let domain = dog_domain();
    let table = surface_table(&domain, &SurfaceParams { seed: 4, ..Default::default() });
    let evaluator = TableEvaluator::new(domain.schema().clone(), table.clone()).unwrap();
    let limit = domain.len() * 2 / 5;
    let seeds: Vec<u64> = (0..10).collect();
    let runs = Explorer::new(&domain, &evaluator)
        .run_multi_seed(&RunConfig::new(StrategySpec::bayesian(), limit, 0), &seeds, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let mut worst = 0;
    for (seed, h) in seeds.iter().zip(&runs) {
        let coverage = metrics::bottom_k_coverage(h, &domain, &table, 0.1).map_err(|e| e.to_string())?;
        let full = coverage.mean.iter().position(|&c| c == 1.0);
        let Some(step) = full else {
            return Err(format!(
                "seed {seed}: coverage {} after {limit} evaluations",
                coverage.mean.last().unwrap()
            ));
        };
        worst = worst.max(step + 1);
    }
    Ok(format!("all 10 seeds covered within {worst} of {limit} allowed evaluations"))
}

/// Valid value tuples over every `n`-subset of attributes, enumerated from
/// the raw product and the constraint bindings.
fn uncovered_tuples(schema: &AttributeSchema, selected: &[&[usize]], n: usize) -> usize {
    let attrs = schema.attributes();
    let k = attrs.len();
    let constraints: Vec<Vec<(usize, usize)>> = schema
        .constraints()
        .iter()
        .map(|c| {
            c.bindings
                .iter()
                .map(|(a, v)| {
                    let i = attrs.iter().position(|x| &x.name == a).unwrap();
                    (i, attrs[i].values.iter().position(|x| x == v).unwrap())
                })
                .collect()
        })
        .collect();
    let mut full = Vec::new();
    let mut a = vec![0usize; k];
    'product: loop {
        if !constraints.iter().any(|c| c.iter().all(|&(i, v)| a[i] == v)) {
            full.push(a.clone());
        }
        for i in (0..k).rev() {
            a[i] += 1;
            if a[i] < attrs[i].values.len() {
                continue 'product;
            }
            a[i] = 0;
        }
        break;
    }
    let mut uncovered = 0;
    for mask in 0u32..(1 << k) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let cols: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let project = |s: &[usize]| cols.iter().map(|&i| s[i]).collect::<Vec<_>>();
        let required: BTreeSet<Vec<usize>> = full.iter().map(|s| project(s)).collect();
        let covered: HashSet<Vec<usize>> = selected.iter().map(|s| project(s)).collect();
        uncovered += required.iter().filter(|t| !covered.contains(*t)).count();
    }
    uncovered
}

fn c5_covering() -> Result<String, String> {
    let domain = dog_domain();
    let mut sizes = Vec::new();
    for n in 2..=5 {
        let mut r = rng::stream(5, n as u64);
        let picked = generate_covering_selection(&domain, n, &mut r).map_err(|e| e.to_string())?;
        let assignments: Vec<&[usize]> = picked.iter().map(|&i| domain.get(i).assignment.as_slice()).collect();
        let missing = uncovered_tuples(domain.schema(), &assignments, n);
        check(missing == 0, || format!("strength {n}: {missing} uncovered tuples"))?;
        sizes.push(format!("{n}-wise {}", picked.len()));
    }
    Ok(sizes.join(", "))
}

/// Normal equations with an intercept column, Gauss-Jordan with partial
/// pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &t) in x.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += z[i] * z[j];
            }
            a[i][p] += z[i] * t;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

/// An increase beyond the few ulps that evaluating the objective in floating
/// point can introduce on its own.
fn rose(before: f64, after: f64) -> bool {
    after > before + 4.0 * f64::EPSILON * before.abs()
}

fn c6_surrogate() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let n = rng.gen_range(20..60);
        let p = rng.gen_range(2..9);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.5 + r.iter().enumerate().map(|(j, v)| v * (j as f64 - 2.0) * 0.1).sum::<f64>() + rng.gen_range(-0.05..0.05))
            .collect();
        let oracle = normal_equations(&x, &y);
        let (model, trace) = fit_lasso_traced(&x, &y, 0.0).map_err(|e| e.to_string())?;
        let err = std::iter::once((model.intercept, oracle[0]))
            .chain(model.weights.iter().copied().zip(oracle[1..].iter().copied()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        check(err <= 1e-6, || format!("instance {inst}: lambda=0 off by {err:e}"))?;
        check(trace.windows(2).all(|w| !rose(w[0], w[1])), || format!("instance {inst}: objective rose at lambda=0"))?;

        let ybar = y.iter().sum::<f64>() / n as f64;
        let lam_max = (0..p)
            .map(|j| x.iter().zip(&y).map(|(r, t)| r[j] * (t - ybar)).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let shrunk = fit_lasso(&x, &y, lam_max).map_err(|e| e.to_string())?;
        check(shrunk.weights.iter().all(|&w| w == 0.0), || format!("instance {inst}: nonzero weight at lambda_max"))?;
        for frac in [0.01, 0.1, 0.5] {
            let (_, trace) = fit_lasso_traced(&x, &y, frac * lam_max).map_err(|e| e.to_string())?;
            if let Some(i) = trace.windows(2).position(|w| rose(w[0], w[1])) {
                return Err(format!("instance {inst}: objective rose at sweep {} (lambda {frac} max): {:e} -> {:e}", i + 1, trace[i], trace[i + 1]));
            }
        }
    }
    Ok(format!("max |lasso(0) - normal equations| = {worst:.1e}"))
}

/// Rank of the training design with an intercept column, by elimination.
fn design_rank(domain: &Domain, rows: &[usize]) -> usize {
    let schema = domain.schema();
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| std::iter::once(1.0).chain(schema.encode_onehot(domain.get(i))).collect())
        .collect();
    let cols = schema.onehot_len() + 1;
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..m.len()).find(|&r| m[r][c].abs() > 1e-9) else {
            continue;
        };
        m.swap(rank, piv);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][c] / m[rank][c];
                for k in c..cols {
                    m[r][k] -= f * m[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn c7_predictor() -> Result<String, String> {
    let domain = dog_domain();
    let schema = domain.schema();
    let dim = schema.onehot_len();
    let identifiable = 1 + schema.attributes().iter().map(|a| a.values.len() - 1).sum::<usize>();
    let clean = surface_table(&domain, &SurfaceParams { seed: 7, ..Default::default() });
    let sizes = [dim, dim + 8, 2 * dim, 4 * dim, 200, 500];
    let mut draws = 0;
    let mut misses = Vec::new();
    let mut full_rank_misses = 0;
    for &t in &sizes {
        for seed in 0..20 {
            draws += 1;
            let rho = benchmark_predictor(&domain, &clean, t, seed, PredictorSpec::Ols).map_err(|e| e.to_string())?;
            if (rho - 1.0).abs() > 1e-9 {
                let rank = design_rank(&domain, &attrscout::surrogate::train_split(domain.len(), t, seed));
                full_rank_misses += usize::from(rank == identifiable);
                misses.push(format!("t={t}/s{seed}:{rho:.4}(rank {rank})"));
            }
        }
    }

    let noisy = surface_table(
        &domain,
        &SurfaceParams { seed: 7, interactions: 6, noise_scale: 0.05, ..Default::default() },
    );
    let sizes = [dim, 2 * dim, 4 * dim, 8 * dim, 16 * dim];
    let mut curves = Vec::new();
    let mut monotone = true;
    for predictor in [PredictorSpec::Ols, PredictorSpec::default()] {
        let mut curve = Vec::new();
        for &t in &sizes {
            let mut total = 0.0;
            for seed in 0..20 {
                total += match benchmark_predictor(&domain, &noisy, t, seed, predictor) {
                    Ok(rho) => rho,
                    Err(attrscout::surrogate::SurrogateError::UndefinedCorrelation(_)) => 0.0,
                    Err(e) => return Err(e.to_string()),
                };
            }
            curve.push(total / 20.0);
        }
        monotone &= curve.windows(2).all(|w| w[1] >= w[0]);
        curves.push(format!("{} {curve:.3?}", predictor.label()));
    }
    let noisy_note = format!("noisy mean spearman {}", curves.join(", "));
    check(monotone, || format!("not monotone: {noisy_note}"))?;
    check(misses.is_empty(), || {
        format!(
            "noise-free: {} of {draws} draws miss 1.0 at train_size >= {dim}, {full_rank_misses} of them with a full-rank \
             design (identifiable rank {identifiable}): {}; {noisy_note}",
            misses.len(),
            misses.join(" ")
        )
    })?;
    Ok(format!("noise-free 1.0 on {draws} draws; {noisy_note}"))
}

fn c8_global_mean() -> Result<String, String> {
    let domain = dog_domain();
    let table = surface_table(
        &domain,
        &SurfaceParams { seed: 8, interactions: 8, noise_scale: 0.03, ..Default::default() },
    );
    let global = metrics::table_mean(&domain, &table).map_err(|e| e.to_string())?;
    let evaluator = TableEvaluator::new(domain.schema().clone(), table.clone()).unwrap();
    let explorer = Explorer::new(&domain, &evaluator).with_table(&table);
    let specs = [
        StrategySpec::Random,
        StrategySpec::Covering { strength: 3 },
        StrategySpec::genetic(),
        StrategySpec::bayesian(),
        StrategySpec::Oracle,
    ];
    let runs = Execution::Parallel.try_map(&specs, |spec| {
        explorer
            .run(&RunConfig::new(spec.clone(), domain.len(), 8))
            .map_err(|e| format!("{}: {e}", spec.label()))
    })?;
    for (spec, h) in specs.iter().zip(&runs) {
        let curve = metrics::average_accuracy_curve(h);
        let last = *curve.mean.last().unwrap();
        check(last == global, || format!("{} ends at {last}, table mean {global}", spec.label()))?;
    }
    Ok(format!("5 strategies end at {global}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(ATTRSCOUT).args(args).arg("-q").output().map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("attrscout {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn drop_last_column(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(a, _)| a) })
        .collect::<Vec<_>>()
        .join("\n")
}

fn c9_replay() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let schema = repo_path("schemas/dogs.toml");
    let schema = schema.to_str().unwrap();
    let table = d.join("table.csv");
    let table = table.to_str().unwrap();
    run_cli(&["--schema", schema, "--evaluator", "synthetic:9", "--table", table, "materialize"])?;

    let mut compared = 0;
    for strategy in ["random", "covering:3", "genetic", "bayesian", "oracle"] {
        let dirs: Vec<PathBuf> = (0..2).map(|i| d.join(format!("explore_{}_{i}", strategy.replace(':', "")))).collect();
        for o in &dirs {
            run_cli(&[
                "--schema", schema, "--table", table, "--out", o.to_str().unwrap(), "--strategy", strategy,
                "--budget", "80", "--seed", "11", "--canonical", "explore",
            ])?;
        }
        let (a, b) = (read_tree(&dirs[0]), read_tree(&dirs[1]));
        check(a == b, || format!("{strategy}: canonical outputs differ"))?;
        compared += a.len();
    }

    let timed: Vec<PathBuf> = (0..2).map(|i| d.join(format!("timed_{i}"))).collect();
    for o in &timed {
        run_cli(&[
            "--schema", schema, "--table", table, "--out", o.to_str().unwrap(), "--strategy", "bayesian",
            "--budget", "40", "--seed", "4", "explore",
        ])?;
    }
    let history = |o: &Path| drop_last_column(&std::fs::read(o.join("history.csv")).unwrap());
    check(history(&timed[0]) == history(&timed[1]), || "timed histories differ outside millis".into())?;

    let bench: Vec<PathBuf> = (0..2).map(|i| d.join(format!("bench_{i}"))).collect();
    for o in &bench {
        run_cli(&[
            "--schema", schema, "--table", table, "--out", o.to_str().unwrap(), "--seeds", "0..3",
            "--budget", "61", "--canonical", "benchmark", "--train-sizes", "30,60",
        ])?;
    }
    let (a, b) = (read_tree(&bench[0]), read_tree(&bench[1]));
    check(a == b, || "benchmark outputs differ".into())?;
    compared += a.len();
    Ok(format!("{compared} files byte-identical across reruns"))
}

fn c10_protocol() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let schema_path = d.join("ten.toml");
    std::fs::write(
        &schema_path,
        "prompt_template = \"a {shape} in {tone}\"\n[attributes]\nshape = [\"circle\", \"square\", \"star\", \"ring\", \"cross\"]\ntone = [\"light\", \"dark\"]\n",
    )
    .unwrap();
    let schema = AttributeSchema::load(&schema_path).map_err(|e| e.to_string())?;
    let domain = Domain::build(schema.clone());
    check(domain.len() == 10, || format!("{} subdomains", domain.len()))?;

    let log = d.join("requests.jsonl");
    let table = d.join("table.csv");
    let evaluator = format!("external:{STUB} --mode hash --log {}", log.display());
    run_cli(&[
        "--schema", schema_path.to_str().unwrap(), "--evaluator", &evaluator, "--table",
        table.to_str().unwrap(), "materialize",
    ])?;
    let loaded = ReferenceTable::load(&schema, &table).map_err(|e| e.to_string())?;
    loaded.ensure_complete(&domain).map_err(|e| e.to_string())?;
    let requests: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    check(requests.len() == 10, || format!("{} requests", requests.len()))?;
    let ids: Vec<u64> = requests.iter().map(|r| r["id"].as_u64().unwrap()).collect();
    check(ids == (0..10).collect::<Vec<_>>(), || format!("request ids {ids:?}"))?;
    let prompts: HashSet<&str> = requests.iter().map(|r| r["prompt"].as_str().unwrap()).collect();
    let expected: HashSet<String> = domain.subdomains().iter().map(|s| schema.render_prompt(s)).collect();
    check(prompts.len() == 10 && prompts.iter().all(|p| expected.contains(*p)), || "prompts do not match the domain".into())?;

    let stub = |mode: &str| {
        let mut config = ExternalConfig::new(STUB);
        config.args = vec!["--mode".into(), mode.into()];
        ExternalEvaluator::new(schema.clone(), config).unwrap()
    };
    for mode in ["out-of-range", "wrong-id"] {
        let result = stub(mode).evaluate(domain.get(0));
        check(matches!(result, Err(EvalError::ProtocolViolation { .. })), || {
            format!("{mode}: expected a protocol violation, got {result:?}")
        })?;
    }
    let status = Command::new(ATTRSCOUT)
        .args(["-q", "--schema", schema_path.to_str().unwrap(), "--table"])
        .arg(d.join("bad.csv"))
        .args(["--evaluator", &format!("external:{STUB} --mode out-of-range"), "materialize"])
        .output()
        .unwrap()
        .status;
    check(status.code() == Some(3), || format!("out-of-range materialize exited with {status}"))?;
    Ok("10 rows, ids 0..9 matched; out-of-range and wrong-id rejected".into())
}

type Criterion = (&'static str, Duration, fn() -> Result<String, String>);

fn main() {
    // the libtest flags cargo passes are not ours to parse
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        ("1 table fidelity", Duration::from_secs(1), c1_table_fidelity),
        ("2 oracle optimality", Duration::from_secs(5), c2_oracle_optimality),
        ("3 strategy ordering", Duration::from_secs(120), c3_strategy_ordering),
        ("4 bo efficiency", Duration::from_secs(120), c4_bo_efficiency),
        ("5 covering completeness", Duration::from_secs(30), c5_covering),
        ("6 surrogate correctness", Duration::from_secs(10), c6_surrogate),
        ("7 predictor sanity", Duration::from_secs(60), c7_predictor),
        ("8 global mean", Duration::from_secs(60), c8_global_mean),
        ("9 replay determinism", Duration::MAX, c9_replay),
        ("10 protocol conformance", Duration::MAX, c10_protocol),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed > limit {
                Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}"))
            } else {
                Ok(msg)
            }
        });
        match outcome {
            Ok(msg) => println!("PASS  {name:<26} {:>9.2?}  {msg}", elapsed),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<26} {:>9.2?}  {msg}", elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
