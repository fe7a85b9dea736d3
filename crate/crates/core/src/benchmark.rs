//! Strategy comparison over a complete reference table: every strategy is run
//! for every seed and the per-step curves are averaged.

use std::io::Write;

use crate::domain::Domain;
use crate::evaluation::{ReferenceTable, TableEvaluator};
use crate::exec::Execution;
use crate::exploration::{Explorer, MultiSeedError, RunConfig, RunHistory};
use crate::metrics::{self, HistogramSummary, MetricError, MetricSeries};
use crate::selection::StrategySpec;
use crate::surrogate::{benchmark_predictor, PredictorSpec, SurrogateError};

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark setting: {0}")]
    Config(String),
    #[error("{strategy}: {source}")]
    Run {
        strategy: String,
        #[source]
        source: MultiSeedError,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("predictor sweep at train size {train_size}, seed {seed}: {source}")]
    Predictor {
        train_size: usize,
        seed: u64,
        #[source]
        source: SurrogateError,
    },
}

#[derive(Clone, Debug)]
pub struct BenchmarkSettings {
    pub strategies: Vec<StrategySpec>,
    pub seeds: Vec<u64>,
    /// Evaluations per run; clamped to the domain size.
    pub budget: usize,
    pub window: usize,
    pub bottom_fraction: f64,
    /// Histogram over the first this many evaluations of each run.
    pub histogram_steps: usize,
    pub bin_edges: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub predictor: PredictorSpec,
}

impl BenchmarkSettings {
    pub fn new(strategies: Vec<StrategySpec>, seeds: Vec<u64>, budget: usize) -> Self {
        Self {
            strategies,
            seeds,
            budget,
            window: metrics::DEFAULT_WINDOW,
            bottom_fraction: metrics::DEFAULT_BOTTOM_FRACTION,
            histogram_steps: 61,
            bin_edges: metrics::uniform_edges(10),
            train_sizes: Vec::new(),
            predictor: PredictorSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StrategyResult {
    pub label: String,
    pub spec: StrategySpec,
    pub histories: Vec<RunHistory>,
    pub moving_average: MetricSeries,
    pub average_accuracy: MetricSeries,
    pub coverage: MetricSeries,
    pub histogram: HistogramSummary,
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub fingerprint: String,
    pub strategies: Vec<StrategyResult>,
    /// Spearman correlation against train size; empty when no sizes were asked.
    pub predictor: MetricSeries,
}

pub fn run_benchmark(
    domain: &Domain,
    table: &ReferenceTable,
    settings: &BenchmarkSettings,
    exec: Execution,
) -> Result<BenchmarkReport, BenchmarkError> {
    if settings.seeds.is_empty() {
        return Err(BenchmarkError::Config("at least one seed is required".into()));
    }
    if settings.strategies.is_empty() {
        return Err(BenchmarkError::Config("at least one strategy is required".into()));
    }
    table
        .ensure_complete(domain)
        .map_err(|e| BenchmarkError::Config(e.to_string()))?;
    let evaluator = TableEvaluator::new(domain.schema().clone(), table.clone())
        .map_err(|e| BenchmarkError::Config(e.to_string()))?;
    let explorer = Explorer::new(domain, &evaluator).with_table(table);

    // one flat job list so strategies with few seeds still fill the pool
    let jobs: Vec<(usize, u64)> = (0..settings.strategies.len())
        .flat_map(|s| settings.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs = exec.try_map(&jobs, |&(s, seed)| {
        let spec = &settings.strategies[s];
        explorer
            .run(&RunConfig::new(spec.clone(), settings.budget, seed))
            .map_err(|error| BenchmarkError::Run {
                strategy: spec.label(),
                source: MultiSeedError { seed, error },
            })
    })?;

    let mut results = Vec::with_capacity(settings.strategies.len());
    let mut runs = runs.into_iter();
    for spec in &settings.strategies {
        let histories: Vec<RunHistory> = runs.by_ref().take(settings.seeds.len()).collect();
        let label = spec.label();
        let per_run = |f: &dyn Fn(&RunHistory) -> Result<MetricSeries, MetricError>| {
            histories.iter().map(f).collect::<Result<Vec<_>, _>>()
        };
        let moving = per_run(&|h| metrics::moving_average_accuracy(h, settings.window))?;
        let average = per_run(&|h| Ok(metrics::average_accuracy_curve(h)))?;
        let coverage =
            per_run(&|h| metrics::bottom_k_coverage(h, domain, table, settings.bottom_fraction))?;
        results.push(StrategyResult {
            moving_average: MetricSeries::aggregate("moving_average_accuracy", &moving)?,
            average_accuracy: MetricSeries::aggregate("average_accuracy", &average)?,
            coverage: MetricSeries::aggregate("bottom_k_coverage", &coverage)?,
            histogram: metrics::histogram_over_runs(
                label.clone(),
                &histories,
                settings.histogram_steps,
                &settings.bin_edges,
            )?,
            label,
            spec: spec.clone(),
            histories,
        });
    }

    let predictor = predictor_sweep(
        domain,
        table,
        &settings.train_sizes,
        &settings.seeds,
        settings.predictor,
        exec,
    )?;
    Ok(BenchmarkReport {
        fingerprint: domain.schema().fingerprint().to_string(),
        strategies: results,
        predictor,
    })
}

/// Mean and population std of the held-out Spearman correlation per train
/// size. `x` holds the train sizes. Constant predictions score 0.
pub fn predictor_sweep(
    domain: &Domain,
    table: &ReferenceTable,
    train_sizes: &[usize],
    seeds: &[u64],
    predictor: PredictorSpec,
    exec: Execution,
) -> Result<MetricSeries, BenchmarkError> {
    let jobs: Vec<(usize, u64)> = train_sizes
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let rho = exec.try_map(&jobs, |&(train_size, seed)| {
        match benchmark_predictor(domain, table, train_size, seed, predictor) {
            Ok(rho) => Ok(rho),
            // a fully shrunk model predicts a constant and ranks nothing
            Err(SurrogateError::UndefinedCorrelation(_)) => Ok(0.0),
            Err(source) => Err(BenchmarkError::Predictor {
                train_size,
                seed,
                source,
            }),
        }
    })?;
    let mut series = MetricSeries {
        name: format!("spearman_{}", predictor.label()),
        x: train_sizes.to_vec(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for chunk in rho.chunks(seeds.len().max(1)) {
        series.mean.push(metrics::mean(chunk));
        series.std.push(metrics::population_std(chunk));
    }
    Ok(series)
}

impl BenchmarkReport {
    pub fn strategy(&self, label: &str) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.label == label)
    }

    /// One line per strategy: final coverage and mean lowest-bin count.
    pub fn write_summary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "{:<12} {:>6} {:>18} {:>18} {:>16}",
            "strategy", "steps", "coverage(final)", "avg acc(final)", "lowest bin"
        )?;
        for s in &self.strategies {
            let last = |m: &MetricSeries| {
                m.mean
                    .last()
                    .map_or("-".to_string(), |v| format!("{v:.4} ± {:.4}", m.std.last().unwrap()))
            };
            writeln!(
                w,
                "{:<12} {:>6} {:>18} {:>18} {:>16}",
                s.label,
                s.coverage.len(),
                last(&s.coverage),
                last(&s.average_accuracy),
                format!("{:.2} ± {:.2}", s.histogram.mean[0], s.histogram.std[0]),
            )?;
        }
        Ok(())
    }
}
