//! Metrics over run histories and reference tables, plus their text exports.
//!
//! Means are computed with a correctly rounded sum, so a mean depends only on
//! the multiset of values and not on the order they were evaluated in.

use std::collections::HashSet;
use std::io::{self, Write};

use crate::domain::{AttributeSchema, Domain, Subdomain};
use crate::evaluation::{EvaluationRecord, ReferenceTable, TableError};
use crate::exploration::RunHistory;
use crate::textio::{self, FINGERPRINT_KEY};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_BOTTOM_FRACTION: f64 = 0.10;
/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;
/// Marker for cells and statistics that have no value.
pub const MISSING: &str = "NA";

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("invalid metric parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Correctly rounded floating-point sum (Shewchuk's non-overlapping
/// partials with a final half-way correction).
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(&last) = p.last() else {
            return 0.0;
        };
        let mut n = p.len() - 1;
        let mut hi = last;
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = ExactSum::new();
    values.into_iter().for_each(|v| s.add(v));
    s.value()
}

/// Mean that depends only on the multiset of values; 0 for no values.
pub fn mean(values: &[f64]) -> f64 {
    match values {
        [] => 0.0,
        [first, rest @ ..] if rest.iter().all(|v| v == first) => *first,
        _ => exact_sum(values.iter().copied()) / values.len() as f64,
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (exact_sum(values.iter().map(|v| (v - m) * (v - m))) / values.len() as f64).sqrt()
}

pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    Some((exact_sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64).sqrt())
}

/// Mean accuracy of a complete table.
pub fn table_mean(domain: &Domain, table: &ReferenceTable) -> Result<f64, MetricError> {
    Ok(mean(&table.accuracies(domain)?))
}

/// A per-step curve, with its spread over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub x: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MetricSeries {
    /// One run's curve: zero spread.
    pub fn single(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x: (0..values.len()).collect(),
            std: vec![0.0; values.len()],
            mean: values,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Per-step mean and population std over the runs' curves.
    pub fn aggregate(name: impl Into<String>, runs: &[MetricSeries]) -> Result<Self, MetricError> {
        let Some(first) = runs.first() else {
            return Err(MetricError::Parameter("no runs to aggregate".into()));
        };
        if let Some(r) = runs.iter().find(|r| r.len() != first.len()) {
            return Err(MetricError::Parameter(format!(
                "curves differ in length: {} vs {}",
                first.len(),
                r.len()
            )));
        }
        let mut out = Self {
            name: name.into(),
            x: first.x.clone(),
            mean: Vec::with_capacity(first.len()),
            std: Vec::with_capacity(first.len()),
        };
        let mut column = Vec::with_capacity(runs.len());
        for i in 0..first.len() {
            column.clear();
            column.extend(runs.iter().map(|r| r.mean[i]));
            out.mean.push(mean(&column));
            out.std.push(population_std(&column));
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, fingerprint: &str, w: &mut W) -> Result<(), MetricError> {
        textio::write_meta(w, FINGERPRINT_KEY, fingerprint)?;
        textio::write_meta(w, "metric", &self.name)?;
        let mut csv = textio::csv_writer(w);
        csv.write_record(["step", "mean", "std"])?;
        for i in 0..self.len() {
            csv.write_record([
                self.x[i].to_string(),
                textio::fmt_f64(self.mean[i]),
                textio::fmt_f64(self.std[i]),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn accuracies(records: &[EvaluationRecord]) -> Vec<f64> {
    records.iter().map(|r| r.accuracy).collect()
}

/// Element i is the mean over steps `max(0, i - window + 1)..=i`.
pub fn moving_average_accuracy(history: &RunHistory, window: usize) -> Result<MetricSeries, MetricError> {
    if window == 0 {
        return Err(MetricError::Parameter("window must be at least 1".into()));
    }
    let acc = accuracies(&history.records);
    let values = (0..acc.len())
        .map(|i| mean(&acc[(i + 1).saturating_sub(window)..=i]))
        .collect();
    Ok(MetricSeries::single("moving_average_accuracy", values))
}

/// Element i is the mean accuracy over steps `0..=i`.
pub fn average_accuracy_curve(history: &RunHistory) -> MetricSeries {
    let mut sum = ExactSum::new();
    let values = history
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sum.add(r.accuracy);
            sum.value() / (i + 1) as f64
        })
        .collect();
    MetricSeries::single("average_accuracy", values)
}

/// The `floor(k * |domain|)` lowest-accuracy subdomain ids, ties broken by
/// lowest id.
pub fn bottom_k_target(domain: &Domain, table: &ReferenceTable, k: f64) -> Result<Vec<u64>, MetricError> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(MetricError::Parameter(format!("k must be in (0, 1], got {k}")));
    }
    let acc = table.accuracies(domain)?;
    // absorb representation error such as 0.29 * 100 = 28.999999999999996
    let size = (k * domain.len() as f64 + 1e-9).floor() as usize;
    if size == 0 {
        return Err(MetricError::Parameter(format!(
            "k = {k} selects no subdomains out of {}",
            domain.len()
        )));
    }
    let mut order: Vec<usize> = (0..domain.len()).collect();
    order.sort_by(|&a, &b| acc[a].total_cmp(&acc[b]).then(a.cmp(&b)));
    Ok(order[..size].iter().map(|&i| domain.get(i).id).collect())
}

/// Fraction of the bottom-k target evaluated after each step.
pub fn bottom_k_coverage(
    history: &RunHistory,
    domain: &Domain,
    table: &ReferenceTable,
    k: f64,
) -> Result<MetricSeries, MetricError> {
    let target: HashSet<u64> = bottom_k_target(domain, table, k)?.into_iter().collect();
    let mut hits = 0usize;
    let values = history
        .records
        .iter()
        .map(|r| {
            hits += target.contains(&r.subdomain_id) as usize;
            hits as f64 / target.len() as f64
        })
        .collect();
    Ok(MetricSeries::single("bottom_k_coverage", values))
}

/// Evenly spaced edges over `[0, 1]`.
pub fn uniform_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

fn check_edges(edges: &[f64]) -> Result<(), MetricError> {
    if edges.len() < 2 {
        return Err(MetricError::Parameter("need at least two bin edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::Parameter(format!(
            "bin edges must be finite and strictly increasing: {edges:?}"
        )));
    }
    Ok(())
}

/// Counts per bin `[e_i, e_{i+1})`, the last bin closed on the right.
/// Values outside the edges are not counted.
pub fn accuracy_histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>, MetricError> {
    check_edges(edges)?;
    let bins = edges.len() - 1;
    let mut counts = vec![0; bins];
    for &v in values {
        if v < edges[0] || v > edges[bins] || v.is_nan() {
            continue;
        }
        let b = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts)
}

/// Histogram counts of several runs, averaged bin by bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramSummary {
    pub name: String,
    pub edges: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Histogram of the first `steps` records of each run, mean and population
/// std over runs.
pub fn histogram_over_runs(
    name: impl Into<String>,
    runs: &[RunHistory],
    steps: usize,
    edges: &[f64],
) -> Result<HistogramSummary, MetricError> {
    check_edges(edges)?;
    let counts = runs
        .iter()
        .map(|h| {
            let n = steps.min(h.len());
            accuracy_histogram(&accuracies(&h.records[..n]), edges)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bins = edges.len() - 1;
    let column = |b: usize| counts.iter().map(|c| c[b] as f64).collect::<Vec<_>>();
    Ok(HistogramSummary {
        name: name.into(),
        edges: edges.to_vec(),
        mean: (0..bins).map(|b| mean(&column(b))).collect(),
        std: (0..bins).map(|b| population_std(&column(b))).collect(),
    })
}

/// Writes histograms sharing the same edges side by side.
pub fn write_histograms<W: Write>(
    fingerprint: &str,
    histograms: &[HistogramSummary],
    w: &mut W,
) -> Result<(), MetricError> {
    let Some(first) = histograms.first() else {
        return Err(MetricError::Parameter("no histograms to write".into()));
    };
    if histograms.iter().any(|h| h.edges != first.edges) {
        return Err(MetricError::Parameter("histograms use different bin edges".into()));
    }
    textio::write_meta(w, FINGERPRINT_KEY, fingerprint)?;
    textio::write_meta(w, "metric", "accuracy_histogram")?;
    let mut csv = textio::csv_writer(w);
    let mut header = vec!["bin_low".to_string(), "bin_high".to_string()];
    for h in histograms {
        header.push(format!("{}_mean", h.name));
        header.push(format!("{}_std", h.name));
    }
    csv.write_record(&header)?;
    for b in 0..first.mean.len() {
        let mut row = vec![textio::fmt_f64(first.edges[b]), textio::fmt_f64(first.edges[b + 1])];
        for h in histograms {
            row.push(textio::fmt_f64(h.mean[b]));
            row.push(textio::fmt_f64(h.std[b]));
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Subdomain accuracies to aggregate; each subdomain counts once.
pub type Observations<'d> = Vec<(&'d Subdomain, f64)>;

pub fn observations_from_history<'d>(domain: &'d Domain, history: &RunHistory) -> Observations<'d> {
    history
        .records
        .iter()
        .filter_map(|r| domain.by_id(r.subdomain_id).map(|s| (s, r.accuracy)))
        .collect()
}

/// The rows present in `table`; incomplete tables give partial observations.
pub fn observations_from_table<'d>(domain: &'d Domain, table: &ReferenceTable) -> Observations<'d> {
    domain
        .subdomains()
        .iter()
        .filter_map(|s| table.get(s.id).map(|a| (s, a)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueSummary {
    pub attribute: String,
    pub value: String,
    /// None when no observation has this value.
    pub mean: Option<f64>,
    /// `1.96 * sample std / sqrt(count)`; None below two observations.
    pub ci95: Option<f64>,
    pub count: usize,
}

/// Mean accuracy and 95% interval for every value of every attribute.
pub fn per_value_summary(schema: &AttributeSchema, obs: &[(&Subdomain, f64)]) -> Vec<ValueSummary> {
    let mut out = Vec::new();
    for (a, attr) in schema.attributes().iter().enumerate() {
        for (v, value) in attr.values.iter().enumerate() {
            let xs: Vec<f64> = obs
                .iter()
                .filter(|(s, _)| s.assignment[a] == v)
                .map(|&(_, acc)| acc)
                .collect();
            out.push(ValueSummary {
                attribute: attr.name.clone(),
                value: value.clone(),
                mean: (!xs.is_empty()).then(|| mean(&xs)),
                ci95: sample_std(&xs).map(|s| Z_95 * s / (xs.len() as f64).sqrt()),
                count: xs.len(),
            });
        }
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_string(), textio::fmt_f64)
}

pub fn write_value_summary<W: Write>(
    fingerprint: &str,
    rows: &[ValueSummary],
    w: &mut W,
) -> Result<(), MetricError> {
    textio::write_meta(w, FINGERPRINT_KEY, fingerprint)?;
    textio::write_meta(w, "metric", "per_value_summary")?;
    let mut csv = textio::csv_writer(w);
    csv.write_record(["attribute", "value", "mean", "ci95", "count"])?;
    for r in rows {
        csv.write_record([
            r.attribute.clone(),
            r.value.clone(),
            opt(r.mean),
            opt(r.ci95),
            r.count.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub attr_a: String,
    pub attr_b: String,
    pub values_a: Vec<String>,
    pub values_b: Vec<String>,
    /// `cells[i][j]`: mean for value i of `attr_a` and j of `attr_b`; None
    /// for combinations that are forbidden or were never observed.
    pub cells: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

pub fn pair_heatmap(
    schema: &AttributeSchema,
    obs: &[(&Subdomain, f64)],
    attr_a: &str,
    attr_b: &str,
) -> Result<Heatmap, MetricError> {
    let index = |name: &str| {
        schema
            .attribute_index(name)
            .ok_or_else(|| MetricError::Parameter(format!("unknown attribute `{name}`")))
    };
    let (a, b) = (index(attr_a)?, index(attr_b)?);
    if a == b {
        return Err(MetricError::Parameter(format!(
            "heatmap needs two different attributes, got `{attr_a}` twice"
        )));
    }
    let values_a = schema.attributes()[a].values.clone();
    let values_b = schema.attributes()[b].values.clone();
    let mut groups = vec![vec![Vec::new(); values_b.len()]; values_a.len()];
    for &(s, acc) in obs {
        groups[s.assignment[a]][s.assignment[b]].push(acc);
    }
    Ok(Heatmap {
        attr_a: attr_a.to_string(),
        attr_b: attr_b.to_string(),
        cells: groups
            .iter()
            .map(|row| row.iter().map(|g| (!g.is_empty()).then(|| mean(g))).collect())
            .collect(),
        counts: groups.iter().map(|row| row.iter().map(Vec::len).collect()).collect(),
        values_a,
        values_b,
    })
}

impl Heatmap {
    /// Matrix layout: one row per value of `attr_a`, one column per value of
    /// `attr_b`, empty cells written as `NA`.
    pub fn write<W: Write>(&self, fingerprint: &str, w: &mut W) -> Result<(), MetricError> {
        textio::write_meta(w, FINGERPRINT_KEY, fingerprint)?;
        textio::write_meta(w, "metric", &format!("pair_heatmap:{}:{}", self.attr_a, self.attr_b))?;
        let mut csv = textio::csv_writer(w);
        let mut header = vec![format!("{}\\{}", self.attr_a, self.attr_b)];
        header.extend(self.values_b.iter().cloned());
        csv.write_record(&header)?;
        for (i, row) in self.cells.iter().enumerate() {
            let mut out = vec![self.values_a[i].clone()];
            out.extend(row.iter().map(|&c| opt(c)));
            csv.write_record(&out)?;
        }
        csv.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Attribute, ForbiddenAssignment};
    use crate::evaluation::{Interaction, SurfaceParams, SyntheticSurface};
    use crate::exploration::RunConfig;
    use crate::selection::StrategySpec;
    use proptest::prelude::*;

    fn history(acc: &[f64]) -> RunHistory {
        let mut h = RunHistory::empty(RunConfig::new(StrategySpec::Random, acc.len(), 0));
        for (i, &a) in acc.iter().enumerate() {
            h.records.push(EvaluationRecord {
                step: i,
                subdomain_id: i as u64,
                accuracy: a,
                num_samples: 50,
            });
            h.millis.push(0);
        }
        h
    }

    fn grid(constraints: Vec<ForbiddenAssignment>) -> Domain {
        Domain::build(
            AttributeSchema::new(
                vec![
                    Attribute::new("a", &["a1", "a2", "a3"]),
                    Attribute::new("b", &["b1", "b2"]),
                    Attribute::new("c", &["c1", "c2", "c3", "c4"]),
                    Attribute::new("weather", &["sunny", "raining", "snowing"]),
                ],
                constraints,
                "{a}{b}{c}{weather}",
            )
            .unwrap(),
        )
    }

    #[test]
    fn exact_sum_cases() {
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
        // half-way case: 1 + 2^-53 + 2^-106 rounds up
        assert_eq!(exact_sum([1.0, 2f64.powi(-53), 2f64.powi(-106)]), 1.0 + f64::EPSILON);
    }

    proptest! {
        #[test]
        fn exact_sum_matches_fixed_point(ints in prop::collection::vec(0u64..(1 << 40), 0..60)) {
            // multiples of 2^-40 in [0, 1) are exact in i128 fixed point
            let scale = (1u64 << 40) as f64;
            let xs: Vec<f64> = ints.iter().map(|&i| i as f64 / scale).collect();
            let exact: u128 = ints.iter().map(|&i| i as u128).sum();
            // the integer sum stays below 2^53, so its conversion is exact too
            prop_assert_eq!(exact_sum(xs.iter().copied()), exact as f64 / scale);
        }

        #[test]
        fn mean_is_order_free(xs in prop::collection::vec(0.0f64..1.0, 1..80), rot in 0usize..80) {
            let mut ys = xs.clone();
            ys.rotate_left(rot % xs.len());
            ys.reverse();
            prop_assert_eq!(mean(&xs).to_bits(), mean(&ys).to_bits());
        }

        #[test]
        fn histogram_counts_sum(xs in prop::collection::vec(0.0f64..=1.0, 0..100), bins in 1usize..12) {
            let counts = accuracy_histogram(&xs, &uniform_edges(bins)).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), xs.len());
        }

        #[test]
        fn moving_average_matches_naive(xs in prop::collection::vec(0.0f64..1.0, 0..40), w in 1usize..12) {
            let got = moving_average_accuracy(&history(&xs), w).unwrap();
            for i in 0..xs.len() {
                let lo = i.saturating_sub(w - 1);
                let naive = xs[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64;
                prop_assert!((got.mean[i] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moving_average_examples() {
        let h = history(&[1.0, 0.0, 1.0]);
        assert_eq!(moving_average_accuracy(&h, 2).unwrap().mean, vec![1.0, 0.5, 0.5]);
        assert_eq!(moving_average_accuracy(&h, 1).unwrap().mean, vec![1.0, 0.0, 1.0]);
        assert_eq!(
            moving_average_accuracy(&history(&[0.5; 25]), 10).unwrap().mean,
            vec![0.5; 25]
        );
        assert!(moving_average_accuracy(&history(&[]), 10).unwrap().is_empty());
        assert!(moving_average_accuracy(&h, 0).is_err());
    }

    #[test]
    fn average_curve_examples() {
        assert_eq!(average_accuracy_curve(&history(&[0.8])).mean, vec![0.8]);
        assert_eq!(average_accuracy_curve(&history(&[0.9, 0.5])).mean, vec![0.9, 0.7]);
        assert!(average_accuracy_curve(&history(&[])).is_empty());
    }

    #[test]
    fn histogram_boundaries() {
        assert_eq!(accuracy_histogram(&[0.2, 0.7, 1.0], &[0.0, 0.5, 1.0]).unwrap(), vec![1, 2]);
        assert_eq!(accuracy_histogram(&[0.5], &[0.0, 0.5, 1.0]).unwrap(), vec![0, 1]);
        assert_eq!(accuracy_histogram(&[], &[0.0, 0.5, 1.0]).unwrap(), vec![0, 0]);
        assert!(accuracy_histogram(&[0.1], &[0.0, 0.5, 0.5]).is_err());
        assert!(accuracy_histogram(&[0.1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn aggregate_single_seed_has_zero_std() {
        let s = MetricSeries::single("m", vec![0.1, 0.4]);
        let agg = MetricSeries::aggregate("m", &[s.clone()]).unwrap();
        assert_eq!(agg.mean, s.mean);
        assert_eq!(agg.std, vec![0.0, 0.0]);
        let two = MetricSeries::aggregate("m", &[s, MetricSeries::single("m", vec![0.3, 0.4])]).unwrap();
        assert!((two.mean[0] - 0.2).abs() < 1e-15 && (two.std[0] - 0.1).abs() < 1e-15);
        assert_eq!(two.std[1], 0.0);
    }

    #[test]
    fn bottom_k_target_size_and_ties() {
        let d = grid(vec![]);
        // everything ties: target is the lowest ids
        let flat = ReferenceTable::from_fn(&d, |_| 0.5);
        let target = bottom_k_target(&d, &flat, 0.25).unwrap();
        assert_eq!(target.len(), d.len() / 4);
        assert_eq!(target, d.subdomains()[..d.len() / 4].iter().map(|s| s.id).collect::<Vec<_>>());
        assert!(bottom_k_target(&d, &flat, 0.0).is_err());
        assert!(bottom_k_target(&d, &flat, 1.5).is_err());
        assert!(bottom_k_target(&d, &flat, 0.001).is_err());
    }

    #[test]
    fn coverage_is_monotone_and_completes() {
        let d = grid(vec![]);
        let s = d.schema().clone();
        let surf = SyntheticSurface::generate(&s, &SurfaceParams { seed: 4, ..Default::default() });
        let table = ReferenceTable::from_fn(&d, |x| surf.accuracy(&s, x));
        let mut h = history(&[]);
        for (i, x) in d.subdomains().iter().rev().enumerate() {
            h.records.push(EvaluationRecord {
                step: i,
                subdomain_id: x.id,
                accuracy: table.get(x.id).unwrap(),
                num_samples: 1,
            });
        }
        let cov = bottom_k_coverage(&h, &d, &table, 0.1).unwrap();
        assert!(cov.mean.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*cov.mean.last().unwrap(), 1.0);
        let unsorted = ReferenceTable::from_fn(&d, |x| if x.id == d.get(0).id { 0.0 } else { 1.0 });
        assert!(bottom_k_coverage(&h, &d, &ReferenceTable::empty(s.fingerprint().into(), 1), 0.1).is_err());
        let cov = bottom_k_coverage(&h, &d, &unsorted, 1.0 / d.len() as f64).unwrap();
        assert_eq!(cov.mean[d.len() - 2], 0.0);
        assert_eq!(cov.mean[d.len() - 1], 1.0);
    }

    #[test]
    fn per_value_separation() {
        let d = grid(vec![]);
        let sunny = d.schema().attributes()[3].value_index("sunny").unwrap();
        let table = ReferenceTable::from_fn(&d, |x| if x.assignment[3] == sunny { 0.9 } else { 0.4 });
        let rows = per_value_summary(d.schema(), &observations_from_table(&d, &table));
        for r in rows.iter().filter(|r| r.attribute == "weather") {
            let expected = if r.value == "sunny" { 0.9 } else { 0.4 };
            assert_eq!(r.mean, Some(expected));
            assert_eq!(r.ci95, Some(0.0));
            assert_eq!(r.count, d.len() / 3);
        }
        assert_eq!(rows.len(), 3 + 2 + 4 + 3);
    }

    #[test]
    fn per_value_single_record() {
        let d = grid(vec![]);
        let obs = vec![(d.get(5), 0.7)];
        let rows = per_value_summary(d.schema(), &obs);
        let present: Vec<_> = rows.iter().filter(|r| r.count == 1).collect();
        assert_eq!(present.len(), 4);
        assert!(present.iter().all(|r| r.mean == Some(0.7) && r.ci95.is_none()));
        assert!(rows.iter().filter(|r| r.count == 0).all(|r| r.mean.is_none()));
    }

    #[test]
    fn per_value_ci_hand_computed() {
        // values 0.2, 0.4, 0.9: mean 0.5, sample variance 0.13
        let d = grid(vec![]);
        let a1: Vec<_> = d.subdomains().iter().filter(|s| s.assignment[0] == 0).take(3).collect();
        let obs: Vec<_> = a1.iter().zip([0.2, 0.4, 0.9]).map(|(&s, a)| (s, a)).collect();
        let r = &per_value_summary(d.schema(), &obs)[0];
        assert!((r.mean.unwrap() - 0.5).abs() < 1e-15);
        let expected = 1.96 * (0.13f64).sqrt() / 3f64.sqrt();
        assert!((r.ci95.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn per_value_matches_block_means_of_linear_surface() {
        let d = grid(vec![]);
        let s = d.schema().clone();
        let surf = SyntheticSurface::generate(
            &s,
            &SurfaceParams {
                seed: 8,
                intercept: 0.95,
                noise_scale: 0.01,
                ..Default::default()
            },
        );
        let table = ReferenceTable::from_fn(&d, |x| surf.accuracy(&s, x));
        let rows = per_value_summary(&s, &observations_from_table(&d, &table));
        let block = |a: usize| {
            let off = s.onehot_offset(a);
            let n = s.attributes()[a].values.len();
            surf.weights[off..off + n].iter().sum::<f64>() / n as f64
        };
        let mut k = 0;
        for a in 0..s.num_attributes() {
            for v in 0..s.attributes()[a].values.len() {
                let analytic = surf.intercept
                    + surf.weights[s.onehot_offset(a) + v]
                    + (0..s.num_attributes()).filter(|&b| b != a).map(block).sum::<f64>();
                // uniform noise averages to within its scale
                assert!((rows[k].mean.unwrap() - analytic).abs() <= 0.01);
                k += 1;
            }
        }
    }

    #[test]
    fn heatmap_indicator_and_constraints() {
        let d = Domain::build(
            AttributeSchema::new(
                vec![Attribute::new("a", &["a1", "a2"]), Attribute::new("b", &["b1", "b2"])],
                vec![],
                "{a}{b}",
            )
            .unwrap(),
        );
        let t = ReferenceTable::from_fn(&d, |s| if s.assignment == [0, 0] { 1.0 } else { 0.0 });
        let h = pair_heatmap(d.schema(), &observations_from_table(&d, &t), "a", "b").unwrap();
        assert_eq!(h.cells, vec![vec![Some(1.0), Some(0.0)], vec![Some(0.0), Some(0.0)]]);

        let d = grid(vec![ForbiddenAssignment::new(&[("a", "a1"), ("weather", "snowing")])]);
        let t = ReferenceTable::from_fn(&d, |_| 0.5);
        let h = pair_heatmap(d.schema(), &observations_from_table(&d, &t), "a", "weather").unwrap();
        assert_eq!(h.cells[0][2], None);
        assert_eq!(h.counts[0][2], 0);
        assert_eq!(h.cells.iter().flatten().filter(|c| c.is_none()).count(), 1);
        assert!(pair_heatmap(d.schema(), &[], "a", "nope").is_err());
        assert!(pair_heatmap(d.schema(), &[], "a", "a").is_err());
    }

    #[test]
    fn heatmap_isolates_interaction_weight() {
        let d = grid(vec![]);
        let s = d.schema().clone();
        let mut surf = SyntheticSurface::generate(
            &s,
            &SurfaceParams {
                seed: 21,
                intercept: 0.9,
                ..Default::default()
            },
        );
        let (ia, ib) = (1, 2);
        let gamma = -0.15;
        surf.interactions = vec![Interaction {
            features: (s.onehot_offset(0) + ia, s.onehot_offset(3) + ib),
            weight: gamma,
        }];
        let table = ReferenceTable::from_fn(&d, |x| surf.accuracy(&s, x));
        let h = pair_heatmap(&s, &observations_from_table(&d, &table), "a", "weather").unwrap();
        let block = |a: usize| {
            let off = s.onehot_offset(a);
            let n = s.attributes()[a].values.len();
            surf.weights[off..off + n].iter().sum::<f64>() / n as f64
        };
        for i in 0..3 {
            for j in 0..3 {
                let additive = surf.intercept
                    + surf.weights[s.onehot_offset(0) + i]
                    + surf.weights[s.onehot_offset(3) + j]
                    + block(1)
                    + block(2);
                let residual = h.cells[i][j].unwrap() - additive;
                let expected = if (i, j) == (ia, ib) { gamma } else { 0.0 };
                assert!((residual - expected).abs() < 1e-12, "cell {i},{j}: {residual}");
            }
        }
    }

    #[test]
    fn exports_have_fingerprint_and_markers() {
        let d = grid(vec![ForbiddenAssignment::new(&[("a", "a1"), ("weather", "snowing")])]);
        let fp = d.schema().fingerprint();
        let t = ReferenceTable::from_fn(&d, |_| 0.5);
        let h = pair_heatmap(d.schema(), &observations_from_table(&d, &t), "a", "weather").unwrap();
        let mut buf = Vec::new();
        h.write(fp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&format!("# schema_fingerprint={fp}\n")));
        assert!(text.contains("a\\weather,sunny,raining,snowing\na1,0.5,0.5,NA\n"));

        let mut buf = Vec::new();
        MetricSeries::single("x", vec![0.25]).write(fp, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("step,mean,std\n0,0.25,0\n"));
    }
}
