//! Selection strategies: given everything evaluated so far, choose the next
//! subdomain to evaluate.
//!
//! Strategies address subdomains by their position in [`Domain`] (ascending
//! id), so "lowest index" and "lowest id" are the same tie-break.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::evaluation::{EvaluationRecord, ReferenceTable, TableError};
use crate::rng::{self, StrategyRng};
use crate::surrogate::{fit_lasso, SurrogateError, DEFAULT_LAMBDA};

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("no unevaluated subdomains remain")]
    Exhausted,
    #[error("invalid strategy parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("surrogate fit failed: {0}")]
    Surrogate(#[from] SurrogateError),
}

/// What a strategy may look at when choosing.
pub struct SelectionContext<'a> {
    pub domain: &'a Domain,
    /// Records so far, in step order.
    pub history: &'a [EvaluationRecord],
    /// Evaluated flag per domain index.
    pub evaluated: &'a [bool],
    /// Unevaluated domain indices, ascending.
    pub remaining: &'a [usize],
}

impl SelectionContext<'_> {
    fn history_indices(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.history.iter().map(|r| {
            let i = self
                .domain
                .index_of(r.subdomain_id)
                .expect("history records belong to the domain");
            (i, r.accuracy)
        })
    }
}

pub trait SelectionStrategy: Send {
    fn name(&self) -> &'static str;

    /// Returns a domain index from `ctx.remaining`.
    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError>;
}

pub const DEFAULT_POPULATION: usize = 20;
pub const DEFAULT_ELITE: usize = 2;
pub const DEFAULT_TOURNAMENT: usize = 2;
pub const DEFAULT_PRETRAIN: usize = 10;

/// Strategy configuration as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Random,
    Oracle,
    Covering {
        strength: usize,
    },
    Genetic {
        #[serde(default = "default_population")]
        population: usize,
        #[serde(default = "default_elite")]
        elite: usize,
        #[serde(default = "default_tournament")]
        tournament: usize,
        /// Per-gene mutation probability; 1 / attribute count when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mutation_rate: Option<f64>,
    },
    Bayesian {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_pretrain")]
        pretrain: usize,
    },
}

fn default_population() -> usize {
    DEFAULT_POPULATION
}
fn default_elite() -> usize {
    DEFAULT_ELITE
}
fn default_tournament() -> usize {
    DEFAULT_TOURNAMENT
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_pretrain() -> usize {
    DEFAULT_PRETRAIN
}

impl StrategySpec {
    pub fn genetic() -> Self {
        StrategySpec::Genetic {
            population: DEFAULT_POPULATION,
            elite: DEFAULT_ELITE,
            tournament: DEFAULT_TOURNAMENT,
            mutation_rate: None,
        }
    }

    pub fn bayesian() -> Self {
        StrategySpec::Bayesian {
            lambda: DEFAULT_LAMBDA,
            pretrain: DEFAULT_PRETRAIN,
        }
    }

    /// Parses the short CLI form: `random`, `oracle`, `covering:3`,
    /// `genetic`, `bayesian`, `bayesian:0.05`.
    pub fn parse_short(text: &str) -> Result<Self, SelectionError> {
        let (kind, arg) = match text.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        let bad = || SelectionError::InvalidParameter(format!("cannot parse strategy `{text}`"));
        Ok(match (kind, arg) {
            ("random", None) => StrategySpec::Random,
            ("oracle", None) => StrategySpec::Oracle,
            ("covering", Some(n)) => StrategySpec::Covering {
                strength: n.parse().map_err(|_| bad())?,
            },
            ("covering", None) => StrategySpec::Covering { strength: 3 },
            ("genetic" | "ga", None) => StrategySpec::genetic(),
            ("bayesian" | "bo", None) => StrategySpec::bayesian(),
            ("bayesian" | "bo", Some(l)) => StrategySpec::Bayesian {
                lambda: l.parse().map_err(|_| bad())?,
                pretrain: DEFAULT_PRETRAIN,
            },
            _ => return Err(bad()),
        })
    }

    pub fn label(&self) -> String {
        match self {
            StrategySpec::Random => "random".into(),
            StrategySpec::Oracle => "oracle".into(),
            StrategySpec::Covering { strength } => format!("covering{strength}"),
            StrategySpec::Genetic { .. } => "genetic".into(),
            StrategySpec::Bayesian { .. } => "bayesian".into(),
        }
    }

    pub fn needs_table(&self) -> bool {
        matches!(self, StrategySpec::Oracle)
    }

    /// Instantiates the strategy for one run.
    pub fn build(
        &self,
        domain: &Domain,
        seed: u64,
        table: Option<&ReferenceTable>,
    ) -> Result<Box<dyn SelectionStrategy>, SelectionError> {
        let rng = rng::stream(seed, 0x5E1E_C7);
        Ok(match *self {
            StrategySpec::Random => Box::new(RandomStrategy { rng }),
            StrategySpec::Oracle => {
                let table = table.ok_or_else(|| {
                    SelectionError::InvalidParameter(
                        "the oracle strategy needs a complete reference table".into(),
                    )
                })?;
                Box::new(OracleStrategy::new(domain, table)?)
            }
            StrategySpec::Covering { strength } => {
                let mut rng = rng;
                let order = generate_covering_selection(domain, strength, &mut rng)?;
                Box::new(CoveringStrategy {
                    order,
                    cursor: 0,
                    rng,
                })
            }
            StrategySpec::Genetic {
                population,
                elite,
                tournament,
                mutation_rate,
            } => {
                let params = GaParams {
                    population,
                    elite,
                    tournament,
                    mutation_rate: mutation_rate
                        .unwrap_or(1.0 / domain.schema().num_attributes().max(1) as f64),
                };
                params.validate()?;
                Box::new(GeneticStrategy {
                    params,
                    state: GaState::default(),
                    rng,
                })
            }
            StrategySpec::Bayesian { lambda, pretrain } => {
                if !(lambda >= 0.0) || !lambda.is_finite() {
                    return Err(SelectionError::InvalidParameter(format!(
                        "lambda must be nonnegative, got {lambda}"
                    )));
                }
                Box::new(BayesianStrategy {
                    lambda,
                    pretrain,
                    rng,
                })
            }
        })
    }
}

// ---------------------------------------------------------------------------
// random

pub fn select_random(remaining: &[usize], rng: &mut StrategyRng) -> Result<usize, SelectionError> {
    if remaining.is_empty() {
        return Err(SelectionError::Exhausted);
    }
    Ok(remaining[rng.gen_range(0..remaining.len())])
}

struct RandomStrategy {
    rng: StrategyRng,
}

impl SelectionStrategy for RandomStrategy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError> {
        select_random(ctx.remaining, &mut self.rng)
    }
}

// ---------------------------------------------------------------------------
// oracle

/// Remaining index with the lowest true accuracy, lowest index on ties.
pub fn select_oracle(remaining: &[usize], accuracies: &[f64]) -> Result<usize, SelectionError> {
    remaining
        .iter()
        .copied()
        .min_by(|&a, &b| accuracies[a].total_cmp(&accuracies[b]).then(a.cmp(&b)))
        .ok_or(SelectionError::Exhausted)
}

struct OracleStrategy {
    accuracies: Vec<f64>,
}

impl OracleStrategy {
    fn new(domain: &Domain, table: &ReferenceTable) -> Result<Self, SelectionError> {
        Ok(Self {
            accuracies: table.accuracies(domain)?,
        })
    }
}

impl SelectionStrategy for OracleStrategy {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError> {
        select_oracle(ctx.remaining, &self.accuracies)
    }
}

// ---------------------------------------------------------------------------
// covering arrays

/// Every `n`-subset of `0..k` in lexicographic order.
pub fn attribute_combinations(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for a in start..k {
            if k - a < n - cur.len() {
                break;
            }
            cur.push(a);
            rec(a + 1, k, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n <= k {
        rec(0, k, n, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Greedy covering selection of strength `n`.
///
/// A tuple is an assignment of values to `n` distinct attributes; it must be
/// covered when at least one valid subdomain contains it. Each round adds
/// the subdomain covering the most uncovered tuples, breaking ties uniformly
/// at random. Returns domain indices in selection order.
pub fn generate_covering_selection(
    domain: &Domain,
    strength: usize,
    rng: &mut StrategyRng,
) -> Result<Vec<usize>, SelectionError> {
    let schema = domain.schema();
    let k = schema.num_attributes();
    if strength < 2 || strength > k {
        return Err(SelectionError::InvalidParameter(format!(
            "covering strength must be in 2..={k}, got {strength}"
        )));
    }
    let radices: Vec<usize> = schema.attributes().iter().map(|a| a.values.len()).collect();
    let combos = attribute_combinations(k, strength);
    let mut bases = Vec::with_capacity(combos.len());
    let mut total = 0usize;
    for c in &combos {
        bases.push(total);
        total += c.iter().map(|&a| radices[a]).product::<usize>();
    }

    let tuples_of = |assignment: &[usize]| -> Vec<usize> {
        combos
            .iter()
            .zip(&bases)
            .map(|(c, &base)| base + c.iter().fold(0, |acc, &a| acc * radices[a] + assignment[a]))
            .collect()
    };
    let member_tuples: Vec<Vec<usize>> = domain
        .subdomains()
        .iter()
        .map(|s| tuples_of(&s.assignment))
        .collect();

    // only tuples that some valid subdomain contains need covering
    let mut covered = vec![true; total];
    for ts in &member_tuples {
        for &t in ts {
            covered[t] = false;
        }
    }
    let mut uncovered = covered.iter().filter(|c| !**c).count();

    let mut chosen = vec![false; domain.len()];
    let mut order = Vec::new();
    let mut best = Vec::new();
    while uncovered > 0 {
        let mut best_gain = 0;
        best.clear();
        for (i, ts) in member_tuples.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let gain = ts.iter().filter(|&&t| !covered[t]).count();
            if gain > best_gain {
                best_gain = gain;
                best.clear();
                best.push(i);
            } else if gain == best_gain && gain > 0 {
                best.push(i);
            }
        }
        debug_assert!(best_gain > 0);
        let pick = best[rng.gen_range(0..best.len())];
        chosen[pick] = true;
        order.push(pick);
        for &t in &member_tuples[pick] {
            if !covered[t] {
                covered[t] = true;
                uncovered -= 1;
            }
        }
    }
    Ok(order)
}

/// Walks the covering list; once it is used up, continues with seeded random
/// picks so a larger budget can still be spent.
struct CoveringStrategy {
    order: Vec<usize>,
    cursor: usize,
    rng: StrategyRng,
}

impl SelectionStrategy for CoveringStrategy {
    fn name(&self) -> &'static str {
        "covering"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError> {
        while self.cursor < self.order.len() {
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !ctx.evaluated[i] {
                return Ok(i);
            }
        }
        select_random(ctx.remaining, &mut self.rng)
    }
}

// ---------------------------------------------------------------------------
// genetic algorithm

#[derive(Clone, Debug, PartialEq)]
pub struct GaParams {
    pub population: usize,
    pub elite: usize,
    pub tournament: usize,
    pub mutation_rate: f64,
}

impl GaParams {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidParameter(m.into()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.elite >= self.population {
            return bad("elite must be smaller than population");
        }
        if self.tournament < 1 {
            return bad("tournament size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("mutation_rate must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct GaState {
    /// Current generation's members, domain indices.
    pub population: Vec<usize>,
    pub generation: usize,
    /// Members not yet handed to the loop.
    pub pending: VecDeque<usize>,
    initialized: bool,
}

/// Per-attribute uniform crossover.
pub fn uniform_crossover(a: &[usize], b: &[usize], rng: &mut StrategyRng) -> Vec<usize> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y })
        .collect()
}

/// Resamples each gene with probability `rate`; a mutated gene always takes
/// a different value when the attribute has more than one.
pub fn mutate(genes: &mut [usize], radices: &[usize], rate: f64, rng: &mut StrategyRng) {
    for (g, &r) in genes.iter_mut().zip(radices) {
        if r > 1 && rate > 0.0 && rng.gen_bool(rate) {
            *g = (*g + rng.gen_range(1..r)) % r;
        }
    }
}

fn tournament(
    population: &[usize],
    fitness: &HashMap<usize, f64>,
    size: usize,
    rng: &mut StrategyRng,
) -> usize {
    (0..size)
        .map(|_| population[rng.gen_range(0..population.len())])
        .min_by(|a, b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(b)))
        .expect("tournament size >= 1")
}

const REPAIR_ATTEMPTS: usize = 32;

/// Next subdomain from the genetic algorithm.
///
/// The first call seeds a random initial population. When the pending queue
/// runs dry a new generation is bred: the `elite` lowest-accuracy members
/// survive, the rest are children of tournament-selected parents produced
/// by uniform crossover and mutation. Children that are invalid, already
/// evaluated or already queued are re-mutated, then replaced by a random
/// unevaluated subdomain.
pub fn ga_next(
    state: &mut GaState,
    params: &GaParams,
    ctx: &SelectionContext<'_>,
    rng: &mut StrategyRng,
) -> Result<usize, SelectionError> {
    if ctx.remaining.is_empty() {
        return Err(SelectionError::Exhausted);
    }
    if !state.initialized {
        state.initialized = true;
        let take = params.population.min(ctx.remaining.len());
        let picks = index::sample(rng, ctx.remaining.len(), take);
        state.population = picks.iter().map(|i| ctx.remaining[i]).collect();
        state.pending = state.population.iter().copied().collect();
    }
    while let Some(i) = state.pending.pop_front() {
        if !ctx.evaluated[i] {
            return Ok(i);
        }
    }

    let fitness: HashMap<usize, f64> = ctx.history_indices().collect();
    let mut members: Vec<usize> = state
        .population
        .iter()
        .copied()
        .filter(|i| fitness.contains_key(i))
        .collect();
    if members.is_empty() {
        return select_random(ctx.remaining, rng);
    }
    members.sort_by(|a, b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(b)));
    let elites: Vec<usize> = members.iter().take(params.elite).copied().collect();

    let schema = ctx.domain.schema();
    let radices: Vec<usize> = schema.attributes().iter().map(|a| a.values.len()).collect();
    let mut queued: HashSet<usize> = HashSet::new();
    let n_children = params.population - elites.len().min(params.population);
    let mut children = Vec::with_capacity(n_children);
    for _ in 0..n_children {
        if queued.len() >= ctx.remaining.len() {
            break;
        }
        let pa = tournament(&members, &fitness, params.tournament, rng);
        let pb = tournament(&members, &fitness, params.tournament, rng);
        let mut genes = uniform_crossover(
            &ctx.domain.get(pa).assignment,
            &ctx.domain.get(pb).assignment,
            rng,
        );
        mutate(&mut genes, &radices, params.mutation_rate, rng);

        let mut accepted = None;
        for _ in 0..REPAIR_ATTEMPTS {
            if !schema.is_forbidden(&genes) {
                if let Some(i) = ctx.domain.index_of(schema.encode_id(&genes)) {
                    if !ctx.evaluated[i] && !queued.contains(&i) {
                        accepted = Some(i);
                        break;
                    }
                }
            }
            let a = rng.gen_range(0..genes.len());
            if radices[a] > 1 {
                genes[a] = (genes[a] + rng.gen_range(1..radices[a])) % radices[a];
            }
        }
        let child = match accepted {
            Some(i) => i,
            None => {
                let free: Vec<usize> = ctx
                    .remaining
                    .iter()
                    .copied()
                    .filter(|i| !queued.contains(i))
                    .collect();
                select_random(&free, rng)?
            }
        };
        queued.insert(child);
        children.push(child);
    }

    state.generation += 1;
    state.population = elites.into_iter().chain(children.iter().copied()).collect();
    state.pending = children.into_iter().collect();
    match state.pending.pop_front() {
        Some(i) => Ok(i),
        None => select_random(ctx.remaining, rng),
    }
}

struct GeneticStrategy {
    params: GaParams,
    state: GaState,
    rng: StrategyRng,
}

impl SelectionStrategy for GeneticStrategy {
    fn name(&self) -> &'static str {
        "genetic"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError> {
        ga_next(&mut self.state, &self.params, ctx, &mut self.rng)
    }
}

// ---------------------------------------------------------------------------
// Bayesian optimization

/// Surrogate-guided pick.
///
/// Before `pretrain` evaluations exist the pick is seeded-random. After that
/// a Lasso model is fit on the full history and each remaining subdomain is
/// scored by its potential improvement `max(0, best - predicted)` where
/// `best` is the lowest accuracy observed. The highest score wins; when every
/// score is zero the lowest prediction wins. Ties go to the lowest index.
pub fn bo_select(
    ctx: &SelectionContext<'_>,
    lambda: f64,
    pretrain: usize,
    rng: &mut StrategyRng,
) -> Result<usize, SelectionError> {
    if ctx.remaining.is_empty() {
        return Err(SelectionError::Exhausted);
    }
    if ctx.history.len() < pretrain.max(1) {
        return select_random(ctx.remaining, rng);
    }
    let rows: Vec<(usize, f64)> = ctx.history_indices().collect();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|&(i, _)| ctx.domain.schema().encode_onehot(ctx.domain.get(i)))
        .collect();
    let y: Vec<f64> = rows.iter().map(|&(_, a)| a).collect();
    let model = fit_lasso(&x, &y, lambda)?;
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);

    let schema = ctx.domain.schema();
    let predictions: Vec<f64> = ctx
        .remaining
        .iter()
        .map(|&i| model.predict_one(schema, ctx.domain.get(i)))
        .collect();
    Ok(acquire(ctx.remaining, &predictions, best))
}

/// Argmax of `max(0, best - predicted)`, falling back to argmin of the
/// prediction when every score is zero. `candidates` must be ascending.
pub fn acquire(candidates: &[usize], predictions: &[f64], best: f64) -> usize {
    let mut top: Option<(usize, f64)> = None;
    for (&i, &p) in candidates.iter().zip(predictions) {
        let score = (best - p).max(0.0);
        if top.map_or(true, |(_, s)| score > s) {
            top = Some((i, score));
        }
    }
    match top {
        Some((i, s)) if s > 0.0 => i,
        _ => {
            let mut low = (candidates[0], predictions[0]);
            for (&i, &p) in candidates.iter().zip(predictions).skip(1) {
                if p < low.1 {
                    low = (i, p);
                }
            }
            low.0
        }
    }
}

struct BayesianStrategy {
    lambda: f64,
    pretrain: usize,
    rng: StrategyRng,
}

impl SelectionStrategy for BayesianStrategy {
    fn name(&self) -> &'static str {
        "bayesian"
    }

    fn select(&mut self, ctx: &SelectionContext<'_>) -> Result<usize, SelectionError> {
        bo_select(ctx, self.lambda, self.pretrain, &mut self.rng)
    }
}
