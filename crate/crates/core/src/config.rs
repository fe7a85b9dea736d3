//! Run configuration documents.
//!
//! A config file is TOML, like the schema, but a separate document. Every
//! field is optional; command-line flags override file values, which override
//! built-in defaults. Relative paths resolve against the file's directory.
//!
//! ```toml
//! schema = "schemas/dogs.toml"
//! out = "runs/bo"
//! budget = 61
//! seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
//! strategy = "bayesian"
//!
//! [evaluator]
//! kind = "synthetic"
//! seed = 7
//! interactions = 12
//!
//! [benchmark]
//! strategies = ["random", "covering:3", "genetic", "bayesian", "oracle"]
//! train_sizes = [30, 60, 120]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluation::EvaluatorSpec;
use crate::selection::{SelectionError, StrategySpec};
use crate::surrogate::PredictorSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// A strategy written either in short form (`"covering:3"`) or as a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyField {
    Short(String),
    Full(StrategySpec),
}

impl StrategyField {
    pub fn resolve(&self) -> Result<StrategySpec, SelectionError> {
        match self {
            StrategyField::Short(s) => StrategySpec::parse_short(s),
            StrategyField::Full(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub strategies: Option<Vec<StrategyField>>,
    pub histogram_steps: Option<usize>,
    /// Equal-width bins over [0, 1]; ignored when `bin_edges` is set.
    pub bins: Option<usize>,
    pub bin_edges: Option<Vec<f64>>,
    pub window: Option<usize>,
    pub bottom_fraction: Option<f64>,
    pub train_sizes: Option<Vec<usize>>,
    pub predictor: Option<PredictorSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Attribute pairs, e.g. `[["weather", "location"]]`.
    pub heatmaps: Option<Vec<[String; 2]>>,
    pub window: Option<usize>,
    pub bottom_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub budget: Option<usize>,
    pub num_samples: Option<u32>,
    pub strategy: Option<StrategyField>,
    pub evaluator: Option<EvaluatorSpec>,
    pub canonical: Option<bool>,
    pub sequential: Option<bool>,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub report: ReportSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        if let Some(dir) = path.parent() {
            config.rebase(dir);
        }
        Ok(config)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.schema);
        fix(&mut self.table);
        fix(&mut self.history);
        fix(&mut self.out);
        if let Some(EvaluatorSpec::Table { path }) = &mut self.evaluator {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
    }
}

/// Parses `--seeds`: a comma list (`1,2,5`) or a half-open range (`0..10`).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let bad = |e: std::num::ParseIntError| format!("bad seed list `{text}`: {e}");
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a >= b {
            return Err(format!("empty seed range `{text}`"));
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(bad)).collect()
}

/// Parses `--evaluator`: `table`, `synthetic`, `synthetic:<seed>` or
/// `external:<command> [args...]`. `table` resolves its path later.
pub fn parse_evaluator(text: &str, table: Option<&Path>) -> Result<EvaluatorSpec, String> {
    let (kind, arg) = match text.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (text, None),
    };
    match (kind, arg) {
        ("table", None) => table
            .map(|p| EvaluatorSpec::Table { path: p.to_path_buf() })
            .ok_or_else(|| "the table evaluator needs --table".to_string()),
        ("synthetic", arg) => {
            let mut params = crate::evaluation::SurfaceParams::default();
            if let Some(seed) = arg {
                params.seed = seed
                    .parse()
                    .map_err(|e| format!("bad synthetic seed `{seed}`: {e}"))?;
            }
            Ok(EvaluatorSpec::Synthetic(params))
        }
        ("external", Some(cmd)) => {
            let mut words = cmd.split_whitespace().map(String::from);
            let command = words
                .next()
                .ok_or_else(|| "external evaluator needs a command".to_string())?;
            let mut config = crate::evaluation::ExternalConfig::new(command);
            config.args = words.collect();
            Ok(EvaluatorSpec::External(config))
        }
        _ => Err(format!(
            "cannot parse evaluator `{text}`; expected table, synthetic[:seed] or external:<command>"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::SurfaceParams;

    #[test]
    fn full_document() {
        let text = r#"
            schema = "s.toml"
            budget = 61
            seeds = [1, 2]
            strategy = { kind = "bayesian", lambda = 0.05 }

            [evaluator]
            kind = "synthetic"
            seed = 7
            interactions = 3

            [benchmark]
            strategies = ["random", "covering:2", { kind = "genetic", population = 10 }]
            train_sizes = [10, 20]
            predictor = { kind = "ols" }

            [report]
            heatmaps = [["weather", "location"]]
        "#;
        let c = FileConfig::parse(text).unwrap();
        assert_eq!(c.budget, Some(61));
        assert_eq!(
            c.strategy.unwrap().resolve().unwrap(),
            StrategySpec::Bayesian {
                lambda: 0.05,
                pretrain: 10
            }
        );
        assert_eq!(
            c.evaluator,
            Some(EvaluatorSpec::Synthetic(SurfaceParams {
                seed: 7,
                interactions: 3,
                ..Default::default()
            }))
        );
        let strategies: Vec<_> = c
            .benchmark
            .strategies
            .unwrap()
            .iter()
            .map(|s| s.resolve().unwrap())
            .collect();
        assert_eq!(strategies[1], StrategySpec::Covering { strength: 2 });
        assert!(matches!(
            strategies[2],
            StrategySpec::Genetic { population: 10, elite: 2, .. }
        ));
        assert_eq!(c.benchmark.predictor, Some(PredictorSpec::Ols));
        assert_eq!(c.report.heatmaps.unwrap()[0], ["weather".to_string(), "location".to_string()]);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(FileConfig::parse("budjet = 3").is_err());
        assert!(FileConfig::parse("[evaluator]\nkind = \"synthetic\"\nsed = 1").is_err());
        assert!(FileConfig::parse("[evaluator]\nkind = \"quantum\"").is_err());
    }

    #[test]
    fn external_config_has_no_sample_field() {
        let c = FileConfig::parse(
            "num_samples = 20\n[evaluator]\nkind = \"external\"\ncommand = \"python\"\nargs = [\"w.py\"]\ntimeout_secs = 5",
        )
        .unwrap();
        let Some(EvaluatorSpec::External(ext)) = c.evaluator else {
            panic!()
        };
        assert_eq!(ext.args, ["w.py"]);
        assert_eq!(ext.timeout_secs, 5);
        assert!(FileConfig::parse("[evaluator]\nkind = \"external\"\ncommand = \"x\"\nn_samples = 3").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "schema = \"s.toml\"\nout = \"/abs\"\n[evaluator]\nkind = \"table\"\npath = \"t.csv\"").unwrap();
        let c = FileConfig::load(&path).unwrap();
        assert_eq!(c.schema.unwrap(), dir.path().join("s.toml"));
        assert_eq!(c.out.unwrap(), PathBuf::from("/abs"));
        assert_eq!(
            c.evaluator,
            Some(EvaluatorSpec::Table {
                path: dir.path().join("t.csv")
            })
        );
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 1,9").unwrap(), vec![4, 1, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn evaluator_short_forms() {
        assert!(matches!(
            parse_evaluator("synthetic:5", None),
            Ok(EvaluatorSpec::Synthetic(SurfaceParams { seed: 5, .. }))
        ));
        assert!(parse_evaluator("table", None).is_err());
        let Ok(EvaluatorSpec::External(e)) = parse_evaluator("external:python3 worker.py --fast", None)
        else {
            panic!()
        };
        assert_eq!(e.command, "python3");
        assert_eq!(e.args, ["worker.py", "--fast"]);
        assert!(parse_evaluator("oracle", None).is_err());
    }
}
