use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

fn one() -> usize {
    1
}

fn default_c() -> f64 {
    1.0
}

/// Seeds as an explicit list or a `{ start, count }` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: usize },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (0..*count as u64).map(|k| start + k).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestTask {
    /// Always the given index.
    Fixed(usize),
    /// Uniform per seed from the selection stream.
    #[default]
    Random,
    /// Every index per seed; the highest-regret run is reported.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceConfig {
    LowerBound {
        m: usize,
        lambda: f64,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Clustered {
        k: usize,
        n: usize,
        lambda: f64,
        #[serde(default)]
        s_extra: usize,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Tree {
        m: usize,
        beta: f64,
        lambda: f64,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Revealing {
        m: usize,
        i: usize,
        lambda: f64,
        #[serde(default)]
        horizon: Option<usize>,
    },
    Random {
        m: usize,
        s: usize,
        a: usize,
        horizon: usize,
        lambda: f64,
    },
    /// A task-set document, with an optional metadata sidecar.
    File {
        path: PathBuf,
        #[serde(default)]
        metadata: Option<PathBuf>,
        #[serde(default)]
        lambda: Option<f64>,
    },
    Bandit {
        m: usize,
        lambda: f64,
    },
}

impl InstanceConfig {
    /// Overrides the task count; used by sweeps.
    pub fn set_m(&mut self, value: usize) -> Result<(), HarnessError> {
        match self {
            InstanceConfig::LowerBound { m, .. }
            | InstanceConfig::Tree { m, .. }
            | InstanceConfig::Revealing { m, .. }
            | InstanceConfig::Random { m, .. }
            | InstanceConfig::Bandit { m, .. } => {
                *m = value;
                Ok(())
            }
            _ => Err(HarnessError::Config("this family has no single task-count parameter".into())),
        }
    }

    pub fn set_lambda(&mut self, value: f64) -> Result<(), HarnessError> {
        match self {
            InstanceConfig::LowerBound { lambda, .. }
            | InstanceConfig::Clustered { lambda, .. }
            | InstanceConfig::Tree { lambda, .. }
            | InstanceConfig::Revealing { lambda, .. }
            | InstanceConfig::Random { lambda, .. }
            | InstanceConfig::Bandit { lambda, .. } => *lambda = value,
            InstanceConfig::File { lambda, .. } => *lambda = Some(value),
        }
        Ok(())
    }
}

/// `n` is used verbatim when given; otherwise it is derived from `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    /// Plays the test task's optimal policy from the first episode.
    Oracle,
    Itc {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "default_c")]
        c: f64,
    },
    Ditc {
        #[serde(default)]
        n_cluster: Option<usize>,
        #[serde(default)]
        n_inner: Option<usize>,
        #[serde(default = "default_c")]
        c: f64,
    },
    Tree {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default)]
        beta: Option<f64>,
    },
    Eitc {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "default_c")]
        c: f64,
    },
    BanditItc {
        #[serde(default)]
        n: Option<usize>,
    },
}

impl AlgorithmConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmConfig::Oracle => "oracle",
            AlgorithmConfig::Itc { .. } => "itc",
            AlgorithmConfig::Ditc { .. } => "ditc",
            AlgorithmConfig::Tree { .. } => "tree",
            AlgorithmConfig::Eitc { .. } => "eitc",
            AlgorithmConfig::BanditItc { .. } => "bandit-itc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Written to the `run_id` column.
    pub name: String,
    /// Episode budget `H`.
    pub episodes: usize,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub test_task: TestTask,
    /// Fixed instance seed; by default every run seed builds its own instance.
    #[serde(default)]
    pub instance_seed: Option<u64>,
    /// Skip assumption checks.
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write every `csv_stride`-th episode (and the last) to the trace CSV.
    #[serde(default = "one")]
    pub csv_stride: usize,
    pub instance: InstanceConfig,
    pub algorithm: AlgorithmConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes (H) must be at least 1".into()));
        }
        if self.seeds.seeds().is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.csv_stride == 0 {
            return Err(HarnessError::Config("csv_stride must be at least 1".into()));
        }
        let bandit_family = matches!(self.instance, InstanceConfig::Bandit { .. });
        let bandit_algo = matches!(self.algorithm, AlgorithmConfig::BanditItc { .. });
        if bandit_algo && !bandit_family {
            return Err(HarnessError::Config("bandit-itc needs the bandit family".into()));
        }
        if bandit_family && !(bandit_algo || self.algorithm == AlgorithmConfig::Oracle) {
            return Err(HarnessError::Config("the bandit family runs bandit-itc or oracle".into()));
        }
        Ok(())
    }
}

/// Grid over task count, budget, separation and algorithm around a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub episodes: Vec<usize>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub algorithm: Vec<AlgorithmConfig>,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base.validate()?;
        Ok(cfg)
    }

    /// Cartesian product of the grid axes; empty axes keep the base value.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>, HarnessError> {
        fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for m in axis(&self.grid.m) {
            for h in axis(&self.grid.episodes) {
                for lambda in axis(&self.grid.lambda) {
                    for algo in axis(&self.grid.algorithm) {
                        let mut cfg = self.base.clone();
                        let mut tag = Vec::new();
                        if let Some(m) = m {
                            cfg.instance.set_m(m)?;
                            tag.push(format!("m{m}"));
                        }
                        if let Some(h) = h {
                            cfg.episodes = h;
                            tag.push(format!("h{h}"));
                        }
                        if let Some(l) = lambda {
                            cfg.instance.set_lambda(l)?;
                            tag.push(format!("l{l}"));
                        }
                        if let Some(a) = algo {
                            tag.push(a.label().to_string());
                            cfg.algorithm = a;
                        }
                        if !tag.is_empty() {
                            cfg.name = format!("{}-{}", cfg.name, tag.join("-"));
                        }
                        cfg.output = None;
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
name = "lb"
episodes = 4096
seeds = { start = 0, count = 3 }
test_task = { fixed = 2 }

[instance]
family = "lower-bound"
m = 4
lambda = 0.4

[algorithm]
name = "itc"
n = 50
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(cfg.seeds.seeds(), vec![0, 1, 2]);
        assert_eq!(cfg.test_task, TestTask::Fixed(2));
        assert_eq!(cfg.algorithm, AlgorithmConfig::Itc { n: Some(50), c: 1.0 });
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml(&format!("{BASIC}\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("lambda = 0.4", "lambda = 0.4\nwat = 2")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("n = 50", "n = 50\nfoo = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("episodes = 4096", "episodes = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("{ start = 0, count = 3 }", "[]")).is_err());
        assert!(ExperimentConfig::from_toml(&BASIC.replace("\"itc\"", "\"bandit-itc\"")).is_err());
    }

    #[test]
    fn sweep_expands_grid() {
        let text = format!(
            "[base]\n{}\n[grid]\nm = [4, 8]\nepisodes = [100, 200]\nalgorithm = [{{ name = \"oracle\" }}]\n",
            BASIC
                .replace("[instance]", "[base.instance]")
                .replace("[algorithm]", "[base.algorithm]")
        );
        let sweep = SweepConfig::from_toml(&text).unwrap();
        let cfgs = sweep.expand().unwrap();
        assert_eq!(cfgs.len(), 4);
        assert_eq!(cfgs[3].name, "lb-m8-h200-oracle");
        assert_eq!(cfgs[3].episodes, 200);
    }
}
