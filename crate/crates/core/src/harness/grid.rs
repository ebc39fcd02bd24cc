//! Experiment grids and their line-oriented config format.
//!
//! ```text
//! # comment
//! scenarios = [sp/sign, sp, sign]
//! outer_lr  = [0.001, 0.01]
//! inner_lr  = [0.00001, 0.0001]
//! clients   = [3, 5, 10]
//! seed      = 7
//! ```
//!
//! Every list key expands into a cartesian product; a scalar is a list of
//! one. Unknown keys, repeated keys and repeated list entries are errors.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_dataset, synth_generate, AlignedDataset, ScenarioId, SynthConfig, IMAGE_INTENSITY_SCALE};
use crate::error::{Error, Result};
use crate::federated::{Aggregation, BaselineConfig, MetaConfig};
use crate::model::ArchSpec;
use crate::rng::derive_seed;

/// Where a grid takes its samples from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A directory written by `save_dataset`, or per-modality sources that
    /// still need label alignment (seeded by `align_seed`).
    Directory { path: PathBuf, align_seed: u64 },
}

impl DataSource {
    pub fn load(&self, arch: &ArchSpec) -> Result<AlignedDataset> {
        match self {
            DataSource::Synthetic(cfg) => synth_generate(arch, cfg),
            DataSource::Directory { path, align_seed } => load_dataset(path, *align_seed),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic(c) => write!(
                f,
                "synthetic(per_class={}, noise={}, image_scale={}, seed={})",
                c.per_class, c.noise_sigma, c.image_scale, c.seed
            ),
            DataSource::Directory { path, align_seed } => {
                write!(f, "{} (align seed {align_seed})", path.display())
            }
        }
    }
}

/// One federated run of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaRun {
    pub id: String,
    pub repetition: usize,
    /// Seed as written in the config; `config.seed` is derived from it for
    /// repetitions after the first.
    pub base_seed: u64,
    pub config: MetaConfig,
}

/// One centralized baseline run of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRun {
    pub id: String,
    pub repetition: usize,
    pub base_seed: u64,
    pub config: BaselineConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    /// Scenario columns in config order.
    pub scenarios: Vec<ScenarioId>,
    pub runs: Vec<MetaRun>,
    pub baselines: Vec<BaselineRun>,
    pub arch: String,
    pub source: DataSource,
}

impl ExperimentGrid {
    pub fn len(&self) -> usize {
        self.runs.len() + self.baselines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        ArchSpec::preset(&self.arch)
    }

    /// A one-run grid, handy for single experiments driven from code.
    pub fn single(config: MetaConfig, arch: &str, source: DataSource) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            scenarios: vec![config.scenario],
            runs: vec![MetaRun {
                id: meta_run_id(&config, config.seed, 0),
                repetition: 0,
                base_seed: config.seed,
                config,
            }],
            baselines: Vec::new(),
            arch: arch.to_string(),
            source,
        })
    }
}

/// Seed of repetition `rep`; repetition 0 keeps the configured seed.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    if rep == 0 {
        seed
    } else {
        derive_seed(seed, &[rep as u64])
    }
}

pub fn scenario_slug(s: ScenarioId) -> String {
    s.name().replace('/', "-")
}

/// Plain decimal when short, scientific otherwise (`1e308`, not 309 digits).
pub fn format_rate(v: f64) -> String {
    let plain = v.to_string();
    if plain.len() <= 12 {
        plain
    } else {
        format!("{v:e}")
    }
}

fn rep_suffix(rep: usize) -> String {
    if rep == 0 {
        String::new()
    } else {
        format!("-r{rep}")
    }
}

pub fn meta_run_id(c: &MetaConfig, base_seed: u64, rep: usize) -> String {
    format!(
        "3mf-{}-c{}-o{}-i{}-{}-e{}-t{}-s{}{}",
        scenario_slug(c.scenario),
        c.clients_total,
        format_rate(c.outer_lr),
        format_rate(c.inner_lr),
        c.aggregation,
        c.local_epochs,
        c.rounds,
        base_seed,
        rep_suffix(rep)
    )
}

pub fn baseline_run_id(c: &BaselineConfig, base_seed: u64, rep: usize) -> String {
    format!(
        "baseline-{}-lr{}-e{}-s{}{}",
        scenario_slug(c.scenario),
        format_rate(c.lr),
        c.epochs,
        base_seed,
        rep_suffix(rep)
    )
}

const KEYS: &[&str] = &[
    "scenarios",
    "outer_lr",
    "inner_lr",
    "clients",
    "clients_per_round",
    "aggregation",
    "local_epochs",
    "rounds",
    "seed",
    "repetitions",
    "batch_size",
    "support_fraction",
    "test_fraction",
    "baseline_lr",
    "baseline_epochs",
    "arch",
    "data",
    "data_dir",
    "synth_per_class",
    "synth_noise",
    "synth_image_scale",
    "data_seed",
    "align_seed",
];

struct Entry {
    line: usize,
    values: Vec<String>,
}

fn err(line: usize, msg: impl fmt::Display) -> Error {
    Error::config(format!("line {line}: {msg}"))
}

fn split_list(line: usize, raw: &str) -> Result<Vec<String>> {
    let raw = raw.trim();
    let inner = match (raw.strip_prefix('['), raw.ends_with(']')) {
        (Some(rest), true) => &rest[..rest.len() - 1],
        (Some(_), false) => return Err(err(line, "unterminated list")),
        (None, _) => {
            if raw.is_empty() {
                return Err(err(line, "missing value"));
            }
            return Ok(vec![raw.to_string()]);
        }
    };
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|v| {
            let v = v.trim();
            if v.is_empty() {
                Err(err(line, "empty list element"))
            } else {
                Ok(v.to_string())
            }
        })
        .collect()
}

fn tokenize(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(err(line, format!("unknown key `{key}`")));
        }
        if let Some(prev) = out.get(&key) {
            return Err(err(line, format!("key `{key}` already set on line {}", prev.line)));
        }
        let values = split_list(line, value)?;
        out.insert(key, Entry { line, values });
    }
    Ok(out)
}

struct Fields {
    entries: BTreeMap<String, Entry>,
}

impl Fields {
    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn list<T>(&self, key: &str, default: Vec<T>, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
        let Some(e) = self.entries.get(key) else {
            return Ok(default);
        };
        if e.values.is_empty() {
            return Err(err(e.line, format!("`{key}` must not be empty")));
        }
        let mut seen = HashSet::new();
        e.values
            .iter()
            .map(|v| {
                if !seen.insert(v.as_str()) {
                    return Err(err(e.line, format!("duplicate value `{v}` in `{key}`")));
                }
                parse(v).ok_or_else(|| err(e.line, format!("invalid value `{v}` for `{key}`")))
            })
            .collect()
    }

    fn scalar<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        let Some(e) = self.entries.get(key) else {
            return Ok(default);
        };
        match e.values.as_slice() {
            [v] => parse(v).ok_or_else(|| err(e.line, format!("invalid value `{v}` for `{key}`"))),
            _ => Err(err(e.line, format!("`{key}` takes a single value"))),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }
}

fn positive_rate(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite())
}

fn non_negative_rate(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| *x >= 0.0 && x.is_finite())
}

fn positive_int(v: &str) -> Option<usize> {
    v.parse::<usize>().ok().filter(|x| *x > 0)
}

fn fraction(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| *x > 0.0 && *x < 1.0)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

/// Parses config text; a relative `data_dir` resolves against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentGrid> {
    let f = Fields { entries: tokenize(text)? };

    if !f.has("scenarios") {
        return Err(Error::config("missing required key `scenarios`"));
    }
    let scenarios = f.list("scenarios", Vec::new(), |v| v.parse::<ScenarioId>().ok())?;
    let mut seen = HashSet::new();
    for s in &scenarios {
        if !seen.insert(*s) {
            return Err(err(f.line("scenarios"), format!("scenario `{s}` listed twice")));
        }
    }

    let outer = f.list("outer_lr", vec![1e-3], positive_rate)?;
    let inner = f.list("inner_lr", vec![1e-5], positive_rate)?;
    let clients = f.list("clients", vec![3], positive_int)?;
    let aggregations = f.list("aggregation", vec![Aggregation::Sum], |v| v.parse().ok())?;
    let epochs = f.list("local_epochs", vec![5], positive_int)?;
    let rounds = f.list("rounds", vec![50], |v| v.parse::<usize>().ok())?;
    let seeds = f.list("seed", vec![0], |v| v.parse::<u64>().ok())?;
    let repetitions = f.scalar("repetitions", 1, positive_int)?;
    let per_round = if f.has("clients_per_round") {
        Some(f.scalar("clients_per_round", 0, positive_int)?)
    } else {
        None
    };
    let batch_size = f.scalar("batch_size", 32, positive_int)?;
    let support_fraction = f.scalar("support_fraction", 0.2, fraction)?;
    let test_fraction = f.scalar("test_fraction", 0.2, fraction)?;
    let baseline_lrs = f.list("baseline_lr", Vec::new(), non_negative_rate)?;
    let baseline_epochs = f.scalar("baseline_epochs", 30, |v| v.parse::<usize>().ok())?;
    if f.has("baseline_epochs") && baseline_lrs.is_empty() {
        return Err(err(f.line("baseline_epochs"), "`baseline_epochs` needs `baseline_lr`"));
    }

    let arch = f.scalar("arch", "standard".to_string(), |v| Some(v.to_string()))?;
    ArchSpec::preset(&arch).map_err(|e| err(f.line("arch"), e))?;

    let data = f.scalar("data", "synthetic".to_string(), |v| Some(v.to_string()))?;
    let source = match data.as_str() {
        "synthetic" => {
            if f.has("data_dir") {
                return Err(err(f.line("data_dir"), "`data_dir` needs `data = directory`"));
            }
            let mut cfg = SynthConfig::new(
                f.scalar("synth_per_class", 100, positive_int)?,
                f.scalar("synth_noise", 0.05, non_negative_rate)?,
                f.scalar("data_seed", 0, |v| v.parse().ok())?,
            );
            cfg.image_scale = f.scalar("synth_image_scale", IMAGE_INTENSITY_SCALE, positive_rate)?;
            DataSource::Synthetic(cfg)
        }
        "directory" => {
            if !f.has("data_dir") {
                return Err(err(f.line("data"), "`data = directory` needs `data_dir`"));
            }
            for key in ["synth_per_class", "synth_noise", "synth_image_scale", "data_seed"] {
                if f.has(key) {
                    return Err(err(f.line(key), format!("`{key}` only applies to synthetic data")));
                }
            }
            let dir = f.scalar("data_dir", PathBuf::new(), |v| Some(PathBuf::from(v)))?;
            DataSource::Directory {
                path: if dir.is_absolute() { dir } else { base_dir.join(dir) },
                align_seed: f.scalar("align_seed", 0, |v| v.parse().ok())?,
            }
        }
        other => return Err(err(f.line("data"), format!("data must be `synthetic` or `directory`, got `{other}`"))),
    };

    let mut runs = Vec::new();
    let mut ids = HashSet::new();
    for &c in &clients {
        for &o in &outer {
            for &i in &inner {
                for &scenario in &scenarios {
                    for &aggregation in &aggregations {
                        for &e in &epochs {
                            for &t in &rounds {
                                for &seed in &seeds {
                                    for rep in 0..repetitions {
                                        let mut cfg = MetaConfig::new(scenario, repetition_seed(seed, rep));
                                        cfg.outer_lr = o;
                                        cfg.inner_lr = i;
                                        cfg.clients_total = c;
                                        cfg.clients_per_round = per_round.unwrap_or(c);
                                        cfg.aggregation = aggregation;
                                        cfg.local_epochs = e;
                                        cfg.rounds = t;
                                        cfg.batch_size = batch_size;
                                        cfg.support_fraction = support_fraction;
                                        cfg.test_fraction = test_fraction;
                                        let id = meta_run_id(&cfg, seed, rep);
                                        cfg.validate().map_err(|e| Error::config(format!("run {id}: {e}")))?;
                                        if !ids.insert(id.clone()) {
                                            return Err(Error::config(format!("duplicate run {id}")));
                                        }
                                        runs.push(MetaRun { id, repetition: rep, base_seed: seed, config: cfg });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut baselines = Vec::new();
    for &lr in &baseline_lrs {
        for &scenario in &scenarios {
            for &seed in &seeds {
                for rep in 0..repetitions {
                    let mut cfg = BaselineConfig::new(scenario, repetition_seed(seed, rep));
                    cfg.lr = lr;
                    cfg.epochs = baseline_epochs;
                    cfg.batch_size = batch_size;
                    cfg.test_fraction = test_fraction;
                    let id = baseline_run_id(&cfg, seed, rep);
                    cfg.validate().map_err(|e| Error::config(format!("run {id}: {e}")))?;
                    if !ids.insert(id.clone()) {
                        return Err(Error::config(format!("duplicate run {id}")));
                    }
                    baselines.push(BaselineRun { id, repetition: rep, base_seed: seed, config: cfg });
                }
            }
        }
    }

    Ok(ExperimentGrid { scenarios, runs, baselines, arch, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentGrid> {
        parse_config_str(text, Path::new("/data"))
    }

    fn msg(e: Error) -> String {
        e.to_string()
    }

    #[test]
    fn table_block_expands_to_24_runs() {
        let g = parse(
            "scenarios = [img/sign, sp/sign, img/sp, img, sp, sign]\n\
             outer_lr = [0.001, 0.01]\n\
             inner_lr = [0.00001, 0.0001]\n\
             clients = [3]\n",
        )
        .unwrap();
        assert_eq!(g.runs.len(), 24);
        assert!(g.baselines.is_empty());
        assert_eq!(g.scenarios.len(), 6);
        let ids: HashSet<_> = g.runs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), 24);
    }

    #[test]
    fn single_run_grid() {
        let g = parse("scenarios = full\nrounds = 0\nseed = 3\n").unwrap();
        assert_eq!(g.len(), 1);
        let c = &g.runs[0].config;
        assert_eq!((c.rounds, c.seed, c.scenario), (0, 3, ScenarioId::Full));
        assert_eq!(c.outer_lr, 1e-3);
        assert_eq!(c.clients_per_round, 3);
    }

    #[test]
    fn empty_scenario_list_is_rejected() {
        let e = msg(parse("scenarios = []\n").unwrap_err());
        assert!(e.contains("line 1"), "{e}");
        assert!(parse("outer_lr = 0.1\n").is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = msg(parse("# header\nscenarios = [sp]\nouter_lr = [0.001, -1]\n").unwrap_err());
        assert!(e.contains("line 3"), "{e}");
        let e = msg(parse("scenarios = [sp, audio]\n").unwrap_err());
        assert!(e.contains("line 1") && e.contains("audio"), "{e}");
        let e = msg(parse("scenarios = [sp]\n\nlearning_rate = 1\n").unwrap_err());
        assert!(e.contains("line 3") && e.contains("unknown key"), "{e}");
        let e = msg(parse("scenarios = [sp]\ninner_lr = 0\n").unwrap_err());
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn duplicates_are_rejected() {
        let e = msg(parse("scenarios = [sp, sp]\n").unwrap_err());
        assert!(e.contains("line 1"), "{e}");
        let e = msg(parse("scenarios = [sp, spectrogram]\n").unwrap_err());
        assert!(e.contains("twice"), "{e}");
        let e = msg(parse("scenarios = [sp]\nclients = [3, 3]\n").unwrap_err());
        assert!(e.contains("line 2"), "{e}");
        let e = msg(parse("scenarios = [sp]\nseed = 1\nseed = 2\n").unwrap_err());
        assert!(e.contains("line 3") && e.contains("line 2"), "{e}");
    }

    #[test]
    fn repetitions_derive_distinct_seeds() {
        let g = parse("scenarios = sp\nseed = [1, 2]\nrepetitions = 3\n").unwrap();
        assert_eq!(g.runs.len(), 6);
        let seeds: HashSet<u64> = g.runs.iter().map(|r| r.config.seed).collect();
        assert_eq!(seeds.len(), 6);
        assert!(g.runs.iter().any(|r| r.repetition == 0 && r.config.seed == 1));
    }

    #[test]
    fn baseline_runs_share_scenarios_and_seeds() {
        let g = parse("scenarios = [sp, sign]\nseed = 4\nbaseline_lr = [0.01, 0]\nbaseline_epochs = 2\n").unwrap();
        assert_eq!(g.baselines.len(), 4);
        assert!(g.baselines.iter().all(|b| b.config.epochs == 2 && b.config.seed == 4));
        assert!(parse("scenarios = sp\nbaseline_epochs = 2\n").is_err());
    }

    #[test]
    fn invalid_client_sampling_is_rejected() {
        assert!(parse("scenarios = sp\nclients = [3, 5]\nclients_per_round = 4\n").is_err());
        let g = parse("scenarios = sp\nclients = [5, 10]\nclients_per_round = 2\n").unwrap();
        assert!(g.runs.iter().all(|r| r.config.clients_per_round == 2));
    }

    #[test]
    fn data_sources() {
        let g = parse("scenarios = sp\nsynth_per_class = 4\nsynth_noise = 0.1\ndata_seed = 9\narch = compact\n").unwrap();
        assert_eq!(g.source, DataSource::Synthetic(SynthConfig::new(4, 0.1, 9)));
        assert_eq!(g.arch, "compact");
        let g = parse("scenarios = sp\ndata = directory\ndata_dir = sets/a\nalign_seed = 2\n").unwrap();
        assert_eq!(
            g.source,
            DataSource::Directory { path: PathBuf::from("/data/sets/a"), align_seed: 2 }
        );
        assert!(parse("scenarios = sp\ndata = directory\n").is_err());
        assert!(parse("scenarios = sp\ndata = directory\ndata_dir = x\nsynth_noise = 0.1\n").is_err());
        assert!(parse("scenarios = sp\narch = huge\n").is_err());
    }

    #[test]
    fn comments_and_malformed_lines() {
        assert!(parse("scenarios = sp # trailing\n   # only comment\n").is_ok());
        assert!(parse("scenarios sp\n").is_err());
        assert!(parse("scenarios = [sp\n").is_err());
        assert!(parse("scenarios = [sp,,sign]\n").is_err());
        assert!(parse("scenarios = sp\nrepetitions = [1, 2]\n").is_err());
    }
}
