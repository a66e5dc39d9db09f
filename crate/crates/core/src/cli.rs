//! The `distnet` command line.
//!
//! Every subcommand reads a JSON config document (`--config`); `--seed` and
//! `--out` override the corresponding keys. Exit codes: 0 on success, 1 on a
//! runtime failure, 2 on a configuration or validation failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{points_of, AnyModel, Checkpoint};
use crate::dataset::{read_dataset, write_dataset, Record};
use crate::error::Error;
use crate::metrics::{MetricBreakdown, SspMetric, DEFAULT_TRUNCATION};
use crate::nets::{Activation, DistributionalNetwork, OutputNetwork, PracticalNetwork, TopologicalNetwork};
use crate::simulate::{make_belief_dataset, make_functional_dataset, Functional, HmmSpec, MeasureSampler};
use crate::testfn::{enumerate_family, FamilyKind, FamilySpec, MassChannel, TestFunction};
use crate::training::{fit, GradientMode, LossSpec, Model, Optimizer, TrainConfig};
use crate::verify::{self, Fault, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "distnet", version, about = "Distributional and topological neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON config document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's `out` path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of labelled measures.
    GenData(Common),
    /// Fit a model and write a checkpoint plus an `iter,risk` trace.
    Train(Common),
    /// Evaluate a checkpoint on a dataset.
    Eval(Common),
    /// Measure metric between two dataset records, term by term.
    Metric {
        #[command(flatten)]
        common: Common,
        /// Two zero-based record indices, e.g. `--records 0,3`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        records: Option<Vec<usize>>,
    },
    /// Run the property suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Case budget per suite.
        #[arg(long)]
        cases: Option<usize>,
        /// Inject a deliberate defect.
        #[arg(long, value_enum)]
        fault: Option<FaultFlag>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultFlag {
    NegateMetric,
}

impl From<FaultFlag> for Fault {
    fn from(flag: FaultFlag) -> Self {
        match flag {
            FaultFlag::NegateMetric => Fault::NegateMetric,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad flags, or input that fails validation.
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn config(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Config(format!("{context}: {e}"))
    }

    fn runtime(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Random measures on `[0,1]` labelled by a closed-form functional.
    Functional {
        target: Functional,
        count: usize,
        #[serde(default)]
        sampler: MeasureSampler,
    },
    /// Terminal particle-filter beliefs labelled by their generating regime.
    Belief {
        regimes: Vec<HmmSpec>,
        runs: usize,
        particles: usize,
        #[serde(default)]
        resample: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Defaults to the checkpoint path with extension `trace.csv`.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    pub model: ModelSpec,
    pub training: TrainSection,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A dense head on the location of single-atom records; `hidden: []` is linear.
    Head {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Topological {
        families: Vec<FamilySpec>,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Distributional {
        families: Vec<FamilySpec>,
        #[serde(default)]
        mass_channel: MassChannel,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Practical {
        inner_width: usize,
        features: usize,
        outer_width: usize,
        #[serde(default)]
        activation: Activation,
    },
}

fn default_optimizer() -> Optimizer {
    Optimizer::Momentum { beta: 0.9 }
}

/// [`TrainConfig`] without its seed, which comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    pub step: f64,
    pub iterations: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub gradient: GradientMode,
    #[serde(default)]
    pub loss: LossSpec,
}

impl TrainSection {
    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            step: self.step,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
            gradient: self.gradient,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub records: Option<Vec<usize>>,
    /// Defaults to the monomial family.
    #[serde(default)]
    pub families: Vec<FamilySpec>,
    #[serde(default)]
    pub mass_channel: MassChannel,
    #[serde(default)]
    pub truncation: Option<usize>,
    /// Seeds randomly initialised families.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_cases() -> usize {
    VerifyOptions::default().cases
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default)]
    pub fault: Option<Fault>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: default_cases(),
            fault: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mean_risk: f64,
    pub max_abs_err: f64,
    /// Fraction of correctly classified records; only for the logistic loss.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub records: [usize; 2],
    #[serde(flatten)]
    pub breakdown: MetricBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub iterations: usize,
    pub final_risk: f64,
}

/// Parses a config document, reporting the path of the offending key.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

fn read_config<T: DeserializeOwned>(path: Option<&Path>) -> CliResult<T> {
    let path = path.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::config(path.display(), e))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_records(path: &Path) -> CliResult<Vec<Record>> {
    read_dataset(path).map_err(|e| CliError::config(path.display(), e))
}

fn output_path(flag: &Option<PathBuf>, config: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| config.clone())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::runtime(path.display(), e))
}

/// Writes a JSON document to `path`, or to stdout when no path is given.
fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime("serialization", e))?;
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(common) => gen_data(&common),
        Command::Train(common) => train(&common),
        Command::Eval(common) => eval(&common),
        Command::Metric { common, records } => metric(&common, records),
        Command::Verify { common, cases, fault } => run_verify(&common, cases, fault),
    }
}

pub fn gen_data(common: &Common) -> CliResult<()> {
    let cfg: GenDataConfig = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out =
        output_path(&common.out, &cfg.out).ok_or_else(|| CliError::Config("no output path (`out` or --out)".into()))?;
    let records = match &cfg.dataset {
        DatasetSpec::Functional { target, count, sampler } => make_functional_dataset(*target, *count, sampler, seed),
        DatasetSpec::Belief {
            regimes,
            runs,
            particles,
            resample,
        } => {
            for (i, r) in regimes.iter().enumerate() {
                r.validate()
                    .map_err(|e| CliError::config(format!("dataset.regimes[{i}]"), e))?;
            }
            make_belief_dataset(regimes, *runs, *particles, seed, *resample)
        }
    }
    .map_err(|e| match e {
        Error::InvalidArgument(_) => CliError::config("dataset", e),
        e => CliError::runtime("generation", e),
    })?;
    write_dataset(&out, &records).map_err(|e| CliError::runtime(out.display(), e))
}

fn enumerate_all(families: &[FamilySpec], dim: usize, rng: &mut ChaCha8Rng) -> CliResult<Vec<TestFunction>> {
    let mut tests = Vec::new();
    for (i, spec) in families.iter().enumerate() {
        let members = enumerate_family(spec, dim, rng).map_err(|e| CliError::config(format!("families[{i}]"), e))?;
        tests.extend(members);
    }
    Ok(tests)
}

fn fit_and_wrap<M: Model>(
    model: M,
    data: &[crate::dataset::Labeled<M::Input>],
    config: &TrainConfig,
    wrap: fn(M) -> AnyModel,
) -> CliResult<(AnyModel, Vec<f64>)> {
    let outcome = fit(model, data, config).map_err(|e| CliError::runtime("training", e))?;
    Ok((wrap(outcome.model), outcome.trace))
}

/// Builds the initial model described by `spec` for data of dimension `dim`.
fn build_model(
    spec: &ModelSpec,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> CliResult<(AnyModel, Vec<FamilySpec>, Activation)> {
    let shape = |e: Error| CliError::config("model", e);
    Ok(match spec {
        ModelSpec::Head { hidden, activation } => (
            AnyModel::Head(OutputNetwork::random(dim, hidden, 1, *activation, rng).map_err(shape)?),
            Vec::new(),
            *activation,
        ),
        ModelSpec::Topological {
            families,
            hidden,
            activation,
        } => {
            let tests = enumerate_all(families, dim, rng)?;
            let head = OutputNetwork::random(tests.len().max(1), hidden, 1, *activation, rng).map_err(shape)?;
            let net = TopologicalNetwork::new(tests, head).map_err(shape)?;
            (AnyModel::Topological(net), families.clone(), *activation)
        }
        ModelSpec::Distributional {
            families,
            mass_channel,
            hidden,
            activation,
        } => {
            let tests = enumerate_all(families, dim, rng)?;
            let head = OutputNetwork::random(tests.len() + 1, hidden, 1, *activation, rng).map_err(shape)?;
            let net = DistributionalNetwork::new(*mass_channel, tests, head).map_err(shape)?;
            (AnyModel::Distributional(net), families.clone(), *activation)
        }
        ModelSpec::Practical {
            inner_width,
            features,
            outer_width,
            activation,
        } => (
            AnyModel::Practical(
                PracticalNetwork::random(dim, *inner_width, *features, *outer_width, *activation, rng)
                    .map_err(shape)?,
            ),
            Vec::new(),
            *activation,
        ),
    })
}

pub fn train(common: &Common) -> CliResult<()> {
    let cfg: TrainRunConfig = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out =
        output_path(&common.out, &cfg.out).ok_or_else(|| CliError::Config("no output path (`out` or --out)".into()))?;
    let trace_path = cfg.trace.clone().unwrap_or_else(|| out.with_extension("trace.csv"));
    let config = cfg.training.with_seed(seed);
    config.validate().map_err(|e| CliError::config("training", e))?;
    let records = load_records(&cfg.data)?;
    let dim = records
        .first()
        .map(|r| r.input.dim())
        .ok_or_else(|| CliError::Config(format!("{}: dataset is empty", cfg.data.display())))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (initial, families, activation) = build_model(&cfg.model, dim, &mut rng)?;
    let (model, trace) = match initial {
        AnyModel::Head(m) => {
            let points = points_of(&records).map_err(|e| CliError::config(cfg.data.display(), e))?;
            fit_and_wrap(m, &points, &config, AnyModel::Head)?
        }
        AnyModel::Topological(m) => {
            let points = points_of(&records).map_err(|e| CliError::config(cfg.data.display(), e))?;
            fit_and_wrap(m, &points, &config, AnyModel::Topological)?
        }
        AnyModel::Distributional(m) => fit_and_wrap(m, &records, &config, AnyModel::Distributional)?,
        AnyModel::Practical(m) => fit_and_wrap(m, &records, &config, AnyModel::Practical)?,
    };

    let checkpoint = Checkpoint::new(activation, families, config.loss, model);
    checkpoint.save(&out).map_err(|e| CliError::runtime(out.display(), e))?;
    let mut csv = String::from("iter,risk\n");
    for (i, r) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{r}\n"));
    }
    write_text(&trace_path, &csv)?;
    emit_json(
        &TrainSummary {
            checkpoint: out,
            trace: trace_path,
            iterations: config.iterations,
            final_risk: *trace.last().expect("trace holds the initial risk"),
        },
        None,
    )
}

/// Risk, worst error and (for the logistic loss) accuracy of `checkpoint` on `records`.
pub fn evaluate(checkpoint: &Checkpoint, records: &[Record]) -> crate::Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs a nonempty dataset".into()));
    }
    let model = &checkpoint.model;
    let mean_risk = model.risk(records, checkpoint.loss)?;
    let mut max_abs_err: f64 = 0.0;
    let mut correct = 0usize;
    for (i, r) in records.iter().enumerate() {
        let out = model.predict(&r.input).map_err(|e| e.at_record(i))?;
        let prediction = match checkpoint.loss {
            LossSpec::Squared => out,
            LossSpec::Logistic => Activation::Logistic.apply(out),
        };
        max_abs_err = max_abs_err.max((prediction - r.label).abs());
        let class = if out >= 0.0 { 1.0 } else { 0.0 };
        correct += usize::from(class == r.label);
    }
    let accuracy = match checkpoint.loss {
        LossSpec::Logistic => Some(correct as f64 / records.len() as f64),
        LossSpec::Squared => None,
    };
    Ok(EvalReport {
        n: records.len(),
        mean_risk,
        max_abs_err,
        accuracy,
    })
}

pub fn eval(common: &Common) -> CliResult<()> {
    let cfg: EvalConfig = read_config(common.config.as_deref())?;
    let checkpoint = Checkpoint::load(&cfg.checkpoint).map_err(|e| CliError::config(cfg.checkpoint.display(), e))?;
    let records = load_records(&cfg.data)?;
    let report = evaluate(&checkpoint, &records).map_err(|e| match e {
        Error::Record { .. } | Error::InvalidArgument(_) => CliError::config(cfg.data.display(), e),
        e => CliError::runtime("evaluation", e),
    })?;
    emit_json(&report, output_path(&common.out, &cfg.out).as_deref())
}

pub fn metric(common: &Common, records_flag: Option<Vec<usize>>) -> CliResult<()> {
    let cfg: MetricConfig = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let indices = records_flag
        .or(cfg.records.clone())
        .ok_or_else(|| CliError::Config("record indices required (`records` or --records)".into()))?;
    let [i, j] = indices[..] else {
        return Err(CliError::Config(format!(
            "exactly two record indices expected, got {}",
            indices.len()
        )));
    };
    let records = load_records(&cfg.data)?;
    let pick = |k: usize| {
        records
            .get(k)
            .ok_or_else(|| CliError::Config(format!("record {k} out of range ({} records)", records.len())))
    };
    let (mu, nu) = (&pick(i)?.input, &pick(j)?.input);
    let truncation = cfg.truncation.unwrap_or(DEFAULT_TRUNCATION);
    let families = if cfg.families.is_empty() {
        vec![FamilySpec::new(FamilyKind::Monomial, truncation)]
    } else {
        cfg.families.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family: Vec<TestFunction> = enumerate_all(&families, mu.dim(), &mut rng)?
        .into_iter()
        .take(truncation)
        .collect();
    let metric = SspMetric::new(family, cfg.mass_channel).map_err(|e| CliError::config("families", e))?;
    let breakdown = metric
        .measure_terms(mu, nu)
        .map_err(|e| CliError::runtime("metric", e))?;
    emit_json(
        &MetricReport {
            records: [i, j],
            breakdown,
        },
        output_path(&common.out, &cfg.out).as_deref(),
    )
}

pub fn run_verify(common: &Common, cases: Option<usize>, fault: Option<FaultFlag>) -> CliResult<()> {
    let cfg = match common.config.as_deref() {
        Some(path) => read_config(Some(path))?,
        None => VerifyConfig::default(),
    };
    let options = VerifyOptions {
        seed: common.seed.unwrap_or(cfg.seed),
        cases: cases.unwrap_or(cfg.cases),
        fault: fault.map(Fault::from).or(cfg.fault),
    };
    if options.cases == 0 {
        return Err(CliError::Config("cases must be at least 1".into()));
    }
    let report = verify::run(&options);
    emit_json(&report, output_path(&common.out, &cfg.out).as_deref())?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .suites
            .iter()
            .filter(|s| !s.passed)
            .map(|s| format!("{}.{}", s.module, s.name))
            .collect();
        Err(CliError::Runtime(format!("failing suites: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_name_the_key_path() {
        let text = r#"{"seed": 1, "dataset": {"functional": {"target": "normalized_mean", "count": "ten"}}}"#;
        let err = parse_config::<GenDataConfig>(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dataset.functional.count"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"dataset": {"functional": {"target": "normalized_mean", "count": 3, "colour": 1}}}"#;
        assert!(parse_config::<GenDataConfig>(text).is_err());
        let text = r#"{"dataset": {"functional": {"target": "normalized_mean", "count": 3}}, "extra": 0}"#;
        assert!(parse_config::<GenDataConfig>(text).is_err());
    }

    #[test]
    fn train_config_defaults() {
        let text = r#"{
            "data": "d.jsonl",
            "model": {"distributional": {"families": [{"family": "monomial", "count": 2}]}},
            "training": {"step": 0.1, "iterations": 5}
        }"#;
        let cfg: TrainRunConfig = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.training.optimizer, Optimizer::Momentum { beta: 0.9 });
        match cfg.model {
            ModelSpec::Distributional {
                hidden, mass_channel, ..
            } => {
                assert_eq!(hidden, vec![16]);
                assert_eq!(mass_channel, MassChannel::Arctan);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verify_fault_parses_from_config() {
        let cfg: VerifyConfig = parse_config(r#"{"fault": "negate-metric", "cases": 3}"#).unwrap();
        assert_eq!(cfg.fault, Some(Fault::NegateMetric));
        assert_eq!(cfg.cases, 3);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
