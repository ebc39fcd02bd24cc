use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metafed::data::{save_dataset, synth_generate, AlignedDataset, ScenarioId, SynthConfig, IMAGE_INTENSITY_SCALE};
use metafed::federated::{
    build_federation, continue_3mf, initial_state, load_checkpoint, save_checkpoint, train_baseline, Aggregation,
    BaselineConfig, GlobalState, MetaConfig, RoundReport,
};
use metafed::harness::{emit_curves, parse_config, run_grid_opts, DataSource, GridOptions};
use metafed::model::{param_count, ArchSpec, MultimodalNet};

#[derive(Parser)]
#[command(name = "metafed", version, about = "Federated multimodal meta-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized training with missing modalities, tested on all modalities.
    Baseline(BaselineArgs),
    /// Federated meta-learning (3MF).
    Fedmeta(FedmetaArgs),
    /// Run every experiment of a grid config file.
    Grid(GridArgs),
    /// Write a synthetic aligned dataset to a directory.
    SynthData(SynthArgs),
    /// Print the contents of a checkpoint directory.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory; without it a synthetic dataset is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for aligning unaligned per-modality sources.
    #[arg(long, default_value_t = 0)]
    align_seed: u64,
    #[arg(long, default_value_t = 100)]
    synth_per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    synth_noise: f64,
    #[arg(long, default_value_t = IMAGE_INTENSITY_SCALE)]
    synth_image_scale: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Architecture preset: `standard` or `compact`.
    #[arg(long, default_value = "standard")]
    arch: String,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match &self.data {
            Some(path) => DataSource::Directory { path: path.clone(), align_seed: self.align_seed },
            None => {
                let mut cfg = SynthConfig::new(self.synth_per_class, self.synth_noise, self.data_seed);
                cfg.image_scale = self.synth_image_scale;
                DataSource::Synthetic(cfg)
            }
        }
    }

    fn load(&self) -> Result<(ArchSpec, AlignedDataset)> {
        let arch = ArchSpec::preset(&self.arch)?;
        let source = self.source();
        let data = source.load(&arch).with_context(|| format!("loading {source}"))?;
        log::info!("{} samples from {source}", data.len());
        Ok((arch, data))
    }
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    seed: u64,
    /// Modalities present in training, e.g. `sp/sign`, `img`, `full`.
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Write per-epoch curves to this CSV file.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct FedmetaArgs {
    #[arg(long, required_unless_present = "resume")]
    seed: Option<u64>,
    #[arg(long, required_unless_present = "resume")]
    scenario: Option<ScenarioId>,
    #[arg(long, default_value_t = 1e-3)]
    outer_lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    inner_lr: f64,
    /// Communication rounds; with `--resume`, the round to continue to.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 5)]
    local_epochs: usize,
    #[arg(long, default_value_t = 3)]
    clients: usize,
    /// Clients sampled per round; defaults to all of them.
    #[arg(long)]
    clients_per_round: Option<usize>,
    #[arg(long, default_value_t = Aggregation::Sum)]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    support_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Save a checkpoint here after every `--checkpoint-every` rounds and at the end.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
    /// Continue from a checkpoint directory; its config replaces the run flags.
    /// Later checkpoints go back to this directory unless `--checkpoint` is set.
    #[arg(long, conflicts_with_all = ["seed", "scenario"])]
    resume: Option<PathBuf>,
    #[arg(long)]
    curves: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GridArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parallel runs; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the config's data source with this dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    align_seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = IMAGE_INTENSITY_SCALE)]
    image_scale: f64,
    #[arg(long, default_value = "standard")]
    arch: String,
}

#[derive(Args)]
struct InspectArgs {
    dir: PathBuf,
}

fn print_round(r: &RoundReport) {
    println!(
        "round {:>3}  train loss {:.4} acc {:.4}  test loss {:.4} acc {:.4}",
        r.round, r.train_loss, r.train_acc, r.test_loss, r.test_acc
    );
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let (arch, data) = a.data.load()?;
    let mut cfg = BaselineConfig::new(a.scenario, a.seed);
    cfg.epochs = a.epochs;
    cfg.lr = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.test_fraction = a.test_fraction;
    let out = train_baseline(&data, &arch, &cfg)?;
    out.history.iter().for_each(print_round);
    if let Some(path) = a.curves {
        emit_curves(&path, &out.history)?;
    }
    Ok(())
}

fn fedmeta(a: FedmetaArgs) -> Result<()> {
    let (cfg, state, arch_name) = match &a.resume {
        Some(dir) => {
            let ck = load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
            if ck.arch != a.data.arch {
                bail!("checkpoint uses arch `{}` but `--arch {}` was given", ck.arch, a.data.arch);
            }
            let mut cfg = ck.config;
            if let Some(t) = a.rounds {
                if t < ck.state.round {
                    bail!("checkpoint is already at round {}, past --rounds {t}", ck.state.round);
                }
                cfg.rounds = t;
            }
            (cfg, Some(ck.state), ck.arch)
        }
        None => {
            let (Some(seed), Some(scenario)) = (a.seed, a.scenario) else {
                bail!("--seed and --scenario are required unless --resume is given");
            };
            let mut cfg = MetaConfig::new(scenario, seed);
            cfg.outer_lr = a.outer_lr;
            cfg.inner_lr = a.inner_lr;
            cfg.rounds = a.rounds.unwrap_or(50);
            cfg.local_epochs = a.local_epochs;
            cfg.clients_total = a.clients;
            cfg.clients_per_round = a.clients_per_round.unwrap_or(a.clients);
            cfg.aggregation = a.aggregation;
            cfg.batch_size = a.batch_size;
            cfg.support_fraction = a.support_fraction;
            cfg.test_fraction = a.test_fraction;
            (cfg, None, a.data.arch.clone())
        }
    };
    if a.checkpoint_every == 0 {
        bail!("--checkpoint-every must be at least 1");
    }
    let (arch, data) = a.data.load()?;
    let net = MultimodalNet::new(arch)?;
    let fed = build_federation(&data.samples, &cfg)?;
    let state = match state {
        Some(s) => {
            net.check_params(&s.theta)?;
            s
        }
        None => initial_state(&net, &fed, &cfg)?,
    };
    state.history.iter().for_each(print_round);

    let target = a.checkpoint.as_ref().or(a.resume.as_ref());
    let save = |s: &GlobalState| -> metafed::Result<()> {
        match target {
            Some(dir) => save_checkpoint(dir, s, &cfg, &arch_name),
            None => Ok(()),
        }
    };
    let every = a.checkpoint_every;
    let state = continue_3mf(&net, &fed, &cfg, state, |s| {
        if let Some(r) = s.last_report() {
            print_round(r);
        }
        if s.round % every == 0 {
            save(s)?;
        }
        Ok(())
    })?;
    save(&state)?;
    if let Some(path) = a.curves {
        emit_curves(&path, &state.history)?;
    }
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let grid = parse_config(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let source = match a.data {
        Some(path) => DataSource::Directory { path, align_seed: a.align_seed },
        None => grid.source.clone(),
    };
    log::info!("{} runs on {source}", grid.len());
    let summary = run_grid_opts(&grid, &source, &a.out, GridOptions { jobs: a.jobs })?;
    print!("{}", summary.to_text());
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let arch = ArchSpec::preset(&a.arch)?;
    let mut cfg = SynthConfig::new(a.per_class, a.noise, a.seed);
    cfg.image_scale = a.image_scale;
    let data = synth_generate(&arch, &cfg)?;
    save_dataset(&a.out, &data)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ck = load_checkpoint(&a.dir)?;
    let arch = ArchSpec::preset(&ck.arch)?;
    let net = MultimodalNet::new(arch.clone())?;
    let shapes_ok = net.check_params(&ck.state.theta).is_ok();
    println!("round: {}", ck.state.round);
    println!("arch: {} ({} parameters)", ck.arch, param_count(&arch)?);
    println!("parameters match arch: {shapes_ok}");
    println!("parameters finite: {}", ck.state.theta.is_finite());
    println!("config:");
    for (k, v) in ck.config.to_manifest().iter() {
        println!("  {k} = {v}");
    }
    if let Some(r) = ck.state.last_report() {
        print!("last ");
        print_round(r);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Baseline(a) => baseline(a),
        Command::Fedmeta(a) => fedmeta(a),
        Command::Grid(a) => grid(a),
        Command::SynthData(a) => synth_data(a),
        Command::InspectCheckpoint(a) => inspect(a),
    }
}
