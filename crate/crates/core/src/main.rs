use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use circuit_em::data::{load_dataset, patchify, save_dataset, DataFormat, ImageBatch, YccMode};
use circuit_em::format::{deserialize, serialize};
use circuit_em::inference::dataset_log_likelihood;
use circuit_em::normalize::renormalize;
use circuit_em::optim::{metrics_csv, train_loop, Optimizer, TrainConfig};
use circuit_em::structure::{self, CategoricalMixture, RandomSpec, StructureSpec, DEFAULT_CONCENTRATION};
use circuit_em::{Circuit, Error, ParamVector, Params};

#[derive(Parser)]
#[command(name = "circuit-em", version, about = "Probabilistic circuits with EM parameter learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check smoothness, decomposability and alternation.
    Validate { circuit: PathBuf },
    /// Learn parameters and write metrics and a checkpoint.
    Train(TrainArgs),
    /// Mean log-likelihood and bits per variable on a dataset.
    Eval { circuit: PathBuf, data: PathBuf },
    /// Rewrite parameters so every node is normalized.
    Renorm { input: PathBuf, output: PathBuf },
    /// Build a circuit with initialized parameters.
    Build(BuildArgs),
    /// Turn raw RGB images into a dataset of YCC patch pixels.
    Patchify(PatchifyArgs),
    /// Sample a dataset from a random categorical mixture.
    GenMixture(GenMixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    FullEm,
    MiniEm,
    MiniEmBaseline,
    Sgd,
    Adam,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::FullEm => Optimizer::FullEm,
            OptimizerArg::MiniEm => Optimizer::MiniEmProposed,
            OptimizerArg::MiniEmBaseline => Optimizer::MiniEmBaseline,
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mini-em")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.4)]
    alpha_start: f64,
    #[arg(long, default_value_t = 0.08)]
    alpha_end: f64,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.0)]
    pseudocount: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
    /// Learning rate for sgd and adam.
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Record metrics every N updates instead of once per epoch.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Replace the file's parameters with a seeded Dirichlet draw.
    #[arg(long)]
    reinit: bool,
    /// Metrics CSV path; stdout if omitted.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Raw,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::Raw => DataFormat::Raw,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(subcommand)]
    kind: BuildKind,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BuildKind {
    /// One of c1, c2, g1.
    Fixture { name: String },
    Random {
        #[arg(long)]
        num_vars: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        sum_fanout: usize,
        #[arg(long, default_value_t = 2)]
        cardinality: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Clt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        hidden_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct PatchifyArgs {
    /// Concatenated height x width x 3 byte images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Use the luma offset exactly as printed (y lands in [1, 3]).
    #[arg(long)]
    ycc_as_printed: bool,
    #[arg(long, value_enum, default_value = "raw")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenMixtureArgs {
    #[arg(long, default_value_t = 8)]
    components: usize,
    #[arg(long, default_value_t = 16)]
    num_vars: usize,
    #[arg(long, default_value_t = 2)]
    cardinality: u32,
    #[arg(long, default_value_t = 0.5)]
    concentration: f64,
    #[arg(long)]
    rows: usize,
    /// Seed of the mixture itself.
    #[arg(long, default_value_t = 0)]
    mixture_seed: u64,
    /// Seed of the sampler.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    /// Exit status 1: the input is well-formed but the operation cannot succeed on it.
    Domain(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotNormalized => {
                Failure::Domain(format!("{e}; run `circuit-em renorm <in> <out>` first"))
            }
            Error::DegeneratePartition { .. } | Error::ZeroLikelihood { .. } | Error::TooLarge(_) => {
                Failure::Domain(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn read_circuit(path: &Path) -> Result<(Circuit, ParamVector), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    deserialize(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let (circuit, _) = read_circuit(path)?;
    let report = circuit.validate();
    print!("{report}");
    if report.ok() {
        Ok(())
    } else {
        Err(Failure::Domain(format!("{} violation(s)", report.violations.len())))
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let (circuit, mut params) = read_circuit(&args.circuit)?;
    let train = load_dataset(&args.data, None)?;
    let valid = args.valid.as_ref().map(|p| load_dataset(p, None)).transpose()?;
    let cfg = TrainConfig {
        optimizer: args.optimizer.into(),
        alpha_start: args.alpha_start,
        alpha_end: args.alpha_end,
        batch_size: args.batch_size,
        eta: args.eta,
        pseudocount: args.pseudocount,
        epochs: args.epochs,
        seed: args.seed,
        deterministic: args.deterministic,
        lr: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        eps: args.eps,
        eval_every: args.eval_every,
    };
    cfg.validate()?;
    if args.reinit {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        params = Params::dirichlet(&circuit, DEFAULT_CONCENTRATION, &mut rng)?;
    }
    let outcome = train_loop(&circuit, &params, &train, valid.as_ref(), &cfg)?;
    emit(args.metrics_out.as_deref(), &metrics_csv(&outcome.metrics))?;
    if let Some(p) = &args.checkpoint_out {
        write_file(p, serialize(&circuit, &outcome.params).as_bytes())?;
    }
    Ok(())
}

fn cmd_eval(circuit_path: &Path, data_path: &Path) -> Result<(), Failure> {
    let (circuit, params) = read_circuit(circuit_path)?;
    let data = load_dataset(data_path, None)?;
    if data.is_empty() {
        return Err(Failure::Usage(format!("{}: dataset is empty", data_path.display())));
    }
    data.check_against(&circuit)?;
    params.require_normalized()?;
    let ll = dataset_log_likelihood(&circuit, &params, &data)?;
    let bpv = -ll / (circuit.num_vars() as f64 * std::f64::consts::LN_2);
    println!("mean_ll {ll:.6}");
    println!("bits_per_var {bpv:.6}");
    Ok(())
}

fn cmd_renorm(input: &Path, output: &Path) -> Result<(), Failure> {
    let (circuit, params) = read_circuit(input)?;
    let q = renormalize(&circuit, &params)?;
    write_file(output, serialize(&circuit, &q).as_bytes())
}

fn cmd_build(args: &BuildArgs) -> Result<(), Failure> {
    let (spec, data) = match &args.kind {
        BuildKind::Fixture { name } => (StructureSpec::Fixture { name: name.clone() }, None),
        BuildKind::Random { num_vars, depth, sum_fanout, cardinality, seed } => (
            StructureSpec::Random(RandomSpec {
                num_vars: *num_vars,
                depth: *depth,
                sum_fanout: *sum_fanout,
                cardinality: *cardinality,
                seed: *seed,
            }),
            None,
        ),
        BuildKind::Clt { data, hidden_size, seed } => {
            (StructureSpec::Clt { hidden_size: *hidden_size, seed: *seed }, Some(load_dataset(data, None)?))
        }
    };
    let (circuit, params) = structure::build::<f64>(&spec, data.as_ref())?;
    emit(args.out.as_deref(), &serialize(&circuit, &params))
}

fn cmd_patchify(args: &PatchifyArgs) -> Result<(), Failure> {
    let bytes = fs::read(&args.input).map_err(|e| Failure::Usage(format!("{}: {e}", args.input.display())))?;
    let per_image = args.height * args.width * 3;
    if per_image == 0 || bytes.len() % per_image != 0 {
        return Err(Failure::Usage(format!(
            "{} bytes is not a whole number of {}x{}x3 images",
            bytes.len(),
            args.height,
            args.width
        )));
    }
    let images = ImageBatch::new(bytes.len() / per_image, args.height, args.width, bytes)?;
    let mode = if args.ycc_as_printed { YccMode::LiteralOffset } else { YccMode::Centered };
    let data = patchify(&images, args.patch, mode)?;
    save_dataset(&args.out, &data, args.format.into())?;
    Ok(())
}

fn cmd_gen_mixture(args: &GenMixtureArgs) -> Result<(), Failure> {
    if args.components == 0 || args.num_vars == 0 || args.cardinality == 0 || !(args.concentration > 0.0) {
        return Err(Failure::Usage("components, num-vars, cardinality and concentration must be positive".into()));
    }
    let mix = CategoricalMixture::random(args.components, args.num_vars, args.cardinality, args.concentration, args.mixture_seed);
    save_dataset(&args.out, &mix.sample(args.rows, args.seed), args.format.into())?;
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CIRCUIT_EM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("CIRCUIT_EM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Validate { circuit } => cmd_validate(circuit),
        Command::Train(args) => cmd_train(args),
        Command::Eval { circuit, data } => cmd_eval(circuit, data),
        Command::Renorm { input, output } => cmd_renorm(input, output),
        Command::Build(args) => cmd_build(args),
        Command::Patchify(args) => cmd_patchify(args),
        Command::GenMixture(args) => cmd_gen_mixture(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
