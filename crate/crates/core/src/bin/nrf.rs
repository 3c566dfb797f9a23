//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrf::datasets::NormalizeMode;
use nrf::harness::{
    emit_report, fit_and_score, load_dataset, load_features, run_ablation, save_features, DatasetSpec, ExperimentConfig,
    ExperimentData, ProbeSettings, ReportFormat,
};
use nrf::numfmt::format_sig6;
use nrf::probe::{
    class_cosine, predict_proba, read_probe, top_bottom_classes, write_proba_csv, write_probe,
    DesignMatrix,
};
use nrf::{estimate_kernel, extract_features, ArchitectureSpec, Error, Preset, Result, Tensor};

#[derive(Parser)]
#[command(name = "nrf", version, about = "Random features from randomly initialized networks")]
struct Cli {
    /// Directory holding dataset files.
    #[arg(long, global = true, env = "NRF_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a dataset with n random networks and write feature caches.
    Extract(ExtractArgs),
    /// Estimate the prior kernel between two examples.
    Kernel(KernelArgs),
    /// Train a linear probe on cached features.
    Probe(ProbeArgs),
    /// Run an ablation grid from a config file.
    Ablate(AblateArgs),
    /// Cosine similarity between the class weights of a probe.
    Cosine(CosineArgs),
    /// Class probabilities of a probe on cached features.
    Proba(ProbaArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Experiment config whose dataset section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cifar10, cifar100 or mnist (ignored with --config).
    #[arg(long, default_value = "cifar10")]
    dataset: String,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
}

impl DataArgs {
    fn spec(&self) -> Result<DatasetSpec> {
        if let Some(path) = &self.config {
            return Ok(ExperimentConfig::load(path)?.dataset);
        }
        if self.dataset == "blobs" {
            return Err(Error::Config("synthetic blobs need a --config".into()));
        }
        Ok(DatasetSpec {
            name: self.dataset.clone(),
            dir: None,
            cifar100_labels: Default::default(),
            blobs: None,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            subsample_seed: 0,
            normalize: NormalizeMode::default(),
        })
    }
}

#[derive(Args)]
struct ArchArgs {
    /// Preset name (linear, mlp, cnn_s, cnn_m, lenet, resnet18_cifar, resnetNN)
    /// or a path to an architecture JSON file.
    #[arg(long, default_value = "cnn_s")]
    arch: String,
}

impl ArchArgs {
    fn spec(&self) -> Result<ArchitectureSpec> {
        let path = Path::new(&self.arch);
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(path)?;
            return serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()));
        }
        nrf::make_architecture(Preset::parse(&self.arch)?, Default::default())
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes `<out>.train.nrf` and `<out>.test.nrf`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Index of the first training example.
    #[arg(long)]
    i: usize,
    /// Index of the second training example.
    #[arg(long)]
    j: usize,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Prefix given to `extract --out`.
    #[arg(long)]
    features: PathBuf,
    /// Regularization grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    l2: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trained probe.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; defaults to `report.<format>` in the config's output dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CosineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Similarity matrix CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Length of the top and bottom lists.
    #[arg(long, default_value_t = 2)]
    count: usize,
}

#[derive(Args)]
struct ProbaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Feature cache file (one of the `extract` outputs).
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn extract(cli: &Cli, args: &ExtractArgs) -> Result<()> {
    let (train, test) = load_dataset(&args.data.spec()?, cli.data_dir.as_deref())?;
    let arch = args.arch.spec()?;
    for (split, name) in [(&train, "train"), (&test, "test")] {
        let features = extract_features(&arch, split.images(), args.n, args.seed)?;
        let path = with_suffix(&args.out, &format!(".{name}.nrf"));
        save_features(&features, split.fingerprint(), &path)?;
        eprintln!("wrote {} ({} x {})", path.display(), features.rows(), features.cols());
    }
    Ok(())
}

fn kernel(cli: &Cli, args: &KernelArgs) -> Result<()> {
    let (train, _) = load_dataset(&args.data.spec()?, cli.data_dir.as_deref())?;
    for &i in [args.i, args.j].iter() {
        if i >= train.len() {
            return Err(Error::InvalidArgument(format!("index {i} out of range for {} examples", train.len())));
        }
    }
    let arch = args.arch.spec()?;
    let item = |i: usize| Tensor::new(train.image_shape().to_vec(), train.images().item(i).to_vec());
    let (x, x2) = (item(args.i)?, item(args.j)?);
    let est = estimate_kernel(&arch, &x, &x2, args.n, args.seed)?;
    let text = match args.format {
        ReportFormat::Csv => format!(
            "i,j,n,kernel,variance,std_error\n{},{},{},{},{},{}\n",
            args.i,
            args.j,
            est.n,
            format_sig6(est.value),
            format_sig6(est.variance),
            format_sig6(est.standard_error())
        ),
        ReportFormat::Json => format!(
            "{}\n",
            serde_json::json!({
                "i": args.i, "j": args.j, "n": est.n, "kernel": est.value,
                "variance": est.variance, "std_error": est.standard_error(),
            })
        ),
    };
    write_or_print(None, &text)
}

fn probe(cli: &Cli, args: &ProbeArgs) -> Result<()> {
    let (train, test) = load_dataset(&args.data.spec()?, cli.data_dir.as_deref())?;
    let (ftrain, _) = load_features(&with_suffix(&args.features, ".train.nrf"), Some(train.fingerprint()))?;
    let (ftest, _) = load_features(&with_suffix(&args.features, ".test.nrf"), Some(test.fingerprint()))?;
    if ftrain.manifest() != ftest.manifest() {
        return Err(Error::InvalidArgument("train and test caches come from different networks".into()));
    }
    let mut settings = ProbeSettings::default();
    if let Some(grid) = &args.l2 {
        settings.l2_grid = grid.clone();
    }
    let outcome = fit_and_score(
        &DesignMatrix::from_features(&ftrain),
        train.labels(),
        &DesignMatrix::from_features(&ftest),
        test.labels(),
        train.classes(),
        &settings,
        args.seed,
    )?;
    println!(
        "train_acc={} test_acc={} best_l2={}",
        format_sig6(outcome.train_acc),
        format_sig6(outcome.test_acc),
        format_sig6(outcome.best_l2)
    );
    if let Some(out) = &args.out {
        write_probe(&outcome.model, fs::File::create(out)?)?;
    }
    Ok(())
}

fn ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    let data = ExperimentData::load(&config, cli.data_dir.as_deref())?;
    let report = run_ablation(&config, &data)?;
    let ext = match args.format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let out = match (&args.out, &config.output_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            fs::create_dir_all(dir)?;
            dir.join(format!("report.{ext}"))
        }
        (None, None) => PathBuf::from(format!("report.{ext}")),
    };
    emit_report(&report, args.format, &out)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!("wrote {} ({} rows, {failed} failed)", out.display(), report.rows.len());
    Ok(())
}

fn cosine(args: &CosineArgs) -> Result<()> {
    let model = read_probe(fs::File::open(&args.model)?)?;
    let c = class_cosine(&model)?;
    let mut text = String::new();
    for i in 0..c.rows() {
        let row: Vec<String> = c.row(i).iter().map(|&v| format_sig6(v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_or_print(args.out.as_deref(), &text)?;
    for class in 0..c.rows() {
        let (top, bottom) = top_bottom_classes(&c, class, args.count)?;
        eprintln!("class {class}: top {top:?} bottom {bottom:?}");
    }
    Ok(())
}

fn proba(cli: &Cli, args: &ProbaArgs) -> Result<()> {
    let model = read_probe(fs::File::open(&args.model)?)?;
    let (features, _) = load_features(&args.features, None)?;
    let names = match args.data.spec() {
        Ok(spec) if args.data.config.is_some() || cli.data_dir.is_some() => {
            load_dataset(&spec, cli.data_dir.as_deref())?.0.class_names().to_vec()
        }
        _ => (0..model.classes()).map(|c| format!("class_{c}")).collect(),
    };
    let p = predict_proba(&model, &DesignMatrix::from_features(&features))?;
    let mut buf = Vec::new();
    write_proba_csv(&p, &names, &mut buf)?;
    write_or_print(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Extract(a) => extract(cli, a),
        Command::Kernel(a) => kernel(cli, a),
        Command::Probe(a) => probe(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Cosine(a) => cosine(a),
        Command::Proba(a) => proba(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
