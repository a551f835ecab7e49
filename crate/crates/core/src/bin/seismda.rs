use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use seismda::adapt::{predict, train_variant, PhyMdanModel, TrainConfig, Variant};
use seismda::error::{Error, Result, StageExt};
use seismda::harness::{
    building_scales, comparison_csv, lambda_sweep, physics_weights, prepare_domains,
    response_stats, run_experiment, sanitize, stats_csv, sweep_csv, ExperimentConfig,
    MetricsReport,
};
use seismda::physweights::{weight_report, PhysicalProperties, Property};
use seismda::quakesim::{export_records, generate_with_specs, import_records};
use seismda::sigprep::{assemble_dataset, read_dataset, write_dataset, Dataset};

#[derive(Parser)]
#[command(
    name = "seismda",
    version,
    about = "Seismic damage diagnosis with physics-guided domain adaptation"
)]
struct Cli {
    /// Experiment config (.toml or .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured training seeds with this one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate building responses and export them as CSV records.
    Simulate(SimulateArgs),
    /// Turn exported records into a dataset file of stacked spectra.
    Preprocess(PreprocessArgs),
    /// Physics-guided source weights.
    Weights(WeightsArgs),
    /// Train one variant on dataset files.
    Train(TrainArgs),
    /// Score a saved model on a labeled dataset file.
    Evaluate(EvaluateArgs),
    /// Sweep the adversarial weight over the configured grid.
    Sweep,
    /// Run every configured variant and seed and compare them.
    Compare,
    /// Peak response statistics per scale factor.
    Stats(StatsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Buildings to simulate (default: target and sources).
    #[arg(long, value_delimiter = ',')]
    building: Vec<String>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    records: PathBuf,
    /// Domain id (default: the building id in the manifest).
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Args)]
struct WeightsArgs {
    /// JSON array of building properties (default: the configured fleet).
    #[arg(long)]
    properties: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "H")]
    props: String,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "phymdan")]
    variant: String,
    /// Source dataset files.
    #[arg(long, value_delimiter = ',', required = true)]
    sources: Vec<PathBuf>,
    /// Target dataset file; its labels are not read unless the variant is
    /// supervised on the target.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Explicit source weights (default: physics weights from the config
    /// fleet, matched by domain id).
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    records: PathBuf,
    /// 1-based story (default: the configured story).
    #[arg(long)]
    story: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
        cfg.train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>> {
    match &cli.out {
        Some(p) => {
            fs::create_dir_all(p)?;
            Ok(Some(p.as_path()))
        }
        None => Ok(None),
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let out = out_dir(cli)?.ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    let ids = if args.building.is_empty() {
        let mut ids = cfg.source_ids();
        ids.push(cfg.target.clone());
        ids
    } else {
        args.building.clone()
    };
    let motions = cfg.motions.generate()?;
    println!("building,records,directory");
    for id in ids {
        let b = cfg.building(&id)?;
        let scales = building_scales(&cfg, b, &motions)?;
        let spec = b.spec()?;
        let pairs = generate_with_specs(&spec, &motions, &scales)?;
        let (specs, records): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let dir = out.join(sanitize(&id));
        export_records(&dir, &spec, &specs, &records)?;
        info!("{id}: {} records", records.len());
        println!("{id},{},{}", records.len(), dir.display());
    }
    Ok(())
}

fn preprocess(cli: &Cli, args: &PreprocessArgs) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let (manifest, records) = import_records(&args.records)?;
    let domain = args.domain.clone().unwrap_or(manifest.building.id.clone());
    let ds = assemble_dataset(&records, cfg.story, cfg.task, &domain, &cfg.prep)?;
    let path = out_dir(cli)?
        .unwrap_or(Path::new("."))
        .join(format!("{}.dataset.csv", sanitize(&domain)));
    write_dataset(&path, &ds, cfg.prep.f_max)?;
    let hist: Vec<String> = ds.histogram().iter().map(ToString::to_string).collect();
    println!("domain,samples,class_counts,file");
    println!(
        "{domain},{},{},{}",
        ds.len(),
        hist.join(" "),
        path.display()
    );
    Ok(())
}

fn weights(cli: &Cli, args: &WeightsArgs) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let props = Property::parse_list(&args.props)?;
    let eps = args.eps.unwrap_or(cfg.eps);
    let report = match &args.properties {
        Some(path) => {
            let all: Vec<PhysicalProperties> = serde_json::from_str(&fs::read_to_string(path)?)?;
            let target_id = args.target.clone().unwrap_or(cfg.target.clone());
            let target = all.iter().find(|p| p.id == target_id).ok_or_else(|| {
                Error::arg(format!("target {target_id:?} not in {}", path.display()))
            })?;
            let sources: Vec<PhysicalProperties> =
                all.iter().filter(|p| p.id != target_id).cloned().collect();
            weight_report(&sources, target, &props, eps)?
        }
        None => {
            let cfg = ExperimentConfig {
                target: args.target.clone().unwrap_or(cfg.target.clone()),
                weight_properties: props,
                eps,
                ..cfg
            };
            let cfg = if args.target.is_some() {
                ExperimentConfig {
                    sources: Vec::new(),
                    ..cfg
                }
            } else {
                cfg
            };
            physics_weights(&cfg)?
        }
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out_dir(cli)? {
        fs::write(dir.join("weights.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn load_datasets(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths.iter().map(|p| Ok(read_dataset(p)?.0)).collect()
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let variant: Variant = args.variant.parse()?;
    let sources = load_datasets(&args.sources).stage("load")?;
    let target = match &args.target {
        Some(p) => Some(read_dataset(p).stage("load")?.0),
        None => None,
    };
    let weights = if !args.weights.is_empty() {
        args.weights.clone()
    } else if variant == Variant::Phymdan {
        let wcfg = ExperimentConfig {
            target: target
                .as_ref()
                .map_or(cfg.target.clone(), |t| t.domain.clone()),
            sources: sources.iter().map(|s| s.domain.clone()).collect(),
            ..cfg.clone()
        };
        physics_weights(&wcfg).stage("weights")?.combined.weights
    } else {
        Vec::new()
    };
    let tcfg = TrainConfig {
        lambda: args.lambda.unwrap_or(cfg.train.lambda),
        epochs: args.epochs.unwrap_or(cfg.train.epochs),
        seed: cli.seed.unwrap_or(cfg.train.seed),
        ..cfg.train.clone()
    };
    let w = (!weights.is_empty()).then_some(weights.as_slice());
    let outcome = train_variant(variant, &sources, target.as_ref(), w, &tcfg).stage("train")?;
    let out = out_dir(cli)?.unwrap_or(Path::new("."));
    println!("run,epochs,final_objective,target_label_reads,model");
    for run in &outcome.runs {
        let stem = sanitize(&run.name);
        let model_path = out.join(format!("{stem}.model"));
        run.model
            .save(BufWriter::new(fs::File::create(&model_path)?))?;
        run.log.write_jsonl(BufWriter::new(fs::File::create(
            out.join(format!("{stem}.jsonl")),
        )?))?;
        let last = run.log.last().map_or(f64::NAN, |e| e.objective);
        println!(
            "{},{},{},{},{}",
            run.name,
            run.log.epochs.len(),
            last,
            run.target_label_reads,
            model_path.display()
        );
    }
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let model = PhyMdanModel::load(BufReader::new(fs::File::open(&args.model)?)).stage("load")?;
    let (ds, _) = read_dataset(&args.dataset).stage("load")?;
    let (preds, _) = predict(&model, &ds.inputs()).stage("evaluate")?;
    let name = args
        .model
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let report = MetricsReport::new(
        name,
        name,
        cli.seed.unwrap_or(0),
        &preds,
        &ds.labels(),
        model.num_classes,
    )
    .stage("evaluate")?;
    if let Some(dir) = out_dir(cli)? {
        fs::write(
            dir.join(format!("{}.json", sanitize(name))),
            serde_json::to_string_pretty(&report)?,
        )?;
        fs::write(
            dir.join(format!("{}_confusion.csv", sanitize(name))),
            report.confusion_csv(),
        )?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn sweep(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let domains = prepare_domains(&cfg)?;
    let rows = lambda_sweep(&cfg, &domains)?;
    let csv = sweep_csv(&rows);
    if let Some(dir) = out_dir(cli)? {
        fs::write(dir.join("sweep.csv"), &csv)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    }
    print!("{csv}");
    Ok(())
}

fn compare(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let out = run_experiment(&cfg)?;
    print!("{}", comparison_csv(&out.report.summary));
    Ok(())
}

fn stats(cli: &Cli, args: &StatsArgs) -> Result<()> {
    let cfg = load_config(cli).stage("config")?;
    let (_, records) = import_records(&args.records).stage("load")?;
    let table = stats_csv(&response_stats(&records, args.story.unwrap_or(cfg.story))?);
    if let Some(dir) = out_dir(cli)? {
        fs::write(dir.join("stats.csv"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a).stage("simulate"),
        Command::Preprocess(a) => preprocess(cli, a).stage("preprocess"),
        Command::Weights(a) => weights(cli, a).stage("weights"),
        Command::Train(a) => train_cmd(cli, a).stage("train"),
        Command::Evaluate(a) => evaluate(cli, a).stage("evaluate"),
        Command::Sweep => sweep(cli).stage("sweep"),
        Command::Compare => compare(cli).stage("compare"),
        Command::Stats(a) => stats(cli, a).stage("stats"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seismda: {e}");
            ExitCode::FAILURE
        }
    }
}
