mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use pointattn::numerics::{load_checkpoint, save_checkpoint, ParameterStore};
use pointattn::pipeline::{
    evaluate_scenes, format_table, run_ablation, sliding_window_predict, standard_variants, to_csv, train_on_scenes,
    Metrics, RecipeFile,
};
use pointattn::segnet::parse_psa_layers;
use pointattn::selfcheck::{run_selfcheck, PROPERTIES};
use pointattn::{load_cloud, save_labeled_cloud, CloudFormat, Error, PointCloud, SegNet};

use config::{schema_help, RunConfig};

/// Seeds per property in `selfcheck`.
const SELFCHECK_TRIALS: usize = 20;

#[derive(Parser)]
#[command(name = "pointattn", version, about = "Train and run attention-based point cloud segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on labeled clouds or synthetic scenes and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled scene.
    Eval(EvalArgs),
    /// Label a scene and write a colored cloud.
    Predict(PredictArgs),
    /// Train and score every search and attention variant.
    Ablate(AblateArgs),
    /// Run the invariant suite.
    Selfcheck(SelfcheckArgs),
}

/// Flags that override config keys.
#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `stride`
    #[arg(long)]
    stride: Option<f64>,
    /// Overrides `psa_layers`, e.g. 3,4,5 or 2-6 or none
    #[arg(long = "psa-layers")]
    psa_layers: Option<String>,
    /// Overrides `search`
    #[arg(long, value_parser = ["knn", "ball", "multidir"])]
    search: Option<String>,
    /// Overrides `points_per_bin`
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled clouds (.xyzrgbl); overrides `data`
    data: Vec<PathBuf>,
    /// Synthetic recipe used when no data is given; overrides `recipe`
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Overrides `epochs`
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint to write; the loss curve and config go next to it
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Labeled scene
    scene: PathBuf,
    /// Write per-class results as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PredictArgs {
    checkpoint: PathBuf,
    scene: PathBuf,
    /// Labeled cloud to write (x y z r g b label)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AblateArgs {
    /// Training recipe; overrides `recipe`
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Test recipe; overrides `test_recipe` (defaults to the training
    /// recipe with different seeds)
    #[arg(long = "test-recipe")]
    test_recipe: Option<PathBuf>,
    /// Overrides `epochs`
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the results table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Seeds per property
    #[arg(long, default_value_t = SELFCHECK_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_SELFCHECK: u8 = 4;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::Config(_) | Error::Checkpoint(_) | Error::Shape { .. } | Error::TooManyPoints { .. } => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        fail(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn config_error(e: Error) -> Failure {
    fail(EXIT_CONFIG, e.to_string())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_config(o: &Overrides, fallback: Option<PathBuf>) -> Result<RunConfig, Failure> {
    let mut cfg = match o.config.clone().or(fallback) {
        Some(p) => RunConfig::load(&p).map_err(config_error)?,
        None => RunConfig::default(),
    };
    let here = Path::new(".");
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = o.stride {
        cfg.set("stride", &s.to_string(), here).map_err(config_error)?;
    }
    if let Some(p) = &o.psa_layers {
        cfg.network.psa_layers = parse_psa_layers(p).map_err(config_error)?;
    }
    if let Some(s) = &o.search {
        cfg.set("search", s, here).map_err(config_error)?;
    }
    if let Some(m) = o.m {
        cfg.network.points_per_bin = m;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn load_scene(path: &Path) -> Result<PointCloud, Failure> {
    let format = CloudFormat::from_path(path).ok_or_else(|| {
        fail(
            EXIT_DATA,
            format!("{}: unknown cloud format (use .xyz, .xyzrgb or .xyzrgbl)", path.display()),
        )
    })?;
    Ok(load_cloud(path, format)?)
}

fn load_recipe_scenes(path: &Path, seed: u64) -> Result<Vec<PointCloud>, Failure> {
    let recipe = RecipeFile::load(path).map_err(|e| match e {
        Error::Io { .. } => fail(EXIT_DATA, e.to_string()),
        other => config_error(other),
    })?;
    Ok(recipe.generate_all(seed)?)
}

/// Loads a checkpoint with the network described by `cfg`, reporting class
/// count mismatches explicitly.
fn load_network(path: &Path, cfg: &RunConfig) -> Result<(SegNet, ParameterStore), Failure> {
    let loaded = load_checkpoint(path).map_err(|e| match e {
        Error::Io { .. } => fail(EXIT_DATA, e.to_string()),
        other => config_error(other),
    })?;
    if let Some(id) = loaded.id("head.bias") {
        let classes = loaded.value(id).cols();
        if classes != cfg.network.num_classes {
            return Err(fail(
                EXIT_CONFIG,
                format!(
                    "checkpoint has {classes} classes but the config has num_classes = {}",
                    cfg.network.num_classes
                ),
            ));
        }
    }
    SegNet::from_checkpoint(cfg.network.clone(), &loaded).map_err(config_error)
}

fn metrics_table(m: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OA    {:.2}", m.overall_accuracy);
    let _ = writeln!(s, "mIoU  {:.2}", m.mean_iou);
    for (c, iou) in m.class_iou.iter().enumerate() {
        match iou {
            Some(v) => {
                let _ = writeln!(s, "class {c:<3} IoU {:.2}", 100.0 * v);
            }
            None => {
                let _ = writeln!(s, "class {c:<3} IoU -");
            }
        }
    }
    s
}

fn metrics_csv(m: &Metrics) -> String {
    let mut s = String::from("metric,class,value\n");
    let _ = writeln!(s, "oa,,{:.6}", m.overall_accuracy);
    let _ = writeln!(s, "miou,,{:.6}", m.mean_iou);
    for (c, iou) in m.class_iou.iter().enumerate() {
        let v = iou.map_or(String::new(), |v| format!("{:.6}", 100.0 * v));
        let _ = writeln!(s, "iou,{c},{v}");
    }
    s
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| fail(EXIT_DATA, format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = build_config(&args.overrides, None)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if !args.data.is_empty() {
        cfg.data = args.data.clone();
    }
    if let Some(r) = &args.recipe {
        cfg.recipe = Some(r.clone());
    }
    let scenes = if !cfg.data.is_empty() {
        cfg.data.iter().map(|p| load_scene(p)).collect::<Result<Vec<_>, _>>()?
    } else if let Some(r) = &cfg.recipe {
        load_recipe_scenes(r, cfg.train.seed)?
    } else {
        return Err(fail(EXIT_DATA, "no training data: pass clouds or --recipe"));
    };
    for (i, s) in scenes.iter().enumerate() {
        if s.labels().is_none() {
            return Err(fail(EXIT_DATA, format!("training scene {i} has no labels")));
        }
        s.validate_labels(cfg.network.num_classes)?;
    }

    let (net, mut store) = SegNet::init(cfg.network.clone(), cfg.train.seed)?;
    let mut curve = String::from("epoch,loss\n");
    let losses = train_on_scenes(&net, &mut store, &scenes, &cfg.blocks, &cfg.train, |epoch, loss, _| {
        println!("epoch {epoch:>4}  loss {loss:.6}");
        let _ = writeln!(curve, "{epoch},{loss:.9}");
    })?;

    save_checkpoint(&store, &args.out)?;
    write_file(&sidecar(&args.out, ".config"), &cfg.to_kv())?;
    write_file(&sidecar(&args.out, ".loss.csv"), &curve)?;

    let metrics = evaluate_scenes(&net, &store, &scenes, &cfg.blocks, cfg.train.seed)?;
    println!("final loss {:.6}", losses.last().copied().unwrap_or(f64::NAN));
    println!("training scenes:");
    print!("{}", metrics_table(&metrics));
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let cfg = build_config(&args.overrides, existing(sidecar(&args.checkpoint, ".config")))?;
    let (net, store) = load_network(&args.checkpoint, &cfg)?;
    let scene = load_scene(&args.scene)?;
    if scene.labels().is_none() {
        return Err(fail(EXIT_DATA, format!("{}: scene has no labels", args.scene.display())));
    }
    let metrics = evaluate_scenes(&net, &store, std::slice::from_ref(&scene), &cfg.blocks, cfg.train.seed)?;
    print!("{}", metrics_table(&metrics));
    if let Some(out) = &args.out {
        write_file(out, &metrics_csv(&metrics))?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CmdResult {
    let cfg = build_config(&args.overrides, existing(sidecar(&args.checkpoint, ".config")))?;
    let (net, store) = load_network(&args.checkpoint, &cfg)?;
    let scene = load_scene(&args.scene)?;
    let pred = sliding_window_predict(&scene, &cfg.blocks, &net, &store, cfg.train.seed)?;
    save_labeled_cloud(&scene, &pred.labels, &args.out)?;
    println!("labeled {} points -> {}", pred.num_points(), args.out.display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CmdResult {
    let mut cfg = build_config(&args.overrides, None)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let train_recipe = args
        .recipe
        .or(cfg.recipe.clone())
        .ok_or_else(|| fail(EXIT_DATA, "ablate needs --recipe"))?;
    let seed = cfg.train.seed;
    let train = load_recipe_scenes(&train_recipe, seed)?;
    let test = match args.test_recipe.or(cfg.test_recipe.clone()) {
        Some(p) => load_recipe_scenes(&p, seed.wrapping_add(1_000_000))?,
        None => load_recipe_scenes(&train_recipe, seed.wrapping_add(1_000_000))?,
    };
    let variants = standard_variants();
    let rows = run_ablation(&variants, &cfg.network, &train, &test, &cfg.blocks, &cfg.train)?;
    print!("{}", format_table(&rows));
    if let Some(out) = &args.out {
        write_file(out, &to_csv(&rows))?;
    }
    Ok(())
}

fn cmd_selfcheck(args: SelfcheckArgs) -> CmdResult {
    let run = || run_selfcheck(args.trials, args.seed);
    // Test hook: a deliberately broken softmax must make the suite fail.
    let results = if std::env::var("POINTATTN_SELFCHECK_FAULT").as_deref() == Ok("softmax") {
        pointattn::numerics::kernels::with_softmax_fault(run)
    } else {
        run()
    };
    debug_assert_eq!(results.len(), PROPERTIES.len());
    let mut failed = Vec::new();
    for r in &results {
        match &r.failure {
            None => println!("PASS  {}  ({} trials)", r.name, r.trials),
            Some(msg) => {
                println!("FAIL  {}  {msg}", r.name);
                failed.push(r.name);
            }
        }
    }
    if failed.is_empty() {
        println!("{} properties passed", results.len());
        Ok(())
    } else {
        Err(fail(EXIT_SELFCHECK, format!("failed properties: {}", failed.join(", "))))
    }
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

fn command() -> clap::Command {
    let keys = schema_help();
    let mut cmd = Cli::command();
    for sub in ["train", "eval", "predict", "ablate"] {
        cmd = cmd.mut_subcommand(sub, |s| s.after_help(keys.clone()));
    }
    cmd
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POINTATTN_LOG", "warn")).init();
    let cli = match Cli::from_arg_matches(&command().get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
