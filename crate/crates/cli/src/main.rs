use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advlab_core::data::{save_dataset, Dataset, KernelFamily};
use advlab_core::experiment::{
    run_experiment, AttackGrid, CellKey, Defense, ExperimentConfig, ExperimentOutcome, ResultTable, TableFormat,
    RESULTS_JSON,
};
use advlab_core::Rational;
use advlab_tensor::DType;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Environment variable naming the directory that holds timestamped runs.
const OUTPUT_ROOT_ENV: &str = "ADVLAB_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(name = "advlab", version, about = "Adversarial robustness experiments for small restoration networks")]
struct Cli {
    /// Numeric precision of models, attacks and training.
    #[arg(long, global = true, value_parser = parse_dtype)]
    precision: Option<DType>,

    /// Exact run directory (otherwise a timestamped directory under $ADVLAB_OUTPUT_ROOT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default desk-scale config as TOML.
    DefaultConfig,
    /// Generate the synthetic blur dataset.
    GenData(GridArgs),
    /// Train every (variant, defense) in the grid and evaluate clean PSNR.
    Train(GridArgs),
    /// Attack saved checkpoints over the configured grid.
    Attack(GridArgs),
    /// Train, attack and tabulate the whole grid.
    Run(GridArgs),
    /// Render the result table of a finished run.
    Report(ReportArgs),
    /// Write the reconstruction panel of one attack cell.
    Panel(PanelArgs),
}

#[derive(Args, Clone, Default)]
struct GridArgs {
    /// TOML experiment config; defaults to the desk-scale grid.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Model initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_defense)]
    defenses: Vec<Defense>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Square image size.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_parser = parse_family)]
    family: Option<KernelFamily>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Replace the attack grid with one kind.
    #[arg(long)]
    attack: Option<String>,
    /// Radii such as `8/255,2/255`.
    #[arg(long, value_delimiter = ',', value_parser = parse_rational)]
    epsilons: Vec<Rational>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    iterations: Vec<usize>,
    /// Images per panel; 0 disables panels.
    #[arg(long)]
    panels: Option<usize>,
    #[arg(long)]
    eval_batch: Option<usize>,
    /// Directory of `<variant>__<defense>.ckpt` files to evaluate instead of training.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing results.json.
    run: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PanelArgs {
    /// Finished run directory with config.toml and models/.
    run: PathBuf,
    /// Cell key, e.g. `nafnet__none__cospgd__eps8-255__it20`.
    cell: String,
    /// Number of test images in the panel.
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    s.parse()
}

fn parse_defense(s: &str) -> std::result::Result<Defense, String> {
    s.parse().map_err(|e: advlab_core::CoreError| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<KernelFamily, String> {
    s.parse().map_err(|e: advlab_core::CoreError| e.to_string())
}

fn parse_rational(s: &str) -> std::result::Result<Rational, String> {
    s.parse().map_err(|e: advlab_core::CoreError| e.to_string())
}

impl GridArgs {
    fn config(&self, precision: Option<DType>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk_default(),
        };
        if let Some(p) = precision {
            cfg.precision = p;
        }
        if let Some(v) = &self.name {
            cfg.name.clone_from(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if !self.variants.is_empty() {
            cfg.variants.clone_from(&self.variants);
        }
        if !self.defenses.is_empty() {
            cfg.defenses.clone_from(&self.defenses);
        }
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.n_train {
            cfg.dataset.n_train = v;
        }
        if let Some(v) = self.n_test {
            cfg.dataset.n_test = v;
        }
        if let Some(v) = self.size {
            cfg.dataset.height = v;
            cfg.dataset.width = v;
        }
        if let Some(v) = self.family {
            cfg.dataset.family = v;
        }
        if let Some(v) = self.data_seed {
            cfg.dataset.seed = v;
        }
        if let Some(kind) = &self.attack {
            let template = cfg.attacks.first().cloned();
            cfg.attacks = vec![AttackGrid {
                kind: kind.clone(),
                epsilons: template.as_ref().map(|t| t.epsilons.clone()).unwrap_or_default(),
                alpha: template.as_ref().and_then(|t| t.alpha),
                iterations: template.map(|t| t.iterations).unwrap_or_default(),
            }];
        }
        for grid in &mut cfg.attacks {
            if !self.epsilons.is_empty() {
                grid.epsilons.clone_from(&self.epsilons);
            }
            if self.alpha.is_some() {
                grid.alpha = self.alpha;
            }
            if !self.iterations.is_empty() {
                grid.iterations.clone_from(&self.iterations);
            }
            if grid.kind == "fgsm" {
                grid.iterations = vec![1];
            }
        }
        if let Some(v) = self.panels {
            cfg.panels.samples = v;
        }
        if let Some(v) = self.eval_batch {
            cfg.eval_batch = v;
        }
        if self.checkpoint_dir.is_some() {
            cfg.checkpoint_dir.clone_from(&self.checkpoint_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_dir(out: Option<&Path>, cfg: &ExperimentConfig, verb: &str) -> PathBuf {
    if let Some(p) = out.or(cfg.output_dir.as_deref()) {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from);
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    root.join(format!("{}-{verb}-{stamp}", cfg.name))
}

fn finish(outcome: &ExperimentOutcome) -> ExitCode {
    println!("{}", outcome.table.render(TableFormat::Markdown));
    println!("run directory: {}", outcome.run_dir.display());
    let failed = outcome.manifest.failed_cells();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see manifest.json");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = Dataset::generate(&cfg.dataset)?;
    let manifest = save_dataset(dir, &data, Some(&cfg.dataset))?;
    println!(
        "{} train, {} val, {} test pairs written to {} ({} entries)",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        dir.display(),
        manifest.entries.len()
    );
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let path = args.run.join(RESULTS_JSON);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table: ResultTable = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let format = match args.format {
        Format::Csv => TableFormat::Csv,
        Format::Markdown => TableFormat::Markdown,
    };
    match &args.output {
        Some(p) => table.emit(format, p)?,
        None => print!("{}", table.render(format)),
    }
    Ok(())
}

fn panel(args: &PanelArgs, precision: Option<DType>, out: Option<&Path>) -> Result<ExitCode> {
    let key: CellKey = args.cell.parse()?;
    let Some(attack) = &key.attack else {
        bail!("`{}` is a clean cell; panels need an attack cell", args.cell);
    };
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let mut cfg = ExperimentConfig::load(&args.run.join("config.toml"))?;
    if let Some(p) = precision {
        cfg.precision = p;
    }
    let alpha = cfg.attacks.iter().find(|g| g.kind == attack.kind).and_then(|g| g.alpha);
    cfg.variants = vec![key.variant.clone()];
    cfg.defenses = vec![key.defense];
    cfg.attacks = vec![AttackGrid {
        kind: attack.kind.clone(),
        epsilons: vec![attack.epsilon],
        alpha: alpha.or(Some(attack.epsilon.value())),
        iterations: vec![attack.iterations],
    }];
    cfg.dataset.n_test = args.samples.min(cfg.dataset.n_test);
    cfg.panels.samples = args.samples;
    cfg.checkpoint_dir = Some(args.run.join("models"));
    cfg.validate()?;
    let dir = run_dir(out, &cfg, "panel");
    let outcome = run_experiment(&cfg, &dir)?;
    match outcome.manifest.cells.iter().find_map(|c| c.panel.as_ref()) {
        Some(p) => println!("{}", dir.join(p).display()),
        None => eprintln!("no panel was written"),
    }
    Ok(finish(&outcome))
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out = cli.out.as_deref();
    match &cli.command {
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::desk_default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenData(args) => {
            let cfg = args.config(cli.precision)?;
            gen_data(&cfg, &run_dir(out, &cfg, "data"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let mut cfg = args.config(cli.precision)?;
            cfg.attacks.clear();
            let dir = run_dir(out, &cfg, "train");
            Ok(finish(&run_experiment(&cfg, &dir)?))
        }
        Command::Attack(args) => {
            let cfg = args.config(cli.precision)?;
            if cfg.checkpoint_dir.is_none() {
                bail!("attack evaluates saved models; pass --checkpoint-dir (e.g. <train run>/models)");
            }
            if cfg.attacks.is_empty() {
                bail!("the attack grid is empty");
            }
            let dir = run_dir(out, &cfg, "attack");
            Ok(finish(&run_experiment(&cfg, &dir)?))
        }
        Command::Run(args) => {
            let cfg = args.config(cli.precision)?;
            let dir = run_dir(out, &cfg, "run");
            Ok(finish(&run_experiment(&cfg, &dir)?))
        }
        Command::Report(args) => {
            report(args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Panel(args) => panel(args, cli.precision, out),
    }
}
