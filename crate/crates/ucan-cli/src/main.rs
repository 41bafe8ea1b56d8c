//! Command-line pipeline: noise generation, dataset composition, training,
//! evaluation, the linear oracle, field-statistics verification, gradient
//! checking, and the full experiment grid.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 numeric failure.
//! All randomness flows from seeds printed at startup; UCAN_THREADS caps
//! the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ucan_core::cache::{
    read_dataset_cache, read_panel_cache, read_sidecar, write_dataset_cache, write_panel_cache,
    DatasetSidecar, NoiseSidecar,
};
use ucan_core::dataset::{build_dataset, Variant};
use ucan_core::experiment::{export_results, run_grid, summarize, FashionData, GridSpec};
use ucan_core::nn::{
    evaluate, gradient_check, load_checkpoint, save_checkpoint, train, ucan_network,
    write_history_csv, Examples, Plan, TrainConfig,
};
use ucan_core::noise::{verify_kg_statistics, BasisKind, Clip, KgFieldSpec, NoiseBasis};
use ucan_core::oracle::BezelSystem;
use ucan_core::panel::bezel_indices;

#[derive(Parser)]
#[command(
    name = "ucan",
    about = "Correlated-auxiliary-noise experiment pipeline",
    version
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Redo work even when a matching cache exists.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noise-panel cache file.
    GenNoise(GenNoiseArgs),
    /// Compose an A/B/C dataset cache from IDX files and a noise cache.
    BuildDataset(BuildDatasetArgs),
    /// Train the network on a dataset cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset cache.
    Evaluate(EvaluateArgs),
    /// Measure oracle noise reconstruction errors panel by panel.
    OracleEval(OracleEvalArgs),
    /// Verify the sine sampler against bandlimited vacuum statistics.
    VerifyQft(VerifyQftArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Run the full experiment grid and export results.
    RunGrid(RunGridArgs),
}

#[derive(Args)]
struct GenNoiseArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: BasisKind,
    /// Basis cutoff M (dimension M^2).
    #[arg(long)]
    m: usize,
    #[arg(long)]
    count: u32,
    #[arg(long, default_value_t = 44.0)]
    l: f64,
    /// Output cache path.
    #[arg(long = "out-file")]
    out_file: PathBuf,
    /// Skip clipping (diagnostics only).
    #[arg(long)]
    no_clip: bool,
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Directory holding the four Fashion-MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    /// Noise fraction p in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    /// Noise cache (required for variants B and C).
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
    #[arg(long = "out-file")]
    out_file: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Train on only the first N training examples.
    #[arg(long)]
    subset: Option<usize>,
    /// Validate on only the first N validation examples.
    #[arg(long)]
    val_subset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct OracleEvalArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: BasisKind,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 44.0)]
    l: f64,
    #[arg(long, default_value_t = 1000)]
    panels: u64,
    /// Disable clipping so recovery is exact for full-rank systems.
    #[arg(long)]
    no_clip: bool,
    /// Per-panel error CSV output path.
    #[arg(long = "out-file")]
    out_file: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyQftArgs {
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Worst allowed relative error of any mode variance.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 200)]
    probes: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct RunGridArgs {
    /// Directory holding the four Fashion-MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Comma-separated basis kinds (sine, white).
    #[arg(long)]
    kinds: Option<String>,
    /// Comma-separated cutoffs M.
    #[arg(long)]
    ms: Option<String>,
    /// Comma-separated noise fractions p.
    #[arg(long)]
    ps: Option<String>,
    /// Comma-separated variants (a, b, c, c-denoised).
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    val_subset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

/// JSON config file: any subset of these keys; flags win over file values.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    data_dir: Option<PathBuf>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    grid: Option<GridSpec>,
}

enum CliError {
    Usage(String),
    Input(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Numeric(m) => m,
        }
    }
}

fn input_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn parse_kind(s: &str) -> Result<BasisKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "sine" => Ok(BasisKind::Sine),
        "white" => Ok(BasisKind::White),
        other => Err(format!("unknown basis kind `{other}` (sine|white)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant `{s}` (a|b|c|c-denoised)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    if let Ok(threads) = std::env::var("UCAN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_file_config(&cli.config)?;
    let seed = cli.seed.or(file.seed).unwrap_or(1);
    let out_dir = cli
        .out
        .clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::GenNoise(args) => cmd_gen_noise(args, seed, cli.force),
        Command::BuildDataset(args) => cmd_build_dataset(args, &file, cli.force),
        Command::Train(args) => cmd_train(args, seed, &out_dir),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::OracleEval(args) => cmd_oracle_eval(args, seed),
        Command::VerifyQft(args) => cmd_verify_qft(args, seed),
        Command::Gradcheck(args) => cmd_gradcheck(args, seed),
        Command::RunGrid(args) => cmd_run_grid(args, &file, cli.seed, &out_dir),
    }
}

fn cmd_gen_noise(args: GenNoiseArgs, seed: u64, force: bool) -> Result<(), CliError> {
    if args.m == 0 {
        return Err(CliError::Usage("--m must be at least 1".into()));
    }
    println!(
        "gen-noise: kind={} M={} count={} L={} seed={seed}",
        args.kind, args.m, args.count, args.l
    );

    if !force && args.out_file.exists() {
        if let Ok(sidecar) = read_sidecar::<NoiseSidecar>(&args.out_file) {
            if sidecar.kind == args.kind
                && sidecar.m == args.m as u16
                && sidecar.count == args.count
                && sidecar.seed == seed
                && sidecar.l == args.l
            {
                println!("cache already holds these parameters; skipping (use --force to redo)");
                return Ok(());
            }
        }
    }

    let basis = NoiseBasis::build(args.kind, args.m, args.l, seed).map_err(input_err)?;
    let clip = if args.no_clip {
        Clip::Disabled
    } else {
        Clip::Apply
    };
    let indices: Vec<u64> = (0..args.count as u64).collect();
    let panels: Vec<_> = basis
        .sample_panels(&indices, clip)
        .into_iter()
        .map(|np| np.panel)
        .collect();
    let sidecar = NoiseSidecar {
        kind: args.kind,
        m: args.m as u16,
        count: args.count,
        seed,
        l: args.l,
        amplitude_scale: basis.amplitude_scale(),
        clip_fraction: basis.clip_fraction(),
    };
    ensure_parent(&args.out_file)?;
    write_panel_cache(&args.out_file, &panels, &sidecar).map_err(input_err)?;
    println!(
        "wrote {} panels to {} (amplitude_scale {:.6}, calibration clip fraction {:.5})",
        panels.len(),
        args.out_file.display(),
        basis.amplitude_scale(),
        basis.clip_fraction()
    );
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(input_err)?;
        }
    }
    Ok(())
}

fn resolve_data_dir(arg: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf, CliError> {
    let dir = arg
        .clone()
        .or(file.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data/fashion"));
    if !dir.is_dir() {
        return Err(CliError::Input(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    Ok(dir)
}

fn cmd_build_dataset(
    args: BuildDatasetArgs,
    file: &FileConfig,
    force: bool,
) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.p) {
        return Err(CliError::Usage(format!(
            "--p must lie in [0,1), got {}",
            args.p
        )));
    }
    let dir = resolve_data_dir(&args.data_dir, file)?;
    if !force && args.out_file.exists() {
        if let Ok(sc) = read_sidecar::<DatasetSidecar>(&args.out_file) {
            if sc.variant == args.variant.to_string()
                && sc.noise_fraction == args.p
                && sc.split_seed == args.split_seed
            {
                println!("dataset cache already present; skipping (use --force to redo)");
                return Ok(());
            }
        }
    }
    let data = FashionData::load_dir(&dir).map_err(input_err)?;

    let (noise_panels, noise_sidecar) = match (args.variant, &args.noise) {
        (Variant::A, _) => (Vec::new(), None),
        (_, Some(path)) => {
            let (panels, sc) = read_panel_cache(path).map_err(input_err)?;
            (panels, Some(sc))
        }
        (v, None) => {
            return Err(CliError::Usage(format!(
                "variant {v} needs --noise pointing at a panel cache"
            )));
        }
    };

    println!(
        "build-dataset: variant={} p={} split_seed={}",
        args.variant, args.p, args.split_seed
    );
    let split = build_dataset(
        &data.pool,
        &data.test,
        &noise_panels,
        args.p,
        args.variant,
        args.split_seed,
    )
    .map_err(input_err)?;

    let counts = (
        split.train.len() as u32,
        split.val.len() as u32,
        split.test.len() as u32,
    );
    let mut panels = Vec::with_capacity(70_000);
    let mut labels = Vec::with_capacity(70_000);
    for lp in split.train.iter().chain(&split.val).chain(&split.test) {
        labels.push(lp.label);
    }
    for lp in split.train.into_iter().chain(split.val).chain(split.test) {
        panels.push(lp.panel);
    }
    let (kind, m) = noise_sidecar
        .as_ref()
        .map(|sc| (sc.kind, sc.m))
        .unwrap_or((BasisKind::Sine, 0));
    let sidecar = DatasetSidecar {
        variant: args.variant.to_string(),
        noise_fraction: args.p,
        split_seed: args.split_seed,
        train: counts.0,
        val: counts.1,
        test: counts.2,
        noise: noise_sidecar,
    };
    ensure_parent(&args.out_file)?;
    write_dataset_cache(&args.out_file, &panels, &labels, kind, m, &sidecar).map_err(input_err)?;
    println!(
        "wrote {} composed panels to {}",
        panels.len(),
        args.out_file.display()
    );
    Ok(())
}

struct LoadedDataset {
    train: Examples,
    val: Examples,
    test: Examples,
    sidecar: DatasetSidecar,
}

fn load_dataset_cache(path: &Path) -> Result<LoadedDataset, CliError> {
    let (panels, labels, sidecar) = read_dataset_cache(path).map_err(input_err)?;
    let total = panels.len();
    let (ntr, nva, nte) = (
        sidecar.train as usize,
        sidecar.val as usize,
        sidecar.test as usize,
    );
    if ntr + nva + nte != total {
        return Err(CliError::Input(format!(
            "dataset cache {} holds {total} panels but sidecar says {ntr}+{nva}+{nte}",
            path.display()
        )));
    }
    let to_examples = |range: std::ops::Range<usize>| -> Examples {
        let mut x = Vec::with_capacity(range.len() * ucan_core::panel::PANEL_PIXELS);
        let mut y = Vec::with_capacity(range.len());
        for i in range {
            x.extend(panels[i].pixels().iter().map(|&v| v as f32));
            y.push(labels[i]);
        }
        Examples {
            x,
            labels: y,
            dim: ucan_core::panel::PANEL_PIXELS,
        }
    };
    Ok(LoadedDataset {
        train: to_examples(0..ntr),
        val: to_examples(ntr..ntr + nva),
        test: to_examples(ntr + nva..total),
        sidecar,
    })
}

fn cmd_train(args: TrainArgs, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let ds = load_dataset_cache(&args.dataset)?;
    let mut train_set = ds.train;
    let mut val_set = ds.val;
    if let Some(n) = args.subset {
        let idx: Vec<usize> = (0..n.min(train_set.len())).collect();
        train_set = train_set.subset(&idx);
    }
    if let Some(n) = args.val_subset {
        let idx: Vec<usize> = (0..n.min(val_set.len())).collect();
        val_set = val_set.subset(&idx);
    }

    let mut config = TrainConfig::default().with_seed(seed);
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(p) = args.patience {
        config.patience = p;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    println!(
        "train: dataset variant {} p={} | {} train / {} val examples | seed={seed}",
        ds.sidecar.variant,
        ds.sidecar.noise_fraction,
        train_set.len(),
        val_set.len()
    );

    let plan = Plan::compile(&ucan_network());
    let outcome =
        train(&plan, &train_set, &val_set, &config).map_err(|e| CliError::Numeric(e.to_string()))?;
    let test_acc =
        evaluate(&plan, &outcome.params, &ds.test).map_err(|e| CliError::Numeric(e.to_string()))?;

    std::fs::create_dir_all(out_dir).map_err(input_err)?;
    let ckpt = out_dir.join("model.ucnn");
    save_checkpoint(&ckpt, &plan, &outcome.params).map_err(input_err)?;
    let history = out_dir.join("history.csv");
    write_history_csv(&history, &outcome.history).map_err(input_err)?;
    println!(
        "best epoch {} (val {:.4}); ran {} epochs; test accuracy {:.4}",
        outcome.best_epoch, outcome.best_val_acc, outcome.epochs_run, test_acc
    );
    println!(
        "checkpoint {} | history {}",
        ckpt.display(),
        history.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let ds = load_dataset_cache(&args.dataset)?;
    let plan = Plan::compile(&ucan_network());
    let params = load_checkpoint(&args.checkpoint, &plan).map_err(input_err)?;
    let set = match args.split.as_str() {
        "train" => &ds.train,
        "val" => &ds.val,
        "test" => &ds.test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split `{other}` (train|val|test)"
            )));
        }
    };
    let acc = evaluate(&plan, &params, set).map_err(|e| CliError::Numeric(e.to_string()))?;
    println!(
        "accuracy on {} ({} examples): {:.4}",
        args.split,
        set.len(),
        acc
    );
    Ok(())
}

fn cmd_oracle_eval(args: OracleEvalArgs, seed: u64) -> Result<(), CliError> {
    let basis = NoiseBasis::build(args.kind, args.m, args.l, seed).map_err(input_err)?;
    let system = BezelSystem::new(&basis).map_err(input_err)?;
    println!(
        "oracle-eval: kind={} M={} seed={seed} | condition estimate {:.3e} | rank deficiency {}",
        args.kind,
        args.m,
        system.condition_estimate(),
        system.rank_deficiency()
    );
    if system.is_rank_deficient() {
        println!(
            "note: {} exact null directions; bezel data cannot determine the noise, \
             reporting minimum-norm reconstructions",
            system.rank_deficiency()
        );
    }
    let clip = if args.no_clip {
        Clip::Disabled
    } else {
        Clip::Apply
    };
    let bezel = bezel_indices();
    let mut csv = String::from("panel,max_abs_err,rms_err,clipped_pixels\n");
    let mut worst = 0.0f64;
    for i in 0..args.panels {
        let sample = basis.sample_panel(i, clip);
        let residual: Vec<f64> = bezel.iter().map(|&k| sample.panel.pixels()[k]).collect();
        let coeffs = system.solve_min_norm(&residual).map_err(input_err)?;
        let rebuilt = system.reconstruct_noise(&coeffs);
        let mut max_err = 0.0f64;
        let mut sq = 0.0f64;
        for (a, b) in rebuilt.pixels().iter().zip(sample.panel.pixels()) {
            let d = (a - b).abs();
            max_err = max_err.max(d);
            sq += d * d;
        }
        let rms = (sq / rebuilt.pixels().len() as f64).sqrt();
        worst = worst.max(max_err);
        csv.push_str(&format!("{i},{max_err},{rms},{}\n", sample.clipped_pixels));
    }
    println!(
        "worst max-abs reconstruction error over {} panels: {:.3e}",
        args.panels, worst
    );
    if let Some(path) = &args.out_file {
        ensure_parent(path)?;
        std::fs::write(path, csv).map_err(input_err)?;
        println!("per-panel errors written to {}", path.display());
    }
    Ok(())
}

fn cmd_verify_qft(args: VerifyQftArgs, seed: u64) -> Result<(), CliError> {
    let spec = KgFieldSpec::new(args.l, args.m).map_err(input_err)?;
    println!(
        "verify-qft: M={} L={} samples={} seed={seed} tolerance={}",
        args.m, args.l, args.samples, args.tolerance
    );
    let report = verify_kg_statistics(&spec, args.samples, seed).map_err(input_err)?;
    println!(
        "max mode-variance rel err {:.5} | worst mode mean {:.2} standard errors | \
         max two-point rel err {:.5}",
        report.max_variance_rel_err, report.max_mean_standard_errors, report.max_two_point_rel_err
    );
    if report.max_variance_rel_err <= args.tolerance && report.max_mean_standard_errors <= 3.0 {
        println!("vacuum statistics verified");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "vacuum statistics outside tolerance: variance rel err {:.5} (allowed {}), \
             mean at {:.2} standard errors (allowed 3)",
            report.max_variance_rel_err, args.tolerance, report.max_mean_standard_errors
        )))
    }
}

fn cmd_gradcheck(args: GradcheckArgs, seed: u64) -> Result<(), CliError> {
    println!(
        "gradcheck: probes={} step={} tolerance={} seed={seed}",
        args.probes, args.step, args.tolerance
    );
    let report = gradient_check(
        &ucan_core::nn::reduced_network(),
        args.probes,
        args.step,
        seed,
    );
    println!(
        "max rel err {:.3e} | mean rel err {:.3e} | {} probes | {} kink redraws",
        report.max_rel_err, report.mean_rel_err, report.probes, report.redraws
    );
    if report.max_rel_err <= args.tolerance {
        println!("gradients verified");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max rel err {:.3e} exceeds {}",
            report.max_rel_err, args.tolerance
        )))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("bad {what} value `{tok}`")))
        })
        .collect()
}

fn cmd_run_grid(
    args: RunGridArgs,
    file: &FileConfig,
    seed_flag: Option<u64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let dir = resolve_data_dir(&args.data_dir, file)?;

    let mut grid = file
        .grid
        .clone()
        .unwrap_or_else(|| GridSpec::desk(seed_flag.or(file.seed).unwrap_or(1)));
    if let Some(seed) = seed_flag {
        grid.base_seed = seed;
    }
    if let Some(kinds) = &args.kinds {
        grid.kinds = kinds
            .split(',')
            .map(|k| parse_kind(k.trim()).map_err(CliError::Usage))
            .collect::<Result<_, _>>()?;
    }
    if let Some(ms) = &args.ms {
        grid.cutoffs = parse_list(ms, "cutoff")?;
    }
    if let Some(ps) = &args.ps {
        grid.noise_fractions = parse_list(ps, "noise fraction")?;
    }
    if let Some(vs) = &args.variants {
        grid.variants = vs
            .split(',')
            .map(|v| parse_variant(v.trim()).map_err(CliError::Usage))
            .collect::<Result<_, _>>()?;
    }
    if let Some(r) = args.reps {
        grid.repetitions = r;
    }
    if let Some(s) = args.subset {
        grid.train_subset = Some(s);
    }
    if let Some(s) = args.val_subset {
        grid.val_subset = Some(s);
    }
    if let Some(e) = args.epochs {
        grid.train.max_epochs = e;
    }
    if let Some(p) = args.patience {
        grid.train.patience = p;
    }
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    println!(
        "run-grid: kinds={:?} cutoffs={:?} ps={:?} variants={:?} reps={} base_seed={}",
        grid.kinds,
        grid.cutoffs,
        grid.noise_fractions,
        grid.variants,
        grid.repetitions,
        grid.base_seed
    );
    println!(
        "scale: train subset {:?}, val subset {:?}, max {} epochs (patience {})",
        grid.train_subset, grid.val_subset, grid.train.max_epochs, grid.train.patience
    );

    std::fs::create_dir_all(out_dir).map_err(input_err)?;
    // Echo the effective configuration before the long run starts.
    let echo = serde_json::json!({
        "data_dir": dir,
        "grid": &grid,
    });
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&echo).unwrap(),
    )
    .map_err(input_err)?;

    let data = FashionData::load_dir(&dir).map_err(input_err)?;
    let outcome = run_grid(&grid, &data).map_err(|e| CliError::Numeric(e.to_string()))?;

    let (csv, json) = export_results(&outcome, out_dir).map_err(input_err)?;
    let summary = summarize(&outcome);
    for cell in &summary.cells {
        let eff = cell
            .efficiency
            .map(|e| format!(" efficiency {e:.3}"))
            .unwrap_or_default();
        println!(
            "{}/M={}/p={} {}: {:.4} +- {:.4} over {} reps{}",
            cell.kind, cell.m, cell.p, cell.variant, cell.mean, cell.std, cell.n, eff
        );
    }
    for (cell, err) in &summary.failures {
        println!("cell {cell} failed: {err}");
    }
    println!("results {} | summary {}", csv.display(), json.display());
    Ok(())
}
