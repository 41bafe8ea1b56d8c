//! Experiment grid: train the network across noise kind, dimension,
//! fraction, and variant; aggregate repetitions; compute recovery
//! efficiency; export plot-ready CSV and a JSON summary.
//!
//! Seed lineage: every seed derives from the base seed and the cell
//! coordinates through `rng::mix`, so any run is reproducible in
//! isolation. B and C runs at the same cell share noise panels, data
//! splits, and per-repetition training seeds; only the bezel content
//! differs, which isolates the effect of bezel access.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    compose_panel, load_fashion_mnist, nsr, split_indices, DatasetError, IdxError, LabeledImage,
    Variant, VAL_COUNT,
};
use crate::nn::{
    evaluate, train, Examples, NetworkParams, Plan, TrainConfig, TrainError, TrainOutcome,
};
use crate::noise::{BasisKind, Clip, NoiseBasis, NoiseError};
use crate::oracle::{BezelSystem, OracleError};
use crate::panel::Panel;
use crate::rng::mix;

const SEED_TAG_SPLIT: u64 = 0x11;
const SEED_TAG_NOISE: u64 = 0x22;
const SEED_TAG_RUN: u64 = 0x33;

/// Axes and scale of one experiment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub kinds: Vec<BasisKind>,
    /// Basis cutoffs M; the noise space has dimension M^2.
    pub cutoffs: Vec<usize>,
    /// Noise fractions p.
    pub noise_fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Training examples actually used; None = full 50k split.
    #[serde(default)]
    pub train_subset: Option<usize>,
    /// Validation examples actually used; None = full 10k split.
    #[serde(default)]
    pub val_subset: Option<usize>,
    /// Sine-basis box side length.
    #[serde(default = "default_side_length")]
    pub side_length: f64,
    pub train: TrainConfig,
    /// Retain trained parameters in the outcome (memory-heavy; used by
    /// downstream evaluation such as oracle comparisons).
    #[serde(default)]
    pub keep_models: bool,
}

fn default_side_length() -> f64 {
    44.0
}

impl GridSpec {
    /// Desk-scale defaults: 3 repetitions, 5k training subset, 2k
    /// validation subset, 12-epoch cap with patience 3.
    pub fn desk(base_seed: u64) -> GridSpec {
        GridSpec {
            kinds: vec![BasisKind::Sine],
            cutoffs: vec![5],
            noise_fractions: vec![0.5, 0.7, 0.9],
            variants: vec![Variant::A, Variant::B, Variant::C],
            repetitions: 3,
            base_seed,
            train_subset: Some(5_000),
            val_subset: Some(2_000),
            side_length: 44.0,
            train: TrainConfig {
                max_epochs: 12,
                patience: 3,
                ..TrainConfig::default()
            },
            keep_models: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        for (name, empty) in [
            ("kinds", self.kinds.is_empty()),
            ("cutoffs", self.cutoffs.is_empty()),
            ("noise_fractions", self.noise_fractions.is_empty()),
            ("variants", self.variants.is_empty()),
        ] {
            if empty {
                return Err(ExperimentError::EmptyAxis { axis: name });
            }
        }
        if self.repetitions == 0 {
            return Err(ExperimentError::EmptyAxis {
                axis: "repetitions",
            });
        }
        for &p in &self.noise_fractions {
            if !(0.0..1.0).contains(&p) {
                return Err(ExperimentError::Dataset(
                    DatasetError::InvalidNoiseFraction { p },
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ExperimentError {
    EmptyAxis { axis: &'static str },
    EmptyResults,
    Dataset(DatasetError),
    Idx(IdxError),
    Noise(NoiseError),
    Train(TrainError),
    Oracle(OracleError),
    Io(std::io::Error),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::EmptyAxis { axis } => write!(f, "grid axis `{axis}` is empty"),
            ExperimentError::EmptyResults => write!(f, "grid produced no results"),
            ExperimentError::Dataset(e) => write!(f, "{e}"),
            ExperimentError::Idx(e) => write!(f, "{e}"),
            ExperimentError::Noise(e) => write!(f, "{e}"),
            ExperimentError::Train(e) => write!(f, "{e}"),
            ExperimentError::Oracle(e) => write!(f, "{e}"),
            ExperimentError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for ExperimentError {
            fn from(e: $ty) -> Self {
                ExperimentError::$variant(e)
            }
        }
    };
}
from_err!(Dataset, DatasetError);
from_err!(Idx, IdxError);
from_err!(Noise, NoiseError);
from_err!(Train, TrainError);
from_err!(Oracle, OracleError);
from_err!(Io, std::io::Error);

/// The Fashion-MNIST pool (60k) and test set (10k).
pub struct FashionData {
    pub pool: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl FashionData {
    /// Load from a directory holding the four standard IDX files
    /// (optionally gzip-compressed with a `.gz` suffix).
    pub fn load_dir(dir: &Path) -> Result<FashionData, IdxError> {
        let find = |base: &str| -> PathBuf {
            let gz = dir.join(format!("{base}.gz"));
            if gz.exists() {
                gz
            } else {
                dir.join(base)
            }
        };
        let pool = load_fashion_mnist(
            &find("train-images-idx3-ubyte"),
            &find("train-labels-idx1-ubyte"),
        )?;
        let test = load_fashion_mnist(
            &find("t10k-images-idx3-ubyte"),
            &find("t10k-labels-idx1-ubyte"),
        )?;
        Ok(FashionData { pool, test })
    }
}

/// One training run's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub kind: BasisKind,
    pub m: usize,
    pub p: f64,
    pub variant: Variant,
    pub rep: usize,
    pub seed: u64,
    pub epochs: usize,
    pub test_accuracy: f64,
    pub duration_s: f64,
}

/// Aggregated cell statistics.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub kind: BasisKind,
    pub m: usize,
    pub p: f64,
    pub variant: Variant,
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

impl CellResult {
    fn from_runs(runs: &[RunRecord]) -> CellResult {
        let first = &runs[0];
        let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        CellResult {
            kind: first.kind,
            m: first.m,
            p: first.p,
            variant: first.variant,
            seeds: runs.iter().map(|r| r.seed).collect(),
            epochs: runs.iter().map(|r| r.epochs).collect(),
            accuracies,
            mean,
            std,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Kept model key: cell coordinates plus repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub kind: BasisKind,
    pub m: usize,
    pub p: f64,
    pub variant: Variant,
    pub rep: usize,
}

pub struct GridOutcome {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellResult>,
    /// Cell label -> error message for skipped cells.
    pub failures: Vec<(String, String)>,
    /// Trained parameters, only when `GridSpec::keep_models` is set.
    pub models: Vec<(RunKey, NetworkParams<f32>)>,
}

/// Recovered fraction of the A-to-B accuracy drop: (c - b) / (a - b).
/// Undefined (None) when a <= b.
pub fn ucan_efficiency(acc_a: f64, acc_b: f64, acc_c: f64) -> Option<f64> {
    if acc_a <= acc_b {
        return None;
    }
    Some((acc_c - acc_b) / (acc_a - acc_b))
}

/// Seed for the grid's data split.
pub fn split_seed(base: u64) -> u64 {
    mix(base, &[SEED_TAG_SPLIT])
}

/// Seed for the noise basis and panel streams of one (kind, M) block.
pub fn noise_seed(base: u64, kind: BasisKind, m: usize) -> u64 {
    mix(base, &[SEED_TAG_NOISE, kind.code() as u64, m as u64])
}

/// Training seed for one repetition of one cell. Variant A ignores every
/// noise coordinate; B and C share the seed so their comparison is paired.
pub fn run_seed(base: u64, kind: BasisKind, m: usize, p: f64, variant: Variant, rep: usize) -> u64 {
    match variant {
        Variant::A => mix(base, &[SEED_TAG_RUN, 0, 0, 0, rep as u64]),
        _ => mix(
            base,
            &[
                SEED_TAG_RUN,
                1 + kind.code() as u64,
                m as u64,
                (p * 1e9).round() as u64,
                rep as u64,
            ],
        ),
    }
}

struct PreparedData<'a> {
    data: &'a FashionData,
    /// Pool indices used for training (subset of the shuffled head).
    train_idx: Vec<usize>,
    /// Pool indices used for validation (subset of the shuffled tail).
    val_idx: Vec<usize>,
}

impl<'a> PreparedData<'a> {
    fn new(grid: &GridSpec, data: &'a FashionData) -> PreparedData<'a> {
        let order = split_indices(data.pool.len(), split_seed(grid.base_seed));
        let val_count = VAL_COUNT.min(data.pool.len() / 6);
        let train_count = data.pool.len() - val_count;
        let train_take = grid.train_subset.unwrap_or(train_count).min(train_count);
        let val_take = grid.val_subset.unwrap_or(val_count).min(val_count);
        PreparedData {
            data,
            train_idx: order[..train_take].to_vec(),
            val_idx: order[train_count..train_count + val_take].to_vec(),
        }
    }

    /// Panel index backing pooled example `i` is `i`; test example `k`
    /// pairs with panel `pool.len() + k`.
    fn needed_panel_indices(&self) -> Vec<u64> {
        let mut idx: Vec<u64> = self
            .train_idx
            .iter()
            .chain(&self.val_idx)
            .map(|&i| i as u64)
            .collect();
        idx.extend((0..self.data.test.len()).map(|k| (self.data.pool.len() + k) as u64));
        idx.sort_unstable();
        idx
    }

    /// Compose the three example sets for one variant, drawing noise
    /// panels from `noise` keyed by canonical panel index.
    fn compose(
        &self,
        noise: Option<&HashMap<u64, Panel>>,
        p: f64,
        variant: Variant,
    ) -> Result<(Examples, Examples, Examples), ExperimentError> {
        let pool_panel = |i: usize| -> Option<&Panel> {
            noise.map(|n| n.get(&(i as u64)).expect("panel sampled for index"))
        };
        let build = |indices: &[usize]| -> Result<Examples, ExperimentError> {
            let mut x = Vec::with_capacity(indices.len() * crate::panel::PANEL_PIXELS);
            let mut labels = Vec::with_capacity(indices.len());
            for &i in indices {
                let composed = compose_panel(&self.data.pool[i], pool_panel(i), p, variant)?;
                x.extend(composed.panel.pixels().iter().map(|&v| v as f32));
                labels.push(composed.label);
            }
            Ok(Examples {
                x,
                labels,
                dim: crate::panel::PANEL_PIXELS,
            })
        };
        let train_set = build(&self.train_idx)?;
        let val_set = build(&self.val_idx)?;

        let mut x = Vec::with_capacity(self.data.test.len() * crate::panel::PANEL_PIXELS);
        let mut labels = Vec::with_capacity(self.data.test.len());
        for (k, image) in self.data.test.iter().enumerate() {
            let panel_idx = (self.data.pool.len() + k) as u64;
            let n = noise.map(|nn| nn.get(&panel_idx).expect("panel sampled for index"));
            let composed = compose_panel(image, n, p, variant)?;
            x.extend(composed.panel.pixels().iter().map(|&v| v as f32));
            labels.push(composed.label);
        }
        let test_set = Examples {
            x,
            labels,
            dim: crate::panel::PANEL_PIXELS,
        };
        Ok((train_set, val_set, test_set))
    }
}

/// Run the whole grid. Individual cell failures are recorded and skipped;
/// configuration errors abort.
pub fn run_grid(grid: &GridSpec, data: &FashionData) -> Result<GridOutcome, ExperimentError> {
    grid.validate()?;
    let plan = Plan::compile(&crate::nn::ucan_network());
    let prepared = PreparedData::new(grid, data);

    let mut runs: Vec<RunRecord> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    let mut models: Vec<(RunKey, NetworkParams<f32>)> = Vec::new();

    // Variant A ignores the noise axes entirely: one set of repetitions,
    // reused by every A cell in the grid.
    let mut a_runs: Vec<(u64, usize, f64, f64)> = Vec::new(); // seed, epochs, acc, secs
    if grid.variants.contains(&Variant::A) {
        let (train_set, val_set, test_set) = prepared.compose(None, 0.0, Variant::A)?;
        for rep in 0..grid.repetitions {
            let seed = run_seed(grid.base_seed, BasisKind::Sine, 0, 0.0, Variant::A, rep);
            let started = Instant::now();
            let outcome = train_one(&plan, &train_set, &val_set, &grid.train, seed)?;
            let acc = evaluate(&plan, &outcome.params, &test_set)?;
            let secs = started.elapsed().as_secs_f64();
            if grid.keep_models {
                models.push((
                    RunKey {
                        kind: BasisKind::Sine,
                        m: 0,
                        p: 0.0,
                        variant: Variant::A,
                        rep,
                    },
                    outcome.params.clone(),
                ));
            }
            a_runs.push((seed, outcome.epochs_run, acc, secs));
        }
    }

    for &kind in &grid.kinds {
        for &m in &grid.cutoffs {
            let block = match prepare_noise(grid, &prepared, kind, m) {
                Ok(b) => b,
                Err(e) => {
                    failures.push((format!("{kind}/M={m}"), e.to_string()));
                    continue;
                }
            };
            for &p in &grid.noise_fractions {
                for &variant in &grid.variants {
                    if variant == Variant::A {
                        for (rep, &(seed, epochs, acc, secs)) in a_runs.iter().enumerate() {
                            runs.push(RunRecord {
                                kind,
                                m,
                                p,
                                variant,
                                rep,
                                seed,
                                epochs,
                                test_accuracy: acc,
                                duration_s: secs,
                            });
                        }
                        continue;
                    }
                    match run_cell(grid, &plan, &prepared, &block, kind, m, p, variant) {
                        Ok(mut cell_runs) => {
                            if grid.keep_models {
                                for (key, params) in cell_runs.models.drain(..) {
                                    models.push((key, params));
                                }
                            }
                            runs.extend(cell_runs.records);
                        }
                        Err(e) => {
                            failures.push((
                                format!("{kind}/M={m}/p={p}/{variant}"),
                                e.to_string(),
                            ));
                        }
                    }
                }
            }
        }
    }

    if runs.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }

    // Aggregate per cell in deterministic order.
    let mut cells: Vec<CellResult> = Vec::new();
    let mut seen: Vec<(BasisKind, usize, u64, Variant)> = Vec::new();
    for r in &runs {
        let key = (r.kind, r.m, r.p.to_bits(), r.variant);
        if !seen.contains(&key) {
            seen.push(key);
            let cell_runs: Vec<RunRecord> = runs
                .iter()
                .filter(|x| (x.kind, x.m, x.p.to_bits(), x.variant) == key)
                .cloned()
                .collect();
            cells.push(CellResult::from_runs(&cell_runs));
        }
    }

    Ok(GridOutcome {
        runs,
        cells,
        failures,
        models,
    })
}

struct NoiseBlock {
    basis: NoiseBasis,
    panels: HashMap<u64, Panel>,
}

fn prepare_noise(
    grid: &GridSpec,
    prepared: &PreparedData,
    kind: BasisKind,
    m: usize,
) -> Result<NoiseBlock, ExperimentError> {
    let basis = NoiseBasis::build(
        kind,
        m,
        grid.side_length,
        noise_seed(grid.base_seed, kind, m),
    )?;
    let indices = prepared.needed_panel_indices();
    let sampled = basis.sample_panels(&indices, Clip::Apply);
    let panels = indices
        .into_iter()
        .zip(sampled.into_iter().map(|np| np.panel))
        .collect();
    Ok(NoiseBlock { basis, panels })
}

struct CellRuns {
    records: Vec<RunRecord>,
    models: Vec<(RunKey, NetworkParams<f32>)>,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    grid: &GridSpec,
    plan: &Plan,
    prepared: &PreparedData,
    block: &NoiseBlock,
    kind: BasisKind,
    m: usize,
    p: f64,
    variant: Variant,
) -> Result<CellRuns, ExperimentError> {
    let compose_variant = match variant {
        Variant::CDenoised => Variant::C,
        v => v,
    };
    let (mut train_set, mut val_set, mut test_set) =
        prepared.compose(Some(&block.panels), p, compose_variant)?;

    if variant == Variant::CDenoised {
        let system = BezelSystem::new(&block.basis)?;
        for set in [&mut train_set, &mut val_set, &mut test_set] {
            denoise_examples(set, &system, p)?;
        }
    }

    let mut records = Vec::with_capacity(grid.repetitions);
    let mut models = Vec::new();
    for rep in 0..grid.repetitions {
        let seed = run_seed(grid.base_seed, kind, m, p, variant, rep);
        let started = Instant::now();
        let outcome = train_one(plan, &train_set, &val_set, &grid.train, seed)?;
        let acc = evaluate(plan, &outcome.params, &test_set)?;
        if grid.keep_models {
            models.push((
                RunKey {
                    kind,
                    m,
                    p,
                    variant,
                    rep,
                },
                outcome.params.clone(),
            ));
        }
        records.push(RunRecord {
            kind,
            m,
            p,
            variant,
            rep,
            seed,
            epochs: outcome.epochs_run,
            test_accuracy: acc,
            duration_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(CellRuns { records, models })
}

fn train_one(
    plan: &Plan,
    train_set: &Examples,
    val_set: &Examples,
    template: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let config = template.clone().with_seed(seed);
    train(plan, train_set, val_set, &config)
}

/// Replace composed variant-C pixels with their oracle-denoised values.
fn denoise_examples(
    set: &mut Examples,
    system: &BezelSystem,
    p: f64,
) -> Result<(), ExperimentError> {
    use crate::dataset::LabeledPanel;
    let dim = set.dim;
    for i in 0..set.len() {
        let pixels: Vec<f64> = set.x[i * dim..(i + 1) * dim]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let panel = LabeledPanel {
            panel: Panel::from_pixels(pixels),
            label: set.labels[i],
            variant: Variant::C,
            noise_fraction: p,
        };
        let denoised = system.denoise(&panel, p)?;
        for (dst, &src) in set.x[i * dim..(i + 1) * dim]
            .iter_mut()
            .zip(denoised.panel.pixels())
        {
            *dst = src as f32;
        }
    }
    Ok(())
}

/// Write per-repetition rows plus per-cell aggregate rows to
/// `results.csv`, and cell summaries with efficiencies to `summary.json`.
///
/// CSV columns, in order:
/// `kind,M,p,nsr,variant,rep,seed,epochs,test_accuracy`. Aggregate rows
/// carry `rep = mean` with empty seed/epochs fields.
pub fn export_results(
    outcome: &GridOutcome,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), ExperimentError> {
    if outcome.runs.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");

    let mut csv = String::from("kind,M,p,nsr,variant,rep,seed,epochs,test_accuracy\n");
    let mut sorted: Vec<&RunRecord> = outcome.runs.iter().collect();
    sorted.sort_by(|a, b| {
        (a.kind.code(), a.m, a.p.to_bits(), format!("{}", a.variant), a.rep).cmp(&(
            b.kind.code(),
            b.m,
            b.p.to_bits(),
            format!("{}", b.variant),
            b.rep,
        ))
    });
    for r in &sorted {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.kind,
            r.m,
            r.p,
            nsr(r.p).expect("validated fraction"),
            r.variant,
            r.rep,
            r.seed,
            r.epochs,
            r.test_accuracy
        ));
    }
    for c in &outcome.cells {
        csv.push_str(&format!(
            "{},{},{},{},{},mean,,,{}\n",
            c.kind,
            c.m,
            c.p,
            nsr(c.p).expect("validated fraction"),
            c.variant,
            c.mean
        ));
    }
    std::fs::write(&csv_path, csv)?;

    let summary = summarize(outcome);
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary).unwrap())?;
    Ok((csv_path, json_path))
}

#[derive(Debug, Serialize)]
pub struct CellSummary {
    pub kind: BasisKind,
    pub m: usize,
    pub p: f64,
    pub nsr: f64,
    pub variant: Variant,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: Vec<usize>,
    /// Recovery efficiency, present on C cells when A and B means exist
    /// and the drop is well-defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct GridSummary {
    pub cells: Vec<CellSummary>,
    pub failures: Vec<(String, String)>,
}

pub fn summarize(outcome: &GridOutcome) -> GridSummary {
    let mean_of = |kind: BasisKind, m: usize, p: f64, variant: Variant| -> Option<f64> {
        outcome
            .cells
            .iter()
            .find(|c| c.kind == kind && c.m == m && c.p == p && c.variant == variant)
            .map(|c| c.mean)
    };
    let cells = outcome
        .cells
        .iter()
        .map(|c| {
            let efficiency = if c.variant == Variant::C {
                let a = mean_of(c.kind, c.m, c.p, Variant::A);
                let b = mean_of(c.kind, c.m, c.p, Variant::B);
                match (a, b) {
                    (Some(a), Some(b)) => ucan_efficiency(a, b, c.mean),
                    _ => None,
                }
            } else {
                None
            };
            CellSummary {
                kind: c.kind,
                m: c.m,
                p: c.p,
                nsr: nsr(c.p).expect("validated fraction"),
                variant: c.variant,
                n: c.accuracies.len(),
                mean: c.mean,
                std: c.std,
                accuracies: c.accuracies.clone(),
                seeds: c.seeds.clone(),
                epochs: c.epochs.clone(),
                efficiency,
            }
        })
        .collect();
    GridSummary {
        cells,
        failures: outcome.failures.clone(),
    }
}

/// Parse a results CSV produced by `export_results` back into
/// per-repetition accuracy lists keyed by (kind, M, p, variant).
pub fn reimport_csv(path: &Path) -> Result<HashMap<String, Vec<f64>>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut out: HashMap<String, Vec<f64>> = HashMap::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 || fields[5] == "mean" {
            continue;
        }
        let key = format!("{}/{}/{}/{}", fields[0], fields[1], fields[2], fields[4]);
        let acc: f64 = fields[8].parse().unwrap_or(f64::NAN);
        out.entry(key).or_default().push(acc);
    }
    Ok(out)
}
