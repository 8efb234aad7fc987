//! Run orchestration: dataset loading, the epoch loop with metrics and
//! checkpoints, evaluation with a confusion matrix, gradient-check
//! wrappers, and the simulation-length sweep.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use snn_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use snn_core::data::{
    bernoulli_encode, load_mnist_dir, load_nmnist_dir, load_spike_dataset, synth_dataset,
    DataError, Dataset,
};
use snn_core::gradcheck::{finite_difference_check, oracle_check};
use snn_core::network::{classify, parse_structure, NetworkError};
use snn_core::neuron::LifParams;
use snn_core::optim::{lr_schedule, AdamParams, OptimizerState, SgdParams};
use snn_core::stbp::{
    evaluate_accuracy, infer, train_step, OptimizerConfig, Sample, SampleFrames, TrainOptions,
};
use snn_core::tensor::TensorError;
use snn_core::{Network, NetworkSpec, Scalar};

use crate::config::{ConfigError, DatasetKind, EncodeMode, OptimizerKind, RunConfig};

/// Harness-level error, carrying its process exit code: 1 config, 2 data,
/// 3 numerical.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(d) => write!(f, "config error: {d}"),
            CliError::Data(d) => write!(f, "data error: {d}"),
            CliError::Numerical(d) => write!(f, "numerical failure: {d}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.detail)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn io_err(context: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{context} {}: {e}", path.display()))
}

/// splitmix64 finalizer; decorrelates structured counters into seeds.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn iteration_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    mix(seed ^ mix(((epoch as u64) << 32) ^ step as u64))
}

// The synthetic corpus is a fixed artifact, not a function of the run
// seed, so different seeds and different T values train on the same data.
const SYNTH_TRAIN_SEED: u64 = 0x5EED_DA7A;
const SYNTH_TEST_SEED: u64 = 0x5EED_7E57;

fn encode_static<S: Scalar>(
    mut data: Dataset<S>,
    t_steps: usize,
    run_seed: u64,
) -> Result<Dataset<S>, CliError> {
    for (i, sample) in data.samples.iter_mut().enumerate() {
        let SampleFrames::Static(image) = &sample.frames else {
            return Err(CliError::Config(
                "encode = bernoulli needs static-image samples".into(),
            ));
        };
        let frames = bernoulli_encode(image, t_steps, mix(run_seed ^ i as u64))?;
        sample.frames = SampleFrames::Temporal(frames);
    }
    Ok(data)
}

/// Shuffled deterministic split for container datasets that arrive as one
/// block: 9 of every 10 samples train, the rest test.
fn split_container<S: Scalar>(
    samples: Vec<Sample<S>>,
    num_classes: usize,
    input_shape: [usize; 3],
    split_seed: u64,
) -> (Dataset<S>, Dataset<S>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    order.shuffle(&mut rng);
    let n_train = samples.len() * 9 / 10;
    let mut slots: Vec<Option<Sample<S>>> = samples.into_iter().map(Some).collect();
    let take = |idxs: &[usize], slots: &mut Vec<Option<Sample<S>>>| Dataset {
        samples: idxs
            .iter()
            .map(|&i| slots[i].take().expect("each index visited once"))
            .collect(),
        num_classes,
        input_shape,
    };
    let train = take(&order[..n_train], &mut slots);
    let test = take(&order[n_train..], &mut slots);
    (train, test)
}

fn load_data<S: Scalar>(cfg: &RunConfig) -> Result<(Dataset<S>, Dataset<S>), CliError> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Synth => (
            synth_dataset::<S>(cfg.synth_train, SYNTH_TRAIN_SEED),
            synth_dataset::<S>(cfg.synth_test, SYNTH_TEST_SEED),
        ),
        DatasetKind::Mnist => {
            let dir = cfg.data_dir.as_ref().expect("validated");
            load_mnist_dir::<S>(dir)?
        }
        DatasetKind::Nmnist => {
            let dir = cfg.data_dir.as_ref().expect("validated");
            load_nmnist_dir::<S>(dir, cfg.t_steps)?
        }
        DatasetKind::DvsCifar10 => {
            let path = cfg.data_dir.as_ref().expect("validated");
            let (samples, meta) = load_spike_dataset::<S>(path)?;
            if meta.t_steps != cfg.t_steps {
                return Err(CliError::Data(format!(
                    "container {} holds {}-step samples but the run uses T = {}; re-bin the events",
                    path.display(),
                    meta.t_steps,
                    cfg.t_steps
                )));
            }
            let shape = [meta.channels, meta.height, meta.width];
            split_container(samples, meta.num_classes, shape, cfg.split_seed)
        }
        DatasetKind::Cifar10 => {
            return Err(CliError::Config(
                "cifar10 has no supported on-disk source in this build; \
                 train on mnist/synth image files or event containers"
                    .into(),
            ));
        }
    };
    if cfg.encode == EncodeMode::Bernoulli {
        if cfg.dataset.event_driven() {
            return Err(CliError::Config(
                "encode = bernoulli applies to static-image datasets only".into(),
            ));
        }
        // Derived per-sample seeds, disjoint between splits.
        return Ok((
            encode_static(train, cfg.t_steps, mix(cfg.seed))?,
            encode_static(test, cfg.t_steps, mix(cfg.seed ^ 0xACCE_55ED))?,
        ));
    }
    Ok((train, test))
}

fn build_network<S: Scalar>(cfg: &RunConfig, data: &Dataset<S>) -> Result<Network<S>, CliError> {
    let layers =
        parse_structure(&cfg.structure).map_err(|e| CliError::Config(e.to_string()))?;
    let lif = LifParams::new(
        S::from_f64(cfg.k_tau1),
        S::from_f64(cfg.v_th),
        S::from_f64(cfg.a),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let spec = NetworkSpec {
        layers,
        lif,
        neunorm_enabled: cfg.neunorm,
        k_tau2: S::from_f64(cfg.k_tau2),
        t_steps: cfg.t_steps,
        num_classes: data.num_classes,
        dropout_rate: S::from_f64(cfg.dropout),
        input_shape: data.input_shape,
        voting_seed: None,
    };
    Ok(Network::init(spec, cfg.seed)?)
}

fn optimizer_state<S: Scalar>(cfg: &RunConfig, net: &Network<S>) -> OptimizerState<S> {
    let shapes: Vec<&[usize]> = net.param_tensors().iter().map(|t| t.shape()).collect();
    match cfg.optimizer {
        OptimizerKind::Adam => OptimizerState::adam(&shapes),
        OptimizerKind::Sgd => OptimizerState::sgd(&shapes),
    }
}

/// Learning rate at `epoch`: SGD follows the tenfold-every-40-epochs step
/// decay; Adam holds the configured rate.
fn effective_lr(cfg: &RunConfig, epoch: usize) -> f64 {
    match cfg.optimizer {
        OptimizerKind::Sgd => lr_schedule(cfg.lr, epoch),
        OptimizerKind::Adam => cfg.lr,
    }
}

fn optimizer_config<S: Scalar>(cfg: &RunConfig, lr: f64) -> OptimizerConfig<S> {
    match cfg.optimizer {
        OptimizerKind::Adam => OptimizerConfig::Adam(AdamParams::with_lr(S::from_f64(lr))),
        OptimizerKind::Sgd => OptimizerConfig::Sgd(SgdParams {
            lr: S::from_f64(lr),
            momentum: S::from_f64(cfg.momentum),
        }),
    }
}

fn append_line(path: &Path, line: &str) -> Result<(), CliError> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err("cannot open", path, e))?;
    writeln!(file, "{line}").map_err(|e| io_err("cannot write", path, e))
}

pub struct TrainOutcome {
    pub epochs_run: usize,
    pub final_test_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub metrics_path: PathBuf,
}

pub fn run_training<S: Scalar>(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err("cannot create", &cfg.out_dir, e))?;
    fs::write(cfg.out_dir.join("config.resolved"), cfg.manifest())
        .map_err(|e| io_err("cannot write", &cfg.out_dir.join("config.resolved"), e))?;

    let (train, test) = load_data::<S>(cfg)?;
    if train.samples.is_empty() || test.samples.is_empty() {
        return Err(CliError::Data("empty training or test split".into()));
    }
    let mut net = build_network(cfg, &train)?;
    let mut opt_state = optimizer_state(cfg, &net);

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let timings_path = cfg.out_dir.join("timings.csv");
    if !metrics_path.exists() {
        append_line(&metrics_path, "epoch,train_loss,train_acc,test_acc,lr")?;
    }
    if !timings_path.exists() {
        append_line(&timings_path, "epoch,wall_seconds")?;
    }
    // The freshly initialized model is the first last-good checkpoint, so
    // a numerical abort in any epoch (including the first) leaves a
    // loadable model behind.
    let last_path = cfg.out_dir.join("last.snnc");
    let best_path = cfg.out_dir.join("best.snnc");
    save_checkpoint(&last_path, &net, Some(&opt_state))?;

    let n = train.samples.len();
    let mut best: Option<f64> = None;
    let mut last_acc: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = effective_lr(cfg, epoch);
        let opt = optimizer_config::<S>(cfg, lr);

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample<S>> =
                chunk.iter().map(|&i| train.samples[i].clone()).collect();
            let opts = TrainOptions {
                backward: Default::default(),
                dropout_seed: iteration_seed(cfg.seed, epoch, step),
            };
            let stats = train_step(&mut net, &batch, &mut opt_state, &opt, &opts)?;
            let batch_loss = stats.loss.as_f64();
            if !batch_loss.is_finite() {
                return Err(CliError::Numerical(format!(
                    "loss became {batch_loss} at epoch {epoch}, step {step}; \
                     last-good checkpoint retained at {}",
                    last_path.display()
                )));
            }
            loss_sum += batch_loss * chunk.len() as f64;
            correct += stats.correct;
        }
        let train_loss = loss_sum / n as f64;
        let train_acc = correct as f64 / n as f64;
        let test_acc = evaluate_accuracy(&net, &test.samples)?;

        append_line(
            &metrics_path,
            &format!("{epoch},{train_loss},{train_acc},{test_acc},{lr}"),
        )?;
        append_line(
            &timings_path,
            &format!("{epoch},{:.3}", started.elapsed().as_secs_f64()),
        )?;
        save_checkpoint(&last_path, &net, Some(&opt_state))?;
        if best.is_none_or(|b| test_acc > b) {
            best = Some(test_acc);
            save_checkpoint(&best_path, &net, Some(&opt_state))?;
        }
        last_acc = Some(test_acc);
        println!(
            "epoch {epoch}: train_loss {train_loss:.6} train_acc {train_acc:.4} \
             test_acc {test_acc:.4} lr {lr}"
        );
    }

    if cfg.epochs == 0 {
        println!(
            "0 epochs requested: wrote header-only metrics and the initial checkpoint to {}",
            last_path.display()
        );
    }
    Ok(TrainOutcome {
        epochs_run: cfg.epochs,
        final_test_acc: last_acc,
        best_test_acc: best,
        metrics_path,
    })
}

/// Infer what kind of dataset a path holds: a spike container file, an
/// event directory (`Train/`+`Test/`), or an image directory (IDX files).
/// Returns the test split.
fn sniff_test_split<S: Scalar>(path: &Path, t_steps: usize) -> Result<Dataset<S>, CliError> {
    if path.is_file() {
        let (samples, meta) = load_spike_dataset::<S>(path)?;
        if meta.t_steps != t_steps {
            return Err(CliError::Data(format!(
                "container {} holds {}-step samples but evaluation uses T = {t_steps}",
                path.display(),
                meta.t_steps
            )));
        }
        return Ok(Dataset {
            samples,
            num_classes: meta.num_classes,
            input_shape: [meta.channels, meta.height, meta.width],
        });
    }
    if path.join("Test").is_dir() {
        let (_, test) = load_nmnist_dir::<S>(path, t_steps)?;
        return Ok(test);
    }
    if path.join("t10k-images-idx3-ubyte").is_file() {
        let (_, test) = load_mnist_dir::<S>(path)?;
        return Ok(test);
    }
    Err(CliError::Data(format!(
        "{}: not a spike container, event directory, or image directory",
        path.display()
    )))
}

pub struct EvalOutcome {
    pub accuracy: f64,
    pub samples: usize,
    pub confusion_path: PathBuf,
}

pub fn run_eval<S: Scalar>(
    checkpoint: &Path,
    dataset: &Path,
    t_steps: usize,
    out_dir: &Path,
) -> Result<EvalOutcome, CliError> {
    let (mut net, _) = load_checkpoint::<S>(checkpoint)?;
    net.spec.t_steps = t_steps;
    let test = sniff_test_split::<S>(dataset, t_steps)?;
    if test.input_shape != net.spec.input_shape {
        return Err(CliError::Data(format!(
            "dataset frames are {:?} but the checkpoint expects {:?}",
            test.input_shape, net.spec.input_shape
        )));
    }
    if test.num_classes != net.spec.num_classes {
        return Err(CliError::Data(format!(
            "dataset has {} classes but the checkpoint expects {}",
            test.num_classes, net.spec.num_classes
        )));
    }

    let pairs: Vec<(usize, usize)> = test
        .samples
        .par_iter()
        .map(|s| {
            let vote = infer(&net, s.frames.view())?;
            Ok((s.label, classify(&vote)))
        })
        .collect::<Result<_, TensorError>>()?;
    let classes = net.spec.num_classes;
    let mut confusion = vec![0usize; classes * classes];
    let mut hits = 0usize;
    for &(label, predicted) in &pairs {
        confusion[label * classes + predicted] += 1;
        hits += usize::from(label == predicted);
    }
    let accuracy = hits as f64 / pairs.len() as f64;

    fs::create_dir_all(out_dir).map_err(|e| io_err("cannot create", out_dir, e))?;
    let confusion_path = out_dir.join("confusion.csv");
    let mut csv = String::from("true_class");
    for c in 0..classes {
        csv.push_str(&format!(",predicted_{c}"));
    }
    csv.push('\n');
    for row in 0..classes {
        csv.push_str(&row.to_string());
        for col in 0..classes {
            csv.push_str(&format!(",{}", confusion[row * classes + col]));
        }
        csv.push('\n');
    }
    fs::write(&confusion_path, csv).map_err(|e| io_err("cannot write", &confusion_path, e))?;

    Ok(EvalOutcome {
        accuracy,
        samples: pairs.len(),
        confusion_path,
    })
}

pub enum GradcheckMode {
    Oracle,
    Relaxed,
}

/// Run the requested verification sweep, print its report, and say whether
/// it passed.
pub fn run_gradcheck(mode: GradcheckMode, cases: Option<usize>, seed: u64) -> Result<bool, CliError> {
    if cases == Some(0) {
        return Err(CliError::Config(
            "--cases must be >= 1; a zero-case check would pass vacuously".into(),
        ));
    }
    match mode {
        GradcheckMode::Oracle => {
            let cases = cases.unwrap_or(100);
            let report = oracle_check(cases, seed)?;
            println!(
                "oracle: {} cases, {} gradient/loss/vote elements compared, {} mismatches",
                report.cases, report.elements_compared, report.mismatches
            );
            if let Some(first) = &report.first_mismatch {
                println!("first mismatch: {first}");
            }
            println!("result: {}", if report.passed() { "pass" } else { "FAIL" });
            Ok(report.passed())
        }
        GradcheckMode::Relaxed => {
            let networks = cases.unwrap_or(20);
            let report = finite_difference_check(networks, seed)?;
            println!(
                "relaxed: {} networks, {} parameters probed, {} kink resamples",
                report.networks, report.parameters, report.resamples
            );
            for (block, err) in &report.per_block {
                println!("  {block}: max rel err {err:.3e}");
            }
            println!(
                "max rel err {:.3e} against tolerance {:.0e}: {}",
                report.max_rel_err,
                report.tolerance,
                if report.passed() { "pass" } else { "FAIL" }
            );
            Ok(report.passed())
        }
    }
}

/// Train once per distinct window length and tabulate final test accuracy.
pub fn run_sweep<S: Scalar>(
    cfg: &RunConfig,
    t_list: &[usize],
) -> Result<Vec<(usize, f64)>, CliError> {
    let mut seen = std::collections::BTreeSet::new();
    let distinct: Vec<usize> = t_list
        .iter()
        .copied()
        .filter(|t| seen.insert(*t))
        .collect();
    if distinct.is_empty() {
        return Err(CliError::Config("t-list is empty".into()));
    }
    let mut rows = Vec::with_capacity(distinct.len());
    for &t in &distinct {
        let mut sub = cfg.clone();
        sub.t_steps = t;
        sub.out_dir = cfg.out_dir.join(format!("T{t}"));
        let outcome = run_training::<S>(&sub)?;
        let acc = outcome.final_test_acc.ok_or_else(|| {
            CliError::Config("sweep-t needs epochs >= 1 to measure accuracy".into())
        })?;
        println!("T = {t}: test_acc {acc:.4}");
        rows.push((t, acc));
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err("cannot create", &cfg.out_dir, e))?;
    let sweep_path = cfg.out_dir.join("sweep.csv");
    let mut csv = String::from("T,test_acc\n");
    for (t, acc) in &rows {
        csv.push_str(&format!("{t},{acc}\n"));
    }
    fs::write(&sweep_path, csv).map_err(|e| io_err("cannot write", &sweep_path, e))?;

    if rows.len() > 1 {
        let (t_min, acc_min) = rows[0];
        let (t_max, acc_max) = rows[rows.len() - 1];
        if acc_max >= acc_min {
            println!(
                "trend: accuracy at T = {t_max} ({acc_max:.4}) >= T = {t_min} ({acc_min:.4}), \
                 longer windows helped"
            );
        } else {
            println!(
                "trend: accuracy at T = {t_max} ({acc_max:.4}) < T = {t_min} ({acc_min:.4}), \
                 against the expected trend at this scale"
            );
        }
    }
    Ok(rows)
}
