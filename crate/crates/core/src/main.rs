//! Command-line front end: data generation, noise forging, inspection,
//! training, evaluation. One command per invocation; exit codes are 0 for
//! success, 1 for usage/config errors, 2 for data/file errors, 3 for numeric
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use badlabel::config::RunConfig;
use badlabel::data::{
    gen_synthetic, load_dataset_dir, load_idx, load_labels, save_dataset, save_labels, Dataset,
    SyntheticSpec,
};
use badlabel::metrics::{
    accuracy, histogram_to_csv, loss_histogram, separability_auc, transition_to_csv,
};
use badlabel::noise::{
    apply_asymmetric, apply_idn, apply_symmetric, craft_badlabel, noise_rate, transition_matrix,
    BadLabelConfig, NoisyLabels,
};
use badlabel::rdm::{self, DivideConfig};
use badlabel::{nn, Error};

#[derive(Parser)]
#[command(name = "badlabel", version, about = "Label-noise laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset directory (train.csv and, for synthetic data, test.csv).
    GenData(GenDataArgs),
    /// Produce a noisy label file for an existing dataset.
    GenNoise(GenNoiseArgs),
    /// Report on a dataset/label-file pair: transition matrix, loss
    /// distribution, separability.
    Inspect(InspectArgs),
    /// Train a classifier on noisy labels.
    Train(TrainArgs),
    /// Evaluate one checkpoint, or a pair jointly, on a dataset's test split.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Synthetic3,
    MnistIdx,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long)]
    out: PathBuf,
    /// Training samples per class (synthetic3; test split gets half as many).
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Per-class Gaussian std (synthetic3).
    #[arg(long, default_value_t = 0.7)]
    std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// IDX image file (mnist-idx).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (mnist-idx).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Keep only the first LIMIT samples (mnist-idx).
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Symmetric,
    Asymmetric,
    Idn,
    Badlabel,
}

#[derive(Args)]
struct GenNoiseArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    kind: NoiseKind,
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Crafting epochs (badlabel).
    #[arg(long)]
    epochs: Option<usize>,
    /// Flag-update step size (badlabel).
    #[arg(long)]
    alpha: Option<f64>,
    /// Crafting learning rate (badlabel).
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden widths of the crafting net, comma-separated (badlabel).
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    /// Write the empirical transition matrix as CSV.
    #[arg(long)]
    transition_matrix: Option<PathBuf>,
    /// Write a clean/noisy loss histogram as CSV (needs --model).
    #[arg(long)]
    loss_dist: Option<PathBuf>,
    /// Checkpoint whose per-sample losses drive --loss-dist and --auc.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Print the clean/noisy loss separability AUC (needs --model).
    #[arg(long)]
    auc: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Standard,
    RobustDividemix,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ablation: classical EM instead of the variational mixture.
    #[arg(long)]
    no_bayes_gmm: bool,
    /// Ablation: skip the adversarial label perturbation.
    #[arg(long)]
    no_perturbation: bool,
    /// Ablation: accept divisions from unconverged mixture fits.
    #[arg(long)]
    no_filtering: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// One checkpoint, or two comma-separated for joint prediction.
    #[arg(long)]
    model: String,
    #[arg(long)]
    dataset: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // Accepted for interface compatibility; execution is single-threaded, so
    // results cannot depend on the value.
    let _ = std::env::var("BADLABEL_THREADS");
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> badlabel::Result<()> {
    match cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::GenNoise(a) => gen_noise(a),
        Cmd::Inspect(a) => inspect(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
    }
}

fn ensure_dir(dir: &Path) -> badlabel::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> badlabel::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenDataArgs) -> badlabel::Result<()> {
    ensure_dir(&a.out)?;
    match a.kind {
        DataKind::Synthetic3 => {
            let spec = SyntheticSpec {
                std: a.std,
                train_per_class: a.n,
                test_per_class: a.n.div_ceil(2),
                ..SyntheticSpec::default_three_class(a.seed)
            };
            let (train, test) = gen_synthetic(&spec)?;
            save_dataset(&a.out.join("train.csv"), &train)?;
            save_dataset(&a.out.join("test.csv"), &test)?;
            println!(
                "wrote {} train / {} test samples to {}",
                train.len(),
                test.len(),
                a.out.display()
            );
        }
        DataKind::MnistIdx => {
            let images = a.images.ok_or_else(|| {
                Error::Config("--images is required for --kind mnist-idx".into())
            })?;
            let labels = a.labels.ok_or_else(|| {
                Error::Config("--labels is required for --kind mnist-idx".into())
            })?;
            let ds = load_idx(&images, &labels, a.limit)?;
            save_dataset(&a.out.join("train.csv"), &ds)?;
            println!("wrote {} samples to {}", ds.len(), a.out.display());
        }
    }
    Ok(())
}

fn parse_arch(arch: &str) -> badlabel::Result<Vec<usize>> {
    arch.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid --arch entry `{p}`")))
        })
        .collect()
}

fn gen_noise(a: GenNoiseArgs) -> badlabel::Result<()> {
    let (train, _) = load_dataset_dir(&a.dataset)?;
    let labels: NoisyLabels = match a.kind {
        NoiseKind::Symmetric => apply_symmetric(&train, a.ratio, a.seed)?,
        NoiseKind::Asymmetric => apply_asymmetric(&train, a.ratio, a.seed, None)?,
        NoiseKind::Idn => apply_idn(&train, a.ratio, a.seed)?,
        NoiseKind::Badlabel => {
            let mut cfg = BadLabelConfig::synthetic_default(train.dim(), train.class_count, a.seed);
            if let Some(epochs) = a.epochs {
                let half = epochs / 2;
                let three_quarters = epochs * 3 / 4;
                cfg.epochs = epochs;
                cfg.sgd.schedule = vec![(half, 0.1), (three_quarters, 0.1)];
            }
            if let Some(alpha) = a.alpha {
                cfg.step_size = alpha;
            }
            if let Some(lr) = a.lr {
                cfg.sgd.learning_rate = lr;
            }
            if let Some(arch) = &a.arch {
                let mut dims = vec![train.dim()];
                dims.extend(parse_arch(arch)?);
                dims.push(train.class_count);
                cfg.mlp_dims = dims;
            }
            craft_badlabel(&train, a.ratio, &cfg)?.0
        }
    };
    save_labels(&a.out, &labels)?;
    println!(
        "wrote {} labels ({} kind, realized noise rate {:.4}) to {}",
        labels.records.len(),
        labels.kind,
        noise_rate(&labels),
        a.out.display()
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> badlabel::Result<()> {
    let (train, _) = load_dataset_dir(&a.dataset)?;
    let labels = load_labels(&a.noise)?;
    if labels.records.len() != train.len() {
        return Err(Error::Data(format!(
            "label file has {} records but dataset has {} samples",
            labels.records.len(),
            train.len()
        )));
    }
    println!(
        "kind {}, declared ratio {}, realized noise rate {:.4}",
        labels.kind,
        labels.ratio,
        noise_rate(&labels)
    );
    if let Some(path) = &a.transition_matrix {
        let (m, _) = transition_matrix(&labels, train.class_count);
        write_text(path, &transition_to_csv(&m))?;
        println!("transition matrix -> {}", path.display());
    }
    if a.loss_dist.is_some() || a.auc {
        let model_path = a.model.as_ref().ok_or_else(|| {
            Error::Config("--model is required for --loss-dist and --auc".into())
        })?;
        let model = nn::load_checkpoint(model_path)?;
        let noisy = labels.noisy_vec();
        let losses = nn::per_sample_loss(&model, &train.features, &noisy)?;
        let mask = labels.clean_mask();
        if let Some(path) = &a.loss_dist {
            let bins = loss_histogram(&losses, &mask, a.bins)?;
            write_text(path, &histogram_to_csv(&bins))?;
            println!("loss histogram -> {}", path.display());
        }
        if a.auc {
            println!("separability_auc = {:.6}", separability_auc(&losses, &mask)?);
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> badlabel::Result<()> {
    let (train, test) = load_dataset_dir(&a.dataset)?;
    let labels = load_labels(&a.noise)?;
    let noisy = labels.noisy_vec();
    if noisy.len() != train.len() {
        return Err(Error::Data(format!(
            "label file has {} records but dataset has {} samples",
            noisy.len(),
            train.len()
        )));
    }
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    ensure_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    match a.method {
        Method::Standard => {
            let dims = cfg.mlp_dims(train.dim(), train.class_count);
            let (model, metrics) = rdm::train_standard(
                &train,
                &noisy,
                test.as_ref(),
                &dims,
                &cfg.sgd,
                cfg.standard_epochs,
                cfg.standard_cp_weight,
                a.seed,
            )?;
            write_text(&a.out.join("metrics.csv"), &metrics.to_csv())?;
            nn::save_checkpoint(&model, &a.out.join("model.ckpt"))?;
            let (best, last) = metrics.track();
            println!("standard training done: best acc {best:.4}, last-10 mean {last:.4}");
        }
        Method::RobustDividemix => {
            let dc = DivideConfig {
                use_bayes_gmm: !a.no_bayes_gmm,
                use_perturbation: !a.no_perturbation,
                use_filtering: !a.no_filtering,
                ..cfg.divide_config(train.dim(), train.class_count, a.seed)
            };
            let out = rdm::run(&train, &noisy, test.as_ref(), &dc)?;
            write_text(&a.out.join("metrics.csv"), &out.metrics.to_csv())?;
            nn::save_checkpoint(&out.pair.models[0], &a.out.join("model1.ckpt"))?;
            nn::save_checkpoint(&out.pair.models[1], &a.out.join("model2.ckpt"))?;
            let (best, last) = out.metrics.track();
            println!("robust dividemix done: best acc {best:.4}, last-10 mean {last:.4}");
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> badlabel::Result<()> {
    let (train, test) = load_dataset_dir(&a.dataset)?;
    let ds: &Dataset = test.as_ref().unwrap_or(&train);
    let split = if test.is_some() { "test" } else { "train" };
    let paths: Vec<&str> = a.model.split(',').collect();
    let pred = match paths.as_slice() {
        [one] => nn::predict(&nn::load_checkpoint(Path::new(one))?, &ds.features)?,
        [one, two] => {
            let m1 = nn::load_checkpoint(Path::new(one))?;
            let m2 = nn::load_checkpoint(Path::new(two))?;
            let p1 = nn::softmax(&nn::forward(&m1, &ds.features)?)?;
            let p2 = nn::softmax(&nn::forward(&m2, &ds.features)?)?;
            (0..ds.len())
                .map(|i| {
                    let r1 = p1.row(i);
                    let r2 = p2.row(i);
                    let mut best = 0;
                    for j in 1..r1.len() {
                        if r1[j] + r2[j] > r1[best] + r2[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect()
        }
        _ => {
            return Err(Error::Config(
                "--model takes one checkpoint, or two separated by a comma".into(),
            ))
        }
    };
    println!(
        "accuracy on the {split} split: {:.4}",
        accuracy(&pred, &ds.clean_labels)
    );
    Ok(())
}
