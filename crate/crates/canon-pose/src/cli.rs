//! Command-line interface: dataset preparation, training, evaluation, and
//! rendering as subcommands of one executable.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data/format
//! error, 3 numeric failure during training. Every error is printed to
//! stderr as one line with the prefix `ERROR <code>:`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datasets::{
    build_rotated_mnist, cache_dataset, glyph_stack, load_cache, load_idx, IdxFile, PhantomSpec,
    SplitTag,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsReport};
use crate::imaging::{normalize, Image};
use crate::model::{encode, load_checkpoint};
use crate::training::{apply_override, load_train_config, train, TrainConfig};

/// Default data directory: `$CANON_POSE_DATA` if set, else `data`.
fn data_dir() -> PathBuf {
    std::env::var_os("CANON_POSE_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Parser)]
#[command(
    name = "canon-pose",
    version,
    about = "Rotation-invariant adversarial autoencoder for canonical 2D pose recovery"
)]
struct Cli {
    /// Worker threads (1 enables determinism mode; default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build rotated-digit caches from MNIST IDX files (angles from
    /// Normal(0, pi^2/16)).
    PrepareMnist(PrepareMnistArgs),
    /// Build synthetic projection caches from an asymmetric blob phantom
    /// (angles uniform over the full circle, additive Gaussian noise).
    Synth(SynthArgs),
    /// Train the autoencoder with the critic on a prepared cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cache split: MSE and angle metrics.
    Eval(EvalArgs),
    /// Render a (ground truth, input, reconstruction) grid as PNG.
    Render(RenderArgs),
    /// Run one image through the model: predicted angle plus canonical
    /// reconstruction.
    Infer(InferArgs),
}

#[derive(Args)]
struct PrepareMnistArgs {
    /// IDX image file for the training split.
    #[arg(long)]
    train_images: Option<PathBuf>,
    /// IDX label file for the training split (count check only).
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// IDX image file for the test split.
    #[arg(long)]
    test_images: Option<PathBuf>,
    /// IDX label file for the test split (count check only).
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Truncate the training split to this many images.
    #[arg(long)]
    count: Option<usize>,
    /// Truncate the test split to this many images.
    #[arg(long)]
    test_count: Option<usize>,
    /// Generate a procedural glyph corpus instead of reading IDX files
    /// (for runs without the MNIST files at hand).
    #[arg(long, default_value_t = false)]
    glyphs: bool,
    /// Rotation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: $CANON_POSE_DATA or ./data].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Total projections; must equal --train + --test.
    #[arg(long, default_value_t = 20_000)]
    count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 40)]
    size: usize,
    /// Training split size.
    #[arg(long, default_value_t = 16_000)]
    train: usize,
    /// Test split size.
    #[arg(long, default_value_t = 4_000)]
    test: usize,
    /// Gaussian blob count of the phantom.
    #[arg(long, default_value_t = 7)]
    blobs: usize,
    /// Additive noise std on the normalized intensity scale.
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// Phantom and rotation seed.
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Output directory [default: $CANON_POSE_DATA or ./data].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config mirroring the training configuration field-for-field.
    /// Defaults: 300 epochs, lr 1e-4 decayed by 0.1 at epoch 200, weight
    /// decay 1e-5, 1 critic update per 4 decoder steps, batch 128,
    /// clip 0.01, D = 32.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value override applied on top of the config (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Resume from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training cache (overrides config).
    #[arg(long)]
    train_cache: Option<PathBuf>,
    /// Output directory for checkpoints and the log (overrides config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset cache to evaluate on.
    #[arg(long)]
    cache: PathBuf,
    /// Where to write metrics.json and metrics.csv (default: print only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Checkpoint to render with.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset cache to draw samples from.
    #[arg(long)]
    cache: PathBuf,
    /// Number of sample columns.
    #[arg(long, default_value_t = 8)]
    columns: usize,
    /// Output PNG path.
    #[arg(long, default_value = "grid.png")]
    out: PathBuf,
    /// Also render the worst-case sample next to the grid.
    #[arg(long, default_value_t = false)]
    worst: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to run.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image (grayscale PNG, same size as the checkpoint's input).
    #[arg(long)]
    image: PathBuf,
    /// Where to write the canonical reconstruction PNG.
    #[arg(long, default_value = "reconstruction.png")]
    out: PathBuf,
}

/// Entry point behind the binary; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("ERROR 1: {}", first_line(&e.to_string()));
            return 1;
        }
        Err(e) => {
            // --help / --version go to stdout with success.
            print!("{e}");
            return 0;
        }
    };

    if let Some(n) = cli.threads {
        // Ignore the error if a pool already exists (library callers).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }

    let outcome = match cli.command {
        Command::PrepareMnist(args) => prepare_mnist(args),
        Command::Synth(args) => synth(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Render(args) => run_render(args),
        Command::Infer(args) => run_infer(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("ERROR {code}: {e}");
            code
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("invalid arguments").to_string()
}

fn load_images(path: &Path, labels: Option<&Path>, what: &str) -> Result<Vec<Image>> {
    let images = load_idx(path)?.into_images(path)?;
    if let Some(labels_path) = labels {
        let labels = load_idx(labels_path)?;
        let IdxFile::Labels(labels) = labels else {
            return Err(Error::Format {
                path: labels_path.to_path_buf(),
                detail: "expected a label file".into(),
            });
        };
        if labels.len() != images.len() {
            return Err(Error::Data(format!(
                "{what}: {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
    }
    Ok(images)
}

fn prepare_mnist(args: PrepareMnistArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(data_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let (train_raw, test_raw) = if args.glyphs {
        let train_n = args.count.unwrap_or(8_000);
        let test_n = args.test_count.unwrap_or(1_000);
        (
            glyph_stack(train_n, 28, args.seed),
            glyph_stack(test_n, 28, args.seed.wrapping_add(1)),
        )
    } else {
        let train_images = args.train_images.ok_or_else(|| {
            Error::Config("--train-images is required unless --glyphs is set".into())
        })?;
        let test_images = args.test_images.ok_or_else(|| {
            Error::Config("--test-images is required unless --glyphs is set".into())
        })?;
        let mut train = load_images(&train_images, args.train_labels.as_deref(), "train")?;
        let mut test = load_images(&test_images, args.test_labels.as_deref(), "test")?;
        if let Some(n) = args.count {
            train.truncate(n);
        }
        if let Some(n) = args.test_count {
            test.truncate(n);
        }
        (train, test)
    };

    let train_split = build_rotated_mnist(&train_raw, SplitTag::Train, args.seed)?;
    let test_split = build_rotated_mnist(&test_raw, SplitTag::Test, args.seed.wrapping_add(1))?;

    let train_path = out.join("rotated-mnist-train.riae");
    let test_path = out.join("rotated-mnist-test.riae");
    cache_dataset(&train_split, &train_path)?;
    cache_dataset(&test_split, &test_path)?;
    println!(
        "wrote {} ({} samples) and {} ({} samples)",
        train_path.display(),
        train_split.len(),
        test_path.display(),
        test_split.len()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    if args.train + args.test != args.count {
        return Err(Error::Config(format!(
            "--count {} must equal --train {} + --test {}",
            args.count, args.train, args.test
        )));
    }
    let out = args.out.unwrap_or_else(data_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let spec = PhantomSpec::random(args.blobs, args.size, args.noise_std, args.seed);
    let train_split = crate::datasets::synth_projection_stack(
        &spec,
        args.train,
        SplitTag::Train,
        args.seed,
        0,
    )?;
    let test_split = crate::datasets::synth_projection_stack(
        &spec,
        args.test,
        SplitTag::Test,
        args.seed,
        args.train as u64,
    )?;

    let train_path = out.join("synth-5hdb-train.riae");
    let test_path = out.join("synth-5hdb-test.riae");
    cache_dataset(&train_split, &train_path)?;
    cache_dataset(&test_split, &test_path)?;
    println!(
        "wrote {} ({} samples) and {} ({} samples), {}x{} px",
        train_path.display(),
        train_split.len(),
        test_path.display(),
        test_split.len(),
        args.size,
        args.size
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::default(),
    };
    for spec in &args.overrides {
        apply_override(&mut cfg, spec)?;
    }
    if let Some(path) = args.train_cache {
        cfg.train_cache = path;
    }
    if let Some(path) = args.out {
        cfg.out_dir = path;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.train_cache.as_os_str().is_empty() {
        return Err(Error::Config(
            "no training cache configured (set train_cache in the config or pass --train-cache)"
                .into(),
        ));
    }
    let outcome = train(&cfg, args.resume.as_deref())?;
    println!(
        "trained {} epochs; checkpoint {} log {}",
        outcome.epochs_run,
        outcome.final_checkpoint.display(),
        outcome.log_path.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let split = load_cache(&args.cache)?;
    let report = evaluation::evaluate(&ckpt.model, &split)?;
    let echo = evaluation::echo_baseline(&split)?;
    println!("{}", report.to_json());
    println!("echo_baseline_mse: {echo:.9e}");
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let json_path = out.join("metrics.json");
        std::fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
        let csv_path = out.join("metrics.csv");
        let csv = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.to_csv_row());
        std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
        println!("wrote {} and {}", json_path.display(), csv_path.display());
    }
    Ok(())
}

fn run_render(args: RenderArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let split = load_cache(&args.cache)?;
    evaluation::render_triplet_grid(&ckpt.model, &split, args.columns, &args.out)?;
    println!("wrote {}", args.out.display());
    if args.worst {
        let worst = evaluation::worst_case(&ckpt.model, &split)?;
        let worst_path = args.out.with_file_name(format!(
            "worst-{}",
            args.out
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("worst.png")
        ));
        let rows = vec![
            evaluation::GridRow {
                label: "ground truth".into(),
                images: vec![worst.target.clone()],
            },
            evaluation::GridRow {
                label: "input".into(),
                images: vec![worst.input.clone()],
            },
            evaluation::GridRow {
                label: "reconstruction".into(),
                images: vec![worst.reconstruction.clone()],
            },
        ];
        evaluation::render_grid(&rows, &worst_path)?;
        println!(
            "wrote {} (sample {}, per-pixel MSE {:.6})",
            worst_path.display(),
            worst.index,
            worst.mse_per_pixel
        );
    }
    Ok(())
}

fn load_png_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = decoded.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<f32> = gray.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    normalize(&Image::from_shape_vec(h, w, data)?)
}

fn run_infer(args: InferArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let size = ckpt.model.spec.input_size;
    let img = load_png_image(&args.image)?;
    if img.height() != size || img.width() != size {
        return Err(Error::Dimension(format!(
            "input image is {}x{}, checkpoint expects {size}x{size}",
            img.height(),
            img.width()
        )));
    }
    let mut batch = ndarray::Array4::<f32>::zeros((1, 1, size, size));
    batch
        .index_axis_mut(ndarray::Axis(0), 0)
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(img.pixels());
    let codes = encode(&ckpt.model.spec, &ckpt.model.encoder, batch.view())?;
    let z = crate::model::codes_to_content(&codes)?;
    let recon = crate::model::decode(&ckpt.model.spec, &ckpt.model.decoder, z.view())?;
    let recon_img = Image::new(
        recon
            .index_axis(ndarray::Axis(0), 0)
            .index_axis(ndarray::Axis(0), 0)
            .to_owned(),
    )?;
    evaluation::render_grid(
        &[evaluation::GridRow {
            label: "reconstruction".into(),
            images: vec![recon_img],
        }],
        &args.out,
    )?;
    let theta_hat = codes[0].theta_hat.radians();
    println!(
        "{}",
        serde_json::json!({
            "theta_hat_radians": theta_hat,
            "theta_hat_wrapped": codes[0].theta_hat.wrapped().radians(),
            "reconstruction": args.out.display().to_string(),
        })
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_projection_stack as synth_stack, SourceTag};

    fn run_vec(args: &[&str]) -> i32 {
        run(args.iter().map(|s| s.to_string()))
    }

    #[test]
    fn synth_and_eval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let code = run_vec(&[
            "canon-pose",
            "synth",
            "--count",
            "24",
            "--train",
            "16",
            "--test",
            "8",
            "--size",
            "32",
            "--seed",
            "17",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let train = load_cache(&out.join("synth-5hdb-train.riae")).unwrap();
        assert_eq!(train.len(), 16);
        assert_eq!(train.source_tag, SourceTag::Synth5hdb);
        assert_eq!(train.image_size().unwrap(), 32);
    }

    #[test]
    fn synth_count_mismatch_is_usage_error() {
        let code = run_vec(&[
            "canon-pose",
            "synth",
            "--count",
            "10",
            "--train",
            "16",
            "--test",
            "8",
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run_vec(&["canon-pose", "synth", "--bogus", "1"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_vec(&["canon-pose", "--help"]), 0);
        assert_eq!(run_vec(&["canon-pose", "train", "--help"]), 0);
    }

    #[test]
    fn missing_checkpoint_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("c.riae");
        let spec = PhantomSpec::random(7, 32, 0.1, 17);
        let split = synth_stack(&spec, 4, SplitTag::Test, 1, 0).unwrap();
        cache_dataset(&split, &cache).unwrap();
        let code = run_vec(&[
            "canon-pose",
            "eval",
            "--checkpoint",
            "missing.ckpt",
            "--cache",
            cache.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn train_smoke_one_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        assert_eq!(
            run_vec(&[
                "canon-pose",
                "synth",
                "--count",
                "24",
                "--train",
                "16",
                "--test",
                "8",
                "--size",
                "32",
                "--seed",
                "17",
                "--out",
                out.to_str().unwrap(),
            ]),
            0
        );
        let run_dir = dir.path().join("run");
        let code = run_vec(&[
            "canon-pose",
            "train",
            "--train-cache",
            out.join("synth-5hdb-train.riae").to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
            "--override",
            "epochs=1",
            "--override",
            "batch_size=8",
            "--override",
            "content_dim=8",
        ]);
        assert_eq!(code, 0);
        let ckpt = run_dir.join("final.ckpt");
        assert!(ckpt.exists());

        // Evaluate and render from the fresh checkpoint.
        let metrics_dir = dir.path().join("metrics");
        let code = run_vec(&[
            "canon-pose",
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--cache",
            out.join("synth-5hdb-test.riae").to_str().unwrap(),
            "--out",
            metrics_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(metrics_dir.join("metrics.json").exists());
        assert!(metrics_dir.join("metrics.csv").exists());

        let grid = dir.path().join("grid.png");
        let code = run_vec(&[
            "canon-pose",
            "render",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--cache",
            out.join("synth-5hdb-test.riae").to_str().unwrap(),
            "--columns",
            "4",
            "--out",
            grid.to_str().unwrap(),
            "--worst",
        ]);
        assert_eq!(code, 0);
        assert!(grid.exists());
    }
}
