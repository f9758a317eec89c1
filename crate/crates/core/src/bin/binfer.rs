use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use binfer::archmodel::{self, CycleReport, PlanOptions, ResourceBudget};
use binfer::formats::{
    self, arch_to_toml, fold_model, load_arch, write_predictions_csv, LabeledImage, ModelFile,
    WeightFile, WeightLayer,
};
use binfer::layers::{run_batch, Model, Prediction};
use binfer::pipeline::{run_streaming, thread_cap};
use binfer::verify::{random_fixed, run_verify, BnScale, Instance, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "binfer",
    version,
    about = "Binary CNN inference and accelerator cycle modeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sequential,
    Streaming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ImageFormat {
    /// CIFAR-10 binary records (label byte + 3072 pixels).
    Cifar,
    /// 3072 channel-major pixel bytes per image, no label.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(clap::Args)]
struct Artifacts {
    /// Network description (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Packed weight file.
    #[arg(long)]
    weights: PathBuf,
    /// Folded threshold file.
    #[arg(long)]
    thresholds: PathBuf,
}

#[derive(clap::Args)]
struct Images {
    /// Image file to classify.
    #[arg(long, conflicts_with = "random")]
    images: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cifar")]
    format: ImageFormat,
    /// Number of images to read (default: all).
    #[arg(long)]
    count: Option<usize>,
    /// Classify this many random images instead of reading a file.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Fold batch-norm parameters of a model into a threshold file.
    Fold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify images and write predictions as CSV.
    Infer {
        #[command(flatten)]
        artifacts: Artifacts,
        #[command(flatten)]
        images: Images,
        #[arg(long, value_enum, default_value = "sequential")]
        mode: Mode,
        /// Images processed per call; predictions are written after each batch.
        #[arg(long, default_value_t = 512)]
        batch: usize,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cycle, throughput and resource estimate for given per-layer parameters.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// Per-layer UF/P/I (TOML).
        #[arg(long)]
        arch: PathBuf,
        #[arg(long, default_value_t = 90.0)]
        freq_mhz: f64,
        /// Measured per-layer cycle counts used for FPS instead of estimates.
        #[arg(long, value_delimiter = ',')]
        measured: Option<Vec<u64>>,
        /// Budget and LUT cost model, e.g. "luts=433200,brams=2060,dsps=2800".
        #[arg(long, default_value = "")]
        budget: String,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Choose balanced per-layer UF/P under a resource budget.
    Plan {
        #[arg(long)]
        model: PathBuf,
        /// e.g. "luts=433200,brams=2060,dsps=2800,overhead=calibrated".
        #[arg(long, default_value = "")]
        budget: String,
        #[arg(long, default_value_t = 90.0)]
        freq_mhz: f64,
        /// Allow every divisor of the filter volume as UF.
        #[arg(long)]
        full_space: bool,
        /// Write the chosen parameters here (TOML).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Check the packed path against the reference oracle on random instances.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: u64,
        /// Draw a fresh random small network per case.
        #[arg(long)]
        random_networks: bool,
        /// Flip one weight in the packed model of every case (should fail).
        #[arg(long)]
        inject_bitflip: bool,
        /// Directory for a reproducer of the first failing case.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Time the software kernels.
    Bench {
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long, default_value_t = 64)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write random weights, batch-norm parameters and images for a model.
    Gen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model file with random batch-norm blocks added.
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        weights_out: PathBuf,
        /// Also write this many random raw images.
        #[arg(long, requires = "images_out")]
        images: Option<usize>,
        #[arg(long)]
        images_out: Option<PathBuf>,
    },
}

fn freq_hz(mhz: f64) -> Result<f64> {
    if !(mhz > 0.0 && mhz.is_finite()) {
        bail!("frequency must be positive, got {mhz} MHz");
    }
    Ok(mhz * 1e6)
}

fn load_model(a: &Artifacts) -> Result<Model> {
    formats::load_model(&a.model, &a.weights, &a.thresholds).with_context(|| {
        format!(
            "loading {} with {} and {}",
            a.model.display(),
            a.weights.display(),
            a.thresholds.display()
        )
    })
}

fn load_images(m: &Model, im: &Images) -> Result<Vec<LabeledImage>> {
    if let Some(n) = im.random {
        let mut rng = ChaCha8Rng::seed_from_u64(im.seed);
        return Ok((0..n)
            .map(|_| LabeledImage {
                label: None,
                image: random_fixed(&mut rng, m.spec().input),
            })
            .collect());
    }
    let Some(path) = &im.images else {
        bail!("pass --images FILE or --random N");
    };
    let bytes =
        std::fs::read(path).with_context(|| format!("reading images {}", path.display()))?;
    Ok(match im.format {
        ImageFormat::Cifar => formats::parse_cifar10(&bytes, im.count)?,
        ImageFormat::Raw => formats::parse_raw(&bytes, im.count)?,
    })
}

fn configure_threads() -> Result<()> {
    if let Some(n) = thread_cap() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn infer_all(
    model: &Model,
    images: &[LabeledImage],
    mode: Mode,
    batch: usize,
) -> Result<Vec<Prediction>> {
    let mut preds = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let xs: Vec<_> = chunk.iter().map(|l| l.image.clone()).collect();
        preds.extend(match mode {
            Mode::Sequential => run_batch(model, &xs)?,
            Mode::Streaming => run_streaming(model, &xs)?,
        });
    }
    Ok(preds)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn print_report(r: &CycleReport, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Text => print!("{}", r.to_text()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(r)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fold { model, out } => {
            let mf = ModelFile::load(&model)
                .with_context(|| format!("reading model {}", model.display()))?;
            let table = fold_model(&mf)?;
            table.save(&out)?;
            let channels: usize = table.layers.iter().map(Vec::len).sum();
            eprintln!(
                "wrote {} threshold blocks ({channels} channels) to {}",
                table.layers.len(),
                out.display()
            );
        }
        Command::Infer {
            artifacts,
            images,
            mode,
            batch,
            out,
        } => {
            configure_threads()?;
            let model = load_model(&artifacts)?;
            let imgs = load_images(&model, &images)?;
            if imgs.is_empty() {
                bail!("no images to classify");
            }
            let start = Instant::now();
            let preds = infer_all(&model, &imgs, mode, batch)?;
            let secs = start.elapsed().as_secs_f64();
            let labels: Vec<_> = imgs.iter().map(|i| i.label).collect();
            let mut w = output(out.as_deref())?;
            write_predictions_csv(&mut w, &labels, &preds)?;
            w.flush()?;
            let labeled: Vec<_> = labels
                .iter()
                .zip(&preds)
                .filter_map(|(l, p)| l.map(|l| l as usize == p.class))
                .collect();
            if !labeled.is_empty() {
                let correct = labeled.iter().filter(|&&c| c).count();
                eprintln!(
                    "accuracy: {correct}/{} ({:.2}%)",
                    labeled.len(),
                    100.0 * correct as f64 / labeled.len() as f64
                );
            }
            eprintln!(
                "{} images in {secs:.3} s ({:.1} images/s, {mode:?})",
                preds.len(),
                preds.len() as f64 / secs
            );
        }
        Command::Estimate {
            model,
            arch,
            freq_mhz,
            measured,
            budget,
            format,
        } => {
            let freq = freq_hz(freq_mhz)?;
            let mf = ModelFile::load(&model)?;
            let arch = load_arch(&arch, &mf.spec)?;
            let budget = ResourceBudget::parse(&budget)?;
            let report = CycleReport::build(&mf.spec, &arch, freq, measured.as_deref(), &budget)?;
            print_report(&report, format)?;
        }
        Command::Plan {
            model,
            budget,
            freq_mhz,
            full_space,
            out,
            format,
        } => {
            let freq = freq_hz(freq_mhz)?;
            let mf = ModelFile::load(&model)?;
            let budget = ResourceBudget::parse(&budget)?;
            let plan = archmodel::plan(&mf.spec, &budget, freq, PlanOptions { full_space })?;
            if let Some(p) = out {
                std::fs::write(&p, arch_to_toml(&plan.arch)?)?;
            }
            print_report(&plan.report, format)?;
            if format == ReportFormat::Text {
                println!(
                    "max cycle_est: {}  total UF*P: {}",
                    plan.max_cycles, plan.total_lanes
                );
            }
        }
        Command::Verify {
            model,
            seed,
            cases,
            random_networks,
            inject_bitflip,
            dump,
        } => {
            let mf = ModelFile::load(&model)?;
            if cases == 0 {
                eprintln!("warning: 0 cases requested, nothing checked");
            }
            let opts = VerifyOptions {
                inject_bitflip,
                random_networks,
            };
            let report = run_verify(&mf.spec, seed, cases, &opts)?;
            println!(
                "cases: {}  mismatches: {}",
                report.cases,
                report.failures.len()
            );
            if let Some(f) = report.failures.first() {
                println!("FAIL case {} (seed {}): {}", f.case, f.seed, f.mismatch);
                println!(
                    "reproduce: binfer verify --model {} --seed {} --cases {}",
                    model.display(),
                    f.seed,
                    f.case + 1
                );
                if let Some(dir) = dump {
                    f.instance.dump(&dir)?;
                    println!("reproducer written to {}", dir.display());
                }
                return Ok(ExitCode::from(2));
            }
            println!("PASS");
        }
        Command::Bench {
            artifacts,
            images,
            seed,
        } => {
            configure_threads()?;
            let model = load_model(&artifacts)?;
            let im = Images {
                images: None,
                format: ImageFormat::Raw,
                count: None,
                random: Some(images.max(1)),
                seed,
            };
            let imgs = load_images(&model, &im)?;
            for mode in [Mode::Sequential, Mode::Streaming] {
                let start = Instant::now();
                let preds = infer_all(&model, &imgs, mode, imgs.len())?;
                let secs = start.elapsed().as_secs_f64();
                println!(
                    "{:<10} {:>6} images  {:>9.3} s  {:>9.1} images/s",
                    format!("{mode:?}").to_lowercase(),
                    preds.len(),
                    secs,
                    preds.len() as f64 / secs
                );
            }
        }
        Command::Gen {
            model,
            seed,
            model_out,
            weights_out,
            images,
            images_out,
        } => {
            let mf = ModelFile::load(&model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = Instance::random_scaled(&mf.spec, &mut rng, BnScale::Typical)?;
            inst.model_file().save(&model_out)?;
            let wf = WeightFile {
                layers: mf
                    .spec
                    .layers
                    .iter()
                    .zip(inst.packed_weights()?)
                    .map(|(l, weights)| WeightLayer {
                        kind: l.kind,
                        weights,
                    })
                    .collect(),
            };
            wf.save(&weights_out)?;
            if let (Some(n), Some(path)) = (images, images_out) {
                use rand::Rng;
                let bytes: Vec<u8> = (0..n * formats::images::CIFAR_PIXELS)
                    .map(|_| rng.gen())
                    .collect();
                std::fs::write(&path, bytes)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
