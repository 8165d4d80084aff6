use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inkwash_core::classifier::{self, benchmark_dataset, ClassifierConfig, Stage};
use inkwash_core::detector::{self, DetectionSample, DetectorConfig};
use inkwash_core::metrics::evaluate_restoration;
use inkwash_core::pipeline::{run_pipeline, Models, PipelineConfig, RunSummary, SlideInput};
use inkwash_core::restorer::{domain_crops, train_restorer, Density, RestorerConfig};
use inkwash_core::simulator::{build_benchmark, synthesize_clean_tiles, Benchmark, CleanTile};
use inkwash_core::tiles::{reassemble, slice_slide, SlideManifest, TileSet, MANIFEST_FILE, NATIVE_TILE_SIZE};
use inkwash_core::{Error, Result};

#[derive(Parser)]
#[command(name = "inkwash", version, about = "Remove marker ink from histology slide tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a slide image into a tile grid with a manifest
    Slice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = NATIVE_TILE_SIZE)]
        tile_size: u32,
        /// Defaults to the input file stem
        #[arg(long)]
        slide_id: Option<String>,
    },
    /// Build a paired clean/inked benchmark
    SimulateInk {
        /// Directory of square clean PNG tiles
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Generate this many synthetic clean tiles instead
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 256)]
        tile_size: u32,
        /// Defaults to one pair per clean tile
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one classifier stage on a benchmark
    TrainClassifier {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Train the ink and cluster detector on a benchmark
    TrainDetector {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        input_size: Option<u32>,
    },
    /// Train the restorer of one density domain on a benchmark
    TrainRestorer {
        #[arg(long)]
        density: Density,
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        input_size: Option<u32>,
    },
    /// Run the full cleaning pipeline
    Clean {
        /// Slide image, sliced-slide directory, or directory of slide images
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Fill colour for background-only ink tiles, as R,G,B
        #[arg(long, value_parser = parse_rgb)]
        background_fill: Option<[u8; 3]>,
    },
    /// Score restorations against a benchmark's clean ground truth
    Evaluate {
        #[arg(long)]
        benchmark: PathBuf,
        /// Directory with `<pair id>.png` or `<pair id>/<pair id>.png`
        #[arg(long)]
        restored: Option<PathBuf>,
        /// Where to write quality.csv and quality.json
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Stitch a tile directory back into one image
    Reassemble {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Benchmark directory written by simulate-ink
    #[arg(long)]
    benchmark: PathBuf,
    /// Directory receiving the checkpoint and training log
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_rgb(s: &str) -> std::result::Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected R,G,B, got {s:?}"));
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("bad channel value {p:?}"))?;
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn simulate(
    input: Option<PathBuf>,
    synthetic: Option<usize>,
    tile_size: u32,
    pairs: Option<usize>,
    output: &Path,
    seed: u64,
) -> Result<()> {
    let clean: Vec<CleanTile> = match (input, synthetic) {
        (_, Some(n)) => synthesize_clean_tiles(n, tile_size, seed),
        (Some(dir), None) => png_files(&dir)?
            .into_iter()
            .map(|p| {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("tile").to_string();
                Ok(CleanTile::new(id, image::open(&p)?.to_rgb8()))
            })
            .collect::<Result<_>>()?,
        (None, None) => return Err(Error::InvalidInput("either --input or --synthetic is required".into())),
    };
    let n = pairs.unwrap_or(clean.len());
    let bench = build_benchmark(&clean, n, seed)?;
    bench.write_dir(output)?;
    println!("wrote {} pairs to {}", bench.pairs.len(), output.display());
    Ok(())
}

fn train_classifier_cmd(stage: u8, args: &TrainArgs, epochs: Option<usize>, lr: Option<f64>) -> Result<()> {
    let stage = Stage::from_number(stage)?;
    let bench = Benchmark::read_dir(&args.benchmark)?;
    let data = benchmark_dataset(&bench, stage);
    let mut cfg = ClassifierConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    let model = classifier::build_model(&cfg)?;
    let (model, log) = classifier::train_stage(model, &data, stage, &cfg)?;
    create_dir(&args.output)?;
    model.save(&args.output.join(stage.checkpoint_name()))?;
    write_text(
        &args.output.join(format!("classifier_stage{}_log.csv", stage.number())),
        &log.to_csv(),
    )?;
    if let Some(best) = log.best() {
        println!(
            "stage {}: best epoch {} val_acc {:.4}",
            stage.number(),
            best.epoch,
            best.val_acc
        );
    }
    Ok(())
}

fn train_detector_cmd(args: &TrainArgs, iterations: Option<usize>, input_size: Option<u32>) -> Result<()> {
    let bench = Benchmark::read_dir(&args.benchmark)?;
    let samples: Vec<DetectionSample> = bench.pairs.iter().map(DetectionSample::from).collect();
    let mut cfg = DetectorConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    if let Some(s) = input_size {
        cfg.input_size = s;
    }
    let (det, log) = detector::train_detector(&samples, &cfg)?;
    create_dir(&args.output)?;
    det.save(&args.output.join(detector::CHECKPOINT_NAME))?;
    write_text(&args.output.join("detector_log.csv"), &log.to_csv())?;
    println!("detector trained for {} iterations", cfg.iterations);
    Ok(())
}

fn train_restorer_cmd(
    density: Density,
    args: &TrainArgs,
    epochs: Option<usize>,
    input_size: Option<u32>,
) -> Result<()> {
    let bench = Benchmark::read_dir(&args.benchmark)?;
    let data = domain_crops(&bench.pairs, density, args.seed);
    let mut cfg = RestorerConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = input_size {
        cfg.input_size = s;
    }
    let (weights, log) = train_restorer(&data, density, &cfg)?;
    create_dir(&args.output)?;
    weights.save(&args.output.join(density.checkpoint_name()))?;
    write_text(&args.output.join(format!("restorer_{density}_log.csv")), &log.to_csv())?;
    println!(
        "{density} restorer trained on {} inked / {} clean crops",
        data.inked.len(),
        data.clean.len()
    );
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let counts: Vec<String> = s.status_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{}: {} (background filled {}, restored on tissue {}) -> {}",
        s.slide_id,
        counts.join(" "),
        s.background_filled,
        s.restorer_invocations,
        s.output_image.display()
    );
}

/// Returns the number of tiles that failed across all processed slides.
fn clean_cmd(input: &Path, cfg: &PipelineConfig, output: &Path) -> Result<usize> {
    let models = Models::load(cfg)?;
    let mut jobs: Vec<(SlideInput, PathBuf)> = Vec::new();
    if input.is_dir() && !input.join(MANIFEST_FILE).exists() {
        for path in png_files(input)? {
            let slide = SlideInput::open(&path)?;
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("slide").to_string();
            jobs.push((slide, output.join(id)));
        }
        if jobs.is_empty() {
            return Err(Error::InvalidInput(format!("no slide images in {}", input.display())));
        }
    } else {
        jobs.push((SlideInput::open(input)?, output.to_path_buf()));
    }
    let mut failed = 0;
    for (slide, out) in jobs {
        create_dir(&out)?;
        let summary = run_pipeline(slide, &models, cfg, &out)?;
        print_summary(&summary);
        failed += summary.failed();
    }
    Ok(failed)
}

fn evaluate_cmd(benchmark: &Path, restored: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let bench = Benchmark::read_dir(benchmark)?;
    let images = bench
        .pairs
        .iter()
        .map(|p| {
            let Some(dir) = restored else { return Ok(None) };
            let flat = dir.join(format!("{}.png", p.id));
            let nested = dir.join(&p.id).join(format!("{}.png", p.id));
            match [flat, nested].into_iter().find(|c| c.exists()) {
                Some(path) => Ok(Some(image::open(path)?.to_rgb8())),
                None => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_restoration(&bench.pairs, &images)?;
    print!("{}", report.to_table());
    if let Some(out) = output {
        create_dir(out)?;
        write_text(&out.join("quality.csv"), &report.to_csv())?;
        write_text(&out.join("quality.json"), &report.to_json()?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Slice {
            input,
            output,
            tile_size,
            slide_id,
        } => {
            let image = image::open(&input)?.to_rgb8();
            let id = slide_id.unwrap_or_else(|| {
                input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("slide")
                    .to_string()
            });
            let (tiles, manifest) = slice_slide(&image, tile_size, &id)?;
            tiles.write_dir(&output)?;
            manifest.write(&output.join(MANIFEST_FILE))?;
            println!("{}: {}x{} tiles", id, manifest.grid_rows, manifest.grid_cols);
        }
        Command::SimulateInk {
            input,
            synthetic,
            tile_size,
            pairs,
            output,
            seed,
        } => simulate(input, synthetic, tile_size, pairs, &output, seed)?,
        Command::TrainClassifier {
            stage,
            common,
            epochs,
            learning_rate,
        } => train_classifier_cmd(stage, &common, epochs, learning_rate)?,
        Command::TrainDetector {
            common,
            iterations,
            input_size,
        } => train_detector_cmd(&common, iterations, input_size)?,
        Command::TrainRestorer {
            density,
            common,
            epochs,
            input_size,
        } => train_restorer_cmd(density, &common, epochs, input_size)?,
        Command::Clean {
            input,
            config,
            output,
            seed,
            workers,
            background_fill,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.worker_count = w;
            }
            if let Some(f) = background_fill {
                cfg.background_fill = f;
            }
            if clean_cmd(&input, &cfg, &output)? > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Evaluate {
            benchmark,
            restored,
            output,
        } => evaluate_cmd(&benchmark, restored.as_deref(), output.as_deref())?,
        Command::Reassemble { input, output } => {
            let manifest = SlideManifest::read(&input.join(MANIFEST_FILE))?;
            let tiles = TileSet::read_dir(&input, &manifest)?;
            reassemble(&tiles, &manifest)?.save(&output)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
