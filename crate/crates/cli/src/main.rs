use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gicx_core::backbone::Model;
use gicx_core::codec::Bitstream;
use gicx_core::metrics::{generate_toy_dataset, read_ppm, write_ppm, ToyDatasetSpec, ToyKind};
use gicx_core::pipeline::{
    self, describe_breakdown, sample_seed, Preset, RunConfig, EVAL_CSV_HEADER, SWEEP_CSV_HEADER,
};
use gicx_core::{Error, Result};

const AFTER_HELP: &str = "\
Configuration precedence: --preset, then --config FILE (flat `key = value`
lines, `#` comments), then --set key=value, then the dedicated flags.
`gicx config` prints every key.

CSV schemas:
  sweep: sc,sf,image,psnr,ssim,bpp
         one row per (image, cell), then one `mean` row per cell
  eval:  image,psnr,ssim,bpp,bpp_std
         one row per image with bpp_std empty, then a `mean` row

Exit codes: 0 success, 1 other failure (i/o, ...), 2 usage or configuration,
3 malformed or incompatible bitstream, 4 numeric failure.";

#[derive(Parser, Debug)]
#[command(name = "gicx", version, about = "Generative image codec: learned embeddings plus compression-guided diffusion", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Base preset.
    #[arg(long, global = true, default_value = "toy", value_parser = ["toy", "paper"])]
    preset: String,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compression guidance scale.
    #[arg(long, global = true)]
    sc: Option<f64>,
    /// Classifier-free guidance scale.
    #[arg(long, global = true)]
    sf: Option<f64>,
    /// Sampler steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// DDIM stochasticity in [0, 1].
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Number of decompressions with distinct seeds.
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the latent codec and denoiser on a directory of PPM images.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-step training loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress one PPM image to a .gicx file.
    Compress {
        image: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-step inversion loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Reconstruct PPM image(s) from a .gicx file.
    Decompress {
        input: PathBuf,
        /// Output image; with several samples `name_<i>.ppm` is written instead.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Full-factorial s_c × s_f grid over a corpus.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 25.0, 75.0, 215.0])]
        sc_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.95])]
        sf_list: Vec<f64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compress and decompress every image of a corpus.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write a procedural toy corpus as PPM files.
    GenDataset {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value = "mixed")]
        kind: String,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(run.preset.parse::<Preset>()?);
    if let Some(path) = &run.config {
        cfg.apply_file(path)?;
    }
    for kv in &run.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(p) = &run.checkpoint {
        cfg.checkpoint = p.clone();
    }
    if let Some(v) = run.seed {
        cfg.seed = v;
    }
    if let Some(v) = run.sc {
        cfg.sc = v;
    }
    if let Some(v) = run.sf {
        cfg.sf = v;
    }
    if let Some(v) = run.steps {
        cfg.steps = v;
    }
    if let Some(v) = run.eta {
        cfg.eta = v;
    }
    if let Some(v) = run.samples {
        cfg.samples = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn sample_path(out: &Path, index: usize, total: usize) -> PathBuf {
    if total == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "ppm".into());
    out.with_file_name(format!("{stem}_{index}.{ext}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.run)?;
    match cli.command {
        Command::Config => print!("{cfg}"),
        Command::Train { data, out, log } => {
            let images: Vec<_> = pipeline::load_corpus(&data)?.into_iter().map(|(_, x)| x).collect();
            println!("training on {} images", images.len());
            let trained = pipeline::train(&images, &cfg)?;
            if let Some(last) = trained.ae_losses.last() {
                println!("autoencoder final loss {last:.6e}");
            }
            let losses = &trained.log.losses;
            let tail = &losses[losses.len().saturating_sub(100)..];
            if let Some(last) = losses.last() {
                println!("denoiser final loss {last:.6e}");
                println!("denoiser mean loss over last {} steps {:.6e}", tail.len(), tail.iter().sum::<f64>() / tail.len() as f64);
            }
            trained.model.save(&out)?;
            println!("model id {:016x}", trained.model.id());
            if let Some(log) = log {
                write_file(&log, trained.log.to_csv().as_bytes())?;
            }
        }
        Command::Compress { image, out, log } => {
            let model = Model::load(&cfg.checkpoint)?;
            let x = read_ppm(&image)?;
            let c = pipeline::compress(&model, &x, &cfg)?;
            write_file(&out, &c.bytes)?;
            println!("{}", describe_breakdown(&c.breakdown, &c.bitstream.header));
            println!("inversion final loss {:.6e}", c.inversion.final_loss);
            if let Some(log) = log {
                write_file(&log, c.inversion.log.to_csv().as_bytes())?;
            }
        }
        Command::Decompress { input, out } => {
            let model = Model::load(&cfg.checkpoint)?;
            let stream = Bitstream::read(&input)?;
            for i in 0..cfg.samples {
                let y = pipeline::decompress(&model, &stream, sample_seed(cfg.seed, i))?;
                let path = sample_path(&out, i, cfg.samples);
                write_ppm(&path, &y)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep {
            data,
            sc_list,
            sf_list,
            out,
        } => {
            let model = Model::load(&cfg.checkpoint)?;
            let corpus = pipeline::load_corpus(&data)?;
            let rows = pipeline::sweep(&model, &corpus, &sc_list, &sf_list, &cfg)?;
            write_file(&out, pipeline::sweep_csv(&rows).as_bytes())?;
            println!("{SWEEP_CSV_HEADER} (corpus means)");
            for (s_c, s_f, q) in pipeline::sweep_means(&rows) {
                println!("{s_c},{s_f},mean,{:.4},{:.4},{:.4}", q.psnr, q.ssim, q.bpp);
            }
        }
        Command::Eval { data, out } => {
            let model = Model::load(&cfg.checkpoint)?;
            let corpus = pipeline::load_corpus(&data)?;
            let report = pipeline::evaluate(&model, &corpus, &cfg)?;
            write_file(&out, report.to_csv().as_bytes())?;
            let m = report.mean;
            println!("{EVAL_CSV_HEADER}");
            println!("mean,{:.4},{:.4},{:.4},{:.4}", m.psnr, m.ssim, m.bpp, report.bpp_std);
        }
        Command::GenDataset { out, count, size, kind } => {
            let images = generate_toy_dataset(&ToyDatasetSpec {
                count,
                height: size,
                width: size,
                seed: cfg.seed,
                kind: kind.parse::<ToyKind>().map_err(|e| Error::Config(e.to_string()))?,
            })?;
            std::fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.display().to_string(),
                source,
            })?;
            for (i, x) in images.iter().enumerate() {
                write_ppm(out.join(format!("{i:03}.ppm")), x)?;
            }
            println!("wrote {} images to {}", images.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Format { .. } | Error::Decode { .. } | Error::Incompatible(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
