use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mambaic::codec::{compress, decode_image, padded_extent, CodedImage};
use mambaic::error::{BitstreamError, Error};
use mambaic::image_io::{load_image, save_image};
use mambaic::metrics::{bd_rate, bpp, RdCurve};
use mambaic::pipeline::{evaluate, rd_curve, substream_report};
use mambaic::selftest::run_selftest;
use mambaic::transform::{init_weights, load_weights, manifest, save_weights, ModelConfig, ModelWeights};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_WEIGHTS: u8 = 4;
const EXIT_BITSTREAM: u8 = 5;
const EXIT_SELFTEST: u8 = 6;
const EXIT_VERSION: u8 = 7;
const EXIT_TRUNCATED: u8 = 8;

#[derive(Parser)]
#[command(name = "mambaic", version, about = "Learned image codec with state-space transforms")]
struct Cli {
    /// Seed for weight initialization and synthetic inputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The full-size architecture.
    Full,
    /// A narrow variant with the same topology.
    Small,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Small => ModelConfig::small(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress an image.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report the padded extents.
        #[arg(long)]
        pad_report: bool,
    },
    /// Reconstruct an image from a bitstream.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode and decode in memory and print one rate-distortion row.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Also write the bitstream here.
        #[arg(long)]
        bitstream: Option<PathBuf>,
        /// Print per-substream sizes to stderr.
        #[arg(long)]
        substreams: bool,
    },
    /// Average rate-distortion points of a directory, one row per weight file.
    RdCurve {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        weights: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// BD-rate of a test curve against an anchor curve.
    BdRate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Run internal consistency checks.
    Selftest {
        /// Weights to test with; seeded random weights otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
    },
    /// Write seeded random weights.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        lambda_index: usize,
    },
    /// List every parameter with its shape.
    Manifest {
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Image(_) => EXIT_IO,
        Error::Weights(_) => EXIT_WEIGHTS,
        Error::Bitstream(BitstreamError::WeightMismatch { .. }) => EXIT_WEIGHTS,
        Error::Bitstream(BitstreamError::UnsupportedVersion(_)) => EXIT_VERSION,
        Error::Bitstream(BitstreamError::Truncated(_)) => EXIT_TRUNCATED,
        Error::Bitstream(_) => EXIT_BITSTREAM,
        _ => EXIT_RUNTIME,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure {
        code: exit_code(&e),
        message: format!("{}: {e}", path.display()),
    }
}

/// Any failure to obtain weights, I/O included, is a weights failure.
fn read_weights(path: &Path) -> Result<ModelWeights, Failure> {
    let fail = |message: String| Failure {
        code: EXIT_WEIGHTS,
        message,
    };
    let file = File::open(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    load_weights(BufReader::new(file)).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(Error::Io).map_err(with_path(path))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Encode {
            input,
            weights,
            out: dest,
            pad_report,
        } => {
            let weights = read_weights(&weights)?;
            let image = load_image(&input).map_err(with_path(&input))?;
            let encoded = compress(&image, &weights)?;
            let bytes = encoded.coded.to_bytes();
            write_atomically(&dest, &bytes)?;
            let (w, h) = (image.width(), image.height());
            writeln!(out, "bpp {:.6}", bpp(encoded.coded.total_bits(), w, h)?)?;
            writeln!(out, "bytes {}", bytes.len())?;
            if pad_report {
                writeln!(out, "size {w}x{h} padded {}x{}", padded_extent(w), padded_extent(h))?;
            }
            for s in substream_report(&encoded.coded, Some(&encoded)) {
                writeln!(out, "substream {} {} bytes (model {:.1} bits)", s.label, s.bytes, s.model_bits)?;
            }
        }
        Command::Decode {
            input,
            weights,
            out: dest,
        } => {
            let weights = read_weights(&weights)?;
            let bytes = fs::read(&input).map_err(Error::Io).map_err(with_path(&input))?;
            let coded = CodedImage::from_bytes(&bytes).map_err(with_path(&input))?;
            let decoded = decode_image(&coded, &weights).map_err(with_path(&input))?;
            save_image(&decoded.x_hat, &dest).map_err(with_path(&dest))?;
            let (w, h) = (coded.header.width as usize, coded.header.height as usize);
            writeln!(out, "bpp {:.6}", bpp(coded.total_bits(), w, h)?)?;
            writeln!(out, "bytes {}", bytes.len())?;
        }
        Command::Eval {
            input,
            weights,
            bitstream,
            substreams,
        } => {
            let weights = read_weights(&weights)?;
            let image = load_image(&input).map_err(with_path(&input))?;
            let eval = evaluate(&image, &weights)?;
            if let Some(path) = bitstream {
                write_atomically(&path, &eval.bitstream)?;
            }
            let label = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            RdCurve::new(vec![(label, eval.point)]).write_csv(&mut out)?;
            if substreams {
                for s in &eval.substreams {
                    eprintln!("{} {} bytes (model {:.1} bits)", s.label, s.bytes, s.model_bits);
                }
            }
        }
        Command::RdCurve {
            input_dir,
            weights,
            out: dest,
        } => {
            let weights = weights.iter().map(|p| read_weights(p)).collect::<Result<Vec<_>, _>>()?;
            let images = images_in(&input_dir)?;
            let curve = rd_curve(&images, &weights)?;
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write_atomically(&dest, &buf)?;
            out.write_all(&buf)?;
        }
        Command::BdRate { anchor, test } => {
            let read = |p: &Path| -> Result<RdCurve, Failure> {
                let f = File::open(p).map_err(Error::Io).map_err(with_path(p))?;
                RdCurve::read_csv(f).map_err(with_path(p))
            };
            let value = bd_rate(&read(&anchor)?, &read(&test)?)?;
            writeln!(out, "bd-rate {value:.4}%")?;
        }
        Command::Selftest { weights, preset } => {
            let weights = match weights {
                Some(p) => read_weights(&p)?,
                None => init_weights(&preset.config(), cli.seed)?,
            };
            let results = run_selftest(&weights, cli.seed);
            let mut failed = 0;
            for r in &results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                writeln!(out, "{verdict} {} ({:.2}s): {}", r.name, r.elapsed.as_secs_f64(), r.detail)?;
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Failure {
                    code: EXIT_SELFTEST,
                    message: format!("{failed} of {} checks failed", results.len()),
                });
            }
        }
        Command::InitWeights {
            out: dest,
            preset,
            lambda_index,
        } => {
            let cfg = preset.config().with_lambda_index(lambda_index);
            let weights = init_weights(&cfg, cli.seed)?;
            let mut buf = Vec::new();
            save_weights(&weights, &mut buf)?;
            write_atomically(&dest, &buf)?;
            writeln!(out, "{} parameters, checksum {:016x}", weights.num_parameters(), weights.checksum())?;
        }
        Command::Manifest { preset } => {
            for spec in manifest(&preset.config()) {
                let [a, b, c, d] = spec.shape;
                writeln!(out, "{} {a}x{b}x{c}x{d}", spec.name)?;
            }
        }
    }
    Ok(())
}

fn images_in(dir: &Path) -> Result<Vec<mambaic::Tensor>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::Io)
        .map_err(with_path(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || (cfg!(feature = "png") && e.eq_ignore_ascii_case("png")))
        })
        .collect();
    if paths.is_empty() {
        return Err(Failure {
            code: EXIT_IO,
            message: format!("{}: no images found", dir.display()),
        });
    }
    paths.sort();
    paths.iter().map(|p| load_image(p).map_err(with_path(p))).collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
