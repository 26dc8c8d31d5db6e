use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lalic::pipeline::{
    bench, decode_image, encode_image_for, eval_rd, parse_lambda, read_image, selftest, BitstreamHeader, Codec,
    RdReport, SelftestOptions, DEFAULT_RESOLUTIONS,
};
use lalic::transforms::{ModelConfig, WeightStore};
use lalic::wkv::Mechanism;
use lalic::{Error, Real, Result};

/// Learned image codec with bidirectional linear-attention transforms.
#[derive(Parser, Debug)]
#[command(name = "lalic", version)]
struct Cli {
    #[command(flatten)]
    model: ModelArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Weight file; without it, weights are initialized from --seed.
    #[arg(long, global = true, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// Seed for synthetic weights and test data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Architecture overrides as TOML; omitted keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run the model in 64-bit floating point.
    #[arg(long = "f64", global = true)]
    double: bool,
    /// Rate-distortion multiplier: a value or one of the presets q1..q6.
    #[arg(long, global = true, default_value = "q3", value_parser = lambda_arg)]
    lambda: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode an image (PPM, or PNG with the `png` feature) into a bitstream.
    Compress { input: PathBuf, output: PathBuf },
    /// Decode a bitstream into an image; `.png` output needs the `png` feature.
    Decompress { input: PathBuf, output: PathBuf },
    /// Rate-distortion report for a reconstruction.
    Eval {
        original: PathBuf,
        reconstruction: PathBuf,
        /// Bitstream whose payload gives the rate.
        #[arg(long, conflicts_with = "bits", required_unless_present = "bits")]
        stream: Option<PathBuf>,
        /// Rate in bits, if no stream is given.
        #[arg(long)]
        bits: Option<f64>,
    },
    /// Attention op counts and kernel timings across resolutions.
    Bench {
        /// Comma-separated WxH list, each a multiple of 64.
        #[arg(long, value_delimiter = ',', value_parser = resolution_arg)]
        resolutions: Vec<(usize, usize)>,
        /// Comma-separated mechanisms; all when omitted.
        #[arg(long, value_delimiter = ',', value_parser = mechanism_arg)]
        mechanisms: Option<Vec<Mechanism>>,
        /// Report op counts only.
        #[arg(long)]
        no_timing: bool,
    },
    /// Run the built-in oracle suites.
    Selftest {
        /// Flip a byte of the coded symbol stream; the codec suite must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Write a seeded weight file.
    InitWeights { output: PathBuf },
}

fn lambda_arg(s: &str) -> std::result::Result<f64, String> {
    parse_lambda(s).map_err(|e| e.to_string())
}

fn mechanism_arg(s: &str) -> std::result::Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolution_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad extent `{v}` in `{s}`"));
    Ok((dim(w)?, dim(h)?))
}

fn load_config(path: Option<&Path>) -> Result<Option<ModelConfig>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)?;
    let cfg: ModelConfig =
        toml::from_str(&text).map_err(|e| Error::Malformed { what: "config file", detail: e.to_string() })?;
    cfg.validate()?;
    Ok(Some(cfg))
}

fn load_model(args: &ModelArgs) -> Result<WeightStore> {
    let config = load_config(args.config.as_deref())?;
    match &args.weights {
        Some(path) => {
            let store = WeightStore::load(path)?;
            if let Some(cfg) = config {
                if &cfg != store.config() {
                    return Err(Error::ConfigMismatch(format!(
                        "{} was built for a different architecture than {}",
                        path.display(),
                        args.config.as_ref().expect("config given").display()
                    )));
                }
            }
            Ok(store)
        }
        None => WeightStore::init(&config.unwrap_or_default(), args.seed),
    }
}

/// Write through a sibling temporary file so a failure never leaves a partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn print_report(r: &RdReport) {
    match r.estimated_bits {
        Some(est) => println!("bits       {:.0} (estimated {est:.1})", r.bits),
        None => println!("bits       {:.0}", r.bits),
    }
    println!("bpp        {:.6}", r.bpp);
    println!("mse        {:.4}", r.mse);
    if r.psnr.is_finite() {
        println!("psnr       {:.4} dB", r.psnr);
    } else {
        println!("psnr       inf");
    }
    println!("loss       {:.6} (lambda {})", r.loss, r.lambda);
}

fn compress<F: Real>(store: &WeightStore, args: &ModelArgs, input: &Path, output: &Path) -> Result<()> {
    let img = read_image(input)?;
    let codec = Codec::<F>::new(store)?;
    let enc = codec.compress(&img)?;
    write_atomic(output, &enc.bytes)?;
    let recon = codec.reconstruct(&enc.y_hat, img.width, img.height)?;
    let mut report = eval_rd(&img, &recon, enc.bits(), args.lambda)?;
    report.estimated_bits = Some(enc.estimated_bits);
    let h = &enc.header;
    println!("image      {}x{} (padded {}x{})", h.width, h.height, h.padded_width, h.padded_height);
    println!(
        "stream     {} bytes ({} header, {} payload in {} units)",
        enc.bytes.len(),
        h.byte_len(),
        enc.payload_bytes(),
        h.unit_lens.len()
    );
    print_report(&report);
    Ok(())
}

fn decompress<F: Real>(store: &WeightStore, input: &Path, output: &Path) -> Result<()> {
    let bytes = fs::read(input)?;
    let codec = Codec::<F>::new(store)?;
    let dec = codec.decompress(&bytes)?;
    write_atomic(output, &encode_image_for(output, &dec.image)?)?;
    let bits = 8.0 * dec.header.payload_len() as f64;
    println!("image      {}x{}", dec.image.width, dec.image.height);
    println!("bpp        {:.6}", bits / dec.image.pixels() as f64);
    Ok(())
}

fn eval(args: &ModelArgs, original: &Path, recon: &Path, stream: Option<&Path>, bits: Option<f64>) -> Result<()> {
    let a = read_image(original)?;
    let b = decode_image(&fs::read(recon)?)?;
    let bits = match (stream, bits) {
        (Some(s), _) => 8.0 * BitstreamHeader::parse(&fs::read(s)?)?.0.payload_len() as f64,
        (None, Some(b)) if b.is_finite() && b >= 0.0 => b,
        _ => return Err(Error::InvalidArgument("a non-negative --bits or a --stream is required".into())),
    };
    print_report(&eval_rd(&a, &b, bits, args.lambda)?);
    Ok(())
}

fn run_bench(
    args: &ModelArgs,
    resolutions: &[(usize, usize)],
    mechanisms: Option<&[Mechanism]>,
    timing: bool,
) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?.unwrap_or_default();
    let resolutions = if resolutions.is_empty() { &DEFAULT_RESOLUTIONS[..] } else { resolutions };
    let mechanisms = mechanisms.unwrap_or(&Mechanism::ALL);
    let table = bench(&cfg, resolutions, mechanisms, timing)?;
    if table.mechanisms.is_empty() {
        println!("no mechanisms selected");
        return Ok(());
    }
    print!("{:>11} {:>9}", "resolution", "pixels");
    for m in &table.mechanisms {
        print!(" {:>18}", m.name());
    }
    println!();
    for row in &table.rows {
        print!("{:>11} {:>9}", format!("{}x{}", row.width, row.height), row.width * row.height);
        for ops in &row.ops {
            print!(" {ops:>18}");
        }
        println!();
        if timing {
            print!("{:>21}", "seconds");
            for s in &row.seconds {
                match s {
                    Some(s) => print!(" {s:>18.4}"),
                    None => print!(" {:>18}", "-"),
                }
            }
            println!();
        }
    }
    for (m, (slope, intercept, r2)) in table.mechanisms.iter().zip(&table.fits) {
        println!("fit {:<18} ops = {slope:.2} * pixels + {intercept:.1}, R^2 = {r2:.6}", m.name());
    }
    Ok(())
}

fn run_selftest(args: &ModelArgs, corrupt: bool) -> Result<bool> {
    let results = selftest(SelftestOptions { f64: args.double, corrupt, seed: args.seed });
    for r in &results {
        println!("{} {:<26} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn init_weights(args: &ModelArgs, output: &Path) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?.unwrap_or_default();
    let store = WeightStore::init(&cfg, args.seed)?;
    let bytes = store.to_bytes()?;
    write_atomic(output, &bytes)?;
    println!("parameters {}", store.parameter_count());
    println!("digest     {:#018x}", store.digest());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let args = &cli.model;
    match &cli.command {
        Command::Compress { input, output } => {
            let store = load_model(args)?;
            if args.double {
                compress::<f64>(&store, args, input, output)?
            } else {
                compress::<f32>(&store, args, input, output)?
            }
        }
        Command::Decompress { input, output } => {
            let store = load_model(args)?;
            if args.double {
                decompress::<f64>(&store, input, output)?
            } else {
                decompress::<f32>(&store, input, output)?
            }
        }
        Command::Eval { original, reconstruction, stream, bits } => {
            eval(args, original, reconstruction, stream.as_deref(), *bits)?
        }
        Command::Bench { resolutions, mechanisms, no_timing } => {
            run_bench(args, resolutions, mechanisms.as_deref(), !no_timing)?
        }
        Command::Selftest { corrupt } => return run_selftest(args, *corrupt),
        Command::InitWeights { output } => init_weights(args, output)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("lalic: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
