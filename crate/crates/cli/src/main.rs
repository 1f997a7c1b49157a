use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bitlut::tuner::{tune, TuneCache, TuneRequest};
use bitlut::weight_prep::{decompose_bits, deserialize, pad_quantum, serialize, unpack_planes};
use bitlut::{dequantize, prepack, quantize_rtn, Error, KernelVariant, Result, TileConfig};
use bitlut_cli::analysis::{gaussian, run_nmse, NmseRequest};
use bitlut_cli::bench::{bench, bit_sweep, synthetic_weights, BenchRequest, Mode, SWEEP_BITS};
use bitlut_cli::files;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bitlut", version, about = "Lookup-table mixed-precision GEMM tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian real matrix (LMRM).
    Gen(GenArgs),
    /// Quantize a real matrix (LMRM) to low-bit weights (LMQW).
    Quantize(QuantizeArgs),
    /// Pack quantized weights (LMQW) into the kernel layout (LMPW).
    Prepack(PrepackArgs),
    /// Time the kernel and print a JSON report.
    Bench(BenchArgs),
    /// Error of each kernel variant against the unquantized product.
    Nmse(NmseArgs),
    /// Search tile sizes for a shape and cache the winner.
    Tune(TuneArgs),
}

#[derive(Args)]
struct TileArgs {
    /// Weight bits per lookup index.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=8))]
    g: u32,
    #[arg(long, default_value_t = 64)]
    tile_m: usize,
    #[arg(long, default_value_t = 64)]
    tile_k: usize,
    #[arg(long, default_value_t = 1)]
    tile_n: usize,
    #[arg(long, default_value_t = 16)]
    lanes: usize,
}

impl TileArgs {
    fn config(&self) -> Result<TileConfig> {
        TileConfig::new(self.tile_n, self.tile_m, self.tile_k, self.g as usize, self.lanes)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
    bits: u32,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PrepackArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    tile: TileArgs,
    /// Re-read the written file and check its bit planes against the input.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gemv,
    Gemm,
}

#[derive(Args)]
struct BenchArgs {
    /// Packed weights (LMPW). Without it, random weights of the given shape are used.
    #[arg(long, short)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    m: usize,
    #[arg(long, default_value_t = 4096)]
    k: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
    bits: u32,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
    #[command(flatten)]
    tile: TileArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Gemv)]
    mode: ModeArg,
    /// Activation rows in gemm mode.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value = "vector-q8")]
    variant: KernelVariant,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also time random weights of 1, 2 and 4 bits on the same shape.
    #[arg(long)]
    bit_sweep: bool,
    /// Take the tile config from this tuning cache when it has an entry.
    #[arg(long)]
    tune_cache: Option<PathBuf>,
    /// Accepted for uniformity; the report is always JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct NmseArgs {
    #[arg(long, default_value_t = 4096)]
    m: usize,
    #[arg(long, default_value_t = 4096)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
    bits: u32,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
    #[command(flatten)]
    tile: TileArgs,
    /// Variant to evaluate; repeat for several. Defaults to all.
    #[arg(long)]
    variant: Vec<KernelVariant>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, default_value_t = 4096)]
    m: usize,
    #[arg(long, default_value_t = 4096)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
    bits: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=8))]
    g: u32,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
    #[arg(long, default_value_t = 16)]
    lanes: usize,
    #[arg(long, default_value = "vector-q8")]
    variant: KernelVariant,
    /// Stop timing new configs after this many milliseconds (0 = no limit).
    #[arg(long, default_value_t = 0)]
    budget_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tune_cache: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn print_json<T: Serialize>(v: &T) {
    let text = serde_json::to_string_pretty(v).expect("serializable report");
    // A closed pipe (e.g. `| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn gen(args: GenArgs) -> Result<()> {
    let m = gaussian(args.rows, args.cols, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    files::write_real(&args.output, &m)
}

#[derive(Serialize)]
struct QuantizeSummary {
    m: usize,
    k: usize,
    bits: u32,
    group_size: usize,
    max_abs_error: f64,
    mean_abs_error: f64,
    relative_rms_error: f64,
}

fn quantize(args: QuantizeArgs) -> Result<()> {
    let w = files::read_real(&args.input)?;
    let qw = quantize_rtn(&w, args.bits, args.group_size)?;
    files::write_quantized(&args.output, &qw)?;
    let d = dequantize(&qw);
    let (mut max, mut sum, mut sq, mut ref_sq) = (0f64, 0f64, 0f64, 0f64);
    for (x, y) in w.as_slice().iter().zip(d.as_slice()) {
        let e = (*x as f64 - *y as f64).abs();
        max = max.max(e);
        sum += e;
        sq += e * e;
        ref_sq += (*x as f64) * (*x as f64);
    }
    let count = (w.rows() * w.cols()).max(1) as f64;
    let s = QuantizeSummary {
        m: qw.m(),
        k: qw.k(),
        bits: qw.bits(),
        group_size: qw.group_size(),
        max_abs_error: max,
        mean_abs_error: sum / count,
        relative_rms_error: if ref_sq > 0.0 { (sq / ref_sq).sqrt() } else { 0.0 },
    };
    if args.json {
        print_json(&s);
    } else {
        println!(
            "quantized {}x{} to {} bits (group {}): max abs error {:.4e}, mean abs error {:.4e}, relative rms error {:.4e}",
            s.m, s.k, s.bits, s.group_size, s.max_abs_error, s.mean_abs_error, s.relative_rms_error
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PrepackSummary {
    m: usize,
    k: usize,
    bits: u32,
    g: usize,
    planes: usize,
    tiles: usize,
    plane_bytes: usize,
    payload_bytes: usize,
    file_bytes: usize,
    verified: bool,
}

fn prepack_cmd(args: PrepackArgs) -> Result<()> {
    let qw = files::read_quantized(&args.input)?;
    let cfg = args.tile.config()?;
    let pw = prepack(&qw, &cfg)?;
    let bytes = serialize(&pw);
    std::fs::write(&args.output, &bytes)?;
    if args.verify {
        let back = deserialize::<f32>(&std::fs::read(&args.output)?)?;
        let want = decompose_bits(&qw.pad_k(pad_quantum(&cfg, qw.group_size()))?, cfg.g)?;
        if unpack_planes(&back)? != want || back != pw {
            return Err(Error::Input(format!("{} does not reproduce the input planes", args.output.display())));
        }
    }
    let s = PrepackSummary {
        m: pw.m(),
        k: pw.k(),
        bits: pw.bits(),
        g: pw.g(),
        planes: pw.planes().len(),
        tiles: pw.tile_count(),
        plane_bytes: pw.plane_bytes(),
        payload_bytes: pw.payload_bytes(),
        file_bytes: bytes.len(),
        verified: args.verify,
    };
    if args.json {
        print_json(&s);
    } else {
        println!(
            "packed {}x{} ({} bits, g={}): {} planes x {} bytes, {} tiles, payload {} bytes, file {} bytes{}",
            s.m,
            s.k,
            s.bits,
            s.g,
            s.planes,
            s.plane_bytes,
            s.tiles,
            s.payload_bytes,
            s.file_bytes,
            if s.verified { ", verified" } else { "" }
        );
    }
    Ok(())
}

fn cached_tile(path: &Path, req: &TuneRequest) -> Result<Option<TileConfig>> {
    let cache = TuneCache::open(path)?;
    Ok(cache.get(&req.key()).map(|r| r.cfg))
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let mode = match args.mode {
        ModeArg::Gemv => Mode::Gemv,
        ModeArg::Gemm => Mode::Gemm,
    };
    let req = BenchRequest {
        mode,
        n: args.n,
        variant: args.variant,
        threads: args.threads,
        warmups: args.warmups,
        reps: args.reps,
        seed: args.seed,
    };
    let (pw, cfg) = match &args.weights {
        Some(path) => {
            let pw = deserialize::<f32>(&std::fs::read(path)?)?;
            let mut cfg = *pw.tile();
            cfg.n_tile = args.tile.tile_n;
            (pw, cfg)
        }
        None => {
            let mut cfg = args.tile.config()?;
            if let Some(path) = &args.tune_cache {
                let mut t = TuneRequest::new(args.m, args.k, args.bits, args.variant);
                t.g = cfg.g;
                t.space.lanes = cfg.lanes;
                if let Some(c) = cached_tile(path, &t)? {
                    cfg = c;
                }
            }
            let qw = synthetic_weights(args.m, args.k, args.bits, args.group_size, args.seed)?;
            (prepack(&qw, &cfg)?, cfg)
        }
    };
    cfg.validate()?;
    let mut report = bench(&pw, &cfg, &req)?;
    if args.bit_sweep {
        report.bit_scaling = Some(bit_sweep(pw.m(), pw.k(), pw.group_size(), &SWEEP_BITS, &cfg, &req)?);
    }
    print_json(&report);
    Ok(())
}

fn nmse_cmd(args: NmseArgs) -> Result<()> {
    let variants = if args.variant.is_empty() {
        KernelVariant::ALL.to_vec()
    } else {
        args.variant
    };
    let req = NmseRequest {
        m: args.m,
        k: args.k,
        n: args.n,
        bits: args.bits,
        group_size: args.group_size,
        tile: args.tile.config()?,
        variants,
        threads: args.threads,
        seed: args.seed,
    };
    let r = run_nmse(&req)?;
    if args.json {
        print_json(&r);
    } else {
        println!("shape {}x{}x{}, {} bits, group {}, seed {}", r.m, r.k, r.n, r.bits, r.group_size, r.seed);
        println!("{:<20} {:>12}", "variant", "nmse");
        println!("{:<20} {:>12.4e}", "quantization-only", r.quantization_only);
        for v in &r.variants {
            println!("{:<20} {:>12.4e}", v.variant, v.nmse);
        }
    }
    Ok(())
}

fn tune_cmd(args: TuneArgs) -> Result<()> {
    let mut req = TuneRequest::new(args.m, args.k, args.bits, args.variant);
    req.n = args.n;
    req.g = args.g as usize;
    req.group_size = args.group_size;
    req.budget_ms = args.budget_ms;
    req.seed = args.seed;
    req.space.lanes = args.lanes;
    let mut cache = args.tune_cache.as_ref().map(TuneCache::open).transpose()?;
    let result = tune(&req, cache.as_mut())?;
    if let Some(c) = &cache {
        c.save()?;
    }
    if args.json {
        print_json(&serde_json::json!({
            "m": result.key.m,
            "k": result.key.k,
            "bits": result.key.bits,
            "g": result.key.g,
            "variant": result.key.variant.name(),
            "machine_id": result.key.machine_id,
            "tile": bitlut_cli::bench::Tile::from(&result.cfg),
            "throughput": result.throughput,
            "timestamp": result.timestamp,
        }));
    } else {
        println!("{result}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Quantize(a) => quantize(a),
        Command::Prepack(a) => prepack_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Nmse(a) => nmse_cmd(a),
        Command::Tune(a) => tune_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
