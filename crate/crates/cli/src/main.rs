//! `hqmq` command-line tool.
//!
//! Exit codes: 0 on success, 2 for bad arguments, 3 for bad data or a
//! failed check.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hqmq::budget::{budget, BitMode, HqmqLabel};
use hqmq::codec::{decode_tensor, encode_tensor, CodecConfig, TensorShape};
use hqmq::hurwitz::{build_2t, verify_group};
use hqmq::joint::Role;
use hqmq::kvpack::{read_kvpack, write_kvpack, RawDtype, RawTensorFile};
use hqmq::outlier::{MedianPooling, OutlierPolicy};
use hqmq::packing::{covering_csv, fit_covering_rate};
use hqmq::synth::{outlier_sweep, pareto_sweep, reports_csv, SweepConfig, SynthProfile};
use hqmq::HqmqError;

#[derive(Parser)]
#[command(name = "hqmq", version, about = "Quaternion KV-cache quantizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pooling {
    AcrossHeads,
    PerHead,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F16,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Gaussian,
    OutlierHeavy,
}

impl From<Profile> for SynthProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Gaussian => SynthProfile::GAUSSIAN,
            Profile::OutlierHeavy => SynthProfile::OUTLIER_HEAVY,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Raw KVRW tensor in, kvpack out.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        /// Secondary codebook size S.
        #[arg(short = 'S', long = "S", default_value_t = 96)]
        s: usize,
        /// Radius bits.
        #[arg(long, default_value_t = 4)]
        br: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enable outlier extraction with this median multiplier.
        #[arg(long)]
        outlier_c: Option<f64>,
        #[arg(long, value_enum, default_value_t = Pooling::AcrossHeads)]
        pooling: Pooling,
        /// K or V.
        #[arg(long, default_value = "K")]
        role: Role,
        #[arg(long, default_value_t = 0)]
        layer: u32,
        /// Head index of the tensor's first head.
        #[arg(long, default_value_t = 0)]
        head: u32,
    },
    /// kvpack in, raw KVRW tensor out.
    Dequantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Dtype::F32)]
        dtype: Dtype,
    },
    /// Bits versus distortion for several configs on synthetic data.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = ["s24_r3".to_string(), "s96_r4".to_string(), "int3".to_string(), "int4".to_string()])]
        configs: Vec<String>,
        #[arg(long, value_enum, default_value_t = Profile::Gaussian)]
        profile: Profile,
        /// B,H,T,d_h
        #[arg(long, default_value = "1,8,512,128")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Outlier multiplier sweep for one HQMQ config.
    Sweep {
        #[arg(long, default_value = "s96_r4")]
        config: String,
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0, 5.0, 100.0])]
        c: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Profile::OutlierHeavy)]
        profile: Profile,
        #[arg(long, default_value = "1,8,512,128")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo covering radius over nested codebooks.
    Covering {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 16, 64, 256])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        probe_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bits per element for an sNN_rM config.
    Bits {
        #[arg(long)]
        config: HqmqLabel,
        #[arg(long, default_value_t = 128)]
        dh: usize,
    },
    /// Check the 24-element Hurwitz group.
    VerifyGroup,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<HqmqError> for Failure {
    fn from(e: HqmqError) -> Self {
        match e {
            HqmqError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn parse_shape(s: &str) -> Result<TensorShape, Failure> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("shape must be B,H,T,d_h, got {s:?}")))?;
    match dims[..] {
        [b, h, t, d] => Ok(TensorShape::new(b, h, t, d)?),
        _ => Err(Failure::Usage(format!("shape must have four dimensions, got {s:?}"))),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Failure::Data(e.to_string()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Quantize { input, output, s, br, seed, outlier_c, pooling, role, layer, head } => {
            let raw = RawTensorFile::read(open(&input)?)?;
            let mut cfg = CodecConfig::new(s, br, seed)
                .with_role(role)
                .with_layer(layer)
                .with_head_offset(head)
                .with_pooling(match pooling {
                    Pooling::AcrossHeads => MedianPooling::AcrossHeads,
                    Pooling::PerHead => MedianPooling::PerHead,
                });
            if let Some(c) = outlier_c {
                cfg = cfg.with_outlier(OutlierPolicy::new(c)?);
            }
            let qt = encode_tensor(&raw.data, raw.shape, cfg)?;
            let mut w = create(&output)?;
            let n = write_kvpack(&qt, &mut w)?;
            w.flush().map_err(|e| Failure::Data(e.to_string()))?;
            log::info!("wrote {n} bytes, outlier fraction {:.4}", qt.outlier_fraction());
            Ok(())
        }
        Command::Dequantize { input, output, dtype } => {
            let qt = read_kvpack(open(&input)?)?;
            let data = decode_tensor(&qt)?;
            let dtype = match dtype {
                Dtype::F32 => RawDtype::F32,
                Dtype::F16 => RawDtype::F16,
            };
            let mut w = create(&output)?;
            RawTensorFile::new(dtype, qt.shape, data)?.write(&mut w)?;
            w.flush().map_err(|e| Failure::Data(e.to_string()))
        }
        Command::Bench { configs, profile, shape, seed, out } => {
            let configs: Vec<SweepConfig> =
                configs.iter().map(|c| c.parse()).collect::<Result<_, _>>()?;
            let reports = pareto_sweep(&configs, profile.into(), parse_shape(&shape)?, seed)?;
            emit(&reports_csv(&reports), out.as_deref())
        }
        Command::Sweep { config, c, profile, shape, seed, out } => {
            let label: HqmqLabel = config.parse()?;
            let points = outlier_sweep(&c, profile.into(), parse_shape(&shape)?, label, seed)?;
            let reports: Vec<_> = points.into_iter().map(|p| p.report).collect();
            emit(&reports_csv(&reports), out.as_deref())
        }
        Command::Covering { sizes, seed, probes, probe_seed, out } => {
            let study = fit_covering_rate(&sizes, seed, probes, probe_seed)?;
            log::info!(
                "rho slope {:.4}, mean-error slope {:.4}",
                study.rho_fit.slope,
                study.mean_fit.slope
            );
            emit(&covering_csv(&study.estimates), out.as_deref())
        }
        Command::Bits { config, dh } => {
            let frac = budget(config.secondary_size, config.radius_bits, dh, BitMode::Fractional)?;
            let ceil = budget(config.secondary_size, config.radius_bits, dh, BitMode::Ceiled)?;
            println!("{config} d_h={dh}");
            println!(
                "fractional: {:.2} / {:.2} bits per element (index {:.2} + radius {} bits per chunk)",
                frac.per_element_bits, frac.per_element_with_scale, frac.index_bits_fractional, config.radius_bits
            );
            println!(
                "ceiled:     {:.2} / {:.2} bits per element (index {} + radius {} bits per chunk)",
                ceil.per_element_bits, ceil.per_element_with_scale, ceil.index_bits_ceiled, config.radius_bits
            );
            println!("compression vs fp16: {:.2}x", frac.compression_ratio);
            Ok(())
        }
        Command::VerifyGroup => {
            let report = verify_group(&build_2t());
            if report.is_ok() {
                println!("closure: ok, min angle: {:.0} deg", report.min_angle_deg);
                Ok(())
            } else {
                Err(Failure::Data(format!(
                    "group check failed: closure {}, inverses {}, min angle {:.6} deg",
                    report.closure,
                    report.all_inverses(),
                    report.min_angle_deg
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
