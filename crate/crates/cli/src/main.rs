//! `bbrot`: generate, canonicalize, encode, decode, verify and inspect
//! sliced-transformer weight files.
//!
//! Exit codes: 0 ok, 1 verification failed, 2 input or format error,
//! 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbrot::canonical::canonicalize;
use bbrot::codec::{
    decode_model, encode_model_traced, error_stats, fixed_overhead_bytes, threshold_sweep,
    CodecConfig, EncodedContainer, SBB1_MAGIC,
};
use bbrot::model::{forward, from_swc1_bytes, generate, save_weights, ModelDims, SWC1_MAGIC};
use bbrot::{Error, Model, SymbolWidth};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "bbrot",
    version,
    about = "Bits-back coding of rotation-symmetric transformer weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random sliced transformer as SWC1.
    Gen {
        #[command(flatten)]
        dims: DimsArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Rotate every block to its canonical orientation.
    Canon {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compress an SWC1 model into an SBB1 container.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Expand an SBB1 container back into SWC1.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare two models (SWC1 or SBB1) by weights and by logits.
    Verify {
        a: PathBuf,
        b: PathBuf,
        /// Weight tolerance; defaults to the container's tau_weights, else 0.01.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0)]
        tokens_seed: u64,
        #[arg(long, default_value_t = 8)]
        batches: usize,
    },
    /// Error histogram/CDF against a reference, and a correction sweep.
    Stats {
        reference: PathBuf,
        /// Decoded model or container to compare against the reference.
        decoded: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Comma-separated tau_weights values to encode the reference with.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        #[command(flatten)]
        codec: CodecArgs,
    },
}

#[derive(Args)]
struct DimsArgs {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    ffn: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
    /// Maximum sequence length.
    #[arg(long, default_value_t = 16)]
    seq: usize,
    #[arg(long)]
    no_biases: bool,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value_t = 32, value_parser = PossibleValuesParser::new(["16", "32"]).map(|s| s.parse::<u32>().unwrap()))]
    lambda_width: u32,
    #[arg(long, default_value_t = CodecConfig::default().tau_weights)]
    tau_weights: f64,
    #[arg(long, default_value_t = CodecConfig::default().tau_stream)]
    tau_stream: f64,
}

impl CodecArgs {
    fn config(&self) -> Result<CodecConfig, Failure> {
        let cfg = CodecConfig {
            lambda_width: SymbolWidth::try_from(self.lambda_width)
                .map_err(|_| Failure::usage("bad lambda width"))?,
            tau_weights: self.tau_weights,
            tau_stream: self.tau_stream,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonSymmetric { .. }
            | Error::NonFinite
            | Error::NoConvergence { .. }
            | Error::ZeroRow { .. }
            | Error::NotOrthogonal { .. }
            | Error::RankDeficient { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Either file kind, detected by magic.
enum Input {
    Weights(Model),
    Container(EncodedContainer),
}

impl Input {
    fn read(path: &Path) -> Result<Self, Failure> {
        let bytes =
            std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let at = |e: Error| Failure::from(e).context(path);
        match bytes.get(..4) {
            Some(m) if m == SBB1_MAGIC => EncodedContainer::from_bytes(&bytes)
                .map(Input::Container)
                .map_err(at),
            Some(m) if m == SWC1_MAGIC => from_swc1_bytes(&bytes).map(Input::Weights).map_err(at),
            _ => Err(Failure::usage(format!(
                "{}: neither an SWC1 nor an SBB1 file",
                path.display()
            ))),
        }
    }

    fn model(self) -> Result<Model, Failure> {
        match self {
            Input::Weights(m) => Ok(m),
            Input::Container(c) => Ok(decode_model(&c)?),
        }
    }
}

fn read_weights(path: &Path) -> Result<Model, Failure> {
    match Input::read(path)? {
        Input::Weights(m) => Ok(m),
        Input::Container(_) => Err(Failure::usage(format!(
            "{}: expected SWC1 weights, got SBB1",
            path.display()
        ))),
    }
}

fn write_weights(model: &Model, path: &Path) -> Result<(), Failure> {
    save_weights(model, path).map_err(|e| Failure::from(e).context(path))
}

fn write_bytes(bytes: &[u8], path: &Path) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        if (x - y).is_nan() {
            f64::INFINITY
        } else {
            m.max((x - y).abs())
        }
    })
}

fn cmd_verify(
    a: &Path,
    b: &Path,
    tau: Option<f64>,
    seed: u64,
    batches: usize,
) -> Result<(String, bool), Failure> {
    let a = Input::read(a)?;
    let b = Input::read(b)?;
    let tau = tau
        .or(match (&a, &b) {
            (Input::Container(c), _) | (_, Input::Container(c)) => Some(c.config.tau_weights),
            _ => None,
        })
        .unwrap_or(CodecConfig::default().tau_weights);
    let (a, b) = (a.model()?, b.model()?);
    if a.dims != b.dims {
        return Err(Failure::usage(format!(
            "dims differ: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }

    let mut out = String::new();
    let (mut w_abs, mut w_rel) = (0.0f64, 0.0f64);
    for ((id, x), (_, y)) in a.tensors().into_iter().zip(b.tensors()) {
        let d = max_abs_diff(x.as_slice(), y.as_slice());
        w_abs = w_abs.max(d);
        w_rel = w_rel.max(d / x.max_abs().max(f64::MIN_POSITIVE));
        writeln!(out, "weight_delta.{id} = {d:e}").unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l_abs, mut l_rel) = (0.0f64, 0.0f64);
    for _ in 0..batches {
        let tokens: Vec<usize> = (0..a.dims.seq)
            .map(|_| rng.random_range(0..a.dims.vocab))
            .collect();
        let la = forward(&a, &tokens)?;
        let lb = forward(&b, &tokens)?;
        let d = max_abs_diff(la.as_slice(), lb.as_slice());
        l_abs = l_abs.max(d);
        l_rel = l_rel.max(d / la.max_abs().max(f64::MIN_POSITIVE));
    }
    let weights_ok = w_abs <= tau;
    let logits_ok = l_rel <= 1e-2;
    let verdict = |ok| if ok { "PASS" } else { "FAIL" };
    writeln!(out, "max_abs_weight_delta = {w_abs:e}").unwrap();
    writeln!(out, "max_rel_weight_delta = {w_rel:e}").unwrap();
    writeln!(out, "tau = {tau}").unwrap();
    writeln!(out, "weights = {}", verdict(weights_ok)).unwrap();
    writeln!(out, "max_abs_logit_delta = {l_abs:e}").unwrap();
    writeln!(out, "max_rel_logit_delta = {l_rel:e}").unwrap();
    writeln!(out, "logits = {}", verdict(logits_ok)).unwrap();
    writeln!(out, "verify = {}", verdict(weights_ok && logits_ok)).unwrap();
    Ok((out, weights_ok && logits_ok))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Gen { dims, seed, out } => {
            let dims = ModelDims {
                layers: dims.layers,
                hidden: dims.hidden,
                ffn: dims.ffn,
                vocab: dims.vocab,
                seq: dims.seq,
                has_biases: !dims.no_biases,
            };
            let model = generate(&dims, seed)?.quantize_half();
            write_weights(&model, &out)?;
            println!("params = {}", dims.param_count());
        }
        Command::Canon { input, out } => {
            let (canon, report) = canonicalize(&read_weights(&input)?)?;
            write_weights(&canon, &out)?;
            print!("{report}");
        }
        Command::Encode { input, out, codec } => {
            let cfg = codec.config()?;
            let model = read_weights(&input)?;
            let enc = encode_model_traced(&model, &cfg)?;
            for w in &enc.canon_report.warnings {
                eprintln!("warning: {w}");
            }
            let bytes = enc.container.to_bytes();
            write_bytes(&bytes, &out)?;
            print!("{}", enc.container.report());
            println!("file_bytes = {}", bytes.len());
            println!(
                "container_overhead_bytes = {}",
                fixed_overhead_bytes(&enc.container.dims)
            );
        }
        Command::Decode { input, out } => {
            let container = match Input::read(&input)? {
                Input::Container(c) => c,
                Input::Weights(_) => {
                    return Err(Failure::usage(format!(
                        "{}: expected SBB1",
                        input.display()
                    )))
                }
            };
            write_weights(&decode_model(&container)?, &out)?;
        }
        Command::Verify {
            a,
            b,
            tau,
            tokens_seed,
            batches,
        } => {
            let (text, ok) = cmd_verify(&a, &b, tau, tokens_seed, batches)?;
            print!("{text}");
            return Ok(ok);
        }
        Command::Stats {
            reference,
            decoded,
            bins,
            sweep,
            codec,
        } => {
            let cfg = codec.config()?;
            let reference = read_weights(&reference)?;
            if let Some(path) = decoded {
                let decoded = Input::read(&path)?.model()?;
                print!("{}", error_stats(&reference, &decoded, bins)?);
            }
            if !sweep.is_empty() {
                println!("# threshold correction_bits correction_records max_residual saved_ratio");
                for p in threshold_sweep(&reference, &cfg, &sweep)? {
                    println!(
                        "{} {} {} {:e} {:.6}",
                        p.threshold,
                        p.correction_bits,
                        p.correction_records,
                        p.max_residual,
                        p.saved_ratio
                    );
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
