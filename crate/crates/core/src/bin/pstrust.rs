use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pstrust::harness::{
    bench_csv, exit, format_result, generate, leakstat, oracle_check, run_bench, run_session,
    BenchSpec, GenParams, HarnessError, InstanceFile, TransportMode,
};
use pstrust::paillier::DEFAULT_KEY_BITS;
use pstrust::protocol::{
    run_remote_agent, run_remote_auctioneer, PermutationMode, SessionConfig, DEFAULT_BIT_LENGTH,
};

#[derive(Parser)]
#[command(name = "pstrust", version, about = "Privacy-preserving double spectrum auction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance file.
    Gen(GenArgs),
    /// Run the secure auction on an instance.
    Run(RunArgs),
    /// Sweep instance sizes and bit lengths, writing CSV.
    Bench(BenchArgs),
    /// Collect first-round reveal statistics and audit the auctioneer's view.
    Leakstat(LeakArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Mem,
    Tcp,
}

impl From<Transport> for TransportMode {
    fn from(t: Transport) -> Self {
        match t {
            Transport::Mem => TransportMode::Memory,
            Transport::Tcp => TransportMode::Tcp,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(short = 'm', long)]
    sellers: usize,
    #[arg(short = 'n', long)]
    buyers: usize,
    #[arg(long, default_value_t = DEFAULT_BIT_LENGTH)]
    ebv_bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50.0)]
    protection: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
    key_bits: u32,
    /// Bits per encrypted bid; defaults to the instance's bit length.
    #[arg(long)]
    ebv_bits: Option<usize>,
    #[arg(long, value_enum, default_value = "mem")]
    transport: Transport,
    /// Fixes the permutation and all session randomness. Testing only.
    #[arg(long)]
    seed: Option<u64>,
}

impl SessionArgs {
    fn config(&self, instance_bits: usize) -> SessionConfig {
        SessionConfig {
            key_bits: self.key_bits,
            bit_length: self.ebv_bits.unwrap_or(instance_bits),
            permutation: self
                .seed
                .map_or(PermutationMode::Random, PermutationMode::Seeded),
            rng_seed: self.seed,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Instance file; not needed with --listen.
    #[arg(required_unless_present = "listen")]
    instance: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
    /// Act as the auction agent, serving one auctioneer on this address.
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Act as the auctioneer against an agent at this address.
    #[arg(long)]
    connect: Option<String>,
    #[arg(long)]
    oracle_check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sizes as MxN.
    #[arg(long, value_delimiter = ',', default_value = "10x30")]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    ebv_bits: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
    key_bits: u32,
    #[arg(long, value_enum, default_value = "mem")]
    transport: Transport,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LeakArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, hide = true)]
    disable_permutation: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<InstanceFile, HarnessError> {
    InstanceFile::parse(&fs::read_to_string(path)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_size(raw: &str) -> Result<(usize, usize), HarnessError> {
    let bad = || HarnessError::Generation(format!("bad size {raw:?}, expected MxN"));
    let (m, n) = raw.split_once('x').ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

fn cmd_gen(args: GenArgs) -> Result<(), HarnessError> {
    let mut params = GenParams::new(args.sellers, args.buyers, args.ebv_bits, args.seed);
    params.protection = args.protection;
    let file = generate(&params)?;
    emit(&args.out, &file.render())
}

fn cmd_run(args: RunArgs) -> Result<(), HarnessError> {
    if let Some(addr) = &args.listen {
        let config = args.session.config(DEFAULT_BIT_LENGTH);
        let listener = TcpListener::bind(addr)?;
        eprintln!("agent listening on {}", listener.local_addr()?);
        let outcome = run_remote_agent(&listener, &config)?;
        eprintln!(
            "session finished after {} rounds, {} products served",
            outcome.reveals.len(),
            outcome.products_served
        );
        return Ok(());
    }
    let path = args.instance.as_deref().expect("clap requires an instance");
    let instance = load(path)?.to_plain()?;
    let config = args.session.config(instance.bid_bit_length);
    let (result, order, summary) = match &args.connect {
        Some(addr) => {
            let o = run_remote_auctioneer(&instance, &config, addr.as_str())?;
            let summary = format!("rounds {}, products {}", o.rounds, o.product_calls);
            (o.result, o.order, summary)
        }
        None => {
            let r = run_session(&instance, &config, args.session.transport.into())?;
            let s = &r.stats;
            let summary = format!(
                "rounds {}, products {}, frames {}, bytes {}",
                s.rounds,
                s.product_calls,
                s.party_frames(),
                s.party_bytes()
            );
            (r.result, r.order, summary)
        }
    };
    eprintln!("{summary}");
    let text = format_result(&result);
    emit(&args.out, &text)?;
    if args.oracle_check {
        oracle_check(&instance, &result, &order)?;
        eprintln!("oracle check passed");
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), HarnessError> {
    let spec = BenchSpec {
        sizes: args
            .sizes
            .iter()
            .map(|s| parse_size(s))
            .collect::<Result<_, _>>()?,
        bit_lengths: args.ebv_bits,
        reps: args.reps,
        seed: args.seed,
        key_bits: args.key_bits,
        transport: args.transport.into(),
    };
    let rows = run_bench(&spec)?;
    emit(&args.out, &bench_csv(&rows))
}

fn cmd_leakstat(args: LeakArgs) -> Result<(), HarnessError> {
    if args.runs < 100 {
        return Err(HarnessError::Generation(format!(
            "leakstat needs at least 100 runs, got {}",
            args.runs
        )));
    }
    let instance = load(&args.instance)?.to_plain()?;
    let mut config = args.session.config(instance.bid_bit_length);
    if args.disable_permutation {
        config.permutation = PermutationMode::Identity;
    }
    let report = leakstat(&instance, args.runs, &config, args.session.transport.into())?;
    let mut text = report.render();
    text.push_str(&format!(
        "uniform at 0.01: {}\n",
        if report.uniform(0.01) { "yes" } else { "no" }
    ));
    emit(&args.out, &text)?;
    if !report.violations.is_empty() {
        return Err(HarnessError::Audit(report.violations));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Leakstat(a) => cmd_leakstat(a),
    };
    match outcome {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
