//! Instance files, generation, benchmark sweeps and leakage statistics behind the CLI.
//!
//! Instance file grammar, one record per line, `#` starts a comment:
//!
//! ```text
//! pstrust-instance v1
//! sellers <M>
//! buyers <N>
//! bits <K>
//! arena <width> <height>          # optional, default 100 100
//! protection <distance>           # optional, default 50
//! group_seed <seed>               # optional, default 0
//! seller <id> <bid>               # M lines, ids 0..M-1 in order
//! buyer <id> <bid> <x> <y>        # N lines, ids 0..N-1 in order
//! group <id> <member> <member>... # optional; if present, ids 0..H-1 in order
//! ```
//!
//! Without `group` lines the groups are formed from the conflict graph with
//! `group_seed`.

use std::fmt::Write as _;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::auction::{trust_plain_auction, AuctionError, AuctionResult, PlainInstance, ProcessingOrder};
use crate::groups::{
    build_conflict_graph, form_groups, Arena, BuyerGroup, BuyerLocation, ConflictGraph,
    GroupError, DEFAULT_PROTECTION_DISTANCE,
};
use crate::protocol::{
    audit_auctioneer_view, run_inline, run_local, run_tcp, PermutationMode, ProtocolError,
    SessionConfig, SessionReport,
};
use crate::transport::Direction;

pub const HEADER: &str = "pstrust-instance v1";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const MISMATCH: i32 = 1;
    pub const PROTOCOL: i32 = 2;
    pub const INPUT: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("group {0} contains conflicting buyers")]
    ConflictingGroup(usize),
    #[error("cannot generate: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("result differs from the plaintext oracle:\n{0}")]
    Mismatch(String),
    #[error("auctioneer received unexpected plaintext: {}", .0.join("; "))]
    Audit(Vec<String>),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Mismatch(_) | HarnessError::Audit(_) => exit::MISMATCH,
            HarnessError::Protocol(e) if e.is_input_error() => exit::INPUT,
            HarnessError::Protocol(_) => exit::PROTOCOL,
            _ => exit::INPUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuyerRecord {
    pub bid: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFile {
    pub bit_length: usize,
    pub arena: Arena,
    pub protection: f64,
    pub group_seed: u64,
    pub seller_bids: Vec<u64>,
    pub buyers: Vec<BuyerRecord>,
    pub groups: Option<Vec<BuyerGroup>>,
}

fn parse_err(line: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        line,
        reason: reason.into(),
    }
}

fn field<T: std::str::FromStr>(line: usize, what: &str, raw: Option<&str>) -> Result<T, HarnessError> {
    let raw = raw.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| parse_err(line, format!("bad {what} {raw:?}")))
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => return Err(parse_err(n, format!("expected {HEADER:?}, got {other:?}"))),
            None => return Err(parse_err(0, "empty instance file")),
        }
        let mut sellers: Option<usize> = None;
        let mut buyers: Option<usize> = None;
        let mut bits: Option<usize> = None;
        let mut file = InstanceFile {
            bit_length: 0,
            arena: Arena::default(),
            protection: DEFAULT_PROTECTION_DISTANCE,
            group_seed: 0,
            seller_bids: Vec::new(),
            buyers: Vec::new(),
            groups: None,
        };
        for (n, line) in lines {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            match key {
                "sellers" => sellers = Some(field(n, "seller count", it.next())?),
                "buyers" => buyers = Some(field(n, "buyer count", it.next())?),
                "bits" => bits = Some(field(n, "bit length", it.next())?),
                "arena" => {
                    file.arena = Arena {
                        width: field(n, "arena width", it.next())?,
                        height: field(n, "arena height", it.next())?,
                    }
                }
                "protection" => file.protection = field(n, "protection distance", it.next())?,
                "group_seed" => file.group_seed = field(n, "group seed", it.next())?,
                "seller" => {
                    let id: usize = field(n, "seller id", it.next())?;
                    if id != file.seller_bids.len() {
                        return Err(parse_err(n, format!("seller id {id} out of sequence")));
                    }
                    file.seller_bids.push(field(n, "seller bid", it.next())?);
                }
                "buyer" => {
                    let id: usize = field(n, "buyer id", it.next())?;
                    if id != file.buyers.len() {
                        return Err(parse_err(n, format!("buyer id {id} out of sequence")));
                    }
                    file.buyers.push(BuyerRecord {
                        bid: field(n, "buyer bid", it.next())?,
                        x: field(n, "x coordinate", it.next())?,
                        y: field(n, "y coordinate", it.next())?,
                    });
                }
                "group" => {
                    let groups = file.groups.get_or_insert_with(Vec::new);
                    let id: usize = field(n, "group id", it.next())?;
                    if id != groups.len() {
                        return Err(parse_err(n, format!("group id {id} out of sequence")));
                    }
                    let members = it
                        .by_ref()
                        .map(|m| field(n, "group member", Some(m)))
                        .collect::<Result<Vec<usize>, _>>()?;
                    if members.is_empty() {
                        return Err(parse_err(n, format!("group {id} has no members")));
                    }
                    groups.push(BuyerGroup { id, members });
                    continue;
                }
                other => return Err(parse_err(n, format!("unknown record {other:?}"))),
            }
            if let Some(extra) = it.next() {
                return Err(parse_err(n, format!("unexpected trailing field {extra:?}")));
            }
        }
        let last = text.lines().count();
        let need = |v: Option<usize>, what: &str| v.ok_or_else(|| parse_err(last, format!("missing `{what}` line")));
        let (m, nb) = (need(sellers, "sellers")?, need(buyers, "buyers")?);
        file.bit_length = need(bits, "bits")?;
        if file.seller_bids.len() != m {
            return Err(parse_err(last, format!("declared {m} sellers, found {}", file.seller_bids.len())));
        }
        if file.buyers.len() != nb {
            return Err(parse_err(last, format!("declared {nb} buyers, found {}", file.buyers.len())));
        }
        file.to_plain()?;
        Ok(file)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "sellers {}", self.seller_bids.len());
        let _ = writeln!(out, "buyers {}", self.buyers.len());
        let _ = writeln!(out, "bits {}", self.bit_length);
        let _ = writeln!(out, "arena {} {}", self.arena.width, self.arena.height);
        let _ = writeln!(out, "protection {}", self.protection);
        let _ = writeln!(out, "group_seed {}", self.group_seed);
        for (id, bid) in self.seller_bids.iter().enumerate() {
            let _ = writeln!(out, "seller {id} {bid}");
        }
        for (id, b) in self.buyers.iter().enumerate() {
            let _ = writeln!(out, "buyer {id} {} {} {}", b.bid, b.x, b.y);
        }
        for g in self.groups.iter().flatten() {
            let members: Vec<String> = g.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, "group {} {}", g.id, members.join(" "));
        }
        out
    }

    pub fn locations(&self) -> Vec<BuyerLocation> {
        self.buyers
            .iter()
            .enumerate()
            .map(|(id, b)| BuyerLocation { id, x: b.x, y: b.y })
            .collect()
    }

    pub fn conflict_graph(&self) -> Result<ConflictGraph, HarnessError> {
        let locations = self.locations();
        for loc in &locations {
            self.arena.check(loc)?;
        }
        Ok(build_conflict_graph(&locations, self.protection)?)
    }

    /// Groups from the file, or formed from the conflict graph.
    pub fn groups(&self) -> Result<Vec<BuyerGroup>, HarnessError> {
        let graph = self.conflict_graph()?;
        match &self.groups {
            Some(fixed) => {
                for g in fixed {
                    for (i, &u) in g.members.iter().enumerate() {
                        if g.members[i + 1..].iter().any(|&v| graph.has_edge(u, v)) {
                            return Err(HarnessError::ConflictingGroup(g.id));
                        }
                    }
                }
                Ok(fixed.clone())
            }
            None => Ok(form_groups(&graph, self.group_seed)),
        }
    }

    pub fn to_plain(&self) -> Result<PlainInstance, HarnessError> {
        let instance = PlainInstance {
            seller_bids: self.seller_bids.clone(),
            buyer_bids: self.buyers.iter().map(|b| b.bid).collect(),
            groups: self.groups()?,
            bid_bit_length: self.bit_length,
        };
        instance.validate()?;
        Ok(instance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub sellers: usize,
    pub buyers: usize,
    pub bit_length: usize,
    pub seed: u64,
    pub arena: Arena,
    pub protection: f64,
}

impl GenParams {
    pub fn new(sellers: usize, buyers: usize, bit_length: usize, seed: u64) -> Self {
        GenParams {
            sellers,
            buyers,
            bit_length,
            seed,
            arena: Arena::default(),
            protection: DEFAULT_PROTECTION_DISTANCE,
        }
    }
}

/// Random instance: uniform positions on a centimeter grid, uniform bids
/// capped so that no group bid can overflow.
pub fn generate(params: &GenParams) -> Result<InstanceFile, HarnessError> {
    if params.sellers == 0 || params.buyers == 0 {
        return Err(HarnessError::Generation("need at least one seller and one buyer".into()));
    }
    if !(2..=62).contains(&params.bit_length) {
        return Err(AuctionError::BitLength(params.bit_length).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cm = |extent: f64| (extent * 100.0).floor() as u64;
    let (wx, wy) = (cm(params.arena.width), cm(params.arena.height));
    let positions: Vec<(f64, f64)> = (0..params.buyers)
        .map(|_| {
            (
                rng.gen_range(0..=wx) as f64 / 100.0,
                rng.gen_range(0..=wy) as f64 / 100.0,
            )
        })
        .collect();
    let mut file = InstanceFile {
        bit_length: params.bit_length,
        arena: params.arena,
        protection: params.protection,
        group_seed: params.seed,
        seller_bids: Vec::new(),
        buyers: positions
            .iter()
            .map(|&(x, y)| BuyerRecord { bid: 0, x, y })
            .collect(),
        groups: None,
    };
    let largest = file.groups()?.iter().map(BuyerGroup::size).max().unwrap_or(1);
    let max_bid = (1u64 << params.bit_length) - 2;
    let cap = max_bid / largest as u64;
    if cap == 0 {
        return Err(HarnessError::Generation(format!(
            "a group of {largest} buyers cannot bid within {} bits",
            params.bit_length
        )));
    }
    file.seller_bids = (0..params.sellers).map(|_| rng.gen_range(1..=cap)).collect();
    for b in &mut file.buyers {
        b.bid = rng.gen_range(1..=cap);
    }
    file.to_plain()?;
    Ok(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    Memory,
    Tcp,
    /// Single thread, agent driven directly by the auctioneer's sends.
    Inline,
}

pub fn run_session(
    instance: &PlainInstance,
    config: &SessionConfig,
    transport: TransportMode,
) -> Result<SessionReport, ProtocolError> {
    match transport {
        TransportMode::Memory => run_local(instance, config),
        TransportMode::Tcp => run_tcp(instance, config),
        TransportMode::Inline => run_inline(instance, config),
    }
}

/// Compares a secure result with the oracle run in the same processing order.
pub fn oracle_check(
    instance: &PlainInstance,
    result: &AuctionResult,
    order: &ProcessingOrder,
) -> Result<(), HarnessError> {
    let expected = trust_plain_auction(instance, order)?;
    if &expected == result {
        return Ok(());
    }
    Err(HarnessError::Mismatch(format!(
        "--- oracle\n{}+++ secure\n{}",
        format_result(&expected),
        format_result(result)
    )))
}

pub fn format_result(result: &AuctionResult) -> String {
    let ids = |s: &std::collections::BTreeSet<usize>| {
        s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    };
    let mut out = String::new();
    if result.is_no_trade() {
        out.push_str("no trade\n");
        return out;
    }
    let _ = writeln!(out, "winning sellers: {}", ids(&result.winning_sellers));
    let _ = writeln!(out, "winning groups: {}", ids(&result.winning_groups));
    let _ = writeln!(out, "winning buyers: {}", ids(&result.winning_buyers));
    if let Some(p) = result.selling_price {
        let _ = writeln!(out, "selling price: {p}");
    }
    if let Some(p) = result.buying_group_price {
        let _ = writeln!(out, "buying price per group: {p}");
    }
    for (g, share) in &result.per_buyer_payments {
        let _ = writeln!(out, "group {g} pays {share} per buyer");
    }
    out
}

/// A benchmark sweep: every size at every bit length.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub sizes: Vec<(usize, usize)>,
    pub bit_lengths: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub key_bits: u32,
    pub transport: TransportMode,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sizes: vec![(10, 30)],
            bit_lengths: vec![8],
            reps: 10,
            seed: 0,
            key_bits: crate::paillier::DEFAULT_KEY_BITS,
            transport: TransportMode::Memory,
        }
    }
}

/// One CSV row; counts are means over the repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sellers: usize,
    pub buyers: usize,
    pub bit_length: usize,
    pub key_bits: u32,
    pub reps: usize,
    pub groups: f64,
    pub winners: f64,
    pub rounds: f64,
    pub auctioneer_frames: f64,
    pub agent_frames: f64,
    pub auctioneer_bytes: f64,
    pub agent_bytes: f64,
    pub bidder_bytes: f64,
    pub product_calls: f64,
    pub auctioneer_seconds: f64,
    pub agent_seconds: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "M,N,K,key_bits,reps,H,W,rounds,ae_frames,aa_frames,ae_bytes,aa_bytes,bidder_bytes,product_calls,ae_seconds,aa_seconds";

    pub fn total_frames(&self) -> f64 {
        self.auctioneer_frames + self.agent_frames
    }

    pub fn total_bytes(&self) -> f64 {
        self.auctioneer_bytes + self.agent_bytes
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            self.sellers,
            self.buyers,
            self.bit_length,
            self.key_bits,
            self.reps,
            self.groups,
            self.winners,
            self.rounds,
            self.auctioneer_frames,
            self.agent_frames,
            self.auctioneer_bytes,
            self.agent_bytes,
            self.bidder_bytes,
            self.product_calls,
            self.auctioneer_seconds,
            self.agent_seconds
        )
    }
}

/// Runs the sweep. Repetition `r` at a given size uses instance seed
/// `seed + r` for every bit length, so only K varies along the K axis.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, HarnessError> {
    let base_k = *spec
        .bit_lengths
        .iter()
        .min()
        .ok_or_else(|| HarnessError::Generation("empty bit length list".into()))?;
    if spec.reps == 0 {
        return Err(HarnessError::Generation("need at least one repetition".into()));
    }
    let mut rows = Vec::new();
    for &(m, n) in &spec.sizes {
        let instances = (0..spec.reps as u64)
            .map(|r| generate(&GenParams::new(m, n, base_k, spec.seed + r))?.to_plain())
            .collect::<Result<Vec<_>, _>>()?;
        for &k in &spec.bit_lengths {
            let mut sum = BenchRow {
                sellers: m,
                buyers: n,
                bit_length: k,
                key_bits: spec.key_bits,
                reps: spec.reps,
                groups: 0.0,
                winners: 0.0,
                rounds: 0.0,
                auctioneer_frames: 0.0,
                agent_frames: 0.0,
                auctioneer_bytes: 0.0,
                agent_bytes: 0.0,
                bidder_bytes: 0.0,
                product_calls: 0.0,
                auctioneer_seconds: 0.0,
                agent_seconds: 0.0,
            };
            for (r, instance) in instances.iter().enumerate() {
                let seed = spec.seed + r as u64;
                let config = SessionConfig {
                    key_bits: spec.key_bits,
                    bit_length: k,
                    permutation: PermutationMode::Seeded(seed),
                    rng_seed: Some(seed),
                };
                let report = run_session(instance, &config, spec.transport)?;
                let s = &report.stats;
                sum.groups += instance.group_count() as f64;
                sum.winners += report.result.winning_sellers.len() as f64;
                sum.rounds += s.rounds as f64;
                sum.auctioneer_frames += s.auctioneer.frames_sent as f64;
                sum.agent_frames += s.agent.frames_sent as f64;
                sum.auctioneer_bytes += s.auctioneer.bytes_sent as f64;
                sum.agent_bytes += s.agent.bytes_sent as f64;
                sum.bidder_bytes += s.bidders.bytes_sent as f64;
                sum.product_calls += s.product_calls as f64;
                sum.auctioneer_seconds += s.auctioneer_seconds;
                sum.agent_seconds += s.agent_seconds;
            }
            let reps = spec.reps as f64;
            for v in [
                &mut sum.groups,
                &mut sum.winners,
                &mut sum.rounds,
                &mut sum.auctioneer_frames,
                &mut sum.agent_frames,
                &mut sum.auctioneer_bytes,
                &mut sum.agent_bytes,
                &mut sum.bidder_bytes,
                &mut sum.product_calls,
                &mut sum.auctioneer_seconds,
                &mut sum.agent_seconds,
            ] {
                *v /= reps;
            }
            rows.push(sum);
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BenchRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Chi-square goodness of fit against the uniform distribution: `(statistic, p)`.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, dist.sf(stat))
}

/// Least-squares line: `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakReport {
    pub runs: usize,
    /// How often each permuted seller position was the first revealed α.
    pub alpha_counts: Vec<u64>,
    pub beta_counts: Vec<u64>,
    pub alpha_p: f64,
    pub beta_p: f64,
    pub violations: Vec<String>,
}

impl LeakReport {
    pub fn uniform(&self, threshold: f64) -> bool {
        self.alpha_p > threshold && self.beta_p > threshold
    }

    pub fn render(&self) -> String {
        let join = |v: &[u64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "runs: {}", self.runs);
        let _ = writeln!(out, "alpha counts: {}", join(&self.alpha_counts));
        let _ = writeln!(out, "alpha p-value: {:.6}", self.alpha_p);
        let _ = writeln!(out, "beta counts: {}", join(&self.beta_counts));
        let _ = writeln!(out, "beta p-value: {:.6}", self.beta_p);
        let _ = writeln!(out, "audit violations: {}", self.violations.len());
        for v in &self.violations {
            let _ = writeln!(out, "  {v}");
        }
        out
    }
}

/// Re-runs one instance `runs` times with fresh permutations and tallies the
/// agent's first-round view. With `base.permutation` seeded, run `i` uses
/// seed `s + i`; identity stays identity.
pub fn leakstat(
    instance: &PlainInstance,
    runs: usize,
    base: &SessionConfig,
    transport: TransportMode,
) -> Result<LeakReport, HarnessError> {
    let mut alpha_counts = vec![0u64; instance.sellers()];
    let mut beta_counts = vec![0u64; instance.group_count()];
    let mut violations = Vec::new();
    for i in 0..runs as u64 {
        let mut config = base.clone();
        if let PermutationMode::Seeded(s) = base.permutation {
            config.permutation = PermutationMode::Seeded(s.wrapping_add(i));
        }
        config.rng_seed = base.rng_seed.map(|s| s.wrapping_add(i));
        let report = run_session(instance, &config, transport)?;
        let first = report
            .agent
            .reveals
            .first()
            .ok_or_else(|| HarnessError::Generation("session revealed no round".into()))?;
        alpha_counts[first.alpha] += 1;
        beta_counts[first.beta] += 1;
        let inbound = report
            .auctioneer_view
            .iter()
            .filter(|(d, _)| *d == Direction::Received)
            .map(|(_, m)| m);
        for v in audit_auctioneer_view(inbound) {
            if !violations.contains(&v) {
                violations.push(v);
            }
        }
    }
    let (_, alpha_p) = chi_square_uniform(&alpha_counts);
    let (_, beta_p) = chi_square_uniform(&beta_counts);
    Ok(LeakReport {
        runs,
        alpha_counts,
        beta_counts,
        alpha_p,
        beta_p,
        violations,
    })
}
