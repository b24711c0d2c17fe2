//! Two-party secure winner determination.
//!
//! The auctioneer holds encrypted bids and the public key; the agent holds
//! the secret key. The auctioneer scans sellers and groups in a secret
//! random order, the agent marks candidate pairs in bit vectors it returns
//! encrypted, and only the final winner vectors and the critical pair's bids
//! are ever opened to the auctioneer.

use std::collections::BTreeSet;
use std::fmt;
use std::net::{TcpListener, ToSocketAddrs};
use std::time::Instant;

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::auction::{AuctionError, AuctionResult, PlainInstance, ProcessingOrder};
use crate::ebv::{
    decode_ebv, decrypt_small, encode_bid, serve_product, EbvBid, EbvError, Evaluator, Extreme,
    ProductOracle,
};
use crate::groups::BuyerGroup;
use crate::paillier::{keygen, Ciphertext, PaillierError, PublicKey, SecretKey, DEFAULT_KEY_BITS};
use crate::transport::{
    BidderRole, Channel, ChannelStats, MemoryChannel, Message, PlainField, RecordingChannel,
    TcpChannel, TransportError,
};

/// Default number of bits per encrypted bid.
pub const DEFAULT_BIT_LENGTH: usize = 8;

/// Where in the session a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    GroupBidding,
    Round(usize),
    Opening,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Setup => write!(f, "setup"),
            Phase::GroupBidding => write!(f, "group bidding"),
            Phase::Round(r) => write!(f, "round {r}"),
            Phase::Opening => write!(f, "opening"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Fault {
    #[error("invalid instance: {0}")]
    Input(#[from] AuctionError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bidder {bidder} rejected: {source}")]
    BidRejected { bidder: usize, source: EbvError },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Ebv(#[from] EbvError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error("expected {expected}, got {got}")]
    Unexpected {
        expected: &'static str,
        got: &'static str,
    },
    #[error("decrypted {what} = {value} outside [0, {bound})")]
    OutOfRange {
        what: &'static str,
        value: u64,
        bound: u64,
    },
    #[error("{0}")]
    Inconsistent(&'static str),
    #[error("round cap of {0} exceeded")]
    RoundCap(usize),
}

#[derive(Debug, Error)]
#[error("{phase}: {fault}")]
pub struct ProtocolError {
    pub phase: Phase,
    #[source]
    pub fault: Fault,
}

impl ProtocolError {
    pub fn new(phase: Phase, fault: impl Into<Fault>) -> Self {
        ProtocolError {
            phase,
            fault: fault.into(),
        }
    }

    pub fn is_input_error(&self) -> bool {
        matches!(
            self.fault,
            Fault::Input(_) | Fault::Config(_) | Fault::BidRejected { .. }
        )
    }
}

trait AtPhase<T> {
    fn at(self, phase: Phase) -> Result<T, ProtocolError>;
}

impl<T, E: Into<Fault>> AtPhase<T> for Result<T, E> {
    fn at(self, phase: Phase) -> Result<T, ProtocolError> {
        self.map_err(|e| ProtocolError::new(phase, e))
    }
}

/// How the auctioneer orders sellers and groups before the rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationMode {
    /// Fresh permutation from the OS entropy source.
    Random,
    /// Reproducible permutation, used to line the oracle up with a run.
    Seeded(u64),
    /// No permutation. Leaks the bid ranking to the agent; negative control only.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub key_bits: u32,
    pub bit_length: usize,
    pub permutation: PermutationMode,
    /// Deterministic randomness for keys, encryption and masking. Tests only.
    pub rng_seed: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            key_bits: DEFAULT_KEY_BITS,
            bit_length: DEFAULT_BIT_LENGTH,
            permutation: PermutationMode::Random,
            rng_seed: None,
        }
    }
}

impl SessionConfig {
    /// Small keys and fixed randomness for tests.
    pub fn for_tests(seed: u64) -> Self {
        SessionConfig {
            key_bits: 64,
            bit_length: DEFAULT_BIT_LENGTH,
            permutation: PermutationMode::Seeded(seed),
            rng_seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let k = self.bit_length;
        if !(2..=62).contains(&k) {
            return Err(ProtocolError::new(
                Phase::Setup,
                Fault::Config(format!("bit length {k} outside [2, 62]")),
            ));
        }
        let needed = (2 * k as u32 + 16).max(crate::paillier::MIN_KEY_BITS);
        if self.key_bits < needed {
            return Err(ProtocolError::new(
                Phase::Setup,
                Fault::Config(format!(
                    "{}-bit key too small for K = {k}; need at least {needed}",
                    self.key_bits
                )),
            ));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha20Rng {
        match self.rng_seed {
            Some(seed) => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                rng
            }
            None => ChaCha20Rng::from_entropy(),
        }
    }

    /// The processing order the auctioneer will use for `sellers × groups`.
    pub fn processing_order(&self, sellers: usize, groups: usize) -> ProcessingOrder {
        match self.permutation {
            PermutationMode::Identity => ProcessingOrder::identity(sellers, groups),
            PermutationMode::Seeded(seed) => {
                ProcessingOrder::random(sellers, groups, &mut ChaCha20Rng::seed_from_u64(seed))
            }
            PermutationMode::Random => {
                ProcessingOrder::random(sellers, groups, &mut ChaCha20Rng::from_entropy())
            }
        }
    }
}

const AGENT_STREAM: u64 = 1;
const AUCTIONEER_STREAM: u64 = 2;
const BIDDER_STREAM: u64 = 3;

/// Encrypts every bid; an out-of-range bid rejects that bidder.
pub fn submit_bids<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    bids: &[u64],
    bit_length: usize,
    rng: &mut R,
) -> Result<Vec<EbvBid>, ProtocolError> {
    bids.iter()
        .enumerate()
        .map(|(bidder, &v)| {
            encode_bid(pk, v, bit_length, rng)
                .map_err(|source| ProtocolError::new(Phase::Setup, Fault::BidRejected { bidder, source }))
        })
        .collect()
}

/// Per group: first minimum member bid, times the group size.
pub fn group_bidding<O: ProductOracle, R: RngCore + CryptoRng>(
    ev: &mut Evaluator<'_, O, R>,
    buyer_bids: &[EbvBid],
    groups: &[BuyerGroup],
) -> Result<Vec<EbvBid>, EbvError> {
    groups
        .iter()
        .map(|g| {
            let members: Vec<EbvBid> = g.members.iter().map(|&m| buyer_bids[m].clone()).collect();
            let lowest = ev.multi_bid_extreme(&members, Extreme::Min)?;
            ev.ebv_mul_const(&lowest.extreme_bid, g.size() as u64)
        })
        .collect()
}

/// Product oracle backed by the agent on the other end of a channel.
pub struct RemoteOracle<'a, C> {
    pk: &'a PublicKey,
    channel: &'a mut C,
}

#[derive(Debug, Error)]
#[error("expected PROD_RESP, got {0}")]
struct UnexpectedReply(&'static str);

impl<'a, C: Channel> RemoteOracle<'a, C> {
    pub fn new(pk: &'a PublicKey, channel: &'a mut C) -> Self {
        RemoteOracle { pk, channel }
    }
}

impl<C: Channel> ProductOracle for RemoteOracle<'_, C> {
    fn product(&mut self, x2: &Ciphertext, y2: &Ciphertext) -> Result<Ciphertext, EbvError> {
        let req = Message::ProdReq {
            x2: x2.value().clone(),
            y2: y2.value().clone(),
        };
        self.channel
            .send(&req)
            .map_err(|e| EbvError::Oracle(Box::new(e)))?;
        match self.channel.recv().map_err(|e| EbvError::Oracle(Box::new(e)))? {
            Message::ProdResp { product } => Ok(self.pk.ciphertext_from_value(product)?),
            other => Err(EbvError::Oracle(Box::new(UnexpectedReply(other.name())))),
        }
    }
}

/// Hook for inspecting the auctioneer's working bids after each update.
pub trait RoundObserver {
    fn round_completed(&mut self, _round: usize, _sellers: &[EbvBid], _groups: &[EbvBid]) {}
}

impl RoundObserver for () {}

/// What the auctioneer ends up knowing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuctioneerOutcome {
    pub result: AuctionResult,
    pub order: ProcessingOrder,
    /// Rounds executed, including the final stopping round.
    pub rounds: usize,
    /// Candidate pairs found; the winner count plus the critical pair.
    pub candidates: usize,
    pub product_calls: u64,
}

/// Auctioneer working state between rounds.
pub struct AuctioneerState {
    order: ProcessingOrder,
    groups: Vec<BuyerGroup>,
    sellers_permuted: Vec<EbvBid>,
    groups_permuted: Vec<EbvBid>,
    critical: Option<(EbvBid, EbvBid)>,
    round: usize,
}

impl AuctioneerState {
    /// Loads bids in permuted order. `group_bids[i]` belongs to `groups[i]`.
    pub fn new(
        seller_bids: Vec<EbvBid>,
        group_bids: Vec<EbvBid>,
        groups: Vec<BuyerGroup>,
        order: ProcessingOrder,
    ) -> Result<Self, ProtocolError> {
        order
            .check(seller_bids.len(), group_bids.len())
            .at(Phase::Setup)?;
        if groups.len() != group_bids.len() {
            return Err(ProtocolError::new(
                Phase::Setup,
                Fault::Inconsistent("group bid count differs from group count"),
            ));
        }
        let sellers_permuted = order.sellers.iter().map(|&i| seller_bids[i].clone()).collect();
        let groups_permuted = order.groups.iter().map(|&j| group_bids[j].clone()).collect();
        Ok(AuctioneerState {
            order,
            groups,
            sellers_permuted,
            groups_permuted,
            critical: None,
            round: 0,
        })
    }

    pub fn seller_bids(&self) -> &[EbvBid] {
        &self.sellers_permuted
    }

    pub fn group_bids(&self) -> &[EbvBid] {
        &self.groups_permuted
    }

    pub fn order(&self) -> &ProcessingOrder {
        &self.order
    }
}

/// Auctioneer side: receives the session key, collects bids, runs the rounds.
pub struct Auctioneer<C> {
    pk: PublicKey,
    channel: C,
    rng: ChaCha20Rng,
    products: u64,
}

impl<C: Channel> Auctioneer<C> {
    /// Waits for the agent's public key.
    pub fn connect(mut channel: C, rng: ChaCha20Rng) -> Result<Self, ProtocolError> {
        let pk = match channel.recv().at(Phase::Setup)? {
            Message::PublicKey { modulus } => PublicKey::from_modulus(modulus).at(Phase::Setup)?,
            other => {
                return Err(ProtocolError::new(
                    Phase::Setup,
                    Fault::Unexpected {
                        expected: "PUBLIC_KEY",
                        got: other.name(),
                    },
                ))
            }
        };
        Ok(Auctioneer {
            pk,
            channel,
            rng,
            products: 0,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn channel(&self) -> &C {
        &self.channel
    }

    pub fn into_channel(self) -> C {
        self.channel
    }

    fn evaluate<T>(
        &mut self,
        phase: Phase,
        f: impl FnOnce(&mut Evaluator<'_, RemoteOracle<'_, C>, ChaCha20Rng>) -> Result<T, EbvError>,
    ) -> Result<T, ProtocolError> {
        let mut oracle = RemoteOracle::new(&self.pk, &mut self.channel);
        let mut ev = Evaluator::new(&self.pk, &mut oracle, &mut self.rng);
        let out = f(&mut ev);
        self.products += ev.product_calls();
        out.at(phase)
    }

    /// Announces the session, computes encrypted group bids and returns the
    /// auctioneer's working state.
    pub fn prepare(
        &mut self,
        seller_bids: Vec<EbvBid>,
        buyer_bids: &[EbvBid],
        groups: Vec<BuyerGroup>,
        order: ProcessingOrder,
        bit_length: usize,
    ) -> Result<AuctioneerState, ProtocolError> {
        let shape = Message::SessionInit {
            sellers: seller_bids.len() as u64,
            groups: groups.len() as u64,
            bit_length: bit_length as u64,
        };
        self.channel.send(&shape).at(Phase::Setup)?;
        let group_bids =
            self.evaluate(Phase::GroupBidding, |ev| group_bidding(ev, buyer_bids, &groups))?;
        AuctioneerState::new(seller_bids, group_bids, groups, order)
    }

    /// Runs rounds until the agent reports the stop condition, then opens
    /// the prices and publishes the result.
    pub fn run(
        &mut self,
        mut state: AuctioneerState,
        observer: &mut dyn RoundObserver,
    ) -> Result<AuctioneerOutcome, ProtocolError> {
        let m = state.sellers_permuted.len();
        let h = state.groups_permuted.len();
        let cap = m.min(h) + 1;
        let mut candidates = 0;
        let (seller_flags, group_flags) = loop {
            state.round += 1;
            let phase = Phase::Round(state.round);
            if state.round > cap {
                return Err(ProtocolError::new(phase, Fault::RoundCap(cap)));
            }
            let sellers = state.sellers_permuted.clone();
            let groups = state.groups_permuted.clone();
            let (alpha, beta, comparison) = self.evaluate(phase, |ev| {
                let lowest = ev.multi_bid_extreme(&sellers, Extreme::Min)?;
                let highest = ev.multi_bid_extreme(&groups, Extreme::Max)?;
                let cmp =
                    ev.two_bid_extreme(&highest.extreme_bid, &lowest.extreme_bid, Extreme::Max)?;
                Ok((lowest, highest, cmp.flag_or_index))
            })?;
            self.channel
                .send(&Message::PairAnnounce {
                    alpha: alpha.flag_or_index.value().clone(),
                    beta: beta.flag_or_index.value().clone(),
                    r_max: comparison.value().clone(),
                })
                .at(phase)?;
            match self.channel.recv().at(phase)? {
                Message::CandEnc {
                    seller_flags,
                    group_flags,
                    r_max: 0,
                } => {
                    if seller_flags.len() != m || group_flags.len() != h {
                        return Err(ProtocolError::new(
                            phase,
                            Fault::Inconsistent("candidate vector length mismatch"),
                        ));
                    }
                    let ws = self.ciphertexts(seller_flags, phase)?;
                    let wg = self.ciphertexts(group_flags, phase)?;
                    candidates += 1;
                    state.critical = Some((alpha.extreme_bid, beta.extreme_bid));
                    let (s, g) = self.evaluate(phase, |ev| {
                        saturate(ev, &sellers, &groups, &ws, &wg)
                    })?;
                    state.sellers_permuted = s;
                    state.groups_permuted = g;
                    observer.round_completed(
                        state.round,
                        &state.sellers_permuted,
                        &state.groups_permuted,
                    );
                }
                Message::CandPlain {
                    seller_flags,
                    group_flags,
                    r_max: 1,
                } => break (seller_flags, group_flags),
                other => {
                    return Err(ProtocolError::new(
                        phase,
                        Fault::Unexpected {
                            expected: "CAND_ENC or CAND_PLAIN",
                            got: other.name(),
                        },
                    ))
                }
            }
        };
        self.open(state, seller_flags, group_flags, candidates)
    }

    fn open(
        &mut self,
        state: AuctioneerState,
        seller_flags: Vec<bool>,
        group_flags: Vec<bool>,
        candidates: usize,
    ) -> Result<AuctioneerOutcome, ProtocolError> {
        let phase = Phase::Opening;
        if seller_flags.len() != state.order.sellers.len()
            || group_flags.len() != state.order.groups.len()
        {
            return Err(ProtocolError::new(
                phase,
                Fault::Inconsistent("winner vector length mismatch"),
            ));
        }
        let winning_sellers: BTreeSet<usize> = unpermute(&seller_flags, &state.order.sellers);
        let winning_groups: BTreeSet<usize> = unpermute(&group_flags, &state.order.groups);
        if winning_sellers.len() != winning_groups.len()
            || winning_sellers.len() + 1 != candidates.max(1)
        {
            return Err(ProtocolError::new(
                phase,
                Fault::Inconsistent("winner vectors disagree with candidate count"),
            ));
        }
        let prices = match (&state.critical, winning_sellers.is_empty()) {
            (Some((seller, group)), false) => {
                let seller_bid = self.rerandomized(seller, phase)?;
                let group_bid = self.rerandomized(group, phase)?;
                self.channel
                    .send(&Message::DecryptReq {
                        seller_bid,
                        group_bid,
                    })
                    .at(phase)?;
                match self.channel.recv().at(phase)? {
                    Message::DecryptResp {
                        seller_price,
                        group_price,
                    } => Some((seller_price, group_price)),
                    other => {
                        return Err(ProtocolError::new(
                            phase,
                            Fault::Unexpected {
                                expected: "DECRYPT_RESP",
                                got: other.name(),
                            },
                        ))
                    }
                }
            }
            _ => None,
        };
        let result =
            AuctionResult::assemble(&state.groups, winning_sellers, winning_groups, prices);
        self.channel.send(&result_message(&result)).at(phase)?;
        Ok(AuctioneerOutcome {
            result,
            order: state.order,
            rounds: state.round,
            candidates,
            product_calls: self.products,
        })
    }

    fn ciphertexts(&self, raw: Vec<BigUint>, phase: Phase) -> Result<Vec<Ciphertext>, ProtocolError> {
        raw.into_iter()
            .map(|v| self.pk.ciphertext_from_value(v).at(phase))
            .collect()
    }

    fn rerandomized(&mut self, e: &EbvBid, phase: Phase) -> Result<Vec<BigUint>, ProtocolError> {
        e.bits()
            .iter()
            .map(|c| {
                self.pk
                    .rerandomize(c, &mut self.rng)
                    .map(|c| c.value().clone())
                    .at(phase)
            })
            .collect()
    }
}

/// Candidate sellers go to `2^K − 1`, candidate groups to `0`; others keep their bits.
fn saturate<O: ProductOracle, R: RngCore + CryptoRng>(
    ev: &mut Evaluator<'_, O, R>,
    sellers: &[EbvBid],
    groups: &[EbvBid],
    seller_flags: &[Ciphertext],
    group_flags: &[Ciphertext],
) -> Result<(Vec<EbvBid>, Vec<EbvBid>), EbvError> {
    let pk = ev.public_key().clone();
    let mut new_sellers = Vec::with_capacity(sellers.len());
    for (bid, w) in sellers.iter().zip(seller_flags) {
        let mut bits = Vec::with_capacity(bid.bit_length());
        for sigma in bid.bits() {
            // σ + w·(1 − σ) = σ + w − w·σ
            let ws = ev.secure_product(w, sigma)?;
            bits.push(pk.sub(&pk.add(sigma, w)?, &ws)?);
        }
        new_sellers.push(EbvBid::from_bits(bits));
    }
    let mut new_groups = Vec::with_capacity(groups.len());
    for (bid, w) in groups.iter().zip(group_flags) {
        let mut bits = Vec::with_capacity(bid.bit_length());
        for sigma in bid.bits() {
            let ws = ev.secure_product(w, sigma)?;
            bits.push(pk.sub(sigma, &ws)?);
        }
        new_groups.push(EbvBid::from_bits(bits));
    }
    Ok((new_sellers, new_groups))
}

fn unpermute(flags: &[bool], order: &[usize]) -> BTreeSet<usize> {
    flags
        .iter()
        .zip(order)
        .filter(|(&f, _)| f)
        .map(|(_, &id)| id)
        .collect()
}

fn result_message(result: &AuctionResult) -> Message {
    Message::Result {
        winning_sellers: result.winning_sellers.iter().map(|&s| s as u64).collect(),
        winning_groups: result.winning_groups.iter().map(|&g| g as u64).collect(),
        prices: match (result.selling_price, result.buying_group_price) {
            (Some(s), Some(b)) => vec![s, b],
            _ => vec![],
        },
    }
}

/// One decrypted `(α, β, R^max)` triple, in permuted 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reveal {
    pub alpha: usize,
    pub beta: usize,
    pub r_max: u64,
}

/// What the agent ends up knowing; winner vectors are in permuted space.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentOutcome {
    pub seller_flags: Vec<bool>,
    pub group_flags: Vec<bool>,
    pub prices: Option<(u64, u64)>,
    pub reveals: Vec<Reveal>,
    pub products_served: u64,
    pub published: Option<PublishedResult>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedResult {
    pub winning_sellers: Vec<u64>,
    pub winning_groups: Vec<u64>,
    pub prices: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AgentStage {
    AwaitingInit,
    Rounds,
    Stopped,
    Done,
}

/// Agent side as a message-driven state machine.
pub struct AgentSession {
    sk: SecretKey,
    rng: ChaCha20Rng,
    stage: AgentStage,
    seller_flags: Vec<bool>,
    group_flags: Vec<bool>,
    bit_length: usize,
    critical: Option<(usize, usize)>,
    outcome: AgentOutcome,
}

impl AgentSession {
    pub fn new(sk: SecretKey, rng: ChaCha20Rng) -> Self {
        AgentSession {
            sk,
            rng,
            stage: AgentStage::AwaitingInit,
            seller_flags: Vec::new(),
            group_flags: Vec::new(),
            bit_length: 0,
            critical: None,
            outcome: AgentOutcome::default(),
        }
    }

    /// Generates the session keypair.
    pub fn generate(key_bits: u32, mut rng: ChaCha20Rng) -> Result<Self, ProtocolError> {
        let (_, sk) = keygen(key_bits, &mut rng).at(Phase::Setup)?;
        Ok(Self::new(sk, rng))
    }

    pub fn public_key(&self) -> &PublicKey {
        self.sk.public_key()
    }

    /// First message of a session.
    pub fn hello(&self) -> Message {
        Message::PublicKey {
            modulus: self.sk.public_key().modulus().clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.stage == AgentStage::Done
    }

    pub fn seller_flags(&self) -> &[bool] {
        &self.seller_flags
    }

    pub fn group_flags(&self) -> &[bool] {
        &self.group_flags
    }

    /// Critical pair indices, 0-based in permuted order.
    pub fn critical(&self) -> Option<(usize, usize)> {
        self.critical
    }

    pub fn outcome(&self) -> &AgentOutcome {
        &self.outcome
    }

    pub fn into_outcome(mut self) -> AgentOutcome {
        self.outcome.seller_flags = self.seller_flags;
        self.outcome.group_flags = self.group_flags;
        self.outcome
    }

    fn phase(&self) -> Phase {
        match self.stage {
            AgentStage::AwaitingInit => Phase::Setup,
            AgentStage::Rounds => Phase::Round(self.outcome.reveals.len() + 1),
            AgentStage::Stopped | AgentStage::Done => Phase::Opening,
        }
    }

    fn cipher(&self, v: BigUint) -> Result<Ciphertext, ProtocolError> {
        self.sk
            .public_key()
            .ciphertext_from_value(v)
            .at(self.phase())
    }

    /// Handles one inbound message and returns the reply, if any.
    pub fn handle(&mut self, msg: Message) -> Result<Option<Message>, ProtocolError> {
        let phase = self.phase();
        let unexpected = |got: &'static str, expected: &'static str| {
            Err(ProtocolError::new(phase, Fault::Unexpected { expected, got }))
        };
        match (self.stage, msg) {
            (
                AgentStage::AwaitingInit,
                Message::SessionInit {
                    sellers,
                    groups,
                    bit_length,
                },
            ) => {
                if sellers == 0 || groups == 0 || !(2..=62).contains(&bit_length) {
                    return Err(ProtocolError::new(
                        phase,
                        Fault::Inconsistent("degenerate session shape"),
                    ));
                }
                self.seller_flags = vec![false; sellers as usize];
                self.group_flags = vec![false; groups as usize];
                self.bit_length = bit_length as usize;
                self.stage = AgentStage::Rounds;
                Ok(None)
            }
            (AgentStage::Rounds, Message::ProdReq { x2, y2 }) => {
                let (x2, y2) = (self.cipher(x2)?, self.cipher(y2)?);
                let (product, _) = serve_product(&self.sk, &x2, &y2, &mut self.rng).at(phase)?;
                self.outcome.products_served += 1;
                Ok(Some(Message::ProdResp {
                    product: product.value().clone(),
                }))
            }
            (AgentStage::Rounds, Message::PairAnnounce { alpha, beta, r_max }) => {
                let alpha = self.cipher(alpha)?;
                let beta = self.cipher(beta)?;
                let r_max = self.cipher(r_max)?;
                self.decide(&alpha, &beta, &r_max).map(Some)
            }
            (
                AgentStage::Stopped,
                Message::DecryptReq {
                    seller_bid,
                    group_bid,
                },
            ) => {
                if self.critical.is_none() {
                    return Err(ProtocolError::new(
                        phase,
                        Fault::Inconsistent("price request without a critical pair"),
                    ));
                }
                let seller_price = self.decode_price(seller_bid)?;
                let group_price = self.decode_price(group_bid)?;
                self.outcome.prices = Some((seller_price, group_price));
                Ok(Some(Message::DecryptResp {
                    seller_price,
                    group_price,
                }))
            }
            (
                AgentStage::Stopped,
                Message::Result {
                    winning_sellers,
                    winning_groups,
                    prices,
                },
            ) => {
                let prices = match prices.as_slice() {
                    [s, b] => Some((*s, *b)),
                    [] => None,
                    _ => {
                        return Err(ProtocolError::new(
                            phase,
                            Fault::Inconsistent("malformed price list"),
                        ))
                    }
                };
                self.outcome.published = Some(PublishedResult {
                    winning_sellers,
                    winning_groups,
                    prices,
                });
                self.stage = AgentStage::Done;
                Ok(None)
            }
            (AgentStage::AwaitingInit, other) => unexpected(other.name(), "SESSION_INIT"),
            (AgentStage::Rounds, other) => unexpected(other.name(), "PROD_REQ or PAIR_ANNOUNCE"),
            (AgentStage::Stopped, other) => unexpected(other.name(), "DECRYPT_REQ or RESULT"),
            (AgentStage::Done, other) => unexpected(other.name(), "end of session"),
        }
    }

    fn decide(
        &mut self,
        alpha: &Ciphertext,
        beta: &Ciphertext,
        r_max: &Ciphertext,
    ) -> Result<Message, ProtocolError> {
        let phase = self.phase();
        let m = self.seller_flags.len();
        let h = self.group_flags.len();
        let alpha = bounded(decrypt_small(&self.sk, alpha).at(phase)?, m, "alpha", phase)?;
        let beta = bounded(decrypt_small(&self.sk, beta).at(phase)?, h, "beta", phase)?;
        let r_max = bounded(decrypt_small(&self.sk, r_max).at(phase)?, 2, "R^max", phase)? as u64;
        self.outcome.reveals.push(Reveal { alpha, beta, r_max });
        if r_max == 0 {
            if self.seller_flags[alpha] || self.group_flags[beta] {
                return Err(ProtocolError::new(
                    phase,
                    Fault::Inconsistent("candidate selected twice"),
                ));
            }
            self.seller_flags[alpha] = true;
            self.group_flags[beta] = true;
            self.critical = Some((alpha, beta));
            let pk = self.sk.public_key().clone();
            let encrypt = |flags: &[bool], rng: &mut ChaCha20Rng| -> Vec<BigUint> {
                flags
                    .iter()
                    .map(|&f| pk.encrypt_u64(u64::from(f), rng).value().clone())
                    .collect()
            };
            let seller_flags = encrypt(&self.seller_flags, &mut self.rng);
            let group_flags = encrypt(&self.group_flags, &mut self.rng);
            Ok(Message::CandEnc {
                seller_flags,
                group_flags,
                r_max,
            })
        } else {
            if let Some((a, b)) = self.critical {
                self.seller_flags[a] = false;
                self.group_flags[b] = false;
            }
            self.stage = AgentStage::Stopped;
            Ok(Message::CandPlain {
                seller_flags: self.seller_flags.clone(),
                group_flags: self.group_flags.clone(),
                r_max,
            })
        }
    }

    fn decode_price(&self, bits: Vec<BigUint>) -> Result<u64, ProtocolError> {
        let phase = self.phase();
        if bits.len() != self.bit_length {
            return Err(ProtocolError::new(
                phase,
                Fault::Inconsistent("price vector has the wrong bit length"),
            ));
        }
        let bits = bits
            .into_iter()
            .map(|v| self.cipher(v))
            .collect::<Result<Vec<_>, _>>()?;
        decode_ebv(&self.sk, &EbvBid::from_bits(bits)).at(phase)
    }
}

fn bounded(value: u64, bound: usize, what: &'static str, phase: Phase) -> Result<usize, ProtocolError> {
    if value >= bound as u64 {
        return Err(ProtocolError::new(
            phase,
            Fault::OutOfRange {
                what,
                value,
                bound: bound as u64,
            },
        ));
    }
    Ok(value as usize)
}

/// Drives an agent session over a channel until the result is published.
pub fn run_agent<C: Channel>(
    mut session: AgentSession,
    channel: &mut C,
) -> Result<AgentOutcome, ProtocolError> {
    channel.send(&session.hello()).at(Phase::Setup)?;
    while !session.is_done() {
        let msg = channel.recv().at(session.phase())?;
        if let Some(reply) = session.handle(msg)? {
            channel.send(&reply).at(session.phase())?;
        }
    }
    Ok(session.into_outcome())
}

/// Counters for one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptStats {
    pub auctioneer: ChannelStats,
    pub agent: ChannelStats,
    pub bidders: ChannelStats,
    pub product_calls: u64,
    pub rounds: usize,
    pub candidates: usize,
    pub auctioneer_seconds: f64,
    pub agent_seconds: f64,
}

impl TranscriptStats {
    /// Frames exchanged between auctioneer and agent.
    pub fn party_frames(&self) -> u64 {
        self.auctioneer.frames_sent + self.agent.frames_sent
    }

    pub fn party_bytes(&self) -> u64 {
        self.auctioneer.bytes_sent + self.agent.bytes_sent
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub result: AuctionResult,
    pub order: ProcessingOrder,
    pub stats: TranscriptStats,
    pub agent: AgentOutcome,
    /// Every frame the auctioneer sent or received on its agent link.
    pub auctioneer_view: Vec<(crate::transport::Direction, Message)>,
}

/// Plaintext categories the auctioneer may legitimately receive: the result
/// fields, plus bidder identities and the public key.
pub const AUCTIONEER_ALLOWED: [PlainField; 7] = [
    PlainField::SellerWinnerVector,
    PlainField::GroupWinnerVector,
    PlainField::ComparisonOutcome,
    PlainField::SellingPrice,
    PlainField::BuyingPrice,
    PlainField::KeyMaterial,
    PlainField::BidderIdentity,
];

/// Names of inbound messages carrying plaintext outside [`AUCTIONEER_ALLOWED`].
pub fn audit_auctioneer_view<'a>(inbound: impl IntoIterator<Item = &'a Message>) -> Vec<String> {
    inbound
        .into_iter()
        .filter_map(|m| {
            let bad: Vec<PlainField> = m
                .plaintext_fields()
                .into_iter()
                .filter(|f| !AUCTIONEER_ALLOWED.contains(f))
                .collect();
            (!bad.is_empty()).then(|| format!("{} carries {:?}", m.name(), bad))
        })
        .collect()
}

/// Runs the bidders' submissions through a channel, as they would reach the
/// auctioneer over the network.
fn collect_bids<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    instance: &PlainInstance,
    bit_length: usize,
    rng: &mut R,
) -> Result<(Vec<EbvBid>, Vec<EbvBid>, ChannelStats), ProtocolError> {
    let sellers = submit_bids(pk, &instance.seller_bids, bit_length, rng)?;
    let buyers = submit_bids(pk, &instance.buyer_bids, bit_length, rng)?;
    let (mut bidder_side, mut auctioneer_side) = MemoryChannel::pair();
    let mut received = |role: BidderRole, bids: &[EbvBid]| -> Result<Vec<EbvBid>, ProtocolError> {
        let mut out = Vec::with_capacity(bids.len());
        for (i, bid) in bids.iter().enumerate() {
            bidder_side
                .send(&Message::BidSubmit {
                    role,
                    bidder: i as u64,
                    bits: bid.bits().iter().map(|c| c.value().clone()).collect(),
                })
                .at(Phase::Setup)?;
            match auctioneer_side.recv().at(Phase::Setup)? {
                Message::BidSubmit { bits, .. } => {
                    let bits = bits
                        .into_iter()
                        .map(|v| pk.ciphertext_from_value(v))
                        .collect::<Result<Vec<_>, _>>()
                        .at(Phase::Setup)?;
                    out.push(EbvBid::from_bits(bits));
                }
                other => {
                    return Err(ProtocolError::new(
                        Phase::Setup,
                        Fault::Unexpected {
                            expected: "BID_SUBMIT",
                            got: other.name(),
                        },
                    ))
                }
            }
        }
        Ok(out)
    };
    let sellers = received(BidderRole::Seller, &sellers)?;
    let buyers = received(BidderRole::Buyer, &buyers)?;
    Ok((sellers, buyers, bidder_side.stats()))
}

fn check_session(instance: &PlainInstance, config: &SessionConfig) -> Result<(), ProtocolError> {
    config.validate()?;
    instance.validate().at(Phase::Setup)?;
    if config.bit_length < instance.bid_bit_length {
        return Err(ProtocolError::new(
            Phase::Setup,
            Fault::Config(format!(
                "session bit length {} below the instance's {}",
                config.bit_length, instance.bid_bit_length
            )),
        ));
    }
    Ok(())
}

/// Outcome, bidder-channel stats and the auctioneer's message log.
pub type AuctioneerRun = (AuctioneerOutcome, ChannelStats, Vec<(crate::transport::Direction, Message)>);

/// Auctioneer half of a session over an established channel to the agent.
pub fn run_auctioneer<C: Channel>(
    instance: &PlainInstance,
    config: &SessionConfig,
    channel: C,
    observer: &mut dyn RoundObserver,
) -> Result<AuctioneerRun, ProtocolError>
{
    check_session(instance, config)?;
    let k = config.bit_length;
    let mut ae = Auctioneer::connect(RecordingChannel::new(channel), config.rng(AUCTIONEER_STREAM))?;
    let mut bidder_rng = config.rng(BIDDER_STREAM);
    let (sellers, buyers, bidder_stats) = collect_bids(ae.public_key(), instance, k, &mut bidder_rng)?;
    let order = config.processing_order(instance.sellers(), instance.group_count());
    let state = ae.prepare(sellers, &buyers, instance.groups.clone(), order, k)?;
    let outcome = ae.run(state, observer)?;
    let log = ae.into_channel().log;
    Ok((outcome, bidder_stats, log))
}

/// Agent half of a session: generates the key and serves until the end.
pub fn serve_agent<C: Channel>(
    config: &SessionConfig,
    channel: &mut C,
) -> Result<AgentOutcome, ProtocolError> {
    config.validate()?;
    let session = AgentSession::generate(config.key_bits, config.rng(AGENT_STREAM))?;
    run_agent(session, channel)
}

fn join_parties(
    ae: Result<AuctioneerRun, ProtocolError>,
    aa: Result<AgentOutcome, ProtocolError>,
    ae_stats: ChannelStats,
    aa_stats: ChannelStats,
    seconds: (f64, f64),
) -> Result<SessionReport, ProtocolError> {
    // The auctioneer's error is the more informative one when both abort.
    let (outcome, bidders, view) = ae?;
    let agent = aa?;
    Ok(SessionReport {
        stats: TranscriptStats {
            auctioneer: ae_stats,
            agent: aa_stats,
            bidders,
            product_calls: outcome.product_calls,
            rounds: outcome.rounds,
            candidates: outcome.candidates,
            auctioneer_seconds: seconds.0,
            agent_seconds: seconds.1,
        },
        result: outcome.result,
        order: outcome.order,
        agent,
        auctioneer_view: view,
    })
}

/// Both parties in one process over an in-memory duplex channel.
pub fn run_local(
    instance: &PlainInstance,
    config: &SessionConfig,
) -> Result<SessionReport, ProtocolError> {
    run_local_observed(instance, config, &mut ())
}

pub fn run_local_observed(
    instance: &PlainInstance,
    config: &SessionConfig,
    observer: &mut dyn RoundObserver,
) -> Result<SessionReport, ProtocolError> {
    check_session(instance, config)?;
    let (ae_end, mut aa_end) = MemoryChannel::pair();
    std::thread::scope(|scope| {
        let agent = scope.spawn(move || {
            let start = Instant::now();
            let out = serve_agent(config, &mut aa_end);
            (out, aa_end.stats(), start.elapsed().as_secs_f64())
        });
        let start = Instant::now();
        let mut ae_end = ae_end;
        let ae = run_auctioneer(instance, config, &mut ae_end, observer);
        let ae_secs = start.elapsed().as_secs_f64();
        let ae_stats = ae_end.stats();
        // Dropping our end unblocks an agent still waiting on a failed session.
        drop(ae_end);
        let (aa, aa_stats, aa_secs) = agent.join().expect("agent thread panicked");
        join_parties(ae, aa, ae_stats, aa_stats, (ae_secs, aa_secs))
    })
}

/// Both parties in one process over a loopback TCP connection.
pub fn run_tcp(instance: &PlainInstance, config: &SessionConfig) -> Result<SessionReport, ProtocolError> {
    check_session(instance, config)?;
    let listener = TcpListener::bind("127.0.0.1:0")
        .map_err(TransportError::from)
        .at(Phase::Setup)?;
    let addr = listener
        .local_addr()
        .map_err(TransportError::from)
        .at(Phase::Setup)?;
    std::thread::scope(|scope| {
        let agent = scope.spawn(move || {
            let start = Instant::now();
            let mut channel = match TcpChannel::accept(&listener) {
                Ok(c) => c,
                Err(e) => return (Err(ProtocolError::new(Phase::Setup, e)), ChannelStats::default(), 0.0),
            };
            let out = serve_agent(config, &mut channel);
            (out, channel.stats(), start.elapsed().as_secs_f64())
        });
        let start = Instant::now();
        let ae = TcpChannel::connect(addr).at(Phase::Setup);
        let (ae, ae_stats) = match ae {
            Ok(mut channel) => {
                let out = run_auctioneer(instance, config, &mut channel, &mut ());
                (out, channel.stats())
            }
            Err(e) => (Err(e), ChannelStats::default()),
        };
        let ae_secs = start.elapsed().as_secs_f64();
        let (aa, aa_stats, aa_secs) = agent.join().expect("agent thread panicked");
        join_parties(ae, aa, ae_stats, aa_stats, (ae_secs, aa_secs))
    })
}

/// Auctioneer connecting to a remote agent.
pub fn run_remote_auctioneer<A: ToSocketAddrs>(
    instance: &PlainInstance,
    config: &SessionConfig,
    addr: A,
) -> Result<AuctioneerOutcome, ProtocolError> {
    let mut channel = TcpChannel::connect(addr).at(Phase::Setup)?;
    run_auctioneer(instance, config, &mut channel, &mut ()).map(|(o, _, _)| o)
}

/// Agent accepting one auctioneer connection.
pub fn run_remote_agent(listener: &TcpListener, config: &SessionConfig) -> Result<AgentOutcome, ProtocolError> {
    let mut channel = TcpChannel::accept(listener).at(Phase::Setup)?;
    serve_agent(config, &mut channel)
}

/// Auctioneer-side channel that hands every frame straight to an in-process
/// agent state machine. Single-threaded; frames are encoded exactly as on
/// the wire.
pub struct InlineAgent {
    session: AgentSession,
    pending: std::collections::VecDeque<Vec<u8>>,
    auctioneer: ChannelStats,
    agent: ChannelStats,
    error: Option<ProtocolError>,
}

impl InlineAgent {
    pub fn new(session: AgentSession) -> Result<Self, TransportError> {
        let hello = crate::transport::encode_message(&session.hello())?;
        let mut agent = ChannelStats::default();
        agent.frames_sent += 1;
        agent.bytes_sent += hello.len() as u64;
        Ok(InlineAgent {
            session,
            pending: [hello].into(),
            auctioneer: ChannelStats::default(),
            agent,
            error: None,
        })
    }

    pub fn agent_stats(&self) -> ChannelStats {
        self.agent
    }

    pub fn take_error(&mut self) -> Option<ProtocolError> {
        self.error.take()
    }

    pub fn into_outcome(self) -> AgentOutcome {
        self.session.into_outcome()
    }
}

impl Channel for InlineAgent {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = crate::transport::encode_message(msg)?;
        self.auctioneer.frames_sent += 1;
        self.auctioneer.bytes_sent += frame.len() as u64;
        self.agent.frames_received += 1;
        self.agent.bytes_received += frame.len() as u64;
        let msg = crate::transport::decode_message(&frame)?;
        match self.session.handle(msg) {
            Ok(Some(reply)) => {
                let frame = crate::transport::encode_message(&reply)?;
                self.agent.frames_sent += 1;
                self.agent.bytes_sent += frame.len() as u64;
                self.pending.push_back(frame);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(e) => {
                self.error = Some(e);
                Err(TransportError::Closed)
            }
        }
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.pending.pop_front().ok_or(TransportError::Closed)?;
        self.auctioneer.frames_received += 1;
        self.auctioneer.bytes_received += frame.len() as u64;
        crate::transport::decode_message(&frame)
    }

    fn stats(&self) -> ChannelStats {
        self.auctioneer
    }
}

/// Both parties on the calling thread; usable where threads are not.
pub fn run_inline(
    instance: &PlainInstance,
    config: &SessionConfig,
) -> Result<SessionReport, ProtocolError> {
    check_session(instance, config)?;
    let session = AgentSession::generate(config.key_bits, config.rng(AGENT_STREAM))?;
    let mut link = InlineAgent::new(session).at(Phase::Setup)?;
    let ae = run_auctioneer(instance, config, &mut link, &mut ());
    if let Some(agent_err) = link.take_error() {
        return Err(agent_err);
    }
    let ae_stats = link.stats();
    let aa_stats = link.agent_stats();
    let agent = link.into_outcome();
    join_parties(ae, Ok(agent), ae_stats, aa_stats, (0.0, 0.0))
}
