//! Wire format and delivery for the two-party protocol.
//!
//! A frame is a 4-byte big-endian length covering the type byte and the
//! payload, then the type byte, then the fields. Integers are a 2-byte
//! big-endian length followed by the canonical big-endian magnitude (zero is
//! the empty magnitude). Vectors carry a 2-byte element count. Bit vectors
//! carry a 2-byte bit count followed by the bits packed MSB first, zero-padded.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;

use num_bigint::BigUint;
use num_traits::Zero;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: &'static str },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("field too large for its length prefix: {0}")]
    Encode(&'static str),
    #[error("peer closed the connection")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Which side a submitted bid belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BidderRole {
    Seller = 0,
    Buyer = 1,
}

/// Protocol message catalog.
///
/// Ciphertexts travel as their raw group element; key tags are re-attached by
/// the receiver, which knows the session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Bidder → auctioneer: one encrypted bit vector.
    BidSubmit {
        role: BidderRole,
        bidder: u64,
        bits: Vec<BigUint>,
    },
    /// Auctioneer → agent: masked operands `E(x₂)`, `E(y₂)`.
    ProdReq { x2: BigUint, y2: BigUint },
    /// Agent → auctioneer: `E(x₂·y₂)`.
    ProdResp { product: BigUint },
    /// Auctioneer → agent: `E(α)`, `E(β)`, `E(R^max)`.
    PairAnnounce {
        alpha: BigUint,
        beta: BigUint,
        r_max: BigUint,
    },
    /// Agent → auctioneer on a continue round.
    CandEnc {
        seller_flags: Vec<BigUint>,
        group_flags: Vec<BigUint>,
        r_max: u64,
    },
    /// Agent → auctioneer on the stop round.
    CandPlain {
        seller_flags: Vec<bool>,
        group_flags: Vec<bool>,
        r_max: u64,
    },
    /// Auctioneer → agent: the critical pair's encrypted bids.
    DecryptReq {
        seller_bid: Vec<BigUint>,
        group_bid: Vec<BigUint>,
    },
    DecryptResp { seller_price: u64, group_price: u64 },
    /// Auctioneer → agent (and bidders): the published outcome.
    Result {
        winning_sellers: Vec<u64>,
        winning_groups: Vec<u64>,
        /// Empty when nothing trades, otherwise `[selling, buying]`.
        prices: Vec<u64>,
    },
    /// Auctioneer → agent: session shape.
    SessionInit {
        sellers: u64,
        groups: u64,
        bit_length: u64,
    },
    /// Agent → auctioneer: the session public key modulus.
    PublicKey { modulus: BigUint },
}

/// Category of a plaintext value carried by a message, for view audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlainField {
    BidderIdentity,
    SessionShape,
    KeyMaterial,
    SellerWinnerVector,
    GroupWinnerVector,
    ComparisonOutcome,
    SellingPrice,
    BuyingPrice,
    PublishedResult,
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::BidSubmit { .. } => 0x01,
            Message::ProdReq { .. } => 0x02,
            Message::ProdResp { .. } => 0x03,
            Message::PairAnnounce { .. } => 0x04,
            Message::CandEnc { .. } => 0x05,
            Message::CandPlain { .. } => 0x06,
            Message::DecryptReq { .. } => 0x07,
            Message::DecryptResp { .. } => 0x08,
            Message::Result { .. } => 0x09,
            Message::SessionInit { .. } => 0x0a,
            Message::PublicKey { .. } => 0x0b,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::BidSubmit { .. } => "BID_SUBMIT",
            Message::ProdReq { .. } => "PROD_REQ",
            Message::ProdResp { .. } => "PROD_RESP",
            Message::PairAnnounce { .. } => "PAIR_ANNOUNCE",
            Message::CandEnc { .. } => "CAND_ENC",
            Message::CandPlain { .. } => "CAND_PLAIN",
            Message::DecryptReq { .. } => "DECRYPT_REQ",
            Message::DecryptResp { .. } => "DECRYPT_RESP",
            Message::Result { .. } => "RESULT",
            Message::SessionInit { .. } => "SESSION_INIT",
            Message::PublicKey { .. } => "PUBLIC_KEY",
        }
    }

    /// Plaintext (non-ciphertext) fields, by category.
    pub fn plaintext_fields(&self) -> Vec<PlainField> {
        use PlainField::*;
        match self {
            Message::BidSubmit { .. } => vec![BidderIdentity],
            Message::ProdReq { .. } | Message::ProdResp { .. } => vec![],
            Message::PairAnnounce { .. } => vec![],
            Message::CandEnc { .. } => vec![ComparisonOutcome],
            Message::CandPlain { .. } => {
                vec![SellerWinnerVector, GroupWinnerVector, ComparisonOutcome]
            }
            Message::DecryptReq { .. } => vec![],
            Message::DecryptResp { .. } => vec![SellingPrice, BuyingPrice],
            Message::Result { .. } => vec![PublishedResult],
            Message::SessionInit { .. } => vec![SessionShape],
            Message::PublicKey { .. } => vec![KeyMaterial],
        }
    }
}

pub const MAX_FRAME: usize = u32::MAX as usize;

/// Serializes a message into one self-delimiting frame.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, TransportError> {
    let mut body = vec![msg.type_byte()];
    match msg {
        Message::BidSubmit { role, bidder, bits } => {
            put_int(&mut body, &BigUint::from(*role as u8))?;
            put_int(&mut body, &BigUint::from(*bidder))?;
            put_vec(&mut body, bits)?;
        }
        Message::ProdReq { x2, y2 } => {
            put_int(&mut body, x2)?;
            put_int(&mut body, y2)?;
        }
        Message::ProdResp { product } => put_int(&mut body, product)?,
        Message::PairAnnounce { alpha, beta, r_max } => {
            put_int(&mut body, alpha)?;
            put_int(&mut body, beta)?;
            put_int(&mut body, r_max)?;
        }
        Message::CandEnc {
            seller_flags,
            group_flags,
            r_max,
        } => {
            put_vec(&mut body, seller_flags)?;
            put_vec(&mut body, group_flags)?;
            put_int(&mut body, &BigUint::from(*r_max))?;
        }
        Message::CandPlain {
            seller_flags,
            group_flags,
            r_max,
        } => {
            put_bits(&mut body, seller_flags)?;
            put_bits(&mut body, group_flags)?;
            put_int(&mut body, &BigUint::from(*r_max))?;
        }
        Message::DecryptReq {
            seller_bid,
            group_bid,
        } => {
            put_vec(&mut body, seller_bid)?;
            put_vec(&mut body, group_bid)?;
        }
        Message::DecryptResp {
            seller_price,
            group_price,
        } => {
            put_int(&mut body, &BigUint::from(*seller_price))?;
            put_int(&mut body, &BigUint::from(*group_price))?;
        }
        Message::Result {
            winning_sellers,
            winning_groups,
            prices,
        } => {
            for list in [winning_sellers, winning_groups, prices] {
                let ints: Vec<BigUint> = list.iter().map(|&v| BigUint::from(v)).collect();
                put_vec(&mut body, &ints)?;
            }
        }
        Message::SessionInit {
            sellers,
            groups,
            bit_length,
        } => {
            for v in [sellers, groups, bit_length] {
                put_int(&mut body, &BigUint::from(*v))?;
            }
        }
        Message::PublicKey { modulus } => put_int(&mut body, modulus)?,
    }
    if body.len() > MAX_FRAME {
        return Err(TransportError::Encode("frame"));
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Parses exactly one complete frame; trailing bytes are an error.
pub fn decode_message(bytes: &[u8]) -> Result<Message, TransportError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(TransportError::Decode {
            offset: used,
            reason: "trailing bytes after frame",
        });
    }
    Ok(msg)
}

/// Parses the first frame of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), TransportError> {
    if bytes.len() < 4 {
        return Err(TransportError::Decode {
            offset: bytes.len(),
            reason: "truncated frame header",
        });
    }
    let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if declared == 0 {
        return Err(TransportError::Decode {
            offset: 0,
            reason: "empty frame",
        });
    }
    if bytes.len() - 4 < declared {
        return Err(TransportError::Decode {
            offset: bytes.len(),
            reason: "truncated frame body",
        });
    }
    let mut r = Reader {
        buf: &bytes[..4 + declared],
        pos: 5,
    };
    let msg = match bytes[4] {
        0x01 => {
            let role = match r.small()? {
                0 => BidderRole::Seller,
                1 => BidderRole::Buyer,
                _ => return Err(r.err("bad bidder role")),
            };
            Message::BidSubmit {
                role,
                bidder: r.small()?,
                bits: r.vec()?,
            }
        }
        0x02 => Message::ProdReq {
            x2: r.int()?,
            y2: r.int()?,
        },
        0x03 => Message::ProdResp { product: r.int()? },
        0x04 => Message::PairAnnounce {
            alpha: r.int()?,
            beta: r.int()?,
            r_max: r.int()?,
        },
        0x05 => Message::CandEnc {
            seller_flags: r.vec()?,
            group_flags: r.vec()?,
            r_max: r.small()?,
        },
        0x06 => Message::CandPlain {
            seller_flags: r.bits()?,
            group_flags: r.bits()?,
            r_max: r.small()?,
        },
        0x07 => Message::DecryptReq {
            seller_bid: r.vec()?,
            group_bid: r.vec()?,
        },
        0x08 => Message::DecryptResp {
            seller_price: r.small()?,
            group_price: r.small()?,
        },
        0x09 => Message::Result {
            winning_sellers: r.small_vec()?,
            winning_groups: r.small_vec()?,
            prices: r.small_vec()?,
        },
        0x0a => Message::SessionInit {
            sellers: r.small()?,
            groups: r.small()?,
            bit_length: r.small()?,
        },
        0x0b => Message::PublicKey { modulus: r.int()? },
        other => return Err(TransportError::UnknownType(other)),
    };
    if r.pos != r.buf.len() {
        return Err(r.err("declared length exceeds fields"));
    }
    Ok((msg, r.pos))
}

fn put_int(out: &mut Vec<u8>, x: &BigUint) -> Result<(), TransportError> {
    let bytes = if x.is_zero() { Vec::new() } else { x.to_bytes_be() };
    let len = u16::try_from(bytes.len()).map_err(|_| TransportError::Encode("integer"))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&bytes);
    Ok(())
}

fn put_count(out: &mut Vec<u8>, n: usize, what: &'static str) -> Result<(), TransportError> {
    let n = u16::try_from(n).map_err(|_| TransportError::Encode(what))?;
    out.extend_from_slice(&n.to_be_bytes());
    Ok(())
}

fn put_vec(out: &mut Vec<u8>, xs: &[BigUint]) -> Result<(), TransportError> {
    put_count(out, xs.len(), "vector")?;
    xs.iter().try_for_each(|x| put_int(out, x))
}

fn put_bits(out: &mut Vec<u8>, bits: &[bool]) -> Result<(), TransportError> {
    put_count(out, bits.len(), "bit vector")?;
    for chunk in bits.chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)));
        out.push(byte);
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn err(&self, reason: &'static str) -> TransportError {
        TransportError::Decode {
            offset: self.pos,
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], TransportError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("field runs past end of frame"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<usize, TransportError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]) as usize)
    }

    fn int(&mut self) -> Result<BigUint, TransportError> {
        let len = self.u16()?;
        let start = self.pos;
        let body = self.take(len)?;
        if body.first() == Some(&0) {
            return Err(TransportError::Decode {
                offset: start,
                reason: "non-canonical magnitude (leading zero)",
            });
        }
        Ok(BigUint::from_bytes_be(body))
    }

    fn small(&mut self) -> Result<u64, TransportError> {
        let start = self.pos;
        let v = self.int()?;
        u64::try_from(&v).map_err(|_| TransportError::Decode {
            offset: start,
            reason: "integer does not fit in 64 bits",
        })
    }

    fn vec(&mut self) -> Result<Vec<BigUint>, TransportError> {
        let n = self.u16()?;
        (0..n).map(|_| self.int()).collect()
    }

    fn small_vec(&mut self) -> Result<Vec<u64>, TransportError> {
        let n = self.u16()?;
        (0..n).map(|_| self.small()).collect()
    }

    fn bits(&mut self) -> Result<Vec<bool>, TransportError> {
        let n = self.u16()?;
        let start = self.pos;
        let packed = self.take(n.div_ceil(8))?;
        let bits: Vec<bool> = (0..n).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        if n % 8 != 0 {
            let pad_mask = 0xffu8 >> (n % 8);
            if packed[packed.len() - 1] & pad_mask != 0 {
                return Err(TransportError::Decode {
                    offset: start + packed.len() - 1,
                    reason: "non-zero padding bits",
                });
            }
        }
        Ok(bits)
    }
}

/// Traffic counters for one endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
}

impl ChannelStats {
    fn sent(&mut self, bytes: usize) {
        self.frames_sent += 1;
        self.bytes_sent += bytes as u64;
    }

    fn received(&mut self, bytes: usize) {
        self.frames_received += 1;
        self.bytes_received += bytes as u64;
    }
}

/// Ordered, reliable, whole-frame delivery to the peer.
pub trait Channel {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
    fn stats(&self) -> ChannelStats;
}

impl<C: Channel + ?Sized> Channel for &mut C {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        (**self).recv()
    }

    fn stats(&self) -> ChannelStats {
        (**self).stats()
    }
}

/// In-process endpoint; frames are encoded and decoded exactly as on a socket.
pub struct MemoryChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    stats: ChannelStats,
}

impl MemoryChannel {
    pub fn pair() -> (MemoryChannel, MemoryChannel) {
        let (tx_a, rx_b) = mpsc::channel();
        let (tx_b, rx_a) = mpsc::channel();
        (
            MemoryChannel {
                tx: tx_a,
                rx: rx_a,
                stats: ChannelStats::default(),
            },
            MemoryChannel {
                tx: tx_b,
                rx: rx_b,
                stats: ChannelStats::default(),
            },
        )
    }
}

impl Channel for MemoryChannel {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = encode_message(msg)?;
        self.stats.sent(frame.len());
        self.tx.send(frame).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        self.stats.received(frame.len());
        decode_message(&frame)
    }

    fn stats(&self) -> ChannelStats {
        self.stats
    }
}

/// Stream-socket endpoint.
pub struct TcpChannel {
    stream: TcpStream,
    stats: ChannelStats,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel {
            stream,
            stats: ChannelStats::default(),
        })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        Self::new(TcpStream::connect(addr)?)
    }

    /// Accepts a single peer on an already bound listener.
    pub fn accept(listener: &TcpListener) -> Result<Self, TransportError> {
        let (stream, _) = listener.accept()?;
        Self::new(stream)
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = encode_message(msg)?;
        self.stream.write_all(&frame).map_err(closed_or_io)?;
        self.stats.sent(frame.len());
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let mut header = [0u8; 4];
        self.stream.read_exact(&mut header).map_err(closed_or_io)?;
        let len = u32::from_be_bytes(header) as usize;
        let mut frame = Vec::with_capacity(4 + len);
        frame.extend_from_slice(&header);
        frame.resize(4 + len, 0);
        self.stream.read_exact(&mut frame[4..]).map_err(closed_or_io)?;
        self.stats.received(frame.len());
        decode_message(&frame)
    }

    fn stats(&self) -> ChannelStats {
        self.stats
    }
}

fn closed_or_io(e: std::io::Error) -> TransportError {
    use std::io::ErrorKind::*;
    match e.kind() {
        UnexpectedEof | ConnectionReset | ConnectionAborted | BrokenPipe => TransportError::Closed,
        _ => TransportError::Io(e),
    }
}

/// Wraps a channel and keeps a copy of every frame in both directions.
pub struct RecordingChannel<C> {
    inner: C,
    pub log: Vec<(Direction, Message)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

impl<C: Channel> RecordingChannel<C> {
    pub fn new(inner: C) -> Self {
        RecordingChannel {
            inner,
            log: Vec::new(),
        }
    }

    pub fn inbound(&self) -> impl Iterator<Item = &Message> {
        self.log
            .iter()
            .filter(|(d, _)| *d == Direction::Received)
            .map(|(_, m)| m)
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: Channel> Channel for RecordingChannel<C> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.inner.send(msg)?;
        self.log.push((Direction::Sent, msg.clone()));
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let msg = self.inner.recv()?;
        self.log.push((Direction::Received, msg.clone()));
        Ok(msg)
    }

    fn stats(&self) -> ChannelStats {
        self.inner.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_encodings() {
        let mut out = Vec::new();
        put_int(&mut out, &BigUint::from(5u32)).unwrap();
        assert_eq!(out, vec![0x00, 0x01, 0x05]);
        out.clear();
        put_int(&mut out, &BigUint::zero()).unwrap();
        assert_eq!(out, vec![0x00, 0x00]);
    }

    #[test]
    fn frame_layout() {
        let frame = encode_message(&Message::ProdResp {
            product: BigUint::from(0x0102u32),
        })
        .unwrap();
        assert_eq!(frame, vec![0, 0, 0, 5, 0x03, 0x00, 0x02, 0x01, 0x02]);
        let bits = encode_message(&Message::CandPlain {
            seller_flags: vec![true, false, true],
            group_flags: vec![],
            r_max: 1,
        })
        .unwrap();
        assert_eq!(
            bits,
            vec![0, 0, 0, 9, 0x06, 0, 3, 0b1010_0000, 0, 0, 0, 1, 1]
        );
    }

    #[test]
    fn truncation_and_garbage() {
        let frame = encode_message(&Message::ProdReq {
            x2: BigUint::from(77u32),
            y2: BigUint::from(1u32) << 100,
        })
        .unwrap();
        for cut in 0..frame.len() {
            assert!(decode_message(&frame[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = frame.clone();
        extra.push(0);
        assert!(matches!(
            decode_message(&extra),
            Err(TransportError::Decode { .. })
        ));
    }

    #[test]
    fn unknown_type_rejected() {
        assert!(matches!(
            decode_message(&[0, 0, 0, 1, 0xff]),
            Err(TransportError::UnknownType(0xff))
        ));
    }

    #[test]
    fn non_canonical_rejected() {
        // integer 5 written with a leading zero byte
        let frame = [0, 0, 0, 5, 0x03, 0x00, 0x02, 0x00, 0x05];
        match decode_message(&frame) {
            Err(TransportError::Decode { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
        // bit vector of length 3 with a padding bit set
        let bad_pad = [0, 0, 0, 9, 0x06, 0, 3, 0b1010_0001, 0, 0, 0, 1, 1];
        assert!(decode_message(&bad_pad).is_err());
    }

    #[test]
    fn declared_length_must_match_fields() {
        let mut frame = encode_message(&Message::ProdResp {
            product: BigUint::from(9u32),
        })
        .unwrap();
        frame[3] += 1;
        frame.push(0);
        assert!(decode_message(&frame).is_err());
    }

    #[test]
    fn memory_channel_preserves_order() {
        let (mut a, mut b) = MemoryChannel::pair();
        for i in 0..100u64 {
            a.send(&Message::DecryptResp {
                seller_price: i,
                group_price: i * 2,
            })
            .unwrap();
        }
        for i in 0..100u64 {
            assert_eq!(
                b.recv().unwrap(),
                Message::DecryptResp {
                    seller_price: i,
                    group_price: i * 2
                }
            );
        }
        assert_eq!(a.stats().frames_sent, 100);
        assert_eq!(b.stats().frames_received, 100);
        assert_eq!(a.stats().bytes_sent, b.stats().bytes_received);
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }
}
