#![allow(dead_code)]

use num_bigint::BigUint;
use pstrust::auction::PlainInstance;
use pstrust::groups::BuyerGroup;
use pstrust::harness::{generate, GenParams};
use pstrust::transport::Message;

/// Every buyer bids alone.
pub fn singleton_instance(sellers: Vec<u64>, buyers: Vec<u64>, k: usize) -> PlainInstance {
    let groups = (0..buyers.len())
        .map(|id| BuyerGroup {
            id,
            members: vec![id],
        })
        .collect();
    PlainInstance {
        seller_bids: sellers,
        buyer_bids: buyers,
        groups,
        bid_bit_length: k,
    }
}

/// Geometric instance at the default arena and protection distance.
pub fn generated(m: usize, n: usize, k: usize, seed: u64) -> PlainInstance {
    generate(&GenParams::new(m, n, k, seed))
        .expect("generation succeeds")
        .to_plain()
        .expect("generated instance is valid")
}

/// Big integers carried by a message.
pub fn integer_count(msg: &Message) -> usize {
    match msg {
        Message::BidSubmit { bits, .. } => bits.len(),
        Message::ProdReq { .. } => 2,
        Message::ProdResp { .. } | Message::PublicKey { .. } => 1,
        Message::PairAnnounce { .. } => 3,
        Message::CandEnc {
            seller_flags,
            group_flags,
            ..
        } => seller_flags.len() + group_flags.len(),
        Message::DecryptReq {
            seller_bid,
            group_bid,
        } => seller_bid.len() + group_bid.len(),
        _ => 0,
    }
}

pub fn big(v: u64) -> BigUint {
    BigUint::from(v)
}
