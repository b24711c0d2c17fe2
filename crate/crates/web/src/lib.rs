//! Browser bindings: buyer grouping, a full secure auction, and an encrypted comparison.
//!
//! Every export takes plain numbers or instance text and returns a JSON string.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pstrust::auction::{compute_group_bids, trust_plain_auction, AuctionResult};
use pstrust::ebv::{decode_ebv, encode_ebv, Evaluator, Extreme, LocalOracle};
use pstrust::harness::{generate, GenParams, InstanceFile};
use pstrust::paillier::keygen;
use pstrust::protocol::{run_inline, PermutationMode, SessionConfig};

fn result_json(r: &AuctionResult) -> Value {
    json!({
        "winning_sellers": r.winning_sellers,
        "winning_groups": r.winning_groups,
        "winning_buyers": r.winning_buyers,
        "selling_price": r.selling_price,
        "buying_group_price": r.buying_group_price,
        "per_buyer_payments": r.per_buyer_payments,
    })
}

fn describe(file: &InstanceFile) -> Result<Value, String> {
    let inst = file.to_plain().map_err(|e| e.to_string())?;
    let graph = file.conflict_graph().map_err(|e| e.to_string())?;
    let group_bids = compute_group_bids(&inst).map_err(|e| e.to_string())?;
    Ok(json!({
        "instance": file.render(),
        "bits": file.bit_length,
        "arena": [file.arena.width, file.arena.height],
        "protection": file.protection,
        "sellers": file.seller_bids,
        "buyers": file.buyers.iter().map(|b| json!({"x": b.x, "y": b.y, "bid": b.bid})).collect::<Vec<_>>(),
        "edges": graph.edges(),
        "groups": inst.groups.iter().zip(&group_bids).map(|(g, bid)| json!({
            "id": g.id,
            "members": g.members,
            "bid": bid,
        })).collect::<Vec<_>>(),
    }))
}

/// Random instance with its conflict graph and buyer groups.
pub fn layout_json(sellers: usize, buyers: usize, seed: u64, protection: f64) -> Result<Value, String> {
    let mut params = GenParams::new(sellers, buyers, 8, seed);
    params.protection = protection;
    let file = generate(&params).map_err(|e| e.to_string())?;
    describe(&file)
}

/// Parses instance text and describes it like [`layout_json`].
pub fn inspect_json(instance: &str) -> Result<Value, String> {
    describe(&InstanceFile::parse(instance).map_err(|e| e.to_string())?)
}

/// Runs the two-party protocol in-process and checks it against the oracle.
pub fn auction_json(instance: &str, key_bits: u32, seed: u64) -> Result<Value, String> {
    let inst = InstanceFile::parse(instance)
        .and_then(|f| f.to_plain())
        .map_err(|e| e.to_string())?;
    let config = SessionConfig {
        key_bits,
        bit_length: inst.bid_bit_length,
        permutation: PermutationMode::Seeded(seed),
        rng_seed: Some(seed),
    };
    let report = run_inline(&inst, &config).map_err(|e| e.to_string())?;
    let oracle = trust_plain_auction(&inst, &report.order).map_err(|e| e.to_string())?;
    let mut messages: BTreeMap<&str, u64> = BTreeMap::new();
    for (_, m) in &report.auctioneer_view {
        *messages.entry(m.name()).or_default() += 1;
    }
    let s = &report.stats;
    Ok(json!({
        "result": result_json(&report.result),
        "oracle": result_json(&oracle),
        "oracle_match": oracle == report.result,
        "seller_order": report.order.sellers,
        "group_order": report.order.groups,
        "reveals": report.agent.reveals.iter().map(|r| json!({
            "alpha": r.alpha, "beta": r.beta, "r_max": r.r_max,
        })).collect::<Vec<_>>(),
        "rounds": s.rounds,
        "product_calls": s.product_calls,
        "frames": s.party_frames(),
        "bytes": s.party_bytes(),
        "messages": messages,
    }))
}

/// Encrypts two bids and compares them under encryption.
pub fn compare_json(a: u64, b: u64, bits: usize, key_bits: u32, seed: u64) -> Result<Value, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (pk, sk) = keygen(key_bits, &mut rng).map_err(|e| e.to_string())?;
    let ea = encode_ebv(&pk, a, bits, &mut rng).map_err(|e| e.to_string())?;
    let eb = encode_ebv(&pk, b, bits, &mut rng).map_err(|e| e.to_string())?;
    let mut oracle = LocalOracle::new(&sk, ChaCha20Rng::seed_from_u64(seed ^ 0x9e37));
    let mut ev = Evaluator::new(&pk, &mut oracle, &mut rng);
    let lo = ev.two_bid_extreme(&ea, &eb, Extreme::Min).map_err(|e| e.to_string())?;
    let after_min = ev.product_calls();
    let hi = ev.two_bid_extreme(&ea, &eb, Extreme::Max).map_err(|e| e.to_string())?;
    let sum = ev.ebv_add(&ea, &eb).map_err(|e| e.to_string())?;
    let dec = |c| sk.decrypt_u64(c).map_err(|e| e.to_string());
    let hex = |e: &pstrust::ebv::EbvBid| -> Vec<String> {
        e.bits().iter().map(|c| format!("{:x}", c.value())).collect()
    };
    Ok(json!({
        "a_bits": hex(&ea),
        "b_bits": hex(&eb),
        "min_flag": dec(&lo.flag_or_index)?,
        "min": decode_ebv(&sk, &lo.extreme_bid).map_err(|e| e.to_string())?,
        "max_flag": dec(&hi.flag_or_index)?,
        "max": decode_ebv(&sk, &hi.extreme_bid).map_err(|e| e.to_string())?,
        "sum": decode_ebv(&sk, &sum).map_err(|e| e.to_string())?,
        "products_per_comparison": after_min,
        "products_total": ev.product_calls(),
        "masked_pairs_seen": oracle.observed.len(),
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn layout(sellers: usize, buyers: usize, seed: u64, protection: f64) -> Result<String, JsError> {
    to_js(layout_json(sellers, buyers, seed, protection))
}

#[wasm_bindgen]
pub fn inspect(instance: &str) -> Result<String, JsError> {
    to_js(inspect_json(instance))
}

#[wasm_bindgen]
pub fn auction(instance: &str, key_bits: u32, seed: u64) -> Result<String, JsError> {
    to_js(auction_json(instance, key_bits, seed))
}

#[wasm_bindgen]
pub fn compare(a: u64, b: u64, bits: usize, key_bits: u32, seed: u64) -> Result<String, JsError> {
    to_js(compare_json(a, b, bits, key_bits, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_describes_groups() {
        let v = layout_json(3, 12, 4, 50.0).unwrap();
        assert_eq!(v["buyers"].as_array().unwrap().len(), 12);
        let covered: usize = v["groups"]
            .as_array()
            .unwrap()
            .iter()
            .map(|g| g["members"].as_array().unwrap().len())
            .sum();
        assert_eq!(covered, 12);
        let again = inspect_json(v["instance"].as_str().unwrap()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn auction_matches_oracle() {
        let v = layout_json(4, 10, 7, 50.0).unwrap();
        let out = auction_json(v["instance"].as_str().unwrap(), 64, 3).unwrap();
        assert_eq!(out["oracle_match"], true);
        assert_eq!(out["result"], out["oracle"]);
        assert!(out["messages"]["PROD_REQ"].as_u64().unwrap() > 0);
    }

    #[test]
    fn compare_reports_plain_outcome() {
        let v = compare_json(5, 3, 8, 64, 1).unwrap();
        assert_eq!(v["min_flag"], 1);
        assert_eq!(v["min"], 3);
        assert_eq!(v["max_flag"], 0);
        assert_eq!(v["max"], 5);
        assert_eq!(v["sum"], 8);
        assert_eq!(v["products_per_comparison"], 5 * 8 - 2);
        assert_eq!(v["a_bits"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn errors_are_messages() {
        assert!(compare_json(300, 3, 8, 64, 1).is_err());
        assert!(auction_json("garbage", 64, 1).is_err());
        assert!(layout_json(0, 3, 1, 50.0).is_err());
    }
}
