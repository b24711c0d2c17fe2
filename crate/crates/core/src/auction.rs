//! Plaintext reference auctions.
//!
//! [`trust_plain_auction`] follows the same selection order as the secure
//! protocol (first index wins ties, in the supplied processing order), so the
//! two can be compared for exact equality.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::groups::BuyerGroup;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuctionError {
    #[error("instance needs at least one seller")]
    NoSellers,
    #[error("instance needs at least one buyer")]
    NoBuyers,
    #[error("instance needs at least one buyer group")]
    NoGroups,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("bid bit length {0} outside [2, 62]")]
    BitLength(usize),
    #[error("{side} {id}: bid {bid} outside [1, {max}]")]
    BidRange {
        side: &'static str,
        id: usize,
        bid: u64,
        max: u64,
    },
    #[error("buyer {0} is assigned to more than one group or does not exist")]
    BadMembership(usize),
    #[error("buyer {0} is not in any group")]
    Ungrouped(usize),
    #[error("group {group}: size {size} x min bid {min_bid} exceeds {max}")]
    GroupOverflow {
        group: usize,
        size: usize,
        min_bid: u64,
        max: u64,
    },
    #[error("processing order is not a permutation of {0} items")]
    BadOrder(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainInstance {
    pub seller_bids: Vec<u64>,
    pub buyer_bids: Vec<u64>,
    pub groups: Vec<BuyerGroup>,
    pub bid_bit_length: usize,
}

impl PlainInstance {
    pub fn sellers(&self) -> usize {
        self.seller_bids.len()
    }

    pub fn buyers(&self) -> usize {
        self.buyer_bids.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Largest admissible bid, `2^K − 2`.
    pub fn max_bid(&self) -> u64 {
        (1u64 << self.bid_bit_length) - 2
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        if !(2..=62).contains(&self.bid_bit_length) {
            return Err(AuctionError::BitLength(self.bid_bit_length));
        }
        if self.seller_bids.is_empty() {
            return Err(AuctionError::NoSellers);
        }
        if self.buyer_bids.is_empty() {
            return Err(AuctionError::NoBuyers);
        }
        if self.groups.is_empty() {
            return Err(AuctionError::NoGroups);
        }
        let max = self.max_bid();
        let check = |side, bids: &[u64]| {
            bids.iter().enumerate().try_for_each(|(id, &bid)| {
                if bid == 0 || bid > max {
                    Err(AuctionError::BidRange { side, id, bid, max })
                } else {
                    Ok(())
                }
            })
        };
        check("seller", &self.seller_bids)?;
        check("buyer", &self.buyer_bids)?;

        let mut assigned = vec![false; self.buyers()];
        for group in &self.groups {
            if group.members.is_empty() {
                return Err(AuctionError::EmptyGroup(group.id));
            }
            for &m in &group.members {
                match assigned.get_mut(m) {
                    Some(slot @ false) => *slot = true,
                    _ => return Err(AuctionError::BadMembership(m)),
                }
            }
        }
        if let Some(missing) = assigned.iter().position(|&a| !a) {
            return Err(AuctionError::Ungrouped(missing));
        }
        for group in &self.groups {
            let min_bid = self.group_min_bid(group);
            if (group.size() as u64).saturating_mul(min_bid) > max {
                return Err(AuctionError::GroupOverflow {
                    group: group.id,
                    size: group.size(),
                    min_bid,
                    max,
                });
            }
        }
        Ok(())
    }

    fn group_min_bid(&self, group: &BuyerGroup) -> u64 {
        group
            .members
            .iter()
            .map(|&m| self.buyer_bids[m])
            .min()
            .unwrap_or(0)
    }
}

/// Order in which the auction scans sellers and groups: position → original id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessingOrder {
    pub sellers: Vec<usize>,
    pub groups: Vec<usize>,
}

impl ProcessingOrder {
    pub fn identity(sellers: usize, groups: usize) -> Self {
        ProcessingOrder {
            sellers: (0..sellers).collect(),
            groups: (0..groups).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(sellers: usize, groups: usize, rng: &mut R) -> Self {
        let mut order = Self::identity(sellers, groups);
        order.sellers.shuffle(rng);
        order.groups.shuffle(rng);
        order
    }

    pub fn check(&self, sellers: usize, groups: usize) -> Result<(), AuctionError> {
        let is_perm = |p: &[usize], n: usize| {
            let mut seen = vec![false; n];
            p.len() == n
                && p.iter()
                    .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
        };
        if !is_perm(&self.sellers, sellers) {
            return Err(AuctionError::BadOrder(sellers));
        }
        if !is_perm(&self.groups, groups) {
            return Err(AuctionError::BadOrder(groups));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuctionResult {
    pub winning_sellers: BTreeSet<usize>,
    pub winning_groups: BTreeSet<usize>,
    pub winning_buyers: BTreeSet<usize>,
    /// Paid to every winning seller.
    pub selling_price: Option<u64>,
    /// Charged to every winning group.
    pub buying_group_price: Option<u64>,
    /// Winning group id → what each of its members pays.
    pub per_buyer_payments: BTreeMap<usize, u64>,
}

impl AuctionResult {
    /// Assembles a result from winner sets and the critical pair's bids.
    ///
    /// Prices are only published when at least one pair trades.
    pub fn assemble(
        groups: &[BuyerGroup],
        winning_sellers: BTreeSet<usize>,
        winning_groups: BTreeSet<usize>,
        prices: Option<(u64, u64)>,
    ) -> Self {
        let prices = prices.filter(|_| !winning_sellers.is_empty());
        let winning_buyers = winning_groups
            .iter()
            .flat_map(|&g| groups[g].members.iter().copied())
            .collect();
        let per_buyer_payments = match prices {
            Some((_, group_price)) => winning_groups
                .iter()
                .map(|&g| (g, group_price / groups[g].size() as u64))
                .collect(),
            None => BTreeMap::new(),
        };
        AuctionResult {
            winning_sellers,
            winning_groups,
            winning_buyers,
            selling_price: prices.map(|p| p.0),
            buying_group_price: prices.map(|p| p.1),
            per_buyer_payments,
        }
    }

    pub fn is_no_trade(&self) -> bool {
        self.winning_sellers.is_empty()
    }

    /// Quasi-linear seller utility: price − true value if winning, else 0.
    pub fn seller_utility(&self, seller: usize, value: u64) -> i64 {
        match self.selling_price {
            Some(p) if self.winning_sellers.contains(&seller) => p as i64 - value as i64,
            _ => 0,
        }
    }

    /// Quasi-linear buyer utility: true value − share if winning, else 0.
    pub fn buyer_utility(&self, groups: &[BuyerGroup], buyer: usize, value: u64) -> i64 {
        groups
            .iter()
            .find(|g| g.members.contains(&buyer))
            .and_then(|g| self.per_buyer_payments.get(&g.id))
            .map_or(0, |&share| value as i64 - share as i64)
    }
}

/// Group bid: size × minimum member bid.
pub fn compute_group_bids(instance: &PlainInstance) -> Result<Vec<u64>, AuctionError> {
    if instance.groups.is_empty() {
        return Err(AuctionError::NoGroups);
    }
    instance
        .groups
        .iter()
        .map(|g| {
            if g.members.is_empty() {
                Err(AuctionError::EmptyGroup(g.id))
            } else {
                Ok(g.size() as u64 * instance.group_min_bid(g))
            }
        })
        .collect()
}

/// Candidate pairs in selection order, as original `(seller, group)` ids.
/// The last entry is the critical pair.
pub fn trust_candidates(
    seller_bids: &[u64],
    group_bids: &[u64],
    order: &ProcessingOrder,
) -> Result<Vec<(usize, usize)>, AuctionError> {
    order.check(seller_bids.len(), group_bids.len())?;
    let mut sellers: Vec<usize> = order.sellers.clone();
    let mut groups: Vec<usize> = order.groups.clone();
    let mut pairs = Vec::new();
    while !sellers.is_empty() && !groups.is_empty() {
        // min_by_key / max_by_key tie rules differ; scan explicitly for the first extreme.
        let s_pos = first_extreme(&sellers, |i| seller_bids[i], |a, b| a < b);
        let g_pos = first_extreme(&groups, |i| group_bids[i], |a, b| a > b);
        let (s, g) = (sellers[s_pos], groups[g_pos]);
        if group_bids[g] < seller_bids[s] {
            break;
        }
        pairs.push((s, g));
        sellers.remove(s_pos);
        groups.remove(g_pos);
    }
    Ok(pairs)
}

fn first_extreme(
    ids: &[usize],
    bid: impl Fn(usize) -> u64,
    better: impl Fn(u64, u64) -> bool,
) -> usize {
    let mut best = 0;
    for (pos, &id) in ids.iter().enumerate().skip(1) {
        if better(bid(id), bid(ids[best])) {
            best = pos;
        }
    }
    best
}

/// TRUST with the critical (last) candidate pair removed and used for pricing.
pub fn trust_plain_auction(
    instance: &PlainInstance,
    order: &ProcessingOrder,
) -> Result<AuctionResult, AuctionError> {
    instance.validate()?;
    let group_bids = compute_group_bids(instance)?;
    let mut pairs = trust_candidates(&instance.seller_bids, &group_bids, order)?;
    let Some((crit_s, crit_g)) = pairs.pop() else {
        return Ok(AuctionResult::default());
    };
    Ok(AuctionResult::assemble(
        &instance.groups,
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
        Some((instance.seller_bids[crit_s], group_bids[crit_g])),
    ))
}

/// McAfee's trade-reduction double auction over single buyers.
///
/// Every buyer is reported as its own group, keyed by buyer id.
pub fn mcafee_auction(seller_bids: &[u64], buyer_bids: &[u64]) -> AuctionResult {
    let mut sellers: Vec<usize> = (0..seller_bids.len()).collect();
    let mut buyers: Vec<usize> = (0..buyer_bids.len()).collect();
    sellers.sort_by_key(|&i| (seller_bids[i], i));
    buyers.sort_by_key(|&j| (std::cmp::Reverse(buyer_bids[j]), j));
    let profitable = sellers
        .iter()
        .zip(&buyers)
        .take_while(|(&s, &b)| seller_bids[s] <= buyer_bids[b])
        .count();
    if profitable < 2 {
        return AuctionResult::default();
    }
    let k = profitable - 1;
    let buying = buyer_bids[buyers[k]];
    let winning_buyers: BTreeSet<usize> = buyers[..k].iter().copied().collect();
    AuctionResult {
        winning_sellers: sellers[..k].iter().copied().collect(),
        winning_groups: winning_buyers.clone(),
        per_buyer_payments: winning_buyers.iter().map(|&b| (b, buying)).collect(),
        winning_buyers,
        selling_price: Some(seller_bids[sellers[k]]),
        buying_group_price: Some(buying),
    }
}
