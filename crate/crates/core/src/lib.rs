//! Privacy-preserving double spectrum auction over Paillier-encrypted bit-vector bids.
//!
//! Sellers and buyers submit bids as vectors of encrypted bits. An auctioneer
//! and a key-holding agent jointly run TRUST winner determination so that
//! neither learns bids beyond the published outcome.

pub mod auction;
pub mod ebv;
pub mod groups;
pub mod harness;
pub mod paillier;
pub mod protocol;
pub mod transport;
