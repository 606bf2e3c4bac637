//! Cryptographic building blocks: fixed-point reading encoding, keyed seed
//! chains, additive diffusion, XOR-composable MACs and sealed pairwise
//! channels.
//!
//! Everything here is a pure function of its inputs (the channel receiver
//! only tracks the last accepted counter), so it can be shared freely between
//! threads.

mod channel;
mod diffusion;
mod key;
mod mac;

pub use channel::{open, seal, ChannelError, ChannelReceiver, ChannelSender, SEAL_OVERHEAD};
pub use diffusion::{
    diffuse, next_seed, undiffuse, DiffusedPair, Domain, DomainError, DomainValue, SeedState,
};
pub use key::{Key, KEY_LEN};
pub use mac::{combine_macs, mac, mac_pair, pair_payload, MacTag, MAC_LEN};
