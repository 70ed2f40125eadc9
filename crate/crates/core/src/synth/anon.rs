//! Deterministic prefix-preserving /24 anonymization for generated corpora.
//!
//! A keyed bijection on the /24 space that preserves /16 grouping: two real
//! prefixes sharing a /16 map to anonymized prefixes sharing a /16. The host
//! octet passes through untouched, matching the /24 granularity at which the
//! mapping may be reversed. This is a stand-in permutation for trace
//! generation, not a general-purpose anonymizer.

use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attrib::PrefixId;

pub struct PrefixAnonymizer {
    /// Bijection on the /16 space.
    slash16_map: Vec<u16>,
    seed: u64,
}

impl PrefixAnonymizer {
    pub fn new(seed: u64) -> Self {
        let mut slash16_map: Vec<u16> = (0..=u16::MAX).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5016);
        slash16_map.shuffle(&mut rng);
        PrefixAnonymizer { slash16_map, seed }
    }

    /// Permutation of the third octet, keyed per real /16.
    fn third_octet_map(&self, real16: u16) -> [u8; 256] {
        let mut map: [u8; 256] = std::array::from_fn(|i| i as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(real16) << 17) ^ 0xA17);
        map.shuffle(&mut rng);
        map
    }

    pub fn anon_prefix(&self, real: PrefixId) -> PrefixId {
        let anon16 = self.slash16_map[usize::from(real.slash16())];
        let anon3 = self.third_octet_map(real.slash16())[usize::from(real.third_octet())];
        PrefixId((u32::from(anon16) << 16) | (u32::from(anon3) << 8))
    }

    pub fn anon_ip(&self, real: Ipv4Addr) -> Ipv4Addr {
        let prefix = self.anon_prefix(PrefixId::of(real));
        prefix.addr(real.octets()[3])
    }
}
