//! Counter-mode keyed pseudo-random function used for all randomness.
//!
//! Every random quantity in the engine is a pure function of a 64-bit seed
//! plus a handful of integer coordinates (site, stack index, step number,
//! sample number).  We use the Threefry-2x64 block function (Salmon et al.,
//! "Parallel random numbers: as easy as 1, 2, 3") with 20 rounds, which gives
//! O(1)-memory random access and bit-identical results across platforms.

/// Domain separation tags. Distinct tags put the step stacks, walk stacks,
/// initial-condition sampling and policy randomness on independent streams
/// of the same master seed.
pub const DOMAIN_STEP: u64 = 0x5354_4550_0000_0001;
pub const DOMAIN_WALK: u64 = 0x574b_414c_0000_0002;
pub const DOMAIN_SAMPLE: u64 = 0x5341_4d50_0000_0003;
pub const DOMAIN_POLICY: u64 = 0x504f_4c49_0000_0004;
pub const DOMAIN_SEED_MIX: u64 = 0x5345_4544_0000_0005;

const PARITY: u64 = 0x1BD1_1BDA_A9FC_1A22;
const ROTATIONS: [u32; 8] = [16, 42, 12, 31, 16, 32, 24, 21];

/// Threefry-2x64-20: maps a (key, counter) pair to two uniform 64-bit words.
#[inline]
pub fn threefry2x64(key: [u64; 2], ctr: [u64; 2]) -> [u64; 2] {
    let ks = [key[0], key[1], PARITY ^ key[0] ^ key[1]];
    let mut x0 = ctr[0].wrapping_add(ks[0]);
    let mut x1 = ctr[1].wrapping_add(ks[1]);
    let mut inject = 0u64;
    for r in 0..20u32 {
        x0 = x0.wrapping_add(x1);
        x1 = x1.rotate_left(ROTATIONS[(r % 8) as usize]);
        x1 ^= x0;
        if r % 4 == 3 {
            inject += 1;
            let s = inject as usize;
            x0 = x0.wrapping_add(ks[s % 3]);
            x1 = x1.wrapping_add(ks[(s + 1) % 3]).wrapping_add(inject);
        }
    }
    [x0, x1]
}

/// Single 64-bit output; the second word is discarded.
#[inline]
pub fn prf(key: [u64; 2], ctr: [u64; 2]) -> u64 {
    threefry2x64(key, ctr)[0]
}

/// Map a uniform u64 to a double in [0, 1) with 53 bits of precision.
#[inline]
pub fn unit_f64(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derive an independent per-sample seed from a master seed and sample index.
#[inline]
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    prf([master_seed, DOMAIN_SEED_MIX], [index, 0])
}

/// Small counter-backed stream of uniforms, used where a variable number of
/// draws is needed (initial-condition sampling, random toppling policies).
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: [u64; 2],
    stream: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, domain: u64, stream: u64) -> Self {
        CounterRng { key: [seed ^ domain, stream], stream: 0, counter: 0 }
    }

    /// Re-key to a sub-stream while keeping the seed; resets the counter.
    pub fn substream(&self, stream: u64) -> Self {
        CounterRng { key: self.key, stream, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let u = prf(self.key, [self.stream, self.counter]);
        self.counter += 1;
        u
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the n used here (worklists).
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}
