use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Role of the party that owns a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Server,
    Client,
    Direction,
    Participation,
    Eval,
    Data,
    Oracle,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Server => 1,
            Role::Client => 2,
            Role::Direction => 3,
            Role::Participation => 4,
            Role::Eval => 5,
            Role::Data => 6,
            Role::Oracle => 7,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream id from `(role, client, round, branch)`.
///
/// The mapping is a fixed hash so the id of a given work unit does not depend
/// on the order in which work units are scheduled.
pub fn stream_id(role: Role, client: u64, round: u64, branch: u64) -> u64 {
    let mut h = splitmix64(role.tag());
    for part in [client, round, branch] {
        h = splitmix64(h ^ part.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

/// A seedable random stream identified by `(seed, stream_id)`.
///
/// Equal pairs produce bitwise-equal draw sequences.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn for_role(seed: u64, role: Role, client: u64, round: u64, branch: u64) -> Self {
        Self::new(seed, stream_id(role, client, round, branch))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
