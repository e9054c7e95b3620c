//! Seeded random streams.
//!
//! Each concern draws from its own ChaCha8 stream derived from the run seed,
//! so adding draws to one concern never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64+stream";

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Templates = 2,
    Clients = 3,
    Bursts = 4,
    Routes = 5,
    Identification = 6,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let draw = |seed, which| -> Vec<u64> {
            let mut rng = stream(seed, which);
            (0..8).map(|_| rng.random()).collect()
        };
        assert_eq!(draw(7, Stream::Routes), draw(7, Stream::Routes));
        assert_ne!(draw(7, Stream::Routes), draw(7, Stream::Arrivals));
        assert_ne!(draw(7, Stream::Routes), draw(8, Stream::Routes));
    }

    #[test]
    fn first_draws_are_pinned() {
        // Fails if the generator or its seeding ever changes.
        assert_eq!(stream(0, Stream::Arrivals).random::<u64>(), 13937087304575520531);
        assert_eq!(stream(42, Stream::Routes).random::<u64>(), 6506774120333837283);
    }
}
