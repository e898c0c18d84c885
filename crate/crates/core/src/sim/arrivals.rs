use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// Poisson arrival stream for one approach.
///
/// Each approach owns its generator, seeded from the run seed and the
/// approach index, so the background arrivals of a run do not depend on
/// anything the signals or the ERV do.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    rng: ChaCha8Rng,
    gap: Option<Exp<f64>>,
    next_s: f64,
}

fn mix(seed: u64, lane: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(lane.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ArrivalStream {
    pub fn new(seed: u64, lane: usize, rate_vph: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, lane as u64));
        let gap = (rate_vph > 0.0).then(|| Exp::new(rate_vph / 3600.0).expect("positive rate"));
        let next_s = match &gap {
            Some(d) => d.sample(&mut rng),
            None => f64::INFINITY,
        };
        Self { rng, gap, next_s }
    }

    pub fn peek(&self) -> f64 {
        self.next_s
    }

    /// Pops every arrival at or before `t`, returning how many there were.
    pub fn take_until(&mut self, t: f64) -> usize {
        let mut n = 0;
        while self.next_s <= t {
            n += 1;
            self.next_s += self.gap.as_ref().expect("finite arrival").sample(&mut self.rng);
        }
        n
    }
}
