use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const INIT_STD: f32 = 0.1;
pub const INIT_BIAS: f32 = 0.1;

/// Normal distribution with samples beyond ±2σ redrawn.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    normal: Normal<f32>,
    bound: f32,
}

impl TruncatedNormal {
    pub fn new(std: f32) -> Self {
        Self {
            normal: Normal::new(0.0, std).expect("finite positive std"),
            bound: 2.0 * std,
        }
    }
}

impl Distribution<f32> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f32 {
        loop {
            let v = self.normal.sample(rng);
            if v.abs() <= self.bound {
                return v;
            }
        }
    }
}

/// `count` weights drawn from the truncated normal with the given std.
pub fn init_weights(count: usize, std: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = TruncatedNormal::new(std);
    (0..count).map(|_| dist.sample(&mut rng)).collect()
}
