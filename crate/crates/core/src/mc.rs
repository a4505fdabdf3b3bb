//! Sharded Monte Carlo accumulation.
//!
//! Samples are split into fixed-size shards. Shard `k` draws from the ChaCha
//! stream `k` of the run seed, so results do not depend on the number of
//! worker threads. Shard statistics are merged in shard order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const SHARD_SIZE: usize = 4096;

/// Mean of i.i.d. draws with the standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, count: 0 }
    }
}

/// Streaming mean/variance (Welford) with Chan's merge.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Running) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> MeanEstimate {
        let stderr = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        MeanEstimate { mean: self.mean, stderr, count: self.n }
    }
}

/// RNG for shard `shard` of a run seeded with `seed`.
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

/// Estimates `N` expectations jointly from `samples` draws of `draw`.
pub fn sharded_means<const N: usize, F>(samples: usize, seed: u64, draw: F) -> [MeanEstimate; N]
where
    F: Fn(&mut ChaCha8Rng) -> [f64; N] + Sync,
{
    let shards = samples.div_ceil(SHARD_SIZE);
    let partials: Vec<[Running; N]> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let mut rng = shard_rng(seed, k as u64);
            let len = SHARD_SIZE.min(samples - k * SHARD_SIZE);
            let mut acc = [Running::default(); N];
            for _ in 0..len {
                let values = draw(&mut rng);
                for (a, v) in acc.iter_mut().zip(values) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    let mut total = [Running::default(); N];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total.map(|r| r.estimate())
}

/// Fallible variant of [`sharded_means`]; the first error in shard order wins.
pub fn try_sharded_means<const N: usize, E, F>(
    samples: usize,
    seed: u64,
    draw: F,
) -> Result<[MeanEstimate; N], E>
where
    E: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<[f64; N], E> + Sync,
{
    let shards = samples.div_ceil(SHARD_SIZE);
    let partials: Vec<Result<[Running; N], E>> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let mut rng = shard_rng(seed, k as u64);
            let len = SHARD_SIZE.min(samples - k * SHARD_SIZE);
            let mut acc = [Running::default(); N];
            for _ in 0..len {
                let values = draw(&mut rng)?;
                for (a, v) in acc.iter_mut().zip(values) {
                    a.push(v);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = [Running::default(); N];
    for part in partials {
        let part = part?;
        for (t, p) in total.iter_mut().zip(&part) {
            t.merge(p);
        }
    }
    Ok(total.map(|r| r.estimate()))
}

/// Derives an independent sub-seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_integrand_has_zero_stderr() {
        let [e] = sharded_means(10_000, 3, |_| [0.75]);
        assert_eq!(e.mean, 0.75);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.count, 10_000);
    }

    #[test]
    fn merge_matches_single_pass() {
        let mut rng = shard_rng(1, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let mut whole = Running::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Running::default();
        let mut b = Running::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - whole.mean()).abs() < 1e-14);
        assert!((a.variance() - whole.variance()).abs() < 1e-14);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let f = |rng: &mut ChaCha8Rng| [rng.gen::<f64>()];
        let a = sharded_means(20_000, 9, f);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sharded_means(20_000, 9, f));
        assert_eq!(a[0].mean.to_bits(), b[0].mean.to_bits());
        assert_eq!(a[0].stderr.to_bits(), b[0].stderr.to_bits());
    }
}
