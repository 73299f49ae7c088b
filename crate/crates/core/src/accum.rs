//! Streaming moment accumulators for trajectory ensembles.
//!
//! Trajectories are grouped into fixed contiguous batches. Each batch is filled in
//! trajectory order and batches are merged in index order, so every statistic is
//! bit-identical for a given (seed, n_traj) whatever the number of worker threads.

use std::io::{Read, Write};

use crate::error::{invalid, Result};

/// Number of per-trajectory scalars tracked at every output time.
pub const N_SYMBOLS: usize = 6;
const N_PAIRS: usize = N_SYMBOLS * (N_SYMBOLS + 1) / 2;

/// Per-trajectory stochastic symbols, in accumulator order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Jx = 0,
    Jy = 1,
    Jz = 2,
    /// Population of component a (uncorrected).
    Na = 3,
    /// Population of component b (uncorrected).
    Nb = 4,
    /// Normalised spatial overlap of the two components.
    Overlap = 5,
}

#[inline]
fn pair_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * N_SYMBOLS - i * (i + 1) / 2 + j
}

/// Welford mean and co-moment accumulator over the symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: [f64; N_SYMBOLS],
    comoment: [f64; N_PAIRS],
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; N_SYMBOLS],
            comoment: [0.0; N_PAIRS],
        }
    }
}

impl MomentAccumulator {
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64; N_SYMBOLS] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64; N_SYMBOLS]) {
        self.count += 1;
        let n = self.count as f64;
        let mut delta = [0.0; N_SYMBOLS];
        for i in 0..N_SYMBOLS {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..N_SYMBOLS {
            for j in i..N_SYMBOLS {
                self.comoment[pair_index(i, j)] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut delta = [0.0; N_SYMBOLS];
        for i in 0..N_SYMBOLS {
            delta[i] = other.mean[i] - self.mean[i];
        }
        for i in 0..N_SYMBOLS {
            for j in i..N_SYMBOLS {
                let k = pair_index(i, j);
                self.comoment[k] += other.comoment[k] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..N_SYMBOLS {
            self.mean[i] += delta[i] * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased sample covariance of two symbols; NaN with fewer than two samples.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.comoment[pair_index(i, j)] / (self.count - 1) as f64
    }
}

/// Batch size used for an ensemble of `n_traj` trajectories.
pub fn default_batch_size(n_traj: usize) -> usize {
    (n_traj / 16).clamp(2, 32)
}

/// Accumulators for a whole run: one row of batch accumulators per output time.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorSeries {
    times: Vec<f64>,
    /// Number of spatial modes per component (1 for the two-mode model).
    n_modes: usize,
    batch_size: usize,
    n_traj: usize,
    /// `rows[t][b]`.
    rows: Vec<Vec<MomentAccumulator>>,
}

impl AccumulatorSeries {
    pub fn new(times: Vec<f64>, n_modes: usize, n_traj: usize, batch_size: usize) -> Result<Self> {
        if n_modes == 0 || batch_size == 0 || n_traj == 0 {
            return Err(invalid("accumulator dimensions must be positive"));
        }
        let n_batches = n_traj.div_ceil(batch_size);
        let rows = vec![vec![MomentAccumulator::default(); n_batches]; times.len()];
        Ok(Self {
            times,
            n_modes,
            batch_size,
            n_traj,
            rows,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn n_batches(&self) -> usize {
        self.n_traj.div_ceil(self.batch_size)
    }

    /// Trajectory index range covered by batch `b`.
    pub fn batch_range(&self, b: usize) -> std::ops::Range<usize> {
        let start = b * self.batch_size;
        start..(start + self.batch_size).min(self.n_traj)
    }

    pub fn batches(&self, time_index: usize) -> &[MomentAccumulator] {
        &self.rows[time_index]
    }

    /// Install the per-time accumulators of batch `b`.
    pub fn set_batch(&mut self, b: usize, per_time: Vec<MomentAccumulator>) -> Result<()> {
        if per_time.len() != self.times.len() || b >= self.n_batches() {
            return Err(invalid("batch accumulator does not match the series layout"));
        }
        for (row, acc) in self.rows.iter_mut().zip(per_time) {
            row[b] = acc;
        }
        Ok(())
    }

    /// All batches at one time merged in batch order.
    pub fn total(&self, time_index: usize) -> MomentAccumulator {
        let mut total = MomentAccumulator::default();
        for acc in &self.rows[time_index] {
            total.merge(acc);
        }
        total
    }

    const MAGIC: &'static [u8; 16] = b"TNT-ACCUMULATORS";
    const VERSION: u32 = 1;

    /// Little-endian binary dump with a magic string, version and 32-byte config hash.
    pub fn write_binary<W: Write>(&self, mut w: W, config_hash: &[u8; 32]) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(config_hash)?;
        for v in [
            self.times.len(),
            self.n_modes,
            self.batch_size,
            self.n_traj,
            N_SYMBOLS,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for row in &self.rows {
            for acc in row {
                w.write_all(&acc.count.to_le_bytes())?;
                for v in acc.mean.iter().chain(acc.comoment.iter()) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`write_binary`](Self::write_binary); returns the series and the stored hash.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, [u8; 32])> {
        let io = |e: std::io::Error| invalid(format!("accumulator dump: {e}"));
        let mut magic = [0u8; 16];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(invalid("accumulator dump: bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(invalid(format!("accumulator dump: unsupported version {version}")));
        }
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash).map_err(io)?;
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n_times = next_u64(&mut r)? as usize;
        let n_modes = next_u64(&mut r)? as usize;
        let batch_size = next_u64(&mut r)? as usize;
        let n_traj = next_u64(&mut r)? as usize;
        if next_u64(&mut r)? as usize != N_SYMBOLS {
            return Err(invalid("accumulator dump: symbol count mismatch"));
        }
        let next_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut times = Vec::with_capacity(n_times);
        for _ in 0..n_times {
            times.push(next_f64(&mut r)?);
        }
        let mut series = Self::new(times, n_modes, n_traj, batch_size)?;
        for row in series.rows.iter_mut() {
            for acc in row.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(io)?;
                acc.count = u64::from_le_bytes(b);
                for v in acc.mean.iter_mut() {
                    *v = next_f64(&mut r)?;
                }
                for v in acc.comoment.iter_mut() {
                    *v = next_f64(&mut r)?;
                }
            }
        }
        Ok((series, hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize) -> [f64; N_SYMBOLS] {
        let x = i as f64;
        [x, x * x * 0.1, (x * 0.7).sin(), 3.0 - x, (x * 1.3).cos() * 2.0, 0.5]
    }

    #[test]
    fn pair_indices_are_a_bijection() {
        let mut seen = vec![false; N_PAIRS];
        for i in 0..N_SYMBOLS {
            for j in i..N_SYMBOLS {
                let k = pair_index(i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, pair_index(j, i));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn welford_matches_two_pass() {
        let data: Vec<_> = (0..50).map(sample).collect();
        let mut acc = MomentAccumulator::default();
        data.iter().for_each(|x| acc.push(x));
        let n = data.len() as f64;
        for i in 0..N_SYMBOLS {
            let mi = data.iter().map(|x| x[i]).sum::<f64>() / n;
            assert!((acc.mean()[i] - mi).abs() < 1e-12);
            for j in 0..N_SYMBOLS {
                let mj = data.iter().map(|x| x[j]).sum::<f64>() / n;
                let c = data.iter().map(|x| (x[i] - mi) * (x[j] - mj)).sum::<f64>() / (n - 1.0);
                assert!((acc.covariance(i, j) - c).abs() < 1e-9 * (1.0 + c.abs()));
            }
        }
    }

    #[test]
    fn merge_equals_sequential_push() {
        let mut whole = MomentAccumulator::default();
        let mut left = MomentAccumulator::default();
        let mut right = MomentAccumulator::default();
        for i in 0..40 {
            whole.push(&sample(i));
            if i < 13 { left.push(&sample(i)) } else { right.push(&sample(i)) }
        }
        left.merge(&right);
        assert_eq!(left.count(), whole.count());
        for i in 0..N_SYMBOLS {
            assert!((left.mean()[i] - whole.mean()[i]).abs() < 1e-12);
            for j in 0..N_SYMBOLS {
                assert!((left.covariance(i, j) - whole.covariance(i, j)).abs() < 1e-9);
            }
        }
        let mut empty = MomentAccumulator::default();
        empty.merge(&whole);
        assert_eq!(empty, whole);
    }

    #[test]
    fn batch_layout() {
        assert_eq!(default_batch_size(2), 2);
        assert_eq!(default_batch_size(100), 6);
        assert_eq!(default_batch_size(10_000), 32);
        let s = AccumulatorSeries::new(vec![0.0], 1, 70, 32).unwrap();
        assert_eq!(s.n_batches(), 3);
        assert_eq!(s.batch_range(2), 64..70);
    }

    #[test]
    fn binary_round_trip_and_rejection() {
        let mut s = AccumulatorSeries::new(vec![0.0, 0.5], 4, 5, 2).unwrap();
        for b in 0..s.n_batches() {
            let per_time = (0..2)
                .map(|t| {
                    let mut a = MomentAccumulator::default();
                    for i in s.batch_range(b) {
                        a.push(&sample(i + 7 * t));
                    }
                    a
                })
                .collect();
            s.set_batch(b, per_time).unwrap();
        }
        let hash = [7u8; 32];
        let mut buf = Vec::new();
        s.write_binary(&mut buf, &hash).unwrap();
        assert_eq!(&buf[..16], b"TNT-ACCUMULATORS");
        let (back, h) = AccumulatorSeries::read_binary(&buf[..]).unwrap();
        assert_eq!(h, hash);
        assert_eq!(back, s);
        buf[0] = b'X';
        assert!(AccumulatorSeries::read_binary(&buf[..]).is_err());
    }
}
