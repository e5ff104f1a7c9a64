//! Receiver time series and their binary dump format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Two-component displacement samples at a set of receivers.
///
/// `data` is row-major `[receiver][level][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSeries {
    pub positions: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
    pub nt: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl ReceiverSeries {
    pub fn zeros(positions: Vec<(f64, f64)>, nodes: Vec<usize>, nt: usize, dt: f64) -> Self {
        let n = nodes.len() * nt * 2;
        ReceiverSeries { positions, nodes, nt, dt, data: vec![0.0; n] }
    }

    pub fn receivers(&self) -> usize {
        self.nodes.len()
    }

    /// Horizon `T = (N_t − 1) Δt`.
    pub fn horizon(&self) -> f64 {
        (self.nt - 1) as f64 * self.dt
    }

    #[inline]
    pub fn get(&self, r: usize, m: usize, comp: usize) -> f64 {
        self.data[(r * self.nt + m) * 2 + comp]
    }

    #[inline]
    pub fn sample(&self, r: usize, m: usize) -> [f64; 2] {
        let o = (r * self.nt + m) * 2;
        [self.data[o], self.data[o + 1]]
    }

    pub fn same_shape(&self, other: &ReceiverSeries) -> bool {
        self.nodes == other.nodes && self.nt == other.nt && self.dt == other.dt
    }

    /// Keeps only the receivers at the given indices (in that order).
    pub fn select(&self, which: &[usize]) -> ReceiverSeries {
        let mut out = ReceiverSeries::zeros(
            which.iter().map(|&r| self.positions[r]).collect(),
            which.iter().map(|&r| self.nodes[r]).collect(),
            self.nt,
            self.dt,
        );
        let len = self.nt * 2;
        for (k, &r) in which.iter().enumerate() {
            out.data[k * len..(k + 1) * len].copy_from_slice(&self.data[r * len..(r + 1) * len]);
        }
        out
    }

    /// Writes `N_R`, `N_t` (u64) and `Δt` (f64), little endian, then the samples.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.receivers() as u64).to_le_bytes())?;
        w.write_all(&(self.nt as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    /// Reads a dump written by [`write_binary`](Self::write_binary). Positions and nodes are not stored and come back empty/zero.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let nr = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let nt = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let dt = f64::from_le_bytes(b);
        let n = nr
            .checked_mul(nt)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| Error::Shape("receiver dump header overflows".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        Ok(ReceiverSeries { positions: vec![(0.0, 0.0); nr], nodes: vec![0; nr], nt, dt, data })
    }
}
