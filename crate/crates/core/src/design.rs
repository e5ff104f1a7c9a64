//! Receiver layouts and the three design sweeps.

use crate::error::{Error, Result};

/// `N_R` surface receivers spaced `d_R` apart, centred on `x1 = center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub n_r: usize,
    pub d_r: f64,
    pub center: f64,
}

impl DesignSpec {
    pub fn new(n_r: usize, d_r: f64) -> Result<Self> {
        if n_r == 0 {
            return Err(Error::config("a design needs at least one receiver"));
        }
        if !(d_r > 0.0) {
            return Err(Error::config(format!("receiver spacing must be positive, got {d_r}")));
        }
        Ok(DesignSpec { n_r, d_r, center: 0.0 })
    }

    /// Receiver `x1` coordinates, ascending.
    pub fn positions(&self) -> Vec<f64> {
        let mid = (self.n_r as f64 - 1.0) / 2.0;
        (0..self.n_r).map(|k| self.center + (k as f64 - mid) * self.d_r).collect()
    }

    /// Stable key identifying the design point in result files.
    pub fn key(&self) -> String {
        format!("{}:{}", self.n_r, self.d_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Fixed aperture [−8000, 8000], growing receiver count.
    I,
    /// Fixed spacing 1000, `N_R = 1, 3, …, 19`.
    II,
    /// Five receivers, spacing 200 to 4000.
    III,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            other => Err(Error::config(format!("unknown scenario `{other}` (expected I, II or III)"))),
        }
    }
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
        }
    }

    pub fn designs(&self) -> Vec<DesignSpec> {
        let mk = |n, d| DesignSpec { n_r: n, d_r: d, center: 0.0 };
        match self {
            Scenario::I => [(3, 8000.0), (5, 4000.0), (9, 2000.0), (17, 1000.0), (41, 400.0), (81, 200.0)]
                .iter()
                .map(|&(n, d)| mk(n, d))
                .collect(),
            Scenario::II => (0..10).map(|k| mk(2 * k + 1, 1000.0)).collect(),
            Scenario::III => (1..=20).map(|k| mk(5, 200.0 * k as f64)).collect(),
        }
    }
}
