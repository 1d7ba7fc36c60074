use std::fmt;

use serde::{Deserialize, Serialize};

/// Feed prices are integers in South African cents (ZAC) scaled by 10^5.
pub const RAW_PER_ZAC: u64 = 100_000;
pub const ZAC_PER_RAND: f64 = 100.0;

/// Fixed-point feed price. Book comparisons stay on the integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PriceFixed(pub u64);

impl PriceFixed {
    pub const fn raw(self) -> u64 {
        self.0
    }

    pub fn zac(self) -> f64 {
        self.0 as f64 / RAW_PER_ZAC as f64
    }

    pub fn rand(self) -> f64 {
        self.zac() / ZAC_PER_RAND
    }

    /// Nearest fixed-point value to a ZAC amount.
    pub fn from_zac(zac: f64) -> Self {
        Self((zac * RAW_PER_ZAC as f64).round().max(0.0) as u64)
    }
}

/// Exact decimal ZAC rendering, e.g. `25074` or `14817.5`.
impl fmt::Display for PriceFixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / RAW_PER_ZAC;
        let frac = self.0 % RAW_PER_ZAC;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:05}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

/// Unit of the prices carried in an L1 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceUnit {
    #[default]
    Zac,
    Rand,
}

impl PriceUnit {
    pub fn to_rand(self, value: f64) -> f64 {
        match self {
            PriceUnit::Zac => value / ZAC_PER_RAND,
            PriceUnit::Rand => value,
        }
    }
}

impl std::str::FromStr for PriceUnit {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zac" => Ok(PriceUnit::Zac),
            "rand" | "zar" => Ok(PriceUnit::Rand),
            other => Err(crate::Error::InvalidInput(format!("unknown price unit `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        let p = PriceFixed(2_507_400_000);
        assert_eq!(p.zac(), 25_074.0);
        assert_eq!(p.rand(), 250.74);
        assert_eq!(p.to_string(), "25074");
        assert_eq!(PriceFixed(1_481_750_000).to_string(), "14817.5");
        assert_eq!(PriceFixed(7).to_string(), "0.00007");
        assert_eq!(PriceFixed::from_zac(25_074.0), p);
    }
}
