//! Per-transaction trading costs: half-spread slippage, mid-price impact and
//! exchange fees with ceilings, in Rand and as log changes relative to the
//! pre-trade mid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::{trade_omegas, LogBins, TradeSide};
use crate::l1::{L1Record, Sign};
use crate::price::PriceUnit;
use crate::taq::impact_increments;

/// One basis point as a fraction of value.
pub const BPS: f64 = 1e-4;

/// Exchange fees, VAT excluded. Rates are in basis points of transaction
/// value, ceilings in Rand per transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeSchedule {
    pub exchange: String,
    pub transaction_bps: f64,
    pub transaction_ceiling_rand: f64,
    pub settlement_bps: f64,
    pub settlement_ceiling_rand: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passive_transaction_bps: Option<f64>,
}

/// Which transaction rate to charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeeRole {
    #[default]
    Aggressor,
    Passive,
}

impl std::str::FromStr for FeeRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aggressor" => Ok(FeeRole::Aggressor),
            "passive" => Ok(FeeRole::Passive),
            other => Err(Error::InvalidInput(format!("unknown fee role `{other}`"))),
        }
    }
}

impl FeeSchedule {
    pub fn a2x() -> Self {
        Self {
            exchange: "A2X".into(),
            transaction_bps: 0.4,
            transaction_ceiling_rand: 355.0,
            settlement_bps: 0.29,
            settlement_ceiling_rand: 154.0,
            passive_transaction_bps: Some(0.2),
        }
    }

    pub fn jse() -> Self {
        Self {
            exchange: "JSE".into(),
            transaction_bps: 0.48,
            transaction_ceiling_rand: 420.4,
            settlement_bps: 0.36,
            settlement_ceiling_rand: 180.0,
            passive_transaction_bps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.transaction_bps,
            self.settlement_bps,
            self.passive_transaction_bps.unwrap_or(0.0),
        ];
        if rates.iter().any(|r| !(*r >= 0.0) || r.is_infinite()) {
            return Err(Error::Config(format!("{}: fee rates must be finite and >= 0", self.exchange)));
        }
        if !(self.transaction_ceiling_rand > 0.0 && self.settlement_ceiling_rand > 0.0) {
            return Err(Error::Config(format!("{}: ceilings must be > 0", self.exchange)));
        }
        Ok(())
    }

    fn transaction_rate(&self, role: FeeRole) -> f64 {
        match role {
            FeeRole::Aggressor => self.transaction_bps,
            FeeRole::Passive => self.passive_transaction_bps.unwrap_or(self.transaction_bps),
        }
    }

    /// Fees in Rand on a transaction of value `x` Rand.
    pub fn fee(&self, x: f64, role: FeeRole) -> f64 {
        (x * self.transaction_rate(role) * BPS).min(self.transaction_ceiling_rand)
            + (x * self.settlement_bps * BPS).min(self.settlement_ceiling_rand)
    }

    /// Transaction values at which the transaction and settlement ceilings
    /// start to bind.
    pub fn ceiling_values(&self, role: FeeRole) -> (f64, f64) {
        (
            self.transaction_ceiling_rand / (self.transaction_rate(role) * BPS),
            self.settlement_ceiling_rand / (self.settlement_bps * BPS),
        )
    }
}

#[derive(Debug, Deserialize)]
struct FeeFile {
    #[serde(default)]
    schedule: Vec<FeeSchedule>,
}

/// Parses a fee file: either `[[schedule]]` entries or a single top-level
/// schedule.
pub fn fee_schedules_from_toml(text: &str) -> Result<Vec<FeeSchedule>> {
    let file: FeeFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let list = if file.schedule.is_empty() {
        vec![toml::from_str::<FeeSchedule>(text).map_err(|e| Error::Config(e.to_string()))?]
    } else {
        file.schedule
    };
    for s in &list {
        s.validate()?;
    }
    Ok(list)
}

/// Built-in schedule by exchange name.
pub fn builtin_schedule(exchange: &str) -> Option<FeeSchedule> {
    match exchange.to_ascii_uppercase().as_str() {
        "A2X" => Some(FeeSchedule::a2x()),
        "JSE" => Some(FeeSchedule::jse()),
        _ => None,
    }
}

/// Direct cost per share: `f(value) / volume`.
pub fn direct_cost(value: f64, volume: f64, schedule: &FeeSchedule, role: FeeRole) -> f64 {
    if !(volume > 0.0) || !(value > 0.0) {
        return 0.0;
    }
    schedule.fee(value, role) / volume
}

/// Half the absolute spread; the flag marks a crossed quote.
pub fn slippage(bid: f64, ask: f64) -> (f64, bool) {
    ((ask - bid).abs() / 2.0, bid > ask)
}

/// Signed log change of adding (BI) or removing (SI) `cost` from `mid`.
/// `None` when the shifted price is not positive.
pub fn log_change(mid: f64, cost: f64, side: TradeSide) -> Option<f64> {
    let shifted = match side {
        TradeSide::Bi => mid + cost,
        TradeSide::Si => mid - cost,
    };
    (shifted > 0.0 && mid > 0.0).then(|| shifted.ln() - mid.ln())
}

/// Everything needed to cost one trade, prices in Rand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInput {
    pub side: TradeSide,
    pub omega: f64,
    pub price: f64,
    pub volume: f64,
    pub bid: f64,
    pub ask: f64,
    pub mid_before: f64,
    pub mid_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub side: TradeSide,
    pub omega: f64,
    pub slippage: f64,
    pub impact: f64,
    pub direct: f64,
    pub total: f64,
    pub ds: f64,
    pub ddc: f64,
    pub dp: f64,
    pub dc: f64,
    pub crossed: bool,
}

pub fn cost_components(
    input: &CostInput,
    schedule: &FeeSchedule,
    role: FeeRole,
) -> Option<CostBreakdown> {
    let (slip, crossed) = slippage(input.bid, input.ask);
    let impact = (input.mid_after - input.mid_before).abs();
    let direct = direct_cost(input.price * input.volume, input.volume, schedule, role);
    let total = slip + impact + direct;
    let m = input.mid_before;
    let side = input.side;
    Some(CostBreakdown {
        side,
        omega: input.omega,
        slippage: slip,
        impact,
        direct,
        total,
        ds: log_change(m, slip, side)?,
        ddc: log_change(m, direct, side)?,
        dp: log_change(m, impact, side)?,
        dc: log_change(m, total, side)?,
        crossed,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSkips {
    /// Bid, ask or mid undefined before, or mid undefined after.
    pub broken_book: usize,
    pub unsigned: usize,
    /// Seller-initiated trades whose cost reaches the mid.
    pub non_positive: usize,
    pub crossed: usize,
}

/// Costs every signed trade of an L1 stream. Omega is normalized over all
/// trades of each day. `signs` overrides the signs on the trade rows.
pub fn stream_costs(
    l1: &[L1Record],
    unit: PriceUnit,
    schedule: &FeeSchedule,
    role: FeeRole,
    signs: Option<&[Option<Sign>]>,
) -> Result<(Vec<CostBreakdown>, CostSkips)> {
    let (impacts, _) = impact_increments(l1);
    let omegas = trade_omegas(&impacts)?;
    let mut skips = CostSkips::default();
    let mut out = Vec::with_capacity(impacts.len());
    for (i, (t, &omega)) in impacts.iter().zip(&omegas).enumerate() {
        let sign = match signs {
            Some(s) => s[i],
            None => t.sign,
        };
        let Some(sign) = sign else {
            skips.unsigned += 1;
            continue;
        };
        let (Some(b), Some(a), Some(m0), Some(m1)) =
            (t.bid_before, t.ask_before, t.mid_before, t.mid_after)
        else {
            skips.broken_book += 1;
            continue;
        };
        let input = CostInput {
            side: if sign > 0 { TradeSide::Bi } else { TradeSide::Si },
            omega,
            price: unit.to_rand(t.price),
            volume: t.volume,
            bid: unit.to_rand(b),
            ask: unit.to_rand(a),
            mid_before: unit.to_rand(m0),
            mid_after: unit.to_rand(m1),
        };
        match cost_components(&input, schedule, role) {
            Some(c) => {
                if c.crossed {
                    skips.crossed += 1;
                }
                out.push(c);
            }
            None => skips.non_positive += 1,
        }
    }
    Ok((out, skips))
}

/// Bin means of the cost components for one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub omega: Option<f64>,
    pub ds: Option<f64>,
    pub ddc: Option<f64>,
    pub dp: Option<f64>,
    pub dc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub side: TradeSide,
    pub bins: Vec<CostBin>,
}

/// Per-bin means over trades of one side. Values keep their sign (negative
/// for seller-initiated trades).
pub fn cost_curve(costs: &[CostBreakdown], side: TradeSide, bins: LogBins) -> CostCurve {
    let edges = bins.edges();
    let mut acc = vec![[0.0f64; 6]; bins.n];
    for c in costs.iter().filter(|c| c.side == side) {
        if let Some(k) = bins.index(c.omega) {
            let a = &mut acc[k];
            a[0] += 1.0;
            a[1] += c.omega;
            a[2] += c.ds;
            a[3] += c.ddc;
            a[4] += c.dp;
            a[5] += c.dc;
        }
    }
    CostCurve {
        side,
        bins: acc
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let n = a[0];
                let mean = |j: usize| (n > 0.0).then(|| a[j] / n);
                CostBin {
                    lo: edges[k],
                    hi: edges[k + 1],
                    count: n as usize,
                    omega: mean(1),
                    ds: mean(2),
                    ddc: mean(3),
                    dp: mean(4),
                    dc: mean(5),
                }
            })
            .collect(),
    }
}

pub fn cost_curves_csv(curves: &[(String, Vec<CostCurve>)], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("Security,Side,Bin,Lo,Hi,Count,Omega,DeltaS,DeltaDC,DeltaP,DeltaC\n");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NaN".into());
    for (sec, list) in curves {
        for curve in list {
            for (k, b) in curve.bins.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{sec},{},{},{},{},{},{},{},{},{},{}",
                    curve.side.as_str(),
                    k + 1,
                    b.lo,
                    b.hi,
                    b.count,
                    f(b.omega),
                    f(b.ds),
                    f(b.ddc),
                    f(b.dp),
                    f(b.dc)
                );
            }
        }
    }
    out
}

/// Population standard deviation.
pub fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Column order of the variability table.
pub const COMPONENTS: [&str; 5] = ["dp", "ds", "ddc", "dc", "omega"];
const SCALES: [f64; 5] = [1e3, 1e3, 1e3, 1e3, 1e1];

/// Average across securities of the per-security, per-bin standard
/// deviations, already scaled (x1e3, omega x1e1). `values[bin][side][c]`
/// with side 0 = BI, 1 = SI and `c` following [`COMPONENTS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityTable {
    pub values: Vec<[[Option<f64>; 5]; 2]>,
    /// (security, bin, side) cells with fewer than two trades.
    pub excluded: usize,
}

pub fn variability_table(per_security: &[Vec<CostBreakdown>], bins: LogBins) -> VariabilityTable {
    let mut sums = vec![[[0.0f64; 5]; 2]; bins.n];
    let mut counts = vec![[0usize; 2]; bins.n];
    let mut excluded = 0;
    for costs in per_security {
        let mut cells: BTreeMap<(usize, usize), Vec<[f64; 5]>> = BTreeMap::new();
        for c in costs {
            if let Some(k) = bins.index(c.omega) {
                let s = usize::from(c.side == TradeSide::Si);
                cells.entry((k, s)).or_default().push([c.dp, c.ds, c.ddc, c.dc, c.omega]);
            }
        }
        for k in 0..bins.n {
            for s in 0..2 {
                let Some(rows) = cells.get(&(k, s)).filter(|r| r.len() >= 2) else {
                    excluded += 1;
                    continue;
                };
                counts[k][s] += 1;
                for j in 0..5 {
                    let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                    sums[k][s][j] += population_std(&col);
                }
            }
        }
    }
    let values = (0..bins.n)
        .map(|k| {
            let mut cell = [[None; 5]; 2];
            for s in 0..2 {
                if counts[k][s] > 0 {
                    for j in 0..5 {
                        cell[s][j] = Some(sums[k][s][j] / counts[k][s] as f64 * SCALES[j]);
                    }
                }
            }
            cell
        })
        .collect();
    VariabilityTable { values, excluded }
}

/// Renders tables of several exchanges side by side: for each component,
/// each exchange's BI and SI columns.
pub fn variability_csv(tables: &[(String, VariabilityTable)], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("Bin");
    for comp in COMPONENTS {
        for (ex, _) in tables {
            for side in ["BI", "SI"] {
                let _ = write!(out, ",{comp}_{ex}_{side}");
            }
        }
    }
    out.push('\n');
    let n = tables.iter().map(|(_, t)| t.values.len()).max().unwrap_or(0);
    for k in 0..n {
        let _ = write!(out, "{}", k + 1);
        for j in 0..5 {
            for (_, t) in tables {
                for s in 0..2 {
                    match t.values.get(k).and_then(|v| v[s][j]) {
                        Some(v) => {
                            let _ = write!(out, ",{v:.2}");
                        }
                        None => out.push_str(",NaN"),
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a2x_direct_cost_example() {
        let s = FeeSchedule::a2x();
        assert!((s.fee(100_000.0, FeeRole::Aggressor) - 6.90).abs() < 1e-12);
        assert!((direct_cost(100_000.0, 100.0, &s, FeeRole::Aggressor) - 0.069).abs() < 1e-15);
        assert!((s.fee(100_000.0, FeeRole::Passive) - 4.90).abs() < 1e-12);
    }

    #[test]
    fn jse_ceilings_bind_at_rate_over_value() {
        let s = FeeSchedule::jse();
        let (t, st) = s.ceiling_values(FeeRole::Aggressor);
        assert!((t - 420.4 / 0.000048).abs() < 1e-6);
        assert!((st - 180.0 / 0.000036).abs() < 1e-6);
        assert!((s.fee(st, FeeRole::Aggressor) - (st * 0.48e-4 + 180.0)).abs() < 1e-9);
        assert!((s.fee(1e12, FeeRole::Aggressor) - 600.4).abs() < 1e-9);
    }

    #[test]
    fn tiny_values_cost_nothing() {
        let s = FeeSchedule::jse();
        assert!(direct_cost(1e-9, 1.0, &s, FeeRole::Aggressor) < 1e-12);
        assert_eq!(direct_cost(0.0, 1.0, &s, FeeRole::Aggressor), 0.0);
    }

    #[test]
    fn slippage_examples() {
        assert_eq!(slippage(100.0, 102.0), (1.0, false));
        assert_eq!(slippage(100.0, 100.0), (0.0, false));
        assert_eq!(slippage(102.0, 100.0), (1.0, true));
    }

    fn input(side: TradeSide) -> CostInput {
        CostInput {
            side,
            omega: 1.0,
            price: 101.0,
            volume: 1_000.0,
            bid: 99.0,
            ask: 101.0,
            mid_before: 100.0,
            mid_after: 100.0,
        }
    }

    #[test]
    fn components() {
        let s = FeeSchedule::a2x();
        let c = cost_components(&input(TradeSide::Bi), &s, FeeRole::Aggressor).unwrap();
        assert!((c.ds - 1.01f64.ln()).abs() < 1e-15);
        assert_eq!(c.dp, 0.0);
        assert_eq!(c.total, c.slippage + c.impact + c.direct);
        assert!((c.dc - ((100.0 + 1.0 + c.direct) / 100.0f64).ln()).abs() < 1e-15);
        let si = cost_components(&input(TradeSide::Si), &s, FeeRole::Aggressor).unwrap();
        assert!((si.ds - 0.99f64.ln()).abs() < 1e-15);
        assert!(si.ds < 0.0 && si.ddc < 0.0 && si.dc < 0.0);
        assert!(si.ds.abs() > c.ds.abs());
    }

    #[test]
    fn si_cost_above_mid_is_excluded() {
        let mut i = input(TradeSide::Si);
        i.bid = 0.0;
        i.ask = 250.0;
        assert!(cost_components(&i, &FeeSchedule::a2x(), FeeRole::Aggressor).is_none());
        i.side = TradeSide::Bi;
        assert!(cost_components(&i, &FeeSchedule::a2x(), FeeRole::Aggressor).is_some());
    }

    #[test]
    fn fee_shape() {
        let s = FeeSchedule::jse();
        let mut prev = (0.0, f64::INFINITY);
        for k in 1..400 {
            let x = 10f64.powf(k as f64 / 40.0);
            let f = s.fee(x, FeeRole::Aggressor);
            assert!(f >= prev.0);
            assert!(f / x <= prev.1 * (1.0 + 1e-12));
            prev = (f, f / x);
        }
    }

    #[test]
    fn toml_schedules() {
        let text = r#"
[[schedule]]
exchange = "JSE"
transaction_bps = 0.48
transaction_ceiling_rand = 420.4
settlement_bps = 0.36
settlement_ceiling_rand = 180.0

[[schedule]]
exchange = "A2X"
transaction_bps = 0.4
transaction_ceiling_rand = 355.0
settlement_bps = 0.29
settlement_ceiling_rand = 154.0
passive_transaction_bps = 0.2
"#;
        let list = fee_schedules_from_toml(text).unwrap();
        assert_eq!(list, vec![FeeSchedule::jse(), FeeSchedule::a2x()]);
        let single = "exchange = \"X\"\ntransaction_bps = 1\ntransaction_ceiling_rand = inf\nsettlement_bps = 0\nsettlement_ceiling_rand = inf\n";
        let s = &fee_schedules_from_toml(single).unwrap()[0];
        assert_eq!(s.fee(1e6, FeeRole::Aggressor), 100.0);
        let bad = "exchange = \"X\"\ntransaction_bps = -1\ntransaction_ceiling_rand = 1\nsettlement_bps = 0\nsettlement_ceiling_rand = 1\n";
        assert!(fee_schedules_from_toml(bad).is_err());
    }

    fn breakdown(side: TradeSide, omega: f64, dc: f64) -> CostBreakdown {
        CostBreakdown {
            side,
            omega,
            slippage: 0.0,
            impact: 0.0,
            direct: 0.0,
            total: 0.0,
            ds: 0.001,
            ddc: 0.0,
            dp: 0.0,
            dc,
            crossed: false,
        }
    }

    #[test]
    fn variability_two_point() {
        let costs = vec![
            breakdown(TradeSide::Bi, 0.15, 0.001),
            breakdown(TradeSide::Bi, 0.15, 0.003),
            breakdown(TradeSide::Si, 0.15, -0.001),
        ];
        let t = variability_table(&[costs], LogBins::CALIBRATION);
        let cell = t.values[1][0];
        assert!((cell[3].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cell[1], Some(0.0));
        assert_eq!(t.values[1][1], [None; 5]);
        assert_eq!(t.excluded, 39);
        let csv = variability_csv(&[("JSE".into(), t)], None);
        assert!(csv.starts_with("Bin,dp_JSE_BI,dp_JSE_SI,ds_JSE_BI"));
    }

    #[test]
    fn curves_flat_for_constant_components() {
        let costs: Vec<_> = [0.15, 0.35, 0.7, 2.2]
            .iter()
            .flat_map(|&w| [breakdown(TradeSide::Bi, w, 0.002), breakdown(TradeSide::Bi, w * 1.01, 0.002)])
            .collect();
        let c = cost_curve(&costs, TradeSide::Bi, LogBins::CALIBRATION);
        let vals: Vec<f64> = c.bins.iter().filter_map(|b| b.dc).collect();
        assert_eq!(vals.len(), 4);
        assert!(vals.iter().all(|v| (v - 0.002).abs() < 1e-15));
    }
}
