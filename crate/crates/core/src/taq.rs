//! Mid-price, microprice, returns, inter-arrivals, impact increments and OHLC
//! bars derived from an L1 stream.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::l1::{EventType, L1Record, Sign};
use crate::time::{LocalTime, Session, NANOS_PER_MIN};

/// Microprice weighting.
///
/// `OwnSide` weights each price by its own side's volume:
/// `S = va/(va+vb) * a + vb/(va+vb) * b`.
/// `Conventional` is the imbalance form `S = vb/(va+vb) * a + va/(va+vb) * b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MicroMode {
    #[default]
    OwnSide,
    Conventional,
}

impl FromStr for MicroMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "own-side" | "ownside" => Ok(MicroMode::OwnSide),
            "conventional" | "imbalance" => Ok(MicroMode::Conventional),
            other => Err(Error::InvalidInput(format!("unknown microprice mode `{other}`"))),
        }
    }
}

pub fn midprice(bid: f64, ask: f64) -> f64 {
    (bid + ask) / 2.0
}

/// `None` when both volumes are zero.
pub fn microprice(bid: f64, bid_vol: f64, ask: f64, ask_vol: f64, mode: MicroMode) -> Option<f64> {
    let total = bid_vol + ask_vol;
    if total <= 0.0 {
        return None;
    }
    let (wa, wb) = match mode {
        MicroMode::OwnSide => (ask_vol / total, bid_vol / total),
        MicroMode::Conventional => (bid_vol / total, ask_vol / total),
    };
    Some(wa * ask + wb * bid)
}

/// Top of book after a quote event, both sides looked up even when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotePoint {
    pub timestamp: LocalTime,
    pub bid: Option<(f64, f64)>,
    pub ask: Option<(f64, f64)>,
    pub mid: Option<f64>,
    pub micro: Option<f64>,
}

impl QuotePoint {
    pub fn spread(&self) -> Option<f64> {
        Some(self.ask?.0 - self.bid?.0)
    }
}

/// Running best bid/ask with previous-tick interpolation, cleared at each new
/// local day.
#[derive(Debug, Clone, Default)]
pub struct QuoteTracker {
    mode: MicroMode,
    day: Option<i64>,
    bid: Option<(f64, f64)>,
    ask: Option<(f64, f64)>,
}

impl QuoteTracker {
    pub fn new(mode: MicroMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    fn roll_day(&mut self, ts: LocalTime) {
        if self.day != Some(ts.day()) {
            self.day = Some(ts.day());
            self.bid = None;
            self.ask = None;
        }
    }

    /// Feeds one record; quote rows update the book, trade rows only roll the
    /// day.
    pub fn observe(&mut self, r: &L1Record) {
        self.roll_day(r.timestamp);
        match r.event_type {
            EventType::Bid => self.bid = r.bid.zip(r.bid_vol),
            EventType::Ask => self.ask = r.ask.zip(r.ask_vol),
            EventType::Trade => {}
        }
    }

    pub fn point(&self, timestamp: LocalTime) -> QuotePoint {
        let (mid, micro) = match (self.bid, self.ask) {
            (Some((b, vb)), Some((a, va))) => {
                (Some(midprice(b, a)), microprice(b, vb, a, va, self.mode))
            }
            _ => (None, None),
        };
        QuotePoint {
            timestamp,
            bid: self.bid,
            ask: self.ask,
            mid,
            micro,
        }
    }

    pub fn mid(&self) -> Option<f64> {
        Some(midprice(self.bid?.0, self.ask?.0))
    }
}

/// One point per quote event.
pub fn derive_quotes(l1: &[L1Record], mode: MicroMode) -> Vec<QuotePoint> {
    let mut t = QuoteTracker::new(mode);
    let mut out = Vec::new();
    for r in l1 {
        t.observe(r);
        if r.event_type.is_quote() {
            out.push(t.point(r.timestamp));
        }
    }
    out
}

/// Fills mid/micro on every row and inter-arrival seconds on trade rows.
/// Trade rows carry the prevailing (pre-trade) mid and micro.
pub fn annotate(l1: &mut [L1Record], mode: MicroMode) {
    let mut t = QuoteTracker::new(mode);
    let mut last_trade: Option<LocalTime> = None;
    for r in l1.iter_mut() {
        t.observe(r);
        let p = t.point(r.timestamp);
        r.midprice = p.mid;
        r.microprice = p.micro;
        if r.event_type == EventType::Trade {
            r.interarrival = last_trade
                .filter(|prev| prev.day() == r.timestamp.day())
                .map(|prev| r.timestamp.seconds_since(prev));
            last_trade = Some(r.timestamp);
        }
    }
}

/// Log differences of consecutive values.
pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| w[1].ln() - w[0].ln()).collect()
}

/// Tick-scale microprice returns. Only consecutive quote points of the same
/// day with defined microprices contribute; broken-book gaps are not bridged.
pub fn tick_returns(quotes: &[QuotePoint]) -> Vec<(LocalTime, f64)> {
    quotes
        .windows(2)
        .filter_map(|w| {
            if w[0].timestamp.day() != w[1].timestamp.day() {
                return None;
            }
            let (s0, s1) = (w[0].micro?, w[1].micro?);
            Some((w[0].timestamp, s1.ln() - s0.ln()))
        })
        .collect()
}

/// Within-day trade inter-arrival times in seconds.
pub fn interarrivals(trade_times: &[LocalTime]) -> Vec<f64> {
    trade_times
        .windows(2)
        .filter(|w| w[0].day() == w[1].day())
        .map(|w| w[1].seconds_since(w[0]))
        .collect()
}

/// A trade with its surrounding quotes and log mid-price change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeImpact {
    /// Row index of the trade in the L1 stream.
    pub index: usize,
    pub timestamp: LocalTime,
    pub price: f64,
    pub volume: f64,
    pub sign: Option<Sign>,
    pub bid_before: Option<f64>,
    pub ask_before: Option<f64>,
    pub mid_before: Option<f64>,
    pub mid_after: Option<f64>,
    /// `log m_after - log m_before`; `None` when either mid is undefined.
    pub delta_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactSkips {
    /// No mid before the trade.
    pub broken_before: usize,
    /// The trade left one side of the book empty.
    pub broken_after: usize,
}

/// Pairs each trade with the mid just before it and the mid once the quote
/// updates stamped with the same time that immediately follow it are applied.
pub fn impact_increments(l1: &[L1Record]) -> (Vec<TradeImpact>, ImpactSkips) {
    let mut t = QuoteTracker::new(MicroMode::OwnSide);
    let mut out = Vec::new();
    let mut skips = ImpactSkips::default();
    for (i, r) in l1.iter().enumerate() {
        t.observe(r);
        if r.event_type != EventType::Trade {
            continue;
        }
        let before = t.point(r.timestamp);
        let mut after = t.clone();
        for next in l1[i + 1..].iter() {
            if !next.event_type.is_quote() || next.timestamp != r.timestamp {
                break;
            }
            after.observe(next);
        }
        let mid_after = after.mid();
        let delta_p = match (before.mid, mid_after) {
            (None, _) => {
                skips.broken_before += 1;
                None
            }
            (Some(_), None) => {
                skips.broken_after += 1;
                None
            }
            (Some(m0), Some(m1)) => Some(m1.ln() - m0.ln()),
        };
        out.push(TradeImpact {
            index: i,
            timestamp: r.timestamp,
            price: r.trade.unwrap_or(f64::NAN),
            volume: r.trade_vol.unwrap_or(0.0),
            sign: r.trade_sign,
            bid_before: before.bid.map(|b| b.0),
            ask_before: before.ask.map(|a| a.0),
            mid_before: before.mid,
            mid_after,
            delta_p,
        });
    }
    (out, skips)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ohlc {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl Ohlc {
    pub fn bullish(&self) -> bool {
        self.close >= self.open
    }
}

/// Microprice bar; `ohlc` is `None` for bars without a defined microprice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub start: LocalTime,
    pub ohlc: Option<Ohlc>,
}

/// Bars of `width_min` minutes aligned to the session open, for every day
/// that has quote points. The last bar is truncated at the session close.
pub fn ohlc(quotes: &[QuotePoint], width_min: u32, session: Session) -> Vec<OhlcBar> {
    assert!(width_min > 0, "bar width must be positive");
    let width = width_min as i64 * NANOS_PER_MIN;
    let n_bars = ((session.length_ns() + width - 1) / width) as usize;
    let mut out: Vec<OhlcBar> = Vec::new();
    let mut day: Option<i64> = None;
    let mut day_start = 0usize;
    for q in quotes {
        let d = q.timestamp.day();
        if day != Some(d) {
            day = Some(d);
            day_start = out.len();
            let open = LocalTime::from_local_ns(d * crate::time::NANOS_PER_DAY + session.start_ns);
            out.extend((0..n_bars).map(|k| OhlcBar {
                start: open.plus_ns(k as i64 * width),
                ohlc: None,
            }));
        }
        if !session.contains(q.timestamp) {
            continue;
        }
        let Some(s) = q.micro else { continue };
        let k = ((q.timestamp.time_of_day() - session.start_ns) / width) as usize;
        let bar = &mut out[day_start + k].ohlc;
        match bar {
            None => {
                *bar = Some(Ohlc {
                    open: s,
                    high: s,
                    low: s,
                    close: s,
                })
            }
            Some(b) => {
                b.high = b.high.max(s);
                b.low = b.low.min(s);
                b.close = s;
            }
        }
    }
    out
}

/// Close-to-close log returns between consecutive non-empty bars of a day.
pub fn bar_returns(bars: &[OhlcBar]) -> Vec<(LocalTime, f64)> {
    let mut out = Vec::new();
    let mut prev: Option<(i64, f64)> = None;
    for b in bars {
        let Some(o) = b.ohlc else { continue };
        let d = b.start.day();
        if let Some((pd, pc)) = prev {
            if pd == d {
                out.push((b.start, o.close.ln() - pc.ln()));
            }
        }
        prev = Some((d, o.close));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: u32, m: u32, s: u32) -> LocalTime {
        LocalTime::from_ymd_hms(2020, 3, 10, h, m, s).unwrap()
    }

    fn q(ts: LocalTime, micro: Option<f64>) -> QuotePoint {
        QuotePoint {
            timestamp: ts,
            bid: None,
            ask: None,
            mid: micro,
            micro,
        }
    }

    #[test]
    fn micro_equal_volumes_is_mid() {
        assert_eq!(microprice(100.0, 10.0, 102.0, 10.0, MicroMode::OwnSide), Some(101.0));
        assert_eq!(midprice(100.0, 102.0), 101.0);
    }

    #[test]
    fn micro_own_side_weighting() {
        let s = microprice(100.0, 10.0, 102.0, 5.0, MicroMode::OwnSide).unwrap();
        assert!((s - (5.0 / 15.0 * 102.0 + 10.0 / 15.0 * 100.0)).abs() < 1e-12);
        assert!((s - 100.666_666_666_666_67).abs() < 1e-9);
        let c = microprice(100.0, 10.0, 102.0, 5.0, MicroMode::Conventional).unwrap();
        assert!((c - 101.333_333_333_333_33).abs() < 1e-9);
    }

    #[test]
    fn micro_matches_reference_jse_row() {
        let rows = [
            (1196.0, 2869.0, 266_707.68),
            (1193.0, 2869.0, 266_698.41),
            (1193.0, 2868.0, 266_699.70),
            (1192.0, 2868.0, 266_696.60),
        ];
        for (vb, va, want) in rows {
            let s = microprice(279_258.84, vb, 261_475.48, va, MicroMode::OwnSide).unwrap();
            assert!((s - want).abs() < 0.005, "{s} vs {want}");
        }
        assert!((midprice(279_258.84, 261_475.48) - 270_367.16).abs() < 1e-6);
    }

    #[test]
    fn derive_quotes_previous_tick_and_nan() {
        let recs = vec![
            L1Record::bid(t(9, 0, 0), Some((100.0, 10.0))),
            L1Record::ask(t(9, 0, 1), Some((102.0, 10.0))),
            L1Record::ask(t(9, 0, 2), None),
        ];
        let qs = derive_quotes(&recs, MicroMode::OwnSide);
        assert_eq!(qs[0].mid, None);
        assert_eq!(qs[1].mid, Some(101.0));
        assert_eq!(qs[1].micro, Some(101.0));
        assert_eq!((qs[2].mid, qs[2].micro), (None, None));
    }

    #[test]
    fn return_examples() {
        assert_eq!(log_returns(&[100.0, 100.0]), vec![0.0]);
        let r = log_returns(&[100.0, 100.0 * std::f64::consts::E]);
        assert!((r[0] - 1.0).abs() < 1e-15);
        let r = log_returns(&[100.0, 105.0, 99.75]);
        assert!((r[0] - 1.05f64.ln()).abs() < 1e-12);
        assert!((r[1] - 0.95f64.ln()).abs() < 1e-12);
        assert!(tick_returns(&[q(t(9, 0, 0), Some(1.0))]).is_empty());
    }

    #[test]
    fn tick_returns_skip_gaps_and_days() {
        let next_day = t(9, 0, 0).plus_ns(crate::time::NANOS_PER_DAY);
        let qs = vec![
            q(t(9, 0, 0), Some(100.0)),
            q(t(9, 0, 1), Some(101.0)),
            q(t(9, 0, 2), None),
            q(t(9, 0, 3), Some(102.0)),
            q(next_day, Some(103.0)),
        ];
        let r = tick_returns(&qs);
        assert_eq!(r.len(), 1);
        assert!((r[0].1 - (101.0f64 / 100.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn interarrival_examples() {
        assert!(interarrivals(&[t(9, 0, 0)]).is_empty());
        assert_eq!(interarrivals(&[t(9, 0, 0), t(9, 0, 5)]), vec![5.0]);
        let d2 = LocalTime::from_ymd_hms(2020, 3, 11, 9, 1, 0).unwrap();
        assert!(interarrivals(&[t(16, 49, 0), d2]).is_empty());
    }

    #[test]
    fn annotate_sets_pre_trade_mid_and_interarrivals() {
        let mut recs = vec![
            L1Record::bid(t(9, 0, 0), Some((100.0, 10.0))),
            L1Record::ask(t(9, 0, 0), Some((102.0, 10.0))),
            L1Record::trade(t(9, 0, 3), 102.0, 10.0, Some(1)),
            L1Record::ask(t(9, 0, 3), Some((104.0, 5.0))),
            L1Record::trade(t(9, 0, 8), 104.0, 1.0, Some(1)),
        ];
        annotate(&mut recs, MicroMode::OwnSide);
        assert_eq!(recs[2].midprice, Some(101.0));
        assert_eq!(recs[2].interarrival, None);
        assert_eq!(recs[3].midprice, Some(102.0));
        assert_eq!(recs[4].interarrival, Some(5.0));
    }

    #[test]
    fn impact_examples() {
        let recs = vec![
            L1Record::bid(t(9, 0, 0), Some((99.0, 10.0))),
            L1Record::ask(t(9, 0, 0), Some((101.0, 10.0))),
            L1Record::trade(t(9, 0, 1), 101.0, 10.0, Some(1)),
            L1Record::ask(t(9, 0, 1), Some((103.0, 4.0))),
            L1Record::trade(t(9, 0, 2), 99.0, 1.0, Some(-1)),
            L1Record::trade(t(9, 0, 3), 103.0, 4.0, Some(1)),
            L1Record::ask(t(9, 0, 3), None),
        ];
        let (imp, skips) = impact_increments(&recs);
        assert!((imp[0].delta_p.unwrap() - 1.01f64.ln()).abs() < 1e-15);
        assert_eq!(imp[1].delta_p, Some(0.0));
        assert_eq!(imp[2].delta_p, None);
        assert_eq!(skips.broken_after, 1);
    }

    #[test]
    fn ohlc_examples() {
        let s = Session::default();
        let qs: Vec<_> = [100.0, 103.0, 99.0, 101.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| q(t(9, 0, i as u32), Some(v)))
            .collect();
        let bars = ohlc(&qs, 10, s);
        assert_eq!(bars.len(), 47);
        let o = bars[0].ohlc.unwrap();
        assert_eq!((o.open, o.high, o.low, o.close), (100.0, 103.0, 99.0, 101.0));
        assert!(bars[1].ohlc.is_none());
        let flat: Vec<_> = (0..5).map(|i| q(t(9, 1, i), Some(100.0))).collect();
        let o = ohlc(&flat, 1, s)[1].ohlc.unwrap();
        assert_eq!((o.open, o.high, o.low, o.close), (100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn bar_returns_skip_empty_bars() {
        let s = Session::default();
        let qs = vec![
            q(t(9, 0, 0), Some(100.0)),
            q(t(9, 25, 0), Some(110.0)),
        ];
        let bars = ohlc(&qs, 10, s);
        let r = bar_returns(&bars);
        assert_eq!(r.len(), 1);
        assert!((r[0].1 - 1.1f64.ln()).abs() < 1e-15);
    }
}
