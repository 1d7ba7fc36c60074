//! Per-security order book replay producing the L1 event stream.
//!
//! Bids and asks are kept in maps keyed by order reference. Each side also
//! keeps a price-time priority index so the best order is found without a
//! scan. An L1 record is emitted only when an event changes the best order on
//! the side it touches.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feed::{MarketMessage, MessageKind, Side};
use crate::l1::{L1Record, Sign};
use crate::price::PriceFixed;
use crate::time::LocalTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestingOrder {
    pub price: PriceFixed,
    pub quantity: u64,
    /// Event time that sets time priority (add or last modify).
    pub priority_ns: u64,
    /// Arrival counter, breaks ties between equal event times.
    pub arrival: u64,
}

/// Recoverable feed anomalies seen during replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomalies {
    pub unknown_cancel: u64,
    pub unknown_modify: u64,
    pub unknown_trade: u64,
    pub duplicate_add: u64,
    pub zero_quantity: u64,
    pub overfill: u64,
    pub trade_busts: u64,
    pub ignored: u64,
}

impl Anomalies {
    pub fn merge(&mut self, other: &Anomalies) {
        self.unknown_cancel += other.unknown_cancel;
        self.unknown_modify += other.unknown_modify;
        self.unknown_trade += other.unknown_trade;
        self.duplicate_add += other.duplicate_add;
        self.zero_quantity += other.zero_quantity;
        self.overfill += other.overfill;
        self.trade_busts += other.trade_busts;
        self.ignored += other.ignored;
    }
}

type BidKey = (Reverse<PriceFixed>, u64, u64, u64);
type AskKey = (PriceFixed, u64, u64, u64);

#[derive(Debug, Clone, Default)]
struct BookSide {
    orders: HashMap<u64, RestingOrder>,
    // (price key, priority_ns, arrival, order_ref); first element is best
    bid_index: BTreeSet<BidKey>,
    ask_index: BTreeSet<AskKey>,
}

impl BookSide {
    fn insert(&mut self, side: Side, order_ref: u64, o: RestingOrder) {
        match side {
            Side::Buy => {
                self.bid_index
                    .insert((Reverse(o.price), o.priority_ns, o.arrival, order_ref));
            }
            Side::Sell => {
                self.ask_index
                    .insert((o.price, o.priority_ns, o.arrival, order_ref));
            }
        }
        self.orders.insert(order_ref, o);
    }

    fn remove(&mut self, side: Side, order_ref: u64) -> Option<RestingOrder> {
        let o = self.orders.remove(&order_ref)?;
        match side {
            Side::Buy => self
                .bid_index
                .remove(&(Reverse(o.price), o.priority_ns, o.arrival, order_ref)),
            Side::Sell => self
                .ask_index
                .remove(&(o.price, o.priority_ns, o.arrival, order_ref)),
        };
        Some(o)
    }

    fn best_ref(&self, side: Side) -> Option<u64> {
        match side {
            Side::Buy => self.bid_index.first().map(|k| k.3),
            Side::Sell => self.ask_index.first().map(|k| k.3),
        }
    }
}

/// Result of applying a trade message.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeUpdate {
    pub trade: L1Record,
    pub quote: Option<L1Record>,
    pub outcome: TradeOutcome,
}

/// Post-trade state of the side a trade consumed liquidity from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeOutcome {
    pub timestamp: LocalTime,
    pub sign: Sign,
    pub hit_side_empty: bool,
}

/// Order book of one security.
#[derive(Debug, Clone)]
pub struct BookState {
    security_id: u32,
    bids: BookSide,
    asks: BookSide,
    next_arrival: u64,
    pub anomalies: Anomalies,
}

/// One aggregated price level: (price in ZAC, total quantity).
pub type Level = (f64, u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSnapshot {
    pub timestamp: LocalTime,
    pub bids: Vec<Level>,
    pub asks: Vec<Level>,
}

impl DepthSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "timestamp": self.timestamp.to_string(),
            "bids": self.bids,
            "asks": self.asks,
        })
        .to_string()
    }
}

impl BookState {
    pub fn new(security_id: u32) -> Self {
        Self {
            security_id,
            bids: BookSide::default(),
            asks: BookSide::default(),
            next_arrival: 0,
            anomalies: Anomalies::default(),
        }
    }

    pub fn security_id(&self) -> u32 {
        self.security_id
    }

    /// Drops all resting orders (start of a new trading day).
    pub fn clear(&mut self) {
        self.bids = BookSide::default();
        self.asks = BookSide::default();
    }

    fn side_mut(&mut self, side: Side) -> &mut BookSide {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    fn side(&self, side: Side) -> &BookSide {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn locate(&self, order_ref: u64) -> Option<Side> {
        if self.bids.orders.contains_key(&order_ref) {
            Some(Side::Buy)
        } else if self.asks.orders.contains_key(&order_ref) {
            Some(Side::Sell)
        } else {
            None
        }
    }

    /// Best resting order of a side: (order ref, order).
    pub fn best(&self, side: Side) -> Option<(u64, RestingOrder)> {
        let s = self.side(side);
        s.best_ref(side).map(|r| (r, s.orders[&r]))
    }

    pub fn best_bid(&self) -> Option<(PriceFixed, u64)> {
        self.best(Side::Buy).map(|(_, o)| (o.price, o.quantity))
    }

    pub fn best_ask(&self) -> Option<(PriceFixed, u64)> {
        self.best(Side::Sell).map(|(_, o)| (o.price, o.quantity))
    }

    pub fn order_count(&self, side: Side) -> usize {
        self.side(side).orders.len()
    }

    pub fn orders(&self, side: Side) -> impl Iterator<Item = (u64, RestingOrder)> + '_ {
        self.side(side).orders.iter().map(|(k, v)| (*k, *v))
    }

    fn quote_record(&self, side: Side, timestamp: LocalTime) -> L1Record {
        let best = self
            .best(side)
            .map(|(_, o)| (o.price.zac(), o.quantity as f64));
        match side {
            Side::Buy => L1Record::bid(timestamp, best),
            Side::Sell => L1Record::ask(timestamp, best),
        }
    }

    fn check_security(&self, msg: &MarketMessage) -> Result<()> {
        if msg.security_id != self.security_id {
            return Err(Error::WrongSecurity {
                expected: self.security_id,
                got: msg.security_id,
            });
        }
        Ok(())
    }

    /// Applies an add, cancel or modify. Returns the L1 record when the best
    /// order on the touched side changed. Trades and busts go through
    /// [`BookState::apply_trade`] / [`BookState::apply_message`].
    pub fn apply(&mut self, msg: &MarketMessage) -> Result<Option<L1Record>> {
        self.check_security(msg)?;
        let ts = LocalTime::from_unix_ns(msg.event_ns);
        let Some(order_ref) = msg.order_ref else {
            self.anomalies.ignored += 1;
            return Ok(None);
        };
        match msg.kind {
            MessageKind::OrderAdd => {
                let (Some(side), Some(price), Some(qty)) = (msg.side, msg.price, msg.quantity)
                else {
                    self.anomalies.ignored += 1;
                    return Ok(None);
                };
                if qty == 0 {
                    self.anomalies.zero_quantity += 1;
                    return Ok(None);
                }
                if self.locate(order_ref).is_some() {
                    self.anomalies.duplicate_add += 1;
                    return Ok(None);
                }
                let arrival = self.next_arrival;
                self.next_arrival += 1;
                let order = RestingOrder {
                    price,
                    quantity: qty,
                    priority_ns: msg.event_ns,
                    arrival,
                };
                let book = self.side_mut(side);
                book.insert(side, order_ref, order);
                let is_best = book.best_ref(side) == Some(order_ref);
                Ok(is_best.then(|| self.quote_record(side, ts)))
            }
            MessageKind::OrderCancel => {
                let Some(side) = self.locate(order_ref) else {
                    self.anomalies.unknown_cancel += 1;
                    return Ok(None);
                };
                let book = self.side_mut(side);
                let was_best = book.best_ref(side) == Some(order_ref);
                book.remove(side, order_ref);
                Ok(was_best.then(|| self.quote_record(side, ts)))
            }
            MessageKind::OrderModify => {
                let (Some(price), Some(qty)) = (msg.price, msg.quantity) else {
                    self.anomalies.ignored += 1;
                    return Ok(None);
                };
                let Some(side) = self.locate(order_ref) else {
                    self.anomalies.unknown_modify += 1;
                    return Ok(None);
                };
                if qty == 0 {
                    self.anomalies.zero_quantity += 1;
                    return Ok(None);
                }
                let arrival = self.next_arrival;
                self.next_arrival += 1;
                let book = self.side_mut(side);
                let was_best = book.best_ref(side) == Some(order_ref);
                book.remove(side, order_ref);
                book.insert(
                    side,
                    order_ref,
                    RestingOrder {
                        price,
                        quantity: qty,
                        priority_ns: msg.event_ns,
                        arrival,
                    },
                );
                let is_best = book.best_ref(side) == Some(order_ref);
                Ok((was_best || is_best).then(|| self.quote_record(side, ts)))
            }
            _ => {
                self.anomalies.ignored += 1;
                Ok(None)
            }
        }
    }

    /// Applies a trade against the resting order it references. The sign is
    /// +1 when the order rests on the ask side (buyer-initiated) and -1 when
    /// it rests on the bid side. Returns `Ok(None)` for an unknown reference.
    pub fn apply_trade(&mut self, msg: &MarketMessage) -> Result<Option<TradeUpdate>> {
        self.check_security(msg)?;
        let ts = LocalTime::from_unix_ns(msg.event_ns);
        let (Some(order_ref), Some(qty)) = (msg.order_ref, msg.quantity) else {
            self.anomalies.ignored += 1;
            return Ok(None);
        };
        let Some(side) = self.locate(order_ref) else {
            self.anomalies.unknown_trade += 1;
            return Ok(None);
        };
        let sign: Sign = match side {
            Side::Sell => 1,
            Side::Buy => -1,
        };
        let book = self.side_mut(side);
        let resting = book.orders[&order_ref];
        if qty > resting.quantity {
            return Err(Error::Overfill {
                order_ref,
                traded: qty,
                resting: resting.quantity,
            });
        }
        let was_best = book.best_ref(side) == Some(order_ref);
        let residual = resting.quantity - qty;
        if residual > 0 {
            // Same price and priority, only the quantity shrinks.
            book.orders.get_mut(&order_ref).unwrap().quantity = residual;
        } else {
            book.remove(side, order_ref);
        }
        let trade_price = msg.price.unwrap_or(resting.price).zac();
        let trade = L1Record::trade(ts, trade_price, qty as f64, Some(sign));
        let quote = was_best.then(|| self.quote_record(side, ts));
        let outcome = TradeOutcome {
            timestamp: ts,
            sign,
            hit_side_empty: self.side(side).orders.is_empty(),
        };
        Ok(Some(TradeUpdate {
            trade,
            quote,
            outcome,
        }))
    }

    /// All resting orders aggregated by price level; bids descending, asks
    /// ascending.
    pub fn depth_snapshot(&self, timestamp: LocalTime) -> DepthSnapshot {
        fn levels(side: &BookSide) -> BTreeMap<PriceFixed, u64> {
            let mut m = BTreeMap::new();
            for o in side.orders.values() {
                *m.entry(o.price).or_insert(0) += o.quantity;
            }
            m
        }
        DepthSnapshot {
            timestamp,
            bids: levels(&self.bids)
                .into_iter()
                .rev()
                .map(|(p, q)| (p.zac(), q))
                .collect(),
            asks: levels(&self.asks)
                .into_iter()
                .map(|(p, q)| (p.zac(), q))
                .collect(),
        }
    }
}

/// Fraction of trades after which the side they hit was left empty.
pub fn break_rate(outcomes: &[TradeOutcome]) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    let broken = outcomes.iter().filter(|o| o.hit_side_empty).count();
    Some(broken as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Record a depth snapshot after every state-changing event.
    pub record_depth: bool,
    /// Abort on overfilled trades instead of counting them.
    pub strict: bool,
}

/// Everything produced by replaying one security's messages.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub records: Vec<L1Record>,
    pub depth: Vec<DepthSnapshot>,
    pub outcomes: Vec<TradeOutcome>,
    pub anomalies: Anomalies,
}

/// Replays one security's feed-ordered messages. The book is cleared at each
/// change of local calendar day since order references are only unique
/// within a day.
pub fn replay_security(
    security_id: u32,
    messages: &[MarketMessage],
    opts: ReplayOptions,
) -> Result<Replay> {
    let mut book = BookState::new(security_id);
    let mut out = Replay::default();
    let mut day = None;
    for msg in messages {
        let ts = LocalTime::from_unix_ns(msg.event_ns);
        if day != Some(ts.day()) {
            day = Some(ts.day());
            book.clear();
        }
        let changed = match msg.kind {
            MessageKind::OrderAdd | MessageKind::OrderCancel | MessageKind::OrderModify => {
                let before = book.anomalies;
                if let Some(rec) = book.apply(msg)? {
                    out.records.push(rec);
                }
                before == book.anomalies
            }
            MessageKind::Trade => match book.apply_trade(msg) {
                Ok(Some(update)) => {
                    out.records.push(update.trade);
                    out.records.extend(update.quote);
                    out.outcomes.push(update.outcome);
                    true
                }
                Ok(None) => false,
                Err(e @ Error::Overfill { .. }) => {
                    if opts.strict {
                        return Err(e);
                    }
                    book.anomalies.overfill += 1;
                    false
                }
                Err(e) => return Err(e),
            },
            MessageKind::TradeBust => {
                book.check_security(msg)?;
                book.anomalies.trade_busts += 1;
                false
            }
            _ => {
                book.anomalies.ignored += 1;
                false
            }
        };
        if changed && opts.record_depth {
            out.depth.push(book.depth_snapshot(ts));
        }
    }
    out.anomalies = book.anomalies;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: u64 = 1_583_827_086_000_000_000;

    fn add(seq: u64, side: Side, qty: u64, raw: u64, oref: u64) -> MarketMessage {
        MarketMessage::order_add(seq, 24, side, qty, PriceFixed(raw), oref, T0 + seq)
    }

    #[test]
    fn first_bid_becomes_best() {
        let mut b = BookState::new(24);
        let rec = b.apply(&add(1, Side::Buy, 100, 1_000_000_000, 1)).unwrap().unwrap();
        assert_eq!(rec.bid, Some(10_000.0));
        assert_eq!(rec.bid_vol, Some(100.0));
        assert_eq!(rec.ask, None);
    }

    #[test]
    fn worse_bid_does_not_update_l1() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Buy, 100, 1_000_000_000, 1)).unwrap();
        assert!(b.apply(&add(2, Side::Buy, 100, 999_900_000, 2)).unwrap().is_none());
        // equal price, later arrival: still not best
        assert!(b.apply(&add(3, Side::Buy, 50, 1_000_000_000, 3)).unwrap().is_none());
        assert_eq!(b.best_bid(), Some((PriceFixed(1_000_000_000), 100)));
    }

    #[test]
    fn cancel_only_ask_reports_nan() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Sell, 191, 2_507_400_000, 7)).unwrap();
        let rec = b
            .apply(&MarketMessage::order_cancel(2, 24, 7, T0 + 2))
            .unwrap()
            .unwrap();
        assert_eq!(rec.event_type, crate::l1::EventType::Ask);
        assert_eq!((rec.ask, rec.ask_vol), (None, None));
    }

    #[test]
    fn cancel_non_best_is_silent() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Sell, 10, 2_000_000_000, 1)).unwrap();
        b.apply(&add(2, Side::Sell, 10, 2_100_000_000, 2)).unwrap();
        assert!(b.apply(&MarketMessage::order_cancel(3, 24, 2, T0 + 3)).unwrap().is_none());
    }

    #[test]
    fn modify_rules() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Buy, 10, 1_000_000_000, 1)).unwrap();
        b.apply(&add(2, Side::Buy, 10, 990_000_000, 2)).unwrap();
        // non-best modified but still worse: silent
        let m = MarketMessage::order_modify(3, 24, 20, PriceFixed(995_000_000), 2, T0 + 3);
        assert!(b.apply(&m).unwrap().is_none());
        // non-best modified to beat best: emits
        let m = MarketMessage::order_modify(4, 24, 20, PriceFixed(1_005_000_000), 2, T0 + 4);
        let r = b.apply(&m).unwrap().unwrap();
        assert_eq!(r.bid, Some(10_050.0));
        // best modified down below the other: emits the new best
        let m = MarketMessage::order_modify(5, 24, 20, PriceFixed(980_000_000), 2, T0 + 5);
        let r = b.apply(&m).unwrap().unwrap();
        assert_eq!((r.bid, r.bid_vol), (Some(10_000.0), Some(10.0)));
        // unknown ref
        let m = MarketMessage::order_modify(6, 24, 20, PriceFixed(980_000_000), 99, T0 + 6);
        assert!(b.apply(&m).unwrap().is_none());
        assert_eq!(b.anomalies.unknown_modify, 1);
    }

    #[test]
    fn full_fill_of_only_ask_breaks_book() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Sell, 191, 2_507_400_000, 7)).unwrap();
        let t = MarketMessage::trade(2, 24, 7, 1, PriceFixed(2_507_400_000), 191, T0 + 2);
        let u = b.apply_trade(&t).unwrap().unwrap();
        assert_eq!(u.trade.trade_sign, Some(1));
        assert_eq!(u.trade.trade_vol, Some(191.0));
        let q = u.quote.unwrap();
        assert_eq!((q.ask, q.ask_vol), (None, None));
        assert!(u.outcome.hit_side_empty);
    }

    #[test]
    fn partial_fill_leaves_residual() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Sell, 191, 2_507_400_000, 7)).unwrap();
        let t = MarketMessage::trade(2, 24, 7, 1, PriceFixed(2_507_400_000), 50, T0 + 2);
        let u = b.apply_trade(&t).unwrap().unwrap();
        let q = u.quote.unwrap();
        assert_eq!((q.ask, q.ask_vol), (Some(25_074.0), Some(141.0)));
        assert!(!u.outcome.hit_side_empty);
    }

    #[test]
    fn hitting_a_bid_is_seller_initiated() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Buy, 10, 1_000_000_000, 3)).unwrap();
        let t = MarketMessage::trade(2, 24, 3, 1, PriceFixed(1_000_000_000), 4, T0 + 2);
        assert_eq!(b.apply_trade(&t).unwrap().unwrap().trade.trade_sign, Some(-1));
    }

    #[test]
    fn overfill_is_an_error() {
        let mut b = BookState::new(24);
        b.apply(&add(1, Side::Buy, 10, 1_000_000_000, 3)).unwrap();
        let t = MarketMessage::trade(2, 24, 3, 1, PriceFixed(1_000_000_000), 11, T0 + 2);
        assert!(matches!(b.apply_trade(&t), Err(Error::Overfill { .. })));
    }

    #[test]
    fn depth_aggregates_levels() {
        let mut b = BookState::new(24);
        let t = LocalTime::from_unix_ns(T0);
        assert_eq!(b.depth_snapshot(t).bids, vec![]);
        b.apply(&add(1, Side::Buy, 10, 1_000_000_000, 1)).unwrap();
        b.apply(&add(2, Side::Buy, 5, 1_000_000_000, 2)).unwrap();
        b.apply(&add(3, Side::Sell, 7, 1_020_000_000, 3)).unwrap();
        b.apply(&add(4, Side::Sell, 9, 1_010_000_000, 4)).unwrap();
        let d = b.depth_snapshot(t);
        assert_eq!(d.bids, vec![(10_000.0, 15)]);
        assert_eq!(d.asks, vec![(10_100.0, 9), (10_200.0, 7)]);
    }

    #[test]
    fn break_rate_edges() {
        let t = LocalTime::from_unix_ns(T0);
        let o = |e| TradeOutcome {
            timestamp: t,
            sign: 1,
            hit_side_empty: e,
        };
        assert_eq!(break_rate(&[]), None);
        assert_eq!(break_rate(&[o(true), o(true)]), Some(1.0));
        assert_eq!(break_rate(&[o(false), o(false)]), Some(0.0));
        assert_eq!(break_rate(&[o(false), o(true), o(false), o(false)]), Some(0.25));
    }

    #[test]
    fn replay_resets_between_days() {
        let day = 86_400_000_000_000u64;
        let msgs = vec![
            add(1, Side::Buy, 10, 1_000_000_000, 1),
            MarketMessage::order_cancel(2, 24, 1, T0 + day),
        ];
        let r = replay_security(24, &msgs, ReplayOptions::default()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.anomalies.unknown_cancel, 1);
    }
}
