//! Trade-sign inference (quote, tick and Lee-Ready rules) and evaluation
//! against known signs.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1::{EventType, L1Record, Sign};
use crate::taq::{MicroMode, QuoteTracker};
use crate::time::LocalTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Quote,
    Tick,
    LeeReady,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Quote, Rule::Tick, Rule::LeeReady];
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "quote" => Ok(Rule::Quote),
            "tick" => Ok(Rule::Tick),
            "leeready" | "lr" => Ok(Rule::LeeReady),
            other => Err(Error::InvalidInput(format!("unknown classification rule `{other}`"))),
        }
    }
}

/// A trade with the mid in force just before it and the previous trade
/// prices of the same day needed by the tick test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeContext {
    pub timestamp: LocalTime,
    pub price: f64,
    pub volume: f64,
    pub true_sign: Option<Sign>,
    /// Prevailing mid before the trade; `None` when the book was broken.
    pub mid_before: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedTrade {
    pub timestamp: LocalTime,
    pub price: f64,
    pub volume: f64,
    pub inferred_sign: Option<Sign>,
    pub true_sign: Option<Sign>,
    /// Lee-Ready only: step 1 was skipped because the mid was undefined.
    pub broken_mid: bool,
}

/// Extracts trades in stream order with their prevailing pre-trade mids.
/// Quote rows sharing a trade's timestamp count as prior only when they
/// precede it in the stream.
pub fn trade_contexts(l1: &[L1Record]) -> Vec<TradeContext> {
    let mut tracker = QuoteTracker::new(MicroMode::OwnSide);
    let mut out = Vec::new();
    for r in l1 {
        tracker.observe(r);
        if r.event_type == EventType::Trade {
            if let (Some(price), Some(volume)) = (r.trade, r.trade_vol) {
                out.push(TradeContext {
                    timestamp: r.timestamp,
                    price,
                    volume,
                    true_sign: r.trade_sign,
                    mid_before: tracker.mid(),
                });
            }
        }
    }
    out
}

fn quote_sign(price: f64, mid: Option<f64>) -> Option<Sign> {
    let mid = mid?;
    if price > mid {
        Some(1)
    } else if price < mid {
        Some(-1)
    } else {
        None
    }
}

/// Tick test state for one day: the last trade price that differs from the
/// current run of equal prices.
#[derive(Default)]
struct TickState {
    day: Option<i64>,
    last: Option<f64>,
    last_different: Option<f64>,
}

impl TickState {
    fn sign(&mut self, t: &TradeContext) -> Option<Sign> {
        let day = t.timestamp.day();
        if self.day != Some(day) {
            *self = TickState {
                day: Some(day),
                ..TickState::default()
            };
        }
        let reference = match self.last {
            Some(prev) if prev != t.price => {
                self.last_different = Some(prev);
                Some(prev)
            }
            Some(_) => self.last_different,
            None => None,
        };
        self.last = Some(t.price);
        let r = reference?;
        if t.price > r {
            Some(1)
        } else {
            Some(-1)
        }
    }
}

/// Applies `rule` to every trade. The tick test always runs so its state
/// tracks the full trade sequence even where Lee-Ready settles on step 1.
pub fn classify(trades: &[TradeContext], rule: Rule) -> Vec<SignedTrade> {
    let mut tick = TickState::default();
    trades
        .iter()
        .map(|t| {
            let tick_sign = tick.sign(t);
            let q = quote_sign(t.price, t.mid_before);
            let inferred_sign = match rule {
                Rule::Quote => q,
                Rule::Tick => tick_sign,
                Rule::LeeReady => q.or(tick_sign),
            };
            SignedTrade {
                timestamp: t.timestamp,
                price: t.price,
                volume: t.volume,
                inferred_sign,
                true_sign: t.true_sign,
                broken_mid: rule == Rule::LeeReady && t.mid_before.is_none(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_trades: usize,
    pub n_unclassified: usize,
    pub n_correct: usize,
    /// correct / (n_trades - n_unclassified); `None` with nothing classified.
    pub accuracy: Option<f64>,
}

/// Scores inferred signs. Every trade must carry its true sign.
pub fn evaluate(signed: &[SignedTrade]) -> Result<Evaluation> {
    let mut n_unclassified = 0;
    let mut n_correct = 0;
    for s in signed {
        let truth = s.true_sign.ok_or(Error::MissingGroundTruth)?;
        match s.inferred_sign {
            None => n_unclassified += 1,
            Some(x) if x == truth => n_correct += 1,
            Some(_) => {}
        }
    }
    let classified = signed.len() - n_unclassified;
    Ok(Evaluation {
        n_trades: signed.len(),
        n_unclassified,
        n_correct,
        accuracy: (classified > 0).then(|| n_correct as f64 / classified as f64),
    })
}

/// Accuracy of the three rules on one security.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityEvaluation {
    pub security: String,
    pub quote: Evaluation,
    pub tick: Evaluation,
    pub lee_ready: Evaluation,
    /// Trades where Lee-Ready fell through to the tick test on a broken book.
    pub broken_mid: usize,
}

pub fn evaluate_security(security: &str, l1: &[L1Record]) -> Result<SecurityEvaluation> {
    let ctx = trade_contexts(l1);
    let lr = classify(&ctx, Rule::LeeReady);
    Ok(SecurityEvaluation {
        security: security.to_string(),
        quote: evaluate(&classify(&ctx, Rule::Quote))?,
        tick: evaluate(&classify(&ctx, Rule::Tick))?,
        lee_ready: evaluate(&lr)?,
        broken_mid: lr.iter().filter(|s| s.broken_mid).count(),
    })
}

fn pct(e: &Evaluation) -> String {
    e.accuracy
        .map(|a| format!("{:.2}%", 100.0 * a))
        .unwrap_or_else(|| "NaN".to_string())
}

/// Accuracy table, one row per security, percentages of correct
/// classifications over classifiable trades.
pub fn accuracy_table_csv(rows: &[SecurityEvaluation], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("Security,QuoteRule,TickRule,LeeReadyRule\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.security,
            pct(&r.quote),
            pct(&r.tick),
            pct(&r.lee_ready)
        );
    }
    out
}

/// Per-rule counts behind the accuracy table.
pub fn detail_csv(rows: &[SecurityEvaluation], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("Security,Rule,Trades,Unclassified,Correct,Accuracy,BrokenMidFallthrough\n");
    for r in rows {
        for (name, e, broken) in [
            ("quote", &r.quote, 0),
            ("tick", &r.tick, 0),
            ("lee_ready", &r.lee_ready, r.broken_mid),
        ] {
            let acc = e.accuracy.map(|a| a.to_string()).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(
                out,
                "{},{name},{},{},{},{acc},{broken}",
                r.security, e.n_trades, e.n_unclassified, e.n_correct
            );
        }
    }
    out
}

/// Writes Lee-Ready signs onto the trade rows of an L1 stream (used where
/// the source carries no signs).
pub fn sign_stream(l1: &mut [L1Record], rule: Rule) -> usize {
    let ctx = trade_contexts(l1);
    let signed = classify(&ctx, rule);
    let mut it = signed.iter();
    let mut unclassified = 0;
    for r in l1.iter_mut() {
        if r.event_type == EventType::Trade && r.trade.is_some() && r.trade_vol.is_some() {
            let s = it.next().expect("one signed trade per trade row");
            r.trade_sign = s.inferred_sign;
            if s.inferred_sign.is_none() {
                unclassified += 1;
            }
        }
    }
    unclassified
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: u32) -> LocalTime {
        LocalTime::from_ymd_hms(2020, 3, 10, 9, 0, s).unwrap()
    }

    fn ctx(s: u32, price: f64, mid: Option<f64>, truth: Option<Sign>) -> TradeContext {
        TradeContext {
            timestamp: t(s),
            price,
            volume: 1.0,
            true_sign: truth,
            mid_before: mid,
        }
    }

    fn signs(trades: &[TradeContext], rule: Rule) -> Vec<Option<Sign>> {
        classify(trades, rule).iter().map(|s| s.inferred_sign).collect()
    }

    #[test]
    fn above_mid_is_buy_under_all_rules() {
        let tr = [ctx(0, 100.0, Some(100.0), None), ctx(1, 101.0, Some(100.5), None)];
        for rule in Rule::ALL {
            assert_eq!(signs(&tr, rule)[1], Some(1), "{rule:?}");
        }
    }

    #[test]
    fn two_trade_branches() {
        // First at the mid, second at the same price above a lower mid.
        let tr = [ctx(0, 100.0, Some(100.0), None), ctx(1, 100.0, Some(99.0), None)];
        assert_eq!(signs(&tr, Rule::Tick), vec![None, None]);
        assert_eq!(signs(&tr, Rule::Quote), vec![None, Some(1)]);
        assert_eq!(signs(&tr, Rule::LeeReady), vec![None, Some(1)]);
    }

    #[test]
    fn lee_ready_step_two_and_three() {
        let tr = [
            ctx(0, 99.0, Some(100.0), None),
            ctx(1, 100.0, Some(100.0), None),
            ctx(2, 100.0, Some(100.0), None),
            ctx(3, 98.0, Some(98.0), None),
        ];
        assert_eq!(signs(&tr, Rule::LeeReady), vec![Some(-1), Some(1), Some(1), Some(-1)]);
    }

    #[test]
    fn tick_rule_resets_each_day() {
        let next_day = LocalTime::from_ymd_hms(2020, 3, 11, 9, 0, 0).unwrap();
        let tr = [
            ctx(0, 100.0, None, None),
            ctx(1, 101.0, None, None),
            TradeContext {
                timestamp: next_day,
                ..ctx(0, 102.0, None, None)
            },
        ];
        assert_eq!(signs(&tr, Rule::Tick), vec![None, Some(1), None]);
    }

    #[test]
    fn broken_mid_falls_through() {
        let tr = [ctx(0, 100.0, Some(100.0), None), ctx(1, 101.0, None, None)];
        let s = classify(&tr, Rule::LeeReady);
        assert_eq!(s[1].inferred_sign, Some(1));
        assert!(s[1].broken_mid);
        assert_eq!(signs(&tr, Rule::Quote)[1], None);
    }

    #[test]
    fn evaluation_arithmetic() {
        let mut tr = Vec::new();
        for i in 0..100 {
            let truth = if i == 0 { -1 } else { 1 };
            tr.push(SignedTrade {
                timestamp: t(0),
                price: 1.0,
                volume: 1.0,
                inferred_sign: Some(1),
                true_sign: Some(truth),
                broken_mid: false,
            });
        }
        tr.push(SignedTrade {
            inferred_sign: None,
            ..tr[1]
        });
        let e = evaluate(&tr).unwrap();
        assert_eq!((e.n_trades, e.n_unclassified, e.n_correct), (101, 1, 99));
        assert!((e.accuracy.unwrap() - 0.99).abs() < 1e-15);
        tr[3].true_sign = None;
        assert!(matches!(evaluate(&tr), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn contexts_use_pre_trade_mid() {
        let l1 = vec![
            L1Record::bid(t(0), Some((99.0, 5.0))),
            L1Record::ask(t(0), Some((101.0, 5.0))),
            L1Record::trade(t(1), 101.0, 5.0, Some(1)),
            L1Record::ask(t(1), Some((103.0, 5.0))),
            L1Record::trade(t(2), 103.0, 1.0, Some(1)),
        ];
        let c = trade_contexts(&l1);
        assert_eq!(c[0].mid_before, Some(100.0));
        assert_eq!(c[1].mid_before, Some(101.0));
        let ev = evaluate_security("X", &l1).unwrap();
        assert_eq!(ev.quote.accuracy, Some(1.0));
        let csv = accuracy_table_csv(&[ev], None);
        assert_eq!(csv, "Security,QuoteRule,TickRule,LeeReadyRule\nX,100.00%,100.00%,100.00%\n");
    }

    #[test]
    fn sign_stream_fills_rows() {
        let mut l1 = vec![
            L1Record::bid(t(0), Some((99.0, 5.0))),
            L1Record::ask(t(0), Some((101.0, 5.0))),
            L1Record::trade(t(1), 99.0, 5.0, None),
            L1Record::trade(t(2), 100.0, 1.0, None),
        ];
        let un = sign_stream(&mut l1, Rule::LeeReady);
        assert_eq!(l1[2].trade_sign, Some(-1));
        assert_eq!(l1[3].trade_sign, Some(1));
        assert_eq!(un, 0);
    }
}
