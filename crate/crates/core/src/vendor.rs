//! Vendor-style top-of-book CSV (`times,type,value,size,condcode`).
//!
//! One file holds one security. Rows are quote updates (`BID`/`ASK`) or
//! trades carrying an exchange condition code. Ingestion keeps the
//! continuous-trading window and the retained condition codes, then derives
//! mid/micro prices exactly as for feed-built streams.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1::{EventType, L1Record};
use crate::price::{PriceUnit, ZAC_PER_RAND};
use crate::taq::{annotate, midprice, MicroMode};
use crate::time::{LocalTime, Session, NANOS_PER_SEC};

pub const VENDOR_HEADER: [&str; 5] = ["times", "type", "value", "size", "condcode"];

/// One parsed vendor row. `condcode` is `None` for `-` or an empty field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorRow {
    pub times: LocalTime,
    pub event_type: EventType,
    pub value: f64,
    pub size: f64,
    pub condcode: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendorOptions {
    pub session: Session,
    /// Trade condition codes to retain. Empty keeps no trades.
    pub keep: Vec<String>,
    /// Unit of `value` in the file; output prices are always ZAC.
    pub unit: PriceUnit,
    /// Hours added to `times` to reach exchange local time (0 when the file
    /// is already local).
    pub utc_offset_hours: i32,
    pub mode: MicroMode,
    pub strict: bool,
}

impl Default for VendorOptions {
    fn default() -> Self {
        Self {
            session: Session::default(),
            keep: vec!["AT".to_string()],
            unit: PriceUnit::Zac,
            utc_offset_hours: 0,
            mode: MicroMode::OwnSide,
            strict: false,
        }
    }
}

/// Parses a `--condcodes-keep` value: comma separated, `-` or empty for none.
pub fn parse_keep(s: &str) -> Vec<String> {
    let s = s.trim();
    if s.is_empty() || s == "-" {
        return Vec::new();
    }
    s.split(',')
        .map(|c| c.trim().to_ascii_uppercase())
        .filter(|c| !c.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorStats {
    pub rows: usize,
    pub malformed: usize,
    pub outside_session: usize,
    pub dropped_condcode: usize,
    /// Trade rows with no condition code (dropped).
    pub missing_condcode: usize,
    /// Quote rows that carried a condition code (kept).
    pub quote_condcode: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendorIngest {
    pub records: Vec<L1Record>,
    pub stats: VendorStats,
}

fn parse_row(fields: &[&str], offset_ns: i64) -> std::result::Result<VendorRow, String> {
    if fields.len() < 4 {
        return Err(format!("expected 5 fields, got {}", fields.len()));
    }
    let times: LocalTime = fields[0].parse().map_err(|e: Error| e.to_string())?;
    let event_type: EventType = fields[1].parse().map_err(|e: Error| e.to_string())?;
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{}` is not a number", s.trim()))
    };
    let value = num(fields[2])?;
    let size = num(fields[3])?;
    let condcode = fields
        .get(4)
        .map(|c| c.trim())
        .filter(|c| !c.is_empty() && *c != "-")
        .map(str::to_string);
    Ok(VendorRow {
        times: times.plus_ns(offset_ns),
        event_type,
        value,
        size,
        condcode,
    })
}

/// Reads vendor rows in file order. Malformed rows are errors in strict mode
/// and otherwise counted in the returned tally.
pub fn read_rows<R: Read>(reader: R, opts: &VendorOptions) -> Result<(Vec<VendorRow>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().take(5).collect::<Vec<_>>() != VENDOR_HEADER {
        return Err(Error::InvalidInput(format!(
            "unexpected vendor header `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let offset_ns = opts.utc_offset_hours as i64 * 3_600 * NANOS_PER_SEC;
    let mut rows = Vec::new();
    let mut malformed = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r.iter().collect::<Vec<_>>(), offset_ns));
        match parsed {
            Ok(row) => rows.push(row),
            Err(reason) if opts.strict => return Err(Error::parse(line, reason)),
            Err(_) => malformed += 1,
        }
    }
    Ok((rows, malformed))
}

/// Filters rows to the session and retained trade codes and builds the L1
/// stream. A quote row with non-positive value or size marks its side empty.
pub fn ingest_rows(rows: &[VendorRow], opts: &VendorOptions) -> VendorIngest {
    let scale = match opts.unit {
        PriceUnit::Zac => 1.0,
        PriceUnit::Rand => ZAC_PER_RAND,
    };
    let mut stats = VendorStats {
        rows: rows.len(),
        ..VendorStats::default()
    };
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        if !opts.session.contains(row.times) {
            stats.outside_session += 1;
            continue;
        }
        let best = (row.value > 0.0 && row.size > 0.0).then_some((row.value * scale, row.size));
        match row.event_type {
            EventType::Trade => {
                let Some(code) = &row.condcode else {
                    stats.missing_condcode += 1;
                    continue;
                };
                if !opts.keep.iter().any(|k| k.eq_ignore_ascii_case(code)) {
                    stats.dropped_condcode += 1;
                    continue;
                }
                records.push(L1Record::trade(row.times, row.value * scale, row.size, None));
            }
            side => {
                if row.condcode.is_some() {
                    stats.quote_condcode += 1;
                }
                records.push(if side == EventType::Bid {
                    L1Record::bid(row.times, best)
                } else {
                    L1Record::ask(row.times, best)
                });
            }
        }
    }
    annotate(&mut records, opts.mode);
    stats.emitted = records.len();
    VendorIngest { records, stats }
}

pub fn ingest_vendor<R: Read>(reader: R, opts: &VendorOptions) -> Result<VendorIngest> {
    let (rows, malformed) = read_rows(reader, opts)?;
    let mut out = ingest_rows(&rows, opts);
    out.stats.malformed = malformed;
    out.stats.rows += malformed;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequencingReport {
    pub trades: usize,
    pub followed: usize,
    pub fraction: f64,
}

/// Share of trades whose next row is a quote update on the side the trade
/// hit. The hit side is the ask when the trade price is at or above the
/// prevailing mid and the bid below it; with a one-sided book the present
/// side is taken. The next row must fall on the same day. `None` when there
/// are no trades.
pub fn verify_trade_quote_sequencing(records: &[L1Record]) -> Option<SequencingReport> {
    let mut bid: Option<f64> = None;
    let mut ask: Option<f64> = None;
    let mut day = None;
    let (mut trades, mut followed) = (0usize, 0usize);
    for (i, r) in records.iter().enumerate() {
        if day != Some(r.timestamp.day()) {
            day = Some(r.timestamp.day());
            bid = None;
            ask = None;
        }
        match r.event_type {
            EventType::Bid => bid = r.bid,
            EventType::Ask => ask = r.ask,
            EventType::Trade => {
                trades += 1;
                let Some(price) = r.trade else { continue };
                let hit = match (bid, ask) {
                    (Some(b), Some(a)) if price >= midprice(b, a) => Some(EventType::Ask),
                    (Some(_), Some(_)) => Some(EventType::Bid),
                    (Some(_), None) => Some(EventType::Bid),
                    (None, Some(_)) => Some(EventType::Ask),
                    (None, None) => None,
                };
                let ok = records.get(i + 1).is_some_and(|n| {
                    n.timestamp.day() == r.timestamp.day()
                        && n.event_type.is_quote()
                        && hit.is_none_or(|h| h == n.event_type)
                });
                if ok {
                    followed += 1;
                }
            }
        }
    }
    (trades > 0).then(|| SequencingReport {
        trades,
        followed,
        fraction: followed as f64 / trades as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SNIPPET: &str = "times,type,value,size,condcode
2019-01-02T07:00:00.0,BID,279278.25,400.0,-
2019-01-02T08:30:00.0,TRADE,0.0,0.0,IP
2019-01-02T09:00:00.0,BID,279258.84,1195.0,-
2019-01-02T09:00:04.0,BID,279258.84,1196.0,-
2019-01-02T09:00:35.0,ASK,261475.48,2869.0,-
2019-01-02T09:00:35.0,BID,279258.84,1193.0,-
2019-01-02T09:01:00.0,TRADE,270000.0,3.0,AT
2019-01-02T09:01:00.0,ASK,261475.48,2866.0,-
2019-01-02T12:00:00.0,TRADE,270000.0,50.0,LC
2019-01-02T16:50:00.0,BID,279000.0,10.0,-
2019-01-02T17:05:00.0,TRADE,270100.0,10.0,LT
";

    #[test]
    fn snippet_filtering() {
        let out = ingest_vendor(SNIPPET.as_bytes(), &VendorOptions::default()).unwrap();
        let r = &out.records;
        assert_eq!(r.len(), 6);
        assert_eq!(r[0].event_type, EventType::Bid);
        assert_eq!(r[0].bid, Some(279_258.84));
        assert_eq!(r[0].bid_vol, Some(1195.0));
        assert_eq!(r[0].timestamp, "2019-01-02T09:00:00".parse().unwrap());
        assert!(r.iter().all(|x| Session::default().contains(x.timestamp)));
        assert!(r.iter().all(|x| x.trade_sign.is_none()));
        assert!((r[2].microprice.unwrap() - 266_707.68).abs() < 0.005);
        assert_eq!(out.stats.outside_session, 4);
        assert_eq!(out.stats.dropped_condcode, 1);
    }

    #[test]
    fn keep_set_parsing() {
        assert_eq!(parse_keep("AT"), vec!["AT"]);
        assert_eq!(parse_keep("at, lt"), vec!["AT", "LT"]);
        assert!(parse_keep("-").is_empty());
        assert!(parse_keep("").is_empty());
        let opts = VendorOptions {
            keep: vec![],
            ..VendorOptions::default()
        };
        let out = ingest_vendor(SNIPPET.as_bytes(), &opts).unwrap();
        assert!(out.records.iter().all(|r| r.event_type.is_quote()));
    }

    #[test]
    fn malformed_rows() {
        let text = "times,type,value,size,condcode
2019-01-02T09:00:00.0,BID,100,10,-
garbage,BID,1,1,-
2019-01-02T09:00:01.0,QUOTE,1,1,-
";
        let out = ingest_vendor(text.as_bytes(), &VendorOptions::default()).unwrap();
        assert_eq!(out.stats.malformed, 2);
        assert_eq!(out.records.len(), 1);
        let strict = VendorOptions {
            strict: true,
            ..VendorOptions::default()
        };
        assert!(matches!(
            ingest_vendor(text.as_bytes(), &strict),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn offset_and_unit() {
        let text = "times,type,value,size,condcode\n2019-01-02T07:00:00.0,BID,2792.5884,10,-\n";
        let opts = VendorOptions {
            utc_offset_hours: 2,
            unit: PriceUnit::Rand,
            ..VendorOptions::default()
        };
        let out = ingest_vendor(text.as_bytes(), &opts).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!((out.records[0].bid.unwrap() - 279_258.84).abs() < 1e-9);
    }

    fn t(s: u32) -> LocalTime {
        LocalTime::from_ymd_hms(2019, 1, 2, 9, 0, s).unwrap()
    }

    #[test]
    fn sequencing_fractions() {
        let mut recs = vec![
            L1Record::bid(t(0), Some((99.0, 10.0))),
            L1Record::ask(t(0), Some((101.0, 10.0))),
        ];
        for k in 0..10 {
            recs.push(L1Record::trade(t(1 + k), 101.0, 1.0, None));
            if k == 4 {
                recs.push(L1Record::bid(t(1 + k), Some((99.0, 10.0))));
            } else {
                recs.push(L1Record::ask(t(1 + k), Some((101.0, 9.0 - k as f64))));
            }
        }
        let rep = verify_trade_quote_sequencing(&recs).unwrap();
        assert_eq!(rep.trades, 10);
        assert!((rep.fraction - 0.9).abs() < 1e-12);
        assert!(verify_trade_quote_sequencing(&recs[..2]).is_none());
        assert!(verify_trade_quote_sequencing(&[]).is_none());
    }

    #[test]
    fn sell_hits_bid() {
        let recs = vec![
            L1Record::bid(t(0), Some((99.0, 10.0))),
            L1Record::ask(t(0), Some((101.0, 10.0))),
            L1Record::trade(t(1), 99.0, 1.0, None),
            L1Record::bid(t(1), Some((99.0, 9.0))),
        ];
        assert_eq!(verify_trade_quote_sequencing(&recs).unwrap().fraction, 1.0);
    }
}
