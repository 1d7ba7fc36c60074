//! Top-of-book (L1) trade-and-quote records and their CSV form.

use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::LocalTime;

pub const L1_HEADER: &str = "TimeStamp,EventType,Bid,BidVol,Ask,AskVol,Trade,TradeVol,TradeSign,MicroPrice,MidPrice,InterArrivals";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    Bid,
    Ask,
    Trade,
}

impl EventType {
    pub fn is_quote(self) -> bool {
        self != EventType::Trade
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventType::Bid => "BID",
            EventType::Ask => "ASK",
            EventType::Trade => "TRADE",
        })
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "BID" => Ok(EventType::Bid),
            "ASK" => Ok(EventType::Ask),
            "TRADE" => Ok(EventType::Trade),
            other => Err(Error::InvalidInput(format!("unknown event type `{other}`"))),
        }
    }
}

/// Trade sign: +1 buyer-initiated, -1 seller-initiated.
pub type Sign = i8;

/// One row of the L1 stream. Quote rows carry only the side that changed;
/// `None` renders as `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Record {
    pub timestamp: LocalTime,
    pub event_type: EventType,
    pub bid: Option<f64>,
    pub bid_vol: Option<f64>,
    pub ask: Option<f64>,
    pub ask_vol: Option<f64>,
    pub trade: Option<f64>,
    pub trade_vol: Option<f64>,
    pub trade_sign: Option<Sign>,
    pub microprice: Option<f64>,
    pub midprice: Option<f64>,
    /// Seconds since the previous trade of the same day.
    pub interarrival: Option<f64>,
}

impl L1Record {
    fn empty(timestamp: LocalTime, event_type: EventType) -> Self {
        Self {
            timestamp,
            event_type,
            bid: None,
            bid_vol: None,
            ask: None,
            ask_vol: None,
            trade: None,
            trade_vol: None,
            trade_sign: None,
            microprice: None,
            midprice: None,
            interarrival: None,
        }
    }

    /// Best-bid update; `None` means the bid side is empty.
    pub fn bid(timestamp: LocalTime, best: Option<(f64, f64)>) -> Self {
        Self {
            bid: best.map(|b| b.0),
            bid_vol: best.map(|b| b.1),
            ..Self::empty(timestamp, EventType::Bid)
        }
    }

    /// Best-ask update; `None` means the ask side is empty.
    pub fn ask(timestamp: LocalTime, best: Option<(f64, f64)>) -> Self {
        Self {
            ask: best.map(|a| a.0),
            ask_vol: best.map(|a| a.1),
            ..Self::empty(timestamp, EventType::Ask)
        }
    }

    pub fn trade(timestamp: LocalTime, price: f64, volume: f64, sign: Option<Sign>) -> Self {
        Self {
            trade: Some(price),
            trade_vol: Some(volume),
            trade_sign: sign,
            ..Self::empty(timestamp, EventType::Trade)
        }
    }

    pub fn write_csv_row(&self, out: &mut String) {
        fn num(out: &mut String, v: Option<f64>) {
            out.push(',');
            match v {
                Some(v) => {
                    let _ = write!(out, "{v}");
                }
                None => out.push_str("NaN"),
            }
        }
        let _ = write!(out, "{},{}", self.timestamp, self.event_type);
        num(out, self.bid);
        num(out, self.bid_vol);
        num(out, self.ask);
        num(out, self.ask_vol);
        num(out, self.trade);
        num(out, self.trade_vol);
        match self.trade_sign {
            Some(s) => {
                let _ = write!(out, ",{s}");
            }
            None => out.push_str(",NaN"),
        }
        num(out, self.microprice);
        num(out, self.midprice);
        num(out, self.interarrival);
        out.push('\n');
    }
}

/// Renders records as CSV, header included. `comment` becomes a leading
/// `# ...` line when given.
pub fn to_csv(records: &[L1Record], comment: Option<&str>) -> String {
    let mut out = String::with_capacity(64 + records.len() * 96);
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(L1_HEADER);
    out.push('\n');
    for r in records {
        r.write_csv_row(&mut out);
    }
    out
}

pub fn write_csv<W: Write>(mut w: W, records: &[L1Record], comment: Option<&str>) -> Result<()> {
    w.write_all(to_csv(records, comment).as_bytes())?;
    Ok(())
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, String> {
    let f = field.trim();
    if f.is_empty() || f == "NaN" || f == "-" {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(|v| if v.is_nan() { None } else { Some(v) })
        .map_err(|_| format!("`{f}` is not a number"))
}

/// Reads an L1 CSV. Lines starting with `#` are skipped.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<L1Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected: Vec<&str> = L1_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidInput(format!(
            "unexpected L1 header `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let err = |r: String| Error::parse(line, r);
        let get = |k: usize| row.get(k).unwrap_or("");
        let sign = match parse_opt(get(8)).map_err(err)? {
            None => None,
            Some(s) if s == 1.0 => Some(1),
            Some(s) if s == -1.0 => Some(-1),
            Some(s) => return Err(err(format!("trade sign {s} not in {{+1,-1}}"))),
        };
        out.push(L1Record {
            timestamp: get(0).parse().map_err(|e: Error| err(e.to_string()))?,
            event_type: get(1).parse().map_err(|e: Error| err(e.to_string()))?,
            bid: parse_opt(get(2)).map_err(err)?,
            bid_vol: parse_opt(get(3)).map_err(err)?,
            ask: parse_opt(get(4)).map_err(err)?,
            ask_vol: parse_opt(get(5)).map_err(err)?,
            trade: parse_opt(get(6)).map_err(err)?,
            trade_vol: parse_opt(get(7)).map_err(err)?,
            trade_sign: sign,
            microprice: parse_opt(get(9)).map_err(err)?,
            midprice: parse_opt(get(10)).map_err(err)?,
            interarrival: parse_opt(get(11)).map_err(err)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_nan_rendering() {
        let t = LocalTime::from_ymd_hms(2019, 1, 2, 9, 0, 35).unwrap();
        let mut q = L1Record::ask(t, Some((261_475.48, 2869.0)));
        q.microprice = Some(266_707.68);
        q.midprice = Some(270_367.16);
        let recs = vec![
            L1Record::bid(t, None),
            q,
            L1Record::trade(t, 25_074.0, 191.0, Some(1)),
        ];
        let text = to_csv(&recs, Some("run abc"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# run abc");
        assert_eq!(lines[1], L1_HEADER);
        assert_eq!(
            lines[2],
            "2019-01-02T09:00:35.000000000,BID,NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN"
        );
        assert_eq!(
            lines[4],
            "2019-01-02T09:00:35.000000000,TRADE,NaN,NaN,NaN,NaN,25074,191,1,NaN,NaN,NaN"
        );
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }
}
