//! Decoder for the two-line market-data message records.
//!
//! Each record is a header line
//!
//! ```text
//! 1583827086179468000 (2020-03-10T07:58:06.179468) 1
//! ```
//!
//! followed by a payload line
//!
//! ```text
//! 33000 MdOrderAdd:{MdHeader:{msgType:2,length:33,seqNo:204777},OrderAdd:{securityId:24,...}}
//! ```
//!
//! The payload body is a brace-nested `key:value` structure. Heartbeats
//! (msgType 1) are dropped, msgType 2-6 become typed book/trade events,
//! 7-9 are kept as a key-value bag and anything else is `Unknown`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::price::PriceFixed;
use crate::time::{format_utc_micros, to_local_time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "BUY",
            Side::Sell => "SELL",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "BUY" => Ok(Side::Buy),
            "SELL" => Ok(Side::Sell),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    OrderAdd,
    OrderCancel,
    OrderModify,
    Trade,
    TradeBust,
    TickTable,
    SecurityDefinition,
    SecurityStatus,
    Unknown,
}

impl MessageKind {
    /// Wire envelope and body names for the known message types.
    fn wire_names(self) -> Option<(&'static str, &'static str)> {
        Some(match self {
            MessageKind::OrderAdd => ("MdOrderAdd", "OrderAdd"),
            MessageKind::OrderCancel => ("MdOrderCancel", "OrderCancel"),
            MessageKind::OrderModify => ("MdOrderModify", "OrderModify"),
            MessageKind::Trade => ("MdTrade", "Trade"),
            MessageKind::TradeBust => ("MdTradeBust", "TradeBust"),
            MessageKind::TickTable => ("MdTickTable", "TickTable"),
            MessageKind::SecurityDefinition => ("MdSecurityDefinition", "SecurityDefinition"),
            MessageKind::SecurityStatus => ("MdSecurityStatus", "SecurityStatus"),
            MessageKind::Unknown => return None,
        })
    }

    fn from_msg_type(msg_type: u8) -> Option<Self> {
        Some(match msg_type {
            2 => MessageKind::OrderAdd,
            3 => MessageKind::OrderCancel,
            4 => MessageKind::OrderModify,
            5 => MessageKind::Trade,
            6 => MessageKind::TradeBust,
            7 => MessageKind::TickTable,
            8 => MessageKind::SecurityDefinition,
            9 => MessageKind::SecurityStatus,
            _ => return None,
        })
    }

    pub fn msg_type(self) -> Option<u8> {
        Some(match self {
            MessageKind::OrderAdd => 2,
            MessageKind::OrderCancel => 3,
            MessageKind::OrderModify => 4,
            MessageKind::Trade => 5,
            MessageKind::TradeBust => 6,
            MessageKind::TickTable => 7,
            MessageKind::SecurityDefinition => 8,
            MessageKind::SecurityStatus => 9,
            MessageKind::Unknown => return None,
        })
    }

    pub fn is_admin(self) -> bool {
        matches!(
            self,
            MessageKind::TickTable | MessageKind::SecurityDefinition | MessageKind::SecurityStatus
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::OrderAdd => "OrderAdd",
            MessageKind::OrderCancel => "OrderCancel",
            MessageKind::OrderModify => "OrderModify",
            MessageKind::Trade => "Trade",
            MessageKind::TradeBust => "TradeBust",
            MessageKind::TickTable => "TickTable",
            MessageKind::SecurityDefinition => "SecurityDefinition",
            MessageKind::SecurityStatus => "SecurityStatus",
            MessageKind::Unknown => "Unknown",
        }
    }
}

impl FromStr for MessageKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "OrderAdd" => MessageKind::OrderAdd,
            "OrderCancel" => MessageKind::OrderCancel,
            "OrderModify" => MessageKind::OrderModify,
            "Trade" => MessageKind::Trade,
            "TradeBust" => MessageKind::TradeBust,
            "TickTable" => MessageKind::TickTable,
            "SecurityDefinition" => MessageKind::SecurityDefinition,
            "SecurityStatus" => MessageKind::SecurityStatus,
            "Unknown" => MessageKind::Unknown,
            _ => return Err(()),
        })
    }
}

/// Header fields of a record pair plus the untouched payload text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub recv_ns: u64,
    pub human_ts: String,
    pub feed_id: u32,
    /// Integer prefixing the payload line. Retained, meaning unknown.
    pub lead_int: i64,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketMessage {
    pub kind: MessageKind,
    pub msg_type: u8,
    /// `MdHeader.length`, kept as received and not validated.
    pub length: u32,
    pub seq_no: u64,
    pub security_id: u32,
    pub order_ref: Option<u64>,
    pub trade_ref: Option<u64>,
    pub price: Option<PriceFixed>,
    pub quantity: Option<u64>,
    pub side: Option<Side>,
    pub event_ns: u64,
    /// Envelope name for admin and unknown messages.
    pub tag: Option<String>,
    /// Flattened body fields for admin and unknown messages.
    pub meta: Vec<(String, String)>,
}

impl MarketMessage {
    fn bare(kind: MessageKind, msg_type: u8, seq_no: u64, security_id: u32, event_ns: u64) -> Self {
        Self {
            kind,
            msg_type,
            length: 0,
            seq_no,
            security_id,
            order_ref: None,
            trade_ref: None,
            price: None,
            quantity: None,
            side: None,
            event_ns,
            tag: None,
            meta: Vec::new(),
        }
    }

    pub fn order_add(
        seq_no: u64,
        security_id: u32,
        side: Side,
        quantity: u64,
        price: PriceFixed,
        order_ref: u64,
        event_ns: u64,
    ) -> Self {
        Self {
            side: Some(side),
            quantity: Some(quantity),
            price: Some(price),
            order_ref: Some(order_ref),
            length: 33,
            ..Self::bare(MessageKind::OrderAdd, 2, seq_no, security_id, event_ns)
        }
    }

    pub fn order_cancel(seq_no: u64, security_id: u32, order_ref: u64, event_ns: u64) -> Self {
        Self {
            order_ref: Some(order_ref),
            length: 20,
            ..Self::bare(MessageKind::OrderCancel, 3, seq_no, security_id, event_ns)
        }
    }

    pub fn order_modify(
        seq_no: u64,
        security_id: u32,
        quantity: u64,
        price: PriceFixed,
        order_ref: u64,
        event_ns: u64,
    ) -> Self {
        Self {
            quantity: Some(quantity),
            price: Some(price),
            order_ref: Some(order_ref),
            length: 32,
            ..Self::bare(MessageKind::OrderModify, 4, seq_no, security_id, event_ns)
        }
    }

    pub fn trade(
        seq_no: u64,
        security_id: u32,
        order_ref: u64,
        trade_ref: u64,
        price: PriceFixed,
        quantity: u64,
        event_ns: u64,
    ) -> Self {
        Self {
            order_ref: Some(order_ref),
            trade_ref: Some(trade_ref),
            price: Some(price),
            quantity: Some(quantity),
            length: 40,
            ..Self::bare(MessageKind::Trade, 5, seq_no, security_id, event_ns)
        }
    }

    pub fn trade_bust(
        seq_no: u64,
        security_id: u32,
        trade_ref: u64,
        price: PriceFixed,
        quantity: u64,
        event_ns: u64,
    ) -> Self {
        Self {
            trade_ref: Some(trade_ref),
            price: Some(price),
            quantity: Some(quantity),
            length: 32,
            ..Self::bare(MessageKind::TradeBust, 6, seq_no, security_id, event_ns)
        }
    }

    /// Serializes the payload body, without the leading integer.
    pub fn to_payload(&self) -> String {
        let mut s = String::with_capacity(160);
        let (envelope, body) = match (self.kind.wire_names(), &self.tag) {
            (_, Some(tag)) if self.kind == MessageKind::Unknown || self.kind.is_admin() => {
                (tag.as_str(), tag.strip_prefix("Md").unwrap_or(tag))
            }
            (Some(names), _) => names,
            (None, _) => ("MdUnknown", "Unknown"),
        };
        let _ = write!(
            s,
            "{envelope}:{{MdHeader:{{msgType:{},length:{},seqNo:{}}},{body}:{{",
            self.msg_type, self.length, self.seq_no
        );
        let q = self.quantity.unwrap_or(0);
        let p = self.price.map(|p| p.raw()).unwrap_or(0);
        let o = self.order_ref.unwrap_or(0);
        let t = self.trade_ref.unwrap_or(0);
        let sid = self.security_id;
        let ts = self.event_ns;
        let _ = match self.kind {
            MessageKind::OrderAdd => write!(
                s,
                "securityId:{sid},side:{},quantity:{q},limitPrice:{p},orderId:{o},timestamp:{ts}",
                self.side.map(Side::as_str).unwrap_or("BUY")
            ),
            MessageKind::OrderCancel => write!(s, "securityId:{sid},orderId:{o},timestamp:{ts}"),
            MessageKind::OrderModify => write!(
                s,
                "securityId:{sid},quantity:{q},price:{p},orderId:{o},timestamp:{ts}"
            ),
            MessageKind::Trade => write!(
                s,
                "securityId:{sid},orderId:{o},tradeId:{t},price:{p},quantity:{q},timestamp:{ts}"
            ),
            MessageKind::TradeBust => write!(
                s,
                "securityId:{sid},tradeId:{t},price:{p},quantity:{q},timestamp:{ts}"
            ),
            _ => {
                let body = self
                    .meta
                    .iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(",");
                s.push_str(&body);
                Ok(())
            }
        };
        s.push_str("}}");
        s
    }
}

/// Appends the two wire lines for `msg` to `out`.
pub fn write_wire(out: &mut String, recv_ns: u64, feed_id: u32, lead_int: i64, msg: &MarketMessage) {
    let _ = writeln!(out, "{recv_ns} ({}) {feed_id}", format_utc_micros(recv_ns));
    let _ = writeln!(out, "{lead_int} {}", msg.to_payload());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Abort on the first malformed record pair.
    Strict,
    /// Skip and count malformed record pairs.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedStats {
    pub pairs: u64,
    pub parsed: u64,
    pub heartbeats: u64,
    pub unknown: u64,
    pub errors: u64,
}

#[derive(Debug, Default)]
pub struct ParsedFeed {
    pub records: Vec<(RawRecord, MarketMessage)>,
    pub stats: FeedStats,
    pub errors: Vec<Error>,
}

impl ParsedFeed {
    pub fn messages(&self) -> impl Iterator<Item = &MarketMessage> {
        self.records.iter().map(|(_, m)| m)
    }

    pub fn into_messages(self) -> Vec<MarketMessage> {
        self.records.into_iter().map(|(_, m)| m).collect()
    }
}

/// Outcome of decoding one header/payload pair.
#[derive(Debug)]
pub enum Decoded {
    Message(RawRecord, MarketMessage),
    Heartbeat,
}

/// Incremental decoder; feed it record pairs in order.
#[derive(Debug)]
pub struct FeedDecoder {
    mode: ParseMode,
    pending: Option<(usize, String)>,
    out: ParsedFeed,
}

impl FeedDecoder {
    pub fn new(mode: ParseMode) -> Self {
        Self {
            mode,
            pending: None,
            out: ParsedFeed::default(),
        }
    }

    /// Accepts one physical line. Blank lines and `#` comment lines are
    /// ignored; indentation is trimmed.
    pub fn push_line(&mut self, line_no: usize, line: &str) -> Result<()> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(());
        }
        match self.pending.take() {
            None => {
                self.pending = Some((line_no, line.to_string()));
                Ok(())
            }
            Some((header_line, header)) => self.push_pair(header_line, &header, line),
        }
    }

    fn push_pair(&mut self, line_no: usize, header: &str, payload: &str) -> Result<()> {
        self.out.stats.pairs += 1;
        match decode_pair(line_no, header, payload) {
            Ok(Decoded::Heartbeat) => self.out.stats.heartbeats += 1,
            Ok(Decoded::Message(raw, msg)) => {
                if msg.kind == MessageKind::Unknown {
                    self.out.stats.unknown += 1;
                } else {
                    self.out.stats.parsed += 1;
                }
                self.out.records.push((raw, msg));
            }
            Err(e) => {
                self.out.stats.errors += 1;
                if self.mode == ParseMode::Strict {
                    return Err(e);
                }
                self.out.errors.push(e);
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<ParsedFeed> {
        if let Some((line_no, _)) = self.pending.take() {
            self.out.stats.pairs += 1;
            self.out.stats.errors += 1;
            let e = Error::parse(line_no, "header line without payload line");
            if self.mode == ParseMode::Strict {
                return Err(e);
            }
            self.out.errors.push(e);
        }
        Ok(self.out)
    }
}

/// Decodes a whole text stream of record pairs.
pub fn parse_stream(text: &str, mode: ParseMode) -> Result<ParsedFeed> {
    let mut dec = FeedDecoder::new(mode);
    for (i, line) in text.lines().enumerate() {
        dec.push_line(i + 1, line)?;
    }
    dec.finish()
}

/// Decodes record pairs from a reader.
pub fn parse_reader<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParsedFeed> {
    let mut dec = FeedDecoder::new(mode);
    for (i, line) in reader.lines().enumerate() {
        dec.push_line(i + 1, &line?)?;
    }
    dec.finish()
}

/// Decodes one header/payload pair. `line_no` is the header's line number.
pub fn decode_pair(line_no: usize, header: &str, payload: &str) -> Result<Decoded> {
    let err = |reason: &str| Error::parse(line_no, reason.to_string());

    let mut parts = header.split_whitespace();
    let recv_ns = parts
        .next()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| err("header: receive timestamp is not a non-negative integer"))?;
    let human = parts.next().ok_or_else(|| err("header: missing human timestamp"))?;
    let human_ts = human
        .strip_prefix('(')
        .and_then(|h| h.strip_suffix(')'))
        .ok_or_else(|| err("header: human timestamp not parenthesised"))?;
    let feed_id = parts
        .next()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| err("header: feed id is not an integer"))?;
    if parts.next().is_some() {
        return Err(err("header: trailing fields"));
    }

    let (lead, rest) = payload
        .split_once(' ')
        .ok_or_else(|| Error::parse(line_no + 1, "payload: missing leading integer"))?;
    let lead_int = lead
        .parse::<i64>()
        .map_err(|_| Error::parse(line_no + 1, "payload: leading field is not an integer"))?;
    let rest = rest.trim();

    let (name, tree) = parse_payload(rest).map_err(|r| Error::parse(line_no + 1, r))?;
    let msg = build_message(name, &tree).map_err(|r| Error::parse(line_no + 1, r))?;

    let Some(msg) = msg else {
        return Ok(Decoded::Heartbeat);
    };
    let raw = RawRecord {
        recv_ns,
        human_ts: human_ts.to_string(),
        feed_id,
        lead_int,
        payload: rest.to_string(),
    };
    Ok(Decoded::Message(raw, msg))
}

#[derive(Debug)]
enum Node<'a> {
    Scalar(&'a str),
    Object(Vec<(&'a str, Node<'a>)>),
}

impl<'a> Node<'a> {
    fn get(&self, key: &str) -> Option<&Node<'a>> {
        match self {
            Node::Object(entries) => entries.iter().find(|(k, _)| *k == key).map(|(_, v)| v),
            Node::Scalar(_) => None,
        }
    }

    fn scalar(&self) -> Option<&'a str> {
        match self {
            Node::Scalar(s) => Some(s),
            Node::Object(_) => None,
        }
    }

    fn flatten(&self, prefix: &str, out: &mut Vec<(String, String)>) {
        if let Node::Object(entries) = self {
            for (k, v) in entries {
                let key = if prefix.is_empty() {
                    (*k).to_string()
                } else {
                    format!("{prefix}.{k}")
                };
                match v {
                    Node::Scalar(s) => out.push((key, (*s).to_string())),
                    Node::Object(_) => v.flatten(&key, out),
                }
            }
        }
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> std::result::Result<(), String> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected `{}` at offset {}", b as char, self.pos))
        }
    }

    fn take_until(&mut self, stops: &[u8]) -> &'a str {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if stops.contains(&b) {
                break;
            }
            self.pos += 1;
        }
        self.src[start..self.pos].trim()
    }

    fn object(&mut self, depth: usize) -> std::result::Result<Node<'a>, String> {
        if depth > 16 {
            return Err("nesting too deep".into());
        }
        self.expect(b'{')?;
        let mut entries = Vec::new();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Node::Object(entries));
        }
        loop {
            let key = self.take_until(b":{},");
            if key.is_empty() {
                return Err(format!("empty key at offset {}", self.pos));
            }
            self.expect(b':')?;
            let value = if self.peek() == Some(b'{') {
                self.object(depth + 1)?
            } else {
                let v = self.take_until(b"{},");
                if v.is_empty() {
                    return Err(format!("empty value for `{key}`"));
                }
                Node::Scalar(v)
            };
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Node::Object(entries));
                }
                _ => return Err("unterminated object, missing `}`".into()),
            }
        }
    }
}

fn parse_payload(text: &str) -> std::result::Result<(&str, Node<'_>), String> {
    let (name, _) = text
        .split_once(':')
        .ok_or_else(|| "payload: missing `Name:{`".to_string())?;
    let name = name.trim();
    if name.is_empty() || name.contains(|c: char| !c.is_ascii_alphanumeric() && c != '_') {
        return Err(format!("payload: bad message name `{name}`"));
    }
    let mut cur = Cursor {
        src: text,
        pos: text.find(':').unwrap() + 1,
    };
    let tree = cur.object(0)?;
    if cur.pos != text.len() {
        return Err(format!("payload: trailing characters at offset {}", cur.pos));
    }
    Ok((name, tree))
}

fn int_field<T: FromStr>(body: &Node<'_>, key: &str) -> std::result::Result<T, String> {
    let raw = body
        .get(key)
        .and_then(Node::scalar)
        .ok_or_else(|| format!("missing field `{key}`"))?;
    raw.parse::<T>()
        .map_err(|_| format!("field `{key}` is not an integer: `{raw}`"))
}

fn opt_int_field<T: FromStr>(body: &Node<'_>, key: &str) -> std::result::Result<Option<T>, String> {
    match body.get(key) {
        None => Ok(None),
        Some(_) => int_field(body, key).map(Some),
    }
}

/// `Ok(None)` means a heartbeat.
fn build_message(name: &str, tree: &Node<'_>) -> std::result::Result<Option<MarketMessage>, String> {
    let Node::Object(entries) = tree else {
        unreachable!("parse_payload returns an object");
    };
    let header = tree
        .get("MdHeader")
        .ok_or_else(|| "missing MdHeader".to_string())?;
    let msg_type: u8 = int_field(header, "msgType")?;
    if !(1..=15).contains(&msg_type) {
        return Err(format!("msgType {msg_type} outside 1..=15"));
    }
    if msg_type == 1 {
        return Ok(None);
    }
    let length: u32 = opt_int_field(header, "length")?.unwrap_or(0);
    let seq_no: u64 = int_field(header, "seqNo")?;

    let body = entries
        .iter()
        .find(|(k, _)| *k != "MdHeader")
        .map(|(k, v)| (*k, v));

    let kind = MessageKind::from_msg_type(msg_type)
        .filter(|k| k.wire_names().map(|(env, _)| env) == Some(name))
        .unwrap_or(MessageKind::Unknown);

    let mut msg = MarketMessage::bare(kind, msg_type, seq_no, 0, 0);
    msg.length = length;

    if kind == MessageKind::Unknown || kind.is_admin() {
        msg.tag = Some(name.to_string());
        if let Some((_, node)) = body {
            node.flatten("", &mut msg.meta);
            msg.security_id = opt_int_field(node, "securityId")?.unwrap_or(0);
            msg.event_ns = opt_int_field(node, "timestamp")?.unwrap_or(0);
        }
        return Ok(Some(msg));
    }

    let (body_name, body) = body.ok_or_else(|| "missing message body".to_string())?;
    let expected_body = kind.wire_names().map(|(_, b)| b).unwrap_or_default();
    if body_name != expected_body {
        return Err(format!("body `{body_name}` does not match `{name}`"));
    }
    msg.security_id = int_field(body, "securityId")?;
    msg.event_ns = int_field(body, "timestamp")?;
    if kind != MessageKind::TradeBust {
        msg.order_ref = Some(int_field(body, "orderId")?);
    }

    match kind {
        MessageKind::OrderAdd => {
            let side = body
                .get("side")
                .and_then(Node::scalar)
                .ok_or_else(|| "missing field `side`".to_string())?;
            msg.side = Some(side.parse().map_err(|_| format!("bad side `{side}`"))?);
            msg.quantity = Some(int_field(body, "quantity")?);
            msg.price = Some(PriceFixed(int_field(body, "limitPrice")?));
        }
        MessageKind::OrderCancel => {}
        MessageKind::OrderModify => {
            msg.quantity = Some(int_field(body, "quantity")?);
            msg.price = Some(PriceFixed(int_field(body, "price")?));
        }
        MessageKind::Trade | MessageKind::TradeBust => {
            msg.trade_ref = Some(int_field(body, "tradeId")?);
            msg.quantity = Some(int_field(body, "quantity")?);
            msg.price = Some(PriceFixed(int_field(body, "price")?));
        }
        _ => unreachable!(),
    }
    Ok(Some(msg))
}

/// Per-security message sequences plus the market-wide metadata channel.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Partitioned {
    pub by_security: BTreeMap<u32, Vec<MarketMessage>>,
    pub metadata: Vec<MarketMessage>,
}

/// Splits a feed-ordered message sequence by security, preserving order.
/// Tick-table, security-definition and security-status messages go to the
/// metadata channel.
pub fn partition_by_security<I>(messages: I) -> Partitioned
where
    I: IntoIterator<Item = MarketMessage>,
{
    let mut out = Partitioned::default();
    for msg in messages {
        if msg.kind.is_admin() {
            out.metadata.push(msg);
        } else {
            out.by_security.entry(msg.security_id).or_default().push(msg);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tabular message dump

pub const DUMP_HEADER: &str = "LocalTime,RecvNs,HumanTs,FeedId,LeadInt,Kind,MsgType,Length,SeqNo,SecurityId,OrderRef,TradeRef,PriceRaw,Quantity,Side,EventNs,Tag,Meta";

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One line of the message dump (no trailing newline).
pub fn dump_line(raw: &RawRecord, msg: &MarketMessage) -> String {
    let meta = msg
        .meta
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        to_local_time(msg.event_ns),
        raw.recv_ns,
        raw.human_ts,
        raw.feed_id,
        raw.lead_int,
        msg.kind.as_str(),
        msg.msg_type,
        msg.length,
        msg.seq_no,
        msg.security_id,
        opt(msg.order_ref),
        opt(msg.trade_ref),
        opt(msg.price.map(|p| p.raw())),
        opt(msg.quantity),
        opt(msg.side),
        msg.event_ns,
        msg.tag.as_deref().unwrap_or(""),
        meta
    )
}

/// Parses one dump line back into the record header and message.
pub fn parse_dump_line(line_no: usize, line: &str) -> Result<(RawRecord, MarketMessage)> {
    let err = |r: String| Error::parse(line_no, r);
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 18 {
        return Err(err(format!("expected 18 columns, found {}", cols.len())));
    }
    fn num<T: FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("column {name}: `{s}` is not an integer"))
    }
    fn opt_num<T: FromStr>(s: &str, name: &str) -> std::result::Result<Option<T>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, name).map(Some)
        }
    }
    let kind: MessageKind = cols[5]
        .parse()
        .map_err(|_| err(format!("unknown kind `{}`", cols[5])))?;
    let side = if cols[14].is_empty() {
        None
    } else {
        Some(
            cols[14]
                .parse::<Side>()
                .map_err(|_| err(format!("bad side `{}`", cols[14])))?,
        )
    };
    let meta = if cols[17].is_empty() {
        Vec::new()
    } else {
        cols[17]
            .split(';')
            .map(|kv| {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                (k.to_string(), v.to_string())
            })
            .collect()
    };
    let raw = RawRecord {
        recv_ns: num(cols[1], "RecvNs").map_err(err)?,
        human_ts: cols[2].to_string(),
        feed_id: num(cols[3], "FeedId").map_err(err)?,
        lead_int: num(cols[4], "LeadInt").map_err(err)?,
        payload: String::new(),
    };
    let mut msg = MarketMessage {
        kind,
        msg_type: num(cols[6], "MsgType").map_err(err)?,
        length: num(cols[7], "Length").map_err(err)?,
        seq_no: num(cols[8], "SeqNo").map_err(err)?,
        security_id: num(cols[9], "SecurityId").map_err(err)?,
        order_ref: opt_num(cols[10], "OrderRef").map_err(err)?,
        trade_ref: opt_num(cols[11], "TradeRef").map_err(err)?,
        price: opt_num(cols[12], "PriceRaw").map_err(err)?.map(PriceFixed),
        quantity: opt_num(cols[13], "Quantity").map_err(err)?,
        side,
        event_ns: num(cols[15], "EventNs").map_err(err)?,
        tag: (!cols[16].is_empty()).then(|| cols[16].to_string()),
        meta,
    };
    let mut raw = raw;
    raw.payload = msg.to_payload();
    if msg.kind != MessageKind::Unknown && !msg.kind.is_admin() {
        msg.tag = None;
    }
    Ok((raw, msg))
}

/// Reads either the wire format or the tabular dump, detected from the first
/// non-empty line.
pub fn read_messages<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParsedFeed> {
    let mut lines = reader.lines().enumerate().peekable();
    let mut first = None;
    while let Some((i, line)) = lines.next() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            first = Some((i + 1, line));
            break;
        }
    }
    let Some((first_no, first)) = first else {
        return Ok(ParsedFeed::default());
    };
    if first.trim() == DUMP_HEADER {
        let mut out = ParsedFeed::default();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() || line.trim().starts_with('#') {
                continue;
            }
            out.stats.pairs += 1;
            match parse_dump_line(i + 1, line.trim()) {
                Ok((raw, msg)) => {
                    if msg.kind == MessageKind::Unknown {
                        out.stats.unknown += 1;
                    } else {
                        out.stats.parsed += 1;
                    }
                    out.records.push((raw, msg));
                }
                Err(e) => {
                    out.stats.errors += 1;
                    if mode == ParseMode::Strict {
                        return Err(e);
                    }
                    out.errors.push(e);
                }
            }
        }
        return Ok(out);
    }
    let mut dec = FeedDecoder::new(mode);
    dec.push_line(first_no, &first)?;
    for (i, line) in lines {
        dec.push_line(i + 1, &line?)?;
    }
    dec.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SNIPPET: &str = "\
    1583827086138193000 (2020-03-10T07:58:06.138193) 1
    32000 MdOrderCancel:{MdHeader:{msgType:3,length:20,seqNo:204774},OrderCancel:{securityId:24,orderId:92564,timestamp:1583827086138161000}}
    1583827086138422000 (2020-03-10T07:58:06.138422) 1
    35000 MdOrderModify:{MdHeader:{msgType:4,length:32,seqNo:204775},OrderModify:{securityId:24,quantity:240,price:2497000000,orderId:28123,timestamp:1583827086138387000}}
    1583827086155788000 (2020-03-10T07:58:06.155788) 1
    34000 MdOrderModify:{MdHeader:{msgType:4,length:32,seqNo:204776},OrderModify:{securityId:24,quantity:240,price:2512500000,orderId:28110,timestamp:1583827086155754000}}
    1583827086179468000 (2020-03-10T07:58:06.179468) 1
    33000 MdOrderAdd:{MdHeader:{msgType:2,length:33,seqNo:204777},OrderAdd:{securityId:24,side:SELL,quantity:191,limitPrice:2507400000,orderId:92575,timestamp:1583827086179435000}}
    1583827086181382000 (2020-03-10T07:58:06.181382) 1
    39000 MdOrderCancel:{MdHeader:{msgType:3,length:20,seqNo:204778},OrderCancel:{securityId:24,orderId:92567,timestamp:1583827086181343000}}
    1583827086290870000 (2020-03-10T07:58:06.290870) 1
    46000 MdOrderAdd:{MdHeader:{msgType:2,length:33,seqNo:204779},OrderAdd:{securityId:21,side:SELL,quantity:203,limitPrice:1481700000,orderId:92576,timestamp:1583827086290824000}}
";

    #[test]
    fn decodes_order_add_from_snippet() {
        let feed = parse_stream(SNIPPET, ParseMode::Strict).unwrap();
        assert_eq!(feed.stats.pairs, 6);
        assert_eq!(feed.stats.parsed, 6);
        let (raw, add) = &feed.records[3];
        assert_eq!(raw.recv_ns, 1_583_827_086_179_468_000);
        assert_eq!(raw.human_ts, "2020-03-10T07:58:06.179468");
        assert_eq!(raw.feed_id, 1);
        assert_eq!(raw.lead_int, 33000);
        assert_eq!(add.kind, MessageKind::OrderAdd);
        assert_eq!(add.seq_no, 204_777);
        assert_eq!(add.security_id, 24);
        assert_eq!(add.side, Some(Side::Sell));
        assert_eq!(add.quantity, Some(191));
        assert_eq!(add.price, Some(PriceFixed(2_507_400_000)));
        assert_eq!(add.order_ref, Some(92_575));
        assert_eq!(add.event_ns, 1_583_827_086_179_435_000);
        assert_eq!(add.length, 33);

        let cancel = &feed.records[0].1;
        assert_eq!(cancel.kind, MessageKind::OrderCancel);
        assert_eq!(cancel.order_ref, Some(92_564));
        assert_eq!((cancel.price, cancel.quantity, cancel.side), (None, None, None));

        let modify = &feed.records[1].1;
        assert_eq!(modify.kind, MessageKind::OrderModify);
        assert_eq!(modify.side, None);
        assert_eq!(modify.price, Some(PriceFixed(2_497_000_000)));
    }

    #[test]
    fn heartbeat_is_dropped_and_counted() {
        let text = "1 (1970-01-01T00:00:00.000000) 1\n0 MdHeartbeat:{MdHeader:{msgType:1,length:0,seqNo:5}}\n";
        let feed = parse_stream(text, ParseMode::Strict).unwrap();
        assert!(feed.records.is_empty());
        assert_eq!(feed.stats.heartbeats, 1);
        assert_eq!(feed.stats.pairs, 1);
    }

    #[test]
    fn unknown_type_is_counted_not_fatal() {
        let text = format!(
            "1 (1970-01-01T00:00:00.000000) 1\n0 MdSnapshotThing:{{MdHeader:{{msgType:12,length:9,seqNo:6}},SnapshotThing:{{securityId:24,foo:bar}}}}\n{SNIPPET}"
        );
        let feed = parse_stream(&text, ParseMode::Strict).unwrap();
        assert_eq!(feed.stats.unknown, 1);
        assert_eq!(feed.stats.parsed, 6);
        let unk = &feed.records[0].1;
        assert_eq!(unk.kind, MessageKind::Unknown);
        assert_eq!(unk.msg_type, 12);
        assert_eq!(unk.security_id, 24);
        assert_eq!(unk.meta[1], ("foo".to_string(), "bar".to_string()));
    }

    #[test]
    fn malformed_pairs_strict_and_lenient() {
        let bad = "5 (x) 1\n0 MdOrderCancel:{MdHeader:{msgType:3,length:20,seqNo:1},OrderCancel:{securityId:24,orderId:abc,timestamp:7}}\n";
        let text = format!("{bad}{SNIPPET}");
        let err = parse_stream(&text, ParseMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let feed = parse_stream(&text, ParseMode::Lenient).unwrap();
        assert_eq!(feed.stats.errors, 1);
        assert_eq!(feed.stats.parsed, 6);

        let missing_brace = "5 (x) 1\n0 MdOrderCancel:{MdHeader:{msgType:3,length:20,seqNo:1},OrderCancel:{securityId:24,orderId:1,timestamp:7}\n";
        assert!(parse_stream(missing_brace, ParseMode::Strict).is_err());
        assert!(parse_stream("5 (x) 1\n", ParseMode::Strict).is_err());
        let out_of_range = "5 (x) 1\n0 MdFoo:{MdHeader:{msgType:16,length:0,seqNo:1}}\n";
        assert!(parse_stream(out_of_range, ParseMode::Strict).is_err());
    }

    #[test]
    fn admin_messages_go_to_metadata() {
        let text = format!(
            "1 (x) 1\n0 MdSecurityStatus:{{MdHeader:{{msgType:9,length:12,seqNo:3}},SecurityStatus:{{securityId:24,status:Halted}}}}\n{SNIPPET}"
        );
        let feed = parse_stream(&text, ParseMode::Strict).unwrap();
        let parts = partition_by_security(feed.into_messages());
        assert_eq!(parts.metadata.len(), 1);
        assert_eq!(parts.metadata[0].kind, MessageKind::SecurityStatus);
        assert_eq!(parts.by_security.len(), 2);
        assert_eq!(parts.by_security[&24].len(), 5);
        assert_eq!(parts.by_security[&21].len(), 1);
        let seqs: Vec<u64> = parts.by_security[&24].iter().map(|m| m.seq_no).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn partition_of_empty_and_single_security() {
        assert_eq!(partition_by_security(Vec::new()), Partitioned::default());
        let feed = parse_stream(SNIPPET, ParseMode::Strict).unwrap();
        let only24: Vec<_> = feed
            .into_messages()
            .into_iter()
            .filter(|m| m.security_id == 24)
            .collect();
        let parts = partition_by_security(only24.clone());
        assert_eq!(parts.by_security[&24], only24);
    }

    #[test]
    fn dump_round_trip() {
        let feed = parse_stream(SNIPPET, ParseMode::Strict).unwrap();
        let mut text = String::from(DUMP_HEADER);
        text.push('\n');
        for (raw, msg) in &feed.records {
            text.push_str(&dump_line(raw, msg));
            text.push('\n');
        }
        let back = read_messages(text.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(back.records.len(), feed.records.len());
        for ((r1, m1), (r2, m2)) in feed.records.iter().zip(&back.records) {
            assert_eq!(m1, m2);
            assert_eq!(r1, r2);
        }
    }

    #[test]
    fn wire_round_trip_matches_snippet_payload() {
        let feed = parse_stream(SNIPPET, ParseMode::Strict).unwrap();
        for (raw, msg) in &feed.records {
            assert_eq!(raw.payload, msg.to_payload());
        }
    }
}
