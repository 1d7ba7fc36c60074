//! Feed-side commands: gen, parse, build-lob, verify.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use lobtaq_core::feed::{
    dump_line, partition_by_security, read_messages, write_wire, MarketMessage, ParseMode,
    ParsedFeed, DUMP_HEADER,
};
use lobtaq_core::l1::to_csv;
use lobtaq_core::lob::{break_rate, replay_security, Anomalies, Replay, ReplayOptions};
use lobtaq_core::synth::{generate, oracle_l1, DepthProfile, ImpactLaw, ScenarioConfig};
use lobtaq_core::taq::{annotate, MicroMode};

use crate::bundle::{self, Bundle};
use crate::io::{default_config, read_input, resolve_config, Run};
use crate::{OutArgs, UsageError};

fn parse_mode(strict: bool) -> ParseMode {
    if strict {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    }
}

fn report_feed(run: &mut Run, feed: &ParsedFeed) {
    run.anomaly("feed", feed.stats);
    for e in feed.errors.iter().take(5) {
        eprintln!("lobtaq: skipped record: {e}");
    }
    if feed.errors.len() > 5 {
        eprintln!("lobtaq: ... {} more skipped records", feed.errors.len() - 5);
    }
}

// ---------------------------------------------------------------------------
// gen

#[derive(Args)]
pub struct GenArgs {
    /// Scenario TOML; relative names are also looked up in $LOBTAQ_CONFIG_DIR.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    securities: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    messages_per_day: Option<usize>,
    /// Shallow books (one order per side) breaking with this probability per trade.
    #[arg(long)]
    shallow: Option<f64>,
    /// Fills follow the default impact law instead of the order-flow model.
    #[arg(long)]
    impact_law: bool,
    #[command(flatten)]
    out: OutArgs,
}

const TRUTH_HEADER: &str =
    "SecurityId,MessageIndex,TimeStamp,Sign,PriceRaw,Volume,MidBefore,MidAfter,Omega,DeltaP";

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NaN".into())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut run = Run::new("gen", a.out.out_dir.as_deref())?;
    let config_path = match &a.config {
        Some(p) => Some(resolve_config(p)?),
        None => default_config("scenario.toml"),
    };
    let mut cfg = match &config_path {
        Some(p) => {
            let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            run.add_config(p, &text);
            ScenarioConfig::from_toml(std::str::from_utf8(&text)?)?
        }
        None => ScenarioConfig {
            seed: 7,
            ..ScenarioConfig::default()
        },
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.securities {
        cfg.n_securities = n;
    }
    if let Some(n) = a.days {
        cfg.n_days = n;
    }
    if let Some(n) = a.messages_per_day {
        cfg.messages_per_day = n;
    }
    if let Some(b) = a.shallow {
        cfg.depth = DepthProfile::Shallow {
            max_depth: 1,
            break_target: b,
        };
    }
    if a.impact_law && cfg.impact_law.is_none() {
        cfg.impact_law = Some(ImpactLaw::default());
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    run.set_seed(cfg.seed);
    let feed = generate(&cfg)?;
    run.anomaly("messages", feed.messages.len());
    run.emit("feed.txt", feed.to_wire().as_bytes())?;
    if run.has_out_dir() {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", run.comment());
        out.push_str(TRUTH_HEADER);
        out.push('\n');
        for s in &feed.truth.securities {
            for t in &s.trades {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    t.security_id,
                    t.message_index,
                    t.timestamp,
                    t.sign,
                    t.price.raw(),
                    t.volume,
                    opt_num(t.mid_before),
                    opt_num(t.mid_after),
                    opt_num(t.omega),
                    opt_num(t.delta_p)
                );
            }
        }
        run.write("truth_trades.csv", out.as_bytes())?;
        let cfg_text = toml::to_string(&cfg).context("serializing scenario")?;
        run.write("scenario.toml", cfg_text.as_bytes())?;
    }
    run.finish()
}

// ---------------------------------------------------------------------------
// parse

#[derive(Args)]
pub struct ParseArgs {
    /// Feed file (wire format or message table, optionally gzip); `-` for stdin.
    #[arg(default_value = "-")]
    input: String,
    /// Abort on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Emit one message per line as a table instead of the wire format.
    #[arg(long)]
    dump_messages: bool,
    #[command(flatten)]
    out: OutArgs,
}

pub fn parse(a: ParseArgs) -> Result<()> {
    let mut run = Run::new("parse", a.out.out_dir.as_deref())?;
    let input = read_input(&a.input)?;
    run.add_input(&input);
    let feed = read_messages(input.bytes.as_slice(), parse_mode(a.strict))?;
    report_feed(&mut run, &feed);
    let mut out = String::with_capacity(input.bytes.len());
    if a.dump_messages {
        let _ = writeln!(out, "# {}", run.comment());
        out.push_str(DUMP_HEADER);
        out.push('\n');
        for (raw, msg) in &feed.records {
            out.push_str(&dump_line(raw, msg));
            out.push('\n');
        }
        run.emit("messages.csv", out.as_bytes())?;
    } else {
        for (raw, msg) in &feed.records {
            write_wire(&mut out, raw.recv_ns, raw.feed_id, raw.lead_int, msg);
        }
        run.emit("messages.txt", out.as_bytes())?;
    }
    run.finish()
}

// ---------------------------------------------------------------------------
// build-lob

#[derive(Args)]
pub struct BuildArgs {
    /// Feed file (wire format or message table, optionally gzip); `-` for stdin.
    #[arg(default_value = "-")]
    input: String,
    /// Abort on malformed records and overfilled trades.
    #[arg(long)]
    strict: bool,
    /// Also write full-depth snapshots after every book change.
    #[arg(long)]
    depth: bool,
    /// Only rebuild these securities.
    #[arg(long = "security")]
    securities: Vec<u32>,
    #[arg(long, default_value = "own-side")]
    micro_mode: MicroMode,
    #[command(flatten)]
    out: OutArgs,
}

/// Engine replay with derived mid/micro/inter-arrival columns.
pub fn engine_replay(
    sid: u32,
    msgs: &[MarketMessage],
    opts: ReplayOptions,
    mode: MicroMode,
) -> Result<Replay> {
    let mut r = replay_security(sid, msgs, opts)
        .with_context(|| format!("security {sid}"))?;
    annotate(&mut r.records, mode);
    Ok(r)
}

pub fn build_lob(a: BuildArgs) -> Result<()> {
    let mut run = Run::new("build-lob", a.out.out_dir.as_deref())?;
    if a.depth && !run.has_out_dir() {
        return Err(UsageError("--depth needs --out-dir".into()).into());
    }
    let input = read_input(&a.input)?;
    run.add_input(&input);
    let feed = read_messages(input.bytes.as_slice(), parse_mode(a.strict))?;
    report_feed(&mut run, &feed);
    let dump = if run.has_out_dir() {
        String::new()
    } else {
        let mut s = String::with_capacity(feed.records.len() * 120);
        s.push_str(DUMP_HEADER);
        s.push('\n');
        for (raw, msg) in &feed.records {
            s.push_str(&dump_line(raw, msg));
            s.push('\n');
        }
        s
    };
    let parts = partition_by_security(feed.into_messages());
    let wanted: Vec<(u32, Vec<MarketMessage>)> = parts
        .by_security
        .into_iter()
        .filter(|(sid, _)| a.securities.is_empty() || a.securities.contains(sid))
        .collect();
    let opts = ReplayOptions {
        record_depth: a.depth,
        strict: a.strict,
    };
    let replays: Vec<(u32, Replay)> = wanted
        .par_iter()
        .map(|(sid, msgs)| Ok((*sid, engine_replay(*sid, msgs, opts, a.micro_mode)?)))
        .collect::<Result<_>>()?;

    let mut total = Anomalies::default();
    let mut per_sec = BTreeMap::new();
    for (sid, r) in &replays {
        total.merge(&r.anomalies);
        per_sec.insert(sid.to_string(), r.anomalies);
    }
    run.anomaly("lob_total", total);
    run.anomaly("lob_by_security", per_sec);
    run.anomaly("metadata_messages", parts.metadata.len());

    if !run.has_out_dir() {
        let b = Bundle {
            digest: run.input_digest(),
            messages: dump,
            l1: replays
                .iter()
                .map(|(sid, r)| (*sid, to_csv(&r.records, None)))
                .collect(),
        };
        return run.emit("bundle", bundle::write_bundle(&b).as_bytes());
    }
    let comment = run.comment();
    let mut breaks = format!("# {comment}\nSecurity,Trades,HitSideEmptied,BreakRate\n");
    for (sid, r) in &replays {
        run.write(&format!("l1_{sid}.csv"), to_csv(&r.records, Some(&comment)).as_bytes())?;
        if a.depth {
            let mut d = String::new();
            for snap in &r.depth {
                d.push_str(&snap.to_json());
                d.push('\n');
            }
            run.write(&format!("depth_{sid}.jsonl"), d.as_bytes())?;
        }
        let emptied = r.outcomes.iter().filter(|o| o.hit_side_empty).count();
        let _ = writeln!(
            breaks,
            "{sid},{},{emptied},{}",
            r.outcomes.len(),
            opt_num(break_rate(&r.outcomes))
        );
    }
    run.write("break_rates.csv", breaks.as_bytes())?;
    run.finish()
}

// ---------------------------------------------------------------------------
// verify

#[derive(Args)]
pub struct VerifyArgs {
    /// A build-lob bundle or a feed; `-` for stdin. Ignored with --suite.
    #[arg(default_value = "-")]
    input: String,
    /// Generate seeded streams instead of reading input.
    #[arg(long)]
    suite: bool,
    #[arg(long, default_value_t = 100)]
    streams: u32,
    #[arg(long, default_value_t = 10_000)]
    messages: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

/// Outcome of comparing the engine with the oracle on one security.
struct Check {
    name: String,
    records: usize,
    failures: Vec<String>,
}

fn check_security(
    name: String,
    sid: u32,
    msgs: &[MarketMessage],
    bundled: Option<&str>,
) -> Result<Check> {
    let engine = engine_replay(sid, msgs, ReplayOptions::default(), MicroMode::OwnSide)?;
    let mut oracle = oracle_l1(sid, msgs).with_context(|| format!("oracle, security {sid}"))?;
    annotate(&mut oracle.records, MicroMode::OwnSide);
    let ours = to_csv(&engine.records, None);
    let theirs = to_csv(&oracle.records, None);
    let mut failures = Vec::new();
    if ours != theirs {
        failures.push(first_difference("engine", &ours, "oracle", &theirs));
    }
    if engine.anomalies != oracle.anomalies {
        failures.push(format!(
            "anomaly counts differ: engine {:?} oracle {:?}",
            engine.anomalies, oracle.anomalies
        ));
    }
    if engine.outcomes != oracle.outcomes {
        failures.push("post-trade outcomes differ".into());
    }
    if let Some(b) = bundled {
        let b: String = b.lines().filter(|l| !l.starts_with('#')).flat_map(|l| [l, "\n"]).collect();
        if b != theirs {
            failures.push(first_difference("bundle", &b, "oracle", &theirs));
        }
    }
    Ok(Check {
        name,
        records: engine.records.len(),
        failures,
    })
}

fn first_difference(an: &str, a: &str, bn: &str, b: &str) -> String {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    for i in 0..la.len().max(lb.len()) {
        let (x, y) = (la.get(i).copied(), lb.get(i).copied());
        if x != y {
            return format!(
                "line {}: {an} `{}` vs {bn} `{}`",
                i + 1,
                x.unwrap_or("<end>"),
                y.unwrap_or("<end>")
            );
        }
    }
    "outputs differ".into()
}

fn feed_checks(messages: Vec<MarketMessage>, bundled: &BTreeMap<u32, String>, prefix: &str) -> Result<Vec<Check>> {
    let parts = partition_by_security(messages);
    let mut checks: Vec<Check> = parts
        .by_security
        .par_iter()
        .map(|(sid, msgs)| {
            check_security(
                format!("{prefix}security {sid}"),
                *sid,
                msgs,
                bundled.get(sid).map(String::as_str),
            )
        })
        .collect::<Result<_>>()?;
    for sid in bundled.keys() {
        if !parts.by_security.contains_key(sid) {
            checks.push(Check {
                name: format!("{prefix}security {sid}"),
                records: 0,
                failures: vec!["bundle has L1 for a security with no messages".into()],
            });
        }
    }
    Ok(checks)
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let mut run = Run::new("verify", a.out.out_dir.as_deref())?;
    let mut checks = Vec::new();
    if a.suite {
        run.set_seed(a.seed);
        let results: Vec<Vec<Check>> = (0..a.streams)
            .into_par_iter()
            .map(|i| {
                let cfg = ScenarioConfig {
                    seed: a.seed.wrapping_add(i as u64),
                    messages_per_day: a.messages,
                    depth: if i % 2 == 1 {
                        DepthProfile::Shallow {
                            max_depth: 1 + (i as usize / 2) % 3,
                            break_target: 0.3,
                        }
                    } else {
                        DepthProfile::default()
                    },
                    record_l1: false,
                    ..ScenarioConfig::default()
                };
                let feed = generate(&cfg)?;
                let wire = feed.to_wire();
                let parsed = read_messages(wire.as_bytes(), ParseMode::Strict)?.into_messages();
                let mut c = feed_checks(parsed.clone(), &BTreeMap::new(), &format!("stream {i} "))?;
                if parsed != feed.messages {
                    c.push(Check {
                        name: format!("stream {i} wire round trip"),
                        records: parsed.len(),
                        failures: vec!["parsed messages differ from generated".into()],
                    });
                }
                Ok(c)
            })
            .collect::<Result<_>>()?;
        checks = results.into_iter().flatten().collect();
    } else {
        let input = read_input(&a.input)?;
        run.add_input(&input);
        let text = input.text()?;
        if bundle::is_bundle(text) {
            let b = bundle::read_bundle(text)?;
            let feed = read_messages(b.messages.as_bytes(), ParseMode::Strict)?;
            checks.extend(feed_checks(feed.into_messages(), &b.l1, "")?);
        } else {
            let feed = read_messages(input.bytes.as_slice(), ParseMode::Lenient)?;
            report_feed(&mut run, &feed);
            checks.extend(feed_checks(feed.into_messages(), &BTreeMap::new(), "")?);
        }
    }
    if checks.is_empty() {
        bail!("nothing to verify: input has no order-book messages");
    }
    let mut report = String::new();
    let mut failed = 0;
    for c in &checks {
        if c.failures.is_empty() {
            let _ = writeln!(report, "PASS {} records={}", c.name, c.records);
        } else {
            failed += 1;
            for f in &c.failures {
                let _ = writeln!(report, "FAIL {} {f}", c.name);
            }
        }
    }
    let _ = writeln!(report, "{} checks, {} failed", checks.len(), failed);
    run.anomaly("failed_checks", failed);
    run.emit("verify.txt", report.as_bytes())?;
    if run.has_out_dir() {
        print!("{report}");
    }
    run.finish()?;
    if failed > 0 {
        bail!("{failed} of {} equivalence checks failed", checks.len());
    }
    Ok(())
}
