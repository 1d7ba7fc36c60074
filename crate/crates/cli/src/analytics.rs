//! TAQ analytics subcommands over L1 streams.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, ValueEnum};
use lobtaq_core::classify::{accuracy_table_csv, detail_csv, evaluate_security};
use lobtaq_core::cost::{
    builtin_schedule, cost_curve, cost_curves_csv, fee_schedules_from_toml, stream_costs,
    variability_csv, variability_table, CostBreakdown, FeeRole, FeeSchedule,
};
use lobtaq_core::impact::{
    average_daily_value, calibrate_master, fit_liquidity_exponent, impact_curve,
    impact_curve_with_envelope, normalized_trades, rescale_curves,
    rescale_trades, ImpactCurve, LogBins, MasterConfig, NormalizedTrade, SecurityCurve, TradeSide,
};
use lobtaq_core::l1::{self, EventType, L1Record};
use lobtaq_core::price::PriceUnit;
use lobtaq_core::stylized::{
    acf, ccdf, fit_normal, fit_powerlaw, orderflow_acf, qq_data, seasonality as season_profile, AcfResult, Reference,
    SeasonKind, Tail,
};
use lobtaq_core::taq::{
    bar_returns, derive_quotes, impact_increments, interarrivals, ohlc, tick_returns,
    MicroMode,
};
use lobtaq_core::time::Session;
use lobtaq_core::vendor::{ingest_vendor as ingest, parse_keep, verify_trade_quote_sequencing, VendorOptions};
use rayon::prelude::*;
use serde_json::json;

use crate::io::{default_config, read_input, require_out_dir, resolve_config, Run};
use crate::signs::{self, SignSource};
use crate::{OutArgs, UsageError};

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

fn csv_start(run: &Run, header: &str) -> String {
    format!("# {}\n{header}\n", run.comment())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Stream {
    label: String,
    records: Vec<L1Record>,
}

fn load_streams(run: &mut Run, specs: &[String]) -> Result<Vec<Stream>> {
    if specs.is_empty() {
        return Err(usage("no input L1 streams given"));
    }
    let mut out: Vec<Stream> = Vec::with_capacity(specs.len());
    for s in specs {
        let input = read_input(s)?;
        run.add_input(&input);
        let records = l1::read_csv(input.bytes.as_slice()).with_context(|| input.path.clone())?;
        if out.iter().any(|o| o.label == input.label) {
            return Err(usage(format!("duplicate input label `{}`", input.label)));
        }
        out.push(Stream {
            label: input.label,
            records,
        });
    }
    Ok(out)
}

fn sides(side: SideArg) -> &'static [TradeSide] {
    match side {
        SideArg::Bi => &[TradeSide::Bi],
        SideArg::Si => &[TradeSide::Si],
        SideArg::Both => &[TradeSide::Bi, TradeSide::Si],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Bi,
    Si,
    Both,
}

// ---------------------------------------------------------------- ingest

#[derive(Args)]
pub struct VendorArgs {
    /// Vendor CSV (`times,type,value,size,condcode`), `-` for stdin.
    #[arg(default_value = "-")]
    input: String,
    /// Trade condition codes to keep, comma separated; `-` keeps none.
    #[arg(long, default_value = "AT")]
    condcodes_keep: String,
    #[arg(long, default_value = "09:00-16:50")]
    session: Session,
    /// Unit of the vendor prices.
    #[arg(long, default_value = "zac")]
    unit: PriceUnit,
    /// Hours added to the vendor times to reach exchange local time.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_hours: i32,
    #[arg(long, default_value = "own-side")]
    micro_mode: MicroMode,
    #[arg(long)]
    strict: bool,
    /// Sign the trades with a classification rule.
    #[arg(long, value_enum)]
    sign_rule: Option<SignSource>,
    #[command(flatten)]
    out: OutArgs,
}

pub fn ingest_vendor(a: VendorArgs) -> Result<()> {
    let opts = VendorOptions {
        session: a.session,
        keep: parse_keep(&a.condcodes_keep),
        unit: a.unit,
        utc_offset_hours: a.utc_offset_hours,
        mode: a.micro_mode,
        strict: a.strict,
    };
    let input = read_input(&a.input)?;
    let mut run = Run::new("ingest-vendor", a.out.out_dir.as_deref())?;
    run.add_input(&input);
    let mut res = ingest(input.bytes.as_slice(), &opts)?;
    if let Some(src) = a.sign_rule {
        let unsigned = signs::apply(&mut res.records, src);
        run.anomaly("unsigned_trades", unsigned);
    }
    run.anomaly("vendor", res.stats);
    if let Some(rep) = verify_trade_quote_sequencing(&res.records) {
        run.anomaly("trade_quote_sequencing", json!({
            "trades": rep.trades,
            "followed": rep.followed,
            "fraction": rep.fraction,
        }));
    }
    let text = l1::to_csv(&res.records, Some(&run.comment()));
    run.emit("l1.csv", text.as_bytes())?;
    run.finish()
}

// ---------------------------------------------------------------- taq

#[derive(Args)]
pub struct TaqArgs {
    /// L1 CSV files, as `label=path` or a path.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Bar widths in minutes.
    #[arg(long, value_delimiter = ',', default_value = "1,10,20")]
    bar_width: Vec<u32>,
    #[arg(long, default_value = "09:00-16:50")]
    session: Session,
    #[arg(long, default_value = "own-side")]
    micro_mode: MicroMode,
    #[command(flatten)]
    out: OutArgs,
}

fn check_widths(w: &[u32]) -> Result<()> {
    if w.is_empty() || w.contains(&0) {
        return Err(usage("--bar-width needs positive minute values"));
    }
    Ok(())
}

pub fn taq(a: TaqArgs) -> Result<()> {
    check_widths(&a.bar_width)?;
    let dir = require_out_dir(&a.out.out_dir, "taq")?;
    let mut run = Run::new("taq", Some(&dir))?;
    let streams = load_streams(&mut run, &a.inputs)?;
    let files: Vec<Vec<(String, String, serde_json::Value)>> = streams
        .par_iter()
        .map(|s| taq_files(&run, s, &a))
        .collect();
    for (s, list) in streams.iter().zip(files) {
        for (name, text, anomaly) in list {
            run.write(&name, text.as_bytes())?;
            if !anomaly.is_null() {
                run.anomaly(format!("{}.impact", s.label), anomaly);
            }
        }
    }
    run.finish()
}

fn taq_files(run: &Run, s: &Stream, a: &TaqArgs) -> Vec<(String, String, serde_json::Value)> {
    let l = &s.label;
    let mut files = Vec::new();
    let quotes = derive_quotes(&s.records, a.micro_mode);

    let mut q = csv_start(run, "TimeStamp,Bid,BidVol,Ask,AskVol,MidPrice,MicroPrice,Spread");
    for p in &quotes {
        let _ = writeln!(
            q,
            "{},{},{},{},{},{},{},{}",
            p.timestamp,
            num(p.bid.map(|b| b.0)),
            num(p.bid.map(|b| b.1)),
            num(p.ask.map(|x| x.0)),
            num(p.ask.map(|x| x.1)),
            num(p.mid),
            num(p.micro),
            num(p.spread())
        );
    }
    files.push((format!("quotes_{l}.csv"), q, serde_json::Value::Null));

    let mut r = csv_start(run, "TimeStamp,Return");
    for (t, v) in tick_returns(&quotes) {
        let _ = writeln!(r, "{t},{v}");
    }
    files.push((format!("tick_returns_{l}.csv"), r, serde_json::Value::Null));

    let trade_times: Vec<_> = s
        .records
        .iter()
        .filter(|r| r.event_type == EventType::Trade)
        .map(|r| r.timestamp)
        .collect();
    let mut ia = csv_start(run, "InterArrival");
    for v in interarrivals(&trade_times) {
        let _ = writeln!(ia, "{v}");
    }
    files.push((format!("interarrivals_{l}.csv"), ia, serde_json::Value::Null));

    let (impacts, skips) = impact_increments(&s.records);
    let mut im = csv_start(
        run,
        "TimeStamp,Price,Volume,Sign,BidBefore,AskBefore,MidBefore,MidAfter,DeltaP",
    );
    for t in &impacts {
        let _ = writeln!(
            im,
            "{},{},{},{},{},{},{},{},{}",
            t.timestamp,
            t.price,
            t.volume,
            t.sign.map_or_else(|| "NaN".to_string(), |x| x.to_string()),
            num(t.bid_before),
            num(t.ask_before),
            num(t.mid_before),
            num(t.mid_after),
            num(t.delta_p)
        );
    }
    files.push((format!("impact_{l}.csv"), im, serde_json::to_value(skips).unwrap_or_default()));

    for &w in &a.bar_width {
        let bars = ohlc(&quotes, w, a.session);
        let mut b = csv_start(run, "Start,Open,High,Low,Close,Bullish");
        for bar in &bars {
            match bar.ohlc {
                Some(o) => {
                    let _ = writeln!(
                        b,
                        "{},{},{},{},{},{}",
                        bar.start,
                        o.open,
                        o.high,
                        o.low,
                        o.close,
                        u8::from(o.bullish())
                    );
                }
                None => {
                    let _ = writeln!(b, "{},NaN,NaN,NaN,NaN,NaN", bar.start);
                }
            }
        }
        files.push((format!("bars_{l}_{w}m.csv"), b, serde_json::Value::Null));
        let mut br = csv_start(run, "TimeStamp,Return");
        for (t, v) in bar_returns(&bars) {
            let _ = writeln!(br, "{t},{v}");
        }
        files.push((format!("bar_returns_{l}_{w}m.csv"), br, serde_json::Value::Null));
    }
    files
}

// ---------------------------------------------------------------- classify

#[derive(Args)]
pub struct ClassifyArgs {
    /// L1 CSV files carrying true trade signs.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Also write per-rule counts.
    #[arg(long)]
    detail: bool,
    #[command(flatten)]
    out: OutArgs,
}

pub fn classify_eval(a: ClassifyArgs) -> Result<()> {
    let mut run = Run::new("classify-eval", a.out.out_dir.as_deref())?;
    if a.detail && !run.has_out_dir() {
        return Err(usage("--detail writes a second file; pass --out-dir"));
    }
    let streams = load_streams(&mut run, &a.inputs)?;
    let rows = streams
        .par_iter()
        .map(|s| evaluate_security(&s.label, &s.records).with_context(|| s.label.clone()))
        .collect::<Result<Vec<_>>>()?;
    for r in &rows {
        run.anomaly(format!("{}.broken_mid", r.security), r.broken_mid);
    }
    let comment = run.comment();
    run.emit("accuracy.csv", accuracy_table_csv(&rows, Some(&comment)).as_bytes())?;
    if a.detail {
        run.write("accuracy_detail.csv", detail_csv(&rows, Some(&comment)).as_bytes())?;
    }
    run.finish()
}

// ---------------------------------------------------------------- stylised

#[derive(Args)]
pub struct StylisedArgs {
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    max_lag: usize,
    /// Tail percentile setting x_min for the power-law fits.
    #[arg(long, default_value_t = 0.95)]
    percentile: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,10,20")]
    bar_width: Vec<u32>,
    #[arg(long, default_value = "09:00-16:50")]
    session: Session,
    #[arg(long, default_value = "own-side")]
    micro_mode: MicroMode,
    /// Source of the trade signs for the order-flow ACF.
    #[arg(long, value_enum, default_value = "stream")]
    signs: SignSource,
    #[command(flatten)]
    out: OutArgs,
}

fn acf_csv(run: &Run, r: &AcfResult) -> String {
    let mut out = csv_start(run, "Lag,Log10Lag,Rho,Band");
    for (lag, rho) in r.lags().zip(&r.rho) {
        let _ = writeln!(out, "{lag},{},{rho},{}", (lag as f64).log10(), r.band);
    }
    out
}

fn pairs_csv(run: &Run, header: &str, rows: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut out = csv_start(run, header);
    for (x, y) in rows {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

type Files = Vec<(String, String)>;

/// Distribution outputs of one return series; failures land in `skipped`.
fn series_outputs(
    run: &Run,
    tag: &str,
    x: &[f64],
    a: &StylisedArgs,
    files: &mut Files,
    skipped: &mut BTreeMap<String, String>,
) -> serde_json::Value {
    let mut fit = serde_json::Map::new();
    fit.insert("n".into(), json!(x.len()));
    match acf(x, a.max_lag) {
        Ok(r) => files.push((format!("acf_{tag}.csv"), acf_csv(run, &r))),
        Err(e) => {
            skipped.insert(format!("acf_{tag}"), e.to_string());
        }
    }
    match fit_normal(x) {
        Ok((mean, var)) => {
            fit.insert("normal".into(), json!({"mean": mean, "var": var}));
            files.push((
                format!("qq_{tag}_normal.csv"),
                pairs_csv(run, "Theoretical,Empirical", qq_data(x, Reference::Normal { mean, var })),
            ));
        }
        Err(e) => {
            skipped.insert(format!("normal_{tag}"), e.to_string());
        }
    }
    for tail in [Tail::Upper, Tail::Lower] {
        let name = match tail {
            Tail::Upper => "upper",
            Tail::Lower => "lower",
        };
        match fit_powerlaw(x, a.percentile, tail) {
            Ok(p) => {
                fit.insert(name.into(), json!({"x_min": p.x_min, "alpha": p.alpha, "n_tail": p.n_tail}));
                let c = ccdf(x, &p, tail);
                let mut out = csv_start(run, "X,Empirical,Fitted");
                for (v, e, f) in &c {
                    let _ = writeln!(out, "{v},{e},{f}");
                }
                files.push((format!("ccdf_{tag}_{name}.csv"), out));
                let tail_sample: Vec<f64> = c.iter().map(|t| t.0).collect();
                files.push((
                    format!("qq_{tag}_{name}.csv"),
                    pairs_csv(
                        run,
                        "Theoretical,Empirical",
                        qq_data(&tail_sample, Reference::PowerLaw { alpha: p.alpha, x_min: p.x_min }),
                    ),
                ));
            }
            Err(e) => {
                skipped.insert(format!("{name}_{tag}"), e.to_string());
            }
        }
    }
    serde_json::Value::Object(fit)
}

pub fn stylised(a: StylisedArgs) -> Result<()> {
    check_widths(&a.bar_width)?;
    if !(a.percentile > 0.0 && a.percentile < 1.0) {
        return Err(usage("--percentile must lie in (0, 1)"));
    }
    if a.max_lag == 0 {
        return Err(usage("--max-lag must be positive"));
    }
    let dir = require_out_dir(&a.out.out_dir, "stylised")?;
    let mut run = Run::new("stylised", Some(&dir))?;
    let mut streams = load_streams(&mut run, &a.inputs)?;
    let unsigned: Vec<usize> = streams
        .iter_mut()
        .map(|s| signs::apply(&mut s.records, a.signs))
        .collect();
    let results: Vec<(Files, serde_json::Value, BTreeMap<String, String>)> = streams
        .par_iter()
        .map(|s| {
            let mut files = Files::new();
            let mut skipped = BTreeMap::new();
            let mut fits = serde_json::Map::new();
            let quotes = derive_quotes(&s.records, a.micro_mode);
            let tick: Vec<f64> = tick_returns(&quotes).into_iter().map(|r| r.1).collect();
            let tag = format!("{}_tick", s.label);
            fits.insert("tick".into(), series_outputs(&run, &tag, &tick, &a, &mut files, &mut skipped));
            for &w in &a.bar_width {
                let bars = ohlc(&quotes, w, a.session);
                let r: Vec<f64> = bar_returns(&bars).into_iter().map(|r| r.1).collect();
                let tag = format!("{}_{w}m", s.label);
                fits.insert(format!("{w}m"), series_outputs(&run, &tag, &r, &a, &mut files, &mut skipped));
            }
            let signs: Vec<i8> = s
                .records
                .iter()
                .filter(|r| r.event_type == EventType::Trade)
                .filter_map(|r| r.trade_sign)
                .collect();
            match orderflow_acf(&signs, a.max_lag) {
                Ok(r) => files.push((format!("orderflow_acf_{}.csv", s.label), acf_csv(&run, &r))),
                Err(e) => {
                    skipped.insert(format!("orderflow_acf_{}", s.label), e.to_string());
                }
            }
            (files, serde_json::Value::Object(fits), skipped)
        })
        .collect();
    let mut all_fits = serde_json::Map::new();
    let mut all_skipped = BTreeMap::new();
    for ((s, (files, fits, skipped)), n_unsigned) in streams.iter().zip(results).zip(unsigned) {
        for (name, text) in files {
            run.write(&name, text.as_bytes())?;
        }
        all_fits.insert(s.label.clone(), fits);
        all_skipped.extend(skipped);
        run.anomaly(format!("{}.unsigned_trades", s.label), n_unsigned);
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(all_fits))?;
    text.push('\n');
    run.write("fits.json", text.as_bytes())?;
    if !all_skipped.is_empty() {
        run.anomaly("skipped", all_skipped);
    }
    run.finish()
}

// ---------------------------------------------------------------- impact

#[derive(Args)]
pub struct ImpactArgs {
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    side: SideArg,
    /// Bootstrap replicates for the envelopes (0 disables them).
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "stream")]
    signs: SignSource,
    /// Volume window `lo:hi` of the liquidity-exponent fit.
    #[arg(long, default_value = "0.1:10")]
    fit_range: String,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || usage(format!("bad range `{s}`, expected lo:hi"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi > lo) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Normalized signed trades of each stream.
fn stream_trades(streams: &mut [Stream], src: SignSource, run: &mut Run) -> Result<Vec<Vec<NormalizedTrade>>> {
    let mut out = Vec::with_capacity(streams.len());
    for (k, s) in streams.iter_mut().enumerate() {
        let unsigned = signs::apply(&mut s.records, src);
        let (impacts, iskips) = impact_increments(&s.records);
        let (trades, nskips) =
            normalized_trades(k as u32, &impacts, None).with_context(|| s.label.clone())?;
        run.anomaly(
            format!("{}.trades", s.label),
            json!({
                "unsigned_after_rule": unsigned,
                "broken_before": iskips.broken_before,
                "broken_after": iskips.broken_after,
                "no_impact": nskips.no_impact,
                "unsigned": nskips.unsigned,
            }),
        );
        out.push(trades);
    }
    Ok(out)
}

const CURVE_HEADER: &str = "Security,Side,Bin,Lo,Hi,Count,Omega,DeltaP,EnvelopeLo,EnvelopeHi";

fn curve_rows(out: &mut String, label: &str, c: &ImpactCurve) {
    for (k, b) in c.bins.iter().enumerate() {
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{},{},{},{}",
            c.side.as_str(),
            k + 1,
            b.lo,
            b.hi,
            b.count,
            num(b.omega_mean),
            num(b.dp_mean),
            num(b.envelope.map(|e| e.0)),
            num(b.envelope.map(|e| e.1))
        );
    }
}

pub fn impact(a: ImpactArgs) -> Result<()> {
    let (lo, hi) = parse_range(&a.fit_range)?;
    let dir = require_out_dir(&a.out.out_dir, "impact")?;
    let mut run = Run::new("impact", Some(&dir))?;
    run.set_seed(a.seed);
    let mut streams = load_streams(&mut run, &a.inputs)?;
    let trades = stream_trades(&mut streams, a.signs, &mut run)?;
    let mut curves = csv_start(&run, CURVE_HEADER);
    let mut fits = serde_json::Map::new();
    for (s, ts) in streams.iter().zip(&trades) {
        let mut per_side = serde_json::Map::new();
        for &side in sides(a.side) {
            let c = impact_curve_with_envelope(ts, side, LogBins::IMPACT, a.nboot, a.seed);
            curve_rows(&mut curves, &s.label, &c);
            let v = match fit_liquidity_exponent(&c.points(), lo, hi) {
                Ok(f) => json!({"alpha": f.alpha, "lambda": f.lambda, "n_bins": f.n_bins, "excluded": f.excluded}),
                Err(e) => json!({"error": e.to_string()}),
            };
            per_side.insert(side.as_str().into(), v);
        }
        fits.insert(s.label.clone(), serde_json::Value::Object(per_side));
    }
    run.write("impact_curves.csv", curves.as_bytes())?;
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(fits))?;
    text.push('\n');
    run.write("liquidity_fits.json", text.as_bytes())?;
    run.finish()
}

// ---------------------------------------------------------------- master

#[derive(Args)]
pub struct MasterArgs {
    /// One L1 stream per security.
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, value_enum, default_value = "bi")]
    side: SideArg,
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "stream")]
    signs: SignSource,
    /// Unit of the L1 prices, for the average daily value proxy.
    #[arg(long, default_value = "zac")]
    unit: PriceUnit,
    #[command(flatten)]
    out: OutArgs,
}

pub fn master(a: MasterArgs) -> Result<()> {
    let dir = require_out_dir(&a.out.out_dir, "master")?;
    let mut run = Run::new("master", Some(&dir))?;
    run.set_seed(a.seed);
    let mut streams = load_streams(&mut run, &a.inputs)?;
    let trades = stream_trades(&mut streams, a.signs, &mut run)?;
    let cs: Vec<f64> = streams
        .iter()
        .map(|s| average_daily_value(&s.records, a.unit))
        .collect();
    let mut curves_csv = csv_start(&run, "Security,Side,C,Omega,DeltaP");
    let mut rescaled_csv = csv_start(&run, "Security,Side,X,Y");
    let mut master_csv = csv_start(&run, CURVE_HEADER);
    let mut out = serde_json::Map::new();
    let cfg = MasterConfig::default();
    for &side in sides(a.side) {
        let curves: Vec<SecurityCurve> = trades
            .iter()
            .zip(&cs)
            .enumerate()
            .map(|(k, (ts, &c))| SecurityCurve {
                security_id: k as u32,
                c,
                points: impact_curve(ts, side, LogBins::IMPACT).points(),
            })
            .collect();
        for (s, c) in streams.iter().zip(&curves) {
            for (w, dp) in &c.points {
                let _ = writeln!(curves_csv, "{},{},{},{w},{dp}", s.label, side.as_str(), c.c);
            }
        }
        let fit = calibrate_master(&curves, cfg).with_context(|| format!("{} master curve", side.as_str()))?;
        for (s, c) in streams.iter().zip(rescale_curves(&curves, fit.delta, fit.gamma)) {
            for (x, y) in &c.points {
                let _ = writeln!(rescaled_csv, "{},{},{x},{y}", s.label, side.as_str());
            }
        }
        let groups: Vec<(f64, Vec<NormalizedTrade>)> =
            cs.iter().copied().zip(trades.iter().cloned()).collect();
        let pooled = rescale_trades(&groups, fit.delta, fit.gamma);
        let mc = impact_curve_with_envelope(&pooled, side, LogBins::IMPACT, a.nboot, a.seed);
        curve_rows(&mut master_csv, "master", &mc);

        let mut j = fit.to_json();
        j["caption"] = json!(fit.caption());
        j["grid"] = json!({"epsilon": fit.grid_epsilon, "delta": fit.grid_delta, "gamma": fit.grid_gamma});
        j["labels"] = json!(streams
            .iter()
            .enumerate()
            .map(|(k, s)| (k.to_string(), s.label.clone()))
            .collect::<BTreeMap<_, _>>());
        out.insert(side.as_str().into(), j);
    }
    run.write("curves.csv", curves_csv.as_bytes())?;
    run.write("rescaled.csv", rescaled_csv.as_bytes())?;
    run.write("master_curve.csv", master_csv.as_bytes())?;
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(out))?;
    text.push('\n');
    run.write("master.json", text.as_bytes())?;
    run.finish()
}

// ---------------------------------------------------------------- costs

#[derive(Args)]
pub struct CostArgs {
    /// L1 streams, optionally prefixed `EXCHANGE:` to pick a fee schedule.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Fee schedule file; defaults to fees.toml in the config directory,
    /// then the built-in A2X and JSE schedules.
    #[arg(long)]
    fees: Option<String>,
    /// Schedule for inputs without a prefix.
    #[arg(long, default_value = "A2X")]
    exchange: String,
    #[arg(long, default_value = "aggressor")]
    role: FeeRole,
    #[arg(long, value_enum, default_value = "both")]
    side: SideArg,
    #[arg(long, value_enum, default_value = "stream")]
    signs: SignSource,
    #[arg(long, default_value = "zac")]
    unit: PriceUnit,
    #[command(flatten)]
    out: OutArgs,
}

fn load_schedules(run: &mut Run, fees: Option<&str>) -> Result<Vec<FeeSchedule>> {
    let path: Option<PathBuf> = match fees {
        Some(p) => Some(resolve_config(p)?),
        None => default_config("fees.toml"),
    };
    let Some(path) = path else {
        return Ok(vec![FeeSchedule::a2x(), FeeSchedule::jse()]);
    };
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    run.add_config(&path, &bytes);
    let text = String::from_utf8(bytes).map_err(|_| anyhow!("{}: not UTF-8", path.display()))?;
    Ok(fee_schedules_from_toml(&text).with_context(|| path.display().to_string())?)
}

fn find_schedule(list: &[FeeSchedule], name: &str) -> Option<FeeSchedule> {
    list.iter()
        .find(|s| s.exchange.eq_ignore_ascii_case(name))
        .cloned()
        .or_else(|| builtin_schedule(name))
}

pub fn costs(a: CostArgs) -> Result<()> {
    let dir = require_out_dir(&a.out.out_dir, "costs")?;
    let mut run = Run::new("costs", Some(&dir))?;
    let schedules = load_schedules(&mut run, a.fees.as_deref())?;
    let mut specs = Vec::new();
    let mut exchanges = Vec::new();
    for s in &a.inputs {
        let (ex, path) = match s.split_once(':') {
            Some((ex, p)) if find_schedule(&schedules, ex).is_some() => (ex.to_string(), p.to_string()),
            _ => (a.exchange.clone(), s.clone()),
        };
        let sched = find_schedule(&schedules, &ex)
            .ok_or_else(|| usage(format!("no fee schedule named `{ex}`")))?;
        specs.push(path);
        exchanges.push(sched);
    }
    let mut streams = load_streams(&mut run, &specs)?;
    let bins = LogBins::CALIBRATION;
    let mut curves = Vec::new();
    let mut by_exchange: BTreeMap<String, Vec<Vec<CostBreakdown>>> = BTreeMap::new();
    for (s, sched) in streams.iter_mut().zip(&exchanges) {
        let unsigned = signs::apply(&mut s.records, a.signs);
        let (costs, skips) =
            stream_costs(&s.records, a.unit, sched, a.role, None).with_context(|| s.label.clone())?;
        run.anomaly(
            format!("{}.costs", s.label),
            json!({
                "exchange": sched.exchange,
                "unsigned_after_rule": unsigned,
                "broken_book": skips.broken_book,
                "unsigned": skips.unsigned,
                "non_positive": skips.non_positive,
                "crossed": skips.crossed,
            }),
        );
        let list = sides(a.side).iter().map(|&side| cost_curve(&costs, side, bins)).collect();
        curves.push((s.label.clone(), list));
        by_exchange.entry(sched.exchange.to_ascii_uppercase()).or_default().push(costs);
    }
    let comment = run.comment();
    run.write("cost_curves.csv", cost_curves_csv(&curves, Some(&comment)).as_bytes())?;
    let tables: Vec<(String, _)> = by_exchange
        .iter()
        .map(|(ex, per)| (ex.clone(), variability_table(per, bins)))
        .collect();
    for (ex, t) in &tables {
        run.anomaly(format!("{ex}.variability_excluded"), t.excluded);
    }
    run.write("variability.csv", variability_csv(&tables, Some(&comment)).as_bytes())?;
    run.finish()
}

// ---------------------------------------------------------------- seasonality

#[derive(Args)]
pub struct SeasonArgs {
    /// L1 streams pooled into one profile.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// `volume`, `absret`, `spread` or `all`.
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long, default_value_t = 10)]
    bucket_minutes: u32,
    #[arg(long, default_value = "09:00-16:50")]
    session: Session,
    #[arg(long, default_value = "own-side")]
    micro_mode: MicroMode,
    #[command(flatten)]
    out: OutArgs,
}

fn season_kinds(kind: &str) -> Result<Vec<SeasonKind>> {
    if kind.eq_ignore_ascii_case("all") {
        return Ok(vec![SeasonKind::Volume, SeasonKind::AbsReturn, SeasonKind::Spread]);
    }
    kind.split(',')
        .map(|k| k.trim().parse::<SeasonKind>().map_err(|e| usage(e.to_string())))
        .collect()
}

pub fn seasonality(a: SeasonArgs) -> Result<()> {
    let kinds = season_kinds(&a.kind)?;
    if a.bucket_minutes == 0 {
        return Err(usage("--bucket-minutes must be positive"));
    }
    let dir = require_out_dir(&a.out.out_dir, "seasonality")?;
    let mut run = Run::new("seasonality", Some(&dir))?;
    let streams = load_streams(&mut run, &a.inputs)?;
    let recs: Vec<Vec<L1Record>> = streams.into_iter().map(|s| s.records).collect();
    for kind in kinds {
        let c = season_profile(&recs, kind, a.session, a.bucket_minutes, a.micro_mode)?;
        let width = a.bucket_minutes as i64;
        let start = a.session.start_ns / lobtaq_core::time::NANOS_PER_MIN;
        let mut out = csv_start(&run, "Bucket,Start,Share");
        for (k, v) in c.values.iter().enumerate() {
            let m = start + k as i64 * width;
            let _ = writeln!(out, "{},{:02}:{:02},{v}", k + 1, m / 60, m % 60);
        }
        run.write(&format!("seasonality_{}.csv", kind.as_str()), out.as_bytes())?;
        let mut days = csv_start(&run, "Day,Bucket,Share");
        for (d, vals) in &c.per_day {
            let date = lobtaq_core::time::LocalTime::from_local_ns(d * lobtaq_core::time::NANOS_PER_DAY);
            let date = date.to_string();
            let date = &date[..10];
            for (k, v) in vals.iter().enumerate() {
                let _ = writeln!(days, "{date},{},{v}", k + 1);
            }
        }
        run.write(&format!("seasonality_{}_days.csv", kind.as_str()), days.as_bytes())?;
        run.anomaly(format!("{}.days_skipped", kind.as_str()), c.days_skipped);
    }
    run.finish()
}
