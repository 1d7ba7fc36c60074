//! Normalized price-impact curves, bootstrap envelopes, master-curve
//! calibration and the power-law liquidity fit.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1::{EventType, L1Record, Sign};
use crate::optim::nelder_mead;
use crate::price::PriceUnit;
use crate::stylized::quantile;
use crate::taq::TradeImpact;

/// Buyer- or seller-initiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeSide {
    Bi,
    Si,
}

impl TradeSide {
    pub fn sign(self) -> Sign {
        match self {
            TradeSide::Bi => 1,
            TradeSide::Si => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TradeSide::Bi => "BI",
            TradeSide::Si => "SI",
        }
    }
}

impl FromStr for TradeSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" | "buy" => Ok(TradeSide::Bi),
            "si" | "sell" => Ok(TradeSide::Si),
            other => Err(Error::InvalidInput(format!("unknown side `{other}`, expected bi or si"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrade {
    pub security_id: u32,
    pub day: i64,
    pub omega: f64,
    /// Signed log mid change.
    pub delta_p: f64,
    pub sign: Sign,
}

/// `omega_ij = v_ij / sum_k v_kj * (sum_j T_j / N)`, with `T_j` the number of
/// trades on day `j` and `N` the number of days.
pub fn normalize_volumes(days: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n_days = days.len();
    if n_days == 0 {
        return Ok(Vec::new());
    }
    let total_trades: usize = days.iter().map(Vec::len).sum();
    let scale = total_trades as f64 / n_days as f64;
    days.iter()
        .enumerate()
        .map(|(j, vols)| {
            let sum: f64 = vols.iter().sum();
            if !(sum > 0.0) {
                return Err(Error::ZeroVolumeDay { day: j });
            }
            Ok(vols.iter().map(|v| v / sum * scale).collect())
        })
        .collect()
}

/// Counts of trades left out of the normalized set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeSkips {
    pub no_impact: usize,
    pub unsigned: usize,
}

/// Normalized volume of every trade, in input order. All trades of a day
/// enter the normalization.
pub fn trade_omegas(impacts: &[TradeImpact]) -> Result<Vec<f64>> {
    let mut by_day: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, t) in impacts.iter().enumerate() {
        by_day.entry(t.timestamp.day()).or_default().push(i);
    }
    let vols: Vec<Vec<f64>> = by_day
        .values()
        .map(|idx| idx.iter().map(|&i| impacts[i].volume).collect())
        .collect();
    let mut out = vec![0.0; impacts.len()];
    for (idx, om) in by_day.values().zip(normalize_volumes(&vols)?) {
        for (&i, omega) in idx.iter().zip(om) {
            out[i] = omega;
        }
    }
    Ok(out)
}

/// Attaches omega to every trade with a defined impact and sign. All trades
/// of a day enter the volume normalization, including those skipped.
/// `signs` overrides the signs carried by the trades when given.
pub fn normalized_trades(
    security_id: u32,
    impacts: &[TradeImpact],
    signs: Option<&[Option<Sign>]>,
) -> Result<(Vec<NormalizedTrade>, NormalizeSkips)> {
    let omegas = trade_omegas(impacts)?;
    let mut out = Vec::new();
    let mut skips = NormalizeSkips::default();
    for (i, (t, &omega)) in impacts.iter().zip(&omegas).enumerate() {
        let sign = match signs {
            Some(s) => s[i],
            None => t.sign,
        };
        let Some(dp) = t.delta_p else {
            skips.no_impact += 1;
            continue;
        };
        let Some(sign) = sign else {
            skips.unsigned += 1;
            continue;
        };
        out.push(NormalizedTrade {
            security_id,
            day: t.timestamp.day(),
            omega,
            delta_p: dp,
            sign,
        });
    }
    Ok((out, skips))
}

/// Average daily value traded in Rand over the days present in the stream.
pub fn average_daily_value(l1: &[L1Record], unit: PriceUnit) -> f64 {
    let mut days: BTreeMap<i64, f64> = BTreeMap::new();
    for r in l1 {
        let v = days.entry(r.timestamp.day()).or_insert(0.0);
        if r.event_type == EventType::Trade {
            if let (Some(p), Some(q)) = (r.trade, r.trade_vol) {
                *v += unit.to_rand(p) * q;
            }
        }
    }
    if days.is_empty() {
        return 0.0;
    }
    days.values().sum::<f64>() / days.len() as f64
}

/// Logarithmically spaced bins over `[lo, hi]`; each bin is half-open except
/// the last, which includes `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBins {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl LogBins {
    pub const IMPACT: LogBins = LogBins {
        lo: 1e-3,
        hi: 10.0,
        n: 20,
    };
    pub const CALIBRATION: LogBins = LogBins {
        lo: 0.1,
        hi: 10.0,
        n: 20,
    };

    pub fn edges(&self) -> Vec<f64> {
        let (a, b) = (self.lo.log10(), self.hi.log10());
        (0..=self.n)
            .map(|k| {
                if k == self.n {
                    self.hi
                } else {
                    10f64.powf(a + (b - a) * k as f64 / self.n as f64)
                }
            })
            .collect()
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        if x == self.hi {
            return Some(self.n - 1);
        }
        let (a, b) = (self.lo.log10(), self.hi.log10());
        let mut k = ((x.log10() - a) / (b - a) * self.n as f64).floor() as usize;
        k = k.min(self.n - 1);
        // guard against rounding at the edges
        let edges = |j: usize| 10f64.powf(a + (b - a) * j as f64 / self.n as f64);
        if k > 0 && x < edges(k) {
            k -= 1;
        } else if k + 1 < self.n && x >= edges(k + 1) {
            k += 1;
        }
        Some(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` marks an empty bin.
    pub omega_mean: Option<f64>,
    pub dp_mean: Option<f64>,
    pub envelope: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub side: TradeSide,
    pub bins: Vec<BinStat>,
}

impl ImpactCurve {
    /// `(omega*, dp*)` of the non-empty bins.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.bins
            .iter()
            .filter_map(|b| Some((b.omega_mean?, b.dp_mean?)))
            .collect()
    }
}

fn side_value(t: &NormalizedTrade, side: TradeSide) -> f64 {
    match side {
        TradeSide::Bi => t.delta_p,
        TradeSide::Si => t.delta_p.abs(),
    }
}

fn bin_means<'a, I>(trades: I, side: TradeSide, bins: LogBins) -> Vec<(usize, f64, f64)>
where
    I: IntoIterator<Item = &'a NormalizedTrade>,
{
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); bins.n];
    for t in trades {
        if t.sign != side.sign() {
            continue;
        }
        if let Some(k) = bins.index(t.omega) {
            acc[k].0 += 1;
            acc[k].1 += t.omega;
            acc[k].2 += side_value(t, side);
        }
    }
    acc
}

/// Per-bin means of omega and impact for trades of one side. Seller-initiated
/// impacts enter as magnitudes.
pub fn impact_curve(trades: &[NormalizedTrade], side: TradeSide, bins: LogBins) -> ImpactCurve {
    let edges = bins.edges();
    let acc = bin_means(trades, side, bins);
    ImpactCurve {
        side,
        bins: acc
            .iter()
            .enumerate()
            .map(|(k, &(n, so, sd))| BinStat {
                lo: edges[k],
                hi: edges[k + 1],
                count: n,
                omega_mean: (n > 0).then(|| so / n as f64),
                dp_mean: (n > 0).then(|| sd / n as f64),
                envelope: None,
            })
            .collect(),
    }
}

/// Percentile envelope of the per-bin mean impact under resampling of the
/// trade set with replacement. Replicate `r` draws from stream `r` of the
/// seed, so the result does not depend on thread scheduling.
pub fn bootstrap_envelope(
    trades: &[NormalizedTrade],
    side: TradeSide,
    bins: LogBins,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Vec<Option<(f64, f64)>> {
    let pool: Vec<&NormalizedTrade> = trades.iter().filter(|t| t.sign == side.sign()).collect();
    if pool.is_empty() || n_boot == 0 {
        return vec![None; bins.n];
    }
    let reps: Vec<Vec<Option<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let sample = (0..pool.len()).map(|_| pool[rng.random_range(0..pool.len())]);
            bin_means(sample, side, bins)
                .into_iter()
                .map(|(n, _, sd)| (n > 0).then(|| sd / n as f64))
                .collect()
        })
        .collect();
    let tail = (1.0 - level) / 2.0;
    (0..bins.n)
        .map(|k| {
            let mut v: Vec<f64> = reps.iter().filter_map(|r| r[k]).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some((quantile(&v, tail), quantile(&v, 1.0 - tail)))
        })
        .collect()
}

/// Curve with bootstrap envelopes attached.
pub fn impact_curve_with_envelope(
    trades: &[NormalizedTrade],
    side: TradeSide,
    bins: LogBins,
    n_boot: usize,
    seed: u64,
) -> ImpactCurve {
    let mut c = impact_curve(trades, side, bins);
    for (b, e) in c
        .bins
        .iter_mut()
        .zip(bootstrap_envelope(trades, side, bins, n_boot, 0.95, seed))
    {
        b.envelope = e;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidityFit {
    pub alpha: f64,
    pub lambda: f64,
    pub n_bins: usize,
    /// Bins in range dropped for a non-positive impact.
    pub excluded: usize,
}

/// Least squares of `ln dp*` on `ln omega*` over bins with `omega*` in
/// `[lo, hi]`: slope is alpha, intercept is `-ln lambda`.
pub fn fit_liquidity_exponent(points: &[(f64, f64)], lo: f64, hi: f64) -> Result<LiquidityFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for &(w, dp) in points {
        if !(w >= lo && w <= hi) {
            continue;
        }
        if !(dp > 0.0) {
            excluded += 1;
            continue;
        }
        xs.push(w.ln());
        ys.push(dp.ln());
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "liquidity fit needs at least 3 positive bins in range, found {n}"
        )));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all bins share one volume".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    Ok(LiquidityFit {
        alpha,
        lambda: (-intercept).exp(),
        n_bins: n,
        excluded,
    })
}

/// One security's impact curve and liquidity proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityCurve {
    pub security_id: u32,
    pub c: f64,
    /// `(omega*, dp*)` per non-empty bin.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterConfig {
    pub bins: LogBins,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    /// Securities a calibration bin needs before it enters the objective.
    pub min_securities: usize,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            bins: LogBins::CALIBRATION,
            grid_lo: -2.0,
            grid_hi: 2.0,
            grid_step: 0.05,
            min_securities: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterFit {
    pub delta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Smallest objective value seen on the grid.
    pub grid_epsilon: f64,
    pub grid_delta: f64,
    pub grid_gamma: f64,
    pub bins_used: usize,
    pub c: BTreeMap<u32, f64>,
}

impl MasterFit {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "delta": self.delta,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "bins_used": self.bins_used,
            "C": self.c.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        })
    }

    /// `delta = 7.75e-5, gamma = 0.163163` style caption text.
    pub fn caption(&self) -> String {
        format!("delta = {}, gamma = {}", fmt_sig(self.delta), fmt_sig(self.gamma))
    }
}

fn fmt_sig(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:.2e}")
    } else {
        format!("{x:.6}")
    }
}

fn geometric_mean(cs: &[f64]) -> f64 {
    (cs.iter().map(|c| c.ln()).sum::<f64>() / cs.len() as f64).exp()
}

/// Liquidity proxies divided by their geometric mean. Rescaling by the
/// normalized proxy keeps the collapsed curve in the calibration window and
/// only moves the common factor `G^delta`, `G^gamma`.
fn normalized_c(curves: &[SecurityCurve]) -> Vec<f64> {
    let cs: Vec<f64> = curves.iter().map(|c| c.c).collect();
    let g = geometric_mean(&cs);
    cs.iter().map(|c| c / g).collect()
}

fn check_curves(curves: &[SecurityCurve]) -> Result<()> {
    if curves.len() < 2 {
        return Err(Error::Degenerate("need at least two securities".into()));
    }
    if curves.iter().any(|c| !(c.c > 0.0 && c.c.is_finite())) {
        return Err(Error::InvalidInput("liquidity proxy C must be positive".into()));
    }
    let c0 = curves[0].c;
    if curves.iter().all(|c| ((c.c - c0) / c0).abs() < 1e-12) {
        return Err(Error::Degenerate(
            "all securities share one C; the objective is flat in (delta, gamma)".into(),
        ));
    }
    Ok(())
}

/// Points after `x = omega* * C^delta`, `y = dp* * C^gamma`, with C divided
/// by its geometric mean across securities.
pub fn rescale_curves(curves: &[SecurityCurve], delta: f64, gamma: f64) -> Vec<SecurityCurve> {
    let cn = normalized_c(curves);
    curves
        .iter()
        .zip(cn)
        .map(|(c, k)| SecurityCurve {
            security_id: c.security_id,
            c: c.c,
            points: c
                .points
                .iter()
                .map(|&(x, y)| (x * k.powf(delta), y * k.powf(gamma)))
                .collect(),
        })
        .collect()
}

struct Objective {
    /// log of normalized C per security
    log_c: Vec<f64>,
    points: Vec<Vec<(f64, f64)>>,
    cfg: MasterConfig,
}

impl Objective {
    fn new(curves: &[SecurityCurve], cfg: MasterConfig) -> Self {
        Self {
            log_c: normalized_c(curves).iter().map(|c| c.ln()).collect(),
            points: curves.iter().map(|c| c.points.clone()).collect(),
            cfg,
        }
    }

    /// Mean over qualifying bins of `(sd_x/mean_x)^2 + (sd_y/mean_y)^2`;
    /// infinite when no bin qualifies.
    fn eval(&self, delta: f64, gamma: f64) -> (f64, usize) {
        let n = self.cfg.bins.n;
        let mut sums = vec![[0.0f64; 5]; n];
        let mut secs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (s, pts) in self.points.iter().enumerate() {
            let sx = (delta * self.log_c[s]).exp();
            let sy = (gamma * self.log_c[s]).exp();
            for &(w, dp) in pts {
                let (x, y) = (w * sx, dp * sy);
                if let Some(k) = self.cfg.bins.index(x) {
                    let a = &mut sums[k];
                    a[0] += 1.0;
                    a[1] += x;
                    a[2] += x * x;
                    a[3] += y;
                    a[4] += y * y;
                    secs[k].insert(s);
                }
            }
        }
        let mut total = 0.0;
        let mut used = 0;
        for (a, s) in sums.iter().zip(&secs) {
            if s.len() < self.cfg.min_securities {
                continue;
            }
            let m = a[0];
            let (mx, my) = (a[1] / m, a[3] / m);
            if mx.abs() < 1e-300 || my.abs() < 1e-300 {
                continue;
            }
            let vx = (a[2] / m - mx * mx).max(0.0);
            let vy = (a[4] / m - my * my).max(0.0);
            total += vx / (mx * mx) + vy / (my * my);
            used += 1;
        }
        if used == 0 {
            (f64::INFINITY, 0)
        } else {
            (total / used as f64, used)
        }
    }
}

/// Objective value at `(delta, gamma)`; `None` when no bin qualifies.
pub fn master_objective(
    curves: &[SecurityCurve],
    delta: f64,
    gamma: f64,
    cfg: MasterConfig,
) -> Option<f64> {
    let (v, _) = Objective::new(curves, cfg).eval(delta, gamma);
    v.is_finite().then_some(v)
}

/// Grid points probed by [`calibrate_master`].
pub fn master_grid(cfg: &MasterConfig) -> Vec<f64> {
    let n = ((cfg.grid_hi - cfg.grid_lo) / cfg.grid_step).round() as usize;
    (0..=n)
        .map(|k| cfg.grid_lo + k as f64 * cfg.grid_step)
        .collect()
}

/// Coarse grid search over `(delta, gamma)` followed by a simplex refinement
/// from the best grid point.
pub fn calibrate_master(curves: &[SecurityCurve], cfg: MasterConfig) -> Result<MasterFit> {
    check_curves(curves)?;
    let obj = Objective::new(curves, cfg);
    let grid = master_grid(&cfg);
    let (grid_eps, gd, gg) = grid
        .par_iter()
        .flat_map_iter(|&d| grid.iter().map(move |&g| (d, g)))
        .map(|(d, g)| (obj.eval(d, g).0, d, g))
        .reduce(
            || (f64::INFINITY, f64::NAN, f64::NAN),
            |a, b| {
                // deterministic tie-break on the coordinates
                match a.0.total_cmp(&b.0) {
                    std::cmp::Ordering::Less => a,
                    std::cmp::Ordering::Greater => b,
                    std::cmp::Ordering::Equal => {
                        if (a.1, a.2) <= (b.1, b.2) {
                            a
                        } else {
                            b
                        }
                    }
                }
            },
        );
    if !grid_eps.is_finite() {
        return Err(Error::Degenerate(
            "no calibration bin holds points from enough securities".into(),
        ));
    }
    let m = nelder_mead(
        |x| obj.eval(x[0], x[1]).0,
        &[gd, gg],
        cfg.grid_step,
        1e-14,
        2_000,
    );
    let (delta, gamma, eps) = if m.value < grid_eps {
        (m.x[0], m.x[1], m.value)
    } else {
        (gd, gg, grid_eps)
    };
    Ok(MasterFit {
        delta,
        gamma,
        epsilon: eps,
        grid_epsilon: grid_eps,
        grid_delta: gd,
        grid_gamma: gg,
        bins_used: obj.eval(delta, gamma).1,
        c: curves.iter().map(|c| (c.security_id, c.c)).collect(),
    })
}

/// Trades rescaled onto the master axes; feed to [`impact_curve_with_envelope`]
/// for the pooled master curve.
pub fn rescale_trades(
    groups: &[(f64, Vec<NormalizedTrade>)],
    delta: f64,
    gamma: f64,
) -> Vec<NormalizedTrade> {
    let cs: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let g = geometric_mean(&cs);
    groups
        .iter()
        .flat_map(|(c, ts)| {
            let k = c / g;
            let (sx, sy) = (k.powf(delta), k.powf(gamma));
            ts.iter().map(move |t| NormalizedTrade {
                omega: t.omega * sx,
                delta_p: t.delta_p * sy,
                ..*t
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{impact_family, FamilySpec};

    fn nt(omega: f64, dp: f64, sign: Sign) -> NormalizedTrade {
        NormalizedTrade {
            security_id: 1,
            day: 0,
            omega,
            delta_p: dp,
            sign,
        }
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_volumes(&[vec![5.0; 8]]).unwrap();
        assert!(w[0].iter().all(|&x| (x - 1.0).abs() < 1e-15));

        let mut d1 = vec![0.0; 10];
        d1[0] = 300.0;
        let d2 = vec![1.0; 30];
        let w = normalize_volumes(&[d1, d2]).unwrap();
        assert_eq!(w[0][0], 20.0);

        assert!(matches!(
            normalize_volumes(&[vec![1.0], vec![0.0, 0.0]]),
            Err(Error::ZeroVolumeDay { day: 1 })
        ));
    }

    #[test]
    fn bins_partition() {
        let b = LogBins::IMPACT;
        let e = b.edges();
        assert_eq!(e.len(), 21);
        assert_eq!(e[0], 1e-3);
        assert_eq!(e[20], 10.0);
        assert_eq!(b.index(1e-3), Some(0));
        assert_eq!(b.index(10.0), Some(19));
        assert_eq!(b.index(10.000001), None);
        assert_eq!(b.index(0.0009), None);
        for k in 1..20 {
            assert_eq!(b.index(e[k]), Some(k), "edge {k}");
        }
    }

    #[test]
    fn curve_means_and_empty_bins() {
        let ts = [nt(1.0, 0.01, 1), nt(1.0, 0.03, 1), nt(1.0, -0.5, -1)];
        let c = impact_curve(&ts, TradeSide::Bi, LogBins::IMPACT);
        let k = LogBins::IMPACT.index(1.0).unwrap();
        assert!((c.bins[k].dp_mean.unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(c.bins[0].dp_mean, None);
        let s = impact_curve(&ts, TradeSide::Si, LogBins::IMPACT);
        assert_eq!(s.bins[k].dp_mean, Some(0.5));
    }

    #[test]
    fn identical_trades_give_point_envelope() {
        let ts = vec![nt(1.0, 0.02, 1); 50];
        let e = bootstrap_envelope(&ts, TradeSide::Bi, LogBins::IMPACT, 200, 0.95, 3);
        let k = LogBins::IMPACT.index(1.0).unwrap();
        let point = impact_curve(&ts, TradeSide::Bi, LogBins::IMPACT).bins[k].dp_mean.unwrap();
        assert_eq!(e[k], Some((point, point)));
        assert_eq!(
            e,
            bootstrap_envelope(&ts, TradeSide::Bi, LogBins::IMPACT, 200, 0.95, 3)
        );
    }

    #[test]
    fn liquidity_fit_exact_and_flat() {
        let pts: Vec<(f64, f64)> = LogBins::CALIBRATION
            .edges()
            .iter()
            .map(|&w| (w, w.powf(0.5) / 10.0))
            .collect();
        let f = fit_liquidity_exponent(&pts, 0.1, 10.0).unwrap();
        assert!((f.alpha - 0.5).abs() < 1e-10);
        assert!((f.lambda - 10.0).abs() < 1e-9);

        let flat: Vec<(f64, f64)> = pts.iter().map(|&(w, _)| (w, 0.004)).collect();
        let f = fit_liquidity_exponent(&flat, 0.1, 10.0).unwrap();
        assert!(f.alpha.abs() < 1e-10);
        assert!((f.lambda - 250.0).abs() < 1e-8);
        assert!(fit_liquidity_exponent(&pts[..2], 0.1, 10.0).is_err());
    }

    fn family_curves(f: impl Fn(f64) -> f64, c_equal: bool) -> Vec<SecurityCurve> {
        let spec = FamilySpec {
            seed: 5,
            n_securities: 6,
            c_span: if c_equal { 1.0 } else { 100.0 },
            c_center: 1e6,
            delta: 0.5,
            gamma: 0.3,
            trades_per_security: 20_000,
            noise: 0.02,
            omega_lo: 1e-3,
            omega_hi: 100.0,
        };
        impact_family(&spec, f)
            .into_iter()
            .map(|m| SecurityCurve {
                security_id: m.security_id,
                c: m.c,
                points: impact_curve(&m.trades, TradeSide::Bi, LogBins::IMPACT).points(),
            })
            .collect()
    }

    #[test]
    fn equal_c_is_degenerate() {
        let curves = family_curves(|u| u.powf(0.3), true);
        assert!(matches!(
            calibrate_master(&curves, MasterConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pure_power_law_lands_on_ridge() {
        // with f(u) = u^0.3 any (delta, gamma) with gamma - 0.3 delta = 0.15
        // collapses the family
        let curves = family_curves(|u| u.powf(0.3), false);
        let fit = calibrate_master(&curves, MasterConfig::default()).unwrap();
        assert!((fit.gamma - 0.3 * fit.delta - 0.15).abs() < 0.03, "{fit:?}");
    }

    #[test]
    fn curved_family_recovers_exponents() {
        let curves = family_curves(|u| (1.0 + u).ln(), false);
        let fit = calibrate_master(&curves, MasterConfig::default()).unwrap();
        assert!((fit.delta - 0.5).abs() < 0.1, "{fit:?}");
        assert!((fit.gamma - 0.3).abs() < 0.1, "{fit:?}");
        assert!(fit.epsilon <= fit.grid_epsilon);
    }
}

