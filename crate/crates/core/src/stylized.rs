//! Autocorrelations, distribution fits, QQ/CCDF data and intraday
//! seasonality.

use std::collections::BTreeMap;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::l1::{EventType, L1Record, Sign};
use crate::taq::{MicroMode, QuoteTracker};
use crate::time::{LocalTime, Session, NANOS_PER_MIN};

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// `rho[k]` is the autocorrelation at lag `k + 1`.
    pub rho: Vec<f64>,
    /// Half-width of the white-noise 95% band.
    pub band: f64,
    pub n: usize,
}

impl AcfResult {
    pub fn lags(&self) -> impl Iterator<Item = usize> + '_ {
        1..=self.rho.len()
    }
}

/// Sample autocorrelation at lags `1..=max_lag` with the biased (divide by
/// n) covariance, computed through a zero-padded FFT.
pub fn acf(x: &[f64], max_lag: usize) -> Result<AcfResult> {
    let n = x.len();
    if n <= max_lag {
        return Err(Error::InvalidInput(format!(
            "series of length {n} is too short for {max_lag} lags"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if !(c0 > 0.0) {
        return Err(Error::ConstantSeries);
    }
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let norm = buf[0].re;
    let rho = (1..=max_lag).map(|k| buf[k].re / norm).collect();
    Ok(AcfResult {
        rho,
        band: Z_975 / (n as f64).sqrt(),
        n,
    })
}

/// ACF of a +1/-1 trade-sign sequence.
pub fn orderflow_acf(signs: &[Sign], max_lag: usize) -> Result<AcfResult> {
    let x: Vec<f64> = signs.iter().map(|&s| s as f64).collect();
    acf(&x, max_lag)
}

/// Maximum-likelihood normal fit: mean and the 1/n variance.
pub fn fit_normal(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::InvalidInput("normal fit needs at least two values".into()));
    }
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub x_min: f64,
    pub alpha: f64,
    pub n_tail: usize,
}

/// `alpha = 1 + n / sum ln(x_i / x_min)` over the values at or above `x_min`.
pub fn fit_powerlaw_tail(values: &[f64], x_min: f64) -> Result<PowerLawFit> {
    if !(x_min > 0.0) {
        return Err(Error::InvalidInput(format!("x_min must be positive, got {x_min}")));
    }
    let mut n = 0usize;
    let mut s = 0.0;
    for &v in values {
        if v >= x_min {
            n += 1;
            s += (v / x_min).ln();
        }
    }
    if n == 0 {
        return Err(Error::EmptyTail);
    }
    Ok(PowerLawFit {
        x_min,
        alpha: 1.0 + n as f64 / s,
        n_tail: n,
    })
}

/// Values of the selected tail, as positive magnitudes for the lower tail.
fn tail_values(x: &[f64], tail: Tail) -> Vec<f64> {
    match tail {
        Tail::Upper => x.to_vec(),
        Tail::Lower => x.iter().map(|v| -v).collect(),
    }
}

/// Power-law fit of the tail beyond a percentile: above `percentile` for the
/// upper tail, below `1 - percentile` (sign-flipped) for the lower tail.
pub fn fit_powerlaw(x: &[f64], percentile: f64, tail: Tail) -> Result<PowerLawFit> {
    if x.is_empty() {
        return Err(Error::EmptyTail);
    }
    let mut v = tail_values(x, tail);
    v.sort_by(f64::total_cmp);
    let x_min = quantile(&v, percentile);
    fit_powerlaw_tail(&v, x_min)
}

pub fn powerlaw_quantile(p: f64, alpha: f64, x_min: f64) -> f64 {
    x_min * (1.0 - p).powf(-1.0 / (alpha - 1.0))
}

/// `(x, empirical 1-F(x), fitted (x/x_min)^(1-alpha))` for the tail values of
/// a fit, sorted ascending.
pub fn ccdf(x: &[f64], fit: &PowerLawFit, tail: Tail) -> Vec<(f64, f64, f64)> {
    let mut v: Vec<f64> = tail_values(x, tail)
        .into_iter()
        .filter(|&v| v >= fit.x_min)
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &xi)| {
            (
                xi,
                (n - i as f64) / n,
                (xi / fit.x_min).powf(1.0 - fit.alpha),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Normal { mean: f64, var: f64 },
    PowerLaw { alpha: f64, x_min: f64 },
}

/// `(theoretical, empirical)` quantile pairs at plotting positions
/// `(i - 0.5) / n`.
pub fn qq_data(sample: &[f64], reference: Reference) -> Vec<(f64, f64)> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let normal = match reference {
        Reference::Normal { mean, var } if var > 0.0 => Normal::new(mean, var.sqrt()).ok(),
        _ => None,
    };
    s.iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = (i as f64 + 0.5) / n;
            let t = match reference {
                Reference::Normal { mean, .. } => normal.as_ref().map_or(mean, |d| d.inverse_cdf(p)),
                Reference::PowerLaw { alpha, x_min } => powerlaw_quantile(p, alpha, x_min),
            };
            (t, e)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonKind {
    Volume,
    AbsReturn,
    Spread,
}

impl SeasonKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeasonKind::Volume => "volume",
            SeasonKind::AbsReturn => "absret",
            SeasonKind::Spread => "spread",
        }
    }
}

impl FromStr for SeasonKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "volume" => Ok(SeasonKind::Volume),
            "absret" | "returns" | "abs-returns" => Ok(SeasonKind::AbsReturn),
            "spread" => Ok(SeasonKind::Spread),
            other => Err(Error::InvalidInput(format!("unknown seasonality kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityCurve {
    pub kind: SeasonKind,
    pub bucket_minutes: u32,
    /// Average over days of the per-day normalized bucket shares.
    pub values: Vec<f64>,
    pub per_day: Vec<(i64, Vec<f64>)>,
    pub days_skipped: usize,
}

fn bucket_of(t: LocalTime, session: Session, width: i64) -> Option<usize> {
    session
        .contains(t)
        .then(|| ((t.time_of_day() - session.start_ns) / width) as usize)
}

fn shares(v: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    (total > 0.0).then(|| v.iter().map(|x| x / total).collect())
}

/// Intraday profile over fixed buckets. Each day is normalized to shares
/// that sum to one, then days are averaged bucket by bucket. Days whose total
/// is zero are skipped and counted.
///
/// Volume: per-security shares combined with the security's daily trade
/// count as weight. Absolute returns: tick microprice returns pooled across
/// securities. Spread: per-security shares of the bucket mean `|a - b|`,
/// averaged across securities.
pub fn seasonality(
    streams: &[Vec<L1Record>],
    kind: SeasonKind,
    session: Session,
    bucket_minutes: u32,
    mode: MicroMode,
) -> Result<SeasonalityCurve> {
    if bucket_minutes == 0 {
        return Err(Error::InvalidInput("bucket width must be positive".into()));
    }
    let width = bucket_minutes as i64 * NANOS_PER_MIN;
    let nb = ((session.length_ns() + width - 1) / width) as usize;

    // day -> per security bucket vectors
    let mut days: BTreeMap<i64, Vec<(Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for (s, recs) in streams.iter().enumerate() {
        let mut tracker = QuoteTracker::new(mode);
        let mut last_micro: Option<(i64, f64)> = None;
        for r in recs {
            tracker.observe(r);
            let d = r.timestamp.day();
            let entry = days.entry(d).or_insert_with(|| {
                vec![(vec![0.0; nb], vec![0.0; nb]); streams.len()]
            });
            let (val, cnt) = &mut entry[s];
            let Some(b) = bucket_of(r.timestamp, session, width) else {
                continue;
            };
            match kind {
                SeasonKind::Volume => {
                    if r.event_type == EventType::Trade {
                        val[b] += r.trade_vol.unwrap_or(0.0);
                        cnt[b] += 1.0;
                    }
                }
                SeasonKind::AbsReturn => {
                    if r.event_type.is_quote() {
                        let p = tracker.point(r.timestamp);
                        match p.micro {
                            Some(m) => {
                                if let Some((pd, pm)) = last_micro {
                                    if pd == d {
                                        val[b] += (m.ln() - pm.ln()).abs();
                                        cnt[b] += 1.0;
                                    }
                                }
                                last_micro = Some((d, m));
                            }
                            None => last_micro = None,
                        }
                    }
                }
                SeasonKind::Spread => {
                    if r.event_type.is_quote() {
                        if let Some(sp) = tracker.point(r.timestamp).spread() {
                            val[b] += sp.abs();
                            cnt[b] += 1.0;
                        }
                    }
                }
            }
        }
    }

    let mut per_day = Vec::new();
    let mut skipped = 0;
    for (d, secs) in days {
        let curve = match kind {
            SeasonKind::Volume => {
                let mut acc = vec![0.0; nb];
                let mut wsum = 0.0;
                for (val, cnt) in &secs {
                    let Some(sh) = shares(val) else { continue };
                    let w: f64 = cnt.iter().sum();
                    for (a, x) in acc.iter_mut().zip(sh) {
                        *a += w * x;
                    }
                    wsum += w;
                }
                (wsum > 0.0).then(|| acc.iter().map(|a| a / wsum).collect::<Vec<_>>())
            }
            SeasonKind::AbsReturn => {
                let mut pooled = vec![0.0; nb];
                for (val, _) in &secs {
                    for (p, v) in pooled.iter_mut().zip(val) {
                        *p += v;
                    }
                }
                shares(&pooled)
            }
            SeasonKind::Spread => {
                let mut acc = vec![0.0; nb];
                let mut k = 0usize;
                for (val, cnt) in &secs {
                    let means: Vec<f64> = val
                        .iter()
                        .zip(cnt)
                        .map(|(v, c)| if *c > 0.0 { v / c } else { 0.0 })
                        .collect();
                    let Some(sh) = shares(&means) else { continue };
                    for (a, x) in acc.iter_mut().zip(sh) {
                        *a += x;
                    }
                    k += 1;
                }
                (k > 0).then(|| acc.iter().map(|a| a / k as f64).collect::<Vec<_>>())
            }
        };
        match curve {
            Some(c) => per_day.push((d, c)),
            None => skipped += 1,
        }
    }
    let mut values = vec![0.0; nb];
    for (_, c) in &per_day {
        for (v, x) in values.iter_mut().zip(c) {
            *v += x / per_day.len() as f64;
        }
    }
    Ok(SeasonalityCurve {
        kind,
        bucket_minutes,
        values,
        per_day,
        days_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    pub(crate) fn naive_acf(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        (1..=max_lag)
            .map(|l| (0..n - l).map(|t| (x[t] - m) * (x[t + l] - m)).sum::<f64>() / c0)
            .collect()
    }

    #[test]
    fn acf_matches_naive() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 113) as f64 - 50.0).collect();
        let a = acf(&x, 100).unwrap();
        for (r, o) in a.rho.iter().zip(naive_acf(&x, 100)) {
            assert!((r - o).abs() < 1e-12);
        }
        assert!((a.band - Z_975 / (500f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn acf_alternating_and_constant() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = acf(&x, 2).unwrap();
        assert!((a.rho[0] + 1.0).abs() < 2e-3);
        assert!(matches!(acf(&[1.0; 10], 2), Err(Error::ConstantSeries)));
        assert!(orderflow_acf(&[1; 10], 2).is_err());
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn acf_single_flip() {
        let mut s = vec![1i8; 2_000];
        s[1_000] = -1;
        let a = orderflow_acf(&s, 1).unwrap();
        let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        assert!((a.rho[0] - naive_acf(&x, 1)[0]).abs() < 1e-12);
        // the two products touching the flip outweigh the rest:
        // sum d_t d_(t+1) = -(4n + 4) / n^2
        let n = 2_000.0;
        let c0 = (n - 1.0) * (2.0 / n) * (2.0 / n) + (2.0 / n - 2.0) * (2.0 / n - 2.0);
        assert!((a.rho[0] - (-(4.0 * n + 4.0) / (n * n) / c0)).abs() < 1e-12);
    }

    #[test]
    fn normal_fit_cases() {
        assert_eq!(fit_normal(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        assert_eq!(fit_normal(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
        assert!(fit_normal(&[1.0]).is_err());
    }

    #[test]
    fn powerlaw_closed_forms() {
        let f = fit_powerlaw_tail(&[E, E, E], 1.0).unwrap();
        assert!((f.alpha - 2.0).abs() < 1e-12);
        let e2 = E * E;
        let f = fit_powerlaw_tail(&[e2; 4], 1.0).unwrap();
        assert!((f.alpha - 1.5).abs() < 1e-12);
        assert!(matches!(fit_powerlaw_tail(&[0.5], 1.0), Err(Error::EmptyTail)));
    }

    #[test]
    fn lower_tail_is_mirror_of_upper() {
        let x: Vec<f64> = (1..=400).map(|i| ((i as f64) * 0.37).sin() * i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = fit_powerlaw(&x, 0.95, Tail::Lower).unwrap();
        let b = fit_powerlaw(&neg, 0.95, Tail::Upper).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.95) - 3.85).abs() < 1e-12);
    }

    #[test]
    fn qq_examples() {
        let q = qq_data(&[5.0], Reference::Normal { mean: 5.0, var: 1.0 });
        assert_eq!(q.len(), 1);
        assert!((q[0].0 - 5.0).abs() < 1e-9);
        let n = 200;
        let at_ref: Vec<f64> = (0..n)
            .map(|i| powerlaw_quantile((i as f64 + 0.5) / n as f64, 2.5, 1.0))
            .collect();
        for (t, e) in qq_data(&at_ref, Reference::PowerLaw { alpha: 2.5, x_min: 1.0 }) {
            assert!((t - e).abs() < 1e-12 * t.max(1.0));
        }
    }

    #[test]
    fn ccdf_shape() {
        let v = [1.0, 2.0, 4.0, 8.0];
        let fit = fit_powerlaw_tail(&v, 1.0).unwrap();
        let c = ccdf(&v, &fit, Tail::Upper);
        assert_eq!(c[0].0, 1.0);
        assert_eq!(c[0].1, 1.0);
        assert_eq!(c[3].1, 0.25);
        assert_eq!(c[0].2, 1.0);
    }

    fn trade(h: u32, m: u32, vol: f64, day: u32) -> L1Record {
        L1Record::trade(
            LocalTime::from_ymd_hms(2020, 3, day, h, m, 0).unwrap(),
            100.0,
            vol,
            Some(1),
        )
    }

    #[test]
    fn volume_seasonality_cases() {
        let s = Session::default();
        let one = vec![trade(9, 5, 10.0, 10), trade(9, 6, 30.0, 10)];
        let c = seasonality(&[one.clone()], SeasonKind::Volume, s, 10, MicroMode::OwnSide).unwrap();
        assert_eq!(c.values.len(), 47);
        assert_eq!(c.values[0], 1.0);
        assert!(c.values[1..].iter().all(|&v| v == 0.0));

        let mut two = one.clone();
        two.extend(vec![trade(9, 5, 10.0, 11), trade(9, 6, 30.0, 11)]);
        let c2 = seasonality(&[two], SeasonKind::Volume, s, 10, MicroMode::OwnSide).unwrap();
        assert_eq!(c2.values, c.values);

        let uniform: Vec<_> = (0..47)
            .map(|k| trade(9 + (k * 10) / 60, (k * 10) % 60, 5.0, 10))
            .collect();
        let c = seasonality(&[uniform], SeasonKind::Volume, s, 10, MicroMode::OwnSide).unwrap();
        for v in &c.values {
            assert!((v - 1.0 / 47.0).abs() < 1e-15);
        }
        let sum: f64 = c.per_day[0].1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
