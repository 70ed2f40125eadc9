//! Before/after change detection.
//!
//! The workflow for every series: split its points into the before and after
//! periods (transition excluded), run the rank test in both directions, and
//! quantify the change as the after/before ratio — of medians for sub-daily
//! series, which are bursty, and of means for daily series.

pub mod wmw;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

pub use wmw::{wmw_test, Direction, WmwOutcome};

use crate::attrib::{
    classify_ip_role, DirectedFlow, IpRole, OrgCategory, Orientation, PrefixDirectory, PrefixId,
    ServicePorts,
};
use crate::classify::{AppLabel, ALL_LABELS};
use crate::error::{Error, Result};
use crate::flow::PROTO_ICMP;
use crate::store::{LabeledStore, RowKey};
use crate::time::{BinWidth, HoursClass, Period, StudyCalendar, Timestamp, MS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    FiveMin,
    Hourly,
    Daily,
    Weekly,
}

impl Granularity {
    /// Sub-daily values are bursty; their ratio uses medians. Daily and
    /// coarser use means.
    pub fn ratio_basis(self) -> RatioBasis {
        match self {
            Granularity::FiveMin | Granularity::Hourly => RatioBasis::Median,
            Granularity::Daily | Granularity::Weekly => RatioBasis::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioBasis {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioTag {
    /// Finite ratio from a nonzero before statistic.
    Normal,
    /// No before traffic, some after traffic.
    New,
    /// Zero on both sides.
    Undefined,
}

/// Outcome of one before/after comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeResult {
    pub direction: Direction,
    pub p_less: f64,
    pub p_greater: f64,
    /// after/before, on the basis below. Infinite or NaN when tagged.
    pub ratio: f64,
    pub ratio_tag: RatioTag,
    pub ratio_basis: RatioBasis,
    pub n_before: usize,
    pub n_after: usize,
}

impl ChangeResult {
    pub fn ratio_percent(&self) -> f64 {
        self.ratio * 100.0
    }
}

/// One time series keyed by what it measures. Points must be strictly
/// increasing in time; the hours filter records how it was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub granularity: Granularity,
    pub hours_filter: Option<HoursClass>,
    pub points: Vec<(Timestamp, f64)>,
}

impl Series {
    pub fn new(
        granularity: Granularity,
        hours_filter: Option<HoursClass>,
        points: Vec<(Timestamp, f64)>,
    ) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("series points must be strictly increasing in time"));
        }
        Ok(Series { granularity, hours_filter, points })
    }

    /// Values falling in the given period, transition and outside excluded
    /// by construction of the caller's request.
    fn period_values(&self, cal: &StudyCalendar, period: Period) -> Vec<f64> {
        self.points
            .iter()
            .filter(|(ts, _)| cal.segment(*ts).0 == period)
            .map(|(_, v)| *v)
            .collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the rank test on a series' before/after split and quantifies the
/// change.
pub fn quantify(series: &Series, cal: &StudyCalendar, alpha: f64) -> Result<ChangeResult> {
    let before = series.period_values(cal, Period::Before);
    let after = series.period_values(cal, Period::After);
    if before.is_empty() || after.is_empty() {
        return Err(Error::insufficient("series has an empty before or after side"));
    }
    let outcome = wmw_test(&before, &after, alpha)?;

    let basis = series.granularity.ratio_basis();
    let (b_stat, a_stat) = match basis {
        RatioBasis::Median => (median(&before), median(&after)),
        RatioBasis::Mean => (mean(&before), mean(&after)),
    };
    let (ratio, tag) = if b_stat == 0.0 && a_stat == 0.0 {
        (f64::NAN, RatioTag::Undefined)
    } else if b_stat == 0.0 {
        (f64::INFINITY, RatioTag::New)
    } else {
        (a_stat / b_stat, RatioTag::Normal)
    };

    Ok(ChangeResult {
        direction: outcome.direction,
        p_less: outcome.p_less,
        p_greater: outcome.p_greater,
        ratio,
        ratio_tag: tag,
        ratio_basis: basis,
        n_before: before.len(),
        n_after: after.len(),
    })
}

/// Builds the zero-filled 5-minute series for one store row, restricted to
/// one hours class, over the observed bin range.
pub fn five_min_series(
    store: &LabeledStore,
    key: RowKey,
    hours: HoursClass,
    cal: &StudyCalendar,
) -> Option<Series> {
    let (lo, hi) = store.observed_bins()?;
    let bins = store.five_min.get(&key)?;
    let mut points = Vec::new();
    for b in lo..=hi {
        let start = BinWidth::FiveMin.bin(b).start;
        let (period, h) = cal.segment(start);
        if h != hours || matches!(period, Period::Transition | Period::Outside) {
            continue;
        }
        let v = bins.get(&b).copied().unwrap_or(0) as f64;
        points.push((start, v));
    }
    Some(Series { granularity: Granularity::FiveMin, hours_filter: Some(hours), points })
}

/// One row of the application change table.
#[derive(Debug, Clone, Serialize)]
pub struct AppChangeRow {
    pub key: RowKey,
    /// Share of total volume this row contributed before the transition.
    pub volume_share_before: f64,
    /// Carried at least 1% of total volume for at least 1/7th of the bins of
    /// the before or the after period.
    pub relevant: bool,
    pub work: Option<ChangeResult>,
    pub rest: Option<ChangeResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AppChangeTable {
    pub rows: Vec<AppChangeRow>,
    /// Labels absent from the corpus, omitted from `rows`.
    pub omitted: Vec<String>,
}

/// Builds the per-label work/rest change table over the 5-minute store.
pub fn app_change_table(store: &LabeledStore, cal: &StudyCalendar, alpha: f64) -> AppChangeTable {
    let totals = store.total_per_bin();
    let mut rows = Vec::new();
    let mut omitted = Vec::new();

    let mut keys: Vec<RowKey> = vec![RowKey::Coarse(crate::classify::CoarseClass::Candidate)];
    keys.extend(ALL_LABELS.iter().map(|l| RowKey::App(*l)));
    keys.extend([
        RowKey::Coarse(crate::classify::CoarseClass::Syn),
        RowKey::Coarse(crate::classify::CoarseClass::Icmp),
        RowKey::Coarse(crate::classify::CoarseClass::Otprot),
    ]);

    let before_total: u64 = totals
        .iter()
        .filter(|(b, _)| cal.segment(BinWidth::FiveMin.bin(**b).start).0 == Period::Before)
        .map(|(_, v)| *v)
        .sum();

    for key in keys {
        let Some(bins) = store.five_min.get(&key) else {
            omitted.push(key.name());
            continue;
        };

        let before_bytes: u64 = bins
            .iter()
            .filter(|(b, _)| cal.segment(BinWidth::FiveMin.bin(**b).start).0 == Period::Before)
            .map(|(_, v)| *v)
            .sum();
        let share = if before_total > 0 { before_bytes as f64 / before_total as f64 } else { 0.0 };

        let quantify_hours = |hours| {
            five_min_series(store, key, hours, cal)
                .and_then(|s| quantify(&s, cal, alpha).ok())
        };

        rows.push(AppChangeRow {
            key,
            volume_share_before: share,
            relevant: relevance_flag(bins, &totals, cal),
            work: quantify_hours(HoursClass::Work),
            rest: quantify_hours(HoursClass::Rest),
        });
    }
    AppChangeTable { rows, omitted }
}

/// At least 1% of the per-bin total volume, in at least 1/7th of the bins of
/// the before period or of the after period.
fn relevance_flag(
    bins: &BTreeMap<i64, u64>,
    totals: &BTreeMap<i64, u64>,
    cal: &StudyCalendar,
) -> bool {
    let mut qualified: HashMap<Period, u64> = HashMap::new();
    let mut counted: HashMap<Period, u64> = HashMap::new();
    for (b, total) in totals {
        let period = cal.segment(BinWidth::FiveMin.bin(*b).start).0;
        if !matches!(period, Period::Before | Period::After) {
            continue;
        }
        *counted.entry(period).or_default() += 1;
        let own = bins.get(b).copied().unwrap_or(0);
        if *total > 0 && own as f64 / *total as f64 >= 0.01 {
            *qualified.entry(period).or_default() += 1;
        }
    }
    [Period::Before, Period::After].iter().any(|p| {
        let n = counted.get(p).copied().unwrap_or(0);
        n > 0 && qualified.get(p).copied().unwrap_or(0) as f64 >= n as f64 / 7.0
    })
}

/// A surviving cell of the per-organization label tables: a change the test
/// confirmed whose mean daily volume moved by at least the threshold.
#[derive(Debug, Clone, Serialize)]
pub struct OrgLabelCell {
    pub org: String,
    pub org_category: OrgCategory,
    pub label: AppLabel,
    pub change: ChangeResult,
    /// mean_after - mean_before, bytes per day.
    pub delta_daily_bytes: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeerCategoryCell {
    pub remote_category: OrgCategory,
    pub ratio: f64,
    pub delta_daily_bytes: f64,
}

/// Per-organization totals of traffic exchanged with each remote category.
#[derive(Debug, Clone, Serialize)]
pub struct PeerShiftRow {
    pub org: String,
    pub org_category: OrgCategory,
    pub orientation: Orientation,
    pub total_delta_daily_bytes: f64,
    pub cells: Vec<PeerCategoryCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrgShiftTables {
    pub inbound: Vec<OrgLabelCell>,
    pub outbound: Vec<OrgLabelCell>,
    pub peer_shifts: Vec<PeerShiftRow>,
}

fn daily_series_from(
    days: &BTreeMap<NaiveDate, u64>,
    cal: &StudyCalendar,
) -> (Series, Vec<f64>, Vec<f64>) {
    let mut points = Vec::new();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for interval in [cal.before, cal.after] {
        for day in interval.iter() {
            let v = days.get(&day).copied().unwrap_or(0) as f64;
            let ts = Timestamp(
                day.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis()
                    - i64::from(cal.timezone_offset_hours) * 3_600_000,
            );
            points.push((ts, v));
            if interval == cal.before {
                before.push(v);
            } else {
                after.push(v);
            }
        }
    }
    (
        Series { granularity: Granularity::Daily, hours_filter: None, points },
        before,
        after,
    )
}

/// Builds the three per-organization shift tables from daily volumes:
/// inbound label changes, outbound label changes, and total shifts per
/// remote peer category. Cells survive only when the test found a direction
/// and the mean daily volume moved by at least `min_daily_change` bytes.
pub fn org_shift_tables(
    store: &LabeledStore,
    dir: &PrefixDirectory,
    cal: &StudyCalendar,
    alpha: f64,
    min_daily_change: f64,
) -> OrgShiftTables {
    let org_category: HashMap<&str, OrgCategory> =
        dir.organizations().iter().map(|o| (o.id.as_str(), o.category)).collect();
    let cat_of = |org: &str| org_category.get(org).copied().unwrap_or(OrgCategory::Unknown);

    let mut inbound = Vec::new();
    let mut outbound = Vec::new();
    for ((org, label, orient), days) in &store.org_label_daily {
        let (series, before, after) = daily_series_from(days, cal);
        let Ok(change) = quantify(&series, cal, alpha) else { continue };
        let delta = mean(&after) - mean(&before);
        if change.direction == Direction::None || delta.abs() < min_daily_change {
            continue;
        }
        let cell = OrgLabelCell {
            org: org.clone(),
            org_category: cat_of(org),
            label: *label,
            change,
            delta_daily_bytes: delta,
        };
        match orient {
            Orientation::Inbound => inbound.push(cell),
            Orientation::Outbound => outbound.push(cell),
            _ => {}
        }
    }

    // Peer shifts: totals per (org, orientation), then per remote category.
    let mut grouped: BTreeMap<(String, Orientation), BTreeMap<OrgCategory, &BTreeMap<NaiveDate, u64>>> =
        BTreeMap::new();
    for ((org, cat, orient), days) in &store.org_peer_daily {
        grouped.entry((org.clone(), *orient)).or_default().insert(*cat, days);
    }

    let mut peer_shifts = Vec::new();
    for ((org, orient), by_cat) in grouped {
        let mut total_days: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        for days in by_cat.values() {
            for (d, v) in days.iter() {
                *total_days.entry(*d).or_default() += v;
            }
        }
        let (_, before, after) = daily_series_from(&total_days, cal);
        let total_delta = mean(&after) - mean(&before);
        if total_delta.abs() < min_daily_change {
            continue;
        }
        let mut cells = Vec::new();
        for (cat, days) in by_cat {
            let (_, b, a) = daily_series_from(days, cal);
            let delta = mean(&a) - mean(&b);
            if delta.abs() < min_daily_change {
                continue;
            }
            let mb = mean(&b);
            let ratio = if mb > 0.0 { mean(&a) / mb } else { f64::INFINITY };
            cells.push(PeerCategoryCell { remote_category: cat, ratio, delta_daily_bytes: delta });
        }
        peer_shifts.push(PeerShiftRow {
            org_category: cat_of(&org),
            org,
            orientation: orient,
            total_delta_daily_bytes: total_delta,
            cells,
        });
    }

    OrgShiftTables { inbound, outbound, peer_shifts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LivenessCategory {
    Inc,
    Same,
    Dec,
}

impl LivenessCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            LivenessCategory::Inc => "inc",
            LivenessCategory::Same => "same",
            LivenessCategory::Dec => "dec",
        }
    }
}

/// Liveness of one local /24: distinct local addresses active per day.
#[derive(Debug, Clone, Serialize)]
pub struct LivenessRecord {
    pub prefix: PrefixId,
    pub org: String,
    pub org_category: OrgCategory,
    pub daily: Vec<(NaiveDate, u32)>,
    pub change: ChangeResult,
    pub category: LivenessCategory,
}

#[derive(Debug, Clone, Serialize)]
pub struct LivenessCategoryRow {
    pub org_category: OrgCategory,
    pub inc: usize,
    pub same: usize,
    pub dec: usize,
    pub inc_pct: f64,
    pub same_pct: f64,
    pub dec_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LivenessReport {
    pub records: Vec<LivenessRecord>,
    pub by_category: Vec<LivenessCategoryRow>,
    pub total: LivenessCategoryRow,
}

/// Tracks the daily count of distinct active addresses per local /24 (an
/// address is active on a day when it is the local endpoint of at least one
/// flow), tests before vs after, and aggregates the inc/same/dec counts per
/// organization category.
pub fn liveness_analysis<'a>(
    flows: impl IntoIterator<Item = &'a DirectedFlow>,
    dir: &PrefixDirectory,
    cal: &StudyCalendar,
    alpha: f64,
) -> Result<LivenessReport> {
    // 256-bit set per (prefix, day)
    let mut live: HashMap<PrefixId, BTreeMap<NaiveDate, [u64; 4]>> = HashMap::new();
    let mut mark = |prefix: PrefixId, host: u8, day: NaiveDate| {
        let slots = live.entry(prefix).or_default().entry(day).or_insert([0u64; 4]);
        slots[usize::from(host >> 6)] |= 1u64 << (host & 63);
    };
    for df in flows {
        let day = cal.local_date(df.flow.rec.ts_start);
        let src = df.src_prefix();
        if dir.is_local(src) {
            mark(src, df.flow.rec.src_ip.octets()[3], day);
        }
        let dst = df.dst_prefix();
        if dir.is_local(dst) {
            mark(dst, df.flow.rec.dst_ip.octets()[3], day);
        }
    }

    let mut records = Vec::new();
    let mut prefixes: Vec<PrefixId> = live.keys().copied().collect();
    prefixes.sort();
    for prefix in prefixes {
        let days = &live[&prefix];
        let mut daily = Vec::new();
        let mut before = Vec::new();
        let mut after = Vec::new();
        for interval in [cal.before, cal.transition, cal.after] {
            for day in interval.iter() {
                let count = days
                    .get(&day)
                    .map(|s| s.iter().map(|w| w.count_ones()).sum::<u32>())
                    .unwrap_or(0);
                daily.push((day, count));
                match cal.period_of_date(day) {
                    Period::Before => before.push(f64::from(count)),
                    Period::After => after.push(f64::from(count)),
                    _ => {}
                }
            }
        }
        let outcome = wmw_test(&before, &after, alpha)?;
        let category = match outcome.direction {
            Direction::Up => LivenessCategory::Inc,
            Direction::Down => LivenessCategory::Dec,
            Direction::None => LivenessCategory::Same,
        };
        let mb = mean(&before);
        let ma = mean(&after);
        let (ratio, tag) = if mb == 0.0 && ma == 0.0 {
            (f64::NAN, RatioTag::Undefined)
        } else if mb == 0.0 {
            (f64::INFINITY, RatioTag::New)
        } else {
            (ma / mb, RatioTag::Normal)
        };
        let org = dir.lookup(prefix);
        records.push(LivenessRecord {
            prefix,
            org: org.id.clone(),
            org_category: org.category,
            daily,
            change: ChangeResult {
                direction: outcome.direction,
                p_less: outcome.p_less,
                p_greater: outcome.p_greater,
                ratio,
                ratio_tag: tag,
                ratio_basis: RatioBasis::Mean,
                n_before: before.len(),
                n_after: after.len(),
            },
            category,
        });
    }

    let mut by_cat: BTreeMap<OrgCategory, (usize, usize, usize)> = BTreeMap::new();
    for r in &records {
        let slot = by_cat.entry(r.org_category).or_default();
        match r.category {
            LivenessCategory::Inc => slot.0 += 1,
            LivenessCategory::Same => slot.1 += 1,
            LivenessCategory::Dec => slot.2 += 1,
        }
    }
    let mk_row = |cat, (inc, same, dec): (usize, usize, usize)| {
        let total = (inc + same + dec).max(1) as f64;
        LivenessCategoryRow {
            org_category: cat,
            inc,
            same,
            dec,
            inc_pct: inc as f64 / total * 100.0,
            same_pct: same as f64 / total * 100.0,
            dec_pct: dec as f64 / total * 100.0,
        }
    };
    let by_category: Vec<_> = by_cat.iter().map(|(c, v)| mk_row(*c, *v)).collect();
    let total = mk_row(
        OrgCategory::Unknown,
        by_cat.values().fold((0, 0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2)),
    );

    Ok(LivenessReport { records, by_category, total })
}

/// Per-address change report: role, work/rest change results on hourly
/// volumes, and the hourly and weekly series behind them.
#[derive(Debug, Clone, Serialize)]
pub struct IpReport {
    pub ip: Ipv4Addr,
    pub role: IpRole,
    pub work: ChangeResult,
    pub rest: ChangeResult,
    pub hourly: Vec<(Timestamp, f64)>,
    pub weekly: Vec<(NaiveDate, f64)>,
}

pub fn ip_change_report(
    ip: Ipv4Addr,
    flows: &[DirectedFlow],
    svc_ports: &ServicePorts,
    cal: &StudyCalendar,
    alpha: f64,
) -> Result<IpReport> {
    let role = classify_ip_role(ip, flows, svc_ports, 0.5)?;

    let mut hourly_bins: BTreeMap<i64, u64> = BTreeMap::new();
    for df in flows {
        let r = &df.flow.rec;
        if r.src_ip != ip && r.dst_ip != ip {
            continue;
        }
        *hourly_bins.entry(BinWidth::Hour.index_of(r.ts_start)).or_default() += df.flow.bytes;
    }
    if hourly_bins.is_empty() {
        return Err(Error::insufficient(format!("no traffic for {ip}")));
    }

    // zero-fill over the calendar's observation window
    let cal_lo = BinWidth::Hour.index_of(Timestamp(
        cal.first_date().and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis()
            - i64::from(cal.timezone_offset_hours) * 3_600_000,
    ));
    let cal_hi = BinWidth::Hour.index_of(Timestamp(
        cal.last_date().and_hms_opt(23, 59, 59).unwrap().and_utc().timestamp_millis()
            - i64::from(cal.timezone_offset_hours) * 3_600_000,
    ));

    let mut hourly = Vec::new();
    let mut work_points = Vec::new();
    let mut rest_points = Vec::new();
    let mut weekly: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for b in cal_lo..=cal_hi {
        let start = BinWidth::Hour.bin(b).start;
        let v = hourly_bins.get(&b).copied().unwrap_or(0) as f64;
        hourly.push((start, v));
        let (_, hours) = cal.segment(start);
        match hours {
            HoursClass::Work => work_points.push((start, v)),
            HoursClass::Rest => rest_points.push((start, v)),
        }
        let date = cal.local_date(start);
        let week_start = date - Duration::days(i64::from(date.weekday().num_days_from_monday()));
        *weekly.entry(week_start).or_default() += v;
    }

    let quantify_points = |points: Vec<(Timestamp, f64)>, hours| {
        quantify(
            &Series { granularity: Granularity::Hourly, hours_filter: Some(hours), points },
            cal,
            alpha,
        )
    };
    let work = quantify_points(work_points, HoursClass::Work)?;
    let rest = quantify_points(rest_points, HoursClass::Rest)?;

    Ok(IpReport { ip, role, work, rest, hourly, weekly: weekly.into_iter().collect() })
}

/// Convenience for anomaly reporting and tests: bytes per 5-minute bin for
/// flows matching a predicate.
pub fn bytes_per_bin<'a>(
    flows: impl IntoIterator<Item = &'a DirectedFlow>,
    pred: impl Fn(&DirectedFlow) -> bool,
) -> BTreeMap<i64, u64> {
    let mut bins = BTreeMap::new();
    for df in flows {
        if pred(df) {
            *bins.entry(BinWidth::FiveMin.index_of(df.flow.rec.ts_start)).or_default() +=
                df.flow.bytes;
        }
    }
    bins
}

/// ICMP volume helper used by a couple of reports.
pub fn is_icmp(df: &DirectedFlow) -> bool {
    df.flow.rec.proto == PROTO_ICMP
}

/// Distinct days covered by a set of flows, in the calendar's local time.
pub fn observed_days<'a>(
    flows: impl IntoIterator<Item = &'a DirectedFlow>,
    cal: &StudyCalendar,
) -> HashSet<NaiveDate> {
    flows.into_iter().map(|df| cal.local_date(df.flow.rec.ts_start)).collect()
}

const _: () = {
    // keep the day constant in one place for series helpers
    assert!(MS_PER_DAY == 86_400_000);
};

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> StudyCalendar {
        StudyCalendar::default()
    }

    fn series_from_periods(
        granularity: Granularity,
        before: &[f64],
        after: &[f64],
        cal: &StudyCalendar,
    ) -> Series {
        // place points at local noon of consecutive days in each period
        let mut points = Vec::new();
        let mut day_points = |interval: crate::time::DateInterval, values: &[f64]| {
            for (i, v) in values.iter().enumerate() {
                let day = interval.first + Duration::days(i as i64 % interval.days());
                let ts = Timestamp(
                    day.and_hms_opt(12, 0, 0).unwrap().and_utc().timestamp_millis()
                        - i64::from(cal.timezone_offset_hours) * 3_600_000
                        + i as i64, // keep strictly increasing
                );
                points.push((ts, *v));
            }
        };
        day_points(cal.before, before);
        day_points(cal.after, after);
        points.sort_by_key(|(t, _)| *t);
        Series { granularity, hours_filter: None, points }
    }

    #[test]
    fn quantify_median_ratio_on_five_min_series() {
        let c = cal();
        let before: Vec<f64> = (0..12).map(|i| 95.0 + (i % 3) as f64 * 5.0).collect(); // median 100
        let after: Vec<f64> = (0..12).map(|i| 65.0 + (i % 3) as f64 * 5.0).collect(); // median 70
        let s = series_from_periods(Granularity::FiveMin, &before, &after, &c);
        let r = quantify(&s, &c, 0.5).unwrap();
        assert_eq!(r.direction, Direction::Down);
        assert_eq!(r.ratio_basis, RatioBasis::Median);
        assert!((r.ratio - 0.7).abs() < 1e-9, "ratio {}", r.ratio);
        assert_eq!(r.ratio_tag, RatioTag::Normal);
    }

    #[test]
    fn quantify_identical_daily_series_reports_no_change() {
        let c = cal();
        let vals: Vec<f64> = (0..10).map(|i| 40.0 + (i % 4) as f64).collect();
        let s = series_from_periods(Granularity::Daily, &vals, &vals, &c);
        let r = quantify(&s, &c, 0.5).unwrap();
        assert_eq!(r.direction, Direction::None);
        assert_eq!(r.ratio_basis, RatioBasis::Mean);
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantify_flags_new_traffic() {
        let c = cal();
        let before = vec![0.0; 8];
        let after = vec![10.0, 12.0, 11.0, 12.0, 10.0, 11.0, 12.0, 10.0];
        let s = series_from_periods(Granularity::Daily, &before, &after, &c);
        let r = quantify(&s, &c, 0.5).unwrap();
        assert_eq!(r.ratio_tag, RatioTag::New);
        assert!(r.ratio.is_infinite());
        assert_eq!(r.direction, Direction::Up);
    }

    #[test]
    fn quantify_requires_both_sides() {
        let c = cal();
        let s = series_from_periods(Granularity::Daily, &[1.0, 2.0, 3.0], &[], &c);
        assert!(matches!(quantify(&s, &c, 0.5), Err(Error::InsufficientData(_))));
    }

    // Scale equivariance: scaling the after side by c scales the ratio by c
    // and cannot flip an up direction to down for c >= 1.
    #[test]
    fn ratio_scale_equivariance() {
        let c = cal();
        let before: Vec<f64> = (0..14).map(|i| 50.0 + (i % 5) as f64).collect();
        let after: Vec<f64> = (0..14).map(|i| 80.0 + (i % 5) as f64).collect();
        let base = quantify(&series_from_periods(Granularity::Daily, &before, &after, &c), &c, 0.5)
            .unwrap();
        for scale in [1.0, 1.5, 3.0] {
            let scaled: Vec<f64> = after.iter().map(|v| v * scale).collect();
            let r =
                quantify(&series_from_periods(Granularity::Daily, &before, &scaled, &c), &c, 0.5)
                    .unwrap();
            assert!((r.ratio - base.ratio * scale).abs() < 1e-9);
            assert_eq!(r.direction, Direction::Up);
        }
    }
}
