//! Dual-method volumetric anomaly detection.
//!
//! Five traffic streams are monitored on the 5-minute grid: overall, NTP,
//! DNS, ICMP, and SYN/SYN-ACK flows. An equilibrium detector flags bin pairs
//! whose per-flow-key volume changes fail to cancel out; a threshold
//! detector flags bins where a destination /24 exceeds a per-kind rate rule.
//! A detection is confirmed when both detectors fire, or one fires and the
//! peak intensity index (peak volume over expected volume) is at least 2.

pub mod detect;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use detect::{
    build_streams, equilibrium_detect, expected_volume, threshold_detect, Candidate, FlowKey,
    MonitorStream, StreamKind, ThresholdOutcome, ThresholdRules,
};

use crate::time::{Period, StudyCalendar, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    DnsAmp,
    NtpAmp,
    IcmpFlood,
    SynFlood,
    OtherBandwidth,
}

impl AnomalyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnomalyKind::DnsAmp => "dns_amp",
            AnomalyKind::NtpAmp => "ntp_amp",
            AnomalyKind::IcmpFlood => "icmp_flood",
            AnomalyKind::SynFlood => "syn_flood",
            AnomalyKind::OtherBandwidth => "other_bandwidth",
        }
    }

    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::DnsAmp,
        AnomalyKind::NtpAmp,
        AnomalyKind::IcmpFlood,
        AnomalyKind::SynFlood,
        AnomalyKind::OtherBandwidth,
    ];
}

impl std::fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub equilibrium: bool,
    pub threshold: bool,
}

impl DetectorSet {
    pub fn both(&self) -> bool {
        self.equilibrium && self.threshold
    }

    pub fn count(&self) -> usize {
        usize::from(self.equilibrium) + usize::from(self.threshold)
    }
}

/// The corroboration rule: both detectors, or one detector with peak
/// intensity at least twice the expected volume.
pub fn confirm(detectors: DetectorSet, zeta: Option<f64>) -> bool {
    detectors.both() || (detectors.count() == 1 && zeta.is_some_and(|z| z >= 2.0))
}

/// A detected volumetric anomaly. Volumes are per second in the stream's
/// unit (bytes/s for overall, NTP and DNS; packets/s for ICMP and
/// SYN/SYN-ACK).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start: Timestamp,
    pub end: Timestamp,
    pub detectors: DetectorSet,
    pub v_peak: f64,
    pub v_exp: Option<f64>,
    pub zeta: Option<f64>,
    pub confirmed: bool,
}

impl AnomalyEvent {
    pub fn duration_minutes(&self) -> f64 {
        (self.end.0 - self.start.0) as f64 / 60_000.0
    }

    pub fn overlaps(&self, start: Timestamp, end: Timestamp) -> bool {
        self.start < end && start < self.end
    }

    /// Fraction of `[start, end)` covered by this event.
    pub fn overlap_fraction(&self, start: Timestamp, end: Timestamp) -> f64 {
        let lo = self.start.0.max(start.0);
        let hi = self.end.0.min(end.0);
        if hi <= lo || end.0 <= start.0 {
            return 0.0;
        }
        (hi - lo) as f64 / (end.0 - start.0) as f64
    }
}

/// Merges overlapping candidate intervals from both detectors on one stream
/// into events, computes peak and expected volumes, and applies the
/// corroboration rule. Equilibrium-only events on the overall stream are
/// the unclassified bandwidth anomalies; every other stream maps to its
/// attack kind.
pub fn corroborate(
    stream: &MonitorStream,
    equilibrium: &[Candidate],
    threshold: &[Candidate],
) -> Vec<AnomalyEvent> {
    #[derive(Clone, Copy)]
    struct Tagged {
        start: i64,
        end: i64,
        eq: bool,
    }
    let mut tagged: Vec<Tagged> = equilibrium
        .iter()
        .map(|c| Tagged { start: c.start_bin, end: c.end_bin, eq: true })
        .chain(threshold.iter().map(|c| Tagged { start: c.start_bin, end: c.end_bin, eq: false }))
        .collect();
    tagged.sort_by_key(|t| (t.start, t.end));

    // transitive merge of interval runs sharing at least one bin
    let mut merged: Vec<(i64, i64, DetectorSet)> = Vec::new();
    for t in tagged {
        match merged.last_mut() {
            Some((_, end, set)) if t.start <= *end => {
                *end = (*end).max(t.end);
                if t.eq {
                    set.equilibrium = true;
                } else {
                    set.threshold = true;
                }
            }
            _ => {
                let set = DetectorSet { equilibrium: t.eq, threshold: !t.eq };
                merged.push((t.start, t.end, set));
            }
        }
    }

    let exclusions: Vec<(i64, i64)> = merged.iter().map(|(s, e, _)| (*s, *e)).collect();
    let kind = match stream.kind {
        StreamKind::Ntp => AnomalyKind::NtpAmp,
        StreamKind::Dns => AnomalyKind::DnsAmp,
        StreamKind::Icmp => AnomalyKind::IcmpFlood,
        StreamKind::SynSynack => AnomalyKind::SynFlood,
        StreamKind::Overall => AnomalyKind::OtherBandwidth,
    };

    let per_sec = stream.width.millis() as f64 / 1000.0;
    let mut events = Vec::new();
    for (start_bin, end_bin, detectors) in merged {
        let v_peak_bin =
            (start_bin..=end_bin).map(|b| stream.volume(b)).fold(0u64, u64::max) as f64;
        let v_exp_bin = expected_volume(stream, start_bin, end_bin, &exclusions).ok();
        let zeta = v_exp_bin.filter(|v| *v > 0.0).map(|v| v_peak_bin / v);
        events.push(AnomalyEvent {
            kind,
            start: stream.width.bin(start_bin).start,
            end: stream.width.bin(end_bin).end(),
            detectors,
            v_peak: v_peak_bin / per_sec,
            v_exp: v_exp_bin.map(|v| v / per_sec),
            zeta,
            confirmed: confirm(detectors, zeta),
        });
    }
    events
}

/// Runs both detectors over all streams and corroborates.
pub fn detect_anomalies(
    streams: &[MonitorStream],
    k_threshold: f64,
    rules: &ThresholdRules,
) -> (Vec<AnomalyEvent>, Vec<String>) {
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    for stream in streams {
        let eq = equilibrium_detect(stream, k_threshold);
        let ThresholdOutcome { intervals: th, warnings: w } = threshold_detect(stream, rules);
        warnings.extend(w);
        events.extend(corroborate(stream, &eq, &th));
    }
    events.sort_by_key(|e| (e.start, e.kind));
    (events, warnings)
}

/// One row of the anomaly change table.
#[derive(Debug, Clone, Serialize)]
pub struct AnomalyChangeRow {
    pub kind: AnomalyKind,
    pub before_count: usize,
    pub after_count: usize,
    pub freq_per_day_before: f64,
    pub freq_per_day_after: f64,
    /// None when the kind was absent before (not applicable).
    pub freq_ratio: Option<f64>,
    pub mean_duration_min_before: f64,
    pub mean_duration_min_after: f64,
    pub duration_ratio: Option<f64>,
    pub mean_zeta_before: f64,
    pub mean_zeta_after: f64,
    pub zeta_ratio: Option<f64>,
}

/// Compares confirmed anomalies before vs after: day-normalized frequency,
/// mean duration, and mean peak intensity per kind. Ratios are not
/// applicable when the kind produced no before-period events.
pub fn anomaly_change_table(
    events: &[AnomalyEvent],
    cal: &StudyCalendar,
) -> Vec<AnomalyChangeRow> {
    let mut per_kind: BTreeMap<AnomalyKind, (Vec<&AnomalyEvent>, Vec<&AnomalyEvent>)> =
        BTreeMap::new();
    for e in events.iter().filter(|e| e.confirmed) {
        let period = cal.period_of_date(cal.local_date(e.start));
        match period {
            Period::Before => per_kind.entry(e.kind).or_default().0.push(e),
            Period::After => per_kind.entry(e.kind).or_default().1.push(e),
            _ => {}
        }
    }

    let before_days = cal.before.days() as f64;
    let after_days = cal.after.days() as f64;
    let mut rows = Vec::new();
    for kind in AnomalyKind::ALL {
        let Some((before, after)) = per_kind.get(&kind) else { continue };
        let mean_of = |evs: &[&AnomalyEvent], f: &dyn Fn(&AnomalyEvent) -> Option<f64>| {
            let vals: Vec<f64> = evs.iter().filter_map(|e| f(e)).collect();
            if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 }
        };
        let freq_b = before.len() as f64 / before_days;
        let freq_a = after.len() as f64 / after_days;
        let dur_b = mean_of(before, &|e| Some(e.duration_minutes()));
        let dur_a = mean_of(after, &|e| Some(e.duration_minutes()));
        let zeta_b = mean_of(before, &|e| e.zeta);
        let zeta_a = mean_of(after, &|e| e.zeta);
        let ratio = |b: f64, a: f64| if b > 0.0 { Some(a / b) } else { None };
        rows.push(AnomalyChangeRow {
            kind,
            before_count: before.len(),
            after_count: after.len(),
            freq_per_day_before: freq_b,
            freq_per_day_after: freq_a,
            freq_ratio: ratio(freq_b, freq_a),
            mean_duration_min_before: dur_b,
            mean_duration_min_after: dur_a,
            duration_ratio: ratio(dur_b, dur_a),
            mean_zeta_before: zeta_b,
            mean_zeta_after: zeta_a,
            zeta_ratio: ratio(zeta_b, zeta_a),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corroboration_rule() {
        let both = DetectorSet { equilibrium: true, threshold: true };
        let eq_only = DetectorSet { equilibrium: true, threshold: false };
        let th_only = DetectorSet { equilibrium: false, threshold: true };

        // both detectors: confirmed regardless of zeta
        assert!(confirm(both, Some(1.1)));
        assert!(confirm(both, None));
        // single detector: needs zeta >= 2
        assert!(confirm(eq_only, Some(3.0)));
        assert!(!confirm(th_only, Some(1.5)));
        assert!(!confirm(eq_only, None));
    }

    // Adding a second detector can only keep or raise confirmation.
    #[test]
    fn corroboration_is_monotone() {
        let both = DetectorSet { equilibrium: true, threshold: true };
        for single in [
            DetectorSet { equilibrium: true, threshold: false },
            DetectorSet { equilibrium: false, threshold: true },
        ] {
            for zeta in [None, Some(0.5), Some(1.99), Some(2.0), Some(50.0)] {
                assert!(confirm(both, zeta) >= confirm(single, zeta), "zeta {zeta:?}");
            }
        }
    }

    #[test]
    fn zeta_times_expected_recovers_peak() {
        let e = AnomalyEvent {
            kind: AnomalyKind::NtpAmp,
            start: Timestamp(0),
            end: Timestamp(600_000),
            detectors: DetectorSet { equilibrium: false, threshold: true },
            v_peak: 200.0,
            v_exp: Some(100.0),
            zeta: Some(2.0),
            confirmed: true,
        };
        let (zeta, v_exp) = (e.zeta.unwrap(), e.v_exp.unwrap());
        assert!((zeta * v_exp - e.v_peak).abs() <= f64::EPSILON * e.v_peak);
        assert_eq!(e.duration_minutes(), 10.0);
    }

    #[test]
    fn change_table_reports_not_applicable_for_kinds_absent_before() {
        let cal = StudyCalendar::default();
        let after_ts = Timestamp::parse("2020-04-07T12:00:00Z").unwrap();
        let mk = |kind, start: Timestamp, confirmed| AnomalyEvent {
            kind,
            start,
            end: Timestamp(start.0 + 900_000),
            detectors: DetectorSet { equilibrium: true, threshold: true },
            v_peak: 10.0,
            v_exp: Some(2.0),
            zeta: Some(5.0),
            confirmed,
        };
        let before_ts = Timestamp::parse("2020-03-03T12:00:00Z").unwrap();
        let events = vec![
            mk(AnomalyKind::NtpAmp, before_ts, true),
            mk(AnomalyKind::NtpAmp, after_ts, true),
            mk(AnomalyKind::IcmpFlood, after_ts, true),
            mk(AnomalyKind::DnsAmp, after_ts, false), // unconfirmed: ignored
        ];
        let rows = anomaly_change_table(&events, &cal);
        let ntp = rows.iter().find(|r| r.kind == AnomalyKind::NtpAmp).unwrap();
        assert!(ntp.freq_ratio.is_some());
        let icmp = rows.iter().find(|r| r.kind == AnomalyKind::IcmpFlood).unwrap();
        assert_eq!(icmp.before_count, 0);
        assert!(icmp.freq_ratio.is_none());
        assert!(!rows.iter().any(|r| r.kind == AnomalyKind::DnsAmp));
    }

    #[test]
    fn empty_event_set_gives_empty_table() {
        let cal = StudyCalendar::default();
        assert!(anomaly_change_table(&[], &cal).is_empty());
    }
}
