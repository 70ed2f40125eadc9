//! Monitor streams and the two detectors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::attrib::{DirectedFlow, PrefixId};
use crate::error::{Error, Result};
use crate::flow::{PROTO_ICMP, PROTO_TCP, PROTO_UDP, TCP_FLAG_ACK, TCP_FLAG_SYN};
use crate::time::BinWidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Overall,
    Ntp,
    Dns,
    Icmp,
    SynSynack,
}

impl StreamKind {
    pub const ALL: [StreamKind; 5] = [
        StreamKind::Overall,
        StreamKind::Ntp,
        StreamKind::Dns,
        StreamKind::Icmp,
        StreamKind::SynSynack,
    ];

    /// Volume unit the stream is measured in: flood streams count packets,
    /// the rest count bytes.
    pub fn counts_packets(self) -> bool {
        matches!(self, StreamKind::Icmp | StreamKind::SynSynack)
    }

    fn accepts(self, df: &DirectedFlow) -> bool {
        let r = &df.flow.rec;
        match self {
            StreamKind::Overall => true,
            StreamKind::Ntp => {
                matches!(r.proto, PROTO_TCP | PROTO_UDP) && (r.src_port == 123 || r.dst_port == 123)
            }
            StreamKind::Dns => {
                matches!(r.proto, PROTO_TCP | PROTO_UDP) && (r.src_port == 53 || r.dst_port == 53)
            }
            StreamKind::Icmp => r.proto == PROTO_ICMP,
            StreamKind::SynSynack => {
                r.proto == PROTO_TCP
                    && (r.tcp_flags == TCP_FLAG_SYN || r.tcp_flags == TCP_FLAG_SYN | TCP_FLAG_ACK)
            }
        }
    }

    /// The per-destination volume the threshold rule is written against:
    /// amplification rules count bytes sourced from the reflector port,
    /// flood rules count packets (SYN-only packets for the SYN rule).
    fn rule_volume(self, df: &DirectedFlow) -> Option<(PrefixId, u64)> {
        let r = &df.flow.rec;
        match self {
            StreamKind::Ntp if r.src_port == 123 => Some((df.dst_prefix(), df.flow.bytes)),
            StreamKind::Dns if r.src_port == 53 => Some((df.dst_prefix(), df.flow.bytes)),
            StreamKind::Icmp => Some((df.dst_prefix(), df.flow.packets)),
            StreamKind::SynSynack if r.tcp_flags == TCP_FLAG_SYN => {
                Some((df.dst_prefix(), df.flow.packets))
            }
            _ => None,
        }
    }
}

/// Flow aggregation key for the equilibrium deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src24: u32,
    pub dst24: u32,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    fn of(df: &DirectedFlow) -> FlowKey {
        FlowKey {
            src24: df.src_prefix().0,
            dst24: df.dst_prefix().0,
            dst_port: df.flow.rec.dst_port,
            proto: df.flow.rec.proto,
        }
    }
}

/// One monitored stream on the 5-minute grid.
#[derive(Debug, Clone)]
pub struct MonitorStream {
    pub kind: StreamKind,
    pub width: BinWidth,
    /// Total stream volume per bin, in the stream's unit.
    bins: BTreeMap<i64, u64>,
    /// Per-flow-key volume per bin, same unit.
    keys: BTreeMap<i64, HashMap<FlowKey, u64>>,
    /// Per-destination-/24 rule volume per bin.
    per_dst: BTreeMap<i64, HashMap<PrefixId, u64>>,
}

impl MonitorStream {
    pub fn new(kind: StreamKind) -> Self {
        MonitorStream {
            kind,
            width: BinWidth::FiveMin,
            bins: BTreeMap::new(),
            keys: BTreeMap::new(),
            per_dst: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, df: &DirectedFlow) {
        if !self.kind.accepts(df) {
            return;
        }
        let bin = self.width.index_of(df.flow.rec.ts_start);
        let volume = if self.kind.counts_packets() { df.flow.packets } else { df.flow.bytes };
        *self.bins.entry(bin).or_default() += volume;
        *self.keys.entry(bin).or_default().entry(FlowKey::of(df)).or_default() += volume;
        if let Some((dst, v)) = self.kind.rule_volume(df) {
            *self.per_dst.entry(bin).or_default().entry(dst).or_default() += v;
        }
    }

    pub fn volume(&self, bin: i64) -> u64 {
        self.bins.get(&bin).copied().unwrap_or(0)
    }

    pub fn bin_range(&self) -> Option<(i64, i64)> {
        match (self.bins.first_key_value(), self.bins.last_key_value()) {
            (Some((lo, _)), Some((hi, _))) => Some((*lo, *hi)),
            _ => None,
        }
    }

    fn keys_at(&self, bin: i64) -> Option<&HashMap<FlowKey, u64>> {
        self.keys.get(&bin)
    }
}

pub fn build_streams<'a>(flows: impl IntoIterator<Item = &'a DirectedFlow>) -> Vec<MonitorStream> {
    let mut streams: Vec<MonitorStream> = StreamKind::ALL.into_iter().map(MonitorStream::new).collect();
    for df in flows {
        for s in &mut streams {
            s.add(df);
        }
    }
    streams
}

/// A flagged bin interval, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub start_bin: i64,
    pub end_bin: i64,
    /// Largest detector statistic seen inside the interval.
    pub peak_stat: f64,
}

/// The equilibrium statistic for one consecutive bin pair: per-key volume
/// deltas over the keys active in either bin, K = mean * sqrt(F) / stdev
/// (population standard deviation). Legitimate traffic churns keys in both
/// directions, so deltas cancel and K stays near zero; correlated shifts
/// push it out.
pub fn equilibrium_stat(
    prev: &HashMap<FlowKey, u64>,
    next: &HashMap<FlowKey, u64>,
) -> Option<f64> {
    let mut deltas: Vec<f64> = Vec::with_capacity(prev.len().max(next.len()));
    for (k, v) in next {
        let before = prev.get(k).copied().unwrap_or(0);
        deltas.push(*v as f64 - before as f64);
    }
    for (k, v) in prev {
        if !next.contains_key(k) {
            deltas.push(-(*v as f64));
        }
    }
    let f = deltas.len() as f64;
    if f == 0.0 {
        return None;
    }
    let mean = deltas.iter().sum::<f64>() / f;
    let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / f;
    if var == 0.0 {
        // all deltas identical: flag only a uniform nonzero shift
        return if mean == 0.0 { Some(0.0) } else { Some(f64::INFINITY * mean.signum()) };
    }
    Some(mean * f.sqrt() / var.sqrt())
}

/// Slides over consecutive bin pairs, flags |K| above the threshold, and
/// merges adjacent flagged pairs into intervals.
pub fn equilibrium_detect(stream: &MonitorStream, k_threshold: f64) -> Vec<Candidate> {
    let Some((lo, hi)) = stream.bin_range() else { return Vec::new() };
    let empty = HashMap::new();
    let mut out: Vec<Candidate> = Vec::new();
    for b in lo..hi {
        let prev = stream.keys_at(b).unwrap_or(&empty);
        let next = stream.keys_at(b + 1).unwrap_or(&empty);
        let Some(k) = equilibrium_stat(prev, next) else { continue };
        if k.abs() > k_threshold {
            match out.last_mut() {
                // pair (b, b+1) extends an interval ending at bin b
                Some(c) if c.end_bin >= b => {
                    c.end_bin = b + 1;
                    c.peak_stat = c.peak_stat.max(k.abs());
                }
                _ => out.push(Candidate { start_bin: b, end_bin: b + 1, peak_stat: k.abs() }),
            }
        }
    }
    out
}

/// Per-kind threshold rules, per destination /24 per 5-minute bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRules {
    pub syn_flood_pps: f64,
    pub icmp_flood_pps: f64,
    pub ntp_amp_mbps: f64,
    pub dns_amp_mbps: f64,
}

impl Default for ThresholdRules {
    fn default() -> Self {
        ThresholdRules {
            syn_flood_pps: 50_000.0,
            icmp_flood_pps: 20_000.0,
            ntp_amp_mbps: 100.0,
            dns_amp_mbps: 100.0,
        }
    }
}

impl ThresholdRules {
    /// The rule ceiling for a stream, converted to the stream's per-bin
    /// rule-volume unit. None for streams without a rule.
    fn per_bin_limit(&self, kind: StreamKind, bin_seconds: f64) -> Option<f64> {
        match kind {
            StreamKind::SynSynack => Some(self.syn_flood_pps * bin_seconds),
            StreamKind::Icmp => Some(self.icmp_flood_pps * bin_seconds),
            StreamKind::Ntp => Some(self.ntp_amp_mbps * 1e6 / 8.0 * bin_seconds),
            StreamKind::Dns => Some(self.dns_amp_mbps * 1e6 / 8.0 * bin_seconds),
            StreamKind::Overall => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ThresholdOutcome {
    pub intervals: Vec<Candidate>,
    pub warnings: Vec<String>,
}

/// Flags bins where any destination /24 exceeds the stream's rule, closing
/// an interval only after a full quiet bin (one bin of hysteresis).
pub fn threshold_detect(stream: &MonitorStream, rules: &ThresholdRules) -> ThresholdOutcome {
    let bin_seconds = stream.width.millis() as f64 / 1000.0;
    let Some(limit) = rules.per_bin_limit(stream.kind, bin_seconds) else {
        return ThresholdOutcome::default();
    };
    let mut outcome = ThresholdOutcome::default();
    if limit <= 0.0 {
        outcome.warnings.push(format!(
            "threshold rule for {:?} is nonpositive; every active bin will be flagged",
            stream.kind
        ));
    }
    let Some((lo, hi)) = stream.bin_range() else { return outcome };

    let mut flagged: Vec<(i64, f64)> = Vec::new();
    for b in lo..=hi {
        if let Some(dsts) = stream.per_dst.get(&b) {
            let worst = dsts.values().copied().max().unwrap_or(0) as f64;
            if worst > limit {
                flagged.push((b, worst / limit.max(f64::MIN_POSITIVE)));
            }
        }
    }

    for (b, excess) in flagged {
        match outcome.intervals.last_mut() {
            // merge across a gap of at most one quiet bin
            Some(c) if b - c.end_bin <= 2 => {
                c.end_bin = b;
                c.peak_stat = c.peak_stat.max(excess);
            }
            _ => outcome.intervals.push(Candidate { start_bin: b, end_bin: b, peak_stat: excess }),
        }
    }
    outcome
}

/// Expected volume for an anomaly on `[start_bin, end_bin]`:
/// - short anomalies (at most 30 minutes) use the bin immediately before;
/// - longer ones average the same time-of-day bin over the surrounding seven
///   days, skipping days where that bin falls inside any detected anomaly.
pub fn expected_volume(
    stream: &MonitorStream,
    start_bin: i64,
    end_bin: i64,
    exclusions: &[(i64, i64)],
) -> Result<f64> {
    let (lo, hi) = stream
        .bin_range()
        .ok_or_else(|| Error::insufficient("expected volume unavailable: empty stream"))?;
    let duration_min = (end_bin - start_bin + 1) * stream.width.millis() / 60_000;
    let excluded =
        |b: i64| exclusions.iter().any(|(s, e)| *s <= b && b <= *e) || b < lo || b > hi;

    if duration_min <= 30 {
        let b = start_bin - 1;
        if excluded(b) {
            return Err(Error::insufficient("expected volume unavailable: no clean preceding bin"));
        }
        return Ok(stream.volume(b) as f64);
    }

    // peak bin of the anomaly, compared against the same bin on other days
    let peak_bin = (start_bin..=end_bin).max_by_key(|b| stream.volume(*b)).unwrap();
    let bins_per_day = crate::time::MS_PER_DAY / stream.width.millis();
    let mut clean: Vec<f64> = Vec::new();
    for day_offset in [-3i64, -2, -1, 1, 2, 3] {
        let b = peak_bin + day_offset * bins_per_day;
        if !excluded(b) {
            clean.push(stream.volume(b) as f64);
        }
    }
    if clean.is_empty() {
        return Err(Error::insufficient("expected volume unavailable: no clean history bins"));
    }
    Ok(clean.iter().sum::<f64>() / clean.len() as f64)
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::attrib::{infer_direction, PrefixDirectory, ServicePorts};
    use crate::flow::{upsample, FlowRecord};
    use crate::time::Timestamp;

    fn stream_flow(bin: i64, src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16, proto: u8, flags: u8, packets: u64, bytes: u64) -> DirectedFlow {
        let dir = PrefixDirectory::default();
        let svc = ServicePorts::default();
        infer_direction(
            upsample(FlowRecord {
                ts_start: Timestamp(bin * 300_000 + 1),
                ts_end: Timestamp(bin * 300_000 + 2),
                proto,
                src_ip: Ipv4Addr::from(src),
                src_port: sport,
                dst_ip: Ipv4Addr::from(dst),
                dst_port: dport,
                sampled_packets: packets,
                sampled_bytes: bytes,
                tcp_flags: flags,
                sampling_rate: 1,
            }),
            &dir,
            &svc,
        )
    }

    fn keymap(entries: &[(u32, u64)]) -> HashMap<FlowKey, u64> {
        entries
            .iter()
            .map(|(i, v)| (FlowKey { src24: *i, dst24: 1, dst_port: 80, proto: 6 }, *v))
            .collect()
    }

    #[test]
    fn stat_is_zero_when_nothing_changes() {
        let a = keymap(&[(1, 100), (2, 200), (3, 50)]);
        assert_eq!(equilibrium_stat(&a, &a), Some(0.0));
    }

    // Balanced shuffle: one key up, another down by the same amount, the
    // rest static. Deltas cancel, K = 0.
    #[test]
    fn stat_cancels_balanced_shuffles() {
        let prev = keymap(&[(1, 100), (2, 200), (3, 50), (4, 70)]);
        let next = keymap(&[(1, 100 + 35), (2, 200 - 35), (3, 50), (4, 70)]);
        let k = equilibrium_stat(&prev, &next).unwrap();
        assert!(k.abs() < 1e-9, "K = {k}");
    }

    // Direct recomputation of the statistic for a single jumping key among
    // static ones. The mean/stdev structure caps |K| near 1 in this shape,
    // well under any sane threshold; only correlated shifts across many keys
    // drive it up.
    #[test]
    fn stat_matches_formula_oracle() {
        let mut entries: Vec<(u32, u64)> = (0..100).map(|i| (i, 1_000)).collect();
        let prev = keymap(&entries);
        entries.push((100, 1_000_000));
        let next = keymap(&entries);

        let got = equilibrium_stat(&prev, &next).unwrap();

        // oracle: deltas are one 10^6 among 100 zeros
        let deltas: Vec<f64> =
            std::iter::once(1e6).chain(std::iter::repeat(0.0).take(100)).collect();
        let f = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / f;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / f;
        let want = mean * f.sqrt() / var.sqrt();
        assert!((got - want).abs() < 1e-9, "got {got}, oracle {want}");
        assert!(got.abs() < 3.29);
    }

    // Many keys shifting together is the anomaly signature.
    #[test]
    fn correlated_shift_exceeds_threshold() {
        let prev = keymap(&(0..100).map(|i| (i, 1_000u64)).collect::<Vec<_>>());
        let next = keymap(
            &(0..100)
                .map(|i| (i, if i < 50 { 2_000u64 } else { 1_000 }))
                .collect::<Vec<_>>(),
        );
        let k = equilibrium_stat(&prev, &next).unwrap();
        assert!(k.abs() > 3.29, "K = {k}");
    }

    // Time reversal of the pair flips the sign; key identity is irrelevant.
    #[test]
    fn stat_antisymmetric_and_label_invariant() {
        let prev = keymap(&[(1, 100), (2, 300), (3, 900), (4, 70), (5, 10)]);
        let next = keymap(&[(1, 140), (2, 260), (3, 1100), (4, 10), (5, 15)]);
        let fwd = equilibrium_stat(&prev, &next).unwrap();
        let rev = equilibrium_stat(&next, &prev).unwrap();
        assert!((fwd + rev).abs() < 1e-9);

        let relabel = |m: &HashMap<FlowKey, u64>, shift: u32| -> HashMap<FlowKey, u64> {
            m.iter()
                .map(|(k, v)| (FlowKey { src24: k.src24 + shift, ..*k }, *v))
                .collect()
        };
        let fwd2 = equilibrium_stat(&relabel(&prev, 7777), &relabel(&next, 7777)).unwrap();
        assert!((fwd - fwd2).abs() < 1e-12);
    }

    #[test]
    fn uniform_nonzero_shift_with_zero_stdev_flags() {
        let prev = keymap(&[(1, 100), (2, 100)]);
        let next = keymap(&[(1, 200), (2, 200)]);
        let k = equilibrium_stat(&prev, &next).unwrap();
        assert!(k.is_infinite() && k > 0.0);
    }

    #[test]
    fn equilibrium_detector_merges_adjacent_pairs() {
        let mut stream = MonitorStream::new(StreamKind::Overall);
        // 20 background keys static across bins 0..10, except a correlated
        // surge entering at bins 4..=6
        for bin in 0..10i64 {
            for key in 0..20u8 {
                stream.add(&stream_flow(bin, [10, 0, key, 1], 443, [10, 1, 0, 1], 50_000 + u16::from(key), 6, 0x18, 10, 10_000));
            }
            if (4..=6).contains(&bin) {
                let scale = 1 + (bin - 4) as u64;
                for key in 0..30u8 {
                    stream.add(&stream_flow(bin, [11, 0, key, 1], 443, [10, 9, 0, 1], 40_000 + u16::from(key), 6, 0x18, 100, 200_000 * scale));
                }
            }
        }
        let got = equilibrium_detect(&stream, 3.29);
        assert_eq!(got.len(), 1, "{got:?}");
        let c = got[0];
        assert!(c.start_bin <= 4 && c.end_bin >= 6, "{c:?}");
    }

    #[test]
    fn threshold_detector_flags_per_destination_excess() {
        let mut stream = MonitorStream::new(StreamKind::Ntp);
        // baseline: 1 MB per bin from port 123 spread over many dsts
        for bin in 0..12i64 {
            for d in 0..10u8 {
                stream.add(&stream_flow(bin, [10, 0, 0, 1], 123, [10, 1, d, 1], 50_000, 17, 0, 100, 100_000));
            }
            // attack toward one /24 in bins 5..=7: 6 GB/bin > 100 Mb/s
            if (5..=7).contains(&bin) {
                stream.add(&stream_flow(bin, [12, 0, 0, 1], 123, [10, 9, 9, 1], 50_000, 17, 0, 1_000_000, 6_000_000_000));
            }
        }
        let out = threshold_detect(&stream, &ThresholdRules::default());
        assert!(out.warnings.is_empty());
        assert_eq!(out.intervals.len(), 1);
        assert_eq!((out.intervals[0].start_bin, out.intervals[0].end_bin), (5, 7));

        // half the limit: quiet
        let mut quiet = MonitorStream::new(StreamKind::Ntp);
        for bin in 0..12i64 {
            quiet.add(&stream_flow(bin, [10, 0, 0, 1], 123, [10, 1, 0, 1], 50_000, 17, 0, 200, 1_875_000_000));
        }
        assert!(threshold_detect(&quiet, &ThresholdRules::default()).intervals.is_empty());

        // nonpositive rule: degenerate, warn
        let rules = ThresholdRules { ntp_amp_mbps: 0.0, ..ThresholdRules::default() };
        let out = threshold_detect(&stream, &rules);
        assert!(!out.warnings.is_empty());
        assert!(!out.intervals.is_empty());
    }

    #[test]
    fn syn_rule_counts_only_pure_syn_packets() {
        let mut stream = MonitorStream::new(StreamKind::SynSynack);
        // SYN-ACK volume alone must not trip the SYN rule
        stream.add(&stream_flow(3, [10, 0, 0, 1], 80, [10, 1, 0, 1], 50_000, 6, 0x12, 20_000_000, 800_000_000));
        let out = threshold_detect(&stream, &ThresholdRules::default());
        assert!(out.intervals.is_empty());
        // pure-SYN at the same rate does
        stream.add(&stream_flow(4, [10, 0, 0, 2], 50_001, [10, 1, 0, 1], 80, 6, 0x02, 20_000_000, 800_000_000));
        let out = threshold_detect(&stream, &ThresholdRules::default());
        assert_eq!(out.intervals.len(), 1);
        assert_eq!(out.intervals[0].start_bin, 4);
    }

    #[test]
    fn expected_volume_short_uses_preceding_bin() {
        let mut stream = MonitorStream::new(StreamKind::Overall);
        for bin in 0..10i64 {
            let bytes = if bin == 5 { 40_000_000 } else { 30_000_000 };
            stream.add(&stream_flow(bin, [10, 0, 0, 1], 443, [10, 1, 0, 1], 50_000, 6, 0x18, 100, bytes));
        }
        // 10-minute anomaly at bins 5..=6
        let v = expected_volume(&stream, 5, 6, &[(5, 6)]).unwrap();
        assert_eq!(v, 30_000_000.0);
    }

    #[test]
    fn expected_volume_long_averages_surrounding_days() {
        let mut stream = MonitorStream::new(StreamKind::Ntp);
        let bins_per_day = 288i64;
        // constant 80 MB at the same slot every day for a week
        for day in 0..7i64 {
            for slot in 0..bins_per_day {
                let bytes = if day == 3 && (100..124).contains(&slot) { 400_000_000 } else { 80_000_000 };
                stream.add(&stream_flow(day * bins_per_day + slot, [10, 0, 0, 1], 123, [10, 1, 0, 1], 50_000, 17, 0, 100, bytes));
            }
        }
        // a 2-hour anomaly on day 3: exp from the same slot on other days
        let start = 3 * bins_per_day + 100;
        let end = start + 23;
        let v = expected_volume(&stream, start, end, &[(start, end)]).unwrap();
        assert_eq!(v, 80_000_000.0);

        // and zeta comes out as peak / expected
        let peak = (start..=end).map(|b| stream.volume(b)).max().unwrap() as f64;
        assert_eq!(peak / v, 5.0);
    }

    #[test]
    fn expected_volume_unavailable_without_clean_history() {
        let mut stream = MonitorStream::new(StreamKind::Overall);
        stream.add(&stream_flow(0, [10, 0, 0, 1], 443, [10, 1, 0, 1], 50_000, 6, 0x18, 10, 1_000));
        stream.add(&stream_flow(1, [10, 0, 0, 1], 443, [10, 1, 0, 1], 50_000, 6, 0x18, 10, 9_000));
        // anomaly starts at the very first bin: nothing precedes it
        let err = expected_volume(&stream, 0, 1, &[(0, 1)]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }
}
