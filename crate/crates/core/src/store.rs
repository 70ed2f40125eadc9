//! The labeled-volume store: per-bin, per-label, per-organization volume
//! aggregates produced by the classify stage and consumed by the change
//! reports. Persists as one CSV per local day plus a JSON summary, which
//! keeps reruns diffable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::attrib::{DirectedFlow, OrgCategory, Orientation, PrefixDirectory, ServerSide};
use crate::classify::{app_label, coarse_class, AppLabel, CoarseClass, MgLookup, PortMap};
use crate::error::{Error, Result};
use crate::time::{BinWidth, StudyCalendar, Timestamp};

/// A row of the labeled-volume tables: an application label, a coarse
/// class, or the unlabeled remainder of candidate traffic. Candidate as a
/// coarse class is rendered as `service`, the application-eligible bulk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RowKey {
    App(AppLabel),
    Coarse(CoarseClass),
    Unlabeled,
}

impl RowKey {
    pub fn name(&self) -> String {
        match self {
            RowKey::App(l) => l.as_str().to_string(),
            RowKey::Coarse(CoarseClass::Candidate) => "service".to_string(),
            RowKey::Coarse(c) => c.as_str().to_string(),
            RowKey::Unlabeled => "unlabeled".to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "service" => Ok(RowKey::Coarse(CoarseClass::Candidate)),
            "icmp" => Ok(RowKey::Coarse(CoarseClass::Icmp)),
            "syn" => Ok(RowKey::Coarse(CoarseClass::Syn)),
            "otprot" => Ok(RowKey::Coarse(CoarseClass::Otprot)),
            "unlabeled" => Ok(RowKey::Unlabeled),
            other => Ok(RowKey::App(AppLabel::parse(other)?)),
        }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub flows: u64,
    pub total_bytes: u64,
    pub candidate_bytes: u64,
    pub labeled_bytes: u64,
    pub unlabeled_bytes: u64,
    pub icmp_bytes: u64,
    pub syn_bytes: u64,
    pub otprot_bytes: u64,
    /// Flows touching at least one local prefix, for the locality share.
    pub local_flows: u64,
}

/// In-memory store. All keys are ordered so serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledStore {
    /// Bytes per 5-minute bin index, per row.
    pub five_min: BTreeMap<RowKey, BTreeMap<i64, u64>>,
    /// Bytes per local day for (local org, label, inbound/outbound).
    pub org_label_daily: BTreeMap<(String, AppLabel, Orientation), BTreeMap<NaiveDate, u64>>,
    /// Bytes per local day for (local org, remote category, inbound/outbound),
    /// over all traffic classes.
    pub org_peer_daily: BTreeMap<(String, OrgCategory, Orientation), BTreeMap<NaiveDate, u64>>,
    pub summary: StoreSummary,
}

impl LabeledStore {
    /// Classifies one directed flow into the store.
    pub fn add(
        &mut self,
        df: &DirectedFlow,
        ports: &PortMap,
        mg: &impl MgLookup,
        dir: &PrefixDirectory,
        cal: &StudyCalendar,
    ) {
        let bytes = df.flow.bytes;
        let bin = BinWidth::FiveMin.index_of(df.flow.rec.ts_start);
        let date = cal.local_date(df.flow.rec.ts_start);
        let coarse = coarse_class(&df.flow.rec);

        self.summary.flows += 1;
        self.summary.total_bytes += bytes;
        *self.five_min.entry(RowKey::Coarse(coarse)).or_default().entry(bin).or_default() += bytes;

        let label = match coarse {
            CoarseClass::Candidate => {
                self.summary.candidate_bytes += bytes;
                let label = app_label(df, ports, mg);
                match label {
                    Some(l) => {
                        self.summary.labeled_bytes += bytes;
                        *self
                            .five_min
                            .entry(RowKey::App(l))
                            .or_default()
                            .entry(bin)
                            .or_default() += bytes;
                    }
                    None => {
                        self.summary.unlabeled_bytes += bytes;
                        *self
                            .five_min
                            .entry(RowKey::Unlabeled)
                            .or_default()
                            .entry(bin)
                            .or_default() += bytes;
                    }
                }
                label
            }
            CoarseClass::Icmp => {
                self.summary.icmp_bytes += bytes;
                None
            }
            CoarseClass::Syn => {
                self.summary.syn_bytes += bytes;
                None
            }
            CoarseClass::Otprot => {
                self.summary.otprot_bytes += bytes;
                None
            }
        };

        let src_local = dir.is_local(df.src_prefix());
        let dst_local = dir.is_local(df.dst_prefix());
        if src_local || dst_local {
            self.summary.local_flows += 1;
        }

        // Direction-conditioned org aggregates use only flows with a
        // resolved server side and exactly one local endpoint.
        if matches!(df.orientation, Orientation::Inbound | Orientation::Outbound) {
            let (local_prefix, remote_prefix) = match (df.orientation, df.server_side) {
                (Orientation::Inbound, ServerSide::Src) => (df.src_prefix(), df.dst_prefix()),
                (Orientation::Inbound, ServerSide::Dst) => (df.dst_prefix(), df.src_prefix()),
                (Orientation::Outbound, ServerSide::Src) => (df.dst_prefix(), df.src_prefix()),
                (Orientation::Outbound, ServerSide::Dst) => (df.src_prefix(), df.dst_prefix()),
                (_, ServerSide::Ambiguous) => return,
                _ => unreachable!(),
            };
            let org = dir.lookup(local_prefix);
            let remote_cat = dir.lookup(remote_prefix).category;
            *self
                .org_peer_daily
                .entry((org.id.clone(), remote_cat, df.orientation))
                .or_default()
                .entry(date)
                .or_default() += bytes;
            if let Some(l) = label {
                *self
                    .org_label_daily
                    .entry((org.id.clone(), l, df.orientation))
                    .or_default()
                    .entry(date)
                    .or_default() += bytes;
            }
        }
    }

    pub fn build<'a>(
        flows: impl IntoIterator<Item = &'a DirectedFlow>,
        ports: &PortMap,
        mg: &impl MgLookup,
        dir: &PrefixDirectory,
        cal: &StudyCalendar,
    ) -> LabeledStore {
        let mut store = LabeledStore::default();
        for df in flows {
            store.add(df, ports, mg, dir, cal);
        }
        store
    }

    /// Observed 5-minute bin index range, over every row.
    pub fn observed_bins(&self) -> Option<(i64, i64)> {
        let mut range: Option<(i64, i64)> = None;
        for bins in self.five_min.values() {
            if let (Some((lo, _)), Some((hi, _))) = (bins.first_key_value(), bins.last_key_value())
            {
                range = Some(match range {
                    Some((a, b)) => (a.min(*lo), b.max(*hi)),
                    None => (*lo, *hi),
                });
            }
        }
        range
    }

    /// Total bytes per 5-minute bin across the coarse classes.
    pub fn total_per_bin(&self) -> BTreeMap<i64, u64> {
        let mut totals: BTreeMap<i64, u64> = BTreeMap::new();
        for key in [
            RowKey::Coarse(CoarseClass::Candidate),
            RowKey::Coarse(CoarseClass::Icmp),
            RowKey::Coarse(CoarseClass::Syn),
            RowKey::Coarse(CoarseClass::Otprot),
        ] {
            if let Some(bins) = self.five_min.get(&key) {
                for (b, v) in bins {
                    *totals.entry(*b).or_default() += v;
                }
            }
        }
        totals
    }

    /// Writes the store as day-partitioned CSV plus `summary.json`.
    pub fn write_to_dir(&self, out: &Path, cal: &StudyCalendar) -> Result<()> {
        std::fs::create_dir_all(out)?;

        let mut by_day: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
        for (key, bins) in &self.five_min {
            for (bin, bytes) in bins {
                let start = BinWidth::FiveMin.bin(*bin).start;
                let day = cal.local_date(start);
                by_day.entry(day).or_default().push(format!(
                    "five_min,{},{},,,,{bytes}",
                    start.to_rfc3339(),
                    key.name()
                ));
            }
        }
        for ((org, label, orient), days) in &self.org_label_daily {
            for (day, bytes) in days {
                by_day.entry(*day).or_default().push(format!(
                    "org_label,{day},{label},{org},{},,{bytes}",
                    orient.as_str()
                ));
            }
        }
        for ((org, cat, orient), days) in &self.org_peer_daily {
            for (day, bytes) in days {
                by_day.entry(*day).or_default().push(format!(
                    "org_peer,{day},,{org},{},{cat},{bytes}",
                    orient.as_str()
                ));
            }
        }

        for (day, mut rows) in by_day {
            rows.sort();
            let path = out.join(format!("labels-{day}.csv"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "record,time,key,org,orientation,remote_category,bytes")?;
            for r in rows {
                writeln!(f, "{r}")?;
            }
        }

        let summary = serde_json::to_string_pretty(&self.summary)
            .map_err(|e| Error::internal(format!("summary serialization: {e}")))?;
        std::fs::write(out.join("summary.json"), summary)?;
        Ok(())
    }

    /// Loads a store previously written with [`write_to_dir`].
    pub fn load_from_dir(dir: &Path, cal: &StudyCalendar) -> Result<LabeledStore> {
        let mut store = LabeledStore::default();
        let summary_path = dir.join("summary.json");
        let summary = std::fs::read_to_string(&summary_path).map_err(|e| {
            Error::invalid(format!("cannot read {}: {e}", summary_path.display()))
        })?;
        store.summary = serde_json::from_str(&summary)
            .map_err(|e| Error::invalid(format!("bad summary.json: {e}")))?;

        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("labels-") && n.ends_with(".csv"))
                    .unwrap_or(false)
            })
            .collect();
        entries.sort();

        for path in entries {
            let f = BufReader::new(std::fs::File::open(&path)?);
            for (lineno, line) in f.lines().enumerate() {
                let line = line?;
                if lineno == 0 || line.trim().is_empty() {
                    continue;
                }
                store.load_row(&line).map_err(|e| {
                    Error::invalid(format!("{} line {}: {e}", path.display(), lineno + 1))
                })?;
            }
        }
        let _ = cal;
        Ok(store)
    }

    fn load_row(&mut self, line: &str) -> Result<()> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::invalid(format!("expected 7 fields, got {}", fields.len())));
        }
        let bytes: u64 =
            fields[6].parse().map_err(|_| Error::invalid(format!("bad bytes {:?}", fields[6])))?;
        match fields[0] {
            "five_min" => {
                let ts = Timestamp::parse(fields[1])?;
                let key = RowKey::parse(fields[2])?;
                let bin = BinWidth::FiveMin.index_of(ts);
                *self.five_min.entry(key).or_default().entry(bin).or_default() += bytes;
            }
            "org_label" => {
                let day: NaiveDate = fields[1]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad date {:?}", fields[1])))?;
                let label = AppLabel::parse(fields[2])?;
                let orient = parse_orientation(fields[4])?;
                *self
                    .org_label_daily
                    .entry((fields[3].to_string(), label, orient))
                    .or_default()
                    .entry(day)
                    .or_default() += bytes;
            }
            "org_peer" => {
                let day: NaiveDate = fields[1]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad date {:?}", fields[1])))?;
                let orient = parse_orientation(fields[4])?;
                let cat = OrgCategory::parse(fields[5])?;
                *self
                    .org_peer_daily
                    .entry((fields[3].to_string(), cat, orient))
                    .or_default()
                    .entry(day)
                    .or_default() += bytes;
            }
            other => return Err(Error::invalid(format!("unknown record kind {other:?}"))),
        }
        Ok(())
    }
}

fn parse_orientation(s: &str) -> Result<Orientation> {
    match s {
        "inbound" => Ok(Orientation::Inbound),
        "outbound" => Ok(Orientation::Outbound),
        "local-local" => Ok(Orientation::LocalLocal),
        "transit" => Ok(Orientation::Transit),
        other => Err(Error::invalid(format!("unknown orientation {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::attrib::{build_directory, infer_direction, DirectorySource, PrefixId};
    use crate::classify::NoMg;
    use crate::flow::{upsample, FlowRecord};

    fn directory() -> PrefixDirectory {
        let src = DirectorySource {
            org_rows: vec![
                (
                    PrefixId::parse("10.1.0.0/24").unwrap(),
                    24,
                    "E01".into(),
                    "Example University".into(),
                    OrgCategory::Education,
                ),
                (
                    PrefixId::parse("100.64.0.0/24").unwrap(),
                    24,
                    "R01".into(),
                    "Remote Business".into(),
                    OrgCategory::Business,
                ),
            ],
            local_rows: vec![PrefixId::parse("10.1.0.0/24").unwrap()],
            anon_rows: vec![],
        };
        build_directory(&src).0
    }

    fn flow(ts_ms: i64, src: [u8; 4], sp: u16, dst: [u8; 4], dp: u16, bytes: u64) -> FlowRecord {
        FlowRecord {
            ts_start: Timestamp(ts_ms),
            ts_end: Timestamp(ts_ms + 1000),
            proto: 6,
            src_ip: Ipv4Addr::from(src),
            src_port: sp,
            dst_ip: Ipv4Addr::from(dst),
            dst_port: dp,
            sampled_packets: 10,
            sampled_bytes: bytes,
            tcp_flags: 0x18,
            sampling_rate: 1,
        }
    }

    #[test]
    fn store_routes_volume_and_round_trips() {
        let dir = directory();
        let ports = PortMap::default();
        let svc = ports.service_ports();
        let cal = StudyCalendar::default();
        let base = Timestamp::parse("2020-02-24T17:00:00Z").unwrap().0;

        let flows: Vec<_> = vec![
            // inbound https to the local org
            flow(base, [10, 1, 0, 5], 443, [100, 64, 0, 9], 50000, 4000),
            // outbound web fetch by the local org
            flow(base + 60_000, [100, 64, 0, 9], 80, [10, 1, 0, 5], 50001, 2500),
            // unlabeled candidate: one unmapped service port, peer outside
            // the service set but below the highhigh range
            flow(base + 120_000, [10, 1, 0, 5], 500, [100, 64, 0, 9], 5000, 999),
        ]
        .into_iter()
        .map(|r| infer_direction(upsample(r), &dir, &svc))
        .collect();

        let store = LabeledStore::build(flows.iter(), &ports, &NoMg, &dir, &cal);
        assert_eq!(store.summary.flows, 3);
        assert_eq!(store.summary.candidate_bytes, 4000 + 2500 + 999);
        assert_eq!(store.summary.labeled_bytes, 4000 + 2500);
        assert_eq!(store.summary.unlabeled_bytes, 999);
        assert_eq!(
            store.summary.candidate_bytes,
            store.summary.labeled_bytes + store.summary.unlabeled_bytes
        );

        let key = ("E01".to_string(), AppLabel::Https, Orientation::Inbound);
        assert_eq!(store.org_label_daily.get(&key).and_then(|d| d.values().next()), Some(&4000));
        let key = ("E01".to_string(), AppLabel::Web, Orientation::Outbound);
        assert_eq!(store.org_label_daily.get(&key).and_then(|d| d.values().next()), Some(&2500));
        let key = ("E01".to_string(), OrgCategory::Business, Orientation::Inbound);
        assert!(store.org_peer_daily.contains_key(&key));

        let tmp = tempfile::tempdir().unwrap();
        store.write_to_dir(tmp.path(), &cal).unwrap();
        let loaded = LabeledStore::load_from_dir(tmp.path(), &cal).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn write_is_deterministic() {
        let dir = directory();
        let ports = PortMap::default();
        let svc = ports.service_ports();
        let cal = StudyCalendar::default();
        let base = Timestamp::parse("2020-03-02T15:00:00Z").unwrap().0;
        let flows: Vec<_> = (0..50)
            .map(|i| flow(base + i * 10_000, [10, 1, 0, 5], 443, [100, 64, 0, 9], 50000, 100 + i as u64))
            .map(|r| infer_direction(upsample(r), &dir, &svc))
            .collect();
        let store = LabeledStore::build(flows.iter(), &ports, &NoMg, &dir, &cal);

        let t1 = tempfile::tempdir().unwrap();
        let t2 = tempfile::tempdir().unwrap();
        store.write_to_dir(t1.path(), &cal).unwrap();
        store.write_to_dir(t2.path(), &cal).unwrap();
        let read_all = |p: &Path| {
            let mut names: Vec<_> = std::fs::read_dir(p)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            names.into_iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(read_all(t1.path()), read_all(t2.path()));
    }
}
