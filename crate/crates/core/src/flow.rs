//! Sampled flow records: parsing, validation, and up-sampling.
//!
//! A record summarizes one unidirectional sampled flow. Volumes carried by a
//! record are the *sampled* counts; multiplying by the sampling rate recovers
//! the estimated true volume. Up-sampling is exact integer arithmetic; nothing
//! here touches floating point.

use std::io::Read;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const TCP_FLAG_FIN: u8 = 0x01;
pub const TCP_FLAG_SYN: u8 = 0x02;
pub const TCP_FLAG_RST: u8 = 0x04;
pub const TCP_FLAG_PSH: u8 = 0x08;
pub const TCP_FLAG_ACK: u8 = 0x10;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// One sampled, unidirectional flow observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub ts_start: Timestamp,
    pub ts_end: Timestamp,
    pub proto: u8,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub sampled_packets: u64,
    pub sampled_bytes: u64,
    /// Cumulative TCP flags; meaningful only when proto is TCP.
    pub tcp_flags: u8,
    /// 1-in-N packet sampling rate.
    pub sampling_rate: u32,
}

impl FlowRecord {
    /// Checks the record-level invariants shared by the parser and the
    /// synthetic generator.
    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate == 0 {
            return Err(Error::invalid("nonpositive sampling rate"));
        }
        if self.ts_start > self.ts_end {
            return Err(Error::invalid("ts_start after ts_end"));
        }
        if self.sampled_packets == 0 {
            return Err(Error::invalid("zero sampled packets"));
        }
        if self.sampled_bytes < self.sampled_packets {
            return Err(Error::invalid("fewer bytes than packets"));
        }
        Ok(())
    }
}

/// A flow record with estimated true volumes restored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampledFlow {
    pub rec: FlowRecord,
    pub packets: u64,
    pub bytes: u64,
}

/// Multiplies sampled counts by the sampling rate. Exact; all other fields
/// are copied through.
pub fn upsample(rec: FlowRecord) -> UpsampledFlow {
    let rate = u64::from(rec.sampling_rate);
    UpsampledFlow {
        packets: rec.sampled_packets * rate,
        bytes: rec.sampled_bytes * rate,
        rec,
    }
}

/// Ingest-side configuration for the CSV parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Sampling rates declared by the capture points. Empty means any
    /// positive rate is accepted.
    pub declared_rates: Vec<u32>,
    /// Abort on the first malformed line instead of collecting errors.
    pub strict: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { declared_rates: vec![100, 4096], strict: false }
    }
}

impl IngestConfig {
    pub fn any_rate() -> Self {
        IngestConfig { declared_rates: vec![], strict: false }
    }

    fn rate_ok(&self, rate: u32) -> bool {
        rate >= 1 && (self.declared_rates.is_empty() || self.declared_rates.contains(&rate))
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<FlowRecord>,
    pub issues: Vec<ParseIssue>,
}

pub const FLOW_CSV_HEADER: &str =
    "ts_start,ts_end,proto,src_ip,src_port,dst_ip,dst_port,packets,bytes,tcp_flags,sampling_rate";

/// Parses the flow CSV format. One record per well-formed line, in file
/// order; malformed lines are reported with their line number and skipped
/// unless `strict` is set, in which case the first issue aborts the parse.
pub fn parse_flows<R: Read>(reader: R, config: &IngestConfig) -> Result<ParseOutcome> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    {
        let headers = csv
            .headers()
            .map_err(|e| Error::invalid(format!("unreadable header: {e}")))?;
        let expected: Vec<&str> = FLOW_CSV_HEADER.split(',').collect();
        let got: Vec<&str> = headers.iter().collect();
        if !got.is_empty() && got != expected {
            return Err(Error::invalid(format!(
                "unexpected flow CSV header {got:?}, want {expected:?}"
            )));
        }
    }

    let mut out = ParseOutcome::default();
    for (i, row) in csv.records().enumerate() {
        let line = i as u64 + 2; // 1-based, after the header
        let parsed = row
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r, config));
        match parsed {
            Ok(rec) => out.records.push(rec),
            Err(message) => {
                if config.strict {
                    return Err(Error::Parse { line, message });
                }
                out.issues.push(ParseIssue { line, message });
            }
        }
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, config: &IngestConfig) -> std::result::Result<FlowRecord, String> {
    if row.len() != 11 {
        return Err(format!("expected 11 fields, got {}", row.len()));
    }
    let field = |i: usize| row.get(i).unwrap_or("");
    let ts_start = Timestamp::parse(field(0)).map_err(|e| e.to_string())?;
    let ts_end = Timestamp::parse(field(1)).map_err(|e| e.to_string())?;
    let proto: u8 = field(2).parse().map_err(|_| format!("bad proto {:?}", field(2)))?;
    let src_ip: Ipv4Addr = field(3).parse().map_err(|_| format!("bad src_ip {:?}", field(3)))?;
    let src_port: u16 =
        field(4).parse().map_err(|_| format!("bad src_port {:?}", field(4)))?;
    let dst_ip: Ipv4Addr = field(5).parse().map_err(|_| format!("bad dst_ip {:?}", field(5)))?;
    let dst_port: u16 =
        field(6).parse().map_err(|_| format!("bad dst_port {:?}", field(6)))?;
    let sampled_packets: u64 =
        field(7).parse().map_err(|_| format!("bad packets {:?}", field(7)))?;
    let sampled_bytes: u64 =
        field(8).parse().map_err(|_| format!("bad bytes {:?}", field(8)))?;
    let tcp_flags: u8 =
        field(9).parse().map_err(|_| format!("bad tcp_flags {:?}", field(9)))?;
    let sampling_rate: i64 =
        field(10).parse().map_err(|_| format!("bad sampling_rate {:?}", field(10)))?;

    if sampling_rate <= 0 {
        return Err("nonpositive sampling rate".to_string());
    }
    let sampling_rate = u32::try_from(sampling_rate).map_err(|_| "sampling rate out of range")?;
    if !config.rate_ok(sampling_rate) {
        return Err(format!("undeclared sampling rate {sampling_rate}"));
    }

    let rec = FlowRecord {
        ts_start,
        ts_end,
        proto,
        src_ip,
        src_port,
        dst_ip,
        dst_port,
        sampled_packets,
        sampled_bytes,
        tcp_flags,
        sampling_rate,
    };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Serializes one record as a flow CSV line (no trailing newline).
pub fn flow_csv_line(rec: &FlowRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        rec.ts_start.to_rfc3339(),
        rec.ts_end.to_rfc3339(),
        rec.proto,
        rec.src_ip,
        rec.src_port,
        rec.dst_ip,
        rec.dst_port,
        rec.sampled_packets,
        rec.sampled_bytes,
        rec.tcp_flags,
        rec.sampling_rate
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> String {
        let mut s = String::from(FLOW_CSV_HEADER);
        s.push('\n');
        s.push_str("2020-02-24T10:20:00Z,2020-02-24T10:20:30Z,6,198.51.100.10,80,203.0.113.5,51514,13,18000,16,100\n");
        s.push_str("2020-02-24T10:20:01Z,2020-02-24T10:20:02Z,17,198.51.100.11,443,203.0.113.6,50001,2,2560,0,4096\n");
        s
    }

    #[test]
    fn parses_well_formed_lines_in_order() {
        let out = parse_flows(sample_csv().as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.issues.is_empty());
        let r = &out.records[0];
        assert_eq!(r.proto, 6);
        assert_eq!(r.src_port, 80);
        assert_eq!(r.sampled_packets, 13);
        assert_eq!(r.sampled_bytes, 18000);
        assert_eq!(r.sampling_rate, 100);
    }

    #[test]
    fn empty_stream_is_empty_and_error_free() {
        let csv = format!("{FLOW_CSV_HEADER}\n");
        let out = parse_flows(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.issues.is_empty());
    }

    #[test]
    fn zero_sampling_rate_is_rejected_with_line_number() {
        let csv = format!(
            "{FLOW_CSV_HEADER}\n2020-02-24T10:20:00Z,2020-02-24T10:20:30Z,6,198.51.100.10,80,203.0.113.5,51514,13,18000,16,0\n"
        );
        let out = parse_flows(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.issues.len(), 1);
        assert_eq!(out.issues[0].line, 2);
        assert!(out.issues[0].message.contains("nonpositive sampling rate"));
    }

    #[test]
    fn strict_mode_aborts_on_first_issue() {
        let csv = format!("{FLOW_CSV_HEADER}\nnot,a,flow\n");
        let config = IngestConfig { strict: true, ..IngestConfig::default() };
        let err = parse_flows(csv.as_bytes(), &config).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn undeclared_rate_is_rejected_unless_config_allows_any() {
        let csv = format!(
            "{FLOW_CSV_HEADER}\n2020-02-24T10:20:00Z,2020-02-24T10:20:30Z,6,198.51.100.10,80,203.0.113.5,51514,13,18000,16,64\n"
        );
        let out = parse_flows(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(out.issues.len(), 1);
        let out = parse_flows(csv.as_bytes(), &IngestConfig::any_rate()).unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn unknown_protocol_numbers_are_accepted() {
        let csv = format!(
            "{FLOW_CSV_HEADER}\n2020-02-24T10:20:00Z,2020-02-24T10:20:30Z,41,198.51.100.10,0,203.0.113.5,0,5,500,0,100\n"
        );
        let out = parse_flows(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].proto, 41);
    }

    // The two worked up-sampling examples: 13 packets / 18 KB at 1:100 and
    // 2 packets / 2.5 KiB at 1:4096.
    #[test]
    fn upsample_worked_examples() {
        let out = parse_flows(sample_csv().as_bytes(), &IngestConfig::default()).unwrap();
        let a = upsample(out.records[0]);
        assert_eq!(a.packets, 1_300);
        assert_eq!(a.bytes, 1_800_000);
        let b = upsample(out.records[1]);
        assert_eq!(b.packets, 8_192);
        assert_eq!(b.bytes, 10_485_760);
    }

    #[test]
    fn upsample_identity_rate() {
        let mut rec = FlowRecord {
            ts_start: Timestamp(0),
            ts_end: Timestamp(1000),
            proto: 17,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            src_port: 53,
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            dst_port: 40000,
            sampled_packets: 5,
            sampled_bytes: 500,
            tcp_flags: 0,
            sampling_rate: 1,
        };
        let up = upsample(rec);
        assert_eq!((up.packets, up.bytes), (5, 500));
        rec.sampling_rate = 37;
        let up = upsample(rec);
        assert_eq!(up.packets % 37, 0);
        assert_eq!(up.bytes % 37, 0);
    }

    #[test]
    fn csv_line_round_trips_bit_exactly() {
        let out = parse_flows(sample_csv().as_bytes(), &IngestConfig::default()).unwrap();
        let mut csv = format!("{FLOW_CSV_HEADER}\n");
        for r in &out.records {
            csv.push_str(&flow_csv_line(r));
            csv.push('\n');
        }
        let again = parse_flows(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(out.records, again.records);
    }
}
