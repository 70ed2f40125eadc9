//! Coarse and application-level traffic classification.
//!
//! Coarse classes split traffic by protocol and TCP flags; everything that is
//! UDP, or TCP without a pure-SYN flag set, is a candidate for application
//! labeling. Application labels come from a fixed precedence: membership of
//! an endpoint prefix in the known meeting/gaming server list wins over port
//! rules, then single-service port matches, then the highhigh / twoservice /
//! noservice buckets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::attrib::{DirectedFlow, PrefixId, ServicePorts};
use crate::error::{Error, Result};
use crate::flow::{FlowRecord, PROTO_ICMP, PROTO_TCP, PROTO_UDP, TCP_FLAG_SYN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseClass {
    Icmp,
    Otprot,
    Syn,
    Candidate,
}

impl CoarseClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoarseClass::Icmp => "icmp",
            CoarseClass::Otprot => "otprot",
            CoarseClass::Syn => "syn",
            CoarseClass::Candidate => "candidate",
        }
    }
}

/// Protocol/flag classification. TCP flows with only the SYN flag set are
/// scans or flows whose single sampled packet was the SYN; they are kept out
/// of the application candidates.
pub fn coarse_class(rec: &FlowRecord) -> CoarseClass {
    match rec.proto {
        PROTO_ICMP => CoarseClass::Icmp,
        PROTO_TCP => {
            if rec.tcp_flags == TCP_FLAG_SYN {
                CoarseClass::Syn
            } else {
                CoarseClass::Candidate
            }
        }
        PROTO_UDP => CoarseClass::Candidate,
        _ => CoarseClass::Otprot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppLabel {
    Ssh,
    Telnet,
    Ftp,
    Web,
    Unidata,
    Https,
    Rsync,
    Vpn,
    Perfsonar,
    Email,
    Dns,
    Ntp,
    Steam,
    Bluejeans,
    Zoom,
    Skype,
    Gmeet,
    Goto,
    Webex,
    Highhigh,
    Twoservice,
    Noservice,
}

pub const MG_LABELS: [AppLabel; 7] = [
    AppLabel::Steam,
    AppLabel::Bluejeans,
    AppLabel::Zoom,
    AppLabel::Skype,
    AppLabel::Gmeet,
    AppLabel::Goto,
    AppLabel::Webex,
];

impl AppLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AppLabel::Ssh => "ssh",
            AppLabel::Telnet => "telnet",
            AppLabel::Ftp => "ftp",
            AppLabel::Web => "web",
            AppLabel::Unidata => "unidata",
            AppLabel::Https => "https",
            AppLabel::Rsync => "rsync",
            AppLabel::Vpn => "vpn",
            AppLabel::Perfsonar => "perfsonar",
            AppLabel::Email => "email",
            AppLabel::Dns => "dns",
            AppLabel::Ntp => "ntp",
            AppLabel::Steam => "steam",
            AppLabel::Bluejeans => "bluejeans",
            AppLabel::Zoom => "zoom",
            AppLabel::Skype => "skype",
            AppLabel::Gmeet => "gmeet",
            AppLabel::Goto => "goto",
            AppLabel::Webex => "webex",
            AppLabel::Highhigh => "highhigh",
            AppLabel::Twoservice => "twoservice",
            AppLabel::Noservice => "noservice",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_LABELS
            .iter()
            .find(|l| l.as_str() == s.trim().to_ascii_lowercase())
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown application label {s:?}")))
    }

    /// Labels assigned only through the known meeting/gaming prefix list.
    pub fn is_mg(&self) -> bool {
        MG_LABELS.contains(self)
    }
}

impl std::fmt::Display for AppLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const ALL_LABELS: [AppLabel; 22] = [
    AppLabel::Ssh,
    AppLabel::Telnet,
    AppLabel::Ftp,
    AppLabel::Web,
    AppLabel::Unidata,
    AppLabel::Https,
    AppLabel::Rsync,
    AppLabel::Vpn,
    AppLabel::Perfsonar,
    AppLabel::Email,
    AppLabel::Dns,
    AppLabel::Ntp,
    AppLabel::Steam,
    AppLabel::Bluejeans,
    AppLabel::Zoom,
    AppLabel::Skype,
    AppLabel::Gmeet,
    AppLabel::Goto,
    AppLabel::Webex,
    AppLabel::Highhigh,
    AppLabel::Twoservice,
    AppLabel::Noservice,
];

/// Application label to its well-known port set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortMap {
    entries: BTreeMap<AppLabel, BTreeSet<u16>>,
    #[serde(skip)]
    by_port: BTreeMap<u16, AppLabel>,
}

impl Default for PortMap {
    fn default() -> Self {
        let mut m = PortMap { entries: BTreeMap::new(), by_port: BTreeMap::new() };
        let defaults: [(AppLabel, &[u16]); 12] = [
            (AppLabel::Web, &[80, 81, 82, 8080, 8090]),
            (AppLabel::Https, &[443, 4433]),
            (AppLabel::Vpn, &[4500, 4501, 4502]),
            (AppLabel::Email, &[25, 110, 995, 143, 993, 2525, 465]),
            (AppLabel::Ftp, &[20, 21]),
            (AppLabel::Telnet, &[23]),
            (AppLabel::Ssh, &[22]),
            (AppLabel::Unidata, &[388]),
            (AppLabel::Rsync, &[873]),
            (AppLabel::Perfsonar, &[5201]),
            (AppLabel::Dns, &[53]),
            (AppLabel::Ntp, &[123]),
        ];
        for (label, ports) in defaults {
            m.set(label, ports.iter().copied()).expect("default port map is conflict-free");
        }
        m
    }
}

impl PortMap {
    pub fn empty() -> Self {
        PortMap { entries: BTreeMap::new(), by_port: BTreeMap::new() }
    }

    pub fn set(&mut self, label: AppLabel, ports: impl IntoIterator<Item = u16>) -> Result<()> {
        if label.is_mg() {
            return Err(Error::invalid(format!(
                "{label} is assigned through the known-mg-prefix list, not ports"
            )));
        }
        for p in ports {
            if let Some(prev) = self.by_port.get(&p) {
                if *prev != label {
                    return Err(Error::invalid(format!("port {p} claimed by both {prev} and {label}")));
                }
            }
            self.by_port.insert(p, label);
            self.entries.entry(label).or_default().insert(p);
        }
        Ok(())
    }

    pub fn label_of(&self, port: u16) -> Option<AppLabel> {
        self.by_port.get(&port).copied()
    }

    pub fn ports_of(&self, label: AppLabel) -> Option<&BTreeSet<u16>> {
        self.entries.get(&label)
    }

    /// All mapped ports; with the system range these form the service-port
    /// set used for the twoservice/noservice decision and for direction
    /// inference.
    pub fn service_ports(&self) -> ServicePorts {
        ServicePorts::with_extra(self.by_port.keys().copied())
    }

    /// Reads a `label:port,port,...` override file, one label per line.
    /// Lines replace the defaults for that label.
    pub fn load_overrides(&mut self, reader: impl Read) -> Result<()> {
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(Error::Io)?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (label, ports) = t
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("port map line {}: missing ':'", lineno + 1)))?;
            let label = AppLabel::parse(label)?;
            if let Some(old) = self.entries.remove(&label) {
                for p in old {
                    self.by_port.remove(&p);
                }
            }
            let parsed: Result<Vec<u16>> = ports
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u16>()
                        .map_err(|_| Error::invalid(format!("port map line {}: bad port {p:?}", lineno + 1)))
                })
                .collect();
            self.set(label, parsed?)?;
        }
        Ok(())
    }
}

/// Lookup interface for the known meeting/gaming prefix list; implemented by
/// the mg pipeline's output and by test stubs.
pub trait MgLookup {
    fn app_of(&self, prefix: PrefixId) -> Option<AppLabel>;
}

/// A lookup with no entries.
pub struct NoMg;

impl MgLookup for NoMg {
    fn app_of(&self, _prefix: PrefixId) -> Option<AppLabel> {
        None
    }
}

impl MgLookup for BTreeMap<PrefixId, AppLabel> {
    fn app_of(&self, prefix: PrefixId) -> Option<AppLabel> {
        self.get(&prefix).copied()
    }
}

/// Applies the label precedence to one candidate flow:
/// 1. either endpoint prefix on the known-mg list -> that application;
/// 2. exactly one endpoint port in the port map and the peer port dynamic -> that label;
/// 3. both ports above 10,000 -> highhigh;
/// 4. both ports in the service set -> twoservice;
/// 5. neither port in the service set -> noservice;
/// 6. otherwise unlabeled.
pub fn app_label(flow: &DirectedFlow, ports: &PortMap, mg: &impl MgLookup) -> Option<AppLabel> {
    let rec = &flow.flow.rec;
    label_ports_mg(
        rec.src_port,
        rec.dst_port,
        mg.app_of(PrefixId::of(rec.src_ip)).or_else(|| mg.app_of(PrefixId::of(rec.dst_ip))),
        ports,
    )
}

/// Port-pair core of the precedence, separated so it can be enumerated
/// exhaustively in tests.
pub fn label_ports_mg(
    src_port: u16,
    dst_port: u16,
    mg_app: Option<AppLabel>,
    ports: &PortMap,
) -> Option<AppLabel> {
    if let Some(app) = mg_app {
        return Some(app);
    }
    let src_label = ports.label_of(src_port);
    let dst_label = ports.label_of(dst_port);
    match (src_label, dst_label) {
        (Some(l), None) if dst_port > 1023 => return Some(l),
        (None, Some(l)) if src_port > 1023 => return Some(l),
        _ => {}
    }
    if src_port > 10_000 && dst_port > 10_000 {
        return Some(AppLabel::Highhigh);
    }
    let svc = ports.service_ports();
    match (svc.contains(src_port), svc.contains(dst_port)) {
        (true, true) => Some(AppLabel::Twoservice),
        (false, false) => Some(AppLabel::Noservice),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::attrib::{build_directory, infer_direction, DirectorySource};
    use crate::flow::{upsample, FlowRecord};
    use crate::time::Timestamp;

    fn rec(proto: u8, flags: u8) -> FlowRecord {
        FlowRecord {
            ts_start: Timestamp(0),
            ts_end: Timestamp(1),
            proto,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            src_port: 80,
            dst_ip: Ipv4Addr::new(10, 0, 1, 1),
            dst_port: 50000,
            sampled_packets: 1,
            sampled_bytes: 100,
            tcp_flags: flags,
            sampling_rate: 1,
        }
    }

    #[test]
    fn coarse_classes() {
        assert_eq!(coarse_class(&rec(6, TCP_FLAG_SYN)), CoarseClass::Syn);
        assert_eq!(coarse_class(&rec(6, TCP_FLAG_SYN | 0x10)), CoarseClass::Candidate);
        assert_eq!(coarse_class(&rec(6, 0)), CoarseClass::Candidate);
        assert_eq!(coarse_class(&rec(17, 0)), CoarseClass::Candidate);
        assert_eq!(coarse_class(&rec(1, 0)), CoarseClass::Icmp);
        assert_eq!(coarse_class(&rec(41, 0)), CoarseClass::Otprot);
        assert_eq!(coarse_class(&rec(47, 0)), CoarseClass::Otprot);
    }

    #[test]
    fn default_port_map_matches_published_sets() {
        let m = PortMap::default();
        assert_eq!(m.label_of(22), Some(AppLabel::Ssh));
        assert_eq!(m.label_of(80), Some(AppLabel::Web));
        assert_eq!(m.label_of(8090), Some(AppLabel::Web));
        assert_eq!(m.label_of(388), Some(AppLabel::Unidata));
        assert_eq!(m.label_of(4433), Some(AppLabel::Https));
        assert_eq!(m.label_of(873), Some(AppLabel::Rsync));
        assert_eq!(m.label_of(4502), Some(AppLabel::Vpn));
        assert_eq!(m.label_of(5201), Some(AppLabel::Perfsonar));
        assert_eq!(m.label_of(2525), Some(AppLabel::Email));
        assert_eq!(m.label_of(53), Some(AppLabel::Dns));
        assert_eq!(m.label_of(123), Some(AppLabel::Ntp));
        assert_eq!(m.label_of(9999), None);
        assert_eq!(
            m.ports_of(AppLabel::Email).unwrap().iter().copied().collect::<Vec<_>>(),
            vec![25, 110, 143, 465, 993, 995, 2525]
        );
    }

    #[test]
    fn port_map_overrides() {
        let mut m = PortMap::default();
        m.load_overrides("web:80,8000\nssh:22\n".as_bytes()).unwrap();
        assert_eq!(m.label_of(8000), Some(AppLabel::Web));
        assert_eq!(m.label_of(8080), None);
        assert!(m.load_overrides("zoom:8801\n".as_bytes()).is_err());
    }

    fn mg_list() -> BTreeMap<PrefixId, AppLabel> {
        let mut m = BTreeMap::new();
        m.insert(PrefixId::parse("100.64.3.0/24").unwrap(), AppLabel::Zoom);
        m
    }

    #[test]
    fn label_rules() {
        let ports = PortMap::default();
        let mg = mg_list();
        let lab = |sp, dp| label_ports_mg(sp, dp, None, &ports);
        assert_eq!(lab(22, 51000), Some(AppLabel::Ssh));
        assert_eq!(lab(51000, 22), Some(AppLabel::Ssh));
        assert_eq!(lab(10001, 20000), Some(AppLabel::Highhigh));
        assert_eq!(lab(53, 123), Some(AppLabel::Twoservice));
        assert_eq!(lab(2000, 3000), Some(AppLabel::Noservice));
        // one service port without a label, peer not dynamic-high: unlabeled
        assert_eq!(lab(500, 5000), None);
        // mg membership dominates everything, including https ports
        assert_eq!(label_ports_mg(443, 50000, Some(AppLabel::Zoom), &ports), Some(AppLabel::Zoom));
        let _ = mg;
    }

    #[test]
    fn mg_lookup_applies_to_either_endpoint() {
        let src = DirectorySource::default();
        let (dir, _) = build_directory(&src);
        let ports = PortMap::default();
        let mg = mg_list();
        let flow = upsample(FlowRecord {
            ts_start: Timestamp(0),
            ts_end: Timestamp(1),
            proto: 17,
            src_ip: Ipv4Addr::new(100, 64, 3, 20),
            src_port: 8801,
            dst_ip: Ipv4Addr::new(10, 0, 0, 5),
            dst_port: 49152,
            sampled_packets: 1,
            sampled_bytes: 100,
            tcp_flags: 0,
            sampling_rate: 1,
        });
        let df = infer_direction(flow, &dir, &ports.service_ports());
        assert_eq!(app_label(&df, &ports, &mg), Some(AppLabel::Zoom));
    }

    // Independent straight-line restatement of the precedence, used as the
    // oracle for the exhaustive grid below.
    fn oracle(sp: u16, dp: u16, mg: Option<AppLabel>, ports: &PortMap) -> Option<AppLabel> {
        if let Some(app) = mg {
            return Some(app);
        }
        let sl = ports.label_of(sp);
        let dl = ports.label_of(dp);
        if sl.is_some() && dl.is_none() && dp > 1023 {
            return sl;
        }
        if dl.is_some() && sl.is_none() && sp > 1023 {
            return dl;
        }
        if sp > 10_000 && dp > 10_000 {
            return Some(AppLabel::Highhigh);
        }
        let svc = ports.service_ports();
        let s_in = svc.contains(sp);
        let d_in = svc.contains(dp);
        if s_in && d_in {
            return Some(AppLabel::Twoservice);
        }
        if !s_in && !d_in {
            return Some(AppLabel::Noservice);
        }
        None
    }

    // Stratified port grid: every mapped port, boundary ports, and a spread
    // of dynamic ports; paired exhaustively with and without mg membership.
    #[test]
    fn precedence_matches_oracle_on_port_grid() {
        let ports = PortMap::default();
        let mut grid: Vec<u16> = vec![0, 1, 1023, 1024, 9999, 10_000, 10_001, 20_000, 65_535];
        for step in (0..=65_535u32).step_by(797) {
            grid.push(step as u16);
        }
        for label_ports in ALL_LABELS.iter().filter_map(|l| ports.ports_of(*l)) {
            grid.extend(label_ports.iter().copied());
            grid.extend(label_ports.iter().map(|p| p.wrapping_add(1)));
        }
        grid.sort_unstable();
        grid.dedup();

        for &sp in &grid {
            for &dp in &grid {
                for mg in [None, Some(AppLabel::Zoom)] {
                    let got = label_ports_mg(sp, dp, mg, &ports);
                    let want = oracle(sp, dp, mg, &ports);
                    assert_eq!(got, want, "ports ({sp},{dp}) mg={mg:?}");
                }
            }
        }
    }

    // Every candidate flow gets exactly one outcome, and per-label volumes
    // partition candidate volume exactly.
    #[test]
    fn label_volumes_partition_candidates() {
        use rand::{Rng, SeedableRng};
        let (dir, _) = build_directory(&DirectorySource::default());
        let ports = PortMap::default();
        let svc = ports.service_ports();
        let mg = mg_list();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);

        let mut candidate_bytes: u64 = 0;
        let mut labeled: BTreeMap<AppLabel, u64> = BTreeMap::new();
        let mut unlabeled: u64 = 0;
        for _ in 0..20_000 {
            let r = FlowRecord {
                ts_start: Timestamp(0),
                ts_end: Timestamp(1),
                proto: if rng.gen_bool(0.5) { 6 } else { 17 },
                src_ip: Ipv4Addr::from(rng.gen::<u32>()),
                src_port: rng.gen(),
                dst_ip: Ipv4Addr::from(rng.gen::<u32>()),
                dst_port: rng.gen(),
                sampled_packets: 1,
                sampled_bytes: rng.gen_range(100..10_000),
                tcp_flags: if rng.gen_bool(0.1) { TCP_FLAG_SYN } else { 0x18 },
                sampling_rate: 1,
            };
            if coarse_class(&r) != CoarseClass::Candidate {
                continue;
            }
            let df = infer_direction(upsample(r), &dir, &svc);
            candidate_bytes += df.flow.bytes;
            match app_label(&df, &ports, &mg) {
                Some(l) => *labeled.entry(l).or_default() += df.flow.bytes,
                None => unlabeled += df.flow.bytes,
            }
        }
        let labeled_total: u64 = labeled.values().sum();
        assert_eq!(labeled_total + unlabeled, candidate_bytes);
    }
}
