//! Prefix-to-organization attribution and flow direction inference.
//!
//! Attribution works at the /24 level: that is the granularity at which the
//! anonymization can be reversed, so it is the unit of everything downstream
//! (classification, liveness, per-organization tables). Direction inference
//! follows the ports: the endpoint on a well-known service port is taken to
//! be the server.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::UpsampledFlow;

/// Anonymized /24 prefix: an IPv4 address with the low 8 bits zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixId(pub u32);

impl PrefixId {
    pub fn of(ip: Ipv4Addr) -> Self {
        PrefixId(u32::from(ip) & 0xFFFF_FF00)
    }

    pub fn from_base(ip: Ipv4Addr) -> Result<Self> {
        let v = u32::from(ip);
        if v & 0xFF != 0 {
            return Err(Error::invalid(format!("{ip} is not a /24 base address")));
        }
        Ok(PrefixId(v))
    }

    pub fn base_ip(self) -> Ipv4Addr {
        Ipv4Addr::from(self.0)
    }

    /// The enclosing /16, as its prefix value shifted to the low bits.
    pub fn slash16(self) -> u16 {
        (self.0 >> 16) as u16
    }

    /// Third octet within the enclosing /16.
    pub fn third_octet(self) -> u8 {
        ((self.0 >> 8) & 0xFF) as u8
    }

    pub fn addr(self, host: u8) -> Ipv4Addr {
        Ipv4Addr::from(self.0 | u32::from(host))
    }

    /// Parses `a.b.c.0/24` (or a bare base address).
    pub fn parse(s: &str) -> Result<Self> {
        let base = s.strip_suffix("/24").unwrap_or(s);
        let ip: Ipv4Addr =
            base.parse().map_err(|_| Error::invalid(format!("bad /24 prefix {s:?}")))?;
        Self::from_base(ip)
    }
}

impl fmt::Display for PrefixId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.base_ip())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrgCategory {
    Education,
    Government,
    Business,
    Isp,
    Hosting,
    Unknown,
}

impl OrgCategory {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "education" | "edu" => Ok(OrgCategory::Education),
            "government" | "gov" => Ok(OrgCategory::Government),
            "business" | "bus" => Ok(OrgCategory::Business),
            "isp" => Ok(OrgCategory::Isp),
            "hosting" => Ok(OrgCategory::Hosting),
            "unknown" => Ok(OrgCategory::Unknown),
            other => Err(Error::invalid(format!("unknown organization category {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OrgCategory::Education => "education",
            OrgCategory::Government => "government",
            OrgCategory::Business => "business",
            OrgCategory::Isp => "isp",
            OrgCategory::Hosting => "hosting",
            OrgCategory::Unknown => "unknown",
        }
    }
}

impl fmt::Display for OrgCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organization {
    pub id: String,
    pub name: String,
    pub category: OrgCategory,
    pub local: bool,
}

impl Organization {
    pub fn unknown() -> &'static Organization {
        use std::sync::OnceLock;
        static UNKNOWN: OnceLock<Organization> = OnceLock::new();
        UNKNOWN.get_or_init(|| Organization {
            id: "unknown".to_string(),
            name: "unknown".to_string(),
            category: OrgCategory::Unknown,
            local: false,
        })
    }
}

/// Database-build helper: organizations whose domain ends in `.gov` are
/// government regardless of their upstream category.
pub fn reclassify_gov(domain_or_name: &str, category: OrgCategory) -> OrgCategory {
    if domain_or_name.trim().to_ascii_lowercase().ends_with(".gov") {
        OrgCategory::Government
    } else {
        category
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DirectoryWarning {
    pub message: String,
}

/// Immutable prefix-to-organization map. Lookups are total: unmapped
/// prefixes resolve to the unknown organization.
#[derive(Debug, Clone, Default)]
pub struct PrefixDirectory {
    orgs: Vec<Organization>,
    by_prefix: HashMap<PrefixId, usize>,
    local_prefixes: BTreeSet<PrefixId>,
    anon_to_real: HashMap<PrefixId, PrefixId>,
    real_to_anon: HashMap<PrefixId, PrefixId>,
}

impl PrefixDirectory {
    pub fn lookup(&self, prefix: PrefixId) -> &Organization {
        match self.by_prefix.get(&prefix) {
            Some(i) => &self.orgs[*i],
            None => Organization::unknown(),
        }
    }

    pub fn is_local(&self, prefix: PrefixId) -> bool {
        self.local_prefixes.contains(&prefix)
    }

    pub fn local_prefixes(&self) -> &BTreeSet<PrefixId> {
        &self.local_prefixes
    }

    pub fn local_prefix_count(&self) -> usize {
        self.local_prefixes.len()
    }

    pub fn organizations(&self) -> &[Organization] {
        &self.orgs
    }

    /// Maps a real-space /24 into the anonymized space flows live in.
    /// Identity when no anonymization map was loaded.
    pub fn to_anon(&self, real: PrefixId) -> PrefixId {
        self.real_to_anon.get(&real).copied().unwrap_or(real)
    }

    pub fn to_real(&self, anon: PrefixId) -> PrefixId {
        self.anon_to_real.get(&anon).copied().unwrap_or(anon)
    }
}

/// In-memory form of the three directory inputs, so callers can load from
/// files or assemble synthetically.
#[derive(Debug, Clone, Default)]
pub struct DirectorySource {
    /// `(real-space prefix, cidr length 8..=24, org id, org name, category)`
    pub org_rows: Vec<(PrefixId, u8, String, String, OrgCategory)>,
    /// Real-space local /24s.
    pub local_rows: Vec<PrefixId>,
    /// `(anon prefix, real prefix)` pairs.
    pub anon_rows: Vec<(PrefixId, PrefixId)>,
}

impl DirectorySource {
    pub fn read(
        org_db: impl Read,
        local_prefixes: impl Read,
        anon_map: Option<impl Read>,
    ) -> Result<(Self, Vec<DirectoryWarning>)> {
        let mut src = DirectorySource::default();
        let mut warnings = Vec::new();

        for (lineno, line) in BufReader::new(org_db).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("prefix") {
                continue;
            }
            match parse_org_row(t) {
                Ok(row) => src.org_rows.push(row),
                Err(e) => warnings.push(DirectoryWarning {
                    message: format!("org db line {}: {e}", lineno + 1),
                }),
            }
        }

        for (lineno, line) in BufReader::new(local_prefixes).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            match PrefixId::parse(t) {
                Ok(p) => src.local_rows.push(p),
                Err(e) => warnings.push(DirectoryWarning {
                    message: format!("local prefix line {}: {e}", lineno + 1),
                }),
            }
        }

        if let Some(anon) = anon_map {
            for (lineno, line) in BufReader::new(anon).lines().enumerate() {
                let line = line?;
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') || t.starts_with("anon") {
                    continue;
                }
                let mut parts = t.split(',');
                let parsed = (|| -> Result<(PrefixId, PrefixId)> {
                    let a = PrefixId::parse(parts.next().unwrap_or(""))?;
                    let r = PrefixId::parse(parts.next().unwrap_or(""))?;
                    Ok((a, r))
                })();
                match parsed {
                    Ok(pair) => src.anon_rows.push(pair),
                    Err(e) => warnings.push(DirectoryWarning {
                        message: format!("anon map line {}: {e}", lineno + 1),
                    }),
                }
            }
        }
        Ok((src, warnings))
    }
}

fn parse_org_row(line: &str) -> Result<(PrefixId, u8, String, String, OrgCategory)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::invalid(format!("expected 4 fields, got {}", fields.len())));
    }
    let (cidr_base, len) = match fields[0].split_once('/') {
        Some((ip, len)) => {
            let len: u8 =
                len.parse().map_err(|_| Error::invalid(format!("bad cidr {:?}", fields[0])))?;
            (ip, len)
        }
        None => (fields[0], 24),
    };
    if !(8..=24).contains(&len) {
        return Err(Error::invalid(format!("org db cidr length {len} outside 8..=24")));
    }
    let ip: Ipv4Addr =
        cidr_base.parse().map_err(|_| Error::invalid(format!("bad prefix {cidr_base:?}")))?;
    let masked = u32::from(ip) & cidr_mask(len);
    if masked != u32::from(ip) {
        return Err(Error::invalid(format!("{} has host bits set for /{len}", fields[0])));
    }
    Ok((
        PrefixId(masked & 0xFFFF_FF00),
        len,
        fields[1].to_string(),
        fields[2].to_string(),
        OrgCategory::parse(fields[3])?,
    ))
}

fn cidr_mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

/// Builds the directory. Overlapping claims on a /24 resolve longest prefix
/// first, then first row wins; losers are reported as warnings. Prefix keys
/// are translated into anonymized space when a mapping is supplied.
pub fn build_directory(src: &DirectorySource) -> (PrefixDirectory, Vec<DirectoryWarning>) {
    let mut dir = PrefixDirectory::default();
    let mut warnings = Vec::new();

    for (anon, real) in &src.anon_rows {
        if dir.anon_to_real.insert(*anon, *real).is_some()
            || dir.real_to_anon.insert(*real, *anon).is_some()
        {
            warnings.push(DirectoryWarning {
                message: format!("duplicate anonymization mapping for {real}"),
            });
        }
    }

    let mut org_index: HashMap<String, usize> = HashMap::new();
    // claim -> (cidr length, org slot)
    let mut claims: HashMap<PrefixId, (u8, usize)> = HashMap::new();

    for (base, len, id, name, category) in &src.org_rows {
        let slot = *org_index.entry(id.clone()).or_insert_with(|| {
            dir.orgs.push(Organization {
                id: id.clone(),
                name: name.clone(),
                category: *category,
                local: false,
            });
            dir.orgs.len() - 1
        });
        let count = 1u32 << (24 - len);
        for k in 0..count {
            let real = PrefixId(base.0 + (k << 8));
            match claims.get(&real) {
                Some((prev_len, _)) if *prev_len >= *len => {
                    warnings.push(DirectoryWarning {
                        message: format!(
                            "prefix {real} already attributed (kept /{prev_len} claim), ignoring {id}"
                        ),
                    });
                }
                _ => {
                    if claims.contains_key(&real) {
                        warnings.push(DirectoryWarning {
                            message: format!("prefix {real}: /{len} claim by {id} overrides shorter claim"),
                        });
                    }
                    claims.insert(real, (*len, slot));
                }
            }
        }
    }

    for (real, (_, slot)) in claims {
        let anon = dir.real_to_anon.get(&real).copied().unwrap_or(real);
        dir.by_prefix.insert(anon, slot);
    }

    for real in &src.local_rows {
        let anon = dir.real_to_anon.get(real).copied().unwrap_or(*real);
        if !dir.local_prefixes.insert(anon) {
            warnings.push(DirectoryWarning { message: format!("duplicate local prefix {real}") });
        }
        if let Some(slot) = dir.by_prefix.get(&anon) {
            dir.orgs[*slot].local = true;
        }
    }

    (dir, warnings)
}

/// Loads the directory from its three file inputs. Missing files are fatal;
/// malformed rows are skipped with warnings.
pub fn load_directory(
    org_db: &Path,
    local_prefixes: &Path,
    anon_map: Option<&Path>,
) -> Result<(PrefixDirectory, Vec<DirectoryWarning>)> {
    let org = std::fs::File::open(org_db)
        .map_err(|e| Error::invalid(format!("cannot open org db {}: {e}", org_db.display())))?;
    let local = std::fs::File::open(local_prefixes).map_err(|e| {
        Error::invalid(format!("cannot open local prefixes {}: {e}", local_prefixes.display()))
    })?;
    let anon = match anon_map {
        Some(p) => Some(std::fs::File::open(p).map_err(|e| {
            Error::invalid(format!("cannot open anon map {}: {e}", p.display()))
        })?),
        None => None,
    };
    let (src, mut warnings) = DirectorySource::read(org, local, anon)?;
    let (dir, build_warnings) = build_directory(&src);
    warnings.extend(build_warnings);
    Ok((dir, warnings))
}

/// Well-known server ports used for direction inference: the system range
/// plus the application ports above 1023 from the port map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServicePorts {
    extra: BTreeSet<u16>,
}

impl Default for ServicePorts {
    fn default() -> Self {
        ServicePorts {
            extra: [2525, 4433, 4500, 4501, 4502, 5201, 8080, 8090].into_iter().collect(),
        }
    }
}

impl ServicePorts {
    pub fn with_extra(ports: impl IntoIterator<Item = u16>) -> Self {
        ServicePorts { extra: ports.into_iter().filter(|p| *p > 1023).collect() }
    }

    pub fn contains(&self, port: u16) -> bool {
        port <= 1023 || self.extra.contains(&port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerSide {
    Src,
    Dst,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Flow initiated toward a local organization: the server is local.
    Inbound,
    /// Flow initiated by a local organization toward a remote server.
    Outbound,
    /// Both endpoints local.
    LocalLocal,
    /// Everything else, including flows that touch no local prefix.
    Transit,
}

impl Orientation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Orientation::Inbound => "inbound",
            Orientation::Outbound => "outbound",
            Orientation::LocalLocal => "local-local",
            Orientation::Transit => "transit",
        }
    }
}

/// A flow with server side and orientation resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedFlow {
    pub flow: UpsampledFlow,
    pub server_side: ServerSide,
    pub orientation: Orientation,
}

impl DirectedFlow {
    pub fn src_prefix(&self) -> PrefixId {
        PrefixId::of(self.flow.rec.src_ip)
    }

    pub fn dst_prefix(&self) -> PrefixId {
        PrefixId::of(self.flow.rec.dst_ip)
    }

    /// `(server port, client port)` when the server side is resolved.
    pub fn server_client_ports(&self) -> Option<(u16, u16)> {
        match self.server_side {
            ServerSide::Src => Some((self.flow.rec.src_port, self.flow.rec.dst_port)),
            ServerSide::Dst => Some((self.flow.rec.dst_port, self.flow.rec.src_port)),
            ServerSide::Ambiguous => None,
        }
    }

    pub fn server_prefix(&self) -> Option<PrefixId> {
        match self.server_side {
            ServerSide::Src => Some(self.src_prefix()),
            ServerSide::Dst => Some(self.dst_prefix()),
            ServerSide::Ambiguous => None,
        }
    }
}

/// Resolves the server side from the ports and the orientation from prefix
/// locality. The server is the endpoint whose port is in the service set
/// when exactly one endpoint qualifies; flows where both or neither qualify
/// stay ambiguous and are kept for volume accounting only.
pub fn infer_direction(
    flow: UpsampledFlow,
    dir: &PrefixDirectory,
    svc_ports: &ServicePorts,
) -> DirectedFlow {
    let src_is_svc = svc_ports.contains(flow.rec.src_port);
    let dst_is_svc = svc_ports.contains(flow.rec.dst_port);
    let server_side = match (src_is_svc, dst_is_svc) {
        (true, false) => ServerSide::Src,
        (false, true) => ServerSide::Dst,
        _ => ServerSide::Ambiguous,
    };

    let src_local = dir.is_local(PrefixId::of(flow.rec.src_ip));
    let dst_local = dir.is_local(PrefixId::of(flow.rec.dst_ip));
    let orientation = match (src_local, dst_local) {
        (true, true) => Orientation::LocalLocal,
        (false, false) => Orientation::Transit,
        _ => match server_side {
            ServerSide::Src if src_local => Orientation::Inbound,
            ServerSide::Src => Orientation::Outbound,
            ServerSide::Dst if dst_local => Orientation::Inbound,
            ServerSide::Dst => Orientation::Outbound,
            // One endpoint local but no resolved server: not attributable to
            // either direction table.
            ServerSide::Ambiguous => Orientation::Transit,
        },
    };

    DirectedFlow { flow, server_side, orientation }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpRole {
    Server,
    Client,
}

/// Classifies an address as server or client from the distribution of its
/// sent traffic over ports: server when more than `threshold` of the bytes
/// it sources leave a service port toward high-numbered peer ports.
pub fn classify_ip_role(
    ip: Ipv4Addr,
    flows: &[DirectedFlow],
    svc_ports: &ServicePorts,
    threshold: f64,
) -> Result<IpRole> {
    let mut total: u128 = 0;
    let mut server_like: u128 = 0;
    for df in flows {
        let r = &df.flow.rec;
        if r.src_ip != ip && r.dst_ip != ip {
            continue;
        }
        total += u128::from(df.flow.bytes);
        if r.src_ip == ip && svc_ports.contains(r.src_port) && r.dst_port > 1023 {
            server_like += u128::from(df.flow.bytes);
        }
    }
    if total == 0 {
        return Err(Error::insufficient(format!("no traffic for {ip}")));
    }
    let fraction = server_like as f64 / total as f64;
    Ok(if fraction > threshold { IpRole::Server } else { IpRole::Client })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{upsample, FlowRecord};
    use crate::time::Timestamp;

    fn mk_flow(src: [u8; 4], sp: u16, dst: [u8; 4], dp: u16, bytes: u64) -> UpsampledFlow {
        upsample(FlowRecord {
            ts_start: Timestamp(0),
            ts_end: Timestamp(1000),
            proto: 6,
            src_ip: Ipv4Addr::from(src),
            src_port: sp,
            dst_ip: Ipv4Addr::from(dst),
            dst_port: dp,
            sampled_packets: bytes.max(1) / 100 + 1,
            sampled_bytes: bytes,
            tcp_flags: 0x10,
            sampling_rate: 1,
        })
    }

    fn test_directory() -> PrefixDirectory {
        let src = DirectorySource {
            org_rows: vec![
                (
                    PrefixId::parse("203.0.113.0/24").unwrap(),
                    24,
                    "E09".into(),
                    "Example University".into(),
                    OrgCategory::Education,
                ),
                (
                    PrefixId::parse("198.51.100.0/24").unwrap(),
                    24,
                    "I02".into(),
                    "Example ISP".into(),
                    OrgCategory::Isp,
                ),
            ],
            local_rows: vec![PrefixId::parse("203.0.113.0/24").unwrap()],
            anon_rows: vec![],
        };
        build_directory(&src).0
    }

    #[test]
    fn prefix_id_masks_low_bits() {
        let p = PrefixId::of(Ipv4Addr::new(203, 0, 113, 57));
        assert_eq!(p.to_string(), "203.0.113.0/24");
        assert_eq!(p.0 & 0xFF, 0);
        assert!(PrefixId::from_base(Ipv4Addr::new(203, 0, 113, 1)).is_err());
    }

    #[test]
    fn lookup_is_total() {
        let dir = test_directory();
        let known = dir.lookup(PrefixId::parse("203.0.113.0/24").unwrap());
        assert_eq!(known.id, "E09");
        assert!(known.local || dir.is_local(PrefixId::parse("203.0.113.0/24").unwrap()));
        let unknown = dir.lookup(PrefixId::parse("192.0.2.0/24").unwrap());
        assert_eq!(unknown.category, OrgCategory::Unknown);
        assert!(!unknown.local);
    }

    #[test]
    fn directory_counts_local_prefixes() {
        let mut src = DirectorySource::default();
        for i in 0..40u32 {
            src.local_rows.push(PrefixId(0x0A00_0000 + (i << 8)));
        }
        let (dir, warnings) = build_directory(&src);
        assert_eq!(dir.local_prefix_count(), 40);
        assert!(warnings.is_empty());
    }

    #[test]
    fn overlapping_claims_resolve_longest_then_first() {
        let src = DirectorySource {
            org_rows: vec![
                (PrefixId::parse("10.1.0.0/24").unwrap(), 16, "A".into(), "Org A".into(), OrgCategory::Business),
                (PrefixId::parse("10.1.4.0/24").unwrap(), 24, "B".into(), "Org B".into(), OrgCategory::Business),
                (PrefixId::parse("10.1.4.0/24").unwrap(), 24, "C".into(), "Org C".into(), OrgCategory::Business),
            ],
            local_rows: vec![],
            anon_rows: vec![],
        };
        // /16 rows start at the declared base only if aligned; craft aligned base
        let src = DirectorySource {
            org_rows: {
                let mut rows = src.org_rows;
                rows[0].0 = PrefixId::parse("10.1.0.0/24").unwrap();
                rows
            },
            ..src
        };
        let (dir, warnings) = build_directory(&src);
        // the more specific /24 wins over the covering /16
        assert_eq!(dir.lookup(PrefixId::parse("10.1.4.0/24").unwrap()).id, "B");
        assert_eq!(dir.lookup(PrefixId::parse("10.1.5.0/24").unwrap()).id, "A");
        assert!(warnings.iter().any(|w| w.message.contains("already attributed")));
    }

    #[test]
    fn gov_suffix_reclassification() {
        assert_eq!(reclassify_gov("agency.example.gov", OrgCategory::Business), OrgCategory::Government);
        assert_eq!(reclassify_gov("example.com", OrgCategory::Business), OrgCategory::Business);
    }

    #[test]
    fn direction_follows_service_port() {
        let dir = test_directory();
        let svc = ServicePorts::default();
        // local server on 443, remote client on a high port
        let df = infer_direction(mk_flow([203, 0, 113, 7], 443, [192, 0, 2, 9], 51514, 1000), &dir, &svc);
        assert_eq!(df.server_side, ServerSide::Src);
        assert_eq!(df.orientation, Orientation::Inbound);
        // swapped endpoint order: server side follows the ports
        let df2 = infer_direction(mk_flow([192, 0, 2, 9], 51514, [203, 0, 113, 7], 443, 1000), &dir, &svc);
        assert_eq!(df2.server_side, ServerSide::Dst);
        assert_eq!(df2.orientation, Orientation::Inbound);
    }

    #[test]
    fn ambiguous_when_neither_or_both_ports_qualify() {
        let dir = test_directory();
        let svc = ServicePorts::default();
        let neither = infer_direction(mk_flow([203, 0, 113, 7], 40000, [192, 0, 2, 9], 40001, 10), &dir, &svc);
        assert_eq!(neither.server_side, ServerSide::Ambiguous);
        let both = infer_direction(mk_flow([203, 0, 113, 7], 80, [192, 0, 2, 9], 22, 10), &dir, &svc);
        assert_eq!(both.server_side, ServerSide::Ambiguous);
    }

    #[test]
    fn orientation_partition() {
        let dir = test_directory();
        let svc = ServicePorts::default();
        // remote client -> local server: inbound
        let a = infer_direction(mk_flow([192, 0, 2, 9], 50000, [203, 0, 113, 7], 22, 10), &dir, &svc);
        assert_eq!(a.orientation, Orientation::Inbound);
        // local client -> remote server: outbound
        let b = infer_direction(mk_flow([203, 0, 113, 7], 50000, [192, 0, 2, 9], 22, 10), &dir, &svc);
        assert_eq!(b.orientation, Orientation::Outbound);
        // both endpoints local
        let c = infer_direction(mk_flow([203, 0, 113, 7], 50000, [203, 0, 113, 9], 22, 10), &dir, &svc);
        assert_eq!(c.orientation, Orientation::LocalLocal);
        // no local endpoint
        let d = infer_direction(mk_flow([192, 0, 2, 9], 50000, [198, 18, 0, 1], 22, 10), &dir, &svc);
        assert_eq!(d.orientation, Orientation::Transit);
    }

    #[test]
    fn ip_role_majority() {
        let dir = test_directory();
        let svc = ServicePorts::default();
        let ip = Ipv4Addr::new(203, 0, 113, 7);
        let mk = |sp, dp, bytes| infer_direction(mk_flow([203, 0, 113, 7], sp, [192, 0, 2, 9], dp, bytes), &dir, &svc);
        let flows = vec![mk(443, 50000, 9000), mk(50001, 443, 1000)];
        assert_eq!(classify_ip_role(ip, &flows, &svc, 0.5).unwrap(), IpRole::Server);

        // all bytes sourced from high ports toward a remote 443: client
        let flows = vec![mk(50001, 443, 5000)];
        assert_eq!(classify_ip_role(ip, &flows, &svc, 0.5).unwrap(), IpRole::Client);

        let other = Ipv4Addr::new(8, 8, 8, 8);
        assert!(classify_ip_role(other, &flows, &svc, 0.5).is_err());
    }

    // Threshold sensitivity, with the fractions recomputed by direct summation.
    #[test]
    fn ip_role_threshold_split() {
        let dir = test_directory();
        let svc = ServicePorts::default();
        let ip = Ipv4Addr::new(203, 0, 113, 7);
        let mk = |sp, dp, bytes| infer_direction(mk_flow([203, 0, 113, 7], sp, [192, 0, 2, 9], dp, bytes), &dir, &svc);
        let flows = vec![mk(443, 50000, 6000), mk(50001, 50002, 4000)];

        let total: u64 = flows.iter().map(|f| f.flow.bytes).sum();
        let server_like: u64 = flows
            .iter()
            .filter(|f| f.flow.rec.src_port == 443)
            .map(|f| f.flow.bytes)
            .sum();
        assert!((server_like as f64 / total as f64 - 0.6).abs() < 1e-12);

        assert_eq!(classify_ip_role(ip, &flows, &svc, 0.5).unwrap(), IpRole::Server);
        assert_eq!(classify_ip_role(ip, &flows, &svc, 0.7).unwrap(), IpRole::Client);
    }
}
