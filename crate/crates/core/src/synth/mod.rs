//! Synthetic sampled-flow corpus generation with ground truth.
//!
//! A scenario plants everything the analysis pipeline is supposed to find:
//! per-label diurnal traffic with before/after multipliers, meeting/gaming
//! server prefixes with port profiles, scheduled volumetric anomalies sized
//! by their intended peak-intensity index, and per-prefix liveness plans.
//! Generation is deterministic under the scenario seed, day by day, with
//! per-packet binomial sampling applied before emission so the corpus looks
//! like real sampled exports (short flows go missing, volumes wobble).

pub mod anon;
pub mod presets;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::net::Ipv4Addr;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyKind;
use crate::attrib::{OrgCategory, Orientation, PrefixId};
use crate::classify::{AppLabel, PortMap};
use crate::error::{Error, Result};
use crate::flow::{FlowRecord, PROTO_ICMP, PROTO_TCP, PROTO_UDP, TCP_FLAG_ACK, TCP_FLAG_PSH, TCP_FLAG_SYN};
use crate::time::{HoursClass, Period, StudyCalendar, Timestamp};

use anon::PrefixAnonymizer;

const BIN_MS: i64 = 300_000;
const BINS_PER_DAY: i64 = 288;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrgSpec {
    pub id: String,
    pub name: String,
    pub category: OrgCategory,
    /// Number of /24s allocated to the organization (at most 256).
    pub prefixes: u32,
}

/// What a traffic plan emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Candidate traffic carrying this label's well-known port.
    App(AppLabel),
    /// Both ports high: the highhigh bucket.
    HighPorts,
    /// TCP flows with only SYN set (scans / first-packet samples).
    Syn,
    /// TCP flows with SYN+ACK set.
    SynAck,
    Icmp,
    /// Non-TCP/UDP/ICMP protocol.
    Otprot,
    /// Both ports outside the service set, below the highhigh range.
    NoService,
}

impl PlanKind {
    fn row_name(&self) -> String {
        match self {
            PlanKind::App(l) => l.as_str().to_string(),
            PlanKind::HighPorts => "highhigh".to_string(),
            PlanKind::Syn => "syn".to_string(),
            PlanKind::SynAck => "synack".to_string(),
            PlanKind::Icmp => "icmp".to_string(),
            PlanKind::Otprot => "otprot".to_string(),
            PlanKind::NoService => "noservice".to_string(),
        }
    }
}

/// One planted traffic series: volume for an (organization, kind) pair with
/// separate work/rest rates and after/before multipliers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficPlan {
    pub kind: PlanKind,
    /// Client-side organization (local for inbound/outbound plans).
    pub org: String,
    pub orientation: Orientation,
    /// Remote pool; defaults to the first remote organization.
    #[serde(default)]
    pub remote_org: Option<String>,
    pub gb_per_hour_work: f64,
    pub gb_per_hour_rest: f64,
    pub work_multiplier: f64,
    pub rest_multiplier: f64,
    pub flows_per_bin: u32,
    /// Apply the rest-hours diurnal shape; work hours are always a plateau.
    #[serde(default = "default_true")]
    pub diurnal: bool,
    #[serde(default)]
    pub avg_packet_bytes: Option<u64>,
}

fn default_true() -> bool {
    true
}

/// Planted meeting/gaming application servers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgServerPlan {
    pub app: AppLabel,
    /// Remote organization hosting the servers; its name decides whether
    /// verified candidates survive ownership pruning.
    pub provider_org: String,
    pub server_prefixes: u32,
    /// How many of those are published in the ground-truth prefix file.
    pub gt_listed: u32,
    /// The application's (overlapping) server port profile.
    pub ports: Vec<u16>,
    pub udp: bool,
    /// Local organization on the client side.
    pub client_org: String,
    pub flows_per_prefix_hour: u32,
    pub gb_per_hour_work: f64,
    pub gb_per_hour_rest: f64,
    pub work_multiplier: f64,
    pub rest_multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyPlan {
    pub kind: AnomalyKind,
    /// RFC 3339 UTC start, aligned to the 5-minute grid.
    pub start: String,
    pub duration_minutes: u32,
    /// Intended peak intensity: peak volume over expected volume.
    pub zeta: f64,
    pub victim_org: String,
    /// Attacking source /24 count; each is one flow key. Few keys stay
    /// under the equilibrium detector's radar, many trip it.
    pub attacker_keys: u32,
    /// Triangular volume profile instead of flat.
    #[serde(default)]
    pub ramp: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LivenessPlan {
    pub org: String,
    /// Which of the organization's /24s this plan drives.
    pub prefix_index: u32,
    pub before_level: u32,
    pub after_level: u32,
    /// Uniform +- jitter on daily levels (0 keeps them exact).
    #[serde(default)]
    pub jitter: u32,
    #[serde(default)]
    pub weekend_dip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub calendar: StudyCalendar,
    pub sampling_rates: Vec<u32>,
    /// Relative standard deviation of per-bin plan volumes.
    pub noise: f64,
    pub avg_packet_bytes: u64,
    pub local_orgs: Vec<OrgSpec>,
    pub remote_orgs: Vec<OrgSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficPlan>,
    #[serde(default)]
    pub mg_servers: Vec<MgServerPlan>,
    #[serde(default)]
    pub anomalies: Vec<AnomalyPlan>,
    #[serde(default)]
    pub liveness: Vec<LivenessPlan>,
    #[serde(default = "default_true")]
    pub anonymize: bool,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.calendar.validate()?;
        if self.sampling_rates.is_empty() || self.sampling_rates.contains(&0) {
            return Err(Error::invalid("sampling rates must be positive and non-empty"));
        }
        if self.local_orgs.is_empty() {
            return Err(Error::invalid("scenario needs at least one local organization"));
        }
        if self.local_orgs.len() + self.remote_orgs.len() > 200 {
            return Err(Error::invalid("too many organizations (limit 200)"));
        }
        for org in self.local_orgs.iter().chain(&self.remote_orgs) {
            if org.prefixes == 0 || org.prefixes > 256 {
                return Err(Error::invalid(format!("org {} needs 1..=256 prefixes", org.id)));
            }
        }
        for plan in &self.traffic {
            if plan.work_multiplier <= 0.0 || plan.rest_multiplier <= 0.0 {
                return Err(Error::invalid("multipliers must be positive"));
            }
            if plan.flows_per_bin == 0 {
                return Err(Error::invalid("flows_per_bin must be positive"));
            }
            self.org_spec(&plan.org)?;
            if let Some(r) = &plan.remote_org {
                self.org_spec(r)?;
            }
        }
        for plan in &self.mg_servers {
            if !plan.app.is_mg() {
                return Err(Error::invalid(format!("{} is not a meeting/gaming label", plan.app)));
            }
            if plan.gt_listed > plan.server_prefixes {
                return Err(Error::invalid("gt_listed exceeds server_prefixes"));
            }
            if plan.ports.is_empty() {
                return Err(Error::invalid("mg plan needs a port profile"));
            }
            let provider = self.org_spec(&plan.provider_org)?;
            if provider.prefixes < plan.server_prefixes {
                return Err(Error::invalid(format!(
                    "provider {} has {} prefixes, plan needs {}",
                    plan.provider_org, provider.prefixes, plan.server_prefixes
                )));
            }
            self.org_spec(&plan.client_org)?;
        }
        let window_start = self.window_start_ms();
        let window_end = self.window_end_ms();
        for a in &self.anomalies {
            if a.zeta <= 1.0 {
                return Err(Error::invalid("anomaly zeta must exceed 1"));
            }
            if a.attacker_keys == 0 {
                return Err(Error::invalid("anomaly needs at least one attacker key"));
            }
            let start = Timestamp::parse(&a.start)?;
            if start.0 % BIN_MS != 0 || a.duration_minutes == 0 || a.duration_minutes % 5 != 0 {
                return Err(Error::invalid(
                    "anomaly start and duration must align to the 5-minute grid",
                ));
            }
            let end = start.0 + i64::from(a.duration_minutes) * 60_000;
            if start.0 < window_start || end > window_end {
                return Err(Error::invalid(format!(
                    "anomaly at {} falls outside the observation window",
                    a.start
                )));
            }
            self.org_spec(&a.victim_org)?;
        }
        for plan in &self.liveness {
            let org = self.org_spec(&plan.org)?;
            if plan.prefix_index >= org.prefixes {
                return Err(Error::invalid(format!(
                    "liveness prefix index {} outside org {} (has {})",
                    plan.prefix_index, plan.org, org.prefixes
                )));
            }
            if plan.before_level.max(plan.after_level) + plan.jitter > 256 {
                return Err(Error::invalid("liveness level above 256 addresses"));
            }
        }
        Ok(())
    }

    fn org_spec(&self, id: &str) -> Result<&OrgSpec> {
        self.local_orgs
            .iter()
            .chain(&self.remote_orgs)
            .find(|o| o.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown organization {id:?}")))
    }

    fn window_start_ms(&self) -> i64 {
        local_midnight_ms(self.calendar.first_date(), self.calendar.timezone_offset_hours)
    }

    fn window_end_ms(&self) -> i64 {
        local_midnight_ms(
            self.calendar.last_date().succ_opt().expect("date in range"),
            self.calendar.timezone_offset_hours,
        )
    }
}

fn local_midnight_ms(date: NaiveDate, offset_hours: i32) -> i64 {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis()
        - i64::from(offset_hours) * 3_600_000
}

/// Address allocation: local organizations take consecutive /16 blocks from
/// 10.0.0.0, remote ones from 100.0.0.0, per-anomaly attacker pools from
/// 172.0.0.0.
#[derive(Debug, Clone)]
struct AddressPlan {
    org_base: std::collections::BTreeMap<String, (u32, u32)>, // id -> (/16 base, prefix count)
}

impl AddressPlan {
    fn build(spec: &ScenarioSpec) -> AddressPlan {
        let mut org_base = std::collections::BTreeMap::new();
        for (i, org) in spec.local_orgs.iter().enumerate() {
            org_base.insert(org.id.clone(), (0x0A00_0000 + ((i as u32) << 16), org.prefixes));
        }
        for (i, org) in spec.remote_orgs.iter().enumerate() {
            org_base.insert(org.id.clone(), (0x6400_0000 + ((i as u32) << 16), org.prefixes));
        }
        AddressPlan { org_base }
    }

    fn prefix(&self, org: &str, index: u32) -> PrefixId {
        let (base, count) = self.org_base[org];
        PrefixId(base + ((index % count) << 8))
    }

    fn attacker_prefix(&self, plan_index: usize, key: u32) -> PrefixId {
        PrefixId(0xAC00_0000 + ((plan_index as u32) << 16) + (key << 8))
    }

    fn random_addr(&self, org: &str, rng: &mut ChaCha8Rng) -> Ipv4Addr {
        let (_, count) = self.org_base[org];
        let prefix = self.prefix(org, rng.gen_range(0..count));
        prefix.addr(rng.gen_range(1..=254))
    }
}

/// Rest-hours diurnal shape: overnight trough, daytime level, a small
/// evening peak at 20:00-21:59, slightly flatter weekends.
fn rest_shape(weekday: Weekday, hour: u32) -> f64 {
    let weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
    let base = match hour {
        0..=5 => 0.5,
        6..=7 => 0.8,
        20 | 21 => 1.5,
        22..=23 => 0.9,
        _ => {
            if weekend {
                1.1
            } else {
                1.0
            }
        }
    };
    base
}

/// Multiplier applied in the after period (and ramped linearly across the
/// transition).
fn period_factor(cal: &StudyCalendar, date: NaiveDate, multiplier: f64) -> f64 {
    match cal.period_of_date(date) {
        Period::Before | Period::Outside => 1.0,
        Period::After => multiplier,
        Period::Transition => {
            let done = (date - cal.transition.first).num_days() as f64 + 1.0;
            let span = cal.transition.days() as f64 + 1.0;
            1.0 + (multiplier - 1.0) * done / span
        }
    }
}

/// Expected bytes for one plan in one 5-minute bin, noise-free.
fn plan_expected_bytes(
    plan: &TrafficPlan,
    cal: &StudyCalendar,
    date: NaiveDate,
    weekday: Weekday,
    hour: u32,
) -> f64 {
    let work = cal.work_hours.matches(weekday, hour);
    let (rate_gb, mult) = if work {
        (plan.gb_per_hour_work, plan.work_multiplier)
    } else {
        (plan.gb_per_hour_rest, plan.rest_multiplier)
    };
    let shape = if work || !plan.diurnal { 1.0 } else { rest_shape(weekday, hour) };
    rate_gb * 1e9 / 12.0 * shape * period_factor(cal, date, mult)
}

fn mg_expected_bytes(
    plan: &MgServerPlan,
    cal: &StudyCalendar,
    date: NaiveDate,
    weekday: Weekday,
    hour: u32,
) -> f64 {
    let work = cal.work_hours.matches(weekday, hour);
    let (rate_gb, mult) = if work {
        (plan.gb_per_hour_work, plan.work_multiplier)
    } else {
        (plan.gb_per_hour_rest, plan.rest_multiplier)
    };
    rate_gb * 1e9 / 12.0 * mult_shape(work) * period_factor(cal, date, mult)
}

fn mult_shape(_work: bool) -> f64 {
    1.0
}

/// Baseline volume of the monitor stream an anomaly kind rides on, in that
/// stream's unit (bytes or packets) per bin. Used to size attacks so the
/// realized peak intensity matches the plan.
fn expected_stream_volume(
    spec: &ScenarioSpec,
    kind: AnomalyKind,
    cal: &StudyCalendar,
    date: NaiveDate,
    weekday: Weekday,
    hour: u32,
) -> f64 {
    let mut total = 0.0;
    for plan in &spec.traffic {
        let bytes = plan_expected_bytes(plan, cal, date, weekday, hour);
        let pkt = plan.avg_packet_bytes.unwrap_or(spec.avg_packet_bytes) as f64;
        match kind {
            AnomalyKind::OtherBandwidth => total += bytes,
            AnomalyKind::NtpAmp => {
                if plan.kind == PlanKind::App(AppLabel::Ntp) {
                    total += bytes;
                }
            }
            AnomalyKind::DnsAmp => {
                if plan.kind == PlanKind::App(AppLabel::Dns) {
                    total += bytes;
                }
            }
            AnomalyKind::IcmpFlood => {
                if plan.kind == PlanKind::Icmp {
                    total += bytes / pkt;
                }
            }
            AnomalyKind::SynFlood => {
                if matches!(plan.kind, PlanKind::Syn | PlanKind::SynAck) {
                    total += bytes / pkt;
                }
            }
        }
    }
    if kind == AnomalyKind::OtherBandwidth {
        for plan in &spec.mg_servers {
            total += mg_expected_bytes(plan, cal, date, weekday, hour) * plan.server_prefixes as f64;
        }
    }
    total
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesTruth {
    pub label: String,
    pub org: String,
    pub hours: HoursClass,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrefixAppTruth {
    /// Prefix as it appears in the corpus (anonymized space).
    pub prefix: String,
    pub app: AppLabel,
    pub gt_listed: bool,
    /// True (pre-sampling) bytes served by the prefix.
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyTruth {
    pub kind: AnomalyKind,
    pub start: Timestamp,
    pub end: Timestamp,
    pub zeta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LivenessTruth {
    pub prefix: String,
    pub category: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TotalsTruth {
    pub true_bytes: u128,
    pub true_packets: u128,
    pub flows_emitted: u64,
    pub flows_dropped: u64,
    pub local_flow_fraction: f64,
}

/// Everything the analysis pipeline should recover, emitted alongside the
/// corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub series: Vec<SeriesTruth>,
    pub prefix_apps: Vec<PrefixAppTruth>,
    pub anomalies: Vec<AnomalyTruth>,
    pub liveness: Vec<LivenessTruth>,
    pub totals: TotalsTruth,
}

/// A generated corpus plus its input files, all in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<FlowRecord>,
    pub org_db: String,
    pub local_prefixes: String,
    pub gt_prefixes: String,
    pub gt_ports: String,
    pub anon_map: String,
    pub ground_truth: GroundTruth,
}

impl Corpus {
    pub fn flows_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 96 + 128);
        out.push_str(crate::flow::FLOW_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&crate::flow::flow_csv_line(r));
            out.push('\n');
        }
        out
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, content: &str| -> Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            f.write_all(content.as_bytes())?;
            Ok(())
        };
        write("flows.csv", &self.flows_csv())?;
        write("org_db.csv", &self.org_db)?;
        write("local_prefixes.txt", &self.local_prefixes)?;
        write("gt_prefixes.csv", &self.gt_prefixes)?;
        write("gt_ports.csv", &self.gt_ports)?;
        write("anon_map.csv", &self.anon_map)?;
        let gt = serde_json::to_string_pretty(&self.ground_truth)
            .map_err(|e| Error::internal(format!("ground truth serialization: {e}")))?;
        write("ground_truth.json", &gt)?;
        Ok(())
    }
}

struct Emitter<'a> {
    spec: &'a ScenarioSpec,
    addresses: &'a AddressPlan,
    anonymizer: Option<PrefixAnonymizer>,
    day_records: Vec<(i64, u64, FlowRecord)>,
    seq: u64,
    totals: TotalsTruth,
    local_touch: u64,
    seen_prefixes: BTreeSet<PrefixId>,
    mg_true_bytes: std::collections::BTreeMap<PrefixId, u64>,
    local_set: BTreeSet<PrefixId>,
    port_map: PortMap,
}

impl<'a> Emitter<'a> {
    fn rate_for(&self, src: Ipv4Addr) -> u32 {
        let rates = &self.spec.sampling_rates;
        let p = PrefixId::of(src).0;
        rates[((p >> 8) as usize) % rates.len()]
    }

    /// Applies per-packet binomial sampling and pushes the surviving record.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        rng: &mut ChaCha8Rng,
        ts_ms: i64,
        duration_ms: i64,
        proto: u8,
        src: Ipv4Addr,
        src_port: u16,
        dst: Ipv4Addr,
        dst_port: u16,
        tcp_flags: u8,
        true_bytes: u64,
        avg_packet_bytes: u64,
    ) {
        let true_bytes = true_bytes.max(1);
        let true_packets = (true_bytes / avg_packet_bytes.max(1)).max(1);
        self.totals.true_bytes += u128::from(true_bytes);
        self.totals.true_packets += u128::from(true_packets);

        self.seen_prefixes.insert(PrefixId::of(src));
        self.seen_prefixes.insert(PrefixId::of(dst));

        let rate = self.rate_for(src);
        let sampled_packets = if rate == 1 {
            true_packets
        } else {
            Binomial::new(true_packets, 1.0 / f64::from(rate))
                .expect("valid binomial")
                .sample(rng)
        };
        if sampled_packets == 0 {
            self.totals.flows_dropped += 1;
            return;
        }
        let sampled_bytes = ((u128::from(true_bytes) * u128::from(sampled_packets)
            / u128::from(true_packets)) as u64)
            .max(sampled_packets);

        if self.local_set.contains(&PrefixId::of(src)) || self.local_set.contains(&PrefixId::of(dst))
        {
            self.local_touch += 1;
        }
        self.totals.flows_emitted += 1;

        let (src_ip, dst_ip) = match &self.anonymizer {
            Some(a) => (a.anon_ip(src), a.anon_ip(dst)),
            None => (src, dst),
        };
        let rec = FlowRecord {
            ts_start: Timestamp(ts_ms),
            ts_end: Timestamp(ts_ms + duration_ms.max(0)),
            proto,
            src_ip,
            src_port,
            dst_ip,
            dst_port,
            sampled_packets,
            sampled_bytes,
            tcp_flags,
            sampling_rate: rate,
        };
        self.day_records.push((ts_ms, self.seq, rec));
        self.seq += 1;
    }

    fn app_service_port(&self, label: AppLabel, rng: &mut ChaCha8Rng) -> (u16, u8, u8) {
        let ports: Vec<u16> = self
            .port_map
            .ports_of(label)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_else(|| vec![443]);
        let port = ports[rng.gen_range(0..ports.len())];
        match label {
            AppLabel::Dns | AppLabel::Ntp | AppLabel::Vpn => (port, PROTO_UDP, 0),
            _ => (port, PROTO_TCP, TCP_FLAG_PSH | TCP_FLAG_ACK),
        }
    }
}

/// Splits a volume into n positive shares with mild spread; shares sum to
/// the total exactly.
fn split_volume(total: u64, n: u32, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = n.max(1) as usize;
    if n == 1 {
        return vec![total];
    }
    let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    let mut shares: Vec<u64> = weights.iter().map(|w| (total as f64 * w) as u64).collect();
    let assigned: u64 = shares.iter().sum();
    shares[0] += total - assigned;
    shares
}

/// Generates the corpus. Deterministic under the scenario seed; every
/// simulated day draws from its own stream of the seeded generator, so days
/// are independent.
pub fn generate(spec: &ScenarioSpec) -> Result<Corpus> {
    spec.validate()?;
    let cal = &spec.calendar;
    let addresses = AddressPlan::build(spec);

    let local_set: BTreeSet<PrefixId> = spec
        .local_orgs
        .iter()
        .flat_map(|o| (0..o.prefixes).map(|i| addresses.prefix(&o.id, i)))
        .collect();

    let mut emitter = Emitter {
        spec,
        addresses: &addresses,
        anonymizer: spec.anonymize.then(|| PrefixAnonymizer::new(spec.seed)),
        day_records: Vec::new(),
        seq: 0,
        totals: TotalsTruth::default(),
        local_touch: 0,
        seen_prefixes: BTreeSet::new(),
        mg_true_bytes: std::collections::BTreeMap::new(),
        local_set,
        port_map: PortMap::default(),
    };

    // pre-parse anomaly windows
    struct ActiveAnomaly {
        plan_index: usize,
        start_bin: i64,
        end_bin: i64, // inclusive
    }
    let mut anomaly_windows = Vec::new();
    for (i, a) in spec.anomalies.iter().enumerate() {
        let start = Timestamp::parse(&a.start)?;
        let start_bin = start.0 / BIN_MS;
        let bins = i64::from(a.duration_minutes) / 5;
        anomaly_windows.push(ActiveAnomaly { plan_index: i, start_bin, end_bin: start_bin + bins - 1 });
    }

    let mut records: Vec<FlowRecord> = Vec::new();
    let mut day_index = 0u64;
    for date in cal.before.first.iter_days().take_while(|d| *d <= cal.after.last) {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(day_index + 1);
        day_index += 1;

        let midnight_ms = local_midnight_ms(date, cal.timezone_offset_hours);
        let weekday = date.weekday();
        emitter.day_records.clear();

        for bin_of_day in 0..BINS_PER_DAY {
            let bin_start_ms = midnight_ms + bin_of_day * BIN_MS;
            let hour = (bin_of_day / 12) as u32;

            for plan in &spec.traffic {
                let expected = plan_expected_bytes(plan, cal, date, weekday, hour);
                if expected <= 0.0 {
                    continue;
                }
                let realized =
                    (expected * (1.0 + spec.noise * rng.sample::<f64, _>(rand_distr::StandardNormal)))
                        .max(0.0) as u64;
                if realized == 0 {
                    continue;
                }
                emit_plan_flows(&mut emitter, &mut rng, plan, bin_start_ms, realized);
            }

            for plan in &spec.mg_servers {
                // one burst per prefix-hour, on the hour's first bin
                if bin_of_day % 12 != 0 {
                    continue;
                }
                let expected = mg_expected_bytes(plan, cal, date, weekday, hour) * 12.0;
                for server_index in 0..plan.server_prefixes {
                    let realized = (expected
                        * (1.0
                            + spec.noise * rng.sample::<f64, _>(rand_distr::StandardNormal)))
                    .max(0.0) as u64;
                    emit_mg_hour(&mut emitter, &mut rng, plan, server_index, bin_start_ms, realized);
                }
            }

            let bin_global = bin_start_ms / BIN_MS;
            for w in &anomaly_windows {
                if bin_global < w.start_bin || bin_global > w.end_bin {
                    continue;
                }
                let plan = &spec.anomalies[w.plan_index];
                let baseline =
                    expected_stream_volume(spec, plan.kind, cal, date, weekday, hour);
                let profile = if plan.ramp {
                    // linear rise to the peak at the last bin, then off a
                    // cliff: every consecutive bin pair carries a correlated
                    // volume change
                    let n = (w.end_bin - w.start_bin) as f64;
                    let t = (bin_global - w.start_bin) as f64;
                    (t + 1.0) / (n + 1.0)
                } else {
                    1.0
                };
                let extra = (plan.zeta - 1.0) * baseline * profile;
                emit_attack_flows(
                    &mut emitter,
                    &mut rng,
                    plan,
                    w.plan_index,
                    bin_start_ms,
                    extra,
                );
            }
        }

        for plan in &spec.liveness {
            emit_liveness_day(&mut emitter, &mut rng, plan, cal, date, midnight_ms, weekday);
        }

        emitter.day_records.sort_by_key(|(ts, seq, _)| (*ts, *seq));
        records.extend(emitter.day_records.iter().map(|(_, _, r)| *r));
    }

    // assemble the input files (real address space)
    let mut org_db = String::from("prefix,org_id,org_name,category\n");
    let mut local_prefixes = String::new();
    for org in spec.local_orgs.iter().chain(&spec.remote_orgs) {
        for i in 0..org.prefixes {
            let p = addresses.prefix(&org.id, i);
            org_db.push_str(&format!("{p},{},{},{}\n", org.id, org.name, org.category));
        }
    }
    for org in &spec.local_orgs {
        for i in 0..org.prefixes {
            local_prefixes.push_str(&format!("{}\n", addresses.prefix(&org.id, i)));
        }
    }

    let mut gt_prefixes = String::from("app,cidr\n");
    let mut gt_ports = String::from("app,proto,port\n");
    let mut prefix_apps = Vec::new();
    for plan in &spec.mg_servers {
        for port in &plan.ports {
            gt_ports.push_str(&format!(
                "{},{},{port}\n",
                plan.app,
                if plan.udp { "udp" } else { "tcp" }
            ));
        }
        for i in 0..plan.server_prefixes {
            let real = addresses.prefix(&plan.provider_org, i);
            if i < plan.gt_listed {
                gt_prefixes.push_str(&format!("{},{real}\n", plan.app));
            }
            let shown = match &emitter.anonymizer {
                Some(a) => a.anon_prefix(real),
                None => real,
            };
            prefix_apps.push(PrefixAppTruth {
                prefix: shown.to_string(),
                app: plan.app,
                gt_listed: i < plan.gt_listed,
                bytes: emitter.mg_true_bytes.get(&real).copied().unwrap_or(0),
            });
        }
    }

    let mut anon_map = String::from("anon_prefix,real_prefix\n");
    if let Some(a) = &emitter.anonymizer {
        let mut all: BTreeSet<PrefixId> = emitter.seen_prefixes.clone();
        for org in spec.local_orgs.iter().chain(&spec.remote_orgs) {
            for i in 0..org.prefixes {
                all.insert(addresses.prefix(&org.id, i));
            }
        }
        for real in all {
            anon_map.push_str(&format!("{},{real}\n", a.anon_prefix(real)));
        }
    }

    let mut ground_truth = GroundTruth {
        series: Vec::new(),
        prefix_apps,
        anomalies: Vec::new(),
        liveness: Vec::new(),
        totals: emitter.totals.clone(),
    };
    ground_truth.totals.local_flow_fraction = if emitter.totals.flows_emitted > 0 {
        emitter.local_touch as f64 / emitter.totals.flows_emitted as f64
    } else {
        0.0
    };
    for plan in &spec.traffic {
        ground_truth.series.push(SeriesTruth {
            label: plan.kind.row_name(),
            org: plan.org.clone(),
            hours: HoursClass::Work,
            multiplier: plan.work_multiplier,
        });
        ground_truth.series.push(SeriesTruth {
            label: plan.kind.row_name(),
            org: plan.org.clone(),
            hours: HoursClass::Rest,
            multiplier: plan.rest_multiplier,
        });
    }
    for plan in &spec.mg_servers {
        ground_truth.series.push(SeriesTruth {
            label: plan.app.as_str().to_string(),
            org: plan.client_org.clone(),
            hours: HoursClass::Work,
            multiplier: plan.work_multiplier,
        });
        ground_truth.series.push(SeriesTruth {
            label: plan.app.as_str().to_string(),
            org: plan.client_org.clone(),
            hours: HoursClass::Rest,
            multiplier: plan.rest_multiplier,
        });
    }
    for a in &spec.anomalies {
        let start = Timestamp::parse(&a.start)?;
        ground_truth.anomalies.push(AnomalyTruth {
            kind: a.kind,
            start,
            end: Timestamp(start.0 + i64::from(a.duration_minutes) * 60_000),
            zeta: a.zeta,
        });
    }
    for plan in &spec.liveness {
        let real = addresses.prefix(&plan.org, plan.prefix_index);
        let shown = match &emitter.anonymizer {
            Some(a) => a.anon_prefix(real),
            None => real,
        };
        let category = match plan.after_level.cmp(&plan.before_level) {
            std::cmp::Ordering::Greater => "inc",
            std::cmp::Ordering::Less => "dec",
            std::cmp::Ordering::Equal => "same",
        };
        ground_truth
            .liveness
            .push(LivenessTruth { prefix: shown.to_string(), category: category.to_string() });
    }

    Ok(Corpus {
        records,
        org_db,
        local_prefixes,
        gt_prefixes,
        gt_ports,
        anon_map,
        ground_truth,
    })
}

fn emit_plan_flows(
    emitter: &mut Emitter,
    rng: &mut ChaCha8Rng,
    plan: &TrafficPlan,
    bin_start_ms: i64,
    bin_bytes: u64,
) {
    let spec = emitter.spec;
    let addresses = emitter.addresses;
    let pkt = plan.avg_packet_bytes.unwrap_or(spec.avg_packet_bytes);
    let remote_org =
        plan.remote_org.clone().unwrap_or_else(|| spec.remote_orgs[0].id.clone());
    let shares = split_volume(bin_bytes, plan.flows_per_bin, rng);

    for share in shares {
        if share == 0 {
            continue;
        }
        let ts = bin_start_ms + rng.gen_range(0..BIN_MS);
        let duration = rng.gen_range(500..120_000);
        let client_addr = addresses.random_addr(&plan.org, rng);
        let remote_addr = addresses.random_addr(&remote_org, rng);

        match plan.kind {
            PlanKind::App(label) => {
                let (svc_port, proto, flags) = emitter.app_service_port(label, rng);
                let client_port = rng.gen_range(30_000..=60_000u16);
                // server sends the bulk of the bytes; emit server -> client
                let (server, client) = match plan.orientation {
                    Orientation::Inbound => (client_addr, remote_addr),
                    _ => (remote_addr, client_addr),
                };
                emitter.emit(
                    rng, ts, duration, proto, server, svc_port, client, client_port, flags,
                    share, pkt,
                );
            }
            PlanKind::HighPorts => {
                let (a, b) = match plan.orientation {
                    Orientation::Inbound => (client_addr, remote_addr),
                    _ => (remote_addr, client_addr),
                };
                let (pa, pb) = (rng.gen_range(30_000..=60_000), rng.gen_range(30_000..=60_000));
                emitter.emit(
                    rng, ts, duration, PROTO_TCP, a, pa, b, pb,
                    TCP_FLAG_PSH | TCP_FLAG_ACK, share, pkt,
                );
            }
            PlanKind::Syn => {
                // scans toward the org: remote high port -> local web port
                let scan_port = rng.gen_range(30_000..=60_000);
                emitter.emit(
                    rng, ts, 0, PROTO_TCP, remote_addr, scan_port, client_addr, 80,
                    TCP_FLAG_SYN, share, plan.avg_packet_bytes.unwrap_or(40),
                );
            }
            PlanKind::SynAck => {
                let peer_port = rng.gen_range(30_000..=60_000);
                emitter.emit(
                    rng, ts, 0, PROTO_TCP, client_addr, 80, remote_addr, peer_port,
                    TCP_FLAG_SYN | TCP_FLAG_ACK, share, plan.avg_packet_bytes.unwrap_or(40),
                );
            }
            PlanKind::Icmp => {
                emitter.emit(
                    rng, ts, duration, PROTO_ICMP, remote_addr, 0, client_addr, 0, 0, share,
                    plan.avg_packet_bytes.unwrap_or(100),
                );
            }
            PlanKind::Otprot => {
                emitter.emit(rng, ts, duration, 41, remote_addr, 0, client_addr, 0, 0, share, pkt);
            }
            PlanKind::NoService => {
                let (pa, pb) = (rng.gen_range(6500..=7499), rng.gen_range(6500..=7499));
                emitter.emit(
                    rng, ts, duration, PROTO_TCP, remote_addr, pa, client_addr, pb,
                    TCP_FLAG_PSH | TCP_FLAG_ACK, share, pkt,
                );
            }
        }
    }
}

fn emit_mg_hour(
    emitter: &mut Emitter,
    rng: &mut ChaCha8Rng,
    plan: &MgServerPlan,
    server_index: u32,
    hour_start_ms: i64,
    hour_bytes: u64,
) {
    let spec = emitter.spec;
    let addresses = emitter.addresses;
    let server_prefix = addresses.prefix(&plan.provider_org, server_index);
    *emitter.mg_true_bytes.entry(server_prefix).or_default() += hour_bytes.max(1);
    let shares = split_volume(hour_bytes.max(1), plan.flows_per_prefix_hour, rng);
    let (proto, flags) =
        if plan.udp { (PROTO_UDP, 0) } else { (PROTO_TCP, TCP_FLAG_PSH | TCP_FLAG_ACK) };

    for share in shares {
        let ts = hour_start_ms + rng.gen_range(0..3_600_000);
        let duration = rng.gen_range(500..300_000);
        let server = server_prefix.addr(rng.gen_range(1..=254));
        let client = addresses.random_addr(&plan.client_org, rng);
        let svc_port = plan.ports[rng.gen_range(0..plan.ports.len())];
        let client_port = rng.gen_range(30_000..=60_000);
        emitter.emit(
            rng,
            ts,
            duration,
            proto,
            server,
            svc_port,
            client,
            client_port,
            flags,
            share.max(1),
            spec.avg_packet_bytes,
        );
    }
}

fn emit_attack_flows(
    emitter: &mut Emitter,
    rng: &mut ChaCha8Rng,
    plan: &AnomalyPlan,
    plan_index: usize,
    bin_start_ms: i64,
    extra_units: f64,
) {
    if extra_units <= 0.0 {
        return;
    }
    let addresses = emitter.addresses;
    let victim_prefix = addresses.prefix(&plan.victim_org, 0);
    let keys = plan.attacker_keys;

    // per-kind packet sizes and the unit the stream is measured in
    let (pkt_bytes, unit_is_packets) = match plan.kind {
        AnomalyKind::NtpAmp => (468, false),
        AnomalyKind::DnsAmp => (1200, false),
        AnomalyKind::IcmpFlood => (100, true),
        AnomalyKind::SynFlood => (40, true),
        AnomalyKind::OtherBandwidth => (1000, false),
    };
    let total_bytes =
        if unit_is_packets { extra_units * pkt_bytes as f64 } else { extra_units } as u64;
    let per_key = (total_bytes / u64::from(keys)).max(1);

    for key in 0..keys {
        let src_prefix = addresses.attacker_prefix(plan_index, key);
        let src = src_prefix.addr(1 + (key % 250) as u8);
        let victim = victim_prefix.addr(10);
        let ts = bin_start_ms + i64::from(key % 300) * 1_000;
        match plan.kind {
            AnomalyKind::NtpAmp => emitter.emit(
                rng, ts, 290_000, PROTO_UDP, src, 123, victim, 50_000 + (key % 1_000) as u16,
                0, per_key, 468,
            ),
            AnomalyKind::DnsAmp => emitter.emit(
                rng, ts, 290_000, PROTO_UDP, src, 53, victim, 50_000 + (key % 1_000) as u16,
                0, per_key, 1200,
            ),
            AnomalyKind::IcmpFlood => {
                emitter.emit(rng, ts, 290_000, PROTO_ICMP, src, 0, victim, 0, 0, per_key, 100)
            }
            AnomalyKind::SynFlood => emitter.emit(
                rng, ts, 290_000, PROTO_TCP, src, (40_000 + key * 7 % 20_000) as u16, victim,
                443, TCP_FLAG_SYN, per_key, 40,
            ),
            AnomalyKind::OtherBandwidth => emitter.emit(
                rng, ts, 290_000, PROTO_TCP, src, 443, victim, 50_000 + (key % 1_000) as u16,
                TCP_FLAG_PSH | TCP_FLAG_ACK, per_key, 1000,
            ),
        }
    }
}

fn emit_liveness_day(
    emitter: &mut Emitter,
    rng: &mut ChaCha8Rng,
    plan: &LivenessPlan,
    cal: &StudyCalendar,
    date: NaiveDate,
    midnight_ms: i64,
    weekday: Weekday,
) {
    let addresses = emitter.addresses;
    let level = match cal.period_of_date(date) {
        Period::Before | Period::Outside => plan.before_level,
        Period::After => plan.after_level,
        Period::Transition => {
            let done = (date - cal.transition.first).num_days() as f64 + 1.0;
            let span = cal.transition.days() as f64 + 1.0;
            (plan.before_level as f64
                + (plan.after_level as f64 - plan.before_level as f64) * done / span)
                as u32
        }
    };
    let jitter = if plan.jitter > 0 {
        rng.gen_range(0..=2 * plan.jitter) as i64 - i64::from(plan.jitter)
    } else {
        0
    };
    let mut count = (i64::from(level) + jitter).clamp(0, 256) as u32;
    if plan.weekend_dip && matches!(weekday, Weekday::Sat | Weekday::Sun) {
        count = (count * 7) / 10;
    }

    let prefix = addresses.prefix(&plan.org, plan.prefix_index);
    let beacon = Ipv4Addr::new(198, 18, (plan.prefix_index % 256) as u8, 7);
    let rate = u64::from(emitter.rate_for(beacon));
    for host in 0..count {
        let ts = midnight_ms + i64::from(host) * (86_400_000 / i64::from(count.max(1)));
        let local = prefix.addr(host as u8);
        // enough true packets that sampling keeps every address visible
        emitter.emit(
            rng,
            ts,
            5_000,
            PROTO_UDP,
            beacon,
            123,
            local,
            40_000 + host as u16,
            0,
            40 * rate * 100,
            100,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::upsample;

    fn tiny_spec() -> ScenarioSpec {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        ScenarioSpec {
            seed: 5,
            calendar: StudyCalendar {
                before: crate::time::DateInterval::new(d(2020, 2, 24), d(2020, 2, 26)),
                transition: crate::time::DateInterval::new(d(2020, 2, 27), d(2020, 2, 28)),
                after: crate::time::DateInterval::new(d(2020, 2, 29), d(2020, 3, 2)),
                work_hours: Default::default(),
                timezone_offset_hours: -7,
            },
            sampling_rates: vec![100],
            noise: 0.05,
            avg_packet_bytes: 1000,
            local_orgs: vec![OrgSpec {
                id: "E01".into(),
                name: "Example University".into(),
                category: OrgCategory::Education,
                prefixes: 4,
            }],
            remote_orgs: vec![OrgSpec {
                id: "R01".into(),
                name: "Acme Hosting".into(),
                category: OrgCategory::Business,
                prefixes: 8,
            }],
            traffic: vec![TrafficPlan {
                kind: PlanKind::App(AppLabel::Https),
                org: "E01".into(),
                orientation: Orientation::Inbound,
                remote_org: None,
                gb_per_hour_work: 2.0,
                gb_per_hour_rest: 1.0,
                work_multiplier: 0.5,
                rest_multiplier: 0.8,
                flows_per_bin: 4,
                diurnal: true,
                avg_packet_bytes: None,
            }],
            mg_servers: vec![],
            anomalies: vec![],
            liveness: vec![],
            anonymize: true,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = tiny_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.flows_csv(), b.flows_csv());
        assert_eq!(a.anon_map, b.anon_map);
        assert!(!a.records.is_empty());
    }

    #[test]
    fn different_seeds_differ() {
        let mut spec = tiny_spec();
        let a = generate(&spec).unwrap();
        spec.seed = 6;
        let b = generate(&spec).unwrap();
        assert_ne!(a.flows_csv(), b.flows_csv());
    }

    #[test]
    fn records_are_time_sorted_and_valid() {
        let corpus = generate(&tiny_spec()).unwrap();
        for w in corpus.records.windows(2) {
            assert!(w[0].ts_start <= w[1].ts_start);
        }
        for r in &corpus.records {
            r.validate().unwrap();
        }
    }

    #[test]
    fn upsampled_volume_tracks_true_volume() {
        let mut spec = tiny_spec();
        spec.noise = 0.0;
        let corpus = generate(&spec).unwrap();
        let upsampled: u128 = corpus
            .records
            .iter()
            .map(|r| u128::from(upsample(*r).bytes))
            .sum();
        let truth = corpus.ground_truth.totals.true_bytes;
        let rel_err = (upsampled as f64 - truth as f64).abs() / truth as f64;
        assert!(rel_err < 0.05, "relative error {rel_err}");
    }

    // Sampling error shrinks as the corpus grows.
    #[test]
    fn sampling_error_shrinks_with_volume() {
        let err_at = |gb: f64| {
            let mut spec = tiny_spec();
            spec.noise = 0.0;
            spec.traffic[0].gb_per_hour_work = gb;
            spec.traffic[0].gb_per_hour_rest = gb / 2.0;
            spec.traffic[0].flows_per_bin = 8;
            let corpus = generate(&spec).unwrap();
            let upsampled: u128 =
                corpus.records.iter().map(|r| u128::from(upsample(*r).bytes)).sum();
            let truth = corpus.ground_truth.totals.true_bytes;
            (upsampled as f64 - truth as f64).abs() / truth as f64
        };
        let small = err_at(0.05);
        let large = err_at(5.0);
        assert!(large < small, "small corpus err {small}, large corpus err {large}");
    }

    #[test]
    fn anonymization_map_round_trips() {
        let corpus = generate(&tiny_spec()).unwrap();
        let mut anon_to_real = std::collections::HashMap::new();
        for line in corpus.anon_map.lines().skip(1) {
            let (a, r) = line.split_once(',').unwrap();
            let a = PrefixId::parse(a).unwrap();
            let r = PrefixId::parse(r).unwrap();
            assert!(anon_to_real.insert(a, r).is_none(), "anon side must be unique");
        }
        // every flow prefix is mapped
        for rec in &corpus.records {
            assert!(anon_to_real.contains_key(&PrefixId::of(rec.src_ip)));
            assert!(anon_to_real.contains_key(&PrefixId::of(rec.dst_ip)));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny_spec();
        spec.traffic[0].work_multiplier = 0.0;
        assert!(generate(&spec).is_err());

        let mut spec = tiny_spec();
        spec.anomalies.push(AnomalyPlan {
            kind: AnomalyKind::NtpAmp,
            start: "2019-01-01T00:00:00Z".into(),
            duration_minutes: 10,
            zeta: 5.0,
            victim_org: "E01".into(),
            attacker_keys: 4,
            ramp: false,
        });
        assert!(generate(&spec).is_err());

        let mut spec = tiny_spec();
        spec.liveness.push(LivenessPlan {
            org: "E01".into(),
            prefix_index: 99,
            before_level: 10,
            after_level: 20,
            jitter: 0,
            weekend_dip: false,
        });
        assert!(generate(&spec).is_err());
    }
}
