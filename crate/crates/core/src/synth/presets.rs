//! Ready-made scenarios. Each one plants the phenomena a particular slice
//! of the analysis is supposed to recover, at desk scale.

use chrono::NaiveDate;

use crate::anomaly::AnomalyKind;
use crate::attrib::{OrgCategory, Orientation};
use crate::classify::AppLabel;
use crate::time::{DateInterval, StudyCalendar};

use super::{
    AnomalyPlan, LivenessPlan, MgServerPlan, OrgSpec, PlanKind, ScenarioSpec, TrafficPlan,
};

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn calendar(before: (NaiveDate, NaiveDate), transition: (NaiveDate, NaiveDate), after: (NaiveDate, NaiveDate)) -> StudyCalendar {
    StudyCalendar {
        before: DateInterval::new(before.0, before.1),
        transition: DateInterval::new(transition.0, transition.1),
        after: DateInterval::new(after.0, after.1),
        work_hours: Default::default(),
        timezone_offset_hours: -7,
    }
}

fn org(id: &str, name: &str, category: OrgCategory, prefixes: u32) -> OrgSpec {
    OrgSpec { id: id.into(), name: name.into(), category, prefixes }
}

#[allow(clippy::too_many_arguments)]
fn plan(
    kind: PlanKind,
    org: &str,
    orientation: Orientation,
    work_gb: f64,
    rest_gb: f64,
    work_mult: f64,
    rest_mult: f64,
    flows: u32,
) -> TrafficPlan {
    TrafficPlan {
        kind,
        org: org.into(),
        orientation,
        remote_org: None,
        gb_per_hour_work: work_gb,
        gb_per_hour_rest: rest_gb,
        work_multiplier: work_mult,
        rest_multiplier: rest_mult,
        flows_per_bin: flows,
        diurnal: true,
        avg_packet_bytes: None,
    }
}

/// Eight weeks (3 + 2 + 3) planting the headline application multipliers:
/// https work-hours down to 46%, VPN up 5.54x, gaming collapsing to 14%,
/// scientific data delivery flat at 104%, NTP nearly flat at 96%.
pub fn change_scenario(seed: u64) -> ScenarioSpec {
    let e01 = "E01";
    let g01 = "G01";
    let mut traffic = vec![
        plan(PlanKind::App(AppLabel::Https), e01, Orientation::Inbound, 3.0, 1.5, 0.46, 0.64, 6),
        plan(PlanKind::App(AppLabel::Https), g01, Orientation::Inbound, 1.5, 0.8, 0.46, 0.64, 4),
        plan(PlanKind::App(AppLabel::Web), e01, Orientation::Outbound, 2.0, 1.0, 0.35, 0.47, 5),
        plan(PlanKind::App(AppLabel::Vpn), e01, Orientation::Inbound, 0.60, 0.30, 5.54, 2.07, 4),
        plan(PlanKind::App(AppLabel::Unidata), e01, Orientation::Inbound, 2.0, 2.0, 1.04, 1.04, 5),
        plan(PlanKind::App(AppLabel::Ntp), e01, Orientation::Outbound, 0.30, 0.30, 0.96, 0.92, 4),
        plan(PlanKind::App(AppLabel::Perfsonar), g01, Orientation::Inbound, 0.5, 0.5, 1.13, 1.09, 3),
        plan(PlanKind::HighPorts, e01, Orientation::Inbound, 2.0, 2.0, 0.90, 0.97, 4),
        plan(PlanKind::Syn, e01, Orientation::Inbound, 0.05, 0.05, 0.69, 1.0, 3),
        plan(PlanKind::Icmp, g01, Orientation::Inbound, 0.08, 0.08, 0.98, 1.0, 3),
        plan(PlanKind::Otprot, e01, Orientation::Inbound, 0.6, 0.6, 1.0, 1.0, 3),
        plan(PlanKind::NoService, e01, Orientation::Inbound, 0.3, 0.3, 0.82, 0.82, 3),
    ];
    // a little truly remote traffic so the local share is a real fraction
    let mut transit = plan(PlanKind::Otprot, "R02", Orientation::Transit, 0.4, 0.2, 1.0, 1.0, 2);
    transit.remote_org = Some("R01".into());
    traffic.push(transit);

    ScenarioSpec {
        seed,
        calendar: calendar(
            (d(2020, 2, 24), d(2020, 3, 15)),
            (d(2020, 3, 16), d(2020, 3, 29)),
            (d(2020, 3, 30), d(2020, 4, 19)),
        ),
        sampling_rates: vec![100],
        noise: 0.10,
        avg_packet_bytes: 1000,
        local_orgs: vec![
            org(e01, "Example University", OrgCategory::Education, 8),
            org(g01, "State Agency", OrgCategory::Government, 4),
        ],
        remote_orgs: vec![
            org("R01", "Acme Hosting", OrgCategory::Business, 16),
            org("R02", "Regional Homes ISP", OrgCategory::Isp, 16),
            org("MG1", "Zoom Video Communications", OrgCategory::Business, 4),
            org("MG2", "Valve Software", OrgCategory::Business, 4),
        ],
        traffic,
        mg_servers: vec![
            MgServerPlan {
                app: AppLabel::Zoom,
                provider_org: "MG1".into(),
                server_prefixes: 2,
                gt_listed: 2,
                ports: vec![8801, 8802, 8803, 3478, 443],
                udp: true,
                client_org: e01.into(),
                flows_per_prefix_hour: 55,
                gb_per_hour_work: 0.35,
                gb_per_hour_rest: 0.25,
                work_multiplier: 2.54,
                rest_multiplier: 1.44,
            },
            MgServerPlan {
                app: AppLabel::Steam,
                provider_org: "MG2".into(),
                server_prefixes: 2,
                gt_listed: 2,
                ports: vec![27015, 27016, 27017, 27036],
                udp: true,
                client_org: e01.into(),
                flows_per_prefix_hour: 55,
                gb_per_hour_work: 0.40,
                gb_per_hour_rest: 0.50,
                work_multiplier: 0.14,
                rest_multiplier: 0.19,
            },
        ],
        anomalies: vec![],
        liveness: vec![],
        anonymize: true,
    }
}

/// Two weeks with 40 meeting/gaming server prefixes across the seven
/// applications, overlapping port profiles, and enough hourly flows that
/// every prefix clears the vector-admission filter. A plain hosting
/// organization serves https to pollute the candidate set.
pub fn classifier_scenario(seed: u64) -> ScenarioSpec {
    let profiles: [(AppLabel, &str, &str, u32, u32, &[u16]); 7] = [
        (AppLabel::Zoom, "MGZ", "Zoom Video Communications", 8, 5, &[8801, 8802, 8803, 3478, 443]),
        (AppLabel::Webex, "MGW", "Cisco Systems", 7, 4, &[9000, 5004, 3478, 443]),
        (AppLabel::Skype, "MGS", "Microsoft Corporation", 6, 4, &[3478, 3479, 3480, 443]),
        (AppLabel::Bluejeans, "MGB", "CenturyLink Communications", 5, 3, &[5000, 5001, 5002, 443]),
        (AppLabel::Gmeet, "MGG", "Google LLC", 5, 3, &[19302, 19303, 19305, 443]),
        (AppLabel::Goto, "MGL", "LogMeIn Inc", 5, 5, &[1853, 8200, 443]),
        // goto runs over tcp below; see the loop
        (AppLabel::Steam, "MGV", "Valve Software", 4, 4, &[27015, 27016, 27017, 27036]),
    ];

    let mut remote_orgs = vec![org("R01", "Acme Hosting", OrgCategory::Hosting, 2)];
    let mut mg_servers = Vec::new();
    for (app, org_id, name, prefixes, gt_listed, ports) in profiles {
        remote_orgs.push(org(org_id, name, OrgCategory::Business, prefixes));
        mg_servers.push(MgServerPlan {
            app,
            provider_org: org_id.into(),
            server_prefixes: prefixes,
            gt_listed,
            ports: ports.to_vec(),
            // goto publishes tcp ports (including 443), which lets plain
            // https hosting turn up as candidate prefixes
            udp: app != AppLabel::Goto,
            client_org: "E01".into(),
            flows_per_prefix_hour: 70,
            gb_per_hour_work: 0.30,
            gb_per_hour_rest: 0.25,
            work_multiplier: 1.8,
            rest_multiplier: 1.2,
        });
    }

    ScenarioSpec {
        seed,
        calendar: calendar(
            (d(2020, 2, 24), d(2020, 3, 1)),
            (d(2020, 3, 2), d(2020, 3, 3)),
            (d(2020, 3, 4), d(2020, 3, 8)),
        ),
        sampling_rates: vec![100],
        noise: 0.08,
        avg_packet_bytes: 1000,
        local_orgs: vec![
            org("E01", "Example University", OrgCategory::Education, 8),
            org("G01", "State Agency", OrgCategory::Government, 4),
        ],
        remote_orgs,
        traffic: vec![
            // https served by the hosting org: candidate pollution that the
            // ownership pruning must reject
            {
                let mut p = plan(PlanKind::App(AppLabel::Https), "E01", Orientation::Outbound, 1.5, 0.8, 1.0, 1.0, 10);
                p.remote_org = Some("R01".into());
                p
            },
            plan(PlanKind::App(AppLabel::Web), "G01", Orientation::Outbound, 0.8, 0.4, 1.0, 1.0, 4),
        ],
        mg_servers,
        anomalies: vec![],
        liveness: vec![],
        anonymize: true,
    }
}

/// Baseline streams sized against the default detector rules, plus twelve
/// scheduled attacks (two or more per kind). Amplification and ICMP attacks
/// ride few flow keys so only the threshold detector sees them; SYN floods
/// use many keys and trip both detectors; the bandwidth anomalies are
/// many-key ramps only the equilibrium detector can see.
pub fn anomaly_scenario(seed: u64) -> ScenarioSpec {
    let flat = |kind, org: &str, gb: f64, flows: u32, pkt: Option<u64>| {
        let mut p = plan(kind, org, Orientation::Inbound, gb, gb, 1.0, 1.0, flows);
        p.diurnal = false;
        p.avg_packet_bytes = pkt;
        p
    };
    let attack = |kind, start: &str, minutes: u32, zeta: f64, keys: u32, ramp: bool| AnomalyPlan {
        kind,
        start: start.into(),
        duration_minutes: minutes,
        zeta,
        victim_org: "E01".into(),
        attacker_keys: keys,
        ramp,
    };

    ScenarioSpec {
        seed,
        calendar: calendar(
            (d(2020, 2, 24), d(2020, 3, 8)),
            (d(2020, 3, 9), d(2020, 3, 15)),
            (d(2020, 3, 16), d(2020, 3, 29)),
        ),
        sampling_rates: vec![100],
        noise: 0.03,
        avg_packet_bytes: 1000,
        local_orgs: vec![
            org("E01", "Example University", OrgCategory::Education, 8),
            org("G01", "State Agency", OrgCategory::Government, 4),
        ],
        remote_orgs: vec![
            org("R01", "Acme Hosting", OrgCategory::Business, 24),
            org("R02", "Regional Homes ISP", OrgCategory::Isp, 16),
        ],
        traffic: vec![
            // monitored automated streams, flat so seven-day expectations hold
            flat(PlanKind::App(AppLabel::Ntp), "E01", 27.0, 40, None),
            flat(PlanKind::App(AppLabel::Dns), "E01", 27.0, 40, None),
            flat(PlanKind::Icmp, "E01", 1.8, 30, Some(100)),
            flat(PlanKind::Syn, "E01", 1.44, 30, Some(40)),
            flat(PlanKind::SynAck, "E01", 1.0, 25, Some(40)),
            // diurnal bulk for the overall stream
            plan(PlanKind::App(AppLabel::Https), "E01", Orientation::Inbound, 60.0, 30.0, 1.0, 1.0, 60),
            plan(PlanKind::App(AppLabel::Web), "E01", Orientation::Outbound, 20.0, 10.0, 1.0, 1.0, 40),
            plan(PlanKind::HighPorts, "E01", Orientation::Inbound, 20.0, 20.0, 1.0, 1.0, 30),
        ],
        mg_servers: vec![],
        anomalies: vec![
            // before period
            attack(AnomalyKind::DnsAmp, "2020-02-26T17:00:00Z", 15, 6.0, 4, false),
            attack(AnomalyKind::NtpAmp, "2020-02-27T20:00:00Z", 15, 5.0, 4, false),
            attack(AnomalyKind::SynFlood, "2020-02-28T14:00:00Z", 15, 7.0, 50, false),
            attack(AnomalyKind::SynFlood, "2020-03-02T09:30:00Z", 10, 8.0, 50, false),
            attack(AnomalyKind::NtpAmp, "2020-03-05T11:00:00Z", 25, 10.0, 4, false),
            // after period
            attack(AnomalyKind::DnsAmp, "2020-03-18T15:00:00Z", 20, 8.0, 4, false),
            attack(AnomalyKind::NtpAmp, "2020-03-24T10:00:00Z", 15, 12.0, 4, false),
            attack(AnomalyKind::IcmpFlood, "2020-03-19T12:00:00Z", 10, 6.0, 4, false),
            attack(AnomalyKind::IcmpFlood, "2020-03-25T22:00:00Z", 15, 9.0, 4, false),
            attack(AnomalyKind::SynFlood, "2020-03-20T16:00:00Z", 20, 7.0, 50, false),
            attack(AnomalyKind::OtherBandwidth, "2020-03-21T18:00:00Z", 20, 4.0, 60, true),
            attack(AnomalyKind::OtherBandwidth, "2020-03-26T13:00:00Z", 15, 5.0, 60, true),
        ],
        liveness: vec![],
        anonymize: true,
    }
}

/// Sixty local /24s planting twenty prefixes per liveness outcome, spread
/// over four organization categories. Background traffic lives on its own
/// organization so planted daily counts stay exact.
pub fn liveness_scenario(seed: u64) -> ScenarioSpec {
    let mut liveness = Vec::new();
    // (org, prefixes, inc, same, dec)
    let split: [(&str, u32, u32, u32); 4] =
        [("E01", 8, 8, 8), ("G01", 5, 5, 5), ("B01", 3, 3, 3), ("I01", 4, 4, 4)];
    for (org_id, inc, same, dec) in split {
        let mut index = 0u32;
        for i in 0..inc {
            liveness.push(LivenessPlan {
                org: org_id.into(),
                prefix_index: index,
                before_level: 10 + (i % 3),
                after_level: 100 + 5 * i,
                jitter: 3,
                weekend_dip: true,
            });
            index += 1;
        }
        for i in 0..same {
            liveness.push(LivenessPlan {
                org: org_id.into(),
                prefix_index: index,
                before_level: 30 + 4 * i,
                after_level: 30 + 4 * i,
                jitter: 0,
                weekend_dip: true,
            });
            index += 1;
        }
        for i in 0..dec {
            liveness.push(LivenessPlan {
                org: org_id.into(),
                prefix_index: index,
                before_level: 150 + 5 * i,
                after_level: 20 + (i % 4),
                jitter: 3,
                weekend_dip: true,
            });
            index += 1;
        }
    }

    ScenarioSpec {
        seed,
        calendar: calendar(
            (d(2020, 2, 24), d(2020, 3, 15)),
            (d(2020, 3, 16), d(2020, 3, 22)),
            (d(2020, 3, 23), d(2020, 4, 12)),
        ),
        sampling_rates: vec![100],
        noise: 0.05,
        avg_packet_bytes: 1000,
        local_orgs: vec![
            org("E01", "Example University", OrgCategory::Education, 24),
            org("G01", "State Agency", OrgCategory::Government, 15),
            org("B01", "Main Street Business", OrgCategory::Business, 9),
            org("I01", "Regional Homes ISP", OrgCategory::Isp, 12),
            org("E99", "Background Campus", OrgCategory::Education, 4),
        ],
        remote_orgs: vec![org("R01", "Acme Hosting", OrgCategory::Business, 8)],
        traffic: vec![plan(
            PlanKind::App(AppLabel::Https),
            "E99",
            Orientation::Inbound,
            0.5,
            0.3,
            0.8,
            0.9,
            3,
        )],
        mg_servers: vec![],
        anomalies: vec![],
        liveness,
        anonymize: true,
    }
}

/// Four weeks with every service label scaled to 70% after the transition;
/// the generator-level check that planted multipliers survive sampling.
pub fn validation_scenario(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        calendar: calendar(
            (d(2020, 2, 24), d(2020, 3, 8)),
            (d(2020, 3, 9), d(2020, 3, 12)),
            (d(2020, 3, 13), d(2020, 3, 22)),
        ),
        sampling_rates: vec![100, 4096],
        noise: 0.05,
        avg_packet_bytes: 1000,
        local_orgs: vec![org("E01", "Example University", OrgCategory::Education, 8)],
        remote_orgs: vec![org("R01", "Acme Hosting", OrgCategory::Business, 16)],
        traffic: vec![
            plan(PlanKind::App(AppLabel::Https), "E01", Orientation::Inbound, 2.5, 1.2, 0.70, 0.70, 6),
            plan(PlanKind::App(AppLabel::Web), "E01", Orientation::Outbound, 1.5, 0.8, 0.70, 0.70, 5),
            plan(PlanKind::App(AppLabel::Unidata), "E01", Orientation::Inbound, 1.0, 1.0, 0.70, 0.70, 4),
        ],
        mg_servers: vec![],
        anomalies: vec![],
        liveness: vec![],
        anonymize: true,
    }
}

/// One small week-and-a-half corpus for byte-identical rerun and
/// conservation checks.
pub fn determinism_scenario(seed: u64) -> ScenarioSpec {
    let mut spec = change_scenario(seed);
    spec.calendar = calendar(
        (d(2020, 2, 24), d(2020, 3, 1)),
        (d(2020, 3, 2), d(2020, 3, 4)),
        (d(2020, 3, 5), d(2020, 3, 11)),
    );
    for p in &mut spec.traffic {
        p.gb_per_hour_work *= 0.2;
        p.gb_per_hour_rest *= 0.2;
        p.flows_per_bin = p.flows_per_bin.clamp(2, 3);
    }
    for m in &mut spec.mg_servers {
        m.gb_per_hour_work *= 0.4;
        m.gb_per_hour_rest *= 0.4;
    }
    spec
}

/// Preset lookup by name, for the command line.
pub fn by_name(name: &str, seed: u64) -> Option<ScenarioSpec> {
    match name {
        "change" => Some(change_scenario(seed)),
        "classifier" => Some(classifier_scenario(seed)),
        "anomaly" => Some(anomaly_scenario(seed)),
        "liveness" => Some(liveness_scenario(seed)),
        "validation" => Some(validation_scenario(seed)),
        "determinism" => Some(determinism_scenario(seed)),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 6] =
    ["change", "classifier", "anomaly", "liveness", "validation", "determinism"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            let spec = by_name(name, 7).unwrap();
            spec.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(by_name("nope", 7).is_none());
    }

    #[test]
    fn liveness_preset_plants_twenty_per_category() {
        let spec = liveness_scenario(1);
        let count = |target: u32, after_gt: bool, same: bool| {
            spec.liveness
                .iter()
                .filter(|p| {
                    if same {
                        p.after_level == p.before_level
                    } else if after_gt {
                        p.after_level > p.before_level
                    } else {
                        p.after_level < p.before_level
                    }
                })
                .count() as u32
                == target
        };
        assert!(count(20, true, false));
        assert!(count(20, false, false));
        assert!(count(20, false, true));
    }

    #[test]
    fn anomaly_preset_has_twelve_attacks_two_per_kind() {
        let spec = anomaly_scenario(1);
        assert_eq!(spec.anomalies.len(), 12);
        for kind in AnomalyKind::ALL {
            let n = spec.anomalies.iter().filter(|a| a.kind == kind).count();
            assert!(n >= 2, "{kind} planted {n} times");
        }
        for a in &spec.anomalies {
            assert!(a.zeta >= 3.0 && a.zeta <= 50.0);
        }
    }

    #[test]
    fn classifier_preset_has_forty_prefixes() {
        let spec = classifier_scenario(1);
        let total: u32 = spec.mg_servers.iter().map(|m| m.server_prefixes).sum();
        assert_eq!(total, 40);
        // pairwise port-profile separation: no two identical
        for (i, a) in spec.mg_servers.iter().enumerate() {
            for b in &spec.mg_servers[i + 1..] {
                assert_ne!(a.ports, b.ports);
            }
        }
    }
}
