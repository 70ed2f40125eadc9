//! Meeting/gaming traffic classification.
//!
//! Provider-published server prefixes and ports are a starting point, but
//! the prefix lists are incomplete and the port lists overlap heavily across
//! applications. So servers are fingerprinted behaviorally: for every
//! (prefix, hour) we collect the server-side ports and flow count into a
//! fixed-width vector, train a decision tree on vectors of the published
//! prefixes, classify unknown candidate prefixes discovered through the
//! published ports, and keep only candidates whose prefix ownership is
//! consistent with the predicted application. The surviving set — published
//! plus verified — is the known-mg-prefix list consumed by the labeler.

pub mod tree;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tree::{DecisionTree, TreeParams};

use crate::attrib::{DirectedFlow, PrefixDirectory, PrefixId};
use crate::classify::{AppLabel, MgLookup};
use crate::error::{Error, Result};
use crate::flow::{PROTO_TCP, PROTO_UDP};
use crate::time::BinWidth;

/// One prefix-hour activity fingerprint: the hour's distinct server-side
/// ports, most flow-frequent first capped at the width, then sorted
/// ascending and front-padded with zeros; plus the hour's flow count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortVector {
    pub prefix: PrefixId,
    pub hour: i64,
    pub ports: Vec<u16>,
    pub flow_count: u64,
    pub label: Option<AppLabel>,
}

impl PortVector {
    pub fn features(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.ports.iter().map(|p| f64::from(*p)).collect();
        f.push(self.flow_count as f64);
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorParams {
    /// Fixed vector width: number of port slots.
    pub width: usize,
    /// Vectors with fewer flows than this are dropped.
    pub min_flows: u64,
}

impl Default for VectorParams {
    fn default() -> Self {
        VectorParams { width: 16, min_flows: 50 }
    }
}

/// Expands per-application CIDR blocks to /24 granularity: blocks longer
/// than /24 become their covering /24, blocks at most /24 become every /24
/// they contain. Conflicting claims keep the first application and warn.
pub fn expand_ground_truth(
    rows: &[(AppLabel, Ipv4Addr, u8)],
) -> Result<(BTreeMap<PrefixId, AppLabel>, Vec<String>)> {
    let mut out: BTreeMap<PrefixId, AppLabel> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for (app, base, len) in rows {
        if !(8..=32).contains(len) {
            return Err(Error::invalid(format!("cidr length /{len} outside 8..=32")));
        }
        let base = u32::from(*base);
        let mask = if *len == 32 { u32::MAX } else { !(u32::MAX >> len) };
        if base & !mask != 0 {
            return Err(Error::invalid(format!(
                "{}/{len} has host bits set",
                Ipv4Addr::from(base)
            )));
        }
        let covered: Vec<PrefixId> = if *len >= 24 {
            vec![PrefixId(base & 0xFFFF_FF00)]
        } else {
            (0..(1u32 << (24 - len))).map(|k| PrefixId(base + (k << 8))).collect()
        };
        for p in covered {
            match out.get(&p) {
                Some(prev) if *prev != *app => {
                    conflicts.push(format!("{p} claimed by both {prev} and {app}, keeping {prev}"));
                }
                Some(_) => {}
                None => {
                    out.insert(p, *app);
                }
            }
        }
    }
    Ok((out, conflicts))
}

/// Parses the `app,cidr` ground-truth prefix file.
pub fn read_gt_prefixes(reader: impl Read) -> Result<Vec<(AppLabel, Ipv4Addr, u8)>> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("app,") {
            continue;
        }
        let (app, cidr) = t
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("gt prefixes line {}: missing comma", lineno + 1)))?;
        let app = AppLabel::parse(app)?;
        if !app.is_mg() {
            return Err(Error::invalid(format!(
                "gt prefixes line {}: {app} is not a meeting/gaming label",
                lineno + 1
            )));
        }
        let (ip, len) = match cidr.trim().split_once('/') {
            Some((ip, len)) => (
                ip.parse::<Ipv4Addr>()
                    .map_err(|_| Error::invalid(format!("bad cidr {cidr:?}")))?,
                len.parse::<u8>().map_err(|_| Error::invalid(format!("bad cidr {cidr:?}")))?,
            ),
            None => (
                cidr.trim()
                    .parse::<Ipv4Addr>()
                    .map_err(|_| Error::invalid(format!("bad address {cidr:?}")))?,
                24,
            ),
        };
        rows.push((app, ip, len));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoSel {
    Tcp,
    Udp,
    Any,
}

impl ProtoSel {
    fn matches(self, proto: u8) -> bool {
        match self {
            ProtoSel::Tcp => proto == PROTO_TCP,
            ProtoSel::Udp => proto == PROTO_UDP,
            ProtoSel::Any => proto == PROTO_TCP || proto == PROTO_UDP,
        }
    }
}

/// Provider-published required ports, per application.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GtPorts {
    rules: BTreeMap<AppLabel, Vec<(ProtoSel, u16, u16)>>,
}

impl GtPorts {
    pub fn add(&mut self, app: AppLabel, proto: ProtoSel, lo: u16, hi: u16) {
        self.rules.entry(app).or_default().push((proto, lo, hi));
    }

    pub fn matches_any_app(&self, proto: u8, port: u16) -> bool {
        self.rules.values().any(|rules| {
            rules.iter().any(|(sel, lo, hi)| sel.matches(proto) && (*lo..=*hi).contains(&port))
        })
    }

    pub fn apps(&self) -> impl Iterator<Item = AppLabel> + '_ {
        self.rules.keys().copied()
    }

    /// Parses the `app,proto,port[-port]` file.
    pub fn read(reader: impl Read) -> Result<GtPorts> {
        let mut out = GtPorts::default();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("app,") {
                continue;
            }
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::invalid(format!(
                    "gt ports line {}: expected app,proto,port[-port]",
                    lineno + 1
                )));
            }
            let app = AppLabel::parse(fields[0])?;
            let proto = match fields[1].to_ascii_lowercase().as_str() {
                "tcp" => ProtoSel::Tcp,
                "udp" => ProtoSel::Udp,
                "any" => ProtoSel::Any,
                other => return Err(Error::invalid(format!("bad proto {other:?}"))),
            };
            let (lo, hi) = match fields[2].split_once('-') {
                Some((a, b)) => (
                    a.parse().map_err(|_| Error::invalid(format!("bad port {a:?}")))?,
                    b.parse().map_err(|_| Error::invalid(format!("bad port {b:?}")))?,
                ),
                None => {
                    let p: u16 = fields[2]
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad port {:?}", fields[2])))?;
                    (p, p)
                }
            };
            out.add(app, proto, lo, hi);
        }
        Ok(out)
    }
}

/// Builds prefix-hour port vectors for the given prefixes: only flows with a
/// resolved server endpoint inside a prefix contribute; an hour's ports are
/// the distinct server ports, capped at the width's most flow-frequent (ties
/// to the lower port); vectors with fewer flows than the threshold are
/// dropped.
pub fn extract_vectors(
    flows: &[DirectedFlow],
    prefixes: &BTreeSet<PrefixId>,
    labels: &BTreeMap<PrefixId, AppLabel>,
    params: VectorParams,
) -> Vec<PortVector> {
    let mut groups: BTreeMap<(PrefixId, i64), HashMap<u16, u64>> = BTreeMap::new();
    for df in flows {
        let Some(prefix) = df.server_prefix() else { continue };
        if !prefixes.contains(&prefix) {
            continue;
        }
        let (server_port, _) = df.server_client_ports().expect("resolved server side");
        let hour = BinWidth::Hour.index_of(df.flow.rec.ts_start);
        *groups.entry((prefix, hour)).or_default().entry(server_port).or_default() += 1;
    }

    let mut out = Vec::new();
    for ((prefix, hour), port_counts) in groups {
        let flow_count: u64 = port_counts.values().sum();
        if flow_count < params.min_flows {
            continue;
        }
        let mut by_freq: Vec<(u16, u64)> = port_counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        by_freq.truncate(params.width);
        let mut ports: Vec<u16> = by_freq.into_iter().map(|(p, _)| p).collect();
        ports.sort_unstable();
        let mut padded = vec![0u16; params.width - ports.len()];
        padded.extend(ports);
        out.push(PortVector {
            prefix,
            hour,
            ports: padded,
            flow_count,
            label: labels.get(&prefix).copied(),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelMetrics {
    pub label: AppLabel,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub train_size: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    pub per_label: Vec<LabelMetrics>,
}

/// Splits the labeled vectors into train/test, fits the tree, and evaluates
/// on the held-out half. Deterministic under the seed.
pub fn train(
    vectors: &[PortVector],
    split: f64,
    seed: u64,
    params: TreeParams,
) -> Result<(DecisionTree, TrainReport)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid("split fraction must be in (0, 1)"));
    }
    let labeled: Vec<&PortVector> = vectors.iter().filter(|v| v.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::invalid("no labeled vectors"));
    }

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((labeled.len() as f64) * split).round() as usize;
    let n_train = n_train.clamp(1, labeled.len() - 1);

    let feat = |i: usize| labeled[i].features();
    let lab = |i: usize| labeled[i].label.unwrap();
    let train_x: Vec<Vec<f64>> = order[..n_train].iter().map(|i| feat(*i)).collect();
    let train_y: Vec<AppLabel> = order[..n_train].iter().map(|i| lab(*i)).collect();
    let tree = DecisionTree::fit(&train_x, &train_y, params, seed)?;

    let test: Vec<usize> = order[n_train..].to_vec();
    let mut correct = 0usize;
    // per label: (true positives, predicted, actual)
    let mut tally: BTreeMap<AppLabel, (usize, usize, usize)> = BTreeMap::new();
    for &i in &test {
        let (pred, _) = tree.predict(&feat(i));
        let actual = lab(i);
        tally.entry(pred).or_default().1 += 1;
        let t = tally.entry(actual).or_default();
        t.2 += 1;
        if pred == actual {
            correct += 1;
            tally.get_mut(&actual).unwrap().0 += 1;
        }
    }
    let per_label = tally
        .into_iter()
        .map(|(label, (tp, pred, actual))| LabelMetrics {
            label,
            precision: if pred > 0 { tp as f64 / pred as f64 } else { 0.0 },
            recall: if actual > 0 { tp as f64 / actual as f64 } else { 0.0 },
            support: actual,
        })
        .collect();
    let report = TrainReport {
        train_size: n_train,
        test_size: test.len(),
        test_accuracy: if test.is_empty() { 1.0 } else { correct as f64 / test.len() as f64 },
        per_label,
    };
    Ok((tree, report))
}

/// Majority vote over one prefix's vectors. Ties break to the higher mean
/// leaf confidence, then to the lexicographically first label.
pub fn label_prefix(tree: &DecisionTree, vectors: &[PortVector]) -> Result<(AppLabel, f64)> {
    if vectors.is_empty() {
        return Err(Error::insufficient("no admitted vectors for prefix"));
    }
    let mut votes: BTreeMap<AppLabel, (usize, f64)> = BTreeMap::new();
    for v in vectors {
        let (label, confidence) = tree.predict(&v.features());
        let e = votes.entry(label).or_default();
        e.0 += 1;
        e.1 += confidence;
    }
    let total = vectors.len();
    let (label, count) = votes
        .iter()
        .map(|(l, (n, conf_sum))| (*l, *n, conf_sum / *n as f64))
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then(a.2.partial_cmp(&b.2).unwrap())
                .then_with(|| b.0.as_str().cmp(a.0.as_str()))
        })
        .map(|(l, n, _)| (l, n))
        .expect("non-empty votes");
    Ok((label, count as f64 / total as f64))
}

/// Finds candidate prefixes: those neither in the ground-truth set nor
/// excluded, with at least one flow using a published application port on
/// one side and a user/dynamic port (> 1023) on the other. The prefix on the
/// published-port side is the candidate.
pub fn find_candidates(
    flows: &[DirectedFlow],
    gt_ports: &GtPorts,
    exclude: &BTreeSet<PrefixId>,
) -> BTreeSet<PrefixId> {
    let mut out = BTreeSet::new();
    for df in flows {
        let r = &df.flow.rec;
        if gt_ports.matches_any_app(r.proto, r.src_port) && r.dst_port > 1023 {
            let p = df.src_prefix();
            if !exclude.contains(&p) {
                out.insert(p);
            }
        }
        if gt_ports.matches_any_app(r.proto, r.dst_port) && r.src_port > 1023 {
            let p = df.dst_prefix();
            if !exclude.contains(&p) {
                out.insert(p);
            }
        }
    }
    out
}

/// Application owners and published business partners; a candidate prefix
/// survives pruning only when its organization matches one of these names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessRelations {
    partners: BTreeMap<AppLabel, Vec<String>>,
}

impl Default for BusinessRelations {
    fn default() -> Self {
        let mut partners = BTreeMap::new();
        let mut add = |app: AppLabel, names: &[&str]| {
            partners.insert(app, names.iter().map(|s| s.to_string()).collect());
        };
        add(AppLabel::Bluejeans, &["AT&T", "CenturyLink", "Level3", "Microsoft"]);
        add(AppLabel::Zoom, &["Amazon", "Cisco", "Zoom"]);
        add(AppLabel::Webex, &["Cisco", "AT&T", "CenturyLink", "Amazon"]);
        add(AppLabel::Gmeet, &["Google"]);
        add(AppLabel::Goto, &["Logmein"]);
        add(AppLabel::Skype, &["Microsoft"]);
        BusinessRelations { partners }
    }
}

impl BusinessRelations {
    pub fn empty() -> Self {
        BusinessRelations { partners: BTreeMap::new() }
    }

    pub fn add_partner(&mut self, app: AppLabel, name: impl Into<String>) {
        self.partners.entry(app).or_default().push(name.into());
    }

    /// Case-insensitive substring match in either direction between the
    /// organization name and any known partner of the application.
    pub fn consistent(&self, app: AppLabel, org_name: &str) -> bool {
        let org = org_name.to_ascii_lowercase();
        self.partners.get(&app).is_some_and(|names| {
            names.iter().any(|n| {
                let n = n.to_ascii_lowercase();
                org.contains(&n) || n.contains(&org)
            })
        })
    }

    /// Parses optional `app,partner` override rows, replacing the defaults
    /// for each application that appears.
    pub fn read(reader: impl Read) -> Result<BusinessRelations> {
        let mut out = BusinessRelations::empty();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("app,") {
                continue;
            }
            let (app, partner) = t.split_once(',').ok_or_else(|| {
                Error::invalid(format!("relations line {}: missing comma", lineno + 1))
            })?;
            out.add_partner(AppLabel::parse(app)?, partner.trim().to_string());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Verified,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground-truth",
            Provenance::Verified => "verified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgEntry {
    pub app: AppLabel,
    pub provenance: Provenance,
    pub vote_fraction: f64,
}

/// The known meeting/gaming server prefixes: ground truth plus verified
/// candidates. Ground-truth entries are never overwritten.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnownMgPrefixes {
    entries: BTreeMap<PrefixId, MgEntry>,
}

impl KnownMgPrefixes {
    pub fn insert(&mut self, prefix: PrefixId, entry: MgEntry) -> bool {
        match self.entries.get(&prefix) {
            Some(existing) if existing.provenance == Provenance::GroundTruth => false,
            _ => {
                self.entries.insert(prefix, entry);
                true
            }
        }
    }

    pub fn get(&self, prefix: PrefixId) -> Option<&MgEntry> {
        self.entries.get(&prefix)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PrefixId, &MgEntry)> {
        self.entries.iter()
    }

    pub fn count_by(&self, provenance: Provenance) -> usize {
        self.entries.values().filter(|e| e.provenance == provenance).count()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "prefix,app,provenance,vote_fraction")?;
        for (p, e) in &self.entries {
            writeln!(w, "{p},{},{},{:.4}", e.app, e.provenance.as_str(), e.vote_fraction)?;
        }
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<KnownMgPrefixes> {
        let mut out = KnownMgPrefixes::default();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with("prefix,") {
                continue;
            }
            let fields: Vec<&str> = t.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!("known prefixes line {}", lineno + 1)));
            }
            let prefix = PrefixId::parse(fields[0])?;
            let app = AppLabel::parse(fields[1])?;
            let provenance = match fields[2] {
                "ground-truth" => Provenance::GroundTruth,
                "verified" => Provenance::Verified,
                other => return Err(Error::invalid(format!("bad provenance {other:?}"))),
            };
            let vote_fraction: f64 = fields[3]
                .parse()
                .map_err(|_| Error::invalid(format!("bad vote fraction {:?}", fields[3])))?;
            out.entries.insert(prefix, MgEntry { app, provenance, vote_fraction });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KnownMgPrefixes> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        Self::read_csv(f)
    }
}

impl MgLookup for KnownMgPrefixes {
    fn app_of(&self, prefix: PrefixId) -> Option<AppLabel> {
        self.entries.get(&prefix).map(|e| e.app)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PipelineStats {
    pub gt_prefixes: usize,
    pub gt_conflicts: usize,
    pub gt_vectors: usize,
    pub candidates: usize,
    pub strong_candidates: usize,
    pub labeled_candidates: usize,
    pub verified: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub known: KnownMgPrefixes,
    pub tree: DecisionTree,
    pub report: TrainReport,
    pub stats: PipelineStats,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineParams {
    pub vector: VectorParams,
    pub tree: TreeParams,
    pub split: f64,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            vector: VectorParams::default(),
            tree: TreeParams::default(),
            split: 0.5,
            seed: 0,
        }
    }
}

/// Runs the whole pipeline:
/// 1. expand published prefixes to /24s and map them into anonymized space;
/// 2-3. build their labeled vectors and train the tree on a random half;
/// 4. discover candidate prefixes through the published ports;
/// 5. build candidate vectors, dropping low-activity hours;
/// 6. label each candidate by majority vote;
/// 7. keep candidates whose ownership matches the label, as verified.
pub fn run_pipeline(
    flows: &[DirectedFlow],
    gt_prefix_rows: &[(AppLabel, Ipv4Addr, u8)],
    gt_ports: &GtPorts,
    dir: &PrefixDirectory,
    relations: &BusinessRelations,
    params: PipelineParams,
) -> Result<PipelineOutput> {
    let mut stats = PipelineStats::default();

    let (gt_real, conflicts) = expand_ground_truth(gt_prefix_rows)?;
    stats.gt_conflicts = conflicts.len();
    let gt_labels: BTreeMap<PrefixId, AppLabel> =
        gt_real.iter().map(|(p, a)| (dir.to_anon(*p), *a)).collect();
    let gt_set: BTreeSet<PrefixId> = gt_labels.keys().copied().collect();
    stats.gt_prefixes = gt_set.len();

    let gt_vectors = extract_vectors(flows, &gt_set, &gt_labels, params.vector);
    stats.gt_vectors = gt_vectors.len();
    let (decision_tree, report) = train(&gt_vectors, params.split, params.seed, params.tree)?;

    let candidates = find_candidates(flows, gt_ports, &gt_set);
    stats.candidates = candidates.len();

    let cand_vectors = extract_vectors(flows, &candidates, &BTreeMap::new(), params.vector);
    let mut by_prefix: BTreeMap<PrefixId, Vec<PortVector>> = BTreeMap::new();
    for v in cand_vectors {
        by_prefix.entry(v.prefix).or_default().push(v);
    }
    stats.strong_candidates = by_prefix.len();

    let mut known = KnownMgPrefixes::default();
    for (p, app) in &gt_labels {
        known.insert(
            *p,
            MgEntry { app: *app, provenance: Provenance::GroundTruth, vote_fraction: 1.0 },
        );
    }

    for (prefix, vectors) in by_prefix {
        let (app, vote) = label_prefix(&decision_tree, &vectors)?;
        stats.labeled_candidates += 1;
        let org = dir.lookup(prefix);
        if relations.consistent(app, &org.name) {
            known.insert(
                prefix,
                MgEntry { app, provenance: Provenance::Verified, vote_fraction: vote },
            );
            stats.verified += 1;
        }
    }

    Ok(PipelineOutput { known, tree: decision_tree, report, stats })
}
