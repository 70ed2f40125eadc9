//! Volume aggregation onto time grids.
//!
//! Two assignment rules are provided: `ByStartTime` credits a flow's full
//! volume to the bin containing its first packet (how nfdump-style tooling
//! attributes flows), `ProportionalByOverlap` splits it across the bins the
//! flow spans, proportional to overlap duration. Splitting uses integer
//! largest-remainder apportionment so totals are conserved exactly in both
//! modes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::flow::UpsampledFlow;
use crate::time::{BinWidth, TimeBin, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinAssign {
    ByStartTime,
    ProportionalByOverlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinVolume {
    pub bytes: u64,
    pub packets: u64,
    pub flow_count: u64,
}

impl BinVolume {
    pub fn add(&mut self, other: BinVolume) {
        self.bytes += other.bytes;
        self.packets += other.packets;
        self.flow_count += other.flow_count;
    }
}

/// Per-bin volume totals on one grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeBins {
    pub width: BinWidth,
    pub assign: BinAssign,
    bins: BTreeMap<i64, BinVolume>,
}

impl VolumeBins {
    pub fn new(width: BinWidth, assign: BinAssign) -> Self {
        VolumeBins { width, assign, bins: BTreeMap::new() }
    }

    pub fn add_flow(&mut self, flow: &UpsampledFlow) {
        match self.assign {
            BinAssign::ByStartTime => {
                let idx = self.width.index_of(flow.rec.ts_start);
                self.slot(idx).add(BinVolume {
                    bytes: flow.bytes,
                    packets: flow.packets,
                    flow_count: 1,
                });
            }
            BinAssign::ProportionalByOverlap => {
                let spans = split_by_overlap(
                    flow.rec.ts_start,
                    flow.rec.ts_end,
                    self.width,
                    &[flow.bytes, flow.packets],
                );
                for (idx, shares) in spans {
                    self.slot(idx).add(BinVolume {
                        bytes: shares[0],
                        packets: shares[1],
                        flow_count: 1,
                    });
                }
            }
        }
    }

    fn slot(&mut self, idx: i64) -> &mut BinVolume {
        self.bins.entry(idx).or_default()
    }

    pub fn get(&self, idx: i64) -> BinVolume {
        self.bins.get(&idx).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TimeBin, BinVolume)> + '_ {
        self.bins.iter().map(move |(idx, v)| (self.width.bin(*idx), *v))
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> BinVolume {
        let mut t = BinVolume::default();
        for v in self.bins.values() {
            t.add(*v);
        }
        t
    }

    /// Field-wise addition of another partition's bins. Commutative and
    /// associative, so partitioned ingestion can merge in any order.
    pub fn merge(&mut self, other: &VolumeBins) {
        assert_eq!(self.width, other.width, "cannot merge bins of different widths");
        assert_eq!(self.assign, other.assign, "cannot merge bins of different assignment modes");
        for (idx, v) in &other.bins {
            self.slot(*idx).add(*v);
        }
    }
}

/// Aggregates flows onto the grid.
pub fn bin_volume(
    flows: impl IntoIterator<Item = UpsampledFlow>,
    width: BinWidth,
    assign: BinAssign,
) -> VolumeBins {
    let mut bins = VolumeBins::new(width, assign);
    for f in flows {
        bins.add_flow(&f);
    }
    bins
}

/// Splits integer quantities across the bins a `[start, end]` span overlaps,
/// proportional to overlap duration, conserving each total exactly via
/// largest-remainder rounding. A zero-duration span lands in its start bin.
fn split_by_overlap(
    start: Timestamp,
    end: Timestamp,
    width: BinWidth,
    quantities: &[u64; 2],
) -> Vec<(i64, [u64; 2])> {
    let w = width.millis();
    let first = start.0.div_euclid(w);
    let last = end.0.div_euclid(w);
    let duration = end.0 - start.0;
    if duration <= 0 || first == last {
        return vec![(first, *quantities)];
    }

    // Overlap of the span with each bin, in milliseconds.
    let mut overlaps: Vec<(i64, i64)> = Vec::with_capacity((last - first + 1) as usize);
    for idx in first..=last {
        let bin_start = idx * w;
        let bin_end = bin_start + w;
        let o = end.0.min(bin_end) - start.0.max(bin_start);
        if o > 0 {
            overlaps.push((idx, o));
        }
    }

    let mut out: Vec<(i64, [u64; 2])> = overlaps.iter().map(|(idx, _)| (*idx, [0, 0])).collect();
    for (qi, &q) in quantities.iter().enumerate() {
        // floor share per bin, then distribute the remainder by descending
        // fractional part (ties to earlier bins)
        let mut rems: Vec<(u128, usize)> = Vec::with_capacity(overlaps.len());
        let mut assigned: u64 = 0;
        for (pos, (_, o)) in overlaps.iter().enumerate() {
            let num = q as u128 * *o as u128;
            let share = (num / duration as u128) as u64;
            out[pos].1[qi] = share;
            assigned += share;
            rems.push((num % duration as u128, pos));
        }
        let mut leftover = q - assigned;
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, pos) in rems {
            if leftover == 0 {
                break;
            }
            out[pos].1[qi] += 1;
            leftover -= 1;
        }
    }
    out
}
