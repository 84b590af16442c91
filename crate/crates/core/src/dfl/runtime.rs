//! Run-time semantics of `ct.load` / `ct.store`: oblivious striding over
//! the live instances of every allocation site listed in the metadata.

use std::collections::BTreeMap;

use super::{DflAccessMetadata, SiteId};
use crate::interp::memory::Memory;
use crate::interp::trace::{AccessKind, MemEvent};
use crate::interp::Abort;
use crate::ir::InstId;

/// Live instances of each interposed allocation site, oldest first.
#[derive(Clone, Debug, Default)]
pub struct SiteLists {
    pub lists: BTreeMap<SiteId, Vec<usize>>,
}

impl SiteLists {
    pub fn instances(&self, site: &SiteId, mem: &Memory) -> Vec<usize> {
        match site {
            SiteId::Global(g) => mem.global_region(g).into_iter().collect(),
            _ => self.lists.get(site).cloned().unwrap_or_default(),
        }
    }

    pub fn len(&self, site: &SiteId) -> usize {
        self.lists.get(site).map_or(0, |l| l.len())
    }
}

pub enum StrideOp {
    Load,
    /// Value to store; `drop_value` writes the old contents back even on a match.
    Store { value: u64, drop_value: bool },
}

#[derive(Debug, Default)]
pub struct StrideOutcome {
    pub value: u64,
    /// Region and address of the real target, when matched.
    pub matched: Option<(usize, u64)>,
    pub touches: u64,
    pub cost: f64,
}

fn clamp(x: u64, lo: u64, hi: u64) -> u64 {
    x.max(lo).min(hi.max(lo))
}

/// Strides `meta` for an access of `size` bytes at `p` (0 = bottom).
#[allow(clippy::too_many_arguments)]
pub fn stride(
    mem: &mut Memory,
    lists: &SiteLists,
    events: &mut Vec<MemEvent>,
    inst: InstId,
    meta: &DflAccessMetadata,
    size: u64,
    p: u64,
    p_raw: u64,
    op: StrideOp,
) -> Result<StrideOutcome, Abort> {
    let lambda = meta.lambda.max(1);
    let mut out = StrideOutcome::default();
    let mut matches = 0u32;
    let touch = |mem: &mut Memory, events: &mut Vec<MemEvent>, ri: usize, start: u64, end: u64, curr: u64, matched: bool, out: &mut StrideOutcome| {
        let ev = clamp(curr, start, end - 1);
        let vaddr = if matched { curr } else { clamp(curr, start, end.saturating_sub(size)) };
        let in_bounds = mem.regions[ri].contains(vaddr, size);
        events.push(MemEvent { kind: AccessKind::Read, addr: ev, inst });
        let old = if in_bounds { mem.read(ri, vaddr, size) } else { 0 };
        match op {
            StrideOp::Load => {
                if matched {
                    out.value = old;
                }
            }
            StrideOp::Store { value, drop_value } => {
                let new = if matched && !drop_value { value } else { old };
                if in_bounds {
                    mem.write(ri, vaddr, size, new);
                }
                events.push(MemEvent { kind: AccessKind::Write, addr: ev, inst });
            }
        }
        out.touches += 1;
    };

    if meta.natural {
        // The enclosing loop visits one block per iteration; touch only that one.
        let e = &meta.entries[0];
        let Some(&ri) = lists.instances(&e.site, mem).last() else {
            return Err(Abort::DflMiss { inst, addr: p });
        };
        let start = mem.regions[ri].data + e.offset;
        let end = start + e.len;
        let n = DflAccessMetadata::blocks_of(start, e.len, lambda) as i128;
        let j = ((p_raw / lambda) as i128 - (start / lambda) as i128).rem_euclid(n);
        let curr = ((start / lambda) as i128 + j) as u64 * lambda + p_raw % lambda;
        let matched = p != 0 && curr == p;
        if p != 0 && !matched {
            return Err(Abort::DflMiss { inst, addr: p });
        }
        touch(mem, events, ri, start, end, curr, matched, &mut out);
        if matched {
            out.matched = Some((ri, p));
        }
        out.cost = e.handler.cost(out.touches);
        return Ok(out);
    }

    for e in &meta.entries {
        let before = out.touches;
        for ri in lists.instances(&e.site, mem) {
            let start = mem.regions[ri].data + e.offset;
            let end = start + e.len;
            if e.len == 0 {
                continue;
            }
            for b in start / lambda..=(end - 1) / lambda {
                let curr = b * lambda + p % lambda;
                let matched = p != 0 && curr == p;
                if matched {
                    matches += 1;
                    if matches > 1 {
                        return Err(Abort::MatchTwice { inst });
                    }
                    out.matched = Some((ri, p));
                }
                touch(mem, events, ri, start, end, curr, matched, &mut out);
            }
        }
        out.cost += e.handler.cost(out.touches - before);
    }
    if p != 0 && matches == 0 {
        return Err(Abort::DflMiss { inst, addr: p });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfl::{DflEntry, HandlerKind};
    use crate::interp::memory::RegionKind;

    fn setup(n_portions: u64, len: u64) -> (Memory, Vec<usize>, DflAccessMetadata) {
        let mut mem = Memory::new(false);
        let mut regions = Vec::new();
        let mut entries = Vec::new();
        for i in 0..n_portions {
            let name = format!("g{i}");
            regions.push(mem.alloc(RegionKind::Global, SiteId::Global(name.clone()), len, 0, false));
            entries.push(DflEntry { site: SiteId::Global(name), offset: 0, len, stride: 1, handler: HandlerKind::Simple });
        }
        (mem, regions, DflAccessMetadata { lambda: 64, natural: false, entries })
    }

    #[test]
    fn bottom_touches_every_block_and_returns_default() {
        let (mut mem, _, meta) = setup(3, 128);
        let mut ev = Vec::new();
        let out = stride(&mut mem, &SiteLists::default(), &mut ev, InstId(0), &meta, 8, 0, 0, StrideOp::Load).unwrap();
        assert_eq!(out.touches, 6);
        assert_eq!(out.value, 0);
        assert_eq!(ev.len(), 6);
    }

    #[test]
    fn single_block_load_hits_target() {
        let (mut mem, r, meta) = setup(1, 64);
        let d = mem.regions[r[0]].data;
        mem.write(r[0], d + 16, 8, 0xfeed);
        let mut ev = Vec::new();
        let out = stride(&mut mem, &SiteLists::default(), &mut ev, InstId(0), &meta, 8, d + 16, 0, StrideOp::Load).unwrap();
        assert_eq!((out.touches, out.value), (1, 0xfeed));
    }

    #[test]
    fn store_changes_only_target() {
        let (mut mem, r, meta) = setup(2, 128);
        let before: Vec<Vec<u8>> = mem.regions.iter().map(|x| x.bytes.clone()).collect();
        let target = mem.regions[r[1]].data + 72;
        let mut ev = Vec::new();
        stride(&mut mem, &SiteLists::default(), &mut ev, InstId(0), &meta, 1, target, 0, StrideOp::Store { value: 9, drop_value: false }).unwrap();
        assert_eq!(ev.len(), 8);
        let mut diffs = 0;
        for (x, y) in before.iter().zip(&mem.regions) {
            diffs += x.iter().zip(&y.bytes).filter(|(a, b)| a != b).count();
        }
        assert_eq!(diffs, 1);
        assert_eq!(mem.read(r[1], target, 1), 9);
    }

    #[test]
    fn outside_pointer_is_a_miss() {
        let (mut mem, _, meta) = setup(1, 64);
        let mut ev = Vec::new();
        let err = stride(&mut mem, &SiteLists::default(), &mut ev, InstId(3), &meta, 8, 0x9999_0000, 0, StrideOp::Load).unwrap_err();
        assert_eq!(err.code(), Abort::DflMiss { inst: InstId(3), addr: 0 }.code());
    }
}
