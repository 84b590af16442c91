//! Flat simulated memory.
//!
//! Allocations are bump-allocated, 64-byte aligned at their payload, and
//! separated by unmapped guard gaps so that overruns fault instead of
//! silently hitting a neighbour. Address 0 is never mapped.

use crate::dfl::SiteId;
use crate::ir::GlobalDef;

pub const GLOBAL_BASE: u64 = 0x10000;
pub const GUARD: u64 = 4096;
pub const ALIGN: u64 = 64;
/// Function "addresses" live below any data and are never dereferenceable.
pub const FUNC_BASE: u64 = 0x1000;
pub const FUNC_STRIDE: u64 = 16;
/// Size field in front of every non-interposed heap chunk.
pub const HEAP_PREFIX: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    Global,
    Stack,
    Heap,
}

#[derive(Clone, Debug)]
pub struct Region {
    /// First mapped byte, header included.
    pub base: u64,
    /// Program-visible address.
    pub data: u64,
    pub size: u64,
    pub bytes: Vec<u8>,
    /// Byte-level taint of the payload (empty unless tainting).
    pub shadow: Vec<bool>,
    pub live: bool,
    pub kind: RegionKind,
    pub site: SiteId,
    /// Carries an in-band object header.
    pub dfl: bool,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.data + self.size
    }

    pub fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.data && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }

    pub fn contains_raw(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }
}

#[derive(Clone, Debug)]
pub struct Memory {
    pub regions: Vec<Region>,
    bump: u64,
    taint: bool,
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

impl Memory {
    pub fn new(taint: bool) -> Self {
        Memory { regions: Vec::new(), bump: GLOBAL_BASE, taint }
    }

    /// Maps every global in declaration order, applying initializers.
    pub fn with_globals(globals: &[GlobalDef], taint: bool) -> Self {
        let mut m = Memory::new(taint);
        for g in globals {
            let ri = m.alloc(RegionKind::Global, SiteId::Global(g.name.clone()), g.ty.size(), 0, false);
            if let Some(init) = &g.init {
                let r = &mut m.regions[ri];
                let n = init.len().min(r.size as usize);
                r.bytes[..n].copy_from_slice(&init[..n]);
            }
        }
        m
    }

    /// Allocates `size` payload bytes preceded by `header` bytes. Returns the region index.
    pub fn alloc(&mut self, kind: RegionKind, site: SiteId, size: u64, header: u64, dfl: bool) -> usize {
        let size = size.max(1);
        let data = align_up(self.bump + header, ALIGN);
        let base = data - header;
        self.bump = data + size + GUARD;
        let total = (header + size) as usize;
        self.regions.push(Region {
            base,
            data,
            size,
            bytes: vec![0; total],
            shadow: if self.taint { vec![false; size as usize] } else { Vec::new() },
            live: true,
            kind,
            site,
            dfl,
        });
        self.regions.len() - 1
    }

    fn lookup(&self, addr: u64) -> Option<usize> {
        let i = self.regions.partition_point(|r| r.base <= addr);
        i.checked_sub(1)
    }

    /// Live region whose payload holds `[addr, addr+len)`.
    pub fn find(&self, addr: u64, len: u64) -> Option<usize> {
        let i = self.lookup(addr)?;
        let r = &self.regions[i];
        (r.live && r.contains(addr, len)).then_some(i)
    }

    /// Like [`Memory::find`] but the object header is addressable too.
    pub fn find_raw(&self, addr: u64, len: u64) -> Option<usize> {
        let i = self.lookup(addr)?;
        let r = &self.regions[i];
        (r.live && r.contains_raw(addr, len)).then_some(i)
    }

    /// Region (live or not) whose mapped range contains `addr`.
    pub fn region_at(&self, addr: u64) -> Option<usize> {
        let i = self.lookup(addr)?;
        (addr < self.regions[i].end()).then_some(i)
    }

    pub fn read_bytes(&self, ri: usize, addr: u64, len: u64) -> &[u8] {
        let r = &self.regions[ri];
        let o = (addr - r.base) as usize;
        &r.bytes[o..o + len as usize]
    }

    pub fn read(&self, ri: usize, addr: u64, len: u64) -> u64 {
        let mut v = 0u64;
        for (i, b) in self.read_bytes(ri, addr, len).iter().enumerate().take(8) {
            v |= (*b as u64) << (8 * i);
        }
        v
    }

    pub fn write(&mut self, ri: usize, addr: u64, len: u64, v: u64) {
        let r = &mut self.regions[ri];
        let o = (addr - r.base) as usize;
        for i in 0..len as usize {
            r.bytes[o + i] = if i < 8 { (v >> (8 * i)) as u8 } else { 0 };
        }
    }

    pub fn shadow(&self, ri: usize, addr: u64, len: u64) -> bool {
        let r = &self.regions[ri];
        if r.shadow.is_empty() || addr < r.data {
            return false;
        }
        let o = (addr - r.data) as usize;
        r.shadow[o..o + len as usize].iter().any(|&t| t)
    }

    pub fn set_shadow(&mut self, ri: usize, addr: u64, len: u64, t: bool) {
        let r = &mut self.regions[ri];
        if r.shadow.is_empty() || addr < r.data {
            return;
        }
        let o = (addr - r.data) as usize;
        r.shadow[o..o + len as usize].iter_mut().for_each(|s| *s = t);
    }

    pub fn global_region(&self, name: &str) -> Option<usize> {
        self.regions
            .iter()
            .position(|r| r.kind == RegionKind::Global && matches!(&r.site, SiteId::Global(g) if g == name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocations_are_aligned_and_guarded() {
        let mut m = Memory::new(false);
        let a = m.alloc(RegionKind::Heap, SiteId::Global("a".into()), 10, HEAP_PREFIX, false);
        let b = m.alloc(RegionKind::Heap, SiteId::Global("b".into()), 10, 32, true);
        let (ra, rb) = (&m.regions[a], &m.regions[b]);
        assert_eq!(ra.data % ALIGN, 0);
        assert_eq!(rb.data % ALIGN, 0);
        assert_eq!(ra.data - ra.base, HEAP_PREFIX);
        assert!(rb.base >= ra.end() + GUARD);
        assert_eq!(m.find(ra.end(), 1), None);
        assert_eq!(m.find(ra.data - 8, 8), None);
        assert_eq!(m.find_raw(ra.data - 8, 8), Some(a));
        assert_eq!(m.find(0, 1), None);
    }

    #[test]
    fn little_endian_roundtrip() {
        let mut m = Memory::new(false);
        let r = m.alloc(RegionKind::Stack, SiteId::Global("x".into()), 8, 0, false);
        let d = m.regions[r].data;
        m.write(r, d, 4, 0xAABBCCDD);
        assert_eq!(m.read(r, d, 1), 0xDD);
        assert_eq!(m.read(r, d, 8), 0xAABBCCDD);
    }
}
