//! Process address spaces and page-granular translation.
//!
//! Models just enough of a kernel's memory management for the attacks to be
//! expressed faithfully: shared read-only mappings resolve to the same
//! physical frames in every process, private mappings never share frames, and
//! a pagemap query gives attackers the virtual-to-physical oracle they need to
//! compute cache-set congruence. Restricting the pagemap (the mitigation
//! toggle) turns that oracle off per process.
//!
//! Frames come from a free list shuffled by the experiment seed, so placements
//! vary across simulated process restarts yet replay exactly under the same
//! seed.

use std::collections::BTreeMap;
use std::fmt;

use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysicalAddress(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualAddress(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u32);

/// Per-process virtual address spaces are capped here; plenty for any scenario.
const ADDRESS_SPACE_SIZE: u64 = 1 << 47;
/// First virtual address handed out to a mapping.
const VA_BASE: u64 = 0x1000_0000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backing {
    Shared { object: String, offset: u64 },
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingDescriptor {
    pub virtual_base: VirtualAddress,
    /// Mapping length in bytes, always a page multiple.
    pub length: u64,
    pub backing: Backing,
    /// Physical frame number per mapped page.
    pub physical_pages: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct ProcessSpace {
    pub id: ProcessId,
    pub pagemap_restricted: bool,
    mappings: Vec<MappingDescriptor>,
    va_cursor: u64,
}

impl ProcessSpace {
    pub fn mappings(&self) -> &[MappingDescriptor] {
        &self.mappings
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemError {
    OutOfMemory,
    Unmapped(VirtualAddress),
    PagemapDenied,
    AddressSpaceExhausted,
    UnknownProcess(ProcessId),
}

impl fmt::Display for MemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemError::OutOfMemory => write!(f, "out of physical memory"),
            MemError::Unmapped(va) => write!(f, "fault: unmapped address {:#x}", va.0),
            MemError::PagemapDenied => write!(f, "pagemap access denied"),
            MemError::AddressSpaceExhausted => write!(f, "virtual address space exhausted"),
            MemError::UnknownProcess(pid) => write!(f, "unknown process {}", pid.0),
        }
    }
}

impl std::error::Error for MemError {}

/// Physical memory plus every process mapped on top of it.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    page_size: u64,
    phys_size: u64,
    free_frames: Vec<u64>,
    shared_objects: BTreeMap<String, Vec<u64>>,
    processes: Vec<ProcessSpace>,
}

impl MemorySystem {
    /// `reserved_top` bytes at the top of physical memory are withheld from
    /// the allocator; scenarios use that region for carved-out memory such as
    /// secure-world data.
    pub fn with_reserved(phys_size: u64, page_size: u64, reserved_top: u64, seed: u64) -> Self {
        assert!(page_size.is_power_of_two());
        assert_eq!(phys_size % page_size, 0, "physical size must be page-aligned");
        assert_eq!(reserved_top % page_size, 0);
        let usable_frames = (phys_size - reserved_top) / page_size;
        let mut free_frames: Vec<u64> = (0..usable_frames).collect();
        let mut rng = SimRng::new(seed);
        rng.shuffle(&mut free_frames);
        MemorySystem {
            page_size,
            phys_size,
            free_frames,
            shared_objects: BTreeMap::new(),
            processes: Vec::new(),
        }
    }

    pub fn new(phys_size: u64, page_size: u64, seed: u64) -> Self {
        Self::with_reserved(phys_size, page_size, 0, seed)
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn phys_size(&self) -> u64 {
        self.phys_size
    }

    pub fn create_process(&mut self) -> ProcessId {
        let id = ProcessId(self.processes.len() as u32);
        self.processes.push(ProcessSpace {
            id,
            pagemap_restricted: false,
            mappings: Vec::new(),
            va_cursor: VA_BASE,
        });
        id
    }

    pub fn process(&self, pid: ProcessId) -> &ProcessSpace {
        &self.processes[pid.0 as usize]
    }

    pub fn set_pagemap_restricted(&mut self, pid: ProcessId, restricted: bool) {
        self.processes[pid.0 as usize].pagemap_restricted = restricted;
    }

    fn alloc_frames(&mut self, count: usize) -> Result<Vec<u64>, MemError> {
        if self.free_frames.len() < count {
            return Err(MemError::OutOfMemory);
        }
        Ok((0..count).map(|_| self.free_frames.pop().unwrap()).collect())
    }

    fn round_pages(&self, length: u64) -> u64 {
        assert!(length > 0, "mapping length must be positive");
        length.div_ceil(self.page_size)
    }

    fn install(
        &mut self,
        pid: ProcessId,
        backing: Backing,
        frames: Vec<u64>,
    ) -> Result<MappingDescriptor, MemError> {
        let length = frames.len() as u64 * self.page_size;
        let proc = &mut self.processes[pid.0 as usize];
        if proc.va_cursor + length > ADDRESS_SPACE_SIZE {
            return Err(MemError::AddressSpaceExhausted);
        }
        let desc = MappingDescriptor {
            virtual_base: VirtualAddress(proc.va_cursor),
            length,
            backing,
            physical_pages: frames,
        };
        proc.va_cursor += length;
        proc.mappings.push(desc.clone());
        Ok(desc)
    }

    /// Maps a shared object read-only. Every process mapping the same object
    /// sees the same physical frames; the first mapper allocates them.
    pub fn map_shared(
        &mut self,
        pid: ProcessId,
        object: &str,
        length: u64,
    ) -> Result<MappingDescriptor, MemError> {
        let pages = self.round_pages(length) as usize;
        let existing = self.shared_objects.get(object).map(|f| f.len()).unwrap_or(0);
        if pages > existing {
            let extra = self.alloc_frames(pages - existing)?;
            self.shared_objects
                .entry(object.to_string())
                .or_default()
                .extend(extra);
        }
        let frames = self.shared_objects[object][..pages].to_vec();
        self.install(
            pid,
            Backing::Shared {
                object: object.to_string(),
                offset: 0,
            },
            frames,
        )
    }

    pub fn map_private(
        &mut self,
        pid: ProcessId,
        length: u64,
    ) -> Result<MappingDescriptor, MemError> {
        let pages = self.round_pages(length) as usize;
        let frames = self.alloc_frames(pages)?;
        self.install(pid, Backing::Private, frames)
    }

    /// Pure page-table walk. Repeated calls always agree.
    pub fn translate(&self, pid: ProcessId, vaddr: VirtualAddress) -> Result<PhysicalAddress, MemError> {
        let proc = self
            .processes
            .get(pid.0 as usize)
            .ok_or(MemError::UnknownProcess(pid))?;
        for m in &proc.mappings {
            if vaddr.0 >= m.virtual_base.0 && vaddr.0 < m.virtual_base.0 + m.length {
                let offset = vaddr.0 - m.virtual_base.0;
                let frame = m.physical_pages[(offset / self.page_size) as usize];
                return Ok(PhysicalAddress(frame * self.page_size + offset % self.page_size));
            }
        }
        Err(MemError::Unmapped(vaddr))
    }

    /// The attacker-visible physical-address oracle. Identical to
    /// [`translate`](Self::translate) unless the process has the pagemap
    /// restriction applied, in which case it is denied outright.
    pub fn pagemap_query(
        &self,
        pid: ProcessId,
        vaddr: VirtualAddress,
    ) -> Result<PhysicalAddress, MemError> {
        let proc = self
            .processes
            .get(pid.0 as usize)
            .ok_or(MemError::UnknownProcess(pid))?;
        if proc.pagemap_restricted {
            return Err(MemError::PagemapDenied);
        }
        self.translate(pid, vaddr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(seed: u64) -> MemorySystem {
        MemorySystem::new(64 << 20, 4096, seed)
    }

    #[test]
    fn shared_mappings_resolve_to_identical_frames() {
        let mut mem = sys(1);
        let a = mem.create_process();
        let b = mem.create_process();
        let ma = mem.map_shared(a, "libinput", 3 * 4096).unwrap();
        let mb = mem.map_shared(b, "libinput", 3 * 4096).unwrap();
        assert_eq!(ma.physical_pages, mb.physical_pages);
    }

    #[test]
    fn private_frames_are_disjoint_from_shared_ones() {
        let mut mem = sys(2);
        let a = mem.create_process();
        let shared = mem.map_shared(a, "libx", 4 * 4096).unwrap();
        let private = mem.map_private(a, 4 * 4096).unwrap();
        for frame in &private.physical_pages {
            assert!(!shared.physical_pages.contains(frame));
        }
    }

    #[test]
    fn lengths_round_up_to_page_multiples() {
        let mut mem = sys(3);
        let p = mem.create_process();
        let m = mem.map_shared(p, "obj", 100).unwrap();
        assert_eq!(m.length, 4096);
    }

    #[test]
    fn translate_walks_pages() {
        let mut mem = sys(4);
        let p = mem.create_process();
        let m = mem.map_private(p, 2 * 4096).unwrap();
        let base = mem.translate(p, m.virtual_base).unwrap();
        assert_eq!(base.0, m.physical_pages[0] * 4096);
        let second = mem
            .translate(p, VirtualAddress(m.virtual_base.0 + 4096 + 4))
            .unwrap();
        assert_eq!(second.0, m.physical_pages[1] * 4096 + 4);
        assert_eq!(
            mem.translate(p, VirtualAddress(0xdead_0000)),
            Err(MemError::Unmapped(VirtualAddress(0xdead_0000)))
        );
    }

    #[test]
    fn pagemap_honours_the_restriction_flag() {
        let mut mem = sys(5);
        let p = mem.create_process();
        let m = mem.map_private(p, 4096).unwrap();
        assert!(mem.pagemap_query(p, m.virtual_base).is_ok());
        mem.set_pagemap_restricted(p, true);
        assert_eq!(
            mem.pagemap_query(p, m.virtual_base),
            Err(MemError::PagemapDenied)
        );
        // The kernel-side walk is unaffected.
        assert!(mem.translate(p, m.virtual_base).is_ok());
    }

    #[test]
    fn shared_translation_agrees_across_processes() {
        let mut mem = sys(6);
        let a = mem.create_process();
        let b = mem.create_process();
        let ma = mem.map_shared(a, "libc", 8 * 4096).unwrap();
        let mb = mem.map_shared(b, "libc", 8 * 4096).unwrap();
        let mut rng = SimRng::new(99);
        for _ in 0..200 {
            let off = rng.below(8 * 4096);
            let pa = mem.translate(a, VirtualAddress(ma.virtual_base.0 + off)).unwrap();
            let pb = mem.translate(b, VirtualAddress(mb.virtual_base.0 + off)).unwrap();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn frame_assignment_is_seed_deterministic() {
        let script = |mem: &mut MemorySystem| {
            let a = mem.create_process();
            let b = mem.create_process();
            let mut frames = mem.map_shared(a, "liba", 2 * 4096).unwrap().physical_pages;
            frames.extend(mem.map_private(b, 3 * 4096).unwrap().physical_pages);
            frames.extend(mem.map_shared(b, "libb", 4096).unwrap().physical_pages);
            frames
        };
        let mut m1 = sys(77);
        let mut m2 = sys(77);
        assert_eq!(script(&mut m1), script(&mut m2));
        let mut m3 = sys(78);
        assert_ne!(script(&mut m1), script(&mut m3));
    }

    #[test]
    fn allocation_fails_when_memory_is_exhausted() {
        let mut mem = MemorySystem::new(4 * 4096, 4096, 9);
        let p = mem.create_process();
        assert!(mem.map_private(p, 4 * 4096).is_ok());
        assert_eq!(mem.map_private(p, 4096), Err(MemError::OutOfMemory));
    }

    #[test]
    fn reserved_top_region_is_never_allocated() {
        let mut mem = MemorySystem::with_reserved(16 * 4096, 4096, 4 * 4096, 10);
        let p = mem.create_process();
        let m = mem.map_private(p, 12 * 4096).unwrap();
        for frame in &m.physical_pages {
            assert!(*frame < 12, "frame {frame} intrudes on the reserved region");
        }
        assert_eq!(mem.map_private(p, 4096), Err(MemError::OutOfMemory));
    }
}
