//! Per-node memory manager: process address spaces with demand paging,
//! copy-on-write, pinning under a lock limit, huge-page style invalidation and
//! a per-buffer cost model for the user-visible memory calls.
//!
//! Every region operation works on whole 4 KiB pages and rounds its byte range
//! outward. Operations return the simulated time they cost the caller in
//! nanoseconds; the caller decides how that time is spent.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use thiserror::Error;

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u64 = 1 << PAGE_SHIFT;
pub const DEFAULT_VA_WIDTH: u32 = 39;
pub const DEFAULT_PIN_LIMIT: u64 = 64 * 1024;
pub const DEFAULT_THP_RANGE_PAGES: u64 = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtAddr(pub u64);

impl VirtAddr {
    pub fn page_num(self) -> u64 {
        self.0 >> PAGE_SHIFT
    }

    pub fn page_offset(self) -> u64 {
        self.0 & (PAGE_SIZE - 1)
    }

    pub fn from_page(page: u64) -> Self {
        VirtAddr(page << PAGE_SHIFT)
    }

    pub fn add(self, bytes: u64) -> Self {
        VirtAddr(self.0 + bytes)
    }

    pub fn fits(self, width: u32) -> bool {
        width >= 64 || self.0 < (1u64 << width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub u64);

impl FrameId {
    pub fn base(self) -> u64 {
        self.0 << PAGE_SHIFT
    }
}

/// Monotone frame allocator; frames are never exhausted.
#[derive(Clone, Debug, Default)]
pub struct FrameAllocator {
    next: u64,
}

impl FrameAllocator {
    pub fn alloc(&mut self) -> FrameId {
        self.next += 1;
        FrameId(self.next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageState {
    Unmapped,
    NotPresent,
    Present { frame: FrameId },
    PresentReadOnly { frame: FrameId, cow_origin: FrameId },
}

impl PageState {
    pub fn frame(&self) -> Option<FrameId> {
        match *self {
            PageState::Present { frame } | PageState::PresentReadOnly { frame, .. } => Some(frame),
            _ => None,
        }
    }

    pub fn is_present(&self) -> bool {
        self.frame().is_some()
    }
}

/// How the pages of a fresh region start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitialState {
    /// Demand-paged: nothing is resident until first touch.
    #[default]
    NotPresent,
    /// Pre-touched.
    Present,
    /// Resident but shared copy-on-write; the first write breaks the share.
    PresentReadOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultInjectorConfig {
    pub initial_state: InitialState,
    /// Regions whose non-resident pages must be read back from storage.
    pub disk_backed: bool,
    pub thp_period_ns: Option<u64>,
    pub thp_range_pages: u64,
}

impl Default for FaultInjectorConfig {
    fn default() -> Self {
        FaultInjectorConfig {
            initial_state: InitialState::NotPresent,
            disk_backed: false,
            thp_period_ns: None,
            thp_range_pages: DEFAULT_THP_RANGE_PAGES,
        }
    }
}

impl FaultInjectorConfig {
    pub fn validate(&self) -> Result<(), MemError> {
        if !self.thp_range_pages.is_power_of_two() {
            return Err(MemError::BadThpRange(self.thp_range_pages));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Page {
    state: PageState,
    pinned: bool,
    disk_backed: bool,
    // Contents survive loss of residency: a non-present page is read back
    // unchanged. `None` is the zero page.
    data: Option<Box<[u8]>>,
}

/// Which buffer operation a cost lookup refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemOp {
    Mmap,
    Munmap,
    Pin,
    Unpin,
    Touch,
}

impl MemOp {
    pub const ALL: [MemOp; 5] = [MemOp::Mmap, MemOp::Munmap, MemOp::Pin, MemOp::Unpin, MemOp::Touch];

    pub fn name(self) -> &'static str {
        match self {
            MemOp::Mmap => "mmap",
            MemOp::Munmap => "munmap",
            MemOp::Pin => "pin",
            MemOp::Unpin => "unpin",
            MemOp::Touch => "touch",
        }
    }
}

pub const COST_SIZES: [u64; 8] = [16, 64, 256, 1024, 4096, 16384, 32768, 65536];

/// Per-buffer overheads in microseconds, one column per entry of
/// [`COST_SIZES`], plus scalar paging costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub mmap_us: [u64; 8],
    pub munmap_us: [u64; 8],
    pub pin_us: [u64; 8],
    pub unpin_us: [u64; 8],
    pub touch_us: [u64; 8],
    pub minor_fault_ns: u64,
    pub major_fault_io_ns: u64,
    pub gup_per_page_ns: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            mmap_us: [2, 2, 2, 2, 2, 2, 2, 2],
            munmap_us: [6, 6, 6, 6, 7, 10, 12, 19],
            pin_us: [6, 6, 6, 6, 6, 15, 27, 49],
            unpin_us: [2, 2, 2, 2, 2, 5, 8, 14],
            touch_us: [3, 3, 3, 3, 3, 10, 19, 40],
            minor_fault_ns: 2_500,
            major_fault_io_ns: 100_000,
            gup_per_page_ns: 600,
        }
    }
}

impl CostModel {
    pub fn row(&self, op: MemOp) -> &[u64; 8] {
        match op {
            MemOp::Mmap => &self.mmap_us,
            MemOp::Munmap => &self.munmap_us,
            MemOp::Pin => &self.pin_us,
            MemOp::Unpin => &self.unpin_us,
            MemOp::Touch => &self.touch_us,
        }
    }

    pub fn row_mut(&mut self, op: MemOp) -> &mut [u64; 8] {
        match op {
            MemOp::Mmap => &mut self.mmap_us,
            MemOp::Munmap => &mut self.munmap_us,
            MemOp::Pin => &mut self.pin_us,
            MemOp::Unpin => &mut self.unpin_us,
            MemOp::Touch => &mut self.touch_us,
        }
    }

    /// Cost of `op` on a buffer of `len` bytes. Sizes between buckets use the
    /// next larger bucket; sizes past the largest scale it per 64 KiB.
    pub fn cost_ns(&self, op: MemOp, len: u64) -> u64 {
        let row = self.row(op);
        match COST_SIZES.iter().position(|&s| len <= s) {
            Some(i) => row[i] * 1_000,
            None => {
                let last = *COST_SIZES.last().unwrap();
                row[7] * 1_000 * len.div_ceil(last)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("region overlaps mapped page {page:#x}")]
    Overlap { page: u64 },
    #[error("page {page:#x} is not mapped")]
    NotMapped { page: u64 },
    #[error("page {page:#x} is not pinned")]
    NotPinned { page: u64 },
    #[error("pinning {requested} more bytes exceeds lock limit {limit} ({pinned} already pinned)")]
    PinLimitExceeded { requested: u64, pinned: u64, limit: u64 },
    #[error("segmentation fault at {0:#x}")]
    SegFault(u64),
    #[error("address {0:#x} exceeds the configured VA width")]
    AddressOutOfRange(u64),
    #[error("huge-page range {0} is not a power of two")]
    BadThpRange(u64),
    #[error("address space ({pdid}, {proc_idx}) does not exist")]
    NoSuchSpace { pdid: u16, proc_idx: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TouchOutcome {
    AlreadyPresent,
    MinorFault,
    MajorFault,
    CowCopied,
}

impl TouchOutcome {
    pub fn paged_in(self) -> bool {
        !matches!(self, TouchOutcome::AlreadyPresent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    NotPresent,
    Unmapped,
    WriteToReadOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Present { pa: u64, writable: bool },
    Fault { kind: FaultKind },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GupOutcome {
    /// Leading mapped pages now resident (0 when the first page is unmapped).
    pub count: u64,
    /// How many of those were not resident before the call.
    pub faulted_in: u64,
    pub cost_ns: u64,
}

/// Half-open range of page numbers whose translations must be dropped.
pub type PageRange = Range<u64>;

fn page_span(va: VirtAddr, len: u64) -> PageRange {
    let first = va.page_num();
    let last = (va.0 + len.max(1) - 1) >> PAGE_SHIFT;
    first..last + 1
}

/// One process's view of memory, bound to a protection domain.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    pdid: u16,
    proc_idx: u8,
    va_width: u32,
    pin_limit: u64,
    pinned_bytes: u64,
    pages: BTreeMap<u64, Page>,
    invalidations: Vec<PageRange>,
}

impl AddressSpace {
    pub fn new(pdid: u16, proc_idx: u8) -> Self {
        AddressSpace {
            pdid,
            proc_idx,
            va_width: DEFAULT_VA_WIDTH,
            pin_limit: DEFAULT_PIN_LIMIT,
            pinned_bytes: 0,
            pages: BTreeMap::new(),
            invalidations: Vec::new(),
        }
    }

    pub fn with_pin_limit(mut self, bytes: u64) -> Self {
        self.pin_limit = bytes;
        self
    }

    pub fn with_va_width(mut self, bits: u32) -> Self {
        self.va_width = bits;
        self
    }

    pub fn pdid(&self) -> u16 {
        self.pdid
    }

    pub fn proc_idx(&self) -> u8 {
        self.proc_idx
    }

    pub fn va_width(&self) -> u32 {
        self.va_width
    }

    pub fn pin_limit(&self) -> u64 {
        self.pin_limit
    }

    pub fn pinned_bytes(&self) -> u64 {
        self.pinned_bytes
    }

    pub fn page_state(&self, page: u64) -> PageState {
        self.pages
            .get(&page)
            .map(|p| p.state)
            .unwrap_or(PageState::Unmapped)
    }

    pub fn is_pinned(&self, page: u64) -> bool {
        self.pages.get(&page).is_some_and(|p| p.pinned)
    }

    pub fn mapped_pages(&self) -> impl Iterator<Item = (u64, PageState, bool)> + '_ {
        self.pages.iter().map(|(n, p)| (*n, p.state, p.pinned))
    }

    /// Pending translation invalidations, oldest first.
    pub fn drain_invalidations(&mut self) -> Vec<PageRange> {
        std::mem::take(&mut self.invalidations)
    }

    fn check_range(&self, va: VirtAddr, len: u64) -> Result<PageRange, MemError> {
        let end = VirtAddr(va.0.saturating_add(len.max(1)) - 1);
        if !va.fits(self.va_width) {
            return Err(MemError::AddressOutOfRange(va.0));
        }
        if !end.fits(self.va_width) {
            return Err(MemError::AddressOutOfRange(end.0));
        }
        Ok(page_span(va, len))
    }

    fn require_mapped(&self, span: &PageRange) -> Result<(), MemError> {
        match span.clone().find(|p| !self.pages.contains_key(p)) {
            Some(page) => Err(MemError::NotMapped { page }),
            None => Ok(()),
        }
    }

    pub fn map_region(
        &mut self,
        va: VirtAddr,
        len: u64,
        inject: &FaultInjectorConfig,
        frames: &mut FrameAllocator,
        costs: &CostModel,
    ) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        if let Some(page) = span.clone().find(|p| self.pages.contains_key(p)) {
            return Err(MemError::Overlap { page });
        }
        for n in span {
            let state = match inject.initial_state {
                InitialState::NotPresent => PageState::NotPresent,
                InitialState::Present => PageState::Present { frame: frames.alloc() },
                InitialState::PresentReadOnly => {
                    let origin = frames.alloc();
                    PageState::PresentReadOnly { frame: origin, cow_origin: origin }
                }
            };
            self.pages.insert(
                n,
                Page { state, pinned: false, disk_backed: inject.disk_backed, data: None },
            );
        }
        Ok(costs.cost_ns(MemOp::Mmap, len))
    }

    pub fn unmap_region(&mut self, va: VirtAddr, len: u64, costs: &CostModel) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        for n in span.clone() {
            if let Some(p) = self.pages.remove(&n) {
                if p.pinned {
                    self.pinned_bytes -= PAGE_SIZE;
                }
            }
        }
        self.invalidations.push(span);
        Ok(costs.cost_ns(MemOp::Munmap, len))
    }

    /// Pure translation query.
    pub fn lookup(&self, va: VirtAddr, is_write: bool) -> Lookup {
        match self.page_state(va.page_num()) {
            PageState::Unmapped => Lookup::Fault { kind: FaultKind::Unmapped },
            PageState::NotPresent => Lookup::Fault { kind: FaultKind::NotPresent },
            PageState::Present { frame } => Lookup::Present { pa: frame.base() | va.page_offset(), writable: true },
            PageState::PresentReadOnly { frame, .. } => {
                if is_write {
                    Lookup::Fault { kind: FaultKind::WriteToReadOnly }
                } else {
                    Lookup::Present { pa: frame.base() | va.page_offset(), writable: false }
                }
            }
        }
    }

    /// CPU-side access that resolves whatever fault the page has. Returns the
    /// outcome and its cost in nanoseconds.
    pub fn touch(
        &mut self,
        va: VirtAddr,
        is_write: bool,
        frames: &mut FrameAllocator,
        costs: &CostModel,
    ) -> Result<(TouchOutcome, u64), MemError> {
        let n = va.page_num();
        let page = self.pages.get_mut(&n).ok_or(MemError::SegFault(va.0))?;
        let outcome = match page.state {
            PageState::Unmapped => return Err(MemError::SegFault(va.0)),
            PageState::NotPresent => {
                page.state = PageState::Present { frame: frames.alloc() };
                if page.disk_backed {
                    TouchOutcome::MajorFault
                } else {
                    TouchOutcome::MinorFault
                }
            }
            PageState::PresentReadOnly { .. } if is_write => {
                page.state = PageState::Present { frame: frames.alloc() };
                self.invalidations.push(n..n + 1);
                TouchOutcome::CowCopied
            }
            PageState::Present { .. } | PageState::PresentReadOnly { .. } => TouchOutcome::AlreadyPresent,
        };
        let cost = match outcome {
            TouchOutcome::AlreadyPresent => 0,
            TouchOutcome::MajorFault => costs.minor_fault_ns + costs.major_fault_io_ns,
            TouchOutcome::MinorFault | TouchOutcome::CowCopied => costs.minor_fault_ns,
        };
        Ok((outcome, cost))
    }

    /// Touches one byte per page of a buffer (write access), charging the
    /// per-buffer touch overhead instead of per-fault costs.
    pub fn touch_region(
        &mut self,
        va: VirtAddr,
        len: u64,
        frames: &mut FrameAllocator,
        costs: &CostModel,
    ) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        for n in span {
            self.touch(VirtAddr::from_page(n), true, frames, costs)?;
        }
        Ok(costs.cost_ns(MemOp::Touch, len))
    }

    pub fn pin_region(
        &mut self,
        va: VirtAddr,
        len: u64,
        frames: &mut FrameAllocator,
        costs: &CostModel,
    ) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        let newly = span.clone().filter(|n| !self.is_pinned(*n)).count() as u64 * PAGE_SIZE;
        if self.pinned_bytes + newly > self.pin_limit {
            return Err(MemError::PinLimitExceeded {
                requested: newly,
                pinned: self.pinned_bytes,
                limit: self.pin_limit,
            });
        }
        for n in span {
            // Pinning takes write intent, so shared pages get their own copy.
            self.touch(VirtAddr::from_page(n), true, frames, costs)?;
            let page = self.pages.get_mut(&n).expect("mapped");
            if !page.pinned {
                page.pinned = true;
                self.pinned_bytes += PAGE_SIZE;
            }
        }
        Ok(costs.cost_ns(MemOp::Pin, len))
    }

    pub fn unpin_region(&mut self, va: VirtAddr, len: u64, costs: &CostModel) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        if let Some(page) = span.clone().find(|n| !self.is_pinned(*n)) {
            return Err(MemError::NotPinned { page });
        }
        for n in span {
            self.pages.get_mut(&n).expect("mapped").pinned = false;
            self.pinned_bytes -= PAGE_SIZE;
        }
        Ok(costs.cost_ns(MemOp::Unpin, len))
    }

    /// Kernel-side batched page-in of up to `n` pages starting at `va`'s page,
    /// stopping before the first unmapped page.
    pub fn get_user_pages(
        &mut self,
        va: VirtAddr,
        n: u64,
        write: bool,
        frames: &mut FrameAllocator,
        costs: &CostModel,
    ) -> GupOutcome {
        let mut out = GupOutcome::default();
        let first = va.page_num();
        for page in first..first + n.max(1) {
            match self.touch(VirtAddr::from_page(page), write, frames, costs) {
                Ok((o, _)) => {
                    out.count += 1;
                    if o.paged_in() {
                        out.faulted_in += 1;
                        if o == TouchOutcome::MajorFault {
                            out.cost_ns += costs.major_fault_io_ns;
                        }
                    }
                    out.cost_ns += costs.gup_per_page_ns;
                }
                Err(_) => break,
            }
        }
        out
    }

    /// Marks resident, unpinned pages of a buffer non-resident. Pinned pages
    /// keep their residency. `fraction` in `[0, 1]` selects a seeded subset.
    pub fn evict_region<R: Rng>(&mut self, va: VirtAddr, len: u64, fraction: f64, rng: &mut R) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        let mut evicted = 0;
        for n in span.clone() {
            let pick = fraction >= 1.0 || rng.gen_bool(fraction.clamp(0.0, 1.0));
            let page = self.pages.get_mut(&n).expect("mapped");
            if pick && !page.pinned && page.state.is_present() {
                page.state = PageState::NotPresent;
                evicted += 1;
            }
        }
        self.invalidations.push(span);
        Ok(evicted)
    }

    /// Arms copy-on-write on resident, unpinned pages of a buffer.
    pub fn share_cow_region(&mut self, va: VirtAddr, len: u64) -> Result<u64, MemError> {
        let span = self.check_range(va, len)?;
        self.require_mapped(&span)?;
        let mut armed = 0;
        for n in span.clone() {
            let page = self.pages.get_mut(&n).expect("mapped");
            if let (PageState::Present { frame }, false) = (page.state, page.pinned) {
                page.state = PageState::PresentReadOnly { frame, cow_origin: frame };
                armed += 1;
            }
        }
        self.invalidations.push(span);
        Ok(armed)
    }

    /// One background huge-page pass: picks a random aligned range whose
    /// mapped pages are all resident and makes its unpinned pages transiently
    /// non-resident. Returns the invalidated range, if any.
    pub fn thp_tick<R: Rng>(&mut self, range_pages: u64, rng: &mut R) -> Option<PageRange> {
        let range_pages = range_pages.max(1);
        let mut candidates: Vec<u64> = Vec::new();
        let mut current: Option<(u64, bool, bool)> = None; // (base, all_present, any_unpinned)
        for (n, p) in &self.pages {
            let base = n & !(range_pages - 1);
            match current {
                Some((b, all, any)) if b == base => {
                    current = Some((b, all && p.state.is_present(), any || !p.pinned));
                }
                _ => {
                    if let Some((b, true, true)) = current {
                        candidates.push(b);
                    }
                    current = Some((base, p.state.is_present(), !p.pinned));
                }
            }
        }
        if let Some((b, true, true)) = current {
            candidates.push(b);
        }
        if candidates.is_empty() {
            return None;
        }
        let base = candidates[rng.gen_range(0..candidates.len())];
        let range = base..base + range_pages;
        for n in range.clone() {
            if let Some(p) = self.pages.get_mut(&n) {
                if !p.pinned {
                    p.state = PageState::NotPresent;
                }
            }
        }
        self.invalidations.push(range.clone());
        Some(range)
    }

    /// Reads bytes through the CPU view. Non-resident pages return their
    /// retained contents; unmapped pages are an error.
    pub fn read_bytes(&self, va: VirtAddr, out: &mut [u8]) -> Result<(), MemError> {
        let mut done = 0usize;
        while done < out.len() {
            let cur = va.add(done as u64);
            let page = self.pages.get(&cur.page_num()).ok_or(MemError::SegFault(cur.0))?;
            let off = cur.page_offset() as usize;
            let n = (PAGE_SIZE as usize - off).min(out.len() - done);
            match &page.data {
                Some(d) => out[done..done + n].copy_from_slice(&d[off..off + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
        }
        Ok(())
    }

    pub fn write_bytes(&mut self, va: VirtAddr, bytes: &[u8]) -> Result<(), MemError> {
        let mut done = 0usize;
        while done < bytes.len() {
            let cur = va.add(done as u64);
            let page = self.pages.get_mut(&cur.page_num()).ok_or(MemError::SegFault(cur.0))?;
            let off = cur.page_offset() as usize;
            let n = (PAGE_SIZE as usize - off).min(bytes.len() - done);
            let data = page
                .data
                .get_or_insert_with(|| vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
            data[off..off + n].copy_from_slice(&bytes[done..done + n]);
            done += n;
        }
        Ok(())
    }

    /// Recomputes pinned bytes from scratch.
    pub fn scan_pinned_bytes(&self) -> u64 {
        self.pages.values().filter(|p| p.pinned).count() as u64 * PAGE_SIZE
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let scanned = self.scan_pinned_bytes();
        if scanned != self.pinned_bytes {
            return Err(format!("pinned_bytes {} != scanned {}", self.pinned_bytes, scanned));
        }
        if self.pinned_bytes > self.pin_limit {
            return Err(format!("pinned_bytes {} over limit {}", self.pinned_bytes, self.pin_limit));
        }
        if let Some((n, _)) = self.pages.iter().find(|(_, p)| p.pinned && !p.state.is_present()) {
            return Err(format!("pinned page {n:#x} not resident"));
        }
        Ok(())
    }
}

/// All address spaces on one node plus the shared frame allocator and costs.
#[derive(Clone, Debug, Default)]
pub struct MemoryManager {
    spaces: BTreeMap<(u16, u8), AddressSpace>,
    pub frames: FrameAllocator,
    pub costs: CostModel,
}

impl MemoryManager {
    pub fn new(costs: CostModel) -> Self {
        MemoryManager { spaces: BTreeMap::new(), frames: FrameAllocator::default(), costs }
    }

    pub fn add_space(&mut self, space: AddressSpace) {
        self.spaces.insert((space.pdid(), space.proc_idx()), space);
    }

    pub fn space(&self, pdid: u16, proc_idx: u8) -> Option<&AddressSpace> {
        self.spaces.get(&(pdid, proc_idx))
    }

    pub fn space_mut(&mut self, pdid: u16, proc_idx: u8) -> Option<&mut AddressSpace> {
        self.spaces.get_mut(&(pdid, proc_idx))
    }

    /// Splits out the space together with the allocator and cost table so a
    /// caller can run mutating operations on it.
    pub fn parts(&mut self, pdid: u16, proc_idx: u8) -> Result<(&mut AddressSpace, &mut FrameAllocator, &CostModel), MemError> {
        let space = self
            .spaces
            .get_mut(&(pdid, proc_idx))
            .ok_or(MemError::NoSuchSpace { pdid, proc_idx })?;
        Ok((space, &mut self.frames, &self.costs))
    }

    pub fn spaces(&self) -> impl Iterator<Item = &AddressSpace> {
        self.spaces.values()
    }

    pub fn spaces_mut(&mut self) -> impl Iterator<Item = &mut AddressSpace> {
        self.spaces.values_mut()
    }
}
