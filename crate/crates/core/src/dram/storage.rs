//! Sparse per-row data arrays. Rows that were never written read as zeros.

use rustc_hash::FxHashMap;

use crate::config::Geometry;

pub type Transfer = [u8; Geometry::TRANSFER_BYTES];

#[derive(Debug, Clone)]
pub(crate) struct RowData {
    pub bytes: Box<[u8]>,
    /// Changes on every modification of `bytes`; never reused.
    pub version: u64,
    /// Bus slot of the last charge restore.
    pub last_restore: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct RowStore {
    rows: FxHashMap<(u32, u32), RowData>,
    row_bytes: usize,
    next_version: u64,
}

impl RowStore {
    pub fn new(row_bytes: usize) -> RowStore {
        RowStore { rows: FxHashMap::default(), row_bytes, next_version: 1 }
    }

    pub fn row_bytes(&self) -> usize {
        self.row_bytes
    }

    pub fn get(&self, bank: u32, row: u32) -> Option<&RowData> {
        self.rows.get(&(bank, row))
    }

    pub fn version(&self, bank: u32, row: u32) -> u64 {
        self.rows.get(&(bank, row)).map_or(0, |r| r.version)
    }

    fn bump(&mut self) -> u64 {
        self.next_version += 1;
        self.next_version
    }

    /// Mutable access, materializing a zero row if needed. The caller must
    /// call [`RowStore::touch`] after changing the bytes.
    pub fn row_mut(&mut self, bank: u32, row: u32, now: u64) -> &mut RowData {
        let row_bytes = self.row_bytes;
        let version = self.next_version;
        self.rows.entry((bank, row)).or_insert_with(|| RowData {
            bytes: vec![0u8; row_bytes].into_boxed_slice(),
            version,
            last_restore: now,
        })
    }

    pub fn touch(&mut self, bank: u32, row: u32) {
        let v = self.bump();
        if let Some(r) = self.rows.get_mut(&(bank, row)) {
            r.version = v;
        }
    }

    pub fn set_restored(&mut self, bank: u32, row: u32, now: u64) {
        if let Some(r) = self.rows.get_mut(&(bank, row)) {
            r.last_restore = now;
        }
    }

    pub fn read_column(&self, bank: u32, row: u32, col: u32) -> Transfer {
        let mut out = [0u8; Geometry::TRANSFER_BYTES];
        if let Some(r) = self.get(bank, row) {
            let off = col as usize * Geometry::TRANSFER_BYTES;
            out.copy_from_slice(&r.bytes[off..off + Geometry::TRANSFER_BYTES]);
        }
        out
    }

    pub fn write_column(&mut self, bank: u32, row: u32, col: u32, data: &Transfer, now: u64) {
        let off = col as usize * Geometry::TRANSFER_BYTES;
        let r = self.row_mut(bank, row, now);
        r.bytes[off..off + Geometry::TRANSFER_BYTES].copy_from_slice(data);
        self.touch(bank, row);
    }

    pub fn fill(&mut self, bank: u32, row: u32, bytes: &[u8], now: u64) {
        let r = self.row_mut(bank, row, now);
        r.bytes.copy_from_slice(bytes);
        r.last_restore = now;
        self.touch(bank, row);
    }

    pub fn snapshot(&self, bank: u32, row: u32) -> Vec<u8> {
        match self.get(bank, row) {
            Some(r) => r.bytes.to_vec(),
            None => vec![0u8; self.row_bytes],
        }
    }

    /// Materialized rows in ascending order.
    pub fn keys(&self) -> Vec<(u32, u32)> {
        let mut k: Vec<(u32, u32)> = self.rows.keys().copied().collect();
        k.sort_unstable();
        k
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Sets `bits` (row bit index, value) and returns how many bits changed.
    pub fn set_bits(&mut self, bank: u32, row: u32, bits: &[(u32, bool)], now: u64) -> u32 {
        if bits.is_empty() {
            return 0;
        }
        let r = self.row_mut(bank, row, now);
        let mut changed = 0;
        for &(bit, val) in bits {
            let byte = &mut r.bytes[(bit / 8) as usize];
            let mask = 1u8 << (bit % 8);
            if (*byte & mask != 0) != val {
                *byte ^= mask;
                changed += 1;
            }
        }
        if changed > 0 {
            self.touch(bank, row);
        }
        changed
    }
}

#[inline]
pub(crate) fn bit_of(bytes: &[u8], bit: u32) -> bool {
    bytes[(bit / 8) as usize] >> (bit % 8) & 1 == 1
}
