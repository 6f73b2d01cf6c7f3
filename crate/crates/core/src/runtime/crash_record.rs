//! Crash records written by the optional native crash handler.
//!
//! Layout, all integers little-endian, fields in this order:
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 4    | magic `CCRS`                           |
//! | 4      | 1    | version, `0x01`                        |
//! | 5      | 4    | signal number (`i32`)                  |
//! | 9      | 8    | fault address (`u64`)                  |
//! | 17     | 4    | number of valid frames (`u32`, ≤ 64)   |
//! | 21     | 512  | 64 frame addresses (`u64`), innermost first, unused slots zero |
//! | 533    | 4    | pid (`i32`)                            |
//! | 537    | 8    | monotonic timestamp, nanoseconds (`u64`) |
//!
//! Total size is 545 bytes. The handler emits the record with one `write`, so
//! a file of any other size is treated as torn and ignored.

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CCRS";
pub const VERSION: u8 = 0x01;
pub const MAX_FRAMES: usize = 64;
pub const RECORD_SIZE: usize = 4 + 1 + 4 + 8 + 4 + MAX_FRAMES * 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashRecord {
    pub signal_number: i32,
    pub fault_address: u64,
    pub frame_addresses: Vec<u64>,
    pub pid: i32,
    pub monotonic_timestamp: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrashRecordError {
    #[error("crash record has {0} bytes, expected {RECORD_SIZE}")]
    BadSize(usize),
    #[error("crash record magic mismatch")]
    BadMagic,
    #[error("unsupported crash record version {0}")]
    BadVersion(u8),
    #[error("crash record claims {0} frames, at most {MAX_FRAMES} allowed")]
    TooManyFrames(u32),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }
}

impl CrashRecord {
    pub fn decode(bytes: &[u8]) -> Result<Self, CrashRecordError> {
        if bytes.len() != RECORD_SIZE {
            return Err(CrashRecordError::BadSize(bytes.len()));
        }
        let mut r = Reader { bytes, pos: 0 };
        if &r.take::<4>() != MAGIC {
            return Err(CrashRecordError::BadMagic);
        }
        let [version] = r.take::<1>();
        if version != VERSION {
            return Err(CrashRecordError::BadVersion(version));
        }
        let signal_number = i32::from_le_bytes(r.take());
        let fault_address = u64::from_le_bytes(r.take());
        let count = u32::from_le_bytes(r.take());
        if count as usize > MAX_FRAMES {
            return Err(CrashRecordError::TooManyFrames(count));
        }
        let mut frame_addresses = Vec::with_capacity(count as usize);
        for slot in 0..MAX_FRAMES {
            let address = u64::from_le_bytes(r.take());
            if slot < count as usize {
                frame_addresses.push(address);
            }
        }
        let pid = i32::from_le_bytes(r.take());
        let monotonic_timestamp = u64::from_le_bytes(r.take());
        Ok(CrashRecord {
            signal_number,
            fault_address,
            frame_addresses,
            pid,
            monotonic_timestamp,
        })
    }

    /// Serializes the record; frames beyond the 64th are dropped.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_SIZE);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.signal_number.to_le_bytes());
        out.extend_from_slice(&self.fault_address.to_le_bytes());
        let count = self.frame_addresses.len().min(MAX_FRAMES);
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for slot in 0..MAX_FRAMES {
            let address = self.frame_addresses.get(slot).copied().filter(|_| slot < count).unwrap_or(0);
            out.extend_from_slice(&address.to_le_bytes());
        }
        out.extend_from_slice(&self.pid.to_le_bytes());
        out.extend_from_slice(&self.monotonic_timestamp.to_le_bytes());
        out
    }

    /// Reads a record file; a missing, torn or foreign file yields `None`.
    pub fn read(path: &Path) -> Option<Self> {
        let bytes = std::fs::read(path).ok()?;
        Self::decode(&bytes).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CrashRecord {
        CrashRecord {
            signal_number: 11,
            fault_address: 0,
            frame_addresses: vec![0x401136, 0x401180, 0x7f00_0000_1234],
            pid: 4242,
            monotonic_timestamp: 123_456_789,
        }
    }

    #[test]
    fn fixed_layout() {
        let bytes = sample().encode();
        assert_eq!(bytes.len(), 545);
        assert_eq!(&bytes[..5], b"CCRS\x01");
        assert_eq!(&bytes[5..9], &11i32.to_le_bytes());
        assert_eq!(&bytes[17..21], &3u32.to_le_bytes());
        assert_eq!(&bytes[21..29], &0x401136u64.to_le_bytes());
        assert_eq!(&bytes[533..537], &4242i32.to_le_bytes());
    }

    #[test]
    fn rejects_torn_and_foreign_records() {
        let bytes = sample().encode();
        assert_eq!(
            CrashRecord::decode(&bytes[..100]),
            Err(CrashRecordError::BadSize(100))
        );
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(CrashRecord::decode(&bad), Err(CrashRecordError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(CrashRecord::decode(&bad), Err(CrashRecordError::BadVersion(2)));
        let mut bad = bytes;
        bad[17..21].copy_from_slice(&65u32.to_le_bytes());
        assert_eq!(CrashRecord::decode(&bad), Err(CrashRecordError::TooManyFrames(65)));
    }

    #[test]
    fn deep_stacks_are_capped() {
        let mut record = sample();
        record.frame_addresses = (1..=100).collect();
        let decoded = CrashRecord::decode(&record.encode()).unwrap();
        assert_eq!(decoded.frame_addresses.len(), 64);
        assert_eq!(decoded.frame_addresses[63], 64);
    }

    proptest! {
        #[test]
        fn roundtrip(sig in any::<i32>(), fault in any::<u64>(), frames in prop::collection::vec(any::<u64>(), 0..=64), pid in any::<i32>(), ts in any::<u64>()) {
            let record = CrashRecord { signal_number: sig, fault_address: fault, frame_addresses: frames, pid, monotonic_timestamp: ts };
            prop_assert_eq!(CrashRecord::decode(&record.encode()).unwrap(), record);
        }
    }
}
