//! Summarization buffers: series grouped by their one-bit-per-segment word.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::{Error, Result};
use crate::isax::{max_card_symbols, paa, ISaxWord, MAX_SEGMENTS};
use crate::series::Dataset;

/// Full-cardinality symbols of one series; only the first `segments` bytes
/// are meaningful.
pub type SymbolWord = [u8; MAX_SEGMENTS];

/// Series claimed per fetch-and-add while filling buffers.
const CLAIM_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferEntry {
    /// Position of the series inside the node's chunk.
    pub series: u32,
    pub symbols: SymbolWord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummarizationBuffer {
    /// Root key: segment 0 in the most significant of `segments` bits.
    pub key: u32,
    pub entries: Vec<BufferEntry>,
}

impl SummarizationBuffer {
    pub fn word(&self, segments: usize) -> ISaxWord {
        ISaxWord::from_root_key(self.key, segments)
    }
}

/// Root key of a full-cardinality word: the top bit of every symbol.
pub fn root_key_of(symbols: &[u8]) -> u32 {
    symbols.iter().fold(0u32, |acc, &s| (acc << 1) | u32::from(s >> 7))
}

pub fn summarize(series: &[f64], segments: usize) -> Result<SymbolWord> {
    let summary = paa(series, segments)?;
    let mut word = [0u8; MAX_SEGMENTS];
    word[..segments].copy_from_slice(&max_card_symbols(&summary));
    Ok(word)
}

pub(crate) fn check_segments(series_len: usize, segments: usize) -> Result<()> {
    if segments == 0 || segments > MAX_SEGMENTS {
        return Err(Error::invalid(format!(
            "segment count {segments} outside 1..={MAX_SEGMENTS}"
        )));
    }
    if !series_len.is_multiple_of(segments) {
        return Err(Error::invalid(format!(
            "{segments} segments do not divide series length {series_len}"
        )));
    }
    Ok(())
}

/// Summarizes every series of `chunk` and groups them by root key.
///
/// Workers claim blocks of series through a shared counter and append to
/// per-key buffers under a per-buffer lock. The result is sorted by key with
/// entries in series order, so it does not depend on `n_workers`.
pub fn build_summarization_buffers(chunk: &Dataset, segments: usize, n_workers: usize) -> Result<Vec<SummarizationBuffer>> {
    if chunk.is_empty() {
        return Err(Error::invalid("cannot summarize an empty chunk"));
    }
    check_segments(chunk.series_len(), segments)?;
    if chunk.len() > u32::MAX as usize {
        return Err(Error::invalid("chunk too large for 32-bit series positions"));
    }
    let slots: Vec<Mutex<Vec<BufferEntry>>> = (0..1usize << segments).map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);

    let fill = || -> Result<()> {
        loop {
            let start = next.fetch_add(CLAIM_BLOCK, Ordering::Relaxed);
            if start >= chunk.len() {
                return Ok(());
            }
            let end = (start + CLAIM_BLOCK).min(chunk.len());
            for i in start..end {
                let symbols = summarize(chunk.get(i), segments)?;
                let key = root_key_of(&symbols[..segments]);
                slots[key as usize].lock().unwrap().push(BufferEntry {
                    series: i as u32,
                    symbols,
                });
            }
        }
    };

    let n_workers = n_workers.max(1);
    if n_workers == 1 {
        fill()?;
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..n_workers).map(|_| s.spawn(fill)).collect();
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("buffer worker panicked"))
        })?;
    }

    Ok(slots
        .into_iter()
        .enumerate()
        .filter_map(|(key, slot)| {
            let mut entries = slot.into_inner().unwrap();
            if entries.is_empty() {
                return None;
            }
            entries.sort_unstable_by_key(|e| e.series);
            Some(SummarizationBuffer {
                key: key as u32,
                entries,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_walks(n: usize, len: usize, seed: u64) -> Dataset {
        crate::generate::normalized_random_walks(n, len, seed)
    }

    #[test]
    fn single_series_single_buffer() {
        let d = Dataset::from_series(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let b = build_summarization_buffers(&d, 2, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].entries.len(), 1);
        assert_eq!(b[0].key, 0b11);
    }

    #[test]
    fn opposite_signs_split_buffers() {
        let d = Dataset::from_series(&[vec![1.0, 1.0, -1.0, -1.0], vec![-1.0, -1.0, 1.0, 1.0]]).unwrap();
        let b = build_summarization_buffers(&d, 2, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].key, 0b01);
        assert_eq!(b[1].key, 0b10);
    }

    #[test]
    fn rejects_bad_segmentation_and_empty_chunks() {
        let d = Dataset::from_series(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(build_summarization_buffers(&d, 2, 1).is_err());
        assert!(build_summarization_buffers(&Dataset::empty(4).unwrap(), 2, 1).is_err());
        let d = Dataset::new(34, vec![0.0; 34]).unwrap();
        assert!(build_summarization_buffers(&d, 17, 1).is_err());
    }

    #[test]
    fn keys_agree_with_entries_and_worker_count() {
        let d = random_walks(10_000, 64, 3);
        let seq = build_summarization_buffers(&d, 16, 1).unwrap();
        let par = build_summarization_buffers(&d, 16, 8).unwrap();
        assert_eq!(seq, par);
        let total: usize = seq.iter().map(|b| b.entries.len()).sum();
        assert_eq!(total, d.len());
        for b in &seq {
            let word = b.word(16);
            for e in &b.entries {
                assert!(word.covers(&e.symbols[..16]));
            }
        }
    }
}
