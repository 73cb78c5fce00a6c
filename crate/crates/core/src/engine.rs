// SPDX-License-Identifier: Apache-2.0

//! Untrusted server-side work: attribute vector scans, result
//! reconstruction, and the leakage audit.

use std::fmt;

use crate::enclave::{VidRange, VidSelection};
use crate::model::{
    AttributeVector, EdKind, EncodedColumnStore, EncryptedValue, Order, RecordId, Repetition,
    ValueId,
};

/// Rows whose ValueID lies in either range of the selection.
pub fn av_search_range(av: &AttributeVector, first: VidRange, second: VidRange) -> Vec<RecordId> {
    scan_block(&av.vids, 0, |v| first.contains(v) || second.contains(v))
}

/// Rows whose ValueID appears in the sorted list `vids`.
pub fn av_search_set(av: &AttributeVector, vids: &[ValueId]) -> Vec<RecordId> {
    debug_assert!(vids.windows(2).all(|w| w[0] < w[1]));
    scan_block(&av.vids, 0, |v| vids.binary_search(&v).is_ok())
}

/// Dispatches on the selection shape.
pub fn av_search(av: &AttributeVector, sel: &VidSelection) -> Vec<RecordId> {
    av_search_parallel(av, sel, 1)
}

/// Splits the attribute vector into `workers` contiguous blocks, scans them
/// concurrently and concatenates the per-block results.
pub fn av_search_parallel(av: &AttributeVector, sel: &VidSelection, workers: usize) -> Vec<RecordId> {
    let workers = workers.max(1);
    let pred = |v: ValueId| match sel {
        VidSelection::Ranges { first, second } => first.contains(v) || second.contains(v),
        VidSelection::List(vids) => vids.binary_search(&v).is_ok(),
    };
    if sel.is_empty() {
        return Vec::new();
    }
    if workers == 1 || av.len() < 2 * workers {
        return scan_block(&av.vids, 0, pred);
    }
    let chunk = av.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = av
            .vids
            .chunks(chunk)
            .enumerate()
            .map(|(i, block)| s.spawn(move || scan_block(block, i * chunk, pred)))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scan worker panicked"))
            .collect()
    })
}

fn scan_block(block: &[ValueId], base: usize, pred: impl Fn(ValueId) -> bool) -> Vec<RecordId> {
    block
        .iter()
        .enumerate()
        .filter(|&(_, &v)| pred(v))
        .map(|(i, _)| (base + i) as RecordId)
        .collect()
}

/// One ciphertext per requested row, in the given order.
pub fn reconstruct(enc_dict: &[EncryptedValue], av: &AttributeVector, rids: &[RecordId]) -> Vec<EncryptedValue> {
    rids.iter()
        .map(|&rid| enc_dict[av.vids[rid as usize] as usize].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrequencyClass {
    /// Counts equal the plaintext value frequencies.
    Full,
    /// Every count lies in `1..=bs_max`.
    Bounded(u32),
    /// Every count is exactly one.
    None,
}

/// What an observer of the stored column learns from its shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakageReport {
    pub kind: EdKind,
    pub histogram: Vec<u64>,
    pub frequency: FrequencyClass,
    /// Whether the histogram matches what the kind promises.
    pub consistent: bool,
    pub order: Order,
}

impl LeakageReport {
    pub fn max_count(&self) -> u64 {
        self.histogram.iter().copied().max().unwrap_or(0)
    }
}

pub fn leakage_profile(store: &EncodedColumnStore) -> LeakageReport {
    let histogram = store.av.histogram(store.dict_len());
    let referenced = histogram.iter().all(|&c| c >= 1);
    let (frequency, consistent) = match store.kind.repetition() {
        Repetition::Revealing => (FrequencyClass::Full, referenced),
        Repetition::Smoothing => {
            let bs = store.bs_max.unwrap_or(1);
            let ok = referenced && histogram.iter().all(|&c| c <= u64::from(bs));
            (FrequencyClass::Bounded(bs), ok)
        }
        Repetition::Hiding => (FrequencyClass::None, histogram.iter().all(|&c| c == 1)),
    };
    LeakageReport {
        kind: store.kind,
        histogram,
        frequency,
        consistent,
        order: store.kind.order(),
    }
}

impl fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind: {}", self.kind)?;
        writeln!(f, "dictionary entries: {}", self.histogram.len())?;
        match &self.frequency {
            FrequencyClass::Full => {
                writeln!(f, "frequency: full")?;
                writeln!(f, "histogram (vid: count):")?;
                for (vid, c) in self.histogram.iter().enumerate() {
                    writeln!(f, "  {vid}: {c}")?;
                }
            }
            FrequencyClass::Bounded(bs) => {
                writeln!(f, "frequency: bounded ≤ {bs} (max observed {})", self.max_count())?
            }
            FrequencyClass::None => writeln!(f, "frequency: none (all counts = 1)")?,
        }
        writeln!(f, "order: {}", self.order)?;
        write!(f, "verdict: {}", if self.consistent { "consistent" } else { "VIOLATION" })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::builder::{build, BuildParams};
    use crate::crypto::{derive_key, pae_dec, MasterKey};
    use crate::model::PlainColumn;

    fn sample_av() -> AttributeVector {
        AttributeVector {
            vids: vec![1, 2, 1, 1, 0, 2],
        }
    }

    #[test]
    fn range_scan_examples() {
        let av = sample_av();
        // D = (Hans, Jessica, Archie): Hans and Archie are vids 0 and 2.
        assert_eq!(av_search_range(&av, VidRange::new(0, 0), VidRange::new(2, 2)), vec![1, 4, 5]);
        assert!(av_search_range(&av, VidRange::DUMMY, VidRange::DUMMY).is_empty());
        assert_eq!(av_search_range(&av, VidRange::new(0, 2), VidRange::DUMMY), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn set_scan_examples() {
        let av = sample_av();
        assert_eq!(av_search_set(&av, &[0, 2]), vec![1, 4, 5]);
        assert!(av_search_set(&av, &[]).is_empty());
    }

    #[test]
    fn set_scan_agrees_with_range_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..50u32);
            let av = AttributeVector {
                vids: (0..300).map(|_| rng.gen_range(0..n)).collect(),
            };
            let lo = rng.gen_range(0..n);
            let hi = rng.gen_range(lo..n);
            let list: Vec<ValueId> = (lo..=hi).collect();
            assert_eq!(
                av_search_set(&av, &list),
                av_search_range(&av, VidRange::new(lo, hi), VidRange::DUMMY)
            );
        }
    }

    #[test]
    fn parallel_scan_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let av = AttributeVector {
            vids: (0..10_007).map(|_| rng.gen_range(0..100)).collect(),
        };
        let sels = [
            VidSelection::Ranges {
                first: VidRange::new(3, 40),
                second: VidRange::new(90, 99),
            },
            VidSelection::List(vec![1, 5, 77]),
            VidSelection::empty_ranges(),
        ];
        for sel in &sels {
            let single = av_search(&av, sel);
            for w in [1, 2, 3, 7, 16, 64] {
                assert_eq!(av_search_parallel(&av, sel, w), single);
            }
        }
    }

    #[test]
    fn reconstruct_round_trip() {
        let mk = MasterKey::from_bytes([2; 16]);
        let col = PlainColumn::from_values(["Jessica", "Archie", "Jessica", "Jessica", "Hans", "Archie"]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let store = build(&col, &BuildParams::new(EdKind::ED9), &mk, "t", "c", &mut rng).unwrap();
        let key = derive_key(&mk, "t", "c");
        let dec = |ec: Vec<EncryptedValue>| -> Vec<Vec<u8>> { ec.iter().map(|c| pae_dec(&key, c).unwrap()).collect() };

        let picked = dec(reconstruct(&store.enc_dict, &store.av, &[1, 4, 5]));
        assert_eq!(picked, vec![b"Archie".to_vec(), b"Hans".to_vec(), b"Archie".to_vec()]);
        assert!(reconstruct(&store.enc_dict, &store.av, &[]).is_empty());
        let all: Vec<RecordId> = (0..6).collect();
        assert_eq!(dec(reconstruct(&store.enc_dict, &store.av, &all)), col.values());
    }

    #[test]
    fn leakage_reports() {
        let mk = MasterKey::from_bytes([2; 16]);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let col = PlainColumn::from_values(["Jessica", "Archie", "Jessica", "Jessica", "Hans", "Archie"]).unwrap();

        let ed1 = leakage_profile(&build(&col, &BuildParams::new(EdKind::ED1), &mk, "t", "c", &mut rng).unwrap());
        // Sorted: Archie, Hans, Jessica.
        assert_eq!(ed1.histogram, vec![2, 1, 3]);
        assert_eq!(ed1.frequency, FrequencyClass::Full);
        assert!(ed1.to_string().contains("frequency: full"));

        let ed7 = leakage_profile(&build(&col, &BuildParams::new(EdKind::ED7), &mk, "t", "c", &mut rng).unwrap());
        assert!(ed7.histogram.iter().all(|&c| c == 1));
        assert!(ed7.to_string().contains("frequency: none (all counts = 1)"));

        let many: Vec<String> = (0..500).map(|i| format!("v{}", i % 7)).collect();
        let col = PlainColumn::from_values(many).unwrap();
        let ed4 = leakage_profile(&build(&col, &BuildParams::smoothing(EdKind::ED4, 10), &mk, "t", "c", &mut rng).unwrap());
        assert!(ed4.max_count() <= 10);
        assert!(ed4.consistent);
        assert!(ed4.to_string().contains("frequency: bounded ≤ 10"));
        assert!(ed4.to_string().contains("order: sorted"));
    }
}
