// SPDX-License-Identifier: Apache-2.0

//! Plaintext and encoded representations of a single column.
//!
//! A column `C` is split into a dictionary `D` and an attribute vector `AV`
//! such that `D[AV[j]] == C[j]` for every row `j`. The encrypted variants
//! keep that shape: the dictionary entries are individually encrypted and
//! the attribute vector stays in plaintext on the untrusted side.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Index into a dictionary.
pub type ValueId = u32;
/// Index of a row in a column.
pub type RecordId = u32;

/// Largest supported column length. `u32::MAX` is reserved as the dummy
/// marker inside range selections.
pub const MAX_ROWS: usize = u32::MAX as usize - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainColumn {
    values: Vec<Vec<u8>>,
    max_len: usize,
}

impl PlainColumn {
    pub fn new(values: Vec<Vec<u8>>, max_len: usize) -> Result<Self> {
        if values.len() > MAX_ROWS {
            return Err(Error::TooManyRows(values.len()));
        }
        if let Some(v) = values.iter().find(|v| v.len() > max_len) {
            return Err(Error::Length {
                len: v.len(),
                max: max_len,
            });
        }
        Ok(Self { values, max_len })
    }

    /// Builds a column whose maximal length is the longest value present.
    pub fn from_values<I, V>(values: I) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: Into<Vec<u8>>,
    {
        let values: Vec<Vec<u8>> = values.into_iter().map(Into::into).collect();
        let max_len = values.iter().map(Vec::len).max().unwrap_or(0);
        Self::new(values, max_len)
    }

    pub fn values(&self) -> &[Vec<u8>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec<u8>> {
        self.values
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    pub entries: Vec<Vec<u8>>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributeVector {
    pub vids: Vec<ValueId>,
}

impl AttributeVector {
    pub fn len(&self) -> usize {
        self.vids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vids.is_empty()
    }

    /// Occurrence count of every ValueID in `0..dict_len`.
    pub fn histogram(&self, dict_len: usize) -> Vec<u64> {
        let mut counts = vec![0u64; dict_len];
        for &vid in &self.vids {
            if let Some(c) = counts.get_mut(vid as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// The set of distinct values of a column.
pub fn unique_values(col: &PlainColumn) -> BTreeSet<Vec<u8>> {
    col.values.iter().cloned().collect()
}

/// Ascending record ids at which `v` occurs.
pub fn occurrences(col: &PlainColumn, v: &[u8]) -> Vec<RecordId> {
    col.values
        .iter()
        .enumerate()
        .filter(|(_, x)| x.as_slice() == v)
        .map(|(i, _)| i as RecordId)
        .collect()
}

/// Occurrence count per distinct value.
pub fn value_counts(col: &PlainColumn) -> HashMap<&[u8], usize> {
    let mut counts = HashMap::new();
    for v in &col.values {
        *counts.entry(v.as_slice()).or_insert(0) += 1;
    }
    counts
}

/// Checks that `d` and `av` reproduce `col` row by row.
pub fn verify_split(col: &PlainColumn, d: &Dictionary, av: &AttributeVector) -> bool {
    av.len() == col.len()
        && av
            .vids
            .iter()
            .zip(&col.values)
            .all(|(&vid, v)| d.entries.get(vid as usize) == Some(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Repetition {
    Revealing,
    Smoothing,
    Hiding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    Sorted,
    Rotated,
    Unsorted,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Sorted => "sorted",
            Order::Rotated => "rotated",
            Order::Unsorted => "unsorted",
        })
    }
}

/// Which of the nine encrypted dictionaries a column uses, or the plaintext
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdKind {
    /// Unencrypted, frequency revealing, sorted dictionary.
    Plain,
    Encrypted {
        repetition: Repetition,
        order: Order,
    },
}

impl EdKind {
    pub const ED1: EdKind = EdKind::ed(Repetition::Revealing, Order::Sorted);
    pub const ED2: EdKind = EdKind::ed(Repetition::Revealing, Order::Rotated);
    pub const ED3: EdKind = EdKind::ed(Repetition::Revealing, Order::Unsorted);
    pub const ED4: EdKind = EdKind::ed(Repetition::Smoothing, Order::Sorted);
    pub const ED5: EdKind = EdKind::ed(Repetition::Smoothing, Order::Rotated);
    pub const ED6: EdKind = EdKind::ed(Repetition::Smoothing, Order::Unsorted);
    pub const ED7: EdKind = EdKind::ed(Repetition::Hiding, Order::Sorted);
    pub const ED8: EdKind = EdKind::ed(Repetition::Hiding, Order::Rotated);
    pub const ED9: EdKind = EdKind::ed(Repetition::Hiding, Order::Unsorted);

    /// ED1..ED9 in numeric order.
    pub const ENCRYPTED: [EdKind; 9] = [
        Self::ED1,
        Self::ED2,
        Self::ED3,
        Self::ED4,
        Self::ED5,
        Self::ED6,
        Self::ED7,
        Self::ED8,
        Self::ED9,
    ];

    const fn ed(repetition: Repetition, order: Order) -> EdKind {
        EdKind::Encrypted { repetition, order }
    }

    /// 0 for plain, 1..=9 for ED1..ED9.
    pub fn number(self) -> u8 {
        match self {
            EdKind::Plain => 0,
            EdKind::Encrypted { repetition, order } => {
                let r = match repetition {
                    Repetition::Revealing => 0,
                    Repetition::Smoothing => 1,
                    Repetition::Hiding => 2,
                };
                let o = match order {
                    Order::Sorted => 0,
                    Order::Rotated => 1,
                    Order::Unsorted => 2,
                };
                1 + 3 * r + o
            }
        }
    }

    pub fn from_number(n: u8) -> Option<EdKind> {
        match n {
            0 => Some(EdKind::Plain),
            1..=9 => Some(Self::ENCRYPTED[n as usize - 1]),
            _ => None,
        }
    }

    pub fn repetition(self) -> Repetition {
        match self {
            EdKind::Plain => Repetition::Revealing,
            EdKind::Encrypted { repetition, .. } => repetition,
        }
    }

    pub fn order(self) -> Order {
        match self {
            EdKind::Plain => Order::Sorted,
            EdKind::Encrypted { order, .. } => order,
        }
    }

    pub fn is_plain(self) -> bool {
        self == EdKind::Plain
    }
}

impl fmt::Display for EdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdKind::Plain => f.write_str("plain"),
            k => write!(f, "ED{}", k.number()),
        }
    }
}

impl FromStr for EdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "plain" {
            return Ok(EdKind::Plain);
        }
        let digits = t.strip_prefix("ed").unwrap_or(&t);
        match digits.parse::<u8>() {
            Ok(n @ 1..=9) => Ok(EdKind::from_number(n).expect("in range")),
            _ => Err(Error::InvalidParams(format!(
                "unknown dictionary kind {s:?} (expected 1..9 or plain)"
            ))),
        }
    }
}

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// One probabilistic authenticated ciphertext.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncryptedValue {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl EncryptedValue {
    /// Serialized size: nonce, body and tag.
    pub fn encoded_len(&self) -> usize {
        NONCE_LEN + self.body.len() + TAG_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag);
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return None;
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        Some(Self {
            nonce: nonce.try_into().ok()?,
            body: body.to_vec(),
            tag: tag.try_into().ok()?,
        })
    }
}

/// An encrypted dictionary together with its attribute vector and metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedColumnStore {
    pub kind: EdKind,
    pub enc_dict: Vec<EncryptedValue>,
    pub av: AttributeVector,
    pub max_len: usize,
    pub bs_max: Option<u32>,
    pub enc_rnd_offset: Option<EncryptedValue>,
    pub table_name: String,
    pub column_name: String,
}

impl EncodedColumnStore {
    pub fn dict_len(&self) -> usize {
        self.enc_dict.len()
    }

    pub fn row_count(&self) -> usize {
        self.av.len()
    }

    /// Checks the structural invariants an untrusted host can verify
    /// without any key material.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::format("store", detail));
        let order = self.kind.order();
        let repetition = self.kind.repetition();

        if self.enc_rnd_offset.is_some() != (order == Order::Rotated) {
            return bad(format!("rotation offset presence does not match {}", self.kind));
        }
        if self.bs_max.is_some() != (repetition == Repetition::Smoothing) {
            return bad(format!("bs_max presence does not match {}", self.kind));
        }
        if self.bs_max == Some(0) {
            return bad("bs_max must be positive".into());
        }
        if self.av.len() > MAX_ROWS {
            return bad(format!("{} rows exceed the maximum", self.av.len()));
        }
        if let Some(ev) = self.enc_dict.iter().find(|ev| ev.body.len() > self.max_len) {
            return bad(format!(
                "dictionary entry of {} bytes exceeds max_len {}",
                ev.body.len(),
                self.max_len
            ));
        }
        let dict_len = self.enc_dict.len();
        if let Some(&vid) = self.av.vids.iter().find(|&&v| v as usize >= dict_len) {
            return bad(format!("ValueID {vid} out of range for {dict_len} entries"));
        }

        let hist = self.av.histogram(dict_len);
        if hist.contains(&0) {
            return bad("dictionary entry never referenced by the attribute vector".into());
        }
        match repetition {
            Repetition::Revealing => {}
            Repetition::Smoothing => {
                let bs_max = u64::from(self.bs_max.unwrap_or(1));
                if let Some(c) = hist.iter().find(|&&c| c > bs_max) {
                    return bad(format!("ValueID used {c} times, above bs_max {bs_max}"));
                }
            }
            Repetition::Hiding => {
                if dict_len != self.av.len() {
                    return bad(format!(
                        "frequency hiding needs |D| = |AV|, got {dict_len} and {}",
                        self.av.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One end of a search range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    NegInf,
    Included(Vec<u8>),
    Excluded(Vec<u8>),
    PosInf,
}

impl Endpoint {
    pub fn literal(&self) -> Option<&[u8]> {
        match self {
            Endpoint::Included(v) | Endpoint::Excluded(v) => Some(v),
            _ => None,
        }
    }
}

/// A range filter over bytewise-lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SearchRange {
    pub lo: Endpoint,
    pub hi: Endpoint,
}

impl SearchRange {
    pub fn new(lo: Endpoint, hi: Endpoint) -> Result<Self> {
        if let (Some(a), Some(b)) = (lo.literal(), hi.literal()) {
            if a > b {
                return Err(Error::InvalidRange(format!(
                    "lower bound {:?} above upper bound {:?}",
                    String::from_utf8_lossy(a),
                    String::from_utf8_lossy(b)
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn closed(lo: impl Into<Vec<u8>>, hi: impl Into<Vec<u8>>) -> Result<Self> {
        Self::new(Endpoint::Included(lo.into()), Endpoint::Included(hi.into()))
    }

    pub fn all() -> Self {
        Self {
            lo: Endpoint::NegInf,
            hi: Endpoint::PosInf,
        }
    }

    pub fn above_lower(&self, v: &[u8]) -> bool {
        match &self.lo {
            Endpoint::NegInf => true,
            Endpoint::Included(b) => v >= b.as_slice(),
            Endpoint::Excluded(b) => v > b.as_slice(),
            Endpoint::PosInf => false,
        }
    }

    pub fn below_upper(&self, v: &[u8]) -> bool {
        match &self.hi {
            Endpoint::NegInf => false,
            Endpoint::Included(b) => v <= b.as_slice(),
            Endpoint::Excluded(b) => v < b.as_slice(),
            Endpoint::PosInf => true,
        }
    }

    pub fn contains(&self, v: &[u8]) -> bool {
        self.above_lower(v) && self.below_upper(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (PlainColumn, Dictionary, AttributeVector) {
        let col =
            PlainColumn::from_values(["Jessica", "Archie", "Jessica", "Jessica", "Hans", "Archie"])
                .unwrap();
        let d = Dictionary {
            entries: vec![b"Hans".to_vec(), b"Jessica".to_vec(), b"Archie".to_vec()],
        };
        let av = AttributeVector {
            vids: vec![1, 2, 1, 1, 0, 2],
        };
        (col, d, av)
    }

    #[test]
    fn unique_values_of_sample() {
        let (col, _, _) = sample();
        let un = unique_values(&col);
        let expected: BTreeSet<Vec<u8>> = [&b"Hans"[..], b"Jessica", b"Archie"]
            .iter()
            .map(|v| v.to_vec())
            .collect();
        assert_eq!(un, expected);
    }

    #[test]
    fn unique_values_degenerate() {
        let empty = PlainColumn::new(vec![], 4).unwrap();
        assert!(unique_values(&empty).is_empty());
        let same = PlainColumn::from_values(vec!["x"; 7]).unwrap();
        assert_eq!(unique_values(&same).len(), 1);
    }

    #[test]
    fn occurrences_of_sample() {
        let (col, _, _) = sample();
        assert_eq!(occurrences(&col, b"Archie"), vec![1, 5]);
        assert_eq!(occurrences(&col, b"Jessica"), vec![0, 2, 3]);
        assert!(occurrences(&col, b"Zoe").is_empty());
    }

    #[test]
    fn verify_split_sample() {
        let (col, d, mut av) = sample();
        assert!(verify_split(&col, &d, &av));
        av.vids[0] = 0;
        assert!(!verify_split(&col, &d, &av));
    }

    #[test]
    fn verify_split_rejects_length_mismatch() {
        let (col, d, mut av) = sample();
        av.vids.pop();
        assert!(!verify_split(&col, &d, &av));
    }

    #[test]
    fn column_rejects_over_length_values() {
        let err = PlainColumn::new(vec![b"abcdef".to_vec()], 3).unwrap_err();
        assert!(matches!(err, Error::Length { len: 6, max: 3 }));
    }

    #[test]
    fn kind_numbers_follow_the_grid() {
        for n in 1..=9u8 {
            let k = EdKind::from_number(n).unwrap();
            assert_eq!(k.number(), n);
        }
        assert_eq!(EdKind::ED1.repetition(), Repetition::Revealing);
        assert_eq!(EdKind::ED1.order(), Order::Sorted);
        assert_eq!(EdKind::ED5.repetition(), Repetition::Smoothing);
        assert_eq!(EdKind::ED5.order(), Order::Rotated);
        assert_eq!(EdKind::ED9.repetition(), Repetition::Hiding);
        assert_eq!(EdKind::ED9.order(), Order::Unsorted);
        assert_eq!(EdKind::from_number(0), Some(EdKind::Plain));
        assert_eq!(EdKind::from_number(10), None);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("4".parse::<EdKind>().unwrap(), EdKind::ED4);
        assert_eq!("ED8".parse::<EdKind>().unwrap(), EdKind::ED8);
        assert_eq!("plain".parse::<EdKind>().unwrap(), EdKind::Plain);
        assert!("0".parse::<EdKind>().is_err());
        assert!("ed10".parse::<EdKind>().is_err());
    }

    #[test]
    fn range_membership() {
        let r = SearchRange::new(Endpoint::NegInf, Endpoint::Excluded(b"Ella".to_vec())).unwrap();
        assert!(r.contains(b"Archie"));
        assert!(r.contains(b""));
        assert!(!r.contains(b"Ella"));
        assert!(!r.contains(b"Hans"));
        assert!(SearchRange::closed("C", "A").is_err());
    }

    #[test]
    fn encrypted_value_bytes_round_trip() {
        let ev = EncryptedValue {
            nonce: [7; NONCE_LEN],
            body: b"abc".to_vec(),
            tag: [9; TAG_LEN],
        };
        let bytes = ev.to_bytes();
        assert_eq!(bytes.len(), 31);
        assert_eq!(EncryptedValue::from_bytes(&bytes), Some(ev));
        assert_eq!(EncryptedValue::from_bytes(&bytes[..20]), None);
    }
}
