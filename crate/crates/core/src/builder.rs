// SPDX-License-Identifier: Apache-2.0

//! Builds encrypted dictionaries: split a column according to the repetition
//! option, arrange the dictionary according to the order option, encrypt.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};

use crate::crypto::{EntryCipher, MasterKey};
use crate::encoding;
use crate::error::{Error, Result};
use crate::model::{
    AttributeVector, Dictionary, EdKind, EncodedColumnStore, Order, PlainColumn, Repetition,
    ValueId,
};

/// Bucket sizes drawn for one distinct value under frequency smoothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketPlan {
    pub sizes: Vec<u64>,
}

impl BucketPlan {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildParams {
    pub kind: EdKind,
    /// Maximal bucket size; required by the smoothing kinds and rejected by
    /// every other kind.
    pub bs_max: Option<u32>,
}

impl BuildParams {
    pub fn new(kind: EdKind) -> Self {
        Self { kind, bs_max: None }
    }

    pub fn smoothing(kind: EdKind, bs_max: u32) -> Self {
        Self {
            kind,
            bs_max: Some(bs_max),
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.kind.repetition(), self.bs_max) {
            (Repetition::Smoothing, None) => Err(Error::InvalidParams(format!(
                "{} needs a maximal bucket size",
                self.kind
            ))),
            (Repetition::Smoothing, Some(0)) => {
                Err(Error::InvalidParams("bs_max must be at least 1".into()))
            }
            (Repetition::Smoothing, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidParams(format!(
                "bs_max only applies to frequency smoothing kinds, not {}",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }
}

/// Plaintext dictionary arrangement before encryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainLayout {
    pub dict: Dictionary,
    pub av: AttributeVector,
    /// Rotation applied to the sorted dictionary, rotated kinds only.
    pub rnd_offset: Option<u64>,
}

/// Draws bucket sizes uniformly from `1..=bs_max` until they cover
/// `occ_count`, then trims the last bucket so the sizes sum to exactly
/// `occ_count`.
pub fn get_rnd_bucket_sizes<R: Rng + ?Sized>(occ_count: u64, bs_max: u32, rng: &mut R) -> BucketPlan {
    assert!(bs_max >= 1, "bs_max must be positive");
    let mut sizes = Vec::new();
    let mut total = 0u64;
    let mut prev_total = 0u64;
    while total < occ_count {
        let rnd = u64::from(rng.gen_range(1..=bs_max));
        sizes.push(rnd);
        prev_total = total;
        total += rnd;
    }
    if let Some(last) = sizes.last_mut() {
        *last = occ_count - prev_total;
    }
    BucketPlan { sizes }
}

/// Distinct values in first-occurrence order with their row positions.
fn group_rows(col: &PlainColumn) -> Vec<(&[u8], Vec<usize>)> {
    let mut index: HashMap<&[u8], usize> = HashMap::new();
    let mut groups: Vec<(&[u8], Vec<usize>)> = Vec::new();
    for (rid, v) in col.values().iter().enumerate() {
        let g = *index.entry(v.as_slice()).or_insert_with(|| {
            groups.push((v.as_slice(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(rid);
    }
    groups
}

/// One dictionary entry per distinct value.
pub fn split_revealing(col: &PlainColumn) -> (Dictionary, AttributeVector) {
    let mut vids = vec![0 as ValueId; col.len()];
    let mut entries = Vec::new();
    for (vid, (value, rows)) in group_rows(col).into_iter().enumerate() {
        entries.push(value.to_vec());
        for rid in rows {
            vids[rid] = vid as ValueId;
        }
    }
    (Dictionary { entries }, AttributeVector { vids })
}

/// Each distinct value is repeated once per bucket; each bucket's ValueID
/// is used exactly as many times as its size.
pub fn split_smoothing<R: Rng + ?Sized>(
    col: &PlainColumn,
    bs_max: u32,
    rng: &mut R,
) -> (Dictionary, AttributeVector) {
    let mut vids = vec![0 as ValueId; col.len()];
    let mut entries = Vec::new();
    for (value, rows) in group_rows(col) {
        let plan = get_rnd_bucket_sizes(rows.len() as u64, bs_max, rng);
        let base = entries.len() as ValueId;
        let mut slots: Vec<ValueId> = Vec::with_capacity(rows.len());
        for (b, &size) in plan.sizes.iter().enumerate() {
            entries.push(value.to_vec());
            slots.extend(std::iter::repeat_n(base + b as ValueId, size as usize));
        }
        slots.shuffle(rng);
        for (rid, vid) in rows.into_iter().zip(slots) {
            vids[rid] = vid;
        }
    }
    (Dictionary { entries }, AttributeVector { vids })
}

/// One dictionary entry per row; rows holding equal values are matched to
/// their candidate entries at random.
pub fn split_hiding<R: Rng + ?Sized>(col: &PlainColumn, rng: &mut R) -> (Dictionary, AttributeVector) {
    let entries = col.values().to_vec();
    let mut vids = vec![0 as ValueId; col.len()];
    for (_, rows) in group_rows(col) {
        let mut targets = rows.clone();
        targets.shuffle(rng);
        for (rid, vid) in rows.into_iter().zip(targets) {
            vids[rid] = vid as ValueId;
        }
    }
    (Dictionary { entries }, AttributeVector { vids })
}

/// Reorders the dictionary so that `new_order[i]` becomes entry `i`, and
/// rewrites the attribute vector accordingly.
fn permute(d: Dictionary, av: AttributeVector, new_order: &[usize]) -> (Dictionary, AttributeVector) {
    let mut old_to_new = vec![0 as ValueId; new_order.len()];
    for (new, &old) in new_order.iter().enumerate() {
        old_to_new[old] = new as ValueId;
    }
    let mut old_entries: Vec<Option<Vec<u8>>> = d.entries.into_iter().map(Some).collect();
    let entries = new_order
        .iter()
        .map(|&old| old_entries[old].take().expect("permutation"))
        .collect();
    let vids = av.vids.into_iter().map(|v| old_to_new[v as usize]).collect();
    (Dictionary { entries }, AttributeVector { vids })
}

/// Lexicographic order; runs of equal values are ordered at random.
pub fn arrange_sorted<R: Rng + ?Sized>(
    d: Dictionary,
    av: AttributeVector,
    rng: &mut R,
) -> (Dictionary, AttributeVector) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| d.entries[a].cmp(&d.entries[b]));
    permute(d, av, &order)
}

/// Cyclically shifts an arrangement: entry `j` moves to `(j + offset) mod |D|`.
pub fn rotate(d: Dictionary, av: AttributeVector, offset: u64) -> (Dictionary, AttributeVector) {
    let n = d.len();
    if n == 0 {
        return (d, av);
    }
    let shift = (offset % n as u64) as usize;
    let order: Vec<usize> = (0..n).map(|i| (i + n - shift) % n).collect();
    permute(d, av, &order)
}

/// Sorts, then rotates by a uniformly drawn offset in `0..|D|`.
pub fn arrange_rotated<R: Rng + ?Sized>(
    d: Dictionary,
    av: AttributeVector,
    rng: &mut R,
) -> (Dictionary, AttributeVector, u64) {
    let (d, av) = arrange_sorted(d, av, rng);
    let offset = if d.is_empty() {
        0
    } else {
        rng.gen_range(0..d.len() as u64)
    };
    let (d, av) = rotate(d, av, offset);
    (d, av, offset)
}

/// Sorts, then rotates by a caller-chosen offset.
pub fn arrange_rotated_with_offset<R: Rng + ?Sized>(
    d: Dictionary,
    av: AttributeVector,
    offset: u64,
    rng: &mut R,
) -> (Dictionary, AttributeVector) {
    let (d, av) = arrange_sorted(d, av, rng);
    rotate(d, av, offset)
}

/// Uniformly random permutation of the dictionary.
pub fn arrange_unsorted<R: Rng + ?Sized>(
    d: Dictionary,
    av: AttributeVector,
    rng: &mut R,
) -> (Dictionary, AttributeVector) {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(rng);
    permute(d, av, &order)
}

/// Split and arrange `col` for `params.kind` without encrypting.
pub fn layout<R: Rng + ?Sized>(col: &PlainColumn, params: &BuildParams, rng: &mut R) -> Result<PlainLayout> {
    params.validate()?;
    let (d, av) = match params.kind.repetition() {
        Repetition::Revealing => split_revealing(col),
        Repetition::Smoothing => split_smoothing(col, params.bs_max.expect("validated"), rng),
        Repetition::Hiding => split_hiding(col, rng),
    };
    Ok(match params.kind.order() {
        Order::Sorted => {
            let (dict, av) = arrange_sorted(d, av, rng);
            PlainLayout {
                dict,
                av,
                rnd_offset: None,
            }
        }
        Order::Rotated => {
            let (dict, av, offset) = arrange_rotated(d, av, rng);
            PlainLayout {
                dict,
                av,
                rnd_offset: Some(offset),
            }
        }
        Order::Unsorted => {
            let (dict, av) = arrange_unsorted(d, av, rng);
            PlainLayout {
                dict,
                av,
                rnd_offset: None,
            }
        }
    })
}

/// Where and how a column is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub kind: EdKind,
    pub bs_max: Option<u32>,
    pub max_len: usize,
    pub table: String,
    pub column: String,
}

/// Encrypts every dictionary entry (and the rotation offset, if any) under
/// the column key with fresh nonces.
pub fn seal<R: RngCore + CryptoRng>(
    layout: PlainLayout,
    meta: ColumnMeta,
    mk: &MasterKey,
    rng: &mut R,
) -> EncodedColumnStore {
    let cipher = EntryCipher::for_column(meta.kind, mk, &meta.table, &meta.column);
    let enc_dict = layout.dict.entries.iter().map(|v| cipher.seal(rng, v)).collect();
    let enc_rnd_offset = layout
        .rnd_offset
        .map(|off| cipher.seal(rng, &off.to_be_bytes()));
    EncodedColumnStore {
        kind: meta.kind,
        enc_dict,
        av: layout.av,
        max_len: meta.max_len,
        bs_max: meta.bs_max,
        enc_rnd_offset,
        table_name: meta.table,
        column_name: meta.column,
    }
}

/// Full build of one column for the kind in `params`.
pub fn build<R: RngCore + CryptoRng>(
    col: &PlainColumn,
    params: &BuildParams,
    mk: &MasterKey,
    table: &str,
    column: &str,
    rng: &mut R,
) -> Result<EncodedColumnStore> {
    if table.is_empty() || column.is_empty() {
        return Err(Error::InvalidParams("table and column names must be non-empty".into()));
    }
    if col.max_len() > u16::MAX as usize {
        return Err(Error::InvalidParams(format!(
            "max_len {} exceeds {}",
            col.max_len(),
            u16::MAX
        )));
    }
    for v in col.values() {
        encoding::validate(v, col.max_len())?;
    }
    let layout = layout(col, params, rng)?;
    let meta = ColumnMeta {
        kind: params.kind,
        bs_max: params.bs_max,
        max_len: col.max_len(),
        table: table.to_string(),
        column: column.to_string(),
    };
    Ok(seal(layout, meta, mk, rng))
}
