// SPDX-License-Identifier: Apache-2.0

//! The trusted side of a query: decrypts a range token, pulls encrypted
//! dictionary entries one at a time through an [`UntrustedLoader`], and
//! answers with the matching ValueIDs.

use std::cell::Cell;
use std::ops::Deref;

use num_bigint::BigUint;
use num_traits::Zero;

use crate::crypto::{EntryCipher, MasterKey};
use crate::encoding;
use crate::error::{Error, Result};
use crate::model::{EdKind, EncryptedValue, Endpoint, Order, SearchRange, ValueId};

/// Host-side access to an encrypted dictionary.
pub trait UntrustedLoader {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> EncryptedValue;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl UntrustedLoader for [EncryptedValue] {
    fn len(&self) -> usize {
        <[EncryptedValue]>::len(self)
    }

    fn load(&self, index: usize) -> EncryptedValue {
        self[index].clone()
    }
}

impl UntrustedLoader for Vec<EncryptedValue> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> EncryptedValue {
        self[index].clone()
    }
}

/// Wraps a loader and counts every load.
pub struct CountingLoader<'a, L: UntrustedLoader + ?Sized> {
    inner: &'a L,
    loads: Cell<u64>,
}

impl<'a, L: UntrustedLoader + ?Sized> CountingLoader<'a, L> {
    pub fn new(inner: &'a L) -> Self {
        Self {
            inner,
            loads: Cell::new(0),
        }
    }

    pub fn loads(&self) -> u64 {
        self.loads.get()
    }
}

impl<L: UntrustedLoader + ?Sized> UntrustedLoader for CountingLoader<'_, L> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn load(&self, index: usize) -> EncryptedValue {
        self.loads.set(self.loads.get() + 1);
        self.inner.load(index)
    }
}

/// Inclusive ValueID interval; `DUMMY` marks an unused slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VidRange {
    pub lo: ValueId,
    pub hi: ValueId,
}

impl VidRange {
    pub const DUMMY: VidRange = VidRange {
        lo: ValueId::MAX,
        hi: ValueId::MAX,
    };

    pub fn new(lo: ValueId, hi: ValueId) -> Self {
        debug_assert!(lo <= hi && hi != ValueId::MAX);
        Self { lo, hi }
    }

    pub fn is_dummy(&self) -> bool {
        *self == Self::DUMMY
    }

    pub fn contains(&self, vid: ValueId) -> bool {
        !self.is_dummy() && self.lo <= vid && vid <= self.hi
    }
}

/// Enclave answer: up to two ValueID ranges, or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VidSelection {
    Ranges { first: VidRange, second: VidRange },
    List(Vec<ValueId>),
}

impl VidSelection {
    pub fn empty_ranges() -> Self {
        VidSelection::Ranges {
            first: VidRange::DUMMY,
            second: VidRange::DUMMY,
        }
    }

    fn single(lo: usize, hi: usize) -> Self {
        VidSelection::Ranges {
            first: VidRange::new(lo as ValueId, hi as ValueId),
            second: VidRange::DUMMY,
        }
    }

    /// Every selected ValueID in ascending order.
    pub fn vids(&self) -> Vec<ValueId> {
        match self {
            VidSelection::List(v) => v.clone(),
            VidSelection::Ranges { first, second } => {
                let mut out = Vec::new();
                for r in [first, second] {
                    if !r.is_dummy() {
                        out.extend(r.lo..=r.hi);
                    }
                }
                out.sort_unstable();
                out
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            VidSelection::List(v) => v.is_empty(),
            VidSelection::Ranges { first, second } => first.is_dummy() && second.is_dummy(),
        }
    }

    /// Checks the selection against a dictionary of `dict_len` entries.
    pub fn is_valid_for(&self, dict_len: usize) -> bool {
        match self {
            VidSelection::List(v) => {
                v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&x| (x as usize) < dict_len)
            }
            VidSelection::Ranges { first, second } => [first, second]
                .iter()
                .all(|r| r.is_dummy() || (r.lo <= r.hi && (r.hi as usize) < dict_len)),
        }
    }
}

/// Range endpoints, each encrypted under the column key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedRangeToken {
    pub lo: EncryptedValue,
    pub hi: EncryptedValue,
}

const TAG_NEG_INF: u8 = 0x00;
const TAG_INCLUDED: u8 = 0x01;
const TAG_EXCLUDED: u8 = 0x02;
const TAG_POS_INF: u8 = 0x03;

/// Token plaintext for one endpoint: tag byte, literal, zero padding up to
/// `1 + max_len` bytes.
pub fn endpoint_payload(e: &Endpoint, max_len: usize) -> Result<Vec<u8>> {
    let (tag, literal): (u8, &[u8]) = match e {
        Endpoint::NegInf => (TAG_NEG_INF, &[]),
        Endpoint::Included(v) => (TAG_INCLUDED, v),
        Endpoint::Excluded(v) => (TAG_EXCLUDED, v),
        Endpoint::PosInf => (TAG_POS_INF, &[]),
    };
    encoding::validate(literal, max_len)?;
    let mut out = Vec::with_capacity(1 + max_len);
    out.push(tag);
    out.extend_from_slice(literal);
    out.resize(1 + max_len, 0);
    Ok(out)
}

/// Inverse of [`endpoint_payload`]; also returns the column's `max_len`.
pub fn parse_endpoint_payload(payload: &[u8]) -> Result<(Endpoint, usize)> {
    let (&tag, rest) = payload
        .split_first()
        .ok_or_else(|| Error::Token("empty endpoint".into()))?;
    let max_len = rest.len();
    let end = rest.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
    let literal = &rest[..end];
    encoding::validate(literal, max_len).map_err(|e| Error::Token(e.to_string()))?;
    let endpoint = match tag {
        TAG_NEG_INF | TAG_POS_INF if !literal.is_empty() => {
            return Err(Error::Token("unbounded endpoint carries a literal".into()))
        }
        TAG_NEG_INF => Endpoint::NegInf,
        TAG_POS_INF => Endpoint::PosInf,
        TAG_INCLUDED => Endpoint::Included(literal.to_vec()),
        TAG_EXCLUDED => Endpoint::Excluded(literal.to_vec()),
        other => return Err(Error::Token(format!("unknown tag byte 0x{other:02x}"))),
    };
    Ok((endpoint, max_len))
}

/// Tracks how many decrypted dictionary values the enclave holds at once.
#[derive(Debug, Default)]
struct Meter {
    held: Cell<usize>,
    peak: Cell<usize>,
}

impl Meter {
    fn hold(&self, value: Vec<u8>) -> Held<'_> {
        let now = self.held.get() + 1;
        self.held.set(now);
        self.peak.set(self.peak.get().max(now));
        Held { meter: self, value }
    }
}

struct Held<'m> {
    meter: &'m Meter,
    value: Vec<u8>,
}

impl Deref for Held<'_> {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.value
    }
}

impl Drop for Held<'_> {
    fn drop(&mut self) {
        self.meter.held.set(self.meter.held.get() - 1);
    }
}

/// Per-invocation instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchTrace {
    pub loads: u64,
    /// Most decrypted dictionary values held simultaneously.
    pub peak_held: usize,
}

struct Ctx<'a, L: UntrustedLoader + ?Sized> {
    loader: &'a L,
    cipher: &'a EntryCipher,
    meter: Meter,
    loads: Cell<u64>,
}

impl<'a, L: UntrustedLoader + ?Sized> Ctx<'a, L> {
    fn new(loader: &'a L, cipher: &'a EntryCipher) -> Self {
        Self {
            loader,
            cipher,
            meter: Meter::default(),
            loads: Cell::new(0),
        }
    }

    fn fetch(&self, i: usize) -> Result<Held<'_>> {
        self.loads.set(self.loads.get() + 1);
        let c = self.loader.load(i);
        Ok(self.meter.hold(self.cipher.open(&c)?))
    }

    /// First index in `0..n` where `pred` holds, assuming `pred` is
    /// monotone (false then true) over the dictionary.
    fn partition<F>(&self, mut pred: F) -> Result<usize>
    where
        F: FnMut(usize, &[u8]) -> Result<bool>,
    {
        let (mut l, mut h) = (0usize, self.loader.len());
        while l < h {
            let mid = l + (h - l) / 2;
            let v = self.fetch(mid)?;
            if pred(mid, &v)? {
                h = mid;
            } else {
                l = mid + 1;
            }
        }
        Ok(l)
    }

    fn trace(&self) -> SearchTrace {
        SearchTrace {
            loads: self.loads.get(),
            peak_held: self.meter.peak.get(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialMode {
    Start,
    End,
}

/// Simulated trusted module holding the master key.
pub struct Enclave {
    mk: MasterKey,
}

impl Enclave {
    pub fn new(mk: MasterKey) -> Self {
        Self { mk }
    }

    fn decode_token(&self, cipher: &EntryCipher, token: &EncryptedRangeToken) -> Result<(SearchRange, usize)> {
        let (lo, lo_len) = parse_endpoint_payload(&cipher.open(&token.lo)?)?;
        let (hi, hi_len) = parse_endpoint_payload(&cipher.open(&token.hi)?)?;
        if lo_len != hi_len {
            return Err(Error::Token("endpoint payloads differ in length".into()));
        }
        if let (Some(a), Some(b)) = (lo.literal(), hi.literal()) {
            if a > b {
                return Err(Error::Token("lower endpoint above upper endpoint".into()));
            }
        }
        Ok((SearchRange { lo, hi }, lo_len))
    }

    /// Answers a range token against one encrypted dictionary.
    pub fn dict_search<L: UntrustedLoader + ?Sized>(
        &self,
        kind: EdKind,
        token: &EncryptedRangeToken,
        loader: &L,
        enc_rnd_offset: Option<&EncryptedValue>,
        table: &str,
        column: &str,
    ) -> Result<(VidSelection, SearchTrace)> {
        let cipher = EntryCipher::for_column(kind, &self.mk, table, column);
        let (range, max_len) = self.decode_token(&cipher, token)?;
        let ctx = Ctx::new(loader, &cipher);
        let sel = match kind.order() {
            Order::Sorted => search_sorted(&ctx, &range)?,
            Order::Unsorted => search_unsorted(&ctx, &range)?,
            Order::Rotated => {
                let enc = enc_rnd_offset
                    .ok_or_else(|| Error::format("store", "rotated dictionary without an offset"))?;
                let offset = decode_offset(&cipher.open(enc)?, loader.len())?;
                search_rotated(&ctx, &range, offset, max_len)?
            }
        };
        debug_assert!(sel.is_valid_for(loader.len()));
        Ok((sel, ctx.trace()))
    }

    /// Modular binary search relative to the first dictionary entry:
    /// `Start` finds the first index whose shifted encoding is not below
    /// `s_val`'s, `End` the last index whose shifted encoding is not above
    /// it (`-1` when none).
    #[allow(clippy::too_many_arguments)]
    pub fn bin_search_special<L: UntrustedLoader + ?Sized>(
        &self,
        kind: EdKind,
        loader: &L,
        s_val: &[u8],
        max_len: usize,
        mode: SpecialMode,
        table: &str,
        column: &str,
    ) -> Result<i64> {
        let cipher = EntryCipher::for_column(kind, &self.mk, table, column);
        let ctx = Ctx::new(loader, &cipher);
        let n_mod = encoding::domain_max(max_len);
        let anchor = encoding::encode(&ctx.fetch(0)?, max_len)?;
        let target = encoding::mod_shift(&encoding::encode(s_val, max_len)?, &anchor, &n_mod);
        let l = ctx.partition(|_, v| {
            let k = encoding::mod_shift(&encoding::encode(v, max_len)?, &anchor, &n_mod);
            Ok(match mode {
                SpecialMode::Start => k >= target,
                SpecialMode::End => k > target,
            })
        })?;
        Ok(match mode {
            SpecialMode::Start => l as i64,
            SpecialMode::End => l as i64 - 1,
        })
    }
}

fn decode_offset(payload: &[u8], n: usize) -> Result<u64> {
    let bytes: [u8; 8] = payload
        .try_into()
        .map_err(|_| Error::format("store", "rotation offset is not 8 bytes"))?;
    let off = u64::from_be_bytes(bytes);
    if n > 0 && off >= n as u64 || n == 0 && off != 0 {
        return Err(Error::format("store", format!("rotation offset {off} out of range")));
    }
    Ok(off)
}

fn search_sorted<L: UntrustedLoader + ?Sized>(ctx: &Ctx<'_, L>, range: &SearchRange) -> Result<VidSelection> {
    let n = ctx.loader.len();
    let vid_min = ctx.partition(|_, v| Ok(range.above_lower(v)))?;
    let past_max = ctx.partition(|_, v| Ok(!range.below_upper(v)))?;
    if n == 0 || vid_min >= past_max {
        return Ok(VidSelection::empty_ranges());
    }
    Ok(VidSelection::single(vid_min, past_max - 1))
}

fn search_unsorted<L: UntrustedLoader + ?Sized>(ctx: &Ctx<'_, L>, range: &SearchRange) -> Result<VidSelection> {
    let mut out = Vec::new();
    for i in 0..ctx.loader.len() {
        let v = ctx.fetch(i)?;
        if range.contains(&v) {
            out.push(i as ValueId);
        }
    }
    Ok(VidSelection::List(out))
}

/// Encoding interval `[a, b]` covered by `range`, or `None` if empty.
fn encoded_interval(range: &SearchRange, max_len: usize, n_mod: &BigUint) -> Result<Option<(BigUint, BigUint)>> {
    let enc = |v: &[u8]| encoding::encode(v, max_len).map_err(|e| Error::Token(e.to_string()));
    let a = match &range.lo {
        Endpoint::NegInf => BigUint::zero(),
        Endpoint::Included(v) => enc(v)?,
        Endpoint::Excluded(v) => enc(v)? + 1u32,
        Endpoint::PosInf => return Ok(None),
    };
    let b = match &range.hi {
        Endpoint::NegInf => return Ok(None),
        Endpoint::Included(v) => enc(v)?,
        Endpoint::Excluded(v) => {
            let e = enc(v)?;
            if e.is_zero() {
                return Ok(None);
            }
            e - 1u32
        }
        Endpoint::PosInf => n_mod - 1u32,
    };
    Ok((a <= b).then_some((a, b)))
}

fn search_rotated<L: UntrustedLoader + ?Sized>(ctx: &Ctx<'_, L>, range: &SearchRange, offset: u64, max_len: usize) -> Result<VidSelection> {
    let n = ctx.loader.len();
    if n == 0 {
        return Ok(VidSelection::empty_ranges());
    }
    let n_mod = encoding::domain_max(max_len);
    let Some((a, b)) = encoded_interval(range, max_len, &n_mod)? else {
        return Ok(VidSelection::empty_ranges());
    };
    let anchor_value = ctx.fetch(0)?;
    let r = encoding::encode(&anchor_value, max_len)?;

    // Shifted encodings are nondecreasing along the rotated dictionary,
    // except that entries equal to the anchor on the far side of the wrap
    // would map to 0; they are keyed past every other entry instead.
    let key = |j: usize, v: &[u8]| -> Result<BigUint> {
        let e = encoding::encode(v, max_len)?;
        if offset > 0 && j as u64 >= offset && e == r {
            Ok(n_mod.clone())
        } else {
            Ok(encoding::mod_shift(&e, &r, &n_mod))
        }
    };
    let first_at_least = |t: &BigUint| ctx.partition(|j, v| Ok(key(j, v)? >= *t));
    let last_at_most = |t: &BigUint| -> Result<i64> {
        Ok(ctx.partition(|j, v| Ok(key(j, v)? > *t))? as i64 - 1)
    };
    let span = |lo: usize, hi: i64| {
        if hi < lo as i64 {
            VidSelection::empty_ranges()
        } else {
            VidSelection::single(lo, hi as usize)
        }
    };

    if a <= r && r <= b {
        let end = last_at_most(&(&b - &r))?;
        let start = first_at_least(&(&n_mod - &r + &a))?;
        let first = VidRange::new(0, end as ValueId);
        let second = if start < n {
            VidRange::new(start as ValueId, (n - 1) as ValueId)
        } else {
            VidRange::DUMMY
        };
        Ok(VidSelection::Ranges { first, second })
    } else if r < a {
        let lo = first_at_least(&(&a - &r))?;
        let hi = last_at_most(&(&b - &r))?;
        Ok(span(lo, hi))
    } else {
        let lo = first_at_least(&(&n_mod - &r + &a))?;
        let hi = last_at_most(&(&n_mod - &r + &b))?;
        Ok(span(lo, hi))
    }
}
