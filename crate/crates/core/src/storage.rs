// SPDX-License-Identifier: Apache-2.0

//! On-disk layout of a column store.
//!
//! A store directory holds `meta`, `dict_head`, `dict_tail`, `av` and,
//! for dynamic columns, `validity`. The delta store of a dynamic column
//! lives in the `delta` subdirectory. All integers are little-endian.
//!
//! ```text
//! meta      "EDBD" | version u16 | kind u8 | max_len u16 | bs_max u32
//!           | rows u64 | dict u64 | offset_len u32 offset_bytes
//!           | table_len u16 table | column_len u16 column
//! dict_head (tail_offset u64 | length u64) per ValueID
//! dict_tail nonce | body | tag per entry, in random order
//! av        u32 per row
//! validity  one byte (0 or 1) per row
//! ```

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::delta::DynamicColumn;
use crate::error::{Error, Result};
use crate::model::{AttributeVector, EdKind, EncodedColumnStore, EncryptedValue, Repetition, NONCE_LEN, TAG_LEN};

pub const MAGIC: &[u8; 4] = b"EDBD";
pub const VERSION: u16 = 1;
pub const META: &str = "meta";
pub const DICT_HEAD: &str = "dict_head";
pub const DICT_TAIL: &str = "dict_tail";
pub const AV: &str = "av";
pub const VALIDITY: &str = "validity";
pub const DELTA_DIR: &str = "delta";

const HEAD_ENTRY: usize = 16;

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(|e| Error::io(dir, e))
}

fn encode_meta(store: &EncodedColumnStore) -> Result<Vec<u8>> {
    let max_len = u16::try_from(store.max_len)
        .map_err(|_| Error::InvalidParams(format!("max_len {} does not fit the format", store.max_len)))?;
    let name = |s: &str| -> Result<(u16, Vec<u8>)> {
        let len = u16::try_from(s.len()).map_err(|_| Error::InvalidParams(format!("name {s:?} is too long")))?;
        Ok((len, s.as_bytes().to_vec()))
    };
    let mut m = Vec::new();
    m.extend_from_slice(MAGIC);
    m.extend_from_slice(&VERSION.to_le_bytes());
    m.push(store.kind.number());
    m.extend_from_slice(&max_len.to_le_bytes());
    m.extend_from_slice(&store.bs_max.unwrap_or(0).to_le_bytes());
    m.extend_from_slice(&(store.row_count() as u64).to_le_bytes());
    m.extend_from_slice(&(store.dict_len() as u64).to_le_bytes());
    let off = store.enc_rnd_offset.as_ref().map(EncryptedValue::to_bytes).unwrap_or_default();
    m.extend_from_slice(&(off.len() as u32).to_le_bytes());
    m.extend_from_slice(&off);
    for s in [&store.table_name, &store.column_name] {
        let (len, bytes) = name(s)?;
        m.extend_from_slice(&len.to_le_bytes());
        m.extend_from_slice(&bytes);
    }
    Ok(m)
}

/// Serialized files of one store, keyed by file name.
pub fn encode_files<R: Rng + ?Sized>(
    store: &EncodedColumnStore,
    validity: Option<&[bool]>,
    rng: &mut R,
) -> Result<Vec<(&'static str, Vec<u8>)>> {
    store.check_invariants()?;
    let meta = encode_meta(store)?;

    let mut placement: Vec<usize> = (0..store.dict_len()).collect();
    placement.shuffle(rng);
    let mut tail = Vec::new();
    let mut spans = vec![(0u64, 0u64); store.dict_len()];
    for vid in placement {
        let start = tail.len() as u64;
        store.enc_dict[vid].write_to(&mut tail);
        spans[vid] = (start, tail.len() as u64 - start);
    }
    let mut head = Vec::with_capacity(HEAD_ENTRY * spans.len());
    for (off, len) in spans {
        head.extend_from_slice(&off.to_le_bytes());
        head.extend_from_slice(&len.to_le_bytes());
    }

    let av: Vec<u8> = store.av.vids.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut files = vec![(META, meta), (DICT_HEAD, head), (DICT_TAIL, tail), (AV, av)];
    if let Some(flags) = validity {
        if flags.len() != store.row_count() {
            return Err(Error::InvalidParams("validity length differs from row count".into()));
        }
        files.push((VALIDITY, flags.iter().map(|&b| u8::from(b)).collect()));
    }
    Ok(files)
}

/// Writes a store into `dir`, creating it if needed. Each file is replaced
/// atomically. Returns the number of bytes written.
pub fn save<R: Rng + ?Sized>(store: &EncodedColumnStore, dir: &Path, rng: &mut R) -> Result<u64> {
    save_with_validity(store, None, dir, rng)
}

pub fn save_with_validity<R: Rng + ?Sized>(
    store: &EncodedColumnStore,
    validity: Option<&[bool]>,
    dir: &Path,
    rng: &mut R,
) -> Result<u64> {
    let files = encode_files(store, validity, rng)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut total = 0u64;
    for (name, bytes) in &files {
        write_atomic(dir, name, bytes)?;
        total += bytes.len() as u64;
    }
    if validity.is_none() {
        let stale = dir.join(VALIDITY);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
    }
    sync_dir(dir)?;
    Ok(total)
}

/// Byte cursor over one file that reports errors against that file.
struct Reader<'a> {
    file: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(file: &'static str, buf: &'a [u8]) -> Self {
        Self { file, buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.file, format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.file, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

struct Meta {
    kind: EdKind,
    max_len: usize,
    bs_max: Option<u32>,
    rows: usize,
    dict: usize,
    enc_rnd_offset: Option<EncryptedValue>,
    table: String,
    column: String,
}

fn decode_meta(buf: &[u8]) -> Result<Meta> {
    let mut r = Reader::new(META, buf);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(META, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let kind_byte = r.u8("kind")?;
    let kind = EdKind::from_number(kind_byte)
        .ok_or_else(|| Error::format(META, format!("unknown kind {kind_byte}")))?;
    let max_len = r.u16("max_len")? as usize;
    let bs_max = match r.u32("bs_max")? {
        0 => None,
        b => Some(b),
    };
    let rows = r.u64("row_count")?;
    let dict = r.u64("dict_count")?;
    let to_usize = |v: u64, what: &str| usize::try_from(v).map_err(|_| Error::format(META, format!("{what} {v} too large")));
    let (rows, dict) = (to_usize(rows, "row_count")?, to_usize(dict, "dict_count")?);
    let off_len = r.u32("offset length")? as usize;
    let enc_rnd_offset = match off_len {
        0 => None,
        n => Some(
            EncryptedValue::from_bytes(r.take(n, "offset")?)
                .ok_or_else(|| Error::format(META, "rotation offset ciphertext too short"))?,
        ),
    };
    let mut name = |what: &str| -> Result<String> {
        let len = r.u16(what)? as usize;
        String::from_utf8(r.take(len, what)?.to_vec()).map_err(|_| Error::format(META, format!("{what} is not UTF-8")))
    };
    let table = name("table name")?;
    let column = name("column name")?;
    r.finish()?;
    if kind.repetition() != Repetition::Smoothing && bs_max.is_some() {
        return Err(Error::format(META, format!("bs_max set for {kind}")));
    }
    Ok(Meta {
        kind,
        max_len,
        bs_max,
        rows,
        dict,
        enc_rnd_offset,
        table,
        column,
    })
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let p = dir.join(name);
    fs::read(&p).map_err(|e| Error::io(p, e))
}

/// Parses a store from its files; no decryption happens.
pub fn decode_files(meta: &[u8], head: &[u8], tail: &[u8], av: &[u8]) -> Result<EncodedColumnStore> {
    let m = decode_meta(meta)?;

    if head.len() as u128 != m.dict as u128 * HEAD_ENTRY as u128 {
        return Err(Error::format(DICT_HEAD, format!("{} bytes for {} entries", head.len(), m.dict)));
    }
    if av.len() as u128 != m.rows as u128 * 4 {
        return Err(Error::format(AV, format!("{} bytes for {} rows", av.len(), m.rows)));
    }

    let mut spans = Vec::with_capacity(m.dict);
    let mut hr = Reader::new(DICT_HEAD, head);
    for vid in 0..m.dict {
        let off = hr.u64("offset")?;
        let len = hr.u64("length")?;
        let min = (NONCE_LEN + TAG_LEN) as u64;
        if len < min || len - min > m.max_len as u64 {
            return Err(Error::format(DICT_HEAD, format!("entry {vid} has invalid length {len}")));
        }
        spans.push((off, len));
    }
    // The entries must tile the tail exactly, in whatever order they were placed.
    let mut by_offset: Vec<usize> = (0..spans.len()).collect();
    by_offset.sort_by_key(|&i| spans[i].0);
    let mut expected = 0u64;
    for &i in &by_offset {
        let (off, len) = spans[i];
        if off != expected {
            return Err(Error::format(DICT_HEAD, format!("entry {i} starts at {off}, expected {expected}")));
        }
        expected = off + len;
    }
    if expected != tail.len() as u64 {
        return Err(Error::format(DICT_TAIL, format!("{} bytes, head covers {expected}", tail.len())));
    }
    let enc_dict = spans
        .iter()
        .map(|&(off, len)| {
            EncryptedValue::from_bytes(&tail[off as usize..(off + len) as usize]).expect("length checked")
        })
        .collect();

    let vids = av
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let store = EncodedColumnStore {
        kind: m.kind,
        enc_dict,
        av: AttributeVector { vids },
        max_len: m.max_len,
        bs_max: m.bs_max,
        enc_rnd_offset: m.enc_rnd_offset,
        table_name: m.table,
        column_name: m.column,
    };
    store.check_invariants()?;
    Ok(store)
}

/// Reads and validates the store in `dir`.
pub fn load(dir: &Path) -> Result<EncodedColumnStore> {
    decode_files(
        &read(dir, META)?,
        &read(dir, DICT_HEAD)?,
        &read(dir, DICT_TAIL)?,
        &read(dir, AV)?,
    )
}

/// Reads the validity flags of a store with `rows` rows, if present.
pub fn load_validity(dir: &Path, rows: usize) -> Result<Option<Vec<bool>>> {
    let p = dir.join(VALIDITY);
    if !p.exists() {
        return Ok(None);
    }
    let bytes = read(dir, VALIDITY)?;
    if bytes.len() != rows {
        return Err(Error::format(VALIDITY, format!("{} flags for {rows} rows", bytes.len())));
    }
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(VALIDITY, format!("flag byte {other}"))),
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Writes a dynamic column: main store in `dir`, delta store in `dir/delta`.
pub fn save_dynamic<R: Rng + ?Sized>(dc: &DynamicColumn, dir: &Path, rng: &mut R) -> Result<u64> {
    dc.check_invariants()?;
    let main = save_with_validity(&dc.main, Some(&dc.main_valid), dir, rng)?;
    let delta = save_with_validity(&dc.delta, Some(&dc.delta_valid), &dir.join(DELTA_DIR), rng)?;
    Ok(main + delta)
}

/// Loads a store directory as a dynamic column; a plain store directory
/// gets an empty delta and all rows valid.
pub fn load_dynamic(dir: &Path) -> Result<DynamicColumn> {
    let main = load(dir)?;
    let main_valid = load_validity(dir, main.row_count())?;
    let mut dc = DynamicColumn::new(main);
    if let Some(v) = main_valid {
        dc.main_valid = v;
    }
    let delta_dir = dir.join(DELTA_DIR);
    if delta_dir.join(META).exists() {
        dc.delta = load(&delta_dir)?;
        dc.delta_valid = load_validity(&delta_dir, dc.delta.row_count())?.unwrap_or_else(|| vec![true; dc.delta.row_count()]);
    }
    dc.check_invariants()?;
    Ok(dc)
}

/// Total size of the regular files under `dir`, recursively.
pub fn disk_usage(dir: &Path) -> Result<u64> {
    let mut total = 0;
    let mut stack: Vec<PathBuf> = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let md = entry.metadata().map_err(|e| Error::io(entry.path(), e))?;
            if md.is_dir() {
                stack.push(entry.path());
            } else {
                total += md.len();
            }
        }
    }
    Ok(total)
}
