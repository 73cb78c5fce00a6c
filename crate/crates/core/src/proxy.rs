// SPDX-License-Identifier: Apache-2.0

//! The trusted client: turns filters into encrypted range tokens and
//! decrypts result columns.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};

use crate::crypto::{EntryCipher, MasterKey};
use crate::enclave::{endpoint_payload, CountingLoader, Enclave, EncryptedRangeToken, SearchTrace};
use crate::engine::{av_search_parallel, reconstruct};
use crate::error::{Error, Result};
use crate::model::{EdKind, EncodedColumnStore, EncryptedValue, Endpoint, PlainColumn, RecordId, SearchRange};

/// A single-column filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Filter {
    Eq(Vec<u8>),
    Lt(Vec<u8>),
    Le(Vec<u8>),
    Gt(Vec<u8>),
    Ge(Vec<u8>),
    /// Two-sided range; each end may be inclusive or exclusive.
    Range { lo: Endpoint, hi: Endpoint },
}

impl Filter {
    pub fn normalize(&self) -> Result<SearchRange> {
        normalize_filter(self)
    }
}

pub fn normalize_filter(f: &Filter) -> Result<SearchRange> {
    use Endpoint::*;
    match f {
        Filter::Eq(v) => SearchRange::new(Included(v.clone()), Included(v.clone())),
        Filter::Lt(v) => SearchRange::new(NegInf, Excluded(v.clone())),
        Filter::Le(v) => SearchRange::new(NegInf, Included(v.clone())),
        Filter::Gt(v) => SearchRange::new(Excluded(v.clone()), PosInf),
        Filter::Ge(v) => SearchRange::new(Included(v.clone()), PosInf),
        Filter::Range { lo, hi } => SearchRange::new(lo.clone(), hi.clone()),
    }
}

/// Reads one value: either `'quoted'` (kept verbatim) or bare (trimmed).
fn parse_value(s: &str) -> Result<Vec<u8>> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('\'') {
        let inner = inner
            .strip_suffix('\'')
            .ok_or_else(|| Error::Parse(format!("unterminated quote in {s:?}")))?;
        return Ok(inner.as_bytes().to_vec());
    }
    Ok(s.as_bytes().to_vec())
}

/// Splits `a,b` at the comma that is not inside quotes.
fn split_pair(s: &str) -> Result<(&str, &str)> {
    let mut quoted = false;
    for (i, c) in s.char_indices() {
        match c {
            '\'' => quoted = !quoted,
            ',' if !quoted => return Ok((&s[..i], &s[i + 1..])),
            _ => {}
        }
    }
    Err(Error::Parse(format!("expected two comma-separated bounds in {s:?}")))
}

impl FromStr for Filter {
    type Err = Error;

    /// Grammar: `eq V`, `lt V`, `le V`, `gt V`, `ge V` (or `=`, `<`, `<=`,
    /// `>`, `>=`) and `range [V,W]` with `[`/`(` and `]`/`)` choosing
    /// inclusive or exclusive ends.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (op, rest) = s
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Parse(format!("expected `<op> <value>`, got {s:?}")))?;
        let value = || parse_value(rest);
        match op.to_ascii_lowercase().as_str() {
            "eq" | "=" | "==" => Ok(Filter::Eq(value()?)),
            "lt" | "<" => Ok(Filter::Lt(value()?)),
            "le" | "<=" => Ok(Filter::Le(value()?)),
            "gt" | ">" => Ok(Filter::Gt(value()?)),
            "ge" | ">=" => Ok(Filter::Ge(value()?)),
            "range" => {
                let body = rest.trim();
                let mut chars = body.chars();
                let (open, close) = (chars.next(), chars.next_back());
                let inner = body
                    .get(1..body.len().saturating_sub(1))
                    .ok_or_else(|| Error::Parse(format!("malformed range {body:?}")))?;
                let (a, b) = split_pair(inner)?;
                let (a, b) = (parse_value(a)?, parse_value(b)?);
                let lo = match open {
                    Some('[') => Endpoint::Included(a),
                    Some('(') => Endpoint::Excluded(a),
                    _ => return Err(Error::Parse(format!("range must start with [ or (: {body:?}"))),
                };
                let hi = match close {
                    Some(']') => Endpoint::Included(b),
                    Some(')') => Endpoint::Excluded(b),
                    _ => return Err(Error::Parse(format!("range must end with ] or ): {body:?}"))),
                };
                Ok(Filter::Range { lo, hi })
            }
            other => Err(Error::Parse(format!("unknown operator {other:?}"))),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = |v: &[u8]| format!("'{}'", String::from_utf8_lossy(v));
        match self {
            Filter::Eq(v) => write!(f, "eq {}", q(v)),
            Filter::Lt(v) => write!(f, "lt {}", q(v)),
            Filter::Le(v) => write!(f, "le {}", q(v)),
            Filter::Gt(v) => write!(f, "gt {}", q(v)),
            Filter::Ge(v) => write!(f, "ge {}", q(v)),
            Filter::Range { lo, hi } => {
                let (open, a) = match lo {
                    Endpoint::Included(v) => ('[', q(v)),
                    Endpoint::Excluded(v) => ('(', q(v)),
                    _ => ('(', "-inf".into()),
                };
                let (close, b) = match hi {
                    Endpoint::Included(v) => (']', q(v)),
                    Endpoint::Excluded(v) => (')', q(v)),
                    _ => (')', "+inf".into()),
                };
                write!(f, "range {open}{a},{b}{close}")
            }
        }
    }
}

/// Encrypts both endpoints of `range` with fresh nonces. Payloads are padded
/// so every token for a column has the same length.
pub fn encrypt_range<R: RngCore + CryptoRng>(
    mk: &MasterKey,
    kind: EdKind,
    table: &str,
    column: &str,
    range: &SearchRange,
    max_len: usize,
    rng: &mut R,
) -> Result<EncryptedRangeToken> {
    let cipher = EntryCipher::for_column(kind, mk, table, column);
    let lo = endpoint_payload(&range.lo, max_len)?;
    let hi = endpoint_payload(&range.hi, max_len)?;
    Ok(EncryptedRangeToken {
        lo: cipher.seal(rng, &lo),
        hi: cipher.seal(rng, &hi),
    })
}

/// Decrypts a result column entry by entry; any authentication failure
/// rejects the whole result.
pub fn decrypt_column(
    mk: &MasterKey,
    kind: EdKind,
    table: &str,
    column: &str,
    ec: &[EncryptedValue],
    max_len: usize,
) -> Result<PlainColumn> {
    let cipher = EntryCipher::for_column(kind, mk, table, column);
    let values = ec.iter().map(|c| cipher.open(c)).collect::<Result<Vec<_>>>()?;
    PlainColumn::new(values, max_len)
}

/// Everything observed while answering one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryOutcome {
    /// Decrypted values in rid order.
    pub rows: Vec<Vec<u8>>,
    pub rids: Vec<RecordId>,
    pub trace: SearchTrace,
    /// Loads counted on the host side of the boundary.
    pub host_loads: u64,
    /// Wall time of the attribute vector scan alone.
    pub scan_time: Duration,
}

/// Runs the full pipeline for one range: token encryption, enclave search,
/// attribute vector scan, reconstruction, and decryption.
pub fn execute<R: RngCore + CryptoRng>(
    store: &EncodedColumnStore,
    range: &SearchRange,
    mk: &MasterKey,
    rng: &mut R,
    workers: usize,
) -> Result<QueryOutcome> {
    let (table, column) = (&store.table_name, &store.column_name);
    let token = encrypt_range(mk, store.kind, table, column, range, store.max_len, rng)?;
    let loader = CountingLoader::new(store.enc_dict.as_slice());
    let enclave = Enclave::new(mk.clone());
    let (sel, trace) = enclave.dict_search(
        store.kind,
        &token,
        &loader,
        store.enc_rnd_offset.as_ref(),
        table,
        column,
    )?;
    let started = Instant::now();
    let rids = av_search_parallel(&store.av, &sel, workers);
    let scan_time = started.elapsed();
    let ec = reconstruct(&store.enc_dict, &store.av, &rids);
    let rows = decrypt_column(mk, store.kind, table, column, &ec, store.max_len)?.into_values();
    Ok(QueryOutcome {
        rows,
        rids,
        trace,
        host_loads: loader.loads(),
        scan_time,
    })
}

/// End-to-end convenience: matching values in rid order.
pub fn run_query(store: &EncodedColumnStore, filter: &Filter, mk: &MasterKey) -> Result<PlainColumn> {
    let range = normalize_filter(filter)?;
    let out = execute(store, &range, mk, &mut OsRng, 1)?;
    PlainColumn::new(out.rows, store.max_len)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::builder::{build, BuildParams};
    use crate::crypto::pae_dec;
    use crate::crypto::derive_key;
    use crate::enclave::parse_endpoint_payload;
    use crate::model::Repetition;

    fn mk() -> MasterKey {
        MasterKey::from_bytes([8; 16])
    }

    fn sample() -> PlainColumn {
        PlainColumn::from_values(["Jessica", "Archie", "Jessica", "Jessica", "Hans", "Archie"]).unwrap()
    }

    #[test]
    fn parse_filters() {
        assert_eq!("eq Hans".parse::<Filter>().unwrap(), Filter::Eq(b"Hans".to_vec()));
        assert_eq!("lt 'Ella'".parse::<Filter>().unwrap(), Filter::Lt(b"Ella".to_vec()));
        assert_eq!(">= ' a b'".parse::<Filter>().unwrap(), Filter::Ge(b" a b".to_vec()));
        assert_eq!(
            "range [Archie,Hans]".parse::<Filter>().unwrap(),
            Filter::Range {
                lo: Endpoint::Included(b"Archie".to_vec()),
                hi: Endpoint::Included(b"Hans".to_vec())
            }
        );
        assert_eq!(
            "range ('a,b', c]".parse::<Filter>().unwrap(),
            Filter::Range {
                lo: Endpoint::Excluded(b"a,b".to_vec()),
                hi: Endpoint::Included(b"c".to_vec())
            }
        );
        for bad in ["", "eq", "between A", "range [A,B", "range A,B]", "range [AB]", "eq 'x"] {
            assert!(matches!(bad.parse::<Filter>(), Err(Error::Parse(_))), "{bad:?}");
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["eq 'x'", "lt 'Ella'", "range ['A','C')", "ge ''"] {
            let f: Filter = s.parse().unwrap();
            assert_eq!(f.to_string().parse::<Filter>().unwrap(), f);
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_filter(&Filter::Lt(b"Ella".to_vec())).unwrap(),
            SearchRange {
                lo: Endpoint::NegInf,
                hi: Endpoint::Excluded(b"Ella".to_vec())
            }
        );
        assert_eq!(
            normalize_filter(&Filter::Eq(b"Hans".to_vec())).unwrap(),
            SearchRange::closed("Hans", "Hans").unwrap()
        );
        let between: Filter = "range (A,C)".parse().unwrap();
        assert_eq!(
            normalize_filter(&between).unwrap(),
            SearchRange::new(Endpoint::Excluded(b"A".to_vec()), Endpoint::Excluded(b"C".to_vec())).unwrap()
        );
        assert!(matches!(
            normalize_filter(&"range [C,A]".parse().unwrap()),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn tokens_are_fresh_and_uniform() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let r = SearchRange::closed("A", "B").unwrap();
        let t1 = encrypt_range(&mk(), EdKind::ED1, "t", "c", &r, 10, &mut rng).unwrap();
        let t2 = encrypt_range(&mk(), EdKind::ED1, "t", "c", &r, 10, &mut rng).unwrap();
        assert_ne!(t1, t2);

        let key = derive_key(&mk(), "t", "c");
        let (lo, _) = parse_endpoint_payload(&pae_dec(&key, &t1.lo).unwrap()).unwrap();
        assert_eq!(lo, Endpoint::Included(b"A".to_vec()));

        let lens: Vec<usize> = ["eq A", "lt ZZZZZZZZZZ", "range (a,b]", "ge x"]
            .iter()
            .map(|f| {
                let range = normalize_filter(&f.parse().unwrap()).unwrap();
                let t = encrypt_range(&mk(), EdKind::ED1, "t", "c", &range, 10, &mut rng).unwrap();
                t.lo.encoded_len() + t.hi.encoded_len()
            })
            .collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn decrypt_column_behaviour() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let store = build(&sample(), &BuildParams::new(EdKind::ED7), &mk(), "t", "c", &mut rng).unwrap();
        let all: Vec<RecordId> = (0..6).collect();
        let mut ec = reconstruct(&store.enc_dict, &store.av, &all);
        let col = decrypt_column(&mk(), EdKind::ED7, "t", "c", &ec, 7).unwrap();
        assert_eq!(col, sample());
        assert!(decrypt_column(&mk(), EdKind::ED7, "t", "c", &[], 7).unwrap().is_empty());
        ec[3].body[0] ^= 0x40;
        assert!(matches!(decrypt_column(&mk(), EdKind::ED7, "t", "c", &ec, 7), Err(Error::Auth)));
    }

    #[test]
    fn sample_query_for_every_kind() {
        let filter: Filter = "range [Archie,Hans]".parse().unwrap();
        let mut kinds = vec![EdKind::Plain];
        kinds.extend(EdKind::ENCRYPTED);
        for kind in kinds {
            let mut rng = ChaCha20Rng::seed_from_u64(kind.number() as u64);
            let params = if kind.repetition() == Repetition::Smoothing && !kind.is_plain() {
                BuildParams::smoothing(kind, 2)
            } else {
                BuildParams::new(kind)
            };
            let store = build(&sample(), &params, &mk(), "t1", "FName", &mut rng).unwrap();
            let range = normalize_filter(&filter).unwrap();
            let out = execute(&store, &range, &mk(), &mut rng, 1).unwrap();
            assert_eq!(out.rids, vec![1, 4, 5], "{kind}");
            assert_eq!(out.rows, vec![b"Archie".to_vec(), b"Hans".to_vec(), b"Archie".to_vec()]);
            assert_eq!(out.trace.loads, out.host_loads);

            let empty = run_query(&store, &"eq Nobody".parse().unwrap(), &mk()).unwrap();
            assert!(empty.is_empty());
        }
    }

    #[test]
    fn illegal_literals_are_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let store = build(&sample(), &BuildParams::new(EdKind::ED1), &mk(), "t", "c", &mut rng).unwrap();
        let err = run_query(&store, &"eq Christopher".parse().unwrap(), &mk()).unwrap_err();
        assert!(matches!(err, Error::Length { .. }));
    }
}
