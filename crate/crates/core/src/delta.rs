// SPDX-License-Identifier: Apache-2.0

//! Dynamic columns: a read-optimized main store of any kind, an append-only
//! ED9 delta store, validity flags for both, and a merge that rebuilds main.

use rand::{CryptoRng, RngCore};

use crate::builder::{build, BuildParams};
use crate::crypto::{EntryCipher, MasterKey};
use crate::encoding;
use crate::error::{Error, Result};
use crate::model::{AttributeVector, EdKind, EncodedColumnStore, PlainColumn, RecordId, SearchRange, MAX_ROWS};
use crate::proxy::execute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Main,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicColumn {
    pub main: EncodedColumnStore,
    pub delta: EncodedColumnStore,
    pub main_valid: Vec<bool>,
    pub delta_valid: Vec<bool>,
}

/// Matching live rows of both stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicOutcome {
    /// Main matches in rid order, then delta matches in rid order.
    pub rows: Vec<Vec<u8>>,
    pub main_rids: Vec<RecordId>,
    pub delta_rids: Vec<RecordId>,
}

fn empty_delta(main: &EncodedColumnStore) -> EncodedColumnStore {
    EncodedColumnStore {
        kind: EdKind::ED9,
        enc_dict: Vec::new(),
        av: AttributeVector::default(),
        max_len: main.max_len,
        bs_max: None,
        enc_rnd_offset: None,
        table_name: main.table_name.clone(),
        column_name: main.column_name.clone(),
    }
}

impl DynamicColumn {
    /// Wraps a freshly built main store with an empty delta.
    pub fn new(main: EncodedColumnStore) -> Self {
        let delta = empty_delta(&main);
        let main_valid = vec![true; main.row_count()];
        Self {
            main,
            delta,
            main_valid,
            delta_valid: Vec::new(),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.main.check_invariants()?;
        self.delta.check_invariants()?;
        if self.delta.kind != EdKind::ED9 {
            return Err(Error::format("delta", format!("delta store must be ED9, found {}", self.delta.kind)));
        }
        if self.main_valid.len() != self.main.row_count() || self.delta_valid.len() != self.delta.row_count() {
            return Err(Error::format("validity", "validity flags do not match row counts"));
        }
        if (self.delta.max_len, &self.delta.table_name, &self.delta.column_name)
            != (self.main.max_len, &self.main.table_name, &self.main.column_name)
        {
            return Err(Error::format("delta", "delta metadata differs from main"));
        }
        Ok(())
    }

    /// Number of rows not marked deleted.
    pub fn live_rows(&self) -> usize {
        self.main_valid.iter().chain(&self.delta_valid).filter(|&&b| b).count()
    }

    fn flags_mut(&mut self, side: Side) -> &mut Vec<bool> {
        match side {
            Side::Main => &mut self.main_valid,
            Side::Delta => &mut self.delta_valid,
        }
    }

    /// Encrypts `v` with a fresh nonce and appends it to the delta store.
    pub fn append<R: RngCore + CryptoRng>(&mut self, v: &[u8], mk: &MasterKey, rng: &mut R) -> Result<RecordId> {
        encoding::validate(v, self.delta.max_len)?;
        let rid = self.delta.row_count();
        if rid >= MAX_ROWS {
            return Err(Error::TooManyRows(rid + 1));
        }
        let cipher = EntryCipher::for_column(EdKind::ED9, mk, &self.delta.table_name, &self.delta.column_name);
        self.delta.enc_dict.push(cipher.seal(rng, v));
        self.delta.av.vids.push(rid as u32);
        self.delta_valid.push(true);
        Ok(rid as RecordId)
    }

    /// Marks a row deleted; deleting twice is a no-op.
    pub fn delete(&mut self, side: Side, rid: RecordId) -> Result<()> {
        let flags = self.flags_mut(side);
        let len = flags.len();
        let slot = flags.get_mut(rid as usize).ok_or(Error::Index { rid: rid.into(), len })?;
        *slot = false;
        Ok(())
    }

    /// Deletes the old row and appends the new value to the delta store.
    pub fn update<R: RngCore + CryptoRng>(
        &mut self,
        side: Side,
        rid: RecordId,
        v: &[u8],
        mk: &MasterKey,
        rng: &mut R,
    ) -> Result<RecordId> {
        encoding::validate(v, self.delta.max_len)?;
        let len = self.flags_mut(side).len();
        if rid as usize >= len {
            return Err(Error::Index { rid: rid.into(), len });
        }
        self.delete(side, rid)?;
        self.append(v, mk, rng)
    }

    /// Queries both stores and drops rows marked deleted.
    pub fn query<R: RngCore + CryptoRng>(&self, range: &SearchRange, mk: &MasterKey, rng: &mut R) -> Result<DynamicOutcome> {
        let main = execute(&self.main, range, mk, rng, 1)?;
        let delta = execute(&self.delta, range, mk, rng, 1)?;
        let mut rows = Vec::new();
        let mut keep = |rids: Vec<RecordId>, values: Vec<Vec<u8>>, flags: &[bool]| {
            let mut kept = Vec::new();
            for (rid, v) in rids.into_iter().zip(values) {
                if flags[rid as usize] {
                    kept.push(rid);
                    rows.push(v);
                }
            }
            kept
        };
        let main_rids = keep(main.rids, main.rows, &self.main_valid);
        let delta_rids = keep(delta.rids, delta.rows, &self.delta_valid);
        Ok(DynamicOutcome {
            rows,
            main_rids,
            delta_rids,
        })
    }

    /// Live values in logical order: main rows, then delta rows.
    pub fn live_values(&self, mk: &MasterKey) -> Result<Vec<Vec<u8>>> {
        let mut out = Vec::with_capacity(self.live_rows());
        for (store, flags) in [(&self.main, &self.main_valid), (&self.delta, &self.delta_valid)] {
            let cipher = EntryCipher::for_column(store.kind, mk, &store.table_name, &store.column_name);
            for (rid, &vid) in store.av.vids.iter().enumerate() {
                if flags[rid] {
                    out.push(cipher.open(&store.enc_dict[vid as usize])?);
                }
            }
        }
        Ok(out)
    }

    /// Rebuilds main from every live row with the original kind and
    /// parameters, re-encrypting everything; the delta starts over empty.
    pub fn merge<R: RngCore + CryptoRng>(&self, mk: &MasterKey, rng: &mut R) -> Result<DynamicColumn> {
        let col = PlainColumn::new(self.live_values(mk)?, self.main.max_len)?;
        let params = BuildParams {
            kind: self.main.kind,
            bs_max: self.main.bs_max,
        };
        let main = build(&col, &params, mk, &self.main.table_name, &self.main.column_name, rng)?;
        Ok(DynamicColumn::new(main))
    }
}
