//! Compressed payee list inside a registered payment: a 1-byte width
//! header `d` followed by strictly ascending account ids, each in `d`
//! big-endian bytes. The byte form is bit-exact; its hash is the
//! commitment the challenge game verifies against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Hash32};
use crate::AccountId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayDataError {
    #[error("payee list is empty")]
    EmptyList,
    #[error("duplicate payee id {0}")]
    DuplicateId(AccountId),
    #[error("byte width {0} outside 1..=4")]
    BadWidth(u8),
    #[error("body length {0} not a multiple of the id width")]
    RaggedBody(usize),
    #[error("ids not strictly ascending at offset {0}")]
    NotAscending(usize),
    #[error("encoded list is empty")]
    EmptyBody,
}

/// Validated payee list, always strictly ascending.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<AccountId>", into = "Vec<AccountId>")]
pub struct PayData {
    ids: Vec<AccountId>,
}

impl TryFrom<Vec<AccountId>> for PayData {
    type Error = PayDataError;

    fn try_from(ids: Vec<AccountId>) -> Result<Self, PayDataError> {
        encode_pay_data(&ids)
    }
}

impl From<PayData> for Vec<AccountId> {
    fn from(p: PayData) -> Vec<AccountId> {
        p.ids
    }
}

/// Smallest width in bytes that holds `id`.
fn width_for(id: AccountId) -> u8 {
    match id {
        0..=0xFF => 1,
        0x100..=0xFFFF => 2,
        0x1_0000..=0xFF_FFFF => 3,
        _ => 4,
    }
}

/// Sorts the ids, rejects duplicates and empty input.
pub fn encode_pay_data(ids: &[AccountId]) -> Result<PayData, PayDataError> {
    if ids.is_empty() {
        return Err(PayDataError::EmptyList);
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(PayDataError::DuplicateId(pair[0]));
        }
    }
    Ok(PayData { ids: sorted })
}

pub fn decode_pay_data(bytes: &[u8]) -> Result<PayData, PayDataError> {
    let Some((&width, body)) = bytes.split_first() else {
        return Err(PayDataError::EmptyBody);
    };
    if !(1..=4).contains(&width) {
        return Err(PayDataError::BadWidth(width));
    }
    let d = width as usize;
    if body.is_empty() {
        return Err(PayDataError::EmptyList);
    }
    if body.len() % d != 0 {
        return Err(PayDataError::RaggedBody(body.len()));
    }
    let mut ids = Vec::with_capacity(body.len() / d);
    for (i, chunk) in body.chunks_exact(d).enumerate() {
        let mut id: AccountId = 0;
        for &b in chunk {
            id = (id << 8) | b as AccountId;
        }
        if let Some(&prev) = ids.last() {
            if id <= prev {
                return Err(PayDataError::NotAscending(1 + i * d));
            }
        }
        ids.push(id);
    }
    Ok(PayData { ids })
}

impl PayData {
    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn n_payees(&self) -> usize {
        self.ids.len()
    }

    pub fn contains(&self, id: AccountId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn bytes_per_id(&self) -> u8 {
        width_for(*self.ids.last().expect("payee list is never empty"))
    }

    /// Wire bytes: width header then each id in that many big-endian bytes.
    pub fn encoded(&self) -> Vec<u8> {
        let d = self.bytes_per_id() as usize;
        let mut out = Vec::with_capacity(1 + d * self.ids.len());
        out.push(d as u8);
        for &id in &self.ids {
            out.extend_from_slice(&id.to_be_bytes()[4 - d..]);
        }
        out
    }

    pub fn hash(&self) -> Hash32 {
        hash(&self.encoded())
    }
}
