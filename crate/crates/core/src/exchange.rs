//! Data-order domain: the attribute ontology, audience and data queries,
//! seller profiles with record stores, canonical record encoding, and the
//! public order-info document buyers serve next to each order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, Hash32, PubKey, Sig64};
use crate::{AccountId, Amount, BlockNumber, OrderId};

/// Attribute kinds in the ontology.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Categorical,
    Numeric,
}

/// Per-entity schema. `time_field` names the integer record field used for
/// window filtering; entities without one only support whole-store queries.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct EntitySchema {
    #[serde(default)]
    pub time_field: Option<String>,
}

/// Shared vocabulary for orders and profiles: attribute names with kinds
/// plus the set of data entities sellers can hold.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct OntologySchema {
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrKind>,
    #[serde(default)]
    pub entities: BTreeMap<String, EntitySchema>,
}

/// Attribute or record field value.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(n) => Some(*n as f64),
            Value::Float(f) => Some(*f),
            Value::Text(_) => None,
        }
    }
}

/// One data record: field name → value, deterministically ordered.
pub type Record = BTreeMap<String, Value>;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ge,
    Le,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Clause {
    pub attribute: String,
    pub op: CmpOp,
    pub value: Value,
}

/// Conjunction of attribute predicates selecting eligible sellers.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct AudienceQuery {
    pub clauses: Vec<Clause>,
}

/// Request for records of one entity, optionally restricted to a time
/// window `[start, start + span)` on the entity's time field.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DataQuery {
    pub entity: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Open,
    Closed,
}

/// On-chain data order: audience, requested data, unit price, terms hash,
/// and the buyer's public URL.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DataOrder {
    pub id: OrderId,
    pub buyer: crate::Address,
    pub audience: AudienceQuery,
    pub requested: Vec<DataQuery>,
    pub price: Amount,
    pub tc_hash: Hash32,
    pub buyer_url: String,
    pub status: OrderStatus,
    pub created_block: BlockNumber,
}

/// One accepted notary inside a buyer's order info, with the notary's
/// signature over (order id, fee, terms).
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotaryListing {
    pub account: AccountId,
    pub pk: PubKey,
    pub fee: Amount,
    pub terms: String,
    pub signature: Sig64,
}

/// Public document served at the order's buyer URL.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct BuyerOrderInfo {
    pub order_id: OrderId,
    pub buyer_pk: PubKey,
    pub buyer_name: String,
    pub description: String,
    pub logo: String,
    pub intended_use: String,
    pub tc_text: String,
    pub notaries: Vec<NotaryListing>,
}

/// Byte string a notary signs to endorse an order at a given fee.
pub fn notary_terms_message(order_id: OrderId, fee: Amount, terms: &str) -> Vec<u8> {
    let mut msg = b"notary-terms/".to_vec();
    msg.extend_from_slice(&order_id.to_be_bytes());
    msg.extend_from_slice(&fee.to_be_bytes());
    msg.extend_from_slice(&(terms.len() as u32).to_be_bytes());
    msg.extend_from_slice(terms.as_bytes());
    msg
}

/// Check an order-info document against its on-chain order: the terms text
/// must hash to the published hash and every notary endorsement must verify.
pub fn validate_buyer_info(info: &BuyerOrderInfo, order: &DataOrder) -> bool {
    if crypto::hash(info.tc_text.as_bytes()) != order.tc_hash {
        return false;
    }
    info.notaries.iter().all(|listing| {
        let msg = notary_terms_message(order.id, listing.fee, &listing.terms);
        crypto::verify(&listing.pk, &msg, listing.signature.as_bytes())
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("undeclared attribute {0}")]
    UndeclaredAttribute(String),
    #[error("order on {0}: range comparison requires a numeric attribute")]
    RangeOnCategorical(String),
    #[error("value for {0} does not match its declared kind")]
    ValueKindMismatch(String),
    #[error("undeclared entity {0}")]
    UndeclaredEntity(String),
    #[error("bad query params for {entity}: {reason}")]
    BadParams { entity: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("profile holds no records for entity {0}")]
    MissingEntity(String),
}

impl OntologySchema {
    fn check_value_kind(&self, attribute: &str, value: &Value) -> Result<(), SchemaError> {
        let kind = self
            .attributes
            .get(attribute)
            .ok_or_else(|| SchemaError::UndeclaredAttribute(attribute.to_string()))?;
        let ok = match kind {
            AttrKind::Categorical => matches!(value, Value::Text(_)),
            AttrKind::Numeric => matches!(value, Value::Int(_) | Value::Float(_)),
        };
        if ok {
            Ok(())
        } else {
            Err(SchemaError::ValueKindMismatch(attribute.to_string()))
        }
    }

    pub fn validate_audience(&self, query: &AudienceQuery) -> Result<(), SchemaError> {
        for clause in &query.clauses {
            self.check_value_kind(&clause.attribute, &clause.value)?;
            if clause.op != CmpOp::Eq
                && self.attributes.get(&clause.attribute) == Some(&AttrKind::Categorical)
            {
                return Err(SchemaError::RangeOnCategorical(clause.attribute.clone()));
            }
        }
        Ok(())
    }

    pub fn validate_queries(&self, requested: &[DataQuery]) -> Result<(), SchemaError> {
        for query in requested {
            let entity = self
                .entities
                .get(&query.entity)
                .ok_or_else(|| SchemaError::UndeclaredEntity(query.entity.clone()))?;
            let bad = |reason: &str| SchemaError::BadParams {
                entity: query.entity.clone(),
                reason: reason.to_string(),
            };
            if query.params.is_empty() {
                continue;
            }
            if entity.time_field.is_none() {
                return Err(bad("entity has no time field, params must be empty"));
            }
            for (name, value) in &query.params {
                if name != "start" && name != "span" {
                    return Err(bad(&format!("unknown param {name}")));
                }
                if !matches!(value, Value::Int(_)) {
                    return Err(bad(&format!("param {name} must be an integer")));
                }
            }
            if !(query.params.contains_key("start") && query.params.contains_key("span")) {
                return Err(bad("window queries need both start and span"));
            }
        }
        Ok(())
    }

    pub fn validate_profile(&self, profile: &SellerProfile) -> Result<(), SchemaError> {
        for (attribute, value) in &profile.attributes {
            self.check_value_kind(attribute, value)?;
        }
        for entity in profile.data_store.keys() {
            if !self.entities.contains_key(entity) {
                return Err(SchemaError::UndeclaredEntity(entity.clone()));
            }
        }
        Ok(())
    }
}

/// A seller's audience attributes and per-entity record store.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct SellerProfile {
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
    #[serde(default)]
    pub data_store: BTreeMap<String, Vec<Record>>,
}

fn clause_holds(profile: &BTreeMap<String, Value>, clause: &Clause) -> bool {
    let Some(held) = profile.get(&clause.attribute) else {
        return false;
    };
    match clause.op {
        CmpOp::Eq => match (held, &clause.value) {
            (Value::Text(a), Value::Text(b)) => a == b,
            _ => match (held.as_f64(), clause.value.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        },
        CmpOp::Ge | CmpOp::Le => match (held.as_f64(), clause.value.as_f64()) {
            (Some(a), Some(b)) => {
                if clause.op == CmpOp::Ge {
                    a >= b
                } else {
                    a <= b
                }
            }
            _ => false,
        },
    }
}

/// True iff the profile satisfies every clause of the query (conjunction;
/// an empty query matches everyone). Missing attributes fail their clause.
pub fn audience_match(profile: &SellerProfile, query: &AudienceQuery) -> bool {
    query
        .clauses
        .iter()
        .all(|clause| clause_holds(&profile.attributes, clause))
}

/// Select the records each query asks for. Window queries keep records
/// whose integer time field lies in `[start, start + span)`; records
/// missing the field are excluded.
pub fn extract_requested(
    profile: &SellerProfile,
    requested: &[DataQuery],
    schema: &OntologySchema,
) -> Result<Vec<(String, Vec<Record>)>, ExtractError> {
    let mut out = Vec::with_capacity(requested.len());
    for query in requested {
        let records = profile
            .data_store
            .get(&query.entity)
            .ok_or_else(|| ExtractError::MissingEntity(query.entity.clone()))?;
        let selected = if query.params.is_empty() {
            records.clone()
        } else {
            let time_field = schema
                .entities
                .get(&query.entity)
                .and_then(|e| e.time_field.as_deref())
                .unwrap_or("");
            let start = match query.params.get("start") {
                Some(Value::Int(n)) => *n,
                _ => 0,
            };
            let span = match query.params.get("span") {
                Some(Value::Int(n)) => *n,
                _ => 0,
            };
            records
                .iter()
                .filter(|r| match r.get(time_field) {
                    Some(Value::Int(t)) => *t >= start && *t < start.saturating_add(span),
                    _ => false,
                })
                .cloned()
                .collect()
        };
        out.push((query.entity.clone(), selected));
    }
    Ok(out)
}

// Canonical binary encoding. Layout is length-prefixed and field-ordered so
// that equal payloads are byte-equal across runs:
//   payload := u32 section-count, section*
//   section := u32 name-len, name, u32 record-count, record*
//   record  := u32 field-count, field*
//   field   := u32 name-len, name, tag u8, value
//   value   := int: 8-byte BE two's complement | float: 8-byte BE bit
//              pattern | text: u32 len, bytes

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Int(n) => {
            out.push(0);
            out.extend_from_slice(&n.to_be_bytes());
        }
        Value::Float(f) => {
            out.push(1);
            out.extend_from_slice(&f.to_bits().to_be_bytes());
        }
        Value::Text(s) => {
            out.push(2);
            put_str(out, s);
        }
    }
}

pub fn encode_record(record: &Record) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(record.len() as u32).to_be_bytes());
    for (name, value) in record {
        put_str(&mut out, name);
        put_value(&mut out, value);
    }
    out
}

pub fn encode_payload(sections: &[(String, Vec<Record>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(sections.len() as u32).to_be_bytes());
    for (entity, records) in sections {
        put_str(&mut out, entity);
        out.extend_from_slice(&(records.len() as u32).to_be_bytes());
        for record in records {
            out.extend_from_slice(&encode_record(record));
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed payload at byte {0}")]
pub struct PayloadDecodeError(pub usize);

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadDecodeError> {
        if self.bytes.len() - self.at < n {
            return Err(PayloadDecodeError(self.at));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, PayloadDecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, PayloadDecodeError> {
        let len = self.u32()? as usize;
        let at = self.at;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| PayloadDecodeError(at))
    }

    fn value(&mut self) -> Result<Value, PayloadDecodeError> {
        let at = self.at;
        match self.take(1)?[0] {
            0 => Ok(Value::Int(i64::from_be_bytes(
                self.take(8)?.try_into().unwrap(),
            ))),
            1 => Ok(Value::Float(f64::from_bits(u64::from_be_bytes(
                self.take(8)?.try_into().unwrap(),
            )))),
            2 => Ok(Value::Text(self.string()?)),
            _ => Err(PayloadDecodeError(at)),
        }
    }
}

pub fn decode_payload(bytes: &[u8]) -> Result<Vec<(String, Vec<Record>)>, PayloadDecodeError> {
    let mut r = Reader { bytes, at: 0 };
    let sections = r.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..sections {
        let entity = r.string()?;
        let count = r.u32()? as usize;
        let mut records = Vec::new();
        for _ in 0..count {
            let fields = r.u32()? as usize;
            let mut record = Record::new();
            for _ in 0..fields {
                let name = r.string()?;
                let value = r.value()?;
                record.insert(name, value);
            }
            records.push(record);
        }
        out.push((entity, records));
    }
    if r.at != bytes.len() {
        return Err(PayloadDecodeError(r.at));
    }
    Ok(out)
}
