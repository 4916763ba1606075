//! Off-chain message vocabulary. Every message travels as signed-then-
//! encrypted JSON; the enums are externally tagged because several carry
//! u128 amounts.

use serde::{Deserialize, Serialize};

use crate::crypto::{Address, Ciphertext, Hash32, Lock, Sig64, SymKey};
use crate::{AccountId, Amount, OrderId};

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Msg {
    NotaryTermsRequest(NotaryTermsRequest),
    NotaryTermsResponse(NotaryTermsResponse),
    DataResponse(DataResponse),
    SellerKey(SellerKeyMsg),
    NotarizationRequest(NotarizationRequest),
    NotarizationResponse(NotarizationResponse),
    DelegateRequest(DelegateRequest),
}

impl Msg {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("messages always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Msg, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Msg::NotaryTermsRequest(_) => "notary_terms_request",
            Msg::NotaryTermsResponse(_) => "notary_terms_response",
            Msg::DataResponse(_) => "data_response",
            Msg::SellerKey(_) => "seller_key",
            Msg::NotarizationRequest(_) => "notarization_request",
            Msg::NotarizationResponse(_) => "notarization_response",
            Msg::DelegateRequest(_) => "delegate_request",
        }
    }
}

/// Buyer asks a notary to quote its terms for an order.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotaryTermsRequest {
    pub order_id: OrderId,
}

/// Notary's endorsement offer: fee, terms text, and a signature over
/// (order id, fee, terms) the buyer republishes for sellers to verify.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotaryTermsResponse {
    pub order_id: OrderId,
    pub account: AccountId,
    pub fee: Amount,
    pub terms: String,
    pub signature: Sig64,
}

/// Seller's answer to an order: the encrypted payload and its hash, plus
/// the notary the seller elected.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DataResponse {
    pub order_id: OrderId,
    pub seller_address: Address,
    /// Ledger account, when the seller already has one.
    pub seller_account: Option<AccountId>,
    pub notary_address: Address,
    pub ciphertext: Ciphertext,
    pub data_hash: Hash32,
}

/// Seller hands its chosen notary the payload key and a copy of the
/// ciphertext so the notary can audit and later release the key.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SellerKeyMsg {
    pub order_id: OrderId,
    pub seller_address: Address,
    pub ciphertext: Ciphertext,
    pub key: SymKey,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotarizeEntry {
    pub seller_address: Address,
    pub seller_account: Option<AccountId>,
    pub data_hash: Hash32,
}

/// Buyer's batched request: notarize these sellers for this order.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotarizationRequest {
    pub order_id: OrderId,
    pub sellers: Vec<NotarizeEntry>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotNotarized,
    Approved,
    Rejected,
}

impl Verdict {
    /// Whether the seller is included in the payment.
    pub fn is_paid(self) -> bool {
        !matches!(self, Verdict::Rejected)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SellerVerdict {
    pub seller_address: Address,
    pub verdict: Verdict,
    /// Payload key encrypted under the master key; present unless the
    /// seller was rejected.
    pub key_cipher: Option<Ciphertext>,
}

/// Signed body of a notarization response. `pay_data_hash` commits to the
/// exact payee list the buyer must register, and `lock` is the hash lock
/// whose preimage both pays the sellers and releases the keys.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotarizationBody {
    pub order_id: OrderId,
    pub notary_account: AccountId,
    pub notary_address: Address,
    pub fee: Amount,
    pub notarization_percentage: f64,
    pub results: Vec<SellerVerdict>,
    pub pay_data_hash: Hash32,
    pub lock: Lock,
}

impl NotarizationBody {
    /// Bytes the notary signs: the canonical JSON encoding of the body.
    pub fn signing_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("body always serializes")
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NotarizationResponse {
    pub body: NotarizationBody,
    pub signature: Sig64,
}

/// A signed ledger operation forwarded to a delegate for submission. The
/// envelope bytes go on-chain as-is; the ledger re-verifies them.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DelegateRequest {
    pub envelope: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{self, rng_from_seed, SigningKeyPair};

    #[test]
    fn messages_round_trip_through_json() {
        let mut rng = rng_from_seed(3);
        let key = SymKey::generate(&mut rng);
        let ct = crypto::sym_encrypt(&key, b"records", &mut rng);
        let msgs = vec![
            Msg::NotaryTermsRequest(NotaryTermsRequest { order_id: 7 }),
            Msg::NotaryTermsResponse(NotaryTermsResponse {
                order_id: 7,
                account: 3,
                fee: 250_000_000_000_000_000_000_u128,
                terms: "audit 10%".into(),
                signature: Sig64([5; 64]),
            }),
            Msg::DataResponse(DataResponse {
                order_id: 7,
                seller_address: Address([2; 20]),
                seller_account: None,
                notary_address: Address([3; 20]),
                ciphertext: ct.clone(),
                data_hash: crypto::hash(&ct.to_bytes()),
            }),
            Msg::SellerKey(SellerKeyMsg {
                order_id: 7,
                seller_address: Address([2; 20]),
                ciphertext: ct.clone(),
                key,
            }),
            Msg::NotarizationRequest(NotarizationRequest {
                order_id: 7,
                sellers: vec![NotarizeEntry {
                    seller_address: Address([2; 20]),
                    seller_account: Some(4),
                    data_hash: crypto::hash(b"x"),
                }],
            }),
            Msg::DelegateRequest(DelegateRequest {
                envelope: vec![1, 2, 3],
            }),
        ];
        for msg in msgs {
            let back = Msg::from_bytes(&msg.to_bytes()).unwrap();
            assert_eq!(back, msg);
        }
    }

    #[test]
    fn notarization_signature_binds_the_body() {
        let mut rng = rng_from_seed(4);
        let keys = SigningKeyPair::generate(&mut rng);
        let master = SymKey::generate(&mut rng);
        let body = NotarizationBody {
            order_id: 1,
            notary_account: 2,
            notary_address: keys.address(),
            fee: 5,
            notarization_percentage: 0.3,
            results: vec![SellerVerdict {
                seller_address: Address([8; 20]),
                verdict: Verdict::Approved,
                key_cipher: Some(crypto::sym_encrypt(
                    &master,
                    &SymKey::generate(&mut rng).0,
                    &mut rng,
                )),
            }],
            pay_data_hash: crypto::hash(b"pay"),
            lock: crypto::make_lock(2, &master),
        };
        let signature = keys.sign(&body.signing_bytes());
        let response = NotarizationResponse {
            body: body.clone(),
            signature: Sig64(signature),
        };
        assert!(crypto::verify(
            &keys.public(),
            &response.body.signing_bytes(),
            response.signature.as_bytes(),
        ));

        let mut tampered = response.clone();
        tampered.body.fee += 1;
        assert!(!crypto::verify(
            &keys.public(),
            &tampered.body.signing_bytes(),
            tampered.signature.as_bytes(),
        ));

        let round: NotarizationResponse =
            serde_json::from_slice(&serde_json::to_vec(&response).unwrap()).unwrap();
        assert_eq!(round, response);
        // The signing bytes are reproducible after a round trip.
        assert_eq!(round.body.signing_bytes(), body.signing_bytes());
    }

    #[test]
    fn rejected_sellers_are_the_only_unpaid_ones() {
        assert!(Verdict::Approved.is_paid());
        assert!(Verdict::NotNotarized.is_paid());
        assert!(!Verdict::Rejected.is_paid());
    }
}
