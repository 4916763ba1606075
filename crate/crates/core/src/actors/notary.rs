//! Scripted notary: endorses orders at a fee, audits a sample of the
//! submitted data against ground truth, issues the payment lock, and
//! reveals the master key once the payment lands on chain.

use std::collections::BTreeMap;

use serde_json::json;

use crate::actors::verify::Verifier;
use crate::crypto::{self, SigningKeyPair, SymKey};
use crate::engine::{Actor, Ctx, Role};
use crate::exchange::{extract_requested, notary_terms_message, SellerProfile};
use crate::ledger::{encode_pay_data, TxKind};
use crate::protocol::{
    Msg, NotarizationBody, NotarizationRequest, NotarizationResponse, NotaryTermsResponse,
    SellerKeyMsg, SellerVerdict, Verdict,
};
use crate::{AccountId, Address, Amount, Hash32, OrderId};

#[derive(Clone, Debug)]
pub struct NotaryCfg {
    pub name: String,
    pub fee: Amount,
    /// Fraction of submissions audited per request, in `[0, 1]`.
    pub notarization_percentage: f64,
    pub terms: String,
    pub verifier: Verifier,
    pub deposit: Amount,
    /// Never reveal master keys: payments stay locked until refunded.
    pub silent: bool,
    /// Wrap a wrong key for every paid seller instead of the real one.
    pub garbage_key: bool,
}

impl NotaryCfg {
    pub fn new(name: &str, fee: Amount) -> NotaryCfg {
        NotaryCfg {
            name: name.to_string(),
            fee,
            notarization_percentage: 1.0,
            terms: "standard terms".into(),
            verifier: Verifier::Subset,
            deposit: 0,
            silent: false,
            garbage_key: false,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct VerdictCounts {
    approved: u64,
    not_notarized: u64,
    rejected: u64,
}

pub struct Notary {
    cfg: NotaryCfg,
    keys: SigningKeyPair,
    /// What sellers actually hold, keyed by address. The audit baseline.
    truth: BTreeMap<Address, SellerProfile>,
    seller_keys: BTreeMap<(OrderId, Address), SellerKeyMsg>,
    /// Master keys for locks this notary has issued, keyed by lock digest.
    issued: BTreeMap<Hash32, SymKey>,
    counts: BTreeMap<OrderId, VerdictCounts>,
    requests_served: u64,
}

impl Notary {
    pub fn new(
        cfg: NotaryCfg,
        keys: SigningKeyPair,
        truth: BTreeMap<Address, SellerProfile>,
    ) -> Notary {
        Notary {
            cfg,
            keys,
            truth,
            seller_keys: BTreeMap::new(),
            issued: BTreeMap::new(),
            counts: BTreeMap::new(),
            requests_served: 0,
        }
    }

    /// Decrypt one submission and compare it against the seller's true
    /// store under this notary's verification policy.
    fn audit(&self, order_id: OrderId, skm: &SellerKeyMsg, ctx: &Ctx) -> bool {
        let Some(order) = ctx.chain.order(order_id) else {
            return false;
        };
        let Ok(payload) = crypto::sym_decrypt(&skm.key, &skm.ciphertext) else {
            return false;
        };
        let Ok(claimed) = crate::exchange::decode_payload(&payload) else {
            return false;
        };
        let Some(profile) = self.truth.get(&skm.seller_address) else {
            return false;
        };
        let Ok(truth) = extract_requested(profile, &order.requested, ctx.chain.schema()) else {
            return false;
        };
        self.cfg.verifier.verify(&claimed, &truth, ctx.chain.schema())
    }

    fn notarize(&mut self, req: NotarizationRequest, buyer_inbox: String, ctx: &mut Ctx) {
        let my_id = ctx
            .chain
            .account_by_address(&self.keys.address())
            .map(|a| a.id)
            .expect("notary registers at setup");
        let n = req.sellers.len();

        // Draw the audit sample: ceil(percentage * n) distinct entries.
        let k = ((self.cfg.notarization_percentage * n as f64).ceil() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(ctx.rng);
        let sampled: std::collections::BTreeSet<usize> = order.into_iter().take(k).collect();

        let master = SymKey::generate(ctx.rng);
        let mut results = Vec::with_capacity(n);
        let mut paid_ids = Vec::new();
        // Sellers the buyer will register, in request order, get the ids
        // the ledger will hand out next.
        let mut predicted_next: AccountId = ctx.chain.account_count();
        let mut tally = VerdictCounts::default();

        for (i, entry) in req.sellers.iter().enumerate() {
            let skm = self.seller_keys.get(&(req.order_id, entry.seller_address));
            let verdict = match skm {
                None => Verdict::Rejected,
                Some(skm)
                    if crypto::hash(&skm.ciphertext.to_bytes()) != entry.data_hash =>
                {
                    Verdict::Rejected
                }
                Some(skm) => {
                    if sampled.contains(&i) {
                        if self.audit(req.order_id, skm, ctx) {
                            Verdict::Approved
                        } else {
                            Verdict::Rejected
                        }
                    } else {
                        Verdict::NotNotarized
                    }
                }
            };
            match verdict {
                Verdict::Approved => tally.approved += 1,
                Verdict::NotNotarized => tally.not_notarized += 1,
                Verdict::Rejected => tally.rejected += 1,
            }
            let key_cipher = if verdict.is_paid() {
                self.seller_keys
                    .get(&(req.order_id, entry.seller_address))
                    .map(|skm| {
                        let inner = if self.cfg.garbage_key {
                            SymKey::generate(ctx.rng)
                        } else {
                            skm.key
                        };
                        crypto::sym_encrypt(&master, inner.as_bytes(), ctx.rng)
                    })
            } else {
                None
            };
            if verdict.is_paid() {
                let id = match ctx
                    .chain
                    .account_by_address(&entry.seller_address)
                    .map(|a| a.id)
                    .or(entry.seller_account)
                {
                    Some(id) => id,
                    None => {
                        let id = predicted_next;
                        predicted_next += 1;
                        id
                    }
                };
                paid_ids.push(id);
            }
            results.push(SellerVerdict {
                seller_address: entry.seller_address,
                verdict,
                key_cipher,
            });
        }

        let pay_data_hash = if paid_ids.is_empty() {
            crypto::hash(&[])
        } else {
            encode_pay_data(&paid_ids)
                .expect("paid ids are distinct")
                .hash()
        };
        let lock = crypto::make_lock(my_id, &master);
        self.issued.insert(lock.digest, master);
        let counts = self.counts.entry(req.order_id).or_default();
        counts.approved += tally.approved;
        counts.not_notarized += tally.not_notarized;
        counts.rejected += tally.rejected;

        let body = NotarizationBody {
            order_id: req.order_id,
            notary_account: my_id,
            notary_address: self.keys.address(),
            fee: self.cfg.fee,
            notarization_percentage: self.cfg.notarization_percentage,
            results,
            pay_data_hash,
            lock,
        };
        let signature = crate::crypto::Sig64(self.keys.sign(&body.signing_bytes()));
        ctx.out.send(
            buyer_inbox,
            Msg::NotarizationResponse(NotarizationResponse { body, signature }),
        );
        self.requests_served += 1;
    }
}

impl Actor for Notary {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn role(&self) -> Role {
        Role::Notary
    }

    fn keys(&self) -> &SigningKeyPair {
        &self.keys
    }

    fn setup(&mut self, ctx: &mut Ctx) {
        ctx.out.submit(TxKind::Register {
            address: self.keys.address(),
        });
    }

    fn on_message(&mut self, from: crate::crypto::PubKey, msg: Msg, ctx: &mut Ctx) {
        match msg {
            Msg::NotaryTermsRequest(req) => {
                let Some(sender) = ctx.dir.by_address(&from.address()) else {
                    return;
                };
                let my_id = ctx
                    .chain
                    .account_by_address(&self.keys.address())
                    .map(|a| a.id)
                    .expect("notary registers at setup");
                let signature = crate::crypto::Sig64(self.keys.sign(&notary_terms_message(
                    req.order_id,
                    self.cfg.fee,
                    &self.cfg.terms,
                )));
                ctx.out.send(
                    sender.inbox_url.clone(),
                    Msg::NotaryTermsResponse(NotaryTermsResponse {
                        order_id: req.order_id,
                        account: my_id,
                        fee: self.cfg.fee,
                        terms: self.cfg.terms.clone(),
                        signature,
                    }),
                );
            }
            Msg::SellerKey(skm) => {
                // The key must belong to the claimed seller and match its
                // own ciphertext; anything else is dropped.
                if from.address() == skm.seller_address {
                    self.seller_keys
                        .insert((skm.order_id, skm.seller_address), skm);
                }
            }
            Msg::NotarizationRequest(req) => {
                let Some(sender) = ctx.dir.by_address(&from.address()) else {
                    return;
                };
                let inbox = sender.inbox_url.clone();
                self.notarize(req, inbox, ctx);
            }
            _ => {}
        }
    }

    fn tick(&mut self, ctx: &mut Ctx) {
        let me = self.keys.address();
        if self.cfg.deposit > 0 {
            if let Some(acct) = ctx.chain.account_by_address(&me) {
                if acct.balance == 0 && ctx.chain.token_balance(&me) >= self.cfg.deposit {
                    ctx.out.submit(TxKind::Deposit {
                        account: acct.id,
                        amount: self.cfg.deposit,
                    });
                }
            }
        }
        if self.cfg.silent {
            return;
        }
        let Some(my_id) = ctx.chain.account_by_address(&me).map(|a| a.id) else {
            return;
        };
        let unlock_timeout_blocks = ctx.chain.params().unlock_timeout_blocks;
        let due: Vec<(u64, SymKey)> = ctx
            .chain
            .payments()
            .iter()
            .filter(|p| {
                !p.unlocked
                    && !p.voided
                    && p.notary_address == me
                    && ctx.now <= p.block + unlock_timeout_blocks
            })
            .filter_map(|p| {
                self.issued
                    .get(&p.lock.digest)
                    .map(|m| (p.pay_index, *m))
            })
            .collect();
        for (pay_index, master_key) in due {
            ctx.out.submit(TxKind::UnlockPayment {
                pay_index,
                notary_id: my_id,
                master_key,
            });
        }
    }

    fn summary(&self) -> serde_json::Value {
        let orders: BTreeMap<OrderId, serde_json::Value> = self
            .counts
            .iter()
            .map(|(id, c)| {
                (
                    *id,
                    json!({
                        "approved": c.approved,
                        "not_notarized": c.not_notarized,
                        "rejected": c.rejected,
                    }),
                )
            })
            .collect();
        json!({
            "requests_served": self.requests_served,
            "orders": orders,
        })
    }
}
