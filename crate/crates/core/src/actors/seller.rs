//! Scripted seller: watches for orders it matches, hands encrypted data to
//! the buyer and the key to the chosen notary, then collects its earnings
//! in batches, directly or through a delegate.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::json;

use crate::crypto::{self, Envelope, SigningKeyPair, SymKey};
use crate::engine::{Actor, Ctx, Role};
use crate::exchange::{
    audience_match, extract_requested, validate_buyer_info, BuyerOrderInfo, DataOrder,
    NotaryListing, SellerProfile, Value,
};
use crate::ledger::{game, DelegatedOp, SignedOp, SlotStatus, TxKind};
use crate::protocol::{DataResponse, Msg, SellerKeyMsg};
use crate::{Address, Amount, BlockNumber, Hash32, OrderId};

/// Blocks to wait on an in-flight delegated operation before treating it
/// as lost and acting again.
const DELEGATION_RETRY_BLOCKS: u64 = 5;

#[derive(Clone, Debug)]
pub struct SellerCfg {
    pub name: String,
    pub profile: SellerProfile,
    /// Tokens moved into the payment ledger once an account exists.
    pub deposit: Amount,
    pub price_floor: Amount,
    /// Notary addresses this seller is willing to work with.
    pub trusted_notaries: Vec<Address>,
    /// Register at block zero; otherwise wait for the buyer to register us.
    pub preregistered: bool,
    /// Collect once at least this many uncollected payments exist.
    /// `None` never collects (typical for bulk sellers in batch runs).
    pub collect_threshold: Option<u64>,
    /// Route collect, finalize, and withdraw through this delegate.
    pub delegate: Option<Address>,
    pub delegate_max_fee: Amount,
    /// Append an invented record to every payload.
    pub fabricating: bool,
    /// Overclaim by one unit when collecting.
    pub greedy: bool,
    /// Pull the whole balance out after a successful collect round.
    pub withdraw_after_collect: bool,
}

impl SellerCfg {
    pub fn new(name: &str, profile: SellerProfile) -> SellerCfg {
        SellerCfg {
            name: name.to_string(),
            profile,
            deposit: 0,
            price_floor: 0,
            trusted_notaries: Vec::new(),
            preregistered: true,
            collect_threshold: None,
            delegate: None,
            delegate_max_fee: 5,
            fabricating: false,
            greedy: false,
            withdraw_after_collect: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct SentData {
    payload_digest: Hash32,
    data_hash: Hash32,
    notary: Address,
}

pub struct Seller {
    cfg: SellerCfg,
    keys: SigningKeyPair,
    candidates: BTreeMap<OrderId, DataOrder>,
    responded: BTreeSet<OrderId>,
    /// Orders already noted as lacking a trusted notary, to log that once.
    notary_wait_noted: BTreeSet<OrderId>,
    sent: BTreeMap<OrderId, SentData>,
    deposited: bool,
    /// Nonce and send block of the delegated operation in flight, if any.
    delegation: Option<(u64, BlockNumber)>,
    /// A finalize completed; pull funds out next chance.
    withdraw_armed: bool,
    collects: u64,
    responds: u64,
    proofs: u64,
}

impl Seller {
    pub fn new(cfg: SellerCfg, keys: SigningKeyPair) -> Seller {
        Seller {
            cfg,
            keys,
            candidates: BTreeMap::new(),
            responded: BTreeSet::new(),
            notary_wait_noted: BTreeSet::new(),
            sent: BTreeMap::new(),
            deposited: false,
            delegation: None,
            withdraw_armed: false,
            collects: 0,
            responds: 0,
            proofs: 0,
        }
    }

    /// Pick the cheapest mutually acceptable notary from the buyer's list.
    fn choose_notary(&self, info: &BuyerOrderInfo) -> Option<NotaryListing> {
        info.notaries
            .iter()
            .filter(|l| self.cfg.trusted_notaries.contains(&l.pk.address()))
            .min_by_key(|l| (l.fee, l.account))
            .cloned()
    }

    fn respond_to_order(&mut self, order: &DataOrder, info: &BuyerOrderInfo, ctx: &mut Ctx) {
        // The buyer attaches notaries as their endorsements come in, so an
        // empty or untrusted list is not final. Keep the order as a
        // candidate and look again next block until it closes.
        let Some(listing) = self.choose_notary(info) else {
            if self.notary_wait_noted.insert(order.id) {
                ctx.out
                    .note(format!("order {}: no mutually trusted notary yet", order.id));
            }
            return;
        };
        let mut sections =
            match extract_requested(&self.cfg.profile, &order.requested, ctx.chain.schema()) {
                Ok(sections) => sections,
                Err(e) => {
                    ctx.out.note(format!("order {}: cannot serve: {e}", order.id));
                    self.responded.insert(order.id);
                    return;
                }
            };
        if self.cfg.fabricating {
            let forged = [("forged".to_string(), Value::Int(1))].into_iter().collect();
            match sections.first_mut() {
                Some((_, records)) => records.push(forged),
                None => sections.push(("forged".into(), vec![forged])),
            }
        }
        let payload = crate::exchange::encode_payload(&sections);
        let key = SymKey::generate(ctx.rng);
        let ciphertext = crypto::sym_encrypt(&key, &payload, ctx.rng);
        let data_hash = crypto::hash(&ciphertext.to_bytes());
        let notary_address = listing.pk.address();

        let me = self.keys.address();
        let seller_account = ctx.chain.account_by_address(&me).map(|a| a.id);
        let buyer_inbox = ctx.dir.by_address(&order.buyer).map(|p| p.inbox_url.clone());
        let notary_inbox = ctx
            .dir
            .by_address(&notary_address)
            .map(|p| p.inbox_url.clone());
        let (Some(buyer_inbox), Some(notary_inbox)) = (buyer_inbox, notary_inbox) else {
            ctx.out
                .note(format!("order {}: counterparty not reachable", order.id));
            self.responded.insert(order.id);
            return;
        };

        ctx.out.send(
            buyer_inbox,
            Msg::DataResponse(DataResponse {
                order_id: order.id,
                seller_address: me,
                seller_account,
                notary_address,
                ciphertext: ciphertext.clone(),
                data_hash,
            }),
        );
        ctx.out.send(
            notary_inbox,
            Msg::SellerKey(SellerKeyMsg {
                order_id: order.id,
                seller_address: me,
                ciphertext,
                key,
            }),
        );
        self.sent.insert(
            order.id,
            SentData {
                payload_digest: crypto::hash(&payload),
                data_hash,
                notary: notary_address,
            },
        );
        self.responded.insert(order.id);
    }

    /// Submit a ledger operation directly, or ship it to the delegate as a
    /// signed order when one is configured.
    fn submit_or_delegate(&mut self, op: DelegatedOp, account: u32, nonce: u64, ctx: &mut Ctx) {
        match self.cfg.delegate {
            None => {
                let tx = match op {
                    DelegatedOp::Collect {
                        to_index,
                        declared_amount,
                    } => TxKind::Collect {
                        account,
                        to_index,
                        declared_amount,
                        stake: ctx.chain.params().collect_stake,
                    },
                    DelegatedOp::FinalizeCollect => TxKind::FinalizeCollect { account },
                    DelegatedOp::Withdraw { amount, to_address } => TxKind::Withdraw {
                        account,
                        amount,
                        to_address,
                    },
                    DelegatedOp::ChallengeRespondList { pay_indexes } => {
                        TxKind::ChallengeRespondList {
                            account,
                            pay_indexes,
                        }
                    }
                    DelegatedOp::ChallengeProveInclusion { pay_data } => {
                        TxKind::ChallengeProveInclusion { account, pay_data }
                    }
                };
                ctx.out.submit(tx);
            }
            Some(delegate) => {
                if self.delegation.is_some() {
                    return;
                }
                let Some(inbox) = ctx.dir.by_address(&delegate).map(|p| p.inbox_url.clone())
                else {
                    ctx.out.note("delegate not reachable");
                    return;
                };
                let signed = SignedOp {
                    account,
                    nonce,
                    max_fee: self.cfg.delegate_max_fee,
                    op,
                };
                let payload = serde_json::to_vec(&signed).expect("signed op serializes");
                let signature = self.keys.sign(&payload);
                let envelope = Envelope {
                    payload,
                    signature,
                    sender_pk: self.keys.public(),
                }
                .to_bytes();
                ctx.out.send(
                    inbox,
                    Msg::DelegateRequest(crate::protocol::DelegateRequest { envelope }),
                );
                self.delegation = Some((nonce, ctx.now));
            }
        }
    }

    fn drive_collection(&mut self, ctx: &mut Ctx) {
        let me = self.keys.address();
        let Some(acct) = ctx.chain.account_by_address(&me) else {
            return;
        };
        let (id, nonce, balance, last_collected) = (
            acct.id,
            acct.next_nonce,
            acct.balance,
            acct.last_collected_pay_index,
        );

        // A delegated operation is settled once the account nonce moves; a
        // stale one (dropped request or rejected transaction) is written
        // off after a grace period so the seller can act again.
        if let Some((sent_nonce, sent_block)) = self.delegation {
            if nonce > sent_nonce || ctx.now > sent_block + DELEGATION_RETRY_BLOCKS {
                self.delegation = None;
            } else {
                return;
            }
        }

        match ctx.chain.active_slot(id) {
            Some(slot) => match slot.status {
                SlotStatus::Open => {
                    if ctx.now > slot.deadline {
                        self.submit_or_delegate(DelegatedOp::FinalizeCollect, id, nonce, ctx);
                        if self.cfg.withdraw_after_collect {
                            self.withdraw_armed = true;
                        }
                    }
                }
                SlotStatus::Challenged => {
                    let list = if self.cfg.greedy {
                        game::best_response(ctx.chain, slot)
                    } else {
                        game::honest_response(ctx.chain, id, slot.from_index, slot.to_index)
                    };
                    self.responds += 1;
                    ctx.out.submit(TxKind::ChallengeRespondList {
                        account: id,
                        pay_indexes: list,
                    });
                }
                SlotStatus::AwaitingProof => {
                    let picked = slot.picked.expect("awaiting proof has a pick");
                    match game::proof_for(ctx.chain, picked) {
                        Some(pay_data) => {
                            self.proofs += 1;
                            ctx.out.submit(TxKind::ChallengeProveInclusion {
                                account: id,
                                pay_data,
                            });
                        }
                        None => ctx.out.note(format!("no proof for payment {picked}")),
                    }
                }
                SlotStatus::AwaitingPick => {
                    if slot.phase_deadline.is_some_and(|d| ctx.now > d) {
                        ctx.out.submit(TxKind::TimeoutResolve { account: id });
                    }
                }
                SlotStatus::SettledOk | SlotStatus::SettledFraud => {}
            },
            None => {
                // A delegated withdraw must leave the fee in the account,
                // so only the spendable remainder is pulled out.
                let spendable = match self.cfg.delegate {
                    Some(_) => balance.saturating_sub(self.cfg.delegate_max_fee),
                    None => balance,
                };
                if self.withdraw_armed && spendable > 0 {
                    self.withdraw_armed = false;
                    self.submit_or_delegate(
                        DelegatedOp::Withdraw {
                            amount: spendable,
                            to_address: me,
                        },
                        id,
                        nonce,
                        ctx,
                    );
                    return;
                }
                if let Some(threshold) = self.cfg.collect_threshold {
                    let pending = ctx.chain.uncollected_inclusions(id);
                    if pending.len() as u64 >= threshold {
                        let to = *pending.last().expect("non-empty");
                        let honest =
                            ctx.chain
                                .honest_collect_amount(id, last_collected + 1, to);
                        let declared = honest + if self.cfg.greedy { 1 } else { 0 };
                        self.collects += 1;
                        self.submit_or_delegate(
                            DelegatedOp::Collect {
                                to_index: to,
                                declared_amount: declared,
                            },
                            id,
                            nonce,
                            ctx,
                        );
                    }
                }
            }
        }
    }
}

impl Actor for Seller {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn role(&self) -> Role {
        Role::Seller
    }

    fn keys(&self) -> &SigningKeyPair {
        &self.keys
    }

    fn setup(&mut self, ctx: &mut Ctx) {
        if self.cfg.preregistered {
            ctx.out.submit(TxKind::Register {
                address: self.keys.address(),
            });
        }
    }

    fn on_event(&mut self, event: &crate::ledger::ChainEvent, _ctx: &mut Ctx) {
        match event {
            crate::ledger::ChainEvent::OrderCreated { order } => {
                if audience_match(&self.cfg.profile, &order.audience)
                    && order.price >= self.cfg.price_floor
                {
                    self.candidates.insert(order.id, order.clone());
                }
            }
            crate::ledger::ChainEvent::OrderClosed { order_id } => {
                self.candidates.remove(order_id);
            }
        }
    }

    fn tick(&mut self, ctx: &mut Ctx) {
        // Fund the ledger account as soon as one exists for us.
        if !self.deposited {
            if let Some(acct) = ctx.chain.account_by_address(&self.keys.address()) {
                if self.cfg.deposit > 0 {
                    ctx.out.submit(TxKind::Deposit {
                        account: acct.id,
                        amount: self.cfg.deposit,
                    });
                }
                self.deposited = true;
            }
        }

        // Answer orders whose info document has been published.
        let ready: Vec<DataOrder> = self
            .candidates
            .values()
            .filter(|o| !self.responded.contains(&o.id))
            .cloned()
            .collect();
        for order in ready {
            let Some(bytes) = ctx.docs.fetch(&order.buyer_url) else {
                continue;
            };
            let Ok(info) = serde_json::from_slice::<BuyerOrderInfo>(bytes) else {
                ctx.out
                    .note(format!("order {}: unreadable order info", order.id));
                self.responded.insert(order.id);
                continue;
            };
            if !validate_buyer_info(&info, &order) {
                ctx.out
                    .note(format!("order {}: order info fails validation", order.id));
                self.responded.insert(order.id);
                continue;
            }
            self.respond_to_order(&order, &info, ctx);
        }
        self.candidates.retain(|id, _| !self.responded.contains(id));

        self.drive_collection(ctx);
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "responded": self.sent,
            "collects_submitted": self.collects,
            "challenge_responses": self.responds,
            "inclusion_proofs": self.proofs,
        })
    }
}
