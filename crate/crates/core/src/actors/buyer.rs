//! Scripted buyer: opens orders, gathers notary endorsements, publishes the
//! order info document, batches submissions out for notarization, pays the
//! accepted sellers in one payment per notary, and decrypts the purchased
//! data once the master key is revealed. Payments whose key never appears
//! are refunded after the unlock window closes.

use std::collections::BTreeMap;

use serde_json::json;

use crate::crypto::{self, SigningKeyPair, SymKey};
use crate::engine::{order_doc_url, Actor, Ctx, Role};
use crate::exchange::{AudienceQuery, BuyerOrderInfo, DataQuery, NotaryListing};
use crate::ledger::{encode_pay_data, ChainEvent, TxKind};
use crate::protocol::{
    DataResponse, Msg, NotarizationResponse, NotarizeEntry, NotaryTermsRequest,
};
use crate::{Address, Amount, BlockNumber, Hash32, OrderId, PayIndex};

/// How long after creation the buyer waits for stragglers' endorsements
/// before publishing with whatever arrived.
const TERMS_WAIT_BLOCKS: u64 = 4;

#[derive(Clone, Debug)]
pub struct OrderPlan {
    pub create_block: BlockNumber,
    pub price: Amount,
    pub audience: AudienceQuery,
    pub requested: Vec<DataQuery>,
    pub description: String,
    pub intended_use: String,
    pub tc_text: String,
    /// Candidate notaries to invite, by address.
    pub notaries: Vec<Address>,
    /// Submissions are batched for notarization this many blocks after
    /// creation; later arrivals are turned away.
    pub response_window_blocks: u64,
    pub max_sellers: usize,
}

#[derive(Clone, Debug)]
pub struct BuyerCfg {
    pub name: String,
    pub deposit: Amount,
    pub orders: Vec<OrderPlan>,
}

#[derive(Clone, Copy)]
enum FlowPhase {
    /// Register transactions for unregistered accepted sellers are in;
    /// account ids resolve next tick.
    Registering,
    /// Payment submitted, waiting to see it on chain.
    AwaitingPayment,
    Paid {
        pay_index: PayIndex,
        refund_submitted: bool,
    },
    Done,
    Aborted,
}

/// One notarization round with one notary inside an order run.
struct Flow {
    notary: Address,
    response: NotarizationResponse,
    phase: FlowPhase,
}

struct OrderRun {
    plan_ix: usize,
    doc_url: String,
    created: bool,
    order_id: Option<OrderId>,
    created_block: BlockNumber,
    listings: Vec<NotaryListing>,
    info_published: bool,
    responses: BTreeMap<Address, DataResponse>,
    arrival_order: Vec<Address>,
    request_sent: bool,
    flows: Vec<Flow>,
    recovered: BTreeMap<Address, Hash32>,
    faults: Vec<String>,
    refunded: Vec<PayIndex>,
}

pub struct Buyer {
    cfg: BuyerCfg,
    keys: SigningKeyPair,
    runs: Vec<OrderRun>,
    deposited: bool,
}

impl Buyer {
    pub fn new(cfg: BuyerCfg, keys: SigningKeyPair) -> Buyer {
        let runs = (0..cfg.orders.len())
            .map(|ix| OrderRun {
                plan_ix: ix,
                doc_url: order_doc_url(&cfg.name, ix as u64),
                created: false,
                order_id: None,
                created_block: 0,
                listings: Vec::new(),
                info_published: false,
                responses: BTreeMap::new(),
                arrival_order: Vec::new(),
                request_sent: false,
                flows: Vec::new(),
                recovered: BTreeMap::new(),
                faults: Vec::new(),
                refunded: Vec::new(),
            })
            .collect();
        Buyer {
            cfg,
            keys,
            runs,
            deposited: false,
        }
    }

}

fn find_run(runs: &mut [OrderRun], order_id: OrderId) -> Option<&mut OrderRun> {
    runs.iter_mut().find(|r| r.order_id == Some(order_id))
}

/// Decrypt every paid seller's data with the revealed master key and
/// record payload digests; failures become notary or seller faults.
fn recover_data(
    flow: &Flow,
    master: &SymKey,
    responses: &BTreeMap<Address, DataResponse>,
    recovered: &mut BTreeMap<Address, Hash32>,
    faults: &mut Vec<String>,
) {
    for result in &flow.response.body.results {
        if !result.verdict.is_paid() {
            continue;
        }
        let seller = result.seller_address;
        let Some(key_cipher) = &result.key_cipher else {
            faults.push(format!("{seller}: paid without a wrapped key"));
            continue;
        };
        let Some(data) = responses.get(&seller) else {
            faults.push(format!("{seller}: verdict for unknown submission"));
            continue;
        };
        let key = crypto::sym_decrypt(master, key_cipher)
            .ok()
            .and_then(|bytes| SymKey::from_slice(&bytes));
        let Some(key) = key else {
            faults.push(format!("{seller}: wrapped key does not decrypt"));
            continue;
        };
        match crypto::sym_decrypt(&key, &data.ciphertext) {
            Ok(payload) => {
                recovered.insert(seller, crypto::hash(&payload));
            }
            Err(_) => faults.push(format!("{seller}: data does not decrypt under its key")),
        }
    }
}

impl Actor for Buyer {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn role(&self) -> Role {
        Role::Buyer
    }

    fn keys(&self) -> &SigningKeyPair {
        &self.keys
    }

    fn setup(&mut self, ctx: &mut Ctx) {
        ctx.out.submit(TxKind::Register {
            address: self.keys.address(),
        });
    }

    fn on_event(&mut self, event: &ChainEvent, ctx: &mut Ctx) {
        let ChainEvent::OrderCreated { order } = event else {
            return;
        };
        if order.buyer != self.keys.address() {
            return;
        }
        let Some(run) = self
            .runs
            .iter_mut()
            .find(|r| r.order_id.is_none() && r.doc_url == order.buyer_url)
        else {
            return;
        };
        run.order_id = Some(order.id);
        run.created_block = order.created_block;
        let plan = &self.cfg.orders[run.plan_ix];
        for notary in &plan.notaries {
            if let Some(p) = ctx.dir.by_address(notary) {
                ctx.out.send(
                    p.inbox_url.clone(),
                    Msg::NotaryTermsRequest(NotaryTermsRequest { order_id: order.id }),
                );
            }
        }
    }

    fn on_message(&mut self, from: crypto::PubKey, msg: Msg, ctx: &mut Ctx) {
        match msg {
            Msg::NotaryTermsResponse(resp) => {
                let sender = from.address();
                let order_id = resp.order_id;
                let Some(run) = find_run(&mut self.runs, order_id) else {
                    return;
                };
                // Endorsements arriving after the response phase started
                // can no longer influence anything; until then even a slow
                // notary gets attached and the info document refreshed.
                if run.request_sent || run.listings.iter().any(|l| l.pk == from) {
                    return;
                }
                if !self.cfg.orders[run.plan_ix].notaries.contains(&sender) {
                    return;
                }
                let message =
                    crate::exchange::notary_terms_message(order_id, resp.fee, &resp.terms);
                if !crypto::verify(&from, &message, resp.signature.as_bytes()) {
                    ctx.out
                        .note(format!("order {order_id}: bad endorsement from {sender}"));
                    return;
                }
                run.listings.push(NotaryListing {
                    account: resp.account,
                    pk: from,
                    fee: resp.fee,
                    terms: resp.terms,
                    signature: resp.signature,
                });
                if run.info_published {
                    let plan = &self.cfg.orders[run.plan_ix];
                    let info = BuyerOrderInfo {
                        order_id,
                        buyer_pk: self.keys.public(),
                        buyer_name: self.cfg.name.clone(),
                        description: plan.description.clone(),
                        logo: String::new(),
                        intended_use: plan.intended_use.clone(),
                        tc_text: plan.tc_text.clone(),
                        notaries: run.listings.clone(),
                    };
                    ctx.out.publish(
                        run.doc_url.clone(),
                        serde_json::to_vec(&info).expect("order info serializes"),
                    );
                }
            }
            Msg::DataResponse(resp) => {
                let Some(run) = find_run(&mut self.runs, resp.order_id) else {
                    return;
                };
                if run.request_sent || resp.seller_address != from.address() {
                    return;
                }
                if run.responses.len() >= self.cfg.orders[run.plan_ix].max_sellers
                    || run.responses.contains_key(&resp.seller_address)
                {
                    return;
                }
                if crypto::hash(&resp.ciphertext.to_bytes()) != resp.data_hash {
                    ctx.out.note(format!(
                        "order {}: submission hash mismatch from {}",
                        resp.order_id, resp.seller_address
                    ));
                    return;
                }
                if !run
                    .listings
                    .iter()
                    .any(|l| l.pk.address() == resp.notary_address)
                {
                    ctx.out.note(format!(
                        "order {}: submission names an unendorsed notary",
                        resp.order_id
                    ));
                    return;
                }
                run.arrival_order.push(resp.seller_address);
                run.responses.insert(resp.seller_address, resp);
            }
            Msg::NotarizationResponse(resp) => {
                let order_id = resp.body.order_id;
                let notary = resp.body.notary_address;
                if notary != from.address()
                    || !crypto::verify(&from, &resp.body.signing_bytes(), resp.signature.as_bytes())
                {
                    ctx.out
                        .note(format!("order {order_id}: forged notarization response"));
                    return;
                }
                let Some(run) = find_run(&mut self.runs, order_id) else {
                    return;
                };
                if !run.request_sent || run.flows.iter().any(|f| f.notary == notary) {
                    return;
                }
                let Some(listing) = run.listings.iter().find(|l| l.pk == from) else {
                    return;
                };
                if resp.body.fee != listing.fee {
                    run.flows.push(Flow {
                        notary,
                        response: resp,
                        phase: FlowPhase::Aborted,
                    });
                    ctx.out
                        .note(format!("order {order_id}: notary changed its fee"));
                    return;
                }
                // Every verdict must answer a submission we actually sent.
                if resp
                    .body
                    .results
                    .iter()
                    .any(|r| !run.responses.contains_key(&r.seller_address))
                {
                    run.flows.push(Flow {
                        notary,
                        response: resp,
                        phase: FlowPhase::Aborted,
                    });
                    ctx.out
                        .note(format!("order {order_id}: verdict for unknown seller"));
                    return;
                }
                for result in &resp.body.results {
                    if result.verdict.is_paid()
                        && ctx
                            .chain
                            .account_by_address(&result.seller_address)
                            .is_none()
                    {
                        ctx.out.submit(TxKind::Register {
                            address: result.seller_address,
                        });
                    }
                }
                run.flows.push(Flow {
                    notary,
                    response: resp,
                    phase: FlowPhase::Registering,
                });
            }
            _ => {}
        }
    }

    fn tick(&mut self, ctx: &mut Ctx) {
        let me = self.keys.address();
        if !self.deposited {
            if let Some(acct) = ctx.chain.account_by_address(&me) {
                if self.cfg.deposit > 0 {
                    ctx.out.submit(TxKind::Deposit {
                        account: acct.id,
                        amount: self.cfg.deposit,
                    });
                }
                self.deposited = true;
            }
        }
        let my_account = ctx.chain.account_by_address(&me).map(|a| a.id);

        for run in &mut self.runs {
            let plan = &self.cfg.orders[run.plan_ix];

            if !run.created && ctx.now >= plan.create_block {
                ctx.out.submit(TxKind::CreateOrder {
                    audience: plan.audience.clone(),
                    requested: plan.requested.clone(),
                    price: plan.price,
                    tc_hash: crypto::hash(plan.tc_text.as_bytes()),
                    buyer_url: run.doc_url.clone(),
                });
                run.created = true;
            }
            let Some(order_id) = run.order_id else {
                continue;
            };

            if !run.info_published
                && (run.listings.len() == plan.notaries.len()
                    || ctx.now >= run.created_block + TERMS_WAIT_BLOCKS)
            {
                let info = BuyerOrderInfo {
                    order_id,
                    buyer_pk: self.keys.public(),
                    buyer_name: self.cfg.name.clone(),
                    description: plan.description.clone(),
                    logo: String::new(),
                    intended_use: plan.intended_use.clone(),
                    tc_text: plan.tc_text.clone(),
                    notaries: run.listings.clone(),
                };
                ctx.out.publish(
                    run.doc_url.clone(),
                    serde_json::to_vec(&info).expect("order info serializes"),
                );
                run.info_published = true;
            }

            if run.info_published
                && !run.request_sent
                && ctx.now >= run.created_block + plan.response_window_blocks
            {
                let mut by_notary: BTreeMap<Address, Vec<NotarizeEntry>> = BTreeMap::new();
                for seller in &run.arrival_order {
                    let resp = &run.responses[seller];
                    by_notary
                        .entry(resp.notary_address)
                        .or_default()
                        .push(NotarizeEntry {
                            seller_address: *seller,
                            seller_account: ctx
                                .chain
                                .account_by_address(seller)
                                .map(|a| a.id),
                            data_hash: resp.data_hash,
                        });
                }
                for (notary, sellers) in by_notary {
                    if let Some(p) = ctx.dir.by_address(&notary) {
                        ctx.out.send(
                            p.inbox_url.clone(),
                            Msg::NotarizationRequest(
                                crate::protocol::NotarizationRequest { order_id, sellers },
                            ),
                        );
                    }
                }
                ctx.out.submit(TxKind::CloseOrder { order_id });
                run.request_sent = true;
            }

            // Advance each notarization flow.
            for flow in &mut run.flows {
                match flow.phase {
                    FlowPhase::Registering => {
                        let body = &flow.response.body;
                        let mut ids = Vec::new();
                        let mut missing = false;
                        for result in &body.results {
                            if !result.verdict.is_paid() {
                                continue;
                            }
                            match ctx.chain.account_by_address(&result.seller_address) {
                                Some(a) => ids.push(a.id),
                                None => missing = true,
                            }
                        }
                        if missing {
                            continue;
                        }
                        if ids.is_empty() {
                            ctx.out.note(format!(
                                "order {order_id}: no seller accepted, nothing to pay"
                            ));
                            flow.phase = FlowPhase::Done;
                            continue;
                        }
                        let pay_data = encode_pay_data(&ids).expect("accepted ids are distinct");
                        if pay_data.hash() != body.pay_data_hash {
                            ctx.out.note(format!(
                                "order {order_id}: notary pay data does not match accepted sellers"
                            ));
                            flow.phase = FlowPhase::Aborted;
                            continue;
                        }
                        let Some(from) = my_account else {
                            continue;
                        };
                        ctx.out.submit(TxKind::RegisterPayment {
                            from,
                            per_destination_amount: plan.price,
                            pay_data,
                            lock: body.lock,
                            notary_fee: body.fee,
                            notary_address: body.notary_address,
                        });
                        flow.phase = FlowPhase::AwaitingPayment;
                    }
                    FlowPhase::AwaitingPayment => {
                        let lock = flow.response.body.lock;
                        let found = ctx
                            .chain
                            .payments()
                            .iter()
                            .find(|p| p.lock == lock && Some(p.from) == my_account);
                        if let Some(p) = found {
                            flow.phase = FlowPhase::Paid {
                                pay_index: p.pay_index,
                                refund_submitted: false,
                            };
                        }
                    }
                    FlowPhase::Paid {
                        pay_index,
                        refund_submitted,
                    } => {
                        let Some(p) = ctx.chain.payment(pay_index) else {
                            continue;
                        };
                        if p.unlocked {
                            let master = p.master_key.expect("unlocked payment has its key");
                            recover_data(
                                flow,
                                &master,
                                &run.responses,
                                &mut run.recovered,
                                &mut run.faults,
                            );
                            flow.phase = FlowPhase::Done;
                        } else if p.voided {
                            run.refunded.push(pay_index);
                            flow.phase = FlowPhase::Done;
                        } else if !refund_submitted
                            && ctx.now > p.block + ctx.chain.params().unlock_timeout_blocks
                        {
                            ctx.out.submit(TxKind::RefundLockedPayment { pay_index });
                            flow.phase = FlowPhase::Paid {
                                pay_index,
                                refund_submitted: true,
                            };
                        }
                    }
                    FlowPhase::Done | FlowPhase::Aborted => {}
                }
            }
        }
    }

    fn summary(&self) -> serde_json::Value {
        let orders: BTreeMap<String, serde_json::Value> = self
            .runs
            .iter()
            .map(|run| {
                let phase = |f: &Flow| match f.phase {
                    FlowPhase::Registering => "registering".to_string(),
                    FlowPhase::AwaitingPayment => "awaiting_payment".to_string(),
                    FlowPhase::Paid { pay_index, .. } => format!("paid:{pay_index}"),
                    FlowPhase::Done => "done".to_string(),
                    FlowPhase::Aborted => "aborted".to_string(),
                };
                let key = run
                    .order_id
                    .map(|id| id.to_string())
                    .unwrap_or_else(|| format!("plan-{}", run.plan_ix));
                (
                    key,
                    json!({
                        "responses": run.responses.len(),
                        "recovered": run.recovered,
                        "faults": run.faults,
                        "refunded": run.refunded,
                        "flows": run.flows.iter().map(|f| json!({
                            "notary": f.notary,
                            "phase": phase(f),
                        })).collect::<Vec<_>>(),
                    }),
                )
            })
            .collect();
        json!({ "orders": orders })
    }
}
