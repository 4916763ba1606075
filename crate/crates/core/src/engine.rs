//! Deterministic simulation engine. One block per step: deliver due
//! messages, surface chain events, tick every participant in registration
//! order, then apply their queued transactions in order. A single seeded
//! rng drives every random draw, and value conservation is checked after
//! each transaction; a violation aborts the run.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use crate::crypto::{open_message, Address, PubKey, SigningKeyPair, SimRng};
use crate::ledger::{Chain, ChainEvent, TxKind, TxRecord};
use crate::net::{DocStore, Transport, WireRecord};
use crate::protocol::Msg;
use crate::report::RunReport;
use crate::BlockNumber;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Buyer,
    Seller,
    Notary,
    Delegate,
    Challenger,
}

/// Public identity of one participant: what everyone is allowed to know.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Participant {
    pub name: String,
    pub role: Role,
    pub address: Address,
    pub pk: PubKey,
    pub inbox_url: String,
}

/// Shared phone book. Names, addresses, keys, and inbox URLs are public;
/// it is the trust anchor actors use to verify who signed what.
#[derive(Default)]
pub struct Directory {
    list: Vec<Participant>,
    by_name: BTreeMap<String, usize>,
    by_address: BTreeMap<Address, usize>,
    by_url: BTreeMap<String, usize>,
}

impl Directory {
    pub fn add(&mut self, p: Participant) {
        let ix = self.list.len();
        self.by_name.insert(p.name.clone(), ix);
        self.by_address.insert(p.address, ix);
        self.by_url.insert(p.inbox_url.clone(), ix);
        self.list.push(p);
    }

    pub fn all(&self) -> &[Participant] {
        &self.list
    }

    pub fn by_name(&self, name: &str) -> Option<&Participant> {
        self.by_name.get(name).map(|&ix| &self.list[ix])
    }

    pub fn by_address(&self, address: &Address) -> Option<&Participant> {
        self.by_address.get(address).map(|&ix| &self.list[ix])
    }

    pub fn by_inbox(&self, url: &str) -> Option<&Participant> {
        self.by_url.get(url).map(|&ix| &self.list[ix])
    }

    pub fn notaries(&self) -> impl Iterator<Item = &Participant> {
        self.list.iter().filter(|p| p.role == Role::Notary)
    }
}

/// What an actor decided to do this invocation. Sends are sealed by the
/// engine with the actor's own keys immediately after the handler returns.
pub enum Action {
    Send { url: String, msg: Msg },
    Publish { url: String, bytes: Vec<u8> },
    Submit { tx: TxKind },
    Note { text: String },
}

#[derive(Default)]
pub struct Outbox {
    actions: Vec<Action>,
}

impl Outbox {
    pub fn send(&mut self, url: impl Into<String>, msg: Msg) {
        self.actions.push(Action::Send {
            url: url.into(),
            msg,
        });
    }

    pub fn publish(&mut self, url: impl Into<String>, bytes: Vec<u8>) {
        self.actions.push(Action::Publish {
            url: url.into(),
            bytes,
        });
    }

    pub fn submit(&mut self, tx: TxKind) {
        self.actions.push(Action::Submit { tx });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.actions.push(Action::Note { text: text.into() });
    }
}

/// Read-only world view handed to actor handlers, plus the rng and outbox.
pub struct Ctx<'a> {
    pub now: BlockNumber,
    pub chain: &'a Chain,
    pub dir: &'a Directory,
    pub docs: &'a DocStore,
    pub rng: &'a mut SimRng,
    pub out: &'a mut Outbox,
}

/// A scripted participant. Handlers run in a fixed order each block and
/// may only affect the world through the outbox.
pub trait Actor {
    fn name(&self) -> &str;
    fn role(&self) -> Role;
    fn keys(&self) -> &SigningKeyPair;

    fn address(&self) -> Address {
        self.keys().address()
    }

    /// Runs once at block zero, before the first tick.
    fn setup(&mut self, _ctx: &mut Ctx) {}

    fn on_event(&mut self, _event: &ChainEvent, _ctx: &mut Ctx) {}

    fn on_message(&mut self, _from: PubKey, _msg: Msg, _ctx: &mut Ctx) {}

    fn tick(&mut self, _ctx: &mut Ctx) {}

    /// Per-actor findings folded into the run report.
    fn summary(&self) -> serde_json::Value {
        json!({})
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLine {
    Block {
        block: BlockNumber,
    },
    Delivered {
        block: BlockNumber,
        to: String,
        msg: String,
    },
    Undeliverable {
        block: BlockNumber,
        to: String,
        reason: String,
    },
    Event {
        block: BlockNumber,
        event: ChainEvent,
    },
    Wire {
        record: WireRecord,
    },
    Note {
        block: BlockNumber,
        actor: String,
        text: String,
    },
    Tx {
        actor: String,
        record: TxRecord,
    },
    Invariant {
        block: BlockNumber,
        text: String,
    },
}

pub struct Engine {
    scenario: String,
    seed: u64,
    chain: Chain,
    transport: Transport,
    docs: DocStore,
    dir: Directory,
    actors: Vec<Box<dyn Actor>>,
    by_address: BTreeMap<Address, usize>,
    rng: SimRng,
    pending_txs: Vec<(usize, TxKind)>,
    trace: Vec<TraceLine>,
    invariant_failures: Vec<String>,
    started: bool,
}

impl Engine {
    pub fn new(scenario: &str, seed: u64, chain: Chain, transport: Transport) -> Engine {
        Engine {
            scenario: scenario.to_string(),
            seed,
            chain,
            transport,
            docs: DocStore::default(),
            dir: Directory::default(),
            actors: Vec::new(),
            by_address: BTreeMap::new(),
            rng: crate::crypto::rng_from_seed(seed),
            pending_txs: Vec::new(),
            trace: Vec::new(),
            invariant_failures: Vec::new(),
            started: false,
        }
    }

    /// Register an actor and its inbox. Order of addition fixes tick order
    /// and, through setup-time registrations, ledger account numbering.
    pub fn add_actor(&mut self, actor: Box<dyn Actor>) {
        let address = actor.address();
        let inbox_url = inbox_url(actor.name());
        self.transport
            .register_endpoint(&inbox_url, address)
            .expect("actor names are unique");
        self.dir.add(Participant {
            name: actor.name().to_string(),
            role: actor.role(),
            address,
            pk: actor.keys().public(),
            inbox_url,
        });
        self.by_address.insert(address, self.actors.len());
        self.actors.push(actor);
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn dir(&self) -> &Directory {
        &self.dir
    }

    pub fn docs(&self) -> &DocStore {
        &self.docs
    }

    pub fn trace(&self) -> &[TraceLine] {
        &self.trace
    }

    pub fn invariant_failures(&self) -> &[String] {
        &self.invariant_failures
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Run `blocks` more blocks, stopping early on an invariant violation.
    pub fn run(&mut self, blocks: u64) {
        for _ in 0..blocks {
            if !self.step() {
                break;
            }
        }
    }

    /// One block. Returns false when the run must abort.
    fn step(&mut self) -> bool {
        let now = self.chain.block();
        self.trace.push(TraceLine::Block { block: now });
        let mut actors = std::mem::take(&mut self.actors);

        // Messages that were due before this block.
        for delivery in self.transport.drain_due(now) {
            let Some(&ix) = self.by_address.get(&delivery.to) else {
                self.trace.push(TraceLine::Undeliverable {
                    block: now,
                    to: delivery.url.clone(),
                    reason: "no such participant".into(),
                });
                continue;
            };
            let actor = &mut actors[ix];
            let opened = open_message(actor.keys(), &delivery.sealed)
                .map_err(|e| e.to_string())
                .and_then(|(payload, sender)| {
                    Msg::from_bytes(&payload)
                        .map(|msg| (msg, sender))
                        .map_err(|e| e.to_string())
                });
            match opened {
                Ok((msg, sender)) => {
                    self.trace.push(TraceLine::Delivered {
                        block: now,
                        to: actor.name().to_string(),
                        msg: msg.name().to_string(),
                    });
                    let mut out = Outbox::default();
                    let mut ctx = Ctx {
                        now,
                        chain: &self.chain,
                        dir: &self.dir,
                        docs: &self.docs,
                        rng: &mut self.rng,
                        out: &mut out,
                    };
                    actor.on_message(sender, msg, &mut ctx);
                    self.flush(ix, &actors, out, now);
                }
                Err(reason) => {
                    self.trace.push(TraceLine::Undeliverable {
                        block: now,
                        to: actor.name().to_string(),
                        reason,
                    });
                }
            }
        }

        // Events raised by the previous block's transactions.
        let events = self.chain.drain_events();
        for event in &events {
            self.trace.push(TraceLine::Event {
                block: now,
                event: event.clone(),
            });
            for ix in 0..actors.len() {
                let mut out = Outbox::default();
                let mut ctx = Ctx {
                    now,
                    chain: &self.chain,
                    dir: &self.dir,
                    docs: &self.docs,
                    rng: &mut self.rng,
                    out: &mut out,
                };
                actors[ix].on_event(event, &mut ctx);
                self.flush(ix, &actors, out, now);
            }
        }

        // Ticks, with setup first on the opening block.
        for ix in 0..actors.len() {
            let mut out = Outbox::default();
            let mut ctx = Ctx {
                now,
                chain: &self.chain,
                dir: &self.dir,
                docs: &self.docs,
                rng: &mut self.rng,
                out: &mut out,
            };
            if !self.started {
                actors[ix].setup(&mut ctx);
            }
            actors[ix].tick(&mut ctx);
            self.flush(ix, &actors, out, now);
        }
        self.started = true;
        self.actors = actors;

        // Apply this block's transactions in submission order.
        let pending = std::mem::take(&mut self.pending_txs);
        for (ix, tx) in pending {
            let sender = self.actors[ix].address();
            let _ = self.chain.submit(sender, tx);
            self.trace.push(TraceLine::Tx {
                actor: self.actors[ix].name().to_string(),
                record: self.chain.tx_log().last().unwrap().clone(),
            });
            if let Err(text) = self.chain.check_conservation() {
                let text = format!("block {now}: {text}");
                self.trace.push(TraceLine::Invariant {
                    block: now,
                    text: text.clone(),
                });
                self.invariant_failures.push(text);
                return false;
            }
        }

        self.chain.advance_block(1);
        true
    }

    /// Carry out one handler's actions: seal and send messages with the
    /// acting participant's keys, publish documents, queue transactions.
    fn flush(&mut self, ix: usize, actors: &[Box<dyn Actor>], out: Outbox, now: BlockNumber) {
        let actor = &actors[ix];
        for action in out.actions {
            match action {
                Action::Send { url, msg } => {
                    let Some(recipient) = self.dir.by_inbox(&url) else {
                        self.trace.push(TraceLine::Undeliverable {
                            block: now,
                            to: url,
                            reason: "unknown inbox".into(),
                        });
                        continue;
                    };
                    let sealed = crate::crypto::seal_message(
                        actor.keys(),
                        &recipient.pk,
                        &msg.to_bytes(),
                        &mut self.rng,
                    )
                    .expect("directory keys are valid");
                    let from = actor.address();
                    if self
                        .transport
                        .send(now, from, &url, sealed, &mut self.rng)
                        .is_ok()
                    {
                        self.trace.push(TraceLine::Wire {
                            record: self.transport.transcript().last().unwrap().clone(),
                        });
                    }
                }
                Action::Publish { url, bytes } => {
                    self.docs.publish(now, &url, bytes);
                }
                Action::Submit { tx } => {
                    self.pending_txs.push((ix, tx));
                }
                Action::Note { text } => {
                    self.trace.push(TraceLine::Note {
                        block: now,
                        actor: actor.name().to_string(),
                        text,
                    });
                }
            }
        }
    }

    pub fn report(&self) -> RunReport {
        let mut actor_summaries = BTreeMap::new();
        for actor in &self.actors {
            actor_summaries.insert(actor.name().to_string(), actor.summary());
        }
        RunReport::assemble(
            &self.scenario,
            self.seed,
            &self.chain,
            &self.dir,
            self.transport.transcript(),
            &self.invariant_failures,
            actor_summaries,
        )
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.trace {
            out.push_str(&serde_json::to_string(line).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

/// Inbox URL convention; names are unique so URLs are too.
pub fn inbox_url(name: &str) -> String {
    format!("msg://{name}")
}

/// Document URL a buyer publishes its order info under.
pub fn order_doc_url(buyer_name: &str, local_seq: u64) -> String {
    format!("doc://{buyer_name}/order-{local_seq}")
}
