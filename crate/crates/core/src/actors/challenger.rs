//! Scripted challenger: watches open collect slots, disputes any whose
//! declared amount disagrees with the payments actually on chain, and
//! drives its disputes through to settlement. A spurious variant disputes
//! everything, which costs it its stake against honest sellers.

use std::collections::BTreeSet;

use serde_json::json;

use crate::crypto::SigningKeyPair;
use crate::engine::{Actor, Ctx, Role};
use crate::ledger::{game, SlotStatus, TxKind};
use crate::{AccountId, Amount, PayIndex};

#[derive(Clone, Debug)]
pub struct ChallengerCfg {
    pub name: String,
    pub deposit: Amount,
    /// Challenge every slot, founded or not.
    pub spurious: bool,
}

pub struct Challenger {
    cfg: ChallengerCfg,
    keys: SigningKeyPair,
    deposited: bool,
    /// Slots already challenged once, so a reopened slot is not disputed
    /// again forever.
    seen: BTreeSet<(AccountId, PayIndex, PayIndex)>,
    challenges: u64,
    picks: u64,
    timeouts: u64,
}

impl Challenger {
    pub fn new(cfg: ChallengerCfg, keys: SigningKeyPair) -> Challenger {
        Challenger {
            cfg,
            keys,
            deposited: false,
            seen: BTreeSet::new(),
            challenges: 0,
            picks: 0,
            timeouts: 0,
        }
    }
}

impl Actor for Challenger {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn role(&self) -> Role {
        Role::Challenger
    }

    fn keys(&self) -> &SigningKeyPair {
        &self.keys
    }

    fn setup(&mut self, ctx: &mut Ctx) {
        ctx.out.submit(TxKind::Register {
            address: self.keys.address(),
        });
    }

    fn tick(&mut self, ctx: &mut Ctx) {
        let me = self.keys.address();
        let Some(acct) = ctx.chain.account_by_address(&me) else {
            return;
        };
        let my_id = acct.id;
        if !self.deposited {
            if self.cfg.deposit > 0 {
                ctx.out.submit(TxKind::Deposit {
                    account: my_id,
                    amount: self.cfg.deposit,
                });
            }
            self.deposited = true;
            return;
        }

        let stake = ctx.chain.params().challenge_stake;
        let mut budget = acct.balance;
        for slot in ctx.chain.active_slots() {
            match slot.status {
                SlotStatus::Open => {
                    let key = (slot.account, slot.from_index, slot.to_index);
                    if slot.account == my_id
                        || ctx.now > slot.deadline
                        || self.seen.contains(&key)
                        || budget < stake
                    {
                        continue;
                    }
                    if self.cfg.spurious || game::should_challenge(ctx.chain, slot) {
                        self.seen.insert(key);
                        self.challenges += 1;
                        budget -= stake;
                        ctx.out.submit(TxKind::ChallengeOpen {
                            account: slot.account,
                        });
                    }
                }
                SlotStatus::AwaitingPick => {
                    let expired = slot.phase_deadline.is_none_or(|d| ctx.now > d);
                    if slot.challenger_account != Some(my_id) || expired {
                        continue;
                    }
                    if let Some(picked) = game::first_invalid_entry(ctx.chain, slot) {
                        self.picks += 1;
                        ctx.out.submit(TxKind::ChallengePick {
                            account: slot.account,
                            pay_index: picked,
                        });
                    }
                    // Every listed entry checks out: concede by stalling and
                    // let the seller's timeout reclaim the slot.
                }
                SlotStatus::Challenged | SlotStatus::AwaitingProof => {
                    let expired = slot.phase_deadline.is_some_and(|d| ctx.now > d);
                    if slot.challenger_account == Some(my_id) && expired {
                        self.timeouts += 1;
                        ctx.out.submit(TxKind::TimeoutResolve {
                            account: slot.account,
                        });
                    }
                }
                SlotStatus::SettledOk | SlotStatus::SettledFraud => {}
            }
        }
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "challenges": self.challenges,
            "picks": self.picks,
            "timeouts": self.timeouts,
        })
    }
}
