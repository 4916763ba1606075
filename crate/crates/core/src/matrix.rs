//! Exhaustive settlement enumeration for the collect challenge game,
//! driven directly on the ledger with no messaging in between. Every
//! combination of payment inclusion, lock state, collect range, declared
//! amount, and challenger behaviour at desk scale is played out and the
//! final balances checked against the staking rules:
//!
//!   honest declaration, any challenger -> the seller keeps its stake and
//!     is credited exactly the honest amount;
//!   wrong declaration, honest challenger -> the slot settles as fraud,
//!     the seller forfeits its stake and is credited nothing.

use serde::Serialize;

use crate::crypto::{make_lock, SymKey};
use crate::ledger::game::{best_response, first_invalid_entry, proof_for, should_challenge};
use crate::ledger::{encode_pay_data, Chain, ChainParams, SlotStatus, TxEffect, TxKind};
use crate::scenario::MatrixCfg;
use crate::{AccountId, Address, Amount, PayIndex};

/// How the challenger plays once a slot is open.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum ChallengerPlay {
    /// Never challenges; the slot finalizes quietly.
    None,
    /// Challenges, then picks the first entry the chain itself says cannot
    /// stand, or concedes by stalling when every entry is valid.
    PickInvalid,
    /// Challenges, then picks the first listed entry no matter what. Loses
    /// against honest responses; only paired with honest declarations.
    PickFirstListed,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Declared {
    Honest,
    OneUnder,
    OneOver,
    PerOver,
}

impl Declared {
    fn amount(self, honest: Amount, per: Amount) -> Option<Amount> {
        match self {
            Declared::Honest => Some(honest),
            Declared::OneUnder => honest.checked_sub(1),
            Declared::OneOver => Some(honest + 1),
            Declared::PerOver => Some(honest + per),
        }
    }
}

/// One enumerated case that did not settle the way the rules demand.
#[derive(Clone, Debug, Serialize)]
pub struct MatrixFailure {
    pub payments: u64,
    pub sellers: u32,
    pub inclusion_mask: u32,
    pub lock_mask: u32,
    pub to_index: PayIndex,
    pub declared: Amount,
    pub honest: Amount,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MatrixReport {
    pub cases: u64,
    pub honest_cases: u64,
    pub fraud_cases: u64,
    pub failures: Vec<MatrixFailure>,
}

impl MatrixReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn addr(tag: u8, n: u8) -> Address {
    let mut bytes = [0u8; 20];
    bytes[0] = tag;
    bytes[1] = n;
    Address(bytes)
}

struct Cast {
    buyer: Address,
    collector: Address,
    collector_id: AccountId,
    challenger: Address,
    challenger_id: AccountId,
}

/// Ledger with the payments for one (payments, sellers, inclusion, lock)
/// cell already registered and unlocked. The index into each mask is the
/// payment number minus one: inclusion bits say which payments list the
/// collector as a payee, lock bits say which stay locked.
fn base_chain(
    params: &ChainParams,
    payments: u64,
    sellers: u32,
    inclusion_mask: u32,
    lock_mask: u32,
    per: Amount,
) -> (Chain, Cast) {
    let buyer = addr(1, 0);
    let collector = addr(2, 0);
    let challenger = addr(3, 0);
    let buyer_funds: Amount = per
        .checked_mul((payments * (sellers as u64 + 1)) as Amount)
        .expect("desk-scale budget");
    let allocations = [
        (buyer, buyer_funds),
        (collector, params.collect_stake),
        (challenger, params.challenge_stake),
    ]
    .into_iter()
    .collect();
    let mut chain =
        Chain::new(*params, Default::default(), &allocations).expect("allocations fit supply");

    let mut register = |address: Address| -> AccountId {
        let effect = chain
            .submit(address, TxKind::Register { address })
            .expect("fresh address registers");
        match effect {
            TxEffect::Registered { id } => id,
            other => panic!("register produced {other:?}"),
        }
    };
    let buyer_id = register(buyer);
    let collector_id = register(collector);
    let challenger_id = register(challenger);
    // Padding sellers share every payee list so larger casts produce the
    // longer pay data the challenge game hashes and reveals.
    let mut padding = Vec::new();
    for n in 1..sellers {
        padding.push(register(addr(2, n as u8)));
    }

    for (owner, account, amount) in [
        (buyer, buyer_id, buyer_funds),
        (collector, collector_id, params.collect_stake),
        (challenger, challenger_id, params.challenge_stake),
    ] {
        chain
            .submit(owner, TxKind::Deposit { account, amount })
            .expect("allocated funds deposit");
    }

    let master = SymKey([7; 32]);
    for j in 0..payments {
        let mut payees = vec![challenger_id];
        if inclusion_mask >> j & 1 == 1 {
            payees.push(collector_id);
        }
        payees.extend(&padding);
        payees.sort_unstable();
        let pay_data = encode_pay_data(&payees).expect("ascending ids encode");
        chain
            .submit(
                buyer,
                TxKind::RegisterPayment {
                    from: buyer_id,
                    per_destination_amount: per,
                    pay_data,
                    lock: make_lock(0, &master),
                    notary_fee: 0,
                    notary_address: buyer,
                },
            )
            .expect("funded payment registers");
        if lock_mask >> j & 1 == 0 {
            chain
                .submit(
                    buyer,
                    TxKind::UnlockPayment {
                        pay_index: chain.latest_pay_index(),
                        notary_id: 0,
                        master_key: master,
                    },
                )
                .expect("matching key unlocks");
        }
    }

    (
        chain,
        Cast {
            buyer,
            collector,
            collector_id,
            challenger,
            challenger_id,
        },
    )
}

/// Play one case to settlement and return what went wrong, if anything.
fn play_case(
    mut chain: Chain,
    cast: &Cast,
    to_index: PayIndex,
    declared: Amount,
    honest: Amount,
    play: ChallengerPlay,
) -> Result<(), String> {
    let fraudulent = declared != honest;
    let seller_start = chain.account(cast.collector_id).expect("registered").balance;
    let challenger_start = chain
        .account(cast.challenger_id)
        .expect("registered")
        .balance;
    let stake = chain.params().collect_stake;

    chain
        .submit(
            cast.collector,
            TxKind::Collect {
                account: cast.collector_id,
                to_index,
                declared_amount: declared,
                stake,
            },
        )
        .map_err(|e| format!("collect rejected: {e}"))?;

    let slot = chain
        .active_slot(cast.collector_id)
        .expect("collect opened a slot")
        .clone();
    if should_challenge(&chain, &slot) != fraudulent {
        return Err(format!(
            "challenge oracle says {} for a {} declaration",
            should_challenge(&chain, &slot),
            if fraudulent { "fraudulent" } else { "honest" }
        ));
    }

    match play {
        ChallengerPlay::None => {}
        ChallengerPlay::PickInvalid | ChallengerPlay::PickFirstListed => {
            chain
                .submit(
                    cast.challenger,
                    TxKind::ChallengeOpen {
                        account: cast.collector_id,
                    },
                )
                .map_err(|e| format!("challenge rejected: {e}"))?;

            // Seller answers with its strongest list; a mismatched sum
            // settles the game right here.
            let slot = chain.active_slot(cast.collector_id).unwrap().clone();
            let response = best_response(&chain, &slot);
            chain
                .submit(
                    cast.collector,
                    TxKind::ChallengeRespondList {
                        account: cast.collector_id,
                        pay_indexes: response,
                    },
                )
                .map_err(|e| format!("response rejected: {e}"))?;

            if let Some(slot) = chain.active_slot(cast.collector_id) {
                if slot.status == SlotStatus::AwaitingPick {
                    let slot = slot.clone();
                    let pick = match play {
                        ChallengerPlay::PickInvalid => first_invalid_entry(&chain, &slot),
                        ChallengerPlay::PickFirstListed => {
                            slot.response.as_deref().unwrap_or(&[]).first().copied()
                        }
                        ChallengerPlay::None => unreachable!(),
                    };
                    if fraudulent && play == ChallengerPlay::PickInvalid && pick.is_none() {
                        return Err(
                            "fraudulent response passed the sum check with no invalid entry"
                                .into(),
                        );
                    }
                    match pick {
                        Some(pay_index) => {
                            chain
                                .submit(
                                    cast.challenger,
                                    TxKind::ChallengePick {
                                        account: cast.collector_id,
                                        pay_index,
                                    },
                                )
                                .map_err(|e| format!("pick rejected: {e}"))?;
                            let proof = proof_for(&chain, pay_index)
                                .ok_or("picked payment vanished".to_string())?;
                            chain
                                .submit(
                                    cast.collector,
                                    TxKind::ChallengeProveInclusion {
                                        account: cast.collector_id,
                                        pay_data: proof,
                                    },
                                )
                                .map_err(|e| format!("proof rejected: {e}"))?;
                        }
                        None => {
                            // Conceding challenger: stall past the pick
                            // deadline and let the seller reclaim the slot.
                            let deadline = slot.phase_deadline.expect("awaiting pick has one");
                            chain.advance_block(deadline - chain.block() + 1);
                            chain
                                .submit(
                                    cast.collector,
                                    TxKind::TimeoutResolve {
                                        account: cast.collector_id,
                                    },
                                )
                                .map_err(|e| format!("timeout rejected: {e}"))?;
                        }
                    }
                }
            }
        }
    }

    // Finalize whatever reopened or was never challenged.
    if let Some(slot) = chain.active_slot(cast.collector_id) {
        if slot.status == SlotStatus::Open {
            let deadline = slot.deadline;
            chain.advance_block(deadline - chain.block() + 1);
            chain
                .submit(
                    cast.buyer,
                    TxKind::FinalizeCollect {
                        account: cast.collector_id,
                    },
                )
                .map_err(|e| format!("finalize rejected: {e}"))?;
        }
    }

    chain
        .check_conservation()
        .map_err(|e| format!("conservation broken: {e}"))?;

    let seller_end = chain.account(cast.collector_id).unwrap().balance;
    let challenger_end = chain.account(cast.challenger_id).unwrap().balance;
    let collected = chain.account(cast.collector_id).unwrap().last_collected_pay_index;
    let settled = chain.settled_slots().last().expect("one slot settled");

    if fraudulent {
        if settled.status != SlotStatus::SettledFraud {
            return Err(format!("fraud settled as {:?}", settled.status));
        }
        if seller_end != seller_start - stake {
            return Err(format!(
                "fraudulent seller balance went {seller_start} -> {seller_end}, expected loss of the {stake} stake"
            ));
        }
        if collected != 0 {
            return Err(format!("fraudulent collect still advanced the range to {collected}"));
        }
        let reward = chain.params().challenge_stake + stake;
        if challenger_end != challenger_start - chain.params().challenge_stake + reward {
            return Err(format!(
                "challenger balance went {challenger_start} -> {challenger_end}, expected both stakes"
            ));
        }
    } else {
        if settled.status != SlotStatus::SettledOk {
            return Err(format!("honest collect settled as {:?}", settled.status));
        }
        // Stake returned, honest amount credited, plus the challenger's
        // forfeited stake when a challenge was played and lost.
        let challenge_bonus = match play {
            ChallengerPlay::None => 0,
            _ => chain.params().challenge_stake,
        };
        let expected = seller_start + honest + challenge_bonus;
        if seller_end != expected {
            return Err(format!(
                "honest seller balance went {seller_start} -> {seller_end}, expected {expected}"
            ));
        }
        if collected != to_index {
            return Err(format!(
                "honest collect left the range at {collected}, expected {to_index}"
            ));
        }
        if challenger_end != challenger_start - challenge_bonus {
            return Err(format!(
                "challenger balance went {challenger_start} -> {challenger_end}"
            ));
        }
    }
    Ok(())
}

/// Run the whole enumeration. Case counts grow as `4^payments`, so the
/// defaults stay minutes under a desk-scale time budget.
pub fn run_matrix(cfg: &MatrixCfg, params: &ChainParams) -> MatrixReport {
    let mut report = MatrixReport::default();
    let per = cfg.per_amount;
    for payments in 1..=cfg.max_payments {
        for sellers in 1..=cfg.max_sellers {
            for inclusion_mask in 0..1u32 << payments {
                for lock_mask in 0..1u32 << payments {
                    let (chain, cast) =
                        base_chain(params, payments, sellers, inclusion_mask, lock_mask, per);
                    let mut to_choices = vec![payments];
                    if payments > 1 {
                        to_choices.push(payments - 1);
                    }
                    for to_index in to_choices {
                        let honest =
                            chain.honest_collect_amount(cast.collector_id, 1, to_index);
                        for declared_kind in [
                            Declared::Honest,
                            Declared::OneUnder,
                            Declared::OneOver,
                            Declared::PerOver,
                        ] {
                            let Some(declared) = declared_kind.amount(honest, per) else {
                                continue;
                            };
                            let plays: &[ChallengerPlay] = if declared == honest {
                                &[
                                    ChallengerPlay::None,
                                    ChallengerPlay::PickInvalid,
                                    ChallengerPlay::PickFirstListed,
                                ]
                            } else {
                                &[ChallengerPlay::PickInvalid]
                            };
                            for &play in plays {
                                report.cases += 1;
                                if declared == honest {
                                    report.honest_cases += 1;
                                } else {
                                    report.fraud_cases += 1;
                                }
                                if let Err(detail) = play_case(
                                    chain.clone(),
                                    &cast,
                                    to_index,
                                    declared,
                                    honest,
                                    play,
                                ) {
                                    report.failures.push(MatrixFailure {
                                        payments,
                                        sellers,
                                        inclusion_mask,
                                        lock_mask,
                                        to_index,
                                        declared,
                                        honest,
                                        detail,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    report
}
