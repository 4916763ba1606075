//! Strategy helpers for the collect challenge game, shared by the scripted
//! participants and the exhaustive settlement tests. Nothing here mutates
//! the chain; these are pure functions over its public views.

use std::collections::BTreeMap;

use crate::ledger::chain::{Chain, CollectSlot};
use crate::ledger::paydata::PayData;
use crate::{AccountId, Amount, PayIndex};

/// Subset-sum witness cap. Past this many distinct reachable sums the
/// search gives up, so a fraudulent response is best-effort only; exact
/// matches are still exact.
const MAX_REACHABLE_SUMS: usize = 4096;

fn entry_is_valid(chain: &Chain, account: AccountId, slot: &CollectSlot, index: PayIndex) -> bool {
    index >= slot.from_index
        && index <= slot.to_index
        && chain
            .payment(index)
            .is_some_and(|p| p.unlocked && p.pay_data.contains(account))
}

/// The exact list an honest seller answers a challenge with: every
/// unlocked payment in the slot's range that includes the account.
pub fn honest_response(
    chain: &Chain,
    account: AccountId,
    from: PayIndex,
    to: PayIndex,
) -> Vec<PayIndex> {
    if from == 0 || from > to {
        return Vec::new();
    }
    (from..=to)
        .filter(|&i| {
            chain
                .payment(i)
                .is_some_and(|p| p.unlocked && p.pay_data.contains(account))
        })
        .collect()
}

/// Search `[from, to]` for a strictly ascending list of payment indexes
/// whose per-destination amounts sum exactly to `target`. The list may
/// name payments the account has no claim on; the sum check at response
/// time does not look inside them.
pub fn find_matching_response(
    chain: &Chain,
    from: PayIndex,
    to: PayIndex,
    target: Amount,
) -> Option<Vec<PayIndex>> {
    let mut reachable: BTreeMap<Amount, Vec<PayIndex>> = BTreeMap::new();
    reachable.insert(0, Vec::new());
    for index in from..=to {
        let Some(per) = chain.payment(index).map(|p| p.per_destination_amount) else {
            continue;
        };
        let additions: Vec<(Amount, Vec<PayIndex>)> = reachable
            .iter()
            .filter_map(|(&sum, list)| {
                let next = sum.checked_add(per)?;
                if next > target || reachable.contains_key(&next) {
                    return None;
                }
                let mut extended = list.clone();
                extended.push(index);
                Some((next, extended))
            })
            .collect();
        for (sum, list) in additions {
            if reachable.len() >= MAX_REACHABLE_SUMS {
                break;
            }
            reachable.insert(sum, list);
        }
        if reachable.contains_key(&target) {
            break;
        }
    }
    reachable.remove(&target)
}

/// The seller's strongest answer to a challenge on `slot`: the honest list
/// when the declaration is honest, otherwise any exact-sum list if one
/// exists. Falling back to the honest list concedes the sum check.
pub fn best_response(chain: &Chain, slot: &CollectSlot) -> Vec<PayIndex> {
    let honest = honest_response(chain, slot.account, slot.from_index, slot.to_index);
    let honest_sum: Amount = honest
        .iter()
        .filter_map(|&i| chain.payment(i))
        .map(|p| p.per_destination_amount)
        .sum();
    if slot.declared_amount == honest_sum {
        return honest;
    }
    find_matching_response(chain, slot.from_index, slot.to_index, slot.declared_amount)
        .unwrap_or(honest)
}

/// Whether an honest observer should dispute the slot: the declared amount
/// differs from what the chain itself says the account is owed.
pub fn should_challenge(chain: &Chain, slot: &CollectSlot) -> bool {
    slot.declared_amount
        != chain.honest_collect_amount(slot.account, slot.from_index, slot.to_index)
}

/// The challenger's pick: the first listed index that cannot support the
/// claim (missing, still locked, excluding the account, or out of range).
/// `None` means every entry checks out and a pick would lose.
pub fn first_invalid_entry(chain: &Chain, slot: &CollectSlot) -> Option<PayIndex> {
    slot.response
        .as_deref()?
        .iter()
        .copied()
        .find(|&i| !entry_is_valid(chain, slot.account, slot, i))
}

/// The payee list the seller submits as proof for the picked index, when
/// the payment exists at all.
pub fn proof_for(chain: &Chain, picked: PayIndex) -> Option<PayData> {
    chain.payment(picked).map(|p| p.pay_data.clone())
}
