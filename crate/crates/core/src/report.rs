//! End-of-run report: full ledger state, gas accounting, per-actor
//! findings, and invariant results. Serialization is canonical (sorted
//! maps, fixed field order), so two runs of the same seed produce byte-
//! identical JSON.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::crypto::Address;
use crate::engine::Directory;
use crate::exchange::DataOrder;
use crate::ledger::{Chain, CollectSlot, GasReport};
use crate::net::WireRecord;
use crate::{AccountId, Amount, BlockNumber, PayIndex};

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct AccountReport {
    pub id: AccountId,
    pub name: Option<String>,
    pub address: Address,
    pub balance: Amount,
    pub token_balance: Amount,
    pub last_collected_pay_index: PayIndex,
    pub next_nonce: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct PaymentReport {
    pub pay_index: PayIndex,
    pub from: AccountId,
    pub per_destination_amount: Amount,
    pub payees: Vec<AccountId>,
    pub notary_fee: Amount,
    pub notary_address: Address,
    pub unlocked: bool,
    pub voided: bool,
    pub block: BlockNumber,
    pub unlocked_block: Option<BlockNumber>,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub end_block: BlockNumber,
    pub invariants_ok: bool,
    pub invariant_failures: Vec<String>,
    pub gas: GasReport,
    pub accounts: Vec<AccountReport>,
    pub payments: Vec<PaymentReport>,
    pub active_slots: Vec<CollectSlot>,
    pub settled_slots: Vec<CollectSlot>,
    pub orders: Vec<DataOrder>,
    pub actors: BTreeMap<String, serde_json::Value>,
    pub wire_messages: usize,
    pub dropped_messages: usize,
    pub tx_count: usize,
    pub rejected_tx_count: usize,
}

impl RunReport {
    pub fn assemble(
        scenario: &str,
        seed: u64,
        chain: &Chain,
        dir: &Directory,
        transcript: &[WireRecord],
        invariant_failures: &[String],
        actors: BTreeMap<String, serde_json::Value>,
    ) -> RunReport {
        let accounts = (0..chain.account_count())
            .map(|id| {
                let acct = chain.account(id).expect("id in range");
                AccountReport {
                    id,
                    name: dir.by_address(&acct.address).map(|p| p.name.clone()),
                    address: acct.address,
                    balance: acct.balance,
                    token_balance: chain.token_balance(&acct.address),
                    last_collected_pay_index: acct.last_collected_pay_index,
                    next_nonce: acct.next_nonce,
                }
            })
            .collect();
        let payments = chain
            .payments()
            .iter()
            .map(|p| PaymentReport {
                pay_index: p.pay_index,
                from: p.from,
                per_destination_amount: p.per_destination_amount,
                payees: p.pay_data.ids().to_vec(),
                notary_fee: p.notary_fee,
                notary_address: p.notary_address,
                unlocked: p.unlocked,
                voided: p.voided,
                block: p.block,
                unlocked_block: p.unlocked_block,
            })
            .collect();
        let rejected_tx_count = chain
            .tx_log()
            .iter()
            .filter(|r| r.outcome.starts_with("rejected:"))
            .count();
        RunReport {
            scenario: scenario.to_string(),
            seed,
            end_block: chain.block(),
            invariants_ok: invariant_failures.is_empty(),
            invariant_failures: invariant_failures.to_vec(),
            gas: chain.gas_report(),
            accounts,
            payments,
            active_slots: chain.active_slots().cloned().collect(),
            settled_slots: chain.settled_slots().to_vec(),
            orders: chain.orders().to_vec(),
            actors,
            wire_messages: transcript.len(),
            dropped_messages: transcript.iter().filter(|r| r.dropped).count(),
            tx_count: chain.tx_log().len(),
            rejected_tx_count,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human rendering for the terminal.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(
            &mut out,
            format!(
                "scenario {} (seed {}), {} blocks, {} txs ({} rejected)",
                self.scenario, self.seed, self.end_block, self.tx_count, self.rejected_tx_count
            ),
        );
        push(
            &mut out,
            format!(
                "invariants: {}",
                if self.invariants_ok {
                    "ok".to_string()
                } else {
                    format!("VIOLATED ({})", self.invariant_failures.join("; "))
                }
            ),
        );
        push(
            &mut out,
            format!(
                "messages: {} sent, {} dropped; payments: {}; orders: {}",
                self.wire_messages,
                self.dropped_messages,
                self.payments.len(),
                self.orders.len()
            ),
        );
        let g = &self.gas;
        push(
            &mut out,
            format!(
                "gas: cumulative {}, transfers {}",
                g.cumulative_gas, g.transfer_count
            ),
        );
        if g.transfer_count > 0 {
            push(
                &mut out,
                format!(
                    "  per payment: register {}, collect {}, combined {} ({:.5} USD)",
                    g.register_gas_per_payment,
                    g.collect_gas_per_payment,
                    g.combined_gas_per_payment,
                    g.usd_per_payment
                ),
            );
        }
        push(&mut out, "accounts:".to_string());
        const ACCOUNT_LINES: usize = 20;
        for a in self.accounts.iter().take(ACCOUNT_LINES) {
            push(
                &mut out,
                format!(
                    "  #{:<3} {:<14} balance {:>8}  tokens {:>8}  collected through {}",
                    a.id,
                    a.name.clone().unwrap_or_else(|| "-".into()),
                    a.balance,
                    a.token_balance,
                    a.last_collected_pay_index
                ),
            );
        }
        if self.accounts.len() > ACCOUNT_LINES {
            push(
                &mut out,
                format!("  ({} more accounts)", self.accounts.len() - ACCOUNT_LINES),
            );
        }
        const ACTOR_LINES: usize = 12;
        const ACTOR_LINE_CHARS: usize = 600;
        let mut shown = 0usize;
        let mut elided = 0usize;
        for (name, summary) in &self.actors {
            if summary.as_object().is_some_and(|o| !o.is_empty()) {
                if shown < ACTOR_LINES {
                    let mut line = format!("{name}: {summary}");
                    if line.len() > ACTOR_LINE_CHARS {
                        let cut = (0..=ACTOR_LINE_CHARS)
                            .rev()
                            .find(|&i| line.is_char_boundary(i))
                            .unwrap_or(0);
                        line.truncate(cut);
                        line.push_str("... (truncated, see the JSON report)");
                    }
                    push(&mut out, line);
                    shown += 1;
                } else {
                    elided += 1;
                }
            }
        }
        if elided > 0 {
            push(&mut out, format!("({elided} more actor summaries)"));
        }
        out
    }
}
