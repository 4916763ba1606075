//! Single-writer ledger state machine. Transactions are applied strictly
//! in submission order; each either completes atomically or leaves no
//! trace beyond its log line. Conservation holds after every transaction:
//! token balances + account balances + escrow always sum to the total
//! supply.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify_lock, Address, Envelope, Hash32, Lock, SymKey};
use crate::exchange::{AudienceQuery, DataOrder, DataQuery, OntologySchema, OrderStatus};
use crate::ledger::gas::{gas_report, GasParams, GasReport, UsdPerGas};
use crate::ledger::paydata::PayData;
use crate::{AccountId, Amount, BlockNumber, OrderId, PayIndex};

fn default_total_supply() -> Amount {
    9_000_000_000 * 1_000_000_000
}
fn default_challenge_period() -> u64 {
    40
}
fn default_response_timeout() -> u64 {
    20
}
fn default_unlock_timeout() -> u64 {
    100
}
fn default_stake() -> Amount {
    10
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ChainParams {
    #[serde(default = "default_total_supply")]
    pub total_supply: Amount,
    #[serde(default = "default_challenge_period")]
    pub challenge_period_blocks: u64,
    #[serde(default = "default_response_timeout")]
    pub response_timeout_blocks: u64,
    #[serde(default = "default_unlock_timeout")]
    pub unlock_timeout_blocks: u64,
    #[serde(default = "default_stake")]
    pub collect_stake: Amount,
    #[serde(default = "default_stake")]
    pub challenge_stake: Amount,
    #[serde(default)]
    pub gas: GasParams,
    #[serde(default)]
    pub usd_per_gas: UsdPerGas,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            total_supply: default_total_supply(),
            challenge_period_blocks: default_challenge_period(),
            response_timeout_blocks: default_response_timeout(),
            unlock_timeout_blocks: default_unlock_timeout(),
            collect_stake: default_stake(),
            challenge_stake: default_stake(),
            gas: GasParams::default(),
            usd_per_gas: UsdPerGas::default(),
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct LedgerAccount {
    pub id: AccountId,
    pub address: Address,
    pub balance: Amount,
    pub last_collected_pay_index: PayIndex,
    pub next_nonce: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct RegisteredPayment {
    pub pay_index: PayIndex,
    pub from: AccountId,
    pub per_destination_amount: Amount,
    /// Full payee list; public calldata. The hash below is what the
    /// challenge game checks submissions against.
    pub pay_data: PayData,
    pub pay_data_hash: Hash32,
    pub n_payees: u64,
    pub lock: Lock,
    pub notary_fee: Amount,
    pub notary_address: Address,
    pub unlocked: bool,
    pub master_key: Option<SymKey>,
    pub voided: bool,
    pub block: BlockNumber,
    pub unlocked_block: Option<BlockNumber>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Open,
    Challenged,
    AwaitingPick,
    AwaitingProof,
    SettledOk,
    SettledFraud,
}

impl SlotStatus {
    pub fn is_active(self) -> bool {
        !matches!(self, SlotStatus::SettledOk | SlotStatus::SettledFraud)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct CollectSlot {
    pub account: AccountId,
    pub from_index: PayIndex,
    pub to_index: PayIndex,
    pub declared_amount: Amount,
    pub stake: Amount,
    /// Finalization deadline while the slot is open.
    pub deadline: BlockNumber,
    pub status: SlotStatus,
    pub challenger: Option<Address>,
    pub challenger_account: Option<AccountId>,
    pub response: Option<Vec<PayIndex>>,
    pub picked: Option<PayIndex>,
    /// Deadline of the current challenge phase, when one is running.
    pub phase_deadline: Option<BlockNumber>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("address already registered")]
    AlreadyRegistered,
    #[error("unknown account")]
    UnknownAccount,
    #[error("insufficient token balance")]
    InsufficientTokenBalance,
    #[error("insufficient account balance")]
    InsufficientLedgerBalance,
    #[error("malformed pay data: {0}")]
    MalformedPayData(crate::ledger::paydata::PayDataError),
    #[error("unknown payment")]
    UnknownPayment,
    #[error("lock verification failed")]
    BadKey,
    #[error("payment already settled")]
    AlreadyUnlocked,
    #[error("deadline has not passed")]
    NotExpired,
    #[error("account already has an active collect slot")]
    SlotAlreadyOpen,
    #[error("stake missing or not covered")]
    InsufficientStake,
    #[error("collect range is invalid")]
    BadRange,
    #[error("slot is not open")]
    NotOpen,
    #[error("challenge window has closed")]
    TooLate,
    #[error("slot is not open to challenges")]
    SlotNotOpen,
    #[error("response list is not strictly ascending")]
    MalformedResponse,
    #[error("picked index is not in the response list")]
    NotInList,
    #[error("operation does not match the slot's phase")]
    WrongPhase,
    #[error("no phase timeout is pending")]
    NoTimeoutPending,
    #[error("signature check failed")]
    BadSignature,
    #[error("fee exceeds the signed limit")]
    FeeExceedsLimit,
    #[error("nonce is not fresh")]
    StaleNonce,
    #[error("sender does not control this account")]
    Unauthorized,
    #[error("buyer is not a registered account")]
    UnregisteredBuyer,
    #[error("order validation failed: {0}")]
    SchemaViolation(String),
    #[error("unknown order")]
    UnknownOrder,
    #[error("caller does not own the order")]
    NotOwner,
    #[error("order already closed")]
    AlreadyClosed,
    #[error("ledger invariant violated: {0}")]
    InvariantViolation(String),
}

/// One submitted transaction. Externally tagged on the wire: internal
/// tagging buffers through a representation that cannot carry u128
/// amounts.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Register {
        address: Address,
    },
    Deposit {
        account: AccountId,
        amount: Amount,
    },
    RegisterPayment {
        from: AccountId,
        per_destination_amount: Amount,
        pay_data: PayData,
        lock: Lock,
        notary_fee: Amount,
        notary_address: Address,
    },
    UnlockPayment {
        pay_index: PayIndex,
        notary_id: AccountId,
        master_key: SymKey,
    },
    RefundLockedPayment {
        pay_index: PayIndex,
    },
    Collect {
        account: AccountId,
        to_index: PayIndex,
        declared_amount: Amount,
        stake: Amount,
    },
    FinalizeCollect {
        account: AccountId,
    },
    ChallengeOpen {
        account: AccountId,
    },
    ChallengeRespondList {
        account: AccountId,
        pay_indexes: Vec<PayIndex>,
    },
    ChallengePick {
        account: AccountId,
        pay_index: PayIndex,
    },
    ChallengeProveInclusion {
        account: AccountId,
        pay_data: PayData,
    },
    TimeoutResolve {
        account: AccountId,
    },
    Withdraw {
        account: AccountId,
        amount: Amount,
        to_address: Address,
    },
    SubmitDelegated {
        delegate: AccountId,
        signed_op: Vec<u8>,
        fee: Amount,
    },
    CreateOrder {
        audience: AudienceQuery,
        requested: Vec<DataQuery>,
        price: Amount,
        tc_hash: Hash32,
        buyer_url: String,
    },
    CloseOrder {
        order_id: OrderId,
    },
}

impl TxKind {
    pub fn name(&self) -> &'static str {
        match self {
            TxKind::Register { .. } => "register",
            TxKind::Deposit { .. } => "deposit",
            TxKind::RegisterPayment { .. } => "register_payment",
            TxKind::UnlockPayment { .. } => "unlock_payment",
            TxKind::RefundLockedPayment { .. } => "refund_locked_payment",
            TxKind::Collect { .. } => "collect",
            TxKind::FinalizeCollect { .. } => "finalize_collect",
            TxKind::ChallengeOpen { .. } => "challenge_open",
            TxKind::ChallengeRespondList { .. } => "challenge_respond_list",
            TxKind::ChallengePick { .. } => "challenge_pick",
            TxKind::ChallengeProveInclusion { .. } => "challenge_prove_inclusion",
            TxKind::TimeoutResolve { .. } => "timeout_resolve",
            TxKind::Withdraw { .. } => "withdraw",
            TxKind::SubmitDelegated { .. } => "submit_delegated",
            TxKind::CreateOrder { .. } => "create_order",
            TxKind::CloseOrder { .. } => "close_order",
        }
    }
}

/// Operation carried inside a delegated envelope. Externally tagged, like
/// `TxKind` and for the same reason.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelegatedOp {
    Collect {
        to_index: PayIndex,
        declared_amount: Amount,
    },
    FinalizeCollect,
    Withdraw {
        amount: Amount,
        to_address: Address,
    },
    ChallengeRespondList {
        pay_indexes: Vec<PayIndex>,
    },
    ChallengeProveInclusion {
        pay_data: PayData,
    },
}

impl DelegatedOp {
    fn name(&self) -> &'static str {
        match self {
            DelegatedOp::Collect { .. } => "collect",
            DelegatedOp::FinalizeCollect => "finalize_collect",
            DelegatedOp::Withdraw { .. } => "withdraw",
            DelegatedOp::ChallengeRespondList { .. } => "challenge_respond_list",
            DelegatedOp::ChallengeProveInclusion { .. } => "challenge_prove_inclusion",
        }
    }
}

/// Payload a gasless participant signs for a delegate to submit. The nonce
/// makes each signed operation single-use.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SignedOp {
    pub account: AccountId,
    pub nonce: u64,
    pub max_fee: Amount,
    pub op: DelegatedOp,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondOutcome {
    Accepted,
    SellerLostSumMismatch,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProveReason {
    PayDataHashMismatch,
    NotIncluded,
    PaymentLocked,
    OutOfRange,
    UnknownPayment,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProveOutcome {
    SellerWins,
    SellerLoses(ProveReason),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutOutcome {
    SellerLost,
    ChallengerLostSlotReopened,
}

/// What a successful transaction did.
#[derive(Clone, PartialEq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxEffect {
    Registered { id: AccountId },
    Deposited,
    PaymentRegistered { pay_index: PayIndex },
    Unlocked,
    Refunded,
    CollectOpened,
    CollectFinalized { credited: Amount },
    ChallengeOpened,
    Responded(RespondOutcome),
    Picked,
    Proved(ProveOutcome),
    TimedOut(TimeoutOutcome),
    Withdrawn,
    DelegatedExecuted { inner: Box<TxEffect>, fee: Amount },
    OrderCreated { order_id: OrderId },
    OrderClosed,
}

impl TxEffect {
    fn outcome_label(&self) -> String {
        match self {
            TxEffect::Responded(RespondOutcome::SellerLostSumMismatch) => {
                "seller_lost_sum_mismatch".to_string()
            }
            TxEffect::Proved(ProveOutcome::SellerWins) => "seller_wins".to_string(),
            TxEffect::Proved(ProveOutcome::SellerLoses(reason)) => {
                format!("seller_loses_{reason:?}").to_lowercase()
            }
            TxEffect::TimedOut(TimeoutOutcome::SellerLost) => "timeout_seller_lost".to_string(),
            TxEffect::TimedOut(TimeoutOutcome::ChallengerLostSlotReopened) => {
                "timeout_challenger_lost".to_string()
            }
            TxEffect::DelegatedExecuted { inner, .. } => {
                format!("delegated_{}", inner.outcome_label())
            }
            _ => "ok".to_string(),
        }
    }
}

/// One line of the transaction log.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct TxRecord {
    pub block: BlockNumber,
    pub kind: String,
    pub sender: Address,
    pub gas: u64,
    /// Individual transfers added by this transaction (payee count for
    /// payment registrations, zero otherwise).
    pub transfers: u64,
    pub outcome: String,
}

/// Chain-level event observable by every participant.
#[derive(Clone, PartialEq, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ChainEvent {
    OrderCreated { order: DataOrder },
    OrderClosed { order_id: OrderId },
}

struct Applied {
    effect: TxEffect,
    kind: String,
    gas: u64,
    transfers: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenesisError {
    #[error("initial allocations exceed the total supply")]
    AllocationsExceedSupply,
}

/// Address holding the unallocated supply at genesis.
pub const TREASURY: Address = Address([0; 20]);

#[derive(Clone)]
pub struct Chain {
    params: ChainParams,
    schema: OntologySchema,
    block: BlockNumber,
    token: BTreeMap<Address, Amount>,
    /// Value held by the ledger itself: payment escrow plus posted stakes.
    escrow: Amount,
    accounts: Vec<LedgerAccount>,
    by_address: BTreeMap<Address, AccountId>,
    payments: Vec<RegisteredPayment>,
    active_slots: BTreeMap<AccountId, CollectSlot>,
    settled_slots: Vec<CollectSlot>,
    orders: Vec<DataOrder>,
    log: Vec<TxRecord>,
    pending_events: Vec<ChainEvent>,
}

impl Chain {
    pub fn new(
        params: ChainParams,
        schema: OntologySchema,
        allocations: &BTreeMap<Address, Amount>,
    ) -> Result<Chain, GenesisError> {
        let allocated: Amount = allocations.values().sum();
        if allocated > params.total_supply {
            return Err(GenesisError::AllocationsExceedSupply);
        }
        let mut token = allocations.clone();
        *token.entry(TREASURY).or_insert(0) += params.total_supply - allocated;
        Ok(Chain {
            params,
            schema,
            block: 0,
            token,
            escrow: 0,
            accounts: Vec::new(),
            by_address: BTreeMap::new(),
            payments: Vec::new(),
            active_slots: BTreeMap::new(),
            settled_slots: Vec::new(),
            orders: Vec::new(),
            log: Vec::new(),
            pending_events: Vec::new(),
        })
    }

    // ---- read-only views ----

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn schema(&self) -> &OntologySchema {
        &self.schema
    }

    pub fn block(&self) -> BlockNumber {
        self.block
    }

    pub fn token_balance(&self, address: &Address) -> Amount {
        self.token.get(address).copied().unwrap_or(0)
    }

    pub fn account(&self, id: AccountId) -> Option<&LedgerAccount> {
        self.accounts.get(id as usize)
    }

    pub fn account_by_address(&self, address: &Address) -> Option<&LedgerAccount> {
        self.by_address
            .get(address)
            .map(|&id| &self.accounts[id as usize])
    }

    pub fn account_count(&self) -> u32 {
        self.accounts.len() as u32
    }

    pub fn payment(&self, pay_index: PayIndex) -> Option<&RegisteredPayment> {
        if pay_index == 0 {
            return None;
        }
        self.payments.get(pay_index as usize - 1)
    }

    pub fn payments(&self) -> &[RegisteredPayment] {
        &self.payments
    }

    pub fn latest_pay_index(&self) -> PayIndex {
        self.payments.len() as PayIndex
    }

    pub fn active_slot(&self, account: AccountId) -> Option<&CollectSlot> {
        self.active_slots.get(&account)
    }

    pub fn active_slots(&self) -> impl Iterator<Item = &CollectSlot> {
        self.active_slots.values()
    }

    pub fn settled_slots(&self) -> &[CollectSlot] {
        &self.settled_slots
    }

    pub fn order(&self, id: OrderId) -> Option<&DataOrder> {
        self.orders.get(id as usize)
    }

    pub fn orders(&self) -> &[DataOrder] {
        &self.orders
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.log
    }

    pub fn escrow(&self) -> Amount {
        self.escrow
    }

    pub fn drain_events(&mut self) -> Vec<ChainEvent> {
        std::mem::take(&mut self.pending_events)
    }

    /// Reference settlement oracle: the exact amount the account is owed
    /// over `[from, to]`: the sum of per-destination amounts of unlocked
    /// payments whose payee list contains it.
    pub fn honest_collect_amount(
        &self,
        account: AccountId,
        from: PayIndex,
        to: PayIndex,
    ) -> Amount {
        if from == 0 || from > to {
            return 0;
        }
        self.payments
            .iter()
            .skip(from as usize - 1)
            .take((to - from + 1) as usize)
            .filter(|p| p.unlocked && p.pay_data.contains(account))
            .map(|p| p.per_destination_amount)
            .sum()
    }

    /// Unlocked payments including the account past its collected range.
    pub fn uncollected_inclusions(&self, account: AccountId) -> Vec<PayIndex> {
        let from = match self.account(account) {
            Some(a) => a.last_collected_pay_index + 1,
            None => return Vec::new(),
        };
        self.payments
            .iter()
            .skip(from as usize - 1)
            .filter(|p| p.unlocked && p.pay_data.contains(account))
            .map(|p| p.pay_index)
            .collect()
    }

    /// Conservation check: all value is either in token balances, account
    /// balances, or held by the ledger as escrow and stakes.
    pub fn check_conservation(&self) -> Result<(), String> {
        let tokens: Amount = self.token.values().sum();
        let balances: Amount = self.accounts.iter().map(|a| a.balance).sum();
        let total = tokens + balances + self.escrow;
        if total != self.params.total_supply {
            return Err(format!(
                "supply drifted: tokens {tokens} + balances {balances} + escrow {} = {total}, expected {}",
                self.escrow, self.params.total_supply
            ));
        }
        Ok(())
    }

    pub fn gas_report(&self) -> GasReport {
        gas_report(&self.log, self.params.usd_per_gas)
    }

    // ---- block clock ----

    pub fn advance_block(&mut self, n: u64) -> BlockNumber {
        self.block += n;
        self.block
    }

    // ---- transaction entry point ----

    pub fn submit(&mut self, sender: Address, kind: TxKind) -> Result<TxEffect, TxError> {
        let fallback_kind = kind.name();
        match self.apply(sender, kind) {
            Ok(applied) => {
                self.log.push(TxRecord {
                    block: self.block,
                    kind: applied.kind,
                    sender,
                    gas: applied.gas,
                    transfers: applied.transfers,
                    outcome: applied.effect.outcome_label(),
                });
                Ok(applied.effect)
            }
            Err(err) => {
                self.log.push(TxRecord {
                    block: self.block,
                    kind: fallback_kind.to_string(),
                    sender,
                    gas: 0,
                    transfers: 0,
                    outcome: format!("rejected: {err}"),
                });
                Err(err)
            }
        }
    }

    fn apply(&mut self, sender: Address, kind: TxKind) -> Result<Applied, TxError> {
        let default_gas = self.params.gas.default_tx;
        let simple = |effect: TxEffect, name: &str| Applied {
            effect,
            kind: name.to_string(),
            gas: default_gas,
            transfers: 0,
        };
        match kind {
            TxKind::Register { address } => {
                let id = self.op_register(address)?;
                Ok(simple(TxEffect::Registered { id }, "register"))
            }
            TxKind::Deposit { account, amount } => {
                self.require_owner(sender, account)?;
                self.op_deposit(account, amount)?;
                Ok(simple(TxEffect::Deposited, "deposit"))
            }
            TxKind::RegisterPayment {
                from,
                per_destination_amount,
                pay_data,
                lock,
                notary_fee,
                notary_address,
            } => {
                self.require_owner(sender, from)?;
                let n = pay_data.n_payees() as u64;
                let pay_index = self.op_register_payment(
                    from,
                    per_destination_amount,
                    pay_data,
                    lock,
                    notary_fee,
                    notary_address,
                )?;
                Ok(Applied {
                    effect: TxEffect::PaymentRegistered { pay_index },
                    kind: "register_payment".to_string(),
                    gas: self.params.gas.register_payment(n),
                    transfers: n,
                })
            }
            TxKind::UnlockPayment {
                pay_index,
                notary_id,
                master_key,
            } => {
                self.op_unlock(pay_index, notary_id, &master_key)?;
                Ok(simple(TxEffect::Unlocked, "unlock_payment"))
            }
            TxKind::RefundLockedPayment { pay_index } => {
                self.op_refund(pay_index)?;
                Ok(simple(TxEffect::Refunded, "refund_locked_payment"))
            }
            TxKind::Collect {
                account,
                to_index,
                declared_amount,
                stake,
            } => {
                self.require_owner(sender, account)?;
                self.op_collect(account, to_index, declared_amount, stake)?;
                Ok(Applied {
                    effect: TxEffect::CollectOpened,
                    kind: "collect".to_string(),
                    gas: self.params.gas.collect_fixed,
                    transfers: 0,
                })
            }
            TxKind::FinalizeCollect { account } => {
                let credited = self.op_finalize(account)?;
                Ok(simple(
                    TxEffect::CollectFinalized { credited },
                    "finalize_collect",
                ))
            }
            TxKind::ChallengeOpen { account } => {
                self.op_challenge_open(sender, account)?;
                Ok(simple(TxEffect::ChallengeOpened, "challenge_open"))
            }
            TxKind::ChallengeRespondList {
                account,
                pay_indexes,
            } => {
                self.require_owner(sender, account)?;
                let outcome = self.op_respond_list(account, &pay_indexes)?;
                Ok(simple(
                    TxEffect::Responded(outcome),
                    "challenge_respond_list",
                ))
            }
            TxKind::ChallengePick { account, pay_index } => {
                self.op_pick(sender, account, pay_index)?;
                Ok(simple(TxEffect::Picked, "challenge_pick"))
            }
            TxKind::ChallengeProveInclusion { account, pay_data } => {
                self.require_owner(sender, account)?;
                let outcome = self.op_prove(account, &pay_data)?;
                Ok(simple(
                    TxEffect::Proved(outcome),
                    "challenge_prove_inclusion",
                ))
            }
            TxKind::TimeoutResolve { account } => {
                let outcome = self.op_timeout_resolve(account)?;
                Ok(simple(TxEffect::TimedOut(outcome), "timeout_resolve"))
            }
            TxKind::Withdraw {
                account,
                amount,
                to_address,
            } => {
                self.require_owner(sender, account)?;
                self.op_withdraw(account, amount, to_address)?;
                Ok(simple(TxEffect::Withdrawn, "withdraw"))
            }
            TxKind::SubmitDelegated {
                delegate,
                signed_op,
                fee,
            } => self.op_submit_delegated(sender, delegate, &signed_op, fee),
            TxKind::CreateOrder {
                audience,
                requested,
                price,
                tc_hash,
                buyer_url,
            } => {
                let order_id =
                    self.op_create_order(sender, audience, requested, price, tc_hash, buyer_url)?;
                Ok(simple(TxEffect::OrderCreated { order_id }, "create_order"))
            }
            TxKind::CloseOrder { order_id } => {
                self.op_close_order(sender, order_id)?;
                Ok(simple(TxEffect::OrderClosed, "close_order"))
            }
        }
    }

    fn require_owner(&self, sender: Address, account: AccountId) -> Result<(), TxError> {
        let acct = self.account(account).ok_or(TxError::UnknownAccount)?;
        if acct.address != sender {
            return Err(TxError::Unauthorized);
        }
        Ok(())
    }

    fn account_mut(&mut self, id: AccountId) -> Result<&mut LedgerAccount, TxError> {
        self.accounts
            .get_mut(id as usize)
            .ok_or(TxError::UnknownAccount)
    }

    // ---- operations ----

    fn op_register(&mut self, address: Address) -> Result<AccountId, TxError> {
        if self.by_address.contains_key(&address) {
            return Err(TxError::AlreadyRegistered);
        }
        let id = self.accounts.len() as AccountId;
        self.accounts.push(LedgerAccount {
            id,
            address,
            balance: 0,
            last_collected_pay_index: 0,
            next_nonce: 0,
        });
        self.by_address.insert(address, id);
        Ok(id)
    }

    fn op_deposit(&mut self, account: AccountId, amount: Amount) -> Result<(), TxError> {
        let address = self.account(account).ok_or(TxError::UnknownAccount)?.address;
        let tokens = self.token.entry(address).or_insert(0);
        if *tokens < amount {
            return Err(TxError::InsufficientTokenBalance);
        }
        *tokens -= amount;
        self.account_mut(account)?.balance += amount;
        Ok(())
    }

    fn op_register_payment(
        &mut self,
        from: AccountId,
        per_destination_amount: Amount,
        pay_data: PayData,
        lock: Lock,
        notary_fee: Amount,
        notary_address: Address,
    ) -> Result<PayIndex, TxError> {
        if self.account(from).is_none() {
            return Err(TxError::UnknownAccount);
        }
        if pay_data.ids().iter().any(|&id| id >= self.account_count()) {
            return Err(TxError::UnknownAccount);
        }
        if !self.by_address.contains_key(&notary_address) {
            return Err(TxError::UnknownAccount);
        }
        let n = pay_data.n_payees() as Amount;
        let total = per_destination_amount
            .checked_mul(n)
            .and_then(|t| t.checked_add(notary_fee))
            .ok_or_else(|| TxError::InvariantViolation("payment total overflows".into()))?;
        let payer = self.account_mut(from)?;
        if payer.balance < total {
            return Err(TxError::InsufficientLedgerBalance);
        }
        payer.balance -= total;
        self.escrow += total;
        let pay_index = self.payments.len() as PayIndex + 1;
        self.payments.push(RegisteredPayment {
            pay_index,
            from,
            per_destination_amount,
            pay_data_hash: pay_data.hash(),
            n_payees: pay_data.n_payees() as u64,
            pay_data,
            lock,
            notary_fee,
            notary_address,
            unlocked: false,
            master_key: None,
            voided: false,
            block: self.block,
            unlocked_block: None,
        });
        Ok(pay_index)
    }

    fn op_unlock(
        &mut self,
        pay_index: PayIndex,
        notary_id: AccountId,
        master_key: &SymKey,
    ) -> Result<(), TxError> {
        let now = self.block;
        let timeout = self.params.unlock_timeout_blocks;
        let payment = self
            .payments
            .get(pay_index.checked_sub(1).ok_or(TxError::UnknownPayment)? as usize)
            .ok_or(TxError::UnknownPayment)?;
        if payment.unlocked || payment.voided {
            return Err(TxError::AlreadyUnlocked);
        }
        if now > payment.block + timeout {
            return Err(TxError::TooLate);
        }
        if !verify_lock(&payment.lock, notary_id, master_key) {
            return Err(TxError::BadKey);
        }
        let fee = payment.notary_fee;
        let notary_account = self
            .by_address
            .get(&payment.notary_address)
            .copied()
            .ok_or(TxError::UnknownAccount)?;
        let unlocked_block = self.block;
        let payment = &mut self.payments[pay_index as usize - 1];
        payment.unlocked = true;
        payment.master_key = Some(*master_key);
        payment.unlocked_block = Some(unlocked_block);
        self.escrow -= fee;
        self.account_mut(notary_account)?.balance += fee;
        Ok(())
    }

    fn op_refund(&mut self, pay_index: PayIndex) -> Result<(), TxError> {
        let now = self.block;
        let timeout = self.params.unlock_timeout_blocks;
        let payment = self
            .payments
            .get(pay_index.checked_sub(1).ok_or(TxError::UnknownPayment)? as usize)
            .ok_or(TxError::UnknownPayment)?;
        if payment.unlocked || payment.voided {
            return Err(TxError::AlreadyUnlocked);
        }
        if now <= payment.block + timeout {
            return Err(TxError::NotExpired);
        }
        let total = payment.per_destination_amount * payment.n_payees as Amount
            + payment.notary_fee;
        let payer = payment.from;
        self.payments[pay_index as usize - 1].voided = true;
        self.escrow -= total;
        self.account_mut(payer)?.balance += total;
        Ok(())
    }

    fn op_collect(
        &mut self,
        account: AccountId,
        to_index: PayIndex,
        declared_amount: Amount,
        stake: Amount,
    ) -> Result<(), TxError> {
        if stake != self.params.collect_stake {
            return Err(TxError::InsufficientStake);
        }
        let from_index = self
            .account(account)
            .ok_or(TxError::UnknownAccount)?
            .last_collected_pay_index
            + 1;
        if let Some(slot) = self.active_slots.get(&account) {
            if slot.status.is_active() {
                return Err(TxError::SlotAlreadyOpen);
            }
        }
        if to_index < from_index || to_index > self.latest_pay_index() {
            return Err(TxError::BadRange);
        }
        let acct = self.account_mut(account)?;
        if acct.balance < stake {
            return Err(TxError::InsufficientStake);
        }
        acct.balance -= stake;
        self.escrow += stake;
        let deadline = self.block + self.params.challenge_period_blocks;
        self.active_slots.insert(
            account,
            CollectSlot {
                account,
                from_index,
                to_index,
                declared_amount,
                stake,
                deadline,
                status: SlotStatus::Open,
                challenger: None,
                challenger_account: None,
                response: None,
                picked: None,
                phase_deadline: None,
            },
        );
        Ok(())
    }

    fn op_finalize(&mut self, account: AccountId) -> Result<Amount, TxError> {
        let now = self.block;
        let slot = self.active_slots.get(&account).ok_or(TxError::NotOpen)?;
        if slot.status != SlotStatus::Open {
            return Err(TxError::NotOpen);
        }
        if now <= slot.deadline {
            return Err(TxError::NotExpired);
        }
        let credited = slot.declared_amount;
        let stake = slot.stake;
        let to_index = slot.to_index;
        let release = credited
            .checked_add(stake)
            .ok_or_else(|| TxError::InvariantViolation("collect payout overflows".into()))?;
        if self.escrow < release {
            return Err(TxError::InvariantViolation(format!(
                "escrow {} cannot cover collect payout {release}",
                self.escrow
            )));
        }
        self.escrow -= release;
        let acct = self.account_mut(account)?;
        acct.balance += release;
        acct.last_collected_pay_index = to_index;
        let mut slot = self.active_slots.remove(&account).unwrap();
        slot.status = SlotStatus::SettledOk;
        self.settled_slots.push(slot);
        Ok(credited)
    }

    fn op_challenge_open(&mut self, sender: Address, account: AccountId) -> Result<(), TxError> {
        let challenger_account = *self.by_address.get(&sender).ok_or(TxError::UnknownAccount)?;
        let stake = self.params.challenge_stake;
        let now = self.block;
        let response_timeout = self.params.response_timeout_blocks;
        let slot = self
            .active_slots
            .get(&account)
            .ok_or(TxError::SlotNotOpen)?;
        if slot.status != SlotStatus::Open {
            return Err(TxError::SlotNotOpen);
        }
        if now > slot.deadline {
            return Err(TxError::TooLate);
        }
        if self.accounts[challenger_account as usize].balance < stake {
            return Err(TxError::InsufficientStake);
        }
        self.accounts[challenger_account as usize].balance -= stake;
        self.escrow += stake;
        let slot = self.active_slots.get_mut(&account).unwrap();
        slot.status = SlotStatus::Challenged;
        slot.challenger = Some(sender);
        slot.challenger_account = Some(challenger_account);
        slot.response = None;
        slot.picked = None;
        slot.phase_deadline = Some(now + response_timeout);
        Ok(())
    }

    /// Sum the response list charges immediately; everything else about the
    /// listed payments is checked lazily through pick and prove.
    fn op_respond_list(
        &mut self,
        account: AccountId,
        pay_indexes: &[PayIndex],
    ) -> Result<RespondOutcome, TxError> {
        let now = self.block;
        let slot = self.active_slots.get(&account).ok_or(TxError::WrongPhase)?;
        if slot.status != SlotStatus::Challenged {
            return Err(TxError::WrongPhase);
        }
        if now > slot.phase_deadline.unwrap_or(0) {
            return Err(TxError::TooLate);
        }
        if pay_indexes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TxError::MalformedResponse);
        }
        let sum: Amount = pay_indexes
            .iter()
            .filter_map(|&i| self.payment(i))
            .map(|p| p.per_destination_amount)
            .sum();
        if sum != self.active_slots[&account].declared_amount {
            self.resolve_seller_loss(account)?;
            return Ok(RespondOutcome::SellerLostSumMismatch);
        }
        let response_timeout = self.params.response_timeout_blocks;
        let slot = self.active_slots.get_mut(&account).unwrap();
        slot.status = SlotStatus::AwaitingPick;
        slot.response = Some(pay_indexes.to_vec());
        slot.phase_deadline = Some(now + response_timeout);
        Ok(RespondOutcome::Accepted)
    }

    fn op_pick(
        &mut self,
        sender: Address,
        account: AccountId,
        pay_index: PayIndex,
    ) -> Result<(), TxError> {
        let now = self.block;
        let response_timeout = self.params.response_timeout_blocks;
        let slot = self.active_slots.get(&account).ok_or(TxError::WrongPhase)?;
        if slot.status != SlotStatus::AwaitingPick {
            return Err(TxError::WrongPhase);
        }
        if slot.challenger != Some(sender) {
            return Err(TxError::Unauthorized);
        }
        if now > slot.phase_deadline.unwrap_or(0) {
            return Err(TxError::TooLate);
        }
        if !slot.response.as_deref().unwrap_or(&[]).contains(&pay_index) {
            return Err(TxError::NotInList);
        }
        let slot = self.active_slots.get_mut(&account).unwrap();
        slot.status = SlotStatus::AwaitingProof;
        slot.picked = Some(pay_index);
        slot.phase_deadline = Some(now + response_timeout);
        Ok(())
    }

    fn op_prove(
        &mut self,
        account: AccountId,
        pay_data: &PayData,
    ) -> Result<ProveOutcome, TxError> {
        let now = self.block;
        let slot = self.active_slots.get(&account).ok_or(TxError::WrongPhase)?;
        if slot.status != SlotStatus::AwaitingProof {
            return Err(TxError::WrongPhase);
        }
        if now > slot.phase_deadline.unwrap_or(0) {
            return Err(TxError::TooLate);
        }
        let picked = slot.picked.expect("awaiting_proof always has a pick");
        let in_range = picked >= slot.from_index && picked <= slot.to_index;
        let verdict = match self.payment(picked) {
            None => Some(ProveReason::UnknownPayment),
            Some(payment) => {
                if pay_data.hash() != payment.pay_data_hash {
                    Some(ProveReason::PayDataHashMismatch)
                } else if !pay_data.contains(account) {
                    Some(ProveReason::NotIncluded)
                } else if !payment.unlocked {
                    Some(ProveReason::PaymentLocked)
                } else if !in_range {
                    Some(ProveReason::OutOfRange)
                } else {
                    None
                }
            }
        };
        match verdict {
            None => {
                self.resolve_challenger_loss(account)?;
                Ok(ProveOutcome::SellerWins)
            }
            Some(reason) => {
                self.resolve_seller_loss(account)?;
                Ok(ProveOutcome::SellerLoses(reason))
            }
        }
    }

    fn op_timeout_resolve(&mut self, account: AccountId) -> Result<TimeoutOutcome, TxError> {
        let now = self.block;
        let slot = self
            .active_slots
            .get(&account)
            .ok_or(TxError::NoTimeoutPending)?;
        let deadline = match slot.status {
            SlotStatus::Challenged | SlotStatus::AwaitingPick | SlotStatus::AwaitingProof => {
                slot.phase_deadline.unwrap_or(0)
            }
            _ => return Err(TxError::NoTimeoutPending),
        };
        if now <= deadline {
            return Err(TxError::NoTimeoutPending);
        }
        match slot.status {
            SlotStatus::Challenged | SlotStatus::AwaitingProof => {
                self.resolve_seller_loss(account)?;
                Ok(TimeoutOutcome::SellerLost)
            }
            SlotStatus::AwaitingPick => {
                self.resolve_challenger_loss(account)?;
                Ok(TimeoutOutcome::ChallengerLostSlotReopened)
            }
            _ => unreachable!(),
        }
    }

    /// The seller failed the game: both stakes go to the challenger, the
    /// slot settles as fraud, and the collected range stays unchanged.
    fn resolve_seller_loss(&mut self, account: AccountId) -> Result<(), TxError> {
        let slot = self.active_slots.get(&account).ok_or(TxError::WrongPhase)?;
        let challenger_account = slot
            .challenger_account
            .ok_or_else(|| TxError::InvariantViolation("challenge without challenger".into()))?;
        let payout = slot.stake + self.params.challenge_stake;
        if self.escrow < payout {
            return Err(TxError::InvariantViolation(
                "escrow cannot cover challenge payout".into(),
            ));
        }
        self.escrow -= payout;
        self.account_mut(challenger_account)?.balance += payout;
        let mut slot = self.active_slots.remove(&account).unwrap();
        slot.status = SlotStatus::SettledFraud;
        self.settled_slots.push(slot);
        Ok(())
    }

    /// The challenger failed the game: its stake goes to the seller and the
    /// slot reopens with a fresh challenge window.
    fn resolve_challenger_loss(&mut self, account: AccountId) -> Result<(), TxError> {
        let stake = self.params.challenge_stake;
        if self.escrow < stake {
            return Err(TxError::InvariantViolation(
                "escrow cannot cover challenge payout".into(),
            ));
        }
        self.escrow -= stake;
        self.account_mut(account)?.balance += stake;
        let deadline = self.block + self.params.challenge_period_blocks;
        let slot = self.active_slots.get_mut(&account).unwrap();
        slot.status = SlotStatus::Open;
        slot.deadline = deadline;
        slot.challenger = None;
        slot.challenger_account = None;
        slot.response = None;
        slot.picked = None;
        slot.phase_deadline = None;
        Ok(())
    }

    fn op_withdraw(
        &mut self,
        account: AccountId,
        amount: Amount,
        to_address: Address,
    ) -> Result<(), TxError> {
        let acct = self.account_mut(account)?;
        if acct.balance < amount {
            return Err(TxError::InsufficientLedgerBalance);
        }
        acct.balance -= amount;
        *self.token.entry(to_address).or_insert(0) += amount;
        Ok(())
    }

    fn op_submit_delegated(
        &mut self,
        sender: Address,
        delegate: AccountId,
        signed_op: &[u8],
        fee: Amount,
    ) -> Result<Applied, TxError> {
        self.require_owner(sender, delegate)?;
        let envelope = Envelope::from_bytes(signed_op).map_err(|_| TxError::BadSignature)?;
        if !crate::crypto::verify(&envelope.sender_pk, &envelope.payload, &envelope.signature) {
            return Err(TxError::BadSignature);
        }
        let signed: SignedOp =
            serde_json::from_slice(&envelope.payload).map_err(|_| TxError::BadSignature)?;
        let account = signed.account;
        let acct = self.account(account).ok_or(TxError::UnknownAccount)?;
        if envelope.sender_pk.address() != acct.address {
            return Err(TxError::BadSignature);
        }
        if fee > signed.max_fee {
            return Err(TxError::FeeExceedsLimit);
        }
        if signed.nonce != acct.next_nonce {
            return Err(TxError::StaleNonce);
        }
        // Take the fee and consume the nonce up front; every inner
        // operation is atomic, so a failure is undone exactly.
        {
            let acct = self.account_mut(account)?;
            if acct.balance < fee {
                return Err(TxError::InsufficientLedgerBalance);
            }
            acct.balance -= fee;
            acct.next_nonce += 1;
        }
        self.account_mut(delegate)?.balance += fee;

        let inner_name = signed.op.name();
        let stake = self.params.collect_stake;
        let inner = match signed.op {
            DelegatedOp::Collect {
                to_index,
                declared_amount,
            } => self
                .op_collect(account, to_index, declared_amount, stake)
                .map(|()| TxEffect::CollectOpened),
            DelegatedOp::FinalizeCollect => self
                .op_finalize(account)
                .map(|credited| TxEffect::CollectFinalized { credited }),
            DelegatedOp::Withdraw { amount, to_address } => self
                .op_withdraw(account, amount, to_address)
                .map(|()| TxEffect::Withdrawn),
            DelegatedOp::ChallengeRespondList { pay_indexes } => self
                .op_respond_list(account, &pay_indexes)
                .map(TxEffect::Responded),
            DelegatedOp::ChallengeProveInclusion { pay_data } => {
                self.op_prove(account, &pay_data).map(TxEffect::Proved)
            }
        };
        match inner {
            Ok(effect) => {
                let gas = match effect {
                    TxEffect::CollectOpened => self.params.gas.collect_fixed,
                    _ => self.params.gas.default_tx,
                };
                Ok(Applied {
                    effect: TxEffect::DelegatedExecuted {
                        inner: Box::new(effect),
                        fee,
                    },
                    kind: format!("delegated_{inner_name}"),
                    gas,
                    transfers: 0,
                })
            }
            Err(err) => {
                self.account_mut(delegate)?.balance -= fee;
                let acct = self.account_mut(account)?;
                acct.balance += fee;
                acct.next_nonce -= 1;
                Err(err)
            }
        }
    }

    fn op_create_order(
        &mut self,
        sender: Address,
        audience: AudienceQuery,
        requested: Vec<DataQuery>,
        price: Amount,
        tc_hash: Hash32,
        buyer_url: String,
    ) -> Result<OrderId, TxError> {
        if !self.by_address.contains_key(&sender) {
            return Err(TxError::UnregisteredBuyer);
        }
        self.schema
            .validate_audience(&audience)
            .map_err(|e| TxError::SchemaViolation(e.to_string()))?;
        self.schema
            .validate_queries(&requested)
            .map_err(|e| TxError::SchemaViolation(e.to_string()))?;
        if price == 0 {
            return Err(TxError::SchemaViolation("price must be positive".into()));
        }
        let id = self.orders.len() as OrderId;
        let order = DataOrder {
            id,
            buyer: sender,
            audience,
            requested,
            price,
            tc_hash,
            buyer_url,
            status: OrderStatus::Open,
            created_block: self.block,
        };
        self.orders.push(order.clone());
        self.pending_events.push(ChainEvent::OrderCreated { order });
        Ok(id)
    }

    fn op_close_order(&mut self, sender: Address, order_id: OrderId) -> Result<(), TxError> {
        let order = self
            .orders
            .get_mut(order_id as usize)
            .ok_or(TxError::UnknownOrder)?;
        if order.buyer != sender {
            return Err(TxError::NotOwner);
        }
        if order.status == OrderStatus::Closed {
            return Err(TxError::AlreadyClosed);
        }
        order.status = OrderStatus::Closed;
        self.pending_events
            .push(ChainEvent::OrderClosed { order_id });
        Ok(())
    }
}
