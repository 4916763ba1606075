//! Scripted delegate: turns signed ledger orders received off chain into
//! on-chain transactions, charging its configured fee from the signer's
//! account balance.

use serde_json::json;

use crate::crypto::SigningKeyPair;
use crate::engine::{Actor, Ctx, Role};
use crate::ledger::TxKind;
use crate::protocol::Msg;
use crate::Amount;

#[derive(Clone, Debug)]
pub struct DelegateCfg {
    pub name: String,
    pub fee: Amount,
}

pub struct Delegate {
    cfg: DelegateCfg,
    keys: SigningKeyPair,
    submitted: u64,
}

impl Delegate {
    pub fn new(cfg: DelegateCfg, keys: SigningKeyPair) -> Delegate {
        Delegate {
            cfg,
            keys,
            submitted: 0,
        }
    }
}

impl Actor for Delegate {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn role(&self) -> Role {
        Role::Delegate
    }

    fn keys(&self) -> &SigningKeyPair {
        &self.keys
    }

    fn setup(&mut self, ctx: &mut Ctx) {
        ctx.out.submit(TxKind::Register {
            address: self.keys.address(),
        });
    }

    fn on_message(&mut self, _from: crate::crypto::PubKey, msg: Msg, ctx: &mut Ctx) {
        let Msg::DelegateRequest(req) = msg else {
            return;
        };
        let Some(me) = ctx.chain.account_by_address(&self.keys.address()) else {
            return;
        };
        ctx.out.submit(TxKind::SubmitDelegated {
            delegate: me.id,
            signed_op: req.envelope,
            fee: self.cfg.fee,
        });
        self.submitted += 1;
    }

    fn summary(&self) -> serde_json::Value {
        json!({ "submitted": self.submitted })
    }
}
