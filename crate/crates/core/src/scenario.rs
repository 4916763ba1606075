//! Declarative scenario files: JSON descriptions of a ledger, a transport,
//! and a cast of scripted participants, turned into a ready-to-run engine.
//! Participants cross-reference each other by name; everything is resolved
//! to keys and addresses here, deterministically from the seed.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::actors::{
    Buyer, BuyerCfg, Challenger, ChallengerCfg, Delegate, DelegateCfg, Notary, NotaryCfg,
    OrderPlan, Seller, SellerCfg, Verifier,
};
use crate::crypto::{rng_from_seed, SigningKeyPair};
use crate::engine::Engine;
use crate::exchange::{AudienceQuery, DataQuery, OntologySchema, SellerProfile};
use crate::ledger::{Chain, ChainParams};
use crate::net::Transport;
use crate::{Address, Amount, BlockNumber};

pub const FORMAT_VERSION: u32 = 1;

/// Keys are drawn from a stream separated from the engine's, so the same
/// seed produces the same identities regardless of traffic.
const KEY_STREAM_SALT: u64 = 0x6b_65_79;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Message-driven marketplace run with scripted actors.
    #[default]
    Protocol,
    /// Exhaustive enumeration of collect/challenge settlements.
    ChallengeMatrix,
}

fn default_delay() -> u64 {
    0
}
fn default_drop() -> f64 {
    0.0
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportCfg {
    #[serde(default = "default_delay")]
    pub delay_blocks: u64,
    #[serde(default = "default_drop")]
    pub drop_rate: f64,
}

impl Default for TransportCfg {
    fn default() -> Self {
        TransportCfg {
            delay_blocks: default_delay(),
            drop_rate: default_drop(),
        }
    }
}

fn default_count() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_max_fee() -> Amount {
    5
}
fn default_pct() -> f64 {
    1.0
}
fn default_terms() -> String {
    "standard terms".into()
}
fn default_verifier() -> Verifier {
    Verifier::Subset
}
fn default_window() -> u64 {
    6
}
fn default_max_sellers() -> usize {
    1_000_000
}
fn default_text() -> String {
    String::new()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerSpec {
    pub name: String,
    #[serde(default)]
    pub tokens: Amount,
    #[serde(default)]
    pub deposit: Amount,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerSpec {
    pub name: String,
    /// Expands to `name-1 .. name-count` identical sellers when above one.
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default)]
    pub tokens: Amount,
    #[serde(default)]
    pub deposit: Amount,
    #[serde(default = "default_true")]
    pub preregistered: bool,
    #[serde(default)]
    pub profile: SellerProfile,
    #[serde(default)]
    pub price_floor: Amount,
    #[serde(default)]
    pub trusted_notaries: Vec<String>,
    #[serde(default)]
    pub collect_threshold: Option<u64>,
    #[serde(default)]
    pub delegate: Option<String>,
    #[serde(default = "default_max_fee")]
    pub delegate_max_fee: Amount,
    #[serde(default)]
    pub fabricating: bool,
    #[serde(default)]
    pub greedy: bool,
    #[serde(default)]
    pub withdraw_after_collect: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotarySpec {
    pub name: String,
    #[serde(default)]
    pub tokens: Amount,
    #[serde(default)]
    pub deposit: Amount,
    pub fee: Amount,
    #[serde(default = "default_pct")]
    pub notarization_percentage: f64,
    #[serde(default = "default_terms")]
    pub terms: String,
    #[serde(default = "default_verifier")]
    pub verifier: Verifier,
    #[serde(default)]
    pub silent: bool,
    #[serde(default)]
    pub garbage_key: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegateSpec {
    pub name: String,
    pub fee: Amount,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengerSpec {
    pub name: String,
    #[serde(default)]
    pub tokens: Amount,
    #[serde(default)]
    pub deposit: Amount,
    #[serde(default)]
    pub spurious: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub buyer: String,
    pub create_block: BlockNumber,
    pub price: Amount,
    #[serde(default)]
    pub audience: AudienceQuery,
    #[serde(default)]
    pub requested: Vec<DataQuery>,
    #[serde(default = "default_text")]
    pub description: String,
    #[serde(default = "default_text")]
    pub intended_use: String,
    pub tc_text: String,
    pub notaries: Vec<String>,
    #[serde(default = "default_window")]
    pub response_window_blocks: u64,
    #[serde(default = "default_max_sellers")]
    pub max_sellers: usize,
}

/// Settlement-matrix dimensions; see the `matrix` module.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCfg {
    #[serde(default = "default_matrix_payments")]
    pub max_payments: u64,
    #[serde(default = "default_matrix_sellers")]
    pub max_sellers: u32,
    #[serde(default = "default_matrix_per")]
    pub per_amount: Amount,
}

fn default_matrix_payments() -> u64 {
    6
}
fn default_matrix_sellers() -> u32 {
    4
}
fn default_matrix_per() -> Amount {
    10
}

impl Default for MatrixCfg {
    fn default() -> Self {
        MatrixCfg {
            max_payments: default_matrix_payments(),
            max_sellers: default_matrix_sellers(),
            per_amount: default_matrix_per(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub kind: ScenarioKind,
    pub seed: u64,
    pub run_blocks: u64,
    #[serde(default)]
    pub ledger: ChainParams,
    #[serde(default)]
    pub transport: TransportCfg,
    #[serde(default)]
    pub ontology: OntologySchema,
    #[serde(default)]
    pub buyers: Vec<BuyerSpec>,
    #[serde(default)]
    pub sellers: Vec<SellerSpec>,
    #[serde(default)]
    pub notaries: Vec<NotarySpec>,
    #[serde(default)]
    pub delegates: Vec<DelegateSpec>,
    #[serde(default)]
    pub challengers: Vec<ChallengerSpec>,
    #[serde(default)]
    pub orders: Vec<OrderSpec>,
    #[serde(default)]
    pub matrix: MatrixCfg,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("genesis failed: {0}")]
    Genesis(#[from] crate::ledger::GenesisError),
}

impl ScenarioFile {
    pub fn from_slice(bytes: &[u8]) -> Result<ScenarioFile, ScenarioError> {
        let file: ScenarioFile = serde_json::from_slice(bytes)?;
        file.validate()?;
        Ok(file)
    }

    /// Seller specs with `count` above one expanded into numbered copies.
    pub fn expanded_sellers(&self) -> Vec<SellerSpec> {
        let mut out = Vec::new();
        for spec in &self.sellers {
            if spec.count <= 1 {
                out.push(spec.clone());
            } else {
                for i in 1..=spec.count {
                    let mut copy = spec.clone();
                    copy.name = format!("{}-{i}", spec.name);
                    copy.count = 1;
                    out.push(copy);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        if self.format_version != FORMAT_VERSION {
            errors.push(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.run_blocks == 0 {
            errors.push("run_blocks must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.transport.drop_rate) {
            errors.push("transport.drop_rate must lie in [0, 1]".into());
        }

        let sellers = self.expanded_sellers();
        let mut names = BTreeSet::new();
        let all_names = self
            .buyers
            .iter()
            .map(|b| &b.name)
            .chain(sellers.iter().map(|s| &s.name))
            .chain(self.notaries.iter().map(|n| &n.name))
            .chain(self.delegates.iter().map(|d| &d.name))
            .chain(self.challengers.iter().map(|c| &c.name));
        for name in all_names {
            if name.is_empty() {
                errors.push("participant names must be non-empty".into());
            }
            if !names.insert(name.clone()) {
                errors.push(format!("duplicate participant name {name:?}"));
            }
        }

        let notary_names: BTreeSet<&str> =
            self.notaries.iter().map(|n| n.name.as_str()).collect();
        let buyer_names: BTreeSet<&str> = self.buyers.iter().map(|b| b.name.as_str()).collect();
        let delegate_names: BTreeSet<&str> =
            self.delegates.iter().map(|d| d.name.as_str()).collect();

        for spec in &self.notaries {
            if !(0.0..=1.0).contains(&spec.notarization_percentage) {
                errors.push(format!(
                    "notary {}: notarization_percentage must lie in [0, 1]",
                    spec.name
                ));
            }
        }
        for spec in &sellers {
            for notary in &spec.trusted_notaries {
                if !notary_names.contains(notary.as_str()) {
                    errors.push(format!(
                        "seller {}: unknown trusted notary {notary:?}",
                        spec.name
                    ));
                }
            }
            if let Some(delegate) = &spec.delegate {
                if !delegate_names.contains(delegate.as_str()) {
                    errors.push(format!(
                        "seller {}: unknown delegate {delegate:?}",
                        spec.name
                    ));
                }
            }
            if let Err(e) = self.ontology.validate_profile(&spec.profile) {
                errors.push(format!("seller {}: profile rejected: {e}", spec.name));
            }
        }
        for (ix, order) in self.orders.iter().enumerate() {
            if !buyer_names.contains(order.buyer.as_str()) {
                errors.push(format!("order {ix}: unknown buyer {:?}", order.buyer));
            }
            for notary in &order.notaries {
                if !notary_names.contains(notary.as_str()) {
                    errors.push(format!("order {ix}: unknown notary {notary:?}"));
                }
            }
            if order.notaries.is_empty() {
                errors.push(format!("order {ix}: needs at least one notary"));
            }
            if let Err(e) = self.ontology.validate_audience(&order.audience) {
                errors.push(format!("order {ix}: audience rejected: {e}"));
            }
            if let Err(e) = self.ontology.validate_queries(&order.requested) {
                errors.push(format!("order {ix}: requested data rejected: {e}"));
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    /// Build the engine for a protocol run. `seed_override` replaces the
    /// file's seed when given.
    pub fn build_engine(&self, seed_override: Option<u64>) -> Result<Engine, ScenarioError> {
        self.validate()?;
        let seed = seed_override.unwrap_or(self.seed);
        let sellers = self.expanded_sellers();

        // One keypair per participant, in declaration order.
        let mut key_rng = rng_from_seed(seed ^ KEY_STREAM_SALT);
        let mut keys: BTreeMap<String, SigningKeyPair> = BTreeMap::new();
        for name in self
            .buyers
            .iter()
            .map(|b| b.name.clone())
            .chain(sellers.iter().map(|s| s.name.clone()))
            .chain(self.notaries.iter().map(|n| n.name.clone()))
            .chain(self.delegates.iter().map(|d| d.name.clone()))
            .chain(self.challengers.iter().map(|c| c.name.clone()))
        {
            keys.insert(name.clone(), SigningKeyPair::generate(&mut key_rng));
        }
        let address_of = |name: &str| -> Address { keys[name].address() };

        let mut allocations: BTreeMap<Address, Amount> = BTreeMap::new();
        for (name, tokens) in self
            .buyers
            .iter()
            .map(|b| (b.name.as_str(), b.tokens))
            .chain(sellers.iter().map(|s| (s.name.as_str(), s.tokens)))
            .chain(self.notaries.iter().map(|n| (n.name.as_str(), n.tokens)))
            .chain(self.challengers.iter().map(|c| (c.name.as_str(), c.tokens)))
        {
            if tokens > 0 {
                *allocations.entry(address_of(name)).or_insert(0) += tokens;
            }
        }

        let chain = Chain::new(self.ledger, self.ontology.clone(), &allocations)?;
        let transport = Transport::new(self.transport.delay_blocks, self.transport.drop_rate);
        let mut engine = Engine::new(&self.name, seed, chain, transport);

        // Buyers first: account ids follow registration order, which
        // follows actor order, so buyers take the low ids.
        for spec in &self.buyers {
            let plans: Vec<OrderPlan> = self
                .orders
                .iter()
                .filter(|o| o.buyer == spec.name)
                .map(|o| OrderPlan {
                    create_block: o.create_block,
                    price: o.price,
                    audience: o.audience.clone(),
                    requested: o.requested.clone(),
                    description: o.description.clone(),
                    intended_use: o.intended_use.clone(),
                    tc_text: o.tc_text.clone(),
                    notaries: o.notaries.iter().map(|n| address_of(n)).collect(),
                    response_window_blocks: o.response_window_blocks,
                    max_sellers: o.max_sellers,
                })
                .collect();
            let cfg = BuyerCfg {
                name: spec.name.clone(),
                deposit: spec.deposit,
                orders: plans,
            };
            engine.add_actor(Box::new(Buyer::new(cfg, keys[&spec.name].clone())));
        }

        for spec in &sellers {
            let cfg = SellerCfg {
                name: spec.name.clone(),
                profile: spec.profile.clone(),
                deposit: spec.deposit,
                price_floor: spec.price_floor,
                trusted_notaries: spec
                    .trusted_notaries
                    .iter()
                    .map(|n| address_of(n))
                    .collect(),
                preregistered: spec.preregistered,
                collect_threshold: spec.collect_threshold,
                delegate: spec.delegate.as_deref().map(&address_of),
                delegate_max_fee: spec.delegate_max_fee,
                fabricating: spec.fabricating,
                greedy: spec.greedy,
                withdraw_after_collect: spec.withdraw_after_collect,
            };
            engine.add_actor(Box::new(Seller::new(cfg, keys[&spec.name].clone())));
        }

        // Ground truth for audits: what each seller's profile really holds.
        let truth: BTreeMap<Address, SellerProfile> = sellers
            .iter()
            .map(|s| (address_of(&s.name), s.profile.clone()))
            .collect();

        for spec in &self.notaries {
            let cfg = NotaryCfg {
                name: spec.name.clone(),
                fee: spec.fee,
                notarization_percentage: spec.notarization_percentage,
                terms: spec.terms.clone(),
                verifier: spec.verifier.clone(),
                deposit: spec.deposit,
                silent: spec.silent,
                garbage_key: spec.garbage_key,
            };
            engine.add_actor(Box::new(Notary::new(
                cfg,
                keys[&spec.name].clone(),
                truth.clone(),
            )));
        }

        for spec in &self.delegates {
            let cfg = DelegateCfg {
                name: spec.name.clone(),
                fee: spec.fee,
            };
            engine.add_actor(Box::new(Delegate::new(cfg, keys[&spec.name].clone())));
        }

        for spec in &self.challengers {
            let cfg = ChallengerCfg {
                name: spec.name.clone(),
                deposit: spec.deposit,
                spurious: spec.spurious,
            };
            engine.add_actor(Box::new(Challenger::new(cfg, keys[&spec.name].clone())));
        }

        Ok(engine)
    }

    /// Build, run to the configured horizon, and report. The trace comes
    /// back alongside the report as JSON lines.
    pub fn run_protocol(
        &self,
        seed_override: Option<u64>,
    ) -> Result<(crate::report::RunReport, String), ScenarioError> {
        let mut engine = self.build_engine(seed_override)?;
        engine.run(self.run_blocks);
        Ok((engine.report(), engine.trace_jsonl()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{
                "format_version": 1,
                "name": "t",
                "seed": 7,
                "run_blocks": 10
                {extra}
            }}"#
        )
    }

    #[test]
    fn minimal_file_parses_with_defaults() {
        let file = ScenarioFile::from_slice(minimal("").as_bytes()).unwrap();
        assert_eq!(file.kind, ScenarioKind::Protocol);
        assert_eq!(file.transport.delay_blocks, 0);
        assert_eq!(file.ledger, ChainParams::default());
        assert!(file.buyers.is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal(r#", "surprise": true"#);
        assert!(ScenarioFile::from_slice(text.as_bytes()).is_err());
    }

    #[test]
    fn bad_references_are_reported_together() {
        let text = minimal(
            r#", "sellers": [{"name": "s", "trusted_notaries": ["ghost"], "delegate": "nobody"}],
                "orders": [{"buyer": "b", "create_block": 1, "price": 1,
                            "tc_text": "t", "notaries": []}]"#,
        );
        let err = ScenarioFile::from_slice(text.as_bytes()).unwrap_err();
        let ScenarioError::Invalid(errors) = err else {
            panic!("expected validation failure, got {err}");
        };
        assert!(errors.iter().any(|e| e.contains("ghost")));
        assert!(errors.iter().any(|e| e.contains("nobody")));
        assert!(errors.iter().any(|e| e.contains("unknown buyer")));
        assert!(errors.iter().any(|e| e.contains("at least one notary")));
    }

    #[test]
    fn duplicate_names_rejected_across_roles() {
        let text = minimal(
            r#", "buyers": [{"name": "x"}], "notaries": [{"name": "x", "fee": 1}]"#,
        );
        let err = ScenarioFile::from_slice(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate participant name"));
    }

    #[test]
    fn seller_count_expansion_numbers_names() {
        let text = minimal(r#", "sellers": [{"name": "s", "count": 3}]"#);
        let file = ScenarioFile::from_slice(text.as_bytes()).unwrap();
        let names: Vec<String> = file
            .expanded_sellers()
            .into_iter()
            .map(|s| s.name)
            .collect();
        assert_eq!(names, ["s-1", "s-2", "s-3"]);
    }

    #[test]
    fn same_seed_same_identities() {
        let text = minimal(r#", "buyers": [{"name": "b"}], "sellers": [{"name": "s"}]"#);
        let file = ScenarioFile::from_slice(text.as_bytes()).unwrap();
        let e1 = file.build_engine(None).unwrap();
        let e2 = file.build_engine(None).unwrap();
        let a1: Vec<_> = e1.dir().all().iter().map(|p| p.address).collect();
        let a2: Vec<_> = e2.dir().all().iter().map(|p| p.address).collect();
        assert_eq!(a1, a2);
        let e3 = file.build_engine(Some(8)).unwrap();
        let a3: Vec<_> = e3.dir().all().iter().map(|p| p.address).collect();
        assert_ne!(a1, a3);
    }
}
