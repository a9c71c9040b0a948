//! Scenario archetypes: client-server, P2P, and hybrid supply chains driven
//! by a deterministic event loop.
//!
//! A scenario registers every product at the manufacturer, then walks each
//! product along the hand-off route. Verification at a hand-off depends on
//! the archetype: a client-server hop sends the captures to the trusted
//! server's decision endpoint, a P2P hop authenticates locally against the
//! on-chain reference digest and is re-verified by the mutual
//! authentication protocol every `M` consensus cycles, and a hybrid hop
//! picks one of the two by the receiving node's trust region. A closing
//! audit phase drains any still-pending mutual authentications at the end
//! of the run.
//!
//! Dishonest holders lie in their local authentication by echoing the
//! on-chain reference digest, which is exactly what the broadcast-and-
//! recompute step of mutual authentication catches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::authcore::{AuthOutcome, AuthSystem, DecisionPolicy, TemplateStore};
use crate::chainnet::{
    verify_chain, Block, ChainError, ConsensusConfig, Message, MessageKind, Network, NetStats,
    NodeId, NodeRole, Region, Transaction, TxKind,
};
use crate::features::{Pipeline, QuantizerConfig};
use crate::optics::{acquire, AcquisitionPlan, CaptureSet, EnvironmentModel};
use crate::surface::{generate_surface, NormMap, SurfaceParams};
use crate::util::mix_seed;

/// Supported schema version of scenario config files.
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// System arrangement of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    ClientServer,
    P2p,
    Hybrid,
}

/// One participant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    #[serde(default = "default_true")]
    pub honest: bool,
    #[serde(default)]
    pub region: Region,
}

fn default_true() -> bool {
    true
}

/// One product and the seed of its physical surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductSpec {
    pub id: String,
    pub surface_seed: u64,
}

/// Scripted adversary events, indexed by the global hand-off counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioAttack {
    /// The physical product is swapped for a counterfeit surface just
    /// before hand-off `at_handoff` of `product`.
    CounterfeitSubstitution { product: String, at_handoff: u32, counterfeit_seed: u64 },
    /// The registration markers are destroyed before hand-off `at_handoff`.
    MarkerTamper { product: String, at_handoff: u32 },
}

impl ScenarioAttack {
    fn product(&self) -> &str {
        match self {
            ScenarioAttack::CounterfeitSubstitution { product, .. } => product,
            ScenarioAttack::MarkerTamper { product, .. } => product,
        }
    }

    fn at_handoff(&self) -> u32 {
        match self {
            ScenarioAttack::CounterfeitSubstitution { at_handoff, .. } => *at_handoff,
            ScenarioAttack::MarkerTamper { at_handoff, .. } => *at_handoff,
        }
    }
}

/// Physical and feature pipeline parameters shared by every node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineParams {
    pub width: u32,
    pub height: u32,
    pub correlation_length: f64,
    pub slope_scale: f64,
    /// Acquisition noise as a fraction of dynamic range.
    pub noise_rel: f64,
    pub quantizer: QuantizerConfig,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            correlation_length: 3.0,
            slope_scale: 0.2,
            noise_rel: 0.0,
            quantizer: QuantizerConfig::default(),
        }
    }
}

/// Complete scenario description; serializable as a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub archetype: Archetype,
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
    pub products: Vec<ProductSpec>,
    #[serde(default)]
    pub attacks: Vec<ScenarioAttack>,
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    /// Hand-off chain by node id; defaults to manufacturer, then
    /// distributors, then retailers in id order.
    #[serde(default)]
    pub route: Option<Vec<NodeId>>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ChainError::ConfigError(format!(
                "unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.nodes.is_empty() {
            return Err(ChainError::ConfigError("no nodes".into()));
        }
        if self.products.is_empty() {
            return Err(ChainError::ConfigError("no products".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.products {
            if !ids.insert(&p.id) {
                return Err(ChainError::ConfigError(format!("duplicate product {:?}", p.id)));
            }
        }
        if !self.nodes.iter().any(|n| n.role == NodeRole::Manufacturer) {
            return Err(ChainError::ConfigError("a manufacturer node is required".into()));
        }
        let servers = self.nodes.iter().filter(|n| n.role == NodeRole::Server).count();
        match self.archetype {
            Archetype::ClientServer | Archetype::Hybrid => {
                if servers != 1 {
                    return Err(ChainError::ConfigError(format!(
                        "{:?} needs exactly one server node, found {servers}",
                        self.archetype
                    )));
                }
            }
            Archetype::P2p => {
                if servers != 0 {
                    return Err(ChainError::ConfigError(
                        "p2p scenarios have no server node".into(),
                    ));
                }
            }
        }
        if let Some(route) = &self.route {
            for id in route {
                if !self.nodes.iter().any(|n| n.id == *id) {
                    return Err(ChainError::ConfigError(format!("route names unknown node {id}")));
                }
            }
            if route.len() < 2 {
                return Err(ChainError::ConfigError("route needs at least two nodes".into()));
            }
        }
        for attack in &self.attacks {
            if !self.products.iter().any(|p| p.id == attack.product()) {
                return Err(ChainError::ConfigError(format!(
                    "attack references unknown product {:?}",
                    attack.product()
                )));
            }
        }
        self.consensus.validate()?;
        Ok(())
    }

    fn effective_route(&self) -> Vec<NodeId> {
        if let Some(route) = &self.route {
            return route.clone();
        }
        let mut route: Vec<&NodeSpec> = self
            .nodes
            .iter()
            .filter(|n| n.role != NodeRole::Server)
            .collect();
        route.sort_by_key(|n| (n.role, n.id));
        route.into_iter().map(|n| n.id).collect()
    }
}

/// One line of the scenario event log.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub index: u64,
    pub tick: u64,
    pub cycle: u32,
    pub kind: String,
    pub product: Option<String>,
    pub node: Option<NodeId>,
    pub accepted: Option<bool>,
    pub detail: String,
}

/// Authentication history of one product.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ProductHistory {
    pub handoffs: u32,
    pub authentications: Vec<bool>,
    pub flagged: bool,
    /// Hand-off cycle at which a scripted counterfeit replaced the product.
    pub counterfeit_injected_at: Option<u32>,
    /// Hand-off cycle at which the system flagged it.
    pub detected_at: Option<u32>,
}

/// Everything measured over one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub archetype: Archetype,
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub per_product: BTreeMap<String, ProductHistory>,
    pub detected_malicious: Vec<NodeId>,
    pub flag_events: u32,
    pub stats: NetStats,
    pub final_height: u64,
    pub replicas_identical: bool,
    pub chains_verify: bool,
    /// Ground truth for analysis; the protocol itself never sees this.
    pub truth_counterfeit_products: Vec<String>,
    pub truth_dishonest_nodes: Vec<NodeId>,
    /// Ledger of the first replica.
    pub ledger: Vec<Block>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Ledger export as a JSON array of blocks.
    pub fn ledger_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.ledger).expect("ledger serializes")
    }

    /// Per-event CSV: index,tick,cycle,kind,product,node,accepted,detail.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("index,tick,cycle,kind,product,node,accepted,detail\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.index,
                e.tick,
                e.cycle,
                e.kind,
                e.product.as_deref().unwrap_or(""),
                e.node.map(|n| n.to_string()).unwrap_or_default(),
                e.accepted.map(|a| a.to_string()).unwrap_or_default(),
                e.detail.replace(',', ";"),
            ));
        }
        out
    }
}

struct Runner<'c> {
    config: &'c ScenarioConfig,
    net: Network,
    server: Option<(NodeId, AuthSystem)>,
    surfaces: BTreeMap<String, NormMap>,
    events: Vec<EventRecord>,
    history: BTreeMap<String, ProductHistory>,
    pending_mutual: BTreeMap<String, (NodeId, CaptureSet)>,
    cycle: u32,
    flag_events: u32,
}

impl<'c> Runner<'c> {
    fn log(
        &mut self,
        cycle: u32,
        kind: &str,
        product: Option<&str>,
        node: Option<NodeId>,
        accepted: Option<bool>,
        detail: String,
    ) {
        self.events.push(EventRecord {
            index: self.events.len() as u64,
            tick: self.net.clock(),
            cycle,
            kind: kind.to_string(),
            product: product.map(str::to_string),
            node,
            accepted,
            detail,
        });
    }

    fn scan_plan(&self, seed: u64) -> AcquisitionPlan {
        AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), seed)
            .with_noise(self.config.pipeline.noise_rel)
    }

    fn register_all(&mut self) -> Result<(), ChainError> {
        let manufacturer = self
            .config
            .nodes
            .iter()
            .find(|n| n.role == NodeRole::Manufacturer)
            .expect("validated")
            .id;
        for (k, product) in self.config.products.iter().enumerate() {
            let nm = generate_surface(&SurfaceParams::new(
                self.config.pipeline.width,
                self.config.pipeline.height,
                self.config.pipeline.correlation_length,
                self.config.pipeline.slope_scale,
                product.surface_seed,
            ))?;
            // Registration is a noiseless, aligned acquisition.
            let captures = acquire(
                &nm,
                &AcquisitionPlan::scanner(
                    EnvironmentModel::scanner_default(),
                    mix_seed(self.config.seed, k as u64, 100),
                ),
            )?;
            let digest = self
                .net
                .node(manufacturer)
                .expect("manufacturer exists")
                .recompute_digest(&captures)?;
            let ts = self.net.tick();
            self.net.submit(Transaction {
                kind: TxKind::Register,
                actor: manufacturer,
                subject: product.id.clone(),
                payload_digest: digest,
                nonce: ts,
                timestamp: ts,
            });
            self.net.settle()?;
            if let Some((_, system)) = &mut self.server {
                system.register_captures("manufacturer", &product.id, &captures)?;
            }
            self.surfaces.insert(product.id.clone(), nm);
            self.history.insert(product.id.clone(), ProductHistory::default());
            self.log(0, "register", Some(&product.id), Some(manufacturer), None, "enrolled".into());
        }
        Ok(())
    }

    fn apply_scheduled_attacks(&mut self, product_id: &str, handoff: u32) -> Result<bool, ChainError> {
        let mut tampered = false;
        let mut injected = false;
        let mut counterfeit_seed = None;
        for attack in &self.config.attacks {
            if attack.product() != product_id || attack.at_handoff() != handoff {
                continue;
            }
            match attack {
                ScenarioAttack::CounterfeitSubstitution { counterfeit_seed: seed, .. } => {
                    counterfeit_seed = Some(*seed);
                    injected = true;
                }
                ScenarioAttack::MarkerTamper { .. } => tampered = true,
            }
        }
        if let Some(seed) = counterfeit_seed {
            let fake = generate_surface(&SurfaceParams::new(
                self.config.pipeline.width,
                self.config.pipeline.height,
                self.config.pipeline.correlation_length,
                self.config.pipeline.slope_scale,
                seed,
            ))?;
            self.surfaces.insert(product_id.to_string(), fake);
        }
        if injected {
            let entry = self.history.get_mut(product_id).expect("registered");
            entry.counterfeit_injected_at = Some(self.cycle + 1);
            self.log(
                self.cycle + 1,
                "counterfeit_substitution",
                Some(product_id),
                None,
                None,
                "physical product swapped".into(),
            );
        }
        Ok(tampered)
    }

    fn uses_server_flow(&self, receiver: NodeId) -> bool {
        match self.config.archetype {
            Archetype::ClientServer => true,
            Archetype::P2p => false,
            Archetype::Hybrid => {
                self.net.node(receiver).map(|n| n.region == Region::Trusted).unwrap_or(false)
            }
        }
    }

    fn handoff(
        &mut self,
        product_idx: usize,
        product_id: &str,
        receiver: NodeId,
        handoff_counter: u32,
    ) -> Result<(), ChainError> {
        let tampered = self.apply_scheduled_attacks(product_id, handoff_counter)?;
        self.cycle += 1;
        let cycle = self.cycle;

        let nm = self.surfaces.get(product_id).expect("registered").clone();
        let mut plan = self.scan_plan(mix_seed(
            self.config.seed,
            product_idx as u64,
            200 + handoff_counter as u64,
        ));
        if tampered {
            plan = plan.with_tampered_markers();
        }
        let captures = acquire(&nm, &plan)?;

        if self.uses_server_flow(receiver) {
            self.server_handoff(product_id, receiver, cycle, &captures)?;
        } else {
            self.p2p_handoff(product_id, receiver, cycle, &captures)?;
        }

        let entry = self.history.get_mut(product_id).expect("registered");
        entry.handoffs += 1;

        // Periodic mutual authentication plus ledger settlement.
        if self.config.archetype != Archetype::ClientServer
            && cycle.is_multiple_of(self.config.consensus.mutual_auth_period)
        {
            self.mutual_auth_phase()?;
        }
        Ok(())
    }

    fn server_handoff(
        &mut self,
        product_id: &str,
        receiver: NodeId,
        cycle: u32,
        captures: &CaptureSet,
    ) -> Result<(), ChainError> {
        let server_id = self.server.as_ref().expect("validated server").0;
        // Query and reply messages between receiver and server.
        let receiver_idx = self
            .net
            .nodes
            .iter()
            .position(|n| n.node_id == receiver)
            .ok_or_else(|| ChainError::ConfigError(format!("unknown node {receiver}")))?;
        let server_idx = self
            .net
            .nodes
            .iter()
            .position(|n| n.node_id == server_id)
            .expect("server on network");
        let query_nonce = self.net.fresh_nonce(receiver_idx);
        let query = Message {
            from: receiver,
            to: Some(server_id),
            kind: MessageKind::StoreQuery,
            payload_bytes: captures.encoded_len() as u64,
            nonce: query_nonce,
            timestamp: self.net.clock(),
        };
        self.net.send(query)?;

        let system = &mut self.server.as_mut().expect("validated server").1;
        let outcome =
            system.authenticate_captures(&format!("node:{receiver}"), captures, Some(product_id))?;
        let accepted = outcome.accepted();
        let reply_nonce = self.net.fresh_nonce(server_idx);
        self.net.send(Message {
            from: server_id,
            to: Some(receiver),
            kind: MessageKind::StoreReply { accept: accepted },
            payload_bytes: 40,
            nonce: reply_nonce,
            timestamp: self.net.clock(),
        })?;
        let digest = match &outcome {
            AuthOutcome::ManualInspection => [0u8; 32],
            _ => self
                .net
                .node(server_id)
                .expect("server on network")
                .recompute_digest(captures)
                .unwrap_or([0u8; 32]),
        };
        let ts = self.net.tick();
        self.net.submit(Transaction {
            kind: if accepted { TxKind::Authenticate } else { TxKind::Flag },
            actor: server_id,
            subject: if accepted {
                product_id.to_string()
            } else {
                format!("product:{product_id}")
            },
            payload_digest: digest,
            nonce: ts,
            timestamp: ts,
        });
        self.net.settle()?;

        let detail = match &outcome {
            AuthOutcome::ManualInspection => "markers tampered; routed to manual inspection",
            AuthOutcome::Decision(_) if accepted => "server accepted",
            _ => "server rejected",
        };
        self.log(
            cycle,
            "client_server_verify",
            Some(product_id),
            Some(receiver),
            Some(accepted),
            detail.into(),
        );
        let entry = self.history.get_mut(product_id).expect("registered");
        entry.authentications.push(accepted);
        if !accepted {
            entry.flagged = true;
            entry.detected_at.get_or_insert(cycle);
            self.flag_events += 1;
        }
        Ok(())
    }

    fn p2p_handoff(
        &mut self,
        product_id: &str,
        receiver: NodeId,
        cycle: u32,
        captures: &CaptureSet,
    ) -> Result<(), ChainError> {
        let node = self
            .net
            .node(receiver)
            .ok_or_else(|| ChainError::ConfigError(format!("unknown node {receiver}")))?;
        let honest = node.honest;
        let reference = node
            .reference_digest(product_id)
            .ok_or_else(|| ChainError::UnknownProduct(product_id.to_string()))?;
        let recomputed = node.recompute_digest(captures);
        let local_ok = matches!(&recomputed, Ok(d) if *d == reference);

        // A dishonest holder lies: it reports the reference digest so its
        // local authentication looks clean on the ledger.
        let (reported_ok, reported_digest) = if honest {
            (local_ok, recomputed.unwrap_or([0u8; 32]))
        } else {
            (true, reference)
        };

        let ts = self.net.tick();
        self.net.submit(Transaction {
            kind: if reported_ok { TxKind::Authenticate } else { TxKind::Flag },
            actor: receiver,
            subject: if reported_ok {
                product_id.to_string()
            } else {
                format!("product:{product_id}")
            },
            payload_digest: reported_digest,
            nonce: ts,
            timestamp: ts,
        });
        self.net.settle()?;

        self.log(
            cycle,
            "p2p_local_verify",
            Some(product_id),
            Some(receiver),
            Some(reported_ok),
            if honest { "local authentication".into() } else { "holder reported success".into() },
        );
        let entry = self.history.get_mut(product_id).expect("registered");
        entry.authentications.push(reported_ok);
        if !reported_ok {
            entry.flagged = true;
            entry.detected_at.get_or_insert(cycle);
            self.flag_events += 1;
        }

        self.pending_mutual.insert(product_id.to_string(), (receiver, captures.clone()));
        Ok(())
    }

    fn mutual_auth_phase(&mut self) -> Result<(), ChainError> {
        let pending = std::mem::take(&mut self.pending_mutual);
        let cycle = self.cycle;
        for (product_id, (prover, captures)) in pending {
            let verdict = self.net.mutual_authenticate(prover, &captures, &product_id)?;
            self.log(
                cycle,
                "mutual_auth",
                Some(&product_id),
                Some(prover),
                Some(verdict.accepted),
                format!("{} sign-offs, {} flags", verdict.sign_offs, verdict.flags),
            );
            if !verdict.accepted {
                let entry = self.history.get_mut(&product_id).expect("registered");
                entry.flagged = true;
                entry.detected_at.get_or_insert(cycle);
                self.flag_events += 1;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ScenarioReport, ChainError> {
        // Closing audit: drain whatever the period left pending.
        if self.config.archetype != Archetype::ClientServer && !self.pending_mutual.is_empty() {
            self.mutual_auth_phase()?;
        }

        let reference = serde_json::to_string(&self.net.nodes[0].chain()).expect("serializes");
        let replicas_identical = self.net.nodes.iter().all(|n| {
            serde_json::to_string(&n.chain()).expect("serializes") == reference
        });
        let chains_verify = self.net.nodes.iter().all(verify_chain);
        let detected_malicious: Vec<NodeId> = self
            .net
            .nodes
            .iter()
            .filter(|n| n.flagged)
            .map(|n| n.node_id)
            .collect();
        let truth_counterfeit_products = self
            .config
            .attacks
            .iter()
            .filter_map(|a| match a {
                ScenarioAttack::CounterfeitSubstitution { product, .. } => Some(product.clone()),
                _ => None,
            })
            .collect();
        let truth_dishonest_nodes =
            self.config.nodes.iter().filter(|n| !n.honest).map(|n| n.id).collect();

        Ok(ScenarioReport {
            archetype: self.config.archetype,
            seed: self.config.seed,
            per_product: self.history,
            detected_malicious,
            flag_events: self.flag_events,
            stats: self.net.stats,
            final_height: self.net.nodes[0].tip().height,
            replicas_identical,
            chains_verify,
            truth_counterfeit_products,
            truth_dishonest_nodes,
            ledger: self.net.nodes[0].chain().to_vec(),
            events: self.events,
        })
    }
}

/// Runs a scenario end to end; same config, same bytes out.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, ChainError> {
    config.validate()?;
    let pipeline = Pipeline::new(config.pipeline.quantizer.clone());
    let net = Network::new(
        config.nodes.iter().map(|n| (n.id, n.role, n.honest, n.region)).collect(),
        pipeline.clone(),
        config.consensus,
    )?;
    let server = config.nodes.iter().find(|n| n.role == NodeRole::Server).map(|spec| {
        let store = TemplateStore::plain(mix_seed(config.seed, spec.id, 0x5E4));
        (spec.id, AuthSystem::new(pipeline.clone(), store, DecisionPolicy::hamming(0.1)))
    });

    let mut runner = Runner {
        config,
        net,
        server,
        surfaces: BTreeMap::new(),
        events: Vec::new(),
        history: BTreeMap::new(),
        pending_mutual: BTreeMap::new(),
        cycle: 0,
        flag_events: 0,
    };

    runner.register_all()?;

    let route = config.effective_route();
    let mut handoff_counter = 0u32;
    for (product_idx, product) in config.products.iter().enumerate() {
        for receiver in route.iter().skip(1) {
            handoff_counter += 1;
            runner.handoff(product_idx, &product.id, *receiver, handoff_counter)?;
        }
    }

    runner.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(archetype: Archetype) -> ScenarioConfig {
        let mut nodes = vec![
            NodeSpec { id: 0, role: NodeRole::Manufacturer, honest: true, region: Region::Trusted },
            NodeSpec { id: 1, role: NodeRole::Distributor, honest: true, region: Region::Untrusted },
            NodeSpec { id: 2, role: NodeRole::Retailer, honest: true, region: Region::Untrusted },
            NodeSpec { id: 3, role: NodeRole::Retailer, honest: true, region: Region::Untrusted },
        ];
        if archetype != Archetype::P2p {
            nodes.push(NodeSpec {
                id: 9,
                role: NodeRole::Server,
                honest: true,
                region: Region::Trusted,
            });
        }
        ScenarioConfig {
            schema_version: SCENARIO_SCHEMA_VERSION,
            archetype,
            seed: 11,
            nodes,
            products: (0..4)
                .map(|i| ProductSpec { id: format!("SKU-{i}"), surface_seed: 700 + i })
                .collect(),
            attacks: vec![],
            consensus: ConsensusConfig { mutual_auth_period: 1, quorum: 0.6 },
            pipeline: PipelineParams::default(),
            route: None,
        }
    }

    #[test]
    fn client_server_all_honest_authenticates_everything() {
        let report = run_scenario(&base_config(Archetype::ClientServer)).unwrap();
        assert_eq!(report.flag_events, 0);
        for history in report.per_product.values() {
            assert_eq!(history.handoffs, 3);
            assert!(history.authentications.iter().all(|a| *a));
            assert!(!history.flagged);
        }
        assert!(report.chains_verify);
        assert!(report.replicas_identical);
    }

    #[test]
    fn p2p_counterfeit_is_rejected_at_next_mutual_authentication() {
        let mut config = base_config(Archetype::P2p);
        // The distributor receives the counterfeit and is in on it.
        config.nodes[1].honest = false;
        config.attacks = vec![ScenarioAttack::CounterfeitSubstitution {
            product: "SKU-2".into(),
            at_handoff: 7, // product 2's first hop (3 hops per product)
            counterfeit_seed: 999,
        }];
        let report = run_scenario(&config).unwrap();

        let victim = &report.per_product["SKU-2"];
        assert!(victim.flagged, "counterfeit must be flagged");
        let injected = victim.counterfeit_injected_at.unwrap();
        let detected = victim.detected_at.unwrap();
        assert!(detected >= injected);
        assert!(
            detected - injected < config.consensus.mutual_auth_period,
            "M=1 detects in the same cycle"
        );
        // The dishonest holder lied locally, so detection came from the
        // mutual authentication flag, recorded on the ledger.
        assert!(report.detected_malicious.contains(&1));
        let flags_on_ledger = report
            .ledger
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|t| t.kind == TxKind::Flag && t.subject == "node:1")
            .count();
        assert!(flags_on_ledger >= 1);
        // Untouched products sail through.
        assert!(!report.per_product["SKU-0"].flagged);
        assert!(report.replicas_identical && report.chains_verify);
    }

    #[test]
    fn longer_period_sends_fewer_mutual_auth_bytes_and_detects_within_m() {
        let make = |m: u32| {
            let mut config = base_config(Archetype::P2p);
            config.nodes[1].honest = false;
            config.consensus.mutual_auth_period = m;
            config.attacks = vec![ScenarioAttack::CounterfeitSubstitution {
                product: "SKU-0".into(),
                at_handoff: 1,
                counterfeit_seed: 999,
            }];
            run_scenario(&config).unwrap()
        };
        let every_cycle = make(1);
        let every_fifth = make(5);
        assert!(
            every_fifth.stats.mutual_auth_bytes < every_cycle.stats.mutual_auth_bytes,
            "M=5 bytes {} must be strictly below M=1 bytes {}",
            every_fifth.stats.mutual_auth_bytes,
            every_cycle.stats.mutual_auth_bytes
        );
        for report in [&every_cycle, &every_fifth] {
            let victim = &report.per_product["SKU-0"];
            assert!(victim.flagged);
            let delay = victim.detected_at.unwrap() - victim.counterfeit_injected_at.unwrap();
            assert!(delay <= 5, "detection delay {delay}");
        }
        let delay1 = every_cycle.per_product["SKU-0"].detected_at.unwrap()
            - every_cycle.per_product["SKU-0"].counterfeit_injected_at.unwrap();
        assert!(delay1 < 1);
    }

    #[test]
    fn honest_p2p_node_detects_counterfeit_locally() {
        let mut config = base_config(Archetype::P2p);
        config.attacks = vec![ScenarioAttack::CounterfeitSubstitution {
            product: "SKU-1".into(),
            at_handoff: 4,
            counterfeit_seed: 555,
        }];
        let report = run_scenario(&config).unwrap();
        let victim = &report.per_product["SKU-1"];
        assert!(victim.flagged);
        assert!(victim.authentications.iter().any(|a| !a), "honest holder flags locally");
    }

    #[test]
    fn marker_tamper_routes_to_manual_inspection_in_client_server() {
        let mut config = base_config(Archetype::ClientServer);
        config.attacks = vec![ScenarioAttack::MarkerTamper {
            product: "SKU-0".into(),
            at_handoff: 1,
        }];
        let report = run_scenario(&config).unwrap();
        let victim = &report.per_product["SKU-0"];
        assert!(victim.flagged);
        assert!(report
            .events
            .iter()
            .any(|e| e.kind == "client_server_verify" && e.detail.contains("manual inspection")));
    }

    #[test]
    fn hybrid_labels_hops_by_region() {
        let config = base_config(Archetype::Hybrid);
        let report = run_scenario(&config).unwrap();
        // Distributor and retailers sit in the untrusted region.
        assert!(report.events.iter().any(|e| e.kind == "p2p_local_verify"));
        assert!(report.events.iter().any(|e| e.kind == "mutual_auth"));
        let mut hybrid_trusted = base_config(Archetype::Hybrid);
        for node in &mut hybrid_trusted.nodes {
            node.region = Region::Trusted;
        }
        let trusted_report = run_scenario(&hybrid_trusted).unwrap();
        assert!(trusted_report.events.iter().all(|e| e.kind != "p2p_local_verify"));
        assert!(trusted_report.events.iter().any(|e| e.kind == "client_server_verify"));
    }

    #[test]
    fn scenario_reports_are_byte_identical_across_runs() {
        let mut config = base_config(Archetype::P2p);
        config.nodes[1].honest = false;
        config.attacks = vec![ScenarioAttack::CounterfeitSubstitution {
            product: "SKU-3".into(),
            at_handoff: 10,
            counterfeit_seed: 4242,
        }];
        let a = run_scenario(&config).unwrap();
        let b = run_scenario(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.to_json()).unwrap(),
            serde_json::to_string(&b.to_json()).unwrap()
        );
        assert_eq!(a.events_csv(), b.events_csv());
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut bad_quorum = base_config(Archetype::P2p);
        bad_quorum.consensus.quorum = 0.5;
        assert!(matches!(run_scenario(&bad_quorum), Err(ChainError::ConfigError(_))));

        let mut bad_schema = base_config(Archetype::P2p);
        bad_schema.schema_version = 99;
        assert!(matches!(run_scenario(&bad_schema), Err(ChainError::ConfigError(_))));

        let mut bad_route = base_config(Archetype::P2p);
        bad_route.route = Some(vec![0, 77]);
        assert!(matches!(run_scenario(&bad_route), Err(ChainError::ConfigError(_))));

        let mut server_in_p2p = base_config(Archetype::ClientServer);
        server_in_p2p.archetype = Archetype::P2p;
        assert!(matches!(run_scenario(&server_in_p2p), Err(ChainError::ConfigError(_))));

        let mut bad_attack = base_config(Archetype::P2p);
        bad_attack.attacks = vec![ScenarioAttack::MarkerTamper {
            product: "ghost".into(),
            at_handoff: 1,
        }];
        assert!(matches!(run_scenario(&bad_attack), Err(ChainError::ConfigError(_))));
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = base_config(Archetype::Hybrid);
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.nodes.len(), config.nodes.len());
        assert_eq!(back.archetype, config.archetype);
        let report_a = run_scenario(&config).unwrap();
        let report_b = run_scenario(&back).unwrap();
        assert_eq!(
            serde_json::to_string(&report_a.to_json()).unwrap(),
            serde_json::to_string(&report_b.to_json()).unwrap()
        );
    }
}
