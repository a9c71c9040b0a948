//! The supply-chain cyber world: peer nodes, a hash-chained block ledger
//! with round-robin consensus, and the distributed mutual-authentication
//! protocol.
//!
//! Every node keeps a full replica of the chain and an identical,
//! deterministic feature pipeline (the quantizer config travels in the
//! genesis block), so any verifier can recompute the hashed response of a
//! broadcast capture bundle and compare it against the on-chain reference
//! digest. Blocks commit when the accepting votes reach the configured
//! quorum; proposers rotate round-robin and simply rotate past a round that
//! fails to reach quorum. Logical time is an event counter; there is no
//! wall clock anywhere, which keeps whole scenario runs byte-reproducible.

pub mod scenario;

pub use scenario::{
    run_scenario, Archetype, EventRecord, NodeSpec, ProductSpec, ScenarioAttack, ScenarioConfig,
    ScenarioReport,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::authcore::{feature_digest, Feature, StoreError, SystemError};
use crate::features::{FeatureError, Pipeline};
use crate::optics::{CaptureSet, OpticsError};
use crate::surface::SurfaceError;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("no quorum: {votes} of {nodes} votes, needed {needed}")]
    NoQuorum { votes: u32, nodes: u32, needed: u32 },
    #[error("product {0:?} has no on-chain reference")]
    UnknownProduct(String),
    #[error("stale nonce {nonce} from node {from}")]
    StaleNonce { from: NodeId, nonce: u64 },
    #[error("config error: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type NodeId = u64;

/// Stakeholder role in the supply chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Manufacturer,
    Distributor,
    Retailer,
    Server,
}

/// Trust region a node operates in (hybrid scenarios).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    #[default]
    Trusted,
    Untrusted,
}

/// Ledger transaction kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    /// Shared pipeline configuration (genesis).
    Config,
    /// Reference digest enrollment for a product.
    Register,
    /// A local authentication event.
    Authenticate,
    /// A verifier vouching for a prover's verification.
    SignOff,
    /// A prover flagged as malicious.
    Flag,
}

/// One ledger transaction. `subject` names what the transaction is about
/// (product id, or the flagged node).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    pub actor: NodeId,
    pub subject: String,
    #[serde(with = "hex_array")]
    pub payload_digest: [u8; 32],
    pub nonce: u64,
    pub timestamp: u64,
}

impl Transaction {
    fn hash_into(&self, h: &mut Sha256) {
        h.update([match self.kind {
            TxKind::Config => 0u8,
            TxKind::Register => 1,
            TxKind::Authenticate => 2,
            TxKind::SignOff => 3,
            TxKind::Flag => 4,
        }]);
        h.update(self.actor.to_le_bytes());
        h.update((self.subject.len() as u32).to_le_bytes());
        h.update(self.subject.as_bytes());
        h.update(self.payload_digest);
        h.update(self.nonce.to_le_bytes());
        h.update(self.timestamp.to_le_bytes());
    }
}

mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let vec = hex::decode(&text).map_err(serde::de::Error::custom)?;
        vec.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

/// One hash-chained ledger block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    #[serde(with = "hex_array")]
    pub prev_digest: [u8; 32],
    pub transactions: Vec<Transaction>,
    pub proposer: NodeId,
    #[serde(with = "hex_array")]
    pub digest: [u8; 32],
}

impl Block {
    pub fn compute_digest(
        height: u64,
        prev_digest: &[u8; 32],
        proposer: NodeId,
        transactions: &[Transaction],
    ) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(height.to_le_bytes());
        h.update(prev_digest);
        h.update(proposer.to_le_bytes());
        h.update((transactions.len() as u32).to_le_bytes());
        for tx in transactions {
            tx.hash_into(&mut h);
        }
        h.finalize().into()
    }

    fn seal(height: u64, prev_digest: [u8; 32], proposer: NodeId, transactions: Vec<Transaction>) -> Self {
        let digest = Self::compute_digest(height, &prev_digest, proposer, &transactions);
        Self { height, prev_digest, transactions, proposer, digest }
    }
}

/// Consensus parameters: proposer rotation is fixed round-robin; `quorum`
/// is the accepting-vote fraction required to commit (> 0.5, honest
/// majority); mutual authentication runs every `mutual_auth_period` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub mutual_auth_period: u32,
    pub quorum: f64,
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.mutual_auth_period == 0 {
            return Err(ChainError::ConfigError("mutual_auth_period must be >= 1".into()));
        }
        if !(self.quorum > 0.5 && self.quorum <= 1.0) {
            return Err(ChainError::ConfigError(format!(
                "quorum {} must lie in (0.5, 1]",
                self.quorum
            )));
        }
        Ok(())
    }
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { mutual_auth_period: 1, quorum: 0.6 }
    }
}

/// A supply-chain participant: role, honesty, its local pipeline replica,
/// its chain replica, and the nonces it has already seen per sender.
#[derive(Debug, Clone)]
pub struct Node {
    pub node_id: NodeId,
    pub role: NodeRole,
    pub honest: bool,
    pub region: Region,
    pub pipeline: Pipeline,
    pub flagged: bool,
    chain: Vec<Block>,
    seen_nonces: BTreeSet<(NodeId, u64)>,
    next_nonce: u64,
}

impl Node {
    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn tip(&self) -> &Block {
        self.chain.last().expect("chain always has a genesis block")
    }

    /// Tamper hook for chain-integrity experiments.
    pub fn chain_mut(&mut self) -> &mut Vec<Block> {
        &mut self.chain
    }

    /// Latest on-chain reference digest registered for a product.
    pub fn reference_digest(&self, product_id: &str) -> Option<[u8; 32]> {
        self.chain
            .iter()
            .rev()
            .flat_map(|b| b.transactions.iter().rev())
            .find(|tx| tx.kind == TxKind::Register && tx.subject == product_id)
            .map(|tx| tx.payload_digest)
    }

    /// Recomputes the hashed response of a capture bundle with this node's
    /// local pipeline.
    pub fn recompute_digest(&self, captures: &CaptureSet) -> Result<[u8; 32], FeatureError> {
        let response = self.pipeline.response_from_captures(captures)?;
        Ok(feature_digest(&Feature::Response(response)))
    }
}

/// Recomputes every block digest and link; true iff the replica validates
/// from genesis.
pub fn verify_chain(node: &Node) -> bool {
    let chain = node.chain();
    let Some(genesis) = chain.first() else {
        return false;
    };
    if genesis.height != 0 || genesis.prev_digest != [0u8; 32] {
        return false;
    }
    let mut prev = [0u8; 32];
    for (i, block) in chain.iter().enumerate() {
        if block.height != i as u64 || block.prev_digest != prev {
            return false;
        }
        let recomputed =
            Block::compute_digest(block.height, &block.prev_digest, block.proposer, &block.transactions);
        if recomputed != block.digest {
            return false;
        }
        prev = block.digest;
    }
    true
}

/// Message and byte counters for the deterministic network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub mutual_auth_messages: u64,
    pub mutual_auth_bytes: u64,
    pub consensus_rounds: u64,
    pub no_quorum_rounds: u64,
}

/// What a message carries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MessageKind {
    /// The prover's (images, hashed response) pair.
    MutualAuthRequest { product_id: String },
    /// A verifier's mutual-authentication vote.
    MutualAuthVote { accept: bool },
    /// A proposed block during consensus.
    BlockProposal,
    /// A validator's consensus vote.
    ConsensusVote { accept: bool },
    /// A client's authentication query to the server, and its reply.
    StoreQuery,
    StoreReply { accept: bool },
}

impl MessageKind {
    fn is_mutual_auth(&self) -> bool {
        matches!(self, MessageKind::MutualAuthRequest { .. } | MessageKind::MutualAuthVote { .. })
    }
}

/// One delivered message. Nonces are unique per sender; honest receivers
/// reject duplicates, which is what defeats interface replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub from: NodeId,
    /// `None` broadcasts to every other node.
    pub to: Option<NodeId>,
    pub kind: MessageKind,
    /// Accounted payload size in bytes.
    pub payload_bytes: u64,
    pub nonce: u64,
    pub timestamp: u64,
}

/// Verdict of one mutual-authentication event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MutualAuthVerdict {
    pub product_id: String,
    pub prover: NodeId,
    pub accepted: bool,
    pub sign_offs: u32,
    pub flags: u32,
    pub verifiers: u32,
}

/// The deterministic message-passing network: nodes, the pending
/// transaction pool, and the consensus/rotation state.
#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub consensus: ConsensusConfig,
    pending: Vec<Transaction>,
    round_cursor: u64,
    clock: u64,
    /// Ticks added per message delivery.
    pub link_delay: u64,
    pub stats: NetStats,
}

impl Network {
    /// Builds a network whose nodes share one pipeline; the genesis block
    /// carries the pipeline config digest so every replica starts from the
    /// same root of trust.
    pub fn new(
        specs: Vec<(NodeId, NodeRole, bool, Region)>,
        pipeline: Pipeline,
        consensus: ConsensusConfig,
    ) -> Result<Self, ChainError> {
        consensus.validate()?;
        if specs.is_empty() {
            return Err(ChainError::ConfigError("network needs at least one node".into()));
        }
        let mut ids = BTreeSet::new();
        for (id, ..) in &specs {
            if !ids.insert(*id) {
                return Err(ChainError::ConfigError(format!("duplicate node id {id}")));
            }
        }
        let config_digest: [u8; 32] = Sha256::digest(
            serde_json::to_vec(&pipeline).expect("pipeline config serializes"),
        )
        .into();
        let genesis_tx = Transaction {
            kind: TxKind::Config,
            actor: 0,
            subject: "pipeline".into(),
            payload_digest: config_digest,
            nonce: 0,
            timestamp: 0,
        };
        let genesis = Block::seal(0, [0u8; 32], u64::MAX, vec![genesis_tx]);
        let nodes = specs
            .into_iter()
            .map(|(node_id, role, honest, region)| Node {
                node_id,
                role,
                honest,
                region,
                pipeline: pipeline.clone(),
                flagged: false,
                chain: vec![genesis.clone()],
                seen_nonces: BTreeSet::new(),
                next_nonce: 1,
            })
            .collect();
        Ok(Self {
            nodes,
            consensus,
            pending: Vec::new(),
            round_cursor: 0,
            clock: 0,
            link_delay: 1,
            stats: NetStats::default(),
        })
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.node_id == id)
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Queues a transaction for the next consensus round.
    pub fn submit(&mut self, tx: Transaction) {
        self.pending.push(tx);
    }

    fn fresh_nonce(&mut self, node_idx: usize) -> u64 {
        let node = &mut self.nodes[node_idx];
        let nonce = node.next_nonce;
        node.next_nonce += 1;
        nonce
    }

    /// Delivers one message with reliable, ordered semantics. Honest
    /// receivers reject a (sender, nonce) pair they have seen before;
    /// delivery advances the logical clock by the link delay per recipient
    /// and updates the traffic counters.
    pub(crate) fn send(&mut self, msg: Message) -> Result<(), ChainError> {
        let recipient_idxs: Vec<usize> = match msg.to {
            Some(to) => self
                .nodes
                .iter()
                .position(|n| n.node_id == to)
                .map(|i| vec![i])
                .ok_or_else(|| ChainError::ConfigError(format!("unknown recipient {to}")))?,
            None => (0..self.nodes.len())
                .filter(|&i| self.nodes[i].node_id != msg.from)
                .collect(),
        };
        let key = (msg.from, msg.nonce);
        if recipient_idxs
            .iter()
            .any(|&i| self.nodes[i].honest && self.nodes[i].seen_nonces.contains(&key))
        {
            return Err(ChainError::StaleNonce { from: msg.from, nonce: msg.nonce });
        }
        for &i in &recipient_idxs {
            self.nodes[i].seen_nonces.insert(key);
        }
        let recipients = recipient_idxs.len() as u64;
        self.stats.messages_sent += recipients;
        self.stats.bytes_sent += recipients * msg.payload_bytes;
        if msg.kind.is_mutual_auth() {
            self.stats.mutual_auth_messages += recipients;
            self.stats.mutual_auth_bytes += recipients * msg.payload_bytes;
        }
        self.clock += self.link_delay * recipients;
        Ok(())
    }

    fn quorum_needed(&self, voters: u32) -> u32 {
        (self.consensus.quorum * voters as f64).ceil() as u32
    }

    fn validate_block(node: &Node, candidate: &Block) -> bool {
        let tip = node.tip();
        if candidate.height != tip.height + 1 || candidate.prev_digest != tip.digest {
            return false;
        }
        let recomputed = Block::compute_digest(
            candidate.height,
            &candidate.prev_digest,
            candidate.proposer,
            &candidate.transactions,
        );
        recomputed == candidate.digest
    }

    /// One round-robin consensus round over the pending transactions.
    ///
    /// The proposer at the rotation cursor assembles a block; every node
    /// validates and votes (dishonest nodes invert their vote, and a
    /// dishonest proposer emits a corrupted block). The block commits to
    /// every replica iff accepting votes reach the quorum; otherwise the
    /// transactions stay pending and the next proposer takes over.
    pub fn run_consensus_round(&mut self) -> Result<Option<Block>, ChainError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let n = self.nodes.len();
        let proposer_idx = (self.round_cursor % n as u64) as usize;
        self.round_cursor += 1;
        self.stats.consensus_rounds += 1;
        self.clock += 1;

        let proposer = &self.nodes[proposer_idx];
        let mut candidate = Block::seal(
            proposer.tip().height + 1,
            proposer.tip().digest,
            proposer.node_id,
            self.pending.clone(),
        );
        if !proposer.honest {
            // A corrupted proposal: contents no longer match the seal.
            candidate.transactions[0].payload_digest[0] ^= 0xFF;
        }

        // Proposal broadcast to all other nodes.
        let tx_bytes: u64 = candidate
            .transactions
            .iter()
            .map(|tx| 64 + tx.subject.len() as u64)
            .sum();
        let proposer_id = candidate.proposer;
        let nonce = self.fresh_nonce(proposer_idx);
        let timestamp = self.clock;
        self.send(Message {
            from: proposer_id,
            to: None,
            kind: MessageKind::BlockProposal,
            payload_bytes: 96 + tx_bytes,
            nonce,
            timestamp,
        })?;

        let votes: Vec<(usize, bool)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(idx, node)| {
                let valid = Self::validate_block(node, &candidate);
                (idx, if node.honest { valid } else { !valid })
            })
            .collect();
        let accepting = votes.iter().filter(|(_, v)| *v).count() as u32;
        let needed = self.quorum_needed(n as u32);
        // Vote messages back to the proposer.
        for (idx, accept) in votes {
            if self.nodes[idx].node_id == proposer_id {
                continue;
            }
            let nonce = self.fresh_nonce(idx);
            let timestamp = self.clock;
            self.send(Message {
                from: self.nodes[idx].node_id,
                to: Some(proposer_id),
                kind: MessageKind::ConsensusVote { accept },
                payload_bytes: 40,
                nonce,
                timestamp,
            })?;
        }

        if accepting < needed {
            self.stats.no_quorum_rounds += 1;
            return Err(ChainError::NoQuorum { votes: accepting, nodes: n as u32, needed });
        }
        for node in &mut self.nodes {
            node.chain.push(candidate.clone());
        }
        self.pending.clear();
        Ok(Some(candidate))
    }

    /// Runs consensus rounds until the pending pool drains; rotation passes
    /// over failed proposers. Gives up after two full rotations without
    /// progress.
    pub fn settle(&mut self) -> Result<(), ChainError> {
        let mut failures = 0;
        while !self.pending.is_empty() {
            match self.run_consensus_round() {
                Ok(_) => failures = 0,
                Err(ChainError::NoQuorum { .. }) => {
                    failures += 1;
                    if failures >= 2 * self.nodes.len() {
                        return Err(ChainError::NoQuorum {
                            votes: 0,
                            nodes: self.nodes.len() as u32,
                            needed: self.quorum_needed(self.nodes.len() as u32),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// The mutual-authentication protocol for one product.
    ///
    /// The prover broadcasts its capture bundle together with its claimed
    /// hashed response. Every other node replays the shared pipeline on the
    /// broadcast images, compares the recomputed digest with the on-chain
    /// reference, and votes sign-off or flag (dishonest verifiers invert
    /// their vote). The verdict takes the quorum over the verifier votes;
    /// sign-off and flag transactions are queued for the ledger and a
    /// rejected prover is marked flagged.
    pub fn mutual_authenticate(
        &mut self,
        prover: NodeId,
        captures: &CaptureSet,
        product_id: &str,
    ) -> Result<MutualAuthVerdict, ChainError> {
        let nonce = {
            let idx = self
                .nodes
                .iter()
                .position(|n| n.node_id == prover)
                .ok_or_else(|| ChainError::ConfigError(format!("unknown prover {prover}")))?;
            self.fresh_nonce(idx)
        };
        self.mutual_authenticate_with_nonce(prover, captures, product_id, nonce)
    }

    /// Same as [`Network::mutual_authenticate`] with an explicit broadcast
    /// nonce; rebroadcasting a previously used nonce is rejected by every
    /// honest receiver.
    pub fn mutual_authenticate_with_nonce(
        &mut self,
        prover: NodeId,
        captures: &CaptureSet,
        product_id: &str,
        nonce: u64,
    ) -> Result<MutualAuthVerdict, ChainError> {
        let prover_idx = self
            .nodes
            .iter()
            .position(|n| n.node_id == prover)
            .ok_or_else(|| ChainError::ConfigError(format!("unknown prover {prover}")))?;

        let reference = self.nodes[prover_idx]
            .reference_digest(product_id)
            .ok_or_else(|| ChainError::UnknownProduct(product_id.to_string()))?;

        // Broadcast of the (images, hashed response) pair; honest receivers
        // reject a rebroadcast nonce.
        self.send(Message {
            from: prover,
            to: None,
            kind: MessageKind::MutualAuthRequest { product_id: product_id.to_string() },
            payload_bytes: captures.encoded_len() as u64 + 32,
            nonce,
            timestamp: self.clock,
        })?;

        let timestamp = self.tick();
        let mut sign_offs = 0u32;
        let mut flags = 0u32;
        let mut first_flagger = None;
        let mut signoff_txs = Vec::new();
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].node_id == prover {
                continue;
            }
            let recomputed = self.nodes[idx].recompute_digest(captures);
            let genuine = matches!(recomputed, Ok(d) if d == reference);
            let vote = if self.nodes[idx].honest { genuine } else { !genuine };
            let verifier = self.nodes[idx].node_id;
            // Vote message back to the prover.
            let vote_nonce = self.fresh_nonce(idx);
            let vote_ts = self.clock;
            self.send(Message {
                from: verifier,
                to: Some(prover),
                kind: MessageKind::MutualAuthVote { accept: vote },
                payload_bytes: 40,
                nonce: vote_nonce,
                timestamp: vote_ts,
            })?;
            if vote {
                sign_offs += 1;
                signoff_txs.push(Transaction {
                    kind: TxKind::SignOff,
                    actor: verifier,
                    subject: product_id.to_string(),
                    payload_digest: recomputed.unwrap_or([0u8; 32]),
                    nonce,
                    timestamp,
                });
            } else {
                flags += 1;
                first_flagger.get_or_insert(verifier);
            }
        }
        let verifiers = sign_offs + flags;
        let accepted = sign_offs >= self.quorum_needed(verifiers);
        if accepted {
            for tx in signoff_txs {
                self.submit(tx);
            }
        } else {
            // The consensus-set outcome: one flag transaction, attributed
            // to the first dissenting verifier.
            if let Some(node) = self.node_mut(prover) {
                node.flagged = true;
            }
            self.submit(Transaction {
                kind: TxKind::Flag,
                actor: first_flagger.unwrap_or(prover),
                subject: format!("node:{prover}"),
                payload_digest: reference,
                nonce,
                timestamp,
            });
        }
        self.settle()?;
        Ok(MutualAuthVerdict {
            product_id: product_id.to_string(),
            prover,
            accepted,
            sign_offs,
            flags,
            verifiers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{acquire, AcquisitionPlan, EnvironmentModel};
    use crate::surface::{generate_surface, SurfaceParams};

    fn simple_network(honest_mask: &[bool]) -> Network {
        let specs: Vec<_> = honest_mask
            .iter()
            .enumerate()
            .map(|(i, &honest)| {
                let role = match i {
                    0 => NodeRole::Manufacturer,
                    1 => NodeRole::Distributor,
                    _ => NodeRole::Retailer,
                };
                (i as NodeId, role, honest, Region::Untrusted)
            })
            .collect();
        Network::new(specs, Pipeline::default(), ConsensusConfig::default()).unwrap()
    }

    fn tx(actor: NodeId, subject: &str, ts: u64) -> Transaction {
        Transaction {
            kind: TxKind::Authenticate,
            actor,
            subject: subject.into(),
            payload_digest: [9u8; 32],
            nonce: ts,
            timestamp: ts,
        }
    }

    fn capture_of(surface_seed: u64, plan_seed: u64) -> CaptureSet {
        let nm = generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, surface_seed)).unwrap();
        acquire(&nm, &AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), plan_seed))
            .unwrap()
    }

    fn register_product(net: &mut Network, product: &str, surface_seed: u64) {
        let captures = capture_of(surface_seed, 1000 + surface_seed);
        let digest = net.nodes[0].recompute_digest(&captures).unwrap();
        let ts = net.tick();
        net.submit(Transaction {
            kind: TxKind::Register,
            actor: 0,
            subject: product.into(),
            payload_digest: digest,
            nonce: ts,
            timestamp: ts,
        });
        net.settle().unwrap();
    }

    #[test]
    fn honest_nodes_commit_every_round_and_replicas_agree() {
        let mut net = simple_network(&[true, true, true, true]);
        for i in 0..5 {
            net.submit(tx(i % 4, &format!("p{i}"), i));
            let block = net.run_consensus_round().unwrap().unwrap();
            assert_eq!(block.height, i + 1);
        }
        let reference = net.nodes[0].chain().to_vec();
        for node in &net.nodes {
            assert_eq!(node.chain(), reference.as_slice());
            assert!(verify_chain(node));
        }
        assert_eq!(net.stats.no_quorum_rounds, 0);
    }

    #[test]
    fn dishonest_proposer_is_outvoted_and_rotation_moves_on() {
        // Node 0 proposes first and is dishonest: its corrupted block gets
        // three honest votes against, misses quorum, and the next proposer
        // commits the same transactions.
        let mut net = simple_network(&[false, true, true, true]);
        net.submit(tx(1, "p", 1));
        match net.run_consensus_round() {
            Err(ChainError::NoQuorum { votes, needed, .. }) => {
                assert_eq!(votes, 1, "only the dishonest proposer approves");
                assert!(votes < needed);
            }
            other => panic!("expected NoQuorum, got {other:?}"),
        }
        assert_eq!(net.pending_len(), 1, "transactions are retried");
        let block = net.run_consensus_round().unwrap().unwrap();
        assert_eq!(block.proposer, 1, "rotation moved to the next proposer");
        assert_eq!(block.height, 1);
        for node in &net.nodes {
            assert_eq!(node.tip().height, 1);
        }
    }

    #[test]
    fn dishonest_supermajority_breaks_the_assumption() {
        // 3 of 4 dishonest: the honest-majority assumption is violated and
        // even a valid block fails (inverted votes), while a corrupted one
        // could pass; the design quorum arithmetic documents the boundary.
        let mut net = simple_network(&[true, false, false, false]);
        net.round_cursor = 0; // proposer 0 is honest, emits a valid block
        net.submit(tx(0, "p", 1));
        let result = net.run_consensus_round();
        assert!(matches!(result, Err(ChainError::NoQuorum { votes: 1, .. })));
    }

    #[test]
    fn empty_pool_is_a_no_op() {
        let mut net = simple_network(&[true, true, true]);
        assert!(net.run_consensus_round().unwrap().is_none());
        assert_eq!(net.stats.consensus_rounds, 0);
    }

    #[test]
    fn mutual_authentication_signs_off_genuine_product() {
        let mut net = simple_network(&[true; 4]);
        register_product(&mut net, "SKU", 7);
        let captures = capture_of(7, 2000);
        let verdict = net.mutual_authenticate(1, &captures, "SKU").unwrap();
        assert!(verdict.accepted);
        assert_eq!(verdict.sign_offs, 3);
        assert_eq!(verdict.flags, 0);
        assert!(!net.node(1).unwrap().flagged);
        // Sign-offs are on the ledger of every replica.
        for node in &net.nodes {
            let signoffs = node
                .chain()
                .iter()
                .flat_map(|b| &b.transactions)
                .filter(|t| t.kind == TxKind::SignOff)
                .count();
            assert_eq!(signoffs, 3);
        }
    }

    #[test]
    fn mutual_authentication_flags_wrong_surface() {
        let mut net = simple_network(&[true; 4]);
        register_product(&mut net, "SKU", 7);
        let counterfeit = capture_of(8, 2000);
        let verdict = net.mutual_authenticate(1, &counterfeit, "SKU").unwrap();
        assert!(!verdict.accepted);
        assert_eq!(verdict.flags, 3);
        assert!(net.node(1).unwrap().flagged);
        // One committed flag per failed verification.
        let flags = net.nodes[0]
            .chain()
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|t| t.kind == TxKind::Flag && t.subject == "node:1")
            .count();
        assert_eq!(flags, 1);
    }

    /// Oracle: vote counting under the honest-majority assumption. With 7
    /// verifiers of which 2 invert their votes, 5 honest votes still carry
    /// the correct verdict both ways.
    #[test]
    fn two_inverted_verifiers_cannot_flip_the_verdict() {
        let mut honest = vec![true; 8];
        honest[2] = false;
        honest[5] = false;
        let mut net = simple_network(&honest);
        net.consensus.quorum = 5.0 / 7.0;
        register_product(&mut net, "SKU", 7);

        let genuine = net.mutual_authenticate(0, &capture_of(7, 3000), "SKU").unwrap();
        assert!(genuine.accepted);
        assert_eq!((genuine.sign_offs, genuine.flags), (5, 2));

        let fake = net.mutual_authenticate(0, &capture_of(9, 3001), "SKU").unwrap();
        assert!(!fake.accepted);
        assert_eq!((fake.sign_offs, fake.flags), (2, 5));
    }

    #[test]
    fn unknown_product_rejected() {
        let mut net = simple_network(&[true; 4]);
        let captures = capture_of(7, 2000);
        assert!(matches!(
            net.mutual_authenticate(1, &captures, "ghost"),
            Err(ChainError::UnknownProduct(_))
        ));
    }

    #[test]
    fn rebroadcast_with_same_nonce_is_stale() {
        let mut net = simple_network(&[true; 4]);
        register_product(&mut net, "SKU", 7);
        let captures = capture_of(7, 2000);
        net.mutual_authenticate_with_nonce(1, &captures, "SKU", 424242).unwrap();
        assert!(matches!(
            net.mutual_authenticate_with_nonce(1, &captures, "SKU", 424242),
            Err(ChainError::StaleNonce { from: 1, nonce: 424242 })
        ));
    }

    #[test]
    fn tampering_one_byte_invalidates_the_chain_from_that_block() {
        let mut net = simple_network(&[true; 4]);
        register_product(&mut net, "SKU", 7);
        net.mutual_authenticate(1, &capture_of(7, 2000), "SKU").unwrap();
        assert!(verify_chain(&net.nodes[2]));
        net.nodes[2].chain_mut()[1].transactions[0].payload_digest[3] ^= 1;
        assert!(!verify_chain(&net.nodes[2]));
        // Other replicas are untouched.
        assert!(verify_chain(&net.nodes[0]));
    }

    #[test]
    fn bandwidth_scales_linearly_in_node_count() {
        let mut per_n = Vec::new();
        for n in [4usize, 8] {
            let mut net = simple_network(&vec![true; n]);
            register_product(&mut net, "SKU", 7);
            let before = net.stats.mutual_auth_bytes;
            net.mutual_authenticate(1, &capture_of(7, 2000), "SKU").unwrap();
            per_n.push(net.stats.mutual_auth_bytes - before);
        }
        // One broadcast to N-1 recipients: 3 vs 7 recipient shares.
        assert_eq!(per_n[1] * 3, per_n[0] * 7);
    }
}
