//! Hash-chained append-only audit ledger.
//!
//! Every entry digests its own fields together with the previous entry's
//! digest, so modifying, reordering, or dropping an interior entry breaks
//! the chain. Truncation of the tail is caught separately by comparing the
//! entry count against the monotone append counter.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// One immutable ledger line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub action: String,
    pub actor: String,
    #[serde(serialize_with = "crate::authcore::hex_bytes")]
    pub payload_digest: [u8; 32],
    #[serde(serialize_with = "crate::authcore::hex_bytes")]
    pub prev_digest: [u8; 32],
    #[serde(serialize_with = "crate::authcore::hex_bytes")]
    pub entry_digest: [u8; 32],
}

impl AuditEntry {
    /// Digest over `seq || action || actor || payload digest || prev
    /// digest`, with length-prefixed strings.
    pub fn compute_digest(
        seq: u64,
        action: &str,
        actor: &str,
        payload_digest: &[u8; 32],
        prev_digest: &[u8; 32],
    ) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(seq.to_le_bytes());
        h.update((action.len() as u32).to_le_bytes());
        h.update(action.as_bytes());
        h.update((actor.len() as u32).to_le_bytes());
        h.update(actor.as_bytes());
        h.update(payload_digest);
        h.update(prev_digest);
        h.finalize().into()
    }
}

/// Append-only ledger with tamper-evident chaining.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLedger {
    entries: Vec<AuditEntry>,
    /// Total appends ever made; survives (and exposes) tail truncation.
    appended_total: u64,
}

/// Outcome of an audit verification pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AuditVerdict {
    /// Every present entry recomputes and chains to its predecessor.
    pub chain_intact: bool,
    /// The number of present entries matches the recorded append counter.
    pub length_matches: bool,
}

impl AuditVerdict {
    pub fn ok(&self) -> bool {
        self.chain_intact && self.length_matches
    }
}

impl AuditLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one entry and returns its sequence number.
    pub fn append(&mut self, action: &str, actor: &str, payload_digest: [u8; 32]) -> u64 {
        let seq = self.appended_total;
        let prev_digest =
            self.entries.last().map(|e| e.entry_digest).unwrap_or([0u8; 32]);
        let entry_digest =
            AuditEntry::compute_digest(seq, action, actor, &payload_digest, &prev_digest);
        self.entries.push(AuditEntry {
            seq,
            action: action.to_string(),
            actor: actor.to_string(),
            payload_digest,
            prev_digest,
            entry_digest,
        });
        self.appended_total += 1;
        seq
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    /// Mutable access for tamper experiments; honest code never needs this.
    pub fn entries_mut(&mut self) -> &mut Vec<AuditEntry> {
        &mut self.entries
    }

    pub fn appended_total(&self) -> u64 {
        self.appended_total
    }

    pub(crate) fn restore(entries: Vec<AuditEntry>, appended_total: u64) -> Self {
        Self { entries, appended_total }
    }

    /// Recomputes every digest and checks the chain end to end.
    pub fn verify(&self) -> AuditVerdict {
        let mut prev = [0u8; 32];
        let mut chain_intact = true;
        for (i, e) in self.entries.iter().enumerate() {
            let expected = AuditEntry::compute_digest(
                e.seq,
                &e.action,
                &e.actor,
                &e.payload_digest,
                &e.prev_digest,
            );
            if e.seq != i as u64
                || e.prev_digest != prev
                || e.entry_digest != expected
            {
                chain_intact = false;
                break;
            }
            prev = e.entry_digest;
        }
        AuditVerdict {
            chain_intact,
            length_matches: self.entries.len() as u64 == self.appended_total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_with(n: usize) -> AuditLedger {
        let mut ledger = AuditLedger::new();
        for i in 0..n {
            ledger.append("register", &format!("actor{i}"), [i as u8; 32]);
        }
        ledger
    }

    #[test]
    fn untouched_ledger_verifies() {
        let ledger = ledger_with(5);
        let verdict = ledger.verify();
        assert!(verdict.chain_intact && verdict.length_matches && verdict.ok());
    }

    #[test]
    fn mutated_payload_breaks_chain() {
        let mut ledger = ledger_with(5);
        ledger.entries_mut()[2].payload_digest[0] ^= 1;
        assert!(!ledger.verify().chain_intact);
    }

    #[test]
    fn rewritten_entry_with_recomputed_digest_still_breaks_chain() {
        let mut ledger = ledger_with(5);
        let e = &mut ledger.entries_mut()[2];
        e.actor = "mallory".into();
        e.entry_digest =
            AuditEntry::compute_digest(e.seq, &e.action, &e.actor, &e.payload_digest, &e.prev_digest);
        // Entry 3 still chains to the old digest.
        assert!(!ledger.verify().chain_intact);
    }

    #[test]
    fn truncation_keeps_prefix_valid_but_flags_length() {
        let mut ledger = ledger_with(5);
        ledger.entries_mut().pop();
        let verdict = ledger.verify();
        assert!(verdict.chain_intact);
        assert!(!verdict.length_matches);
        assert!(!verdict.ok());
    }

    #[test]
    fn sequence_numbers_are_contiguous() {
        let ledger = ledger_with(3);
        let seqs: Vec<u64> = ledger.entries().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }
}
