//! Simulated message transport and public document store. The transport
//! carries opaque sealed bytes between named endpoints with a configurable
//! block delay and drop rate; the doc store is instant and unencrypted.
//! Every send leaves a transcript line, including dropped ones.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{hash, Address, Hash32, SimRng};
use crate::BlockNumber;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("no endpoint at {0}")]
    UnknownEndpoint(String),
    #[error("endpoint {0} already exists")]
    EndpointTaken(String),
}

/// A sealed message waiting at its destination.
#[derive(Clone, PartialEq, Debug)]
pub struct Delivery {
    pub url: String,
    pub to: Address,
    pub from: Address,
    pub sealed: Vec<u8>,
    pub sent_block: BlockNumber,
    pub seq: u64,
}

/// Transcript line for one send attempt. The payload appears only as a
/// digest: the wire never sees plaintext.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct WireRecord {
    pub block: BlockNumber,
    pub from: Address,
    pub url: String,
    pub bytes: usize,
    pub digest: Hash32,
    pub dropped: bool,
}

pub struct Transport {
    delay_blocks: u64,
    drop_rate: f64,
    endpoints: BTreeMap<String, Address>,
    queue: BTreeMap<BlockNumber, Vec<Delivery>>,
    transcript: Vec<WireRecord>,
    seq: u64,
}

impl Transport {
    pub fn new(delay_blocks: u64, drop_rate: f64) -> Transport {
        Transport {
            delay_blocks,
            drop_rate,
            endpoints: BTreeMap::new(),
            queue: BTreeMap::new(),
            transcript: Vec::new(),
            seq: 0,
        }
    }

    pub fn register_endpoint(&mut self, url: &str, owner: Address) -> Result<(), NetError> {
        if self.endpoints.contains_key(url) {
            return Err(NetError::EndpointTaken(url.to_string()));
        }
        self.endpoints.insert(url.to_string(), owner);
        Ok(())
    }

    pub fn endpoint_owner(&self, url: &str) -> Option<Address> {
        self.endpoints.get(url).copied()
    }

    /// Queue a sealed message. The drop draw touches the rng only when the
    /// transport is configured lossy, so lossless runs stay reproducible
    /// independent of the rate.
    pub fn send(
        &mut self,
        now: BlockNumber,
        from: Address,
        url: &str,
        sealed: Vec<u8>,
        rng: &mut SimRng,
    ) -> Result<(), NetError> {
        let to = self
            .endpoint_owner(url)
            .ok_or_else(|| NetError::UnknownEndpoint(url.to_string()))?;
        let dropped = self.drop_rate > 0.0 && rng.gen::<f64>() < self.drop_rate;
        self.transcript.push(WireRecord {
            block: now,
            from,
            url: url.to_string(),
            bytes: sealed.len(),
            digest: hash(&sealed),
            dropped,
        });
        if dropped {
            return Ok(());
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue
            .entry(now + self.delay_blocks)
            .or_default()
            .push(Delivery {
                url: url.to_string(),
                to,
                from,
                sealed,
                sent_block: now,
                seq,
            });
        Ok(())
    }

    /// Remove and return everything due strictly before `now`, oldest
    /// first. A zero-delay message sent during block b is therefore
    /// delivered at the start of block b + 1.
    pub fn drain_due(&mut self, now: BlockNumber) -> Vec<Delivery> {
        let mut due = Vec::new();
        let ready: Vec<BlockNumber> = self
            .queue
            .range(..now)
            .map(|(&block, _)| block)
            .collect();
        for block in ready {
            due.extend(self.queue.remove(&block).unwrap());
        }
        due.sort_by_key(|d| d.seq);
        due
    }

    pub fn pending(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }

    pub fn transcript(&self) -> &[WireRecord] {
        &self.transcript
    }
}

/// Public document store: named blobs anyone can fetch, written in place.
#[derive(Default)]
pub struct DocStore {
    docs: BTreeMap<String, Vec<u8>>,
    writes: Vec<(BlockNumber, String)>,
}

impl DocStore {
    pub fn publish(&mut self, now: BlockNumber, url: &str, bytes: Vec<u8>) {
        self.writes.push((now, url.to_string()));
        self.docs.insert(url.to_string(), bytes);
    }

    pub fn fetch(&self, url: &str) -> Option<&[u8]> {
        self.docs.get(url).map(Vec::as_slice)
    }

    pub fn writes(&self) -> &[(BlockNumber, String)] {
        &self.writes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{open_message, rng_from_seed, seal_message, SigningKeyPair};

    fn addr(n: u8) -> Address {
        Address([n; 20])
    }

    #[test]
    fn delivery_happens_after_the_configured_delay() {
        let mut rng = rng_from_seed(1);
        let mut net = Transport::new(2, 0.0);
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        net.send(5, addr(1), "msg://bob", vec![1, 2, 3], &mut rng)
            .unwrap();
        assert!(net.drain_due(6).is_empty());
        assert!(net.drain_due(7).is_empty());
        let got = net.drain_due(8);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].to, addr(2));
        assert_eq!(got[0].sealed, vec![1, 2, 3]);
        // Drained messages do not reappear.
        assert!(net.drain_due(9).is_empty());
    }

    #[test]
    fn zero_delay_lands_the_next_block() {
        let mut rng = rng_from_seed(1);
        let mut net = Transport::new(0, 0.0);
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        net.send(5, addr(1), "msg://bob", vec![9], &mut rng).unwrap();
        assert!(net.drain_due(5).is_empty());
        assert_eq!(net.drain_due(6).len(), 1);
    }

    #[test]
    fn deliveries_preserve_send_order() {
        let mut rng = rng_from_seed(1);
        let mut net = Transport::new(0, 0.0);
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        for i in 0..10u8 {
            net.send(1, addr(1), "msg://bob", vec![i], &mut rng).unwrap();
        }
        let got = net.drain_due(2);
        let order: Vec<u8> = got.iter().map(|d| d.sealed[0]).collect();
        assert_eq!(order, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn unknown_endpoints_are_refused_and_urls_are_unique() {
        let mut rng = rng_from_seed(1);
        let mut net = Transport::new(0, 0.0);
        assert_eq!(
            net.send(0, addr(1), "msg://ghost", vec![], &mut rng),
            Err(NetError::UnknownEndpoint("msg://ghost".into()))
        );
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        assert_eq!(
            net.register_endpoint("msg://bob", addr(3)),
            Err(NetError::EndpointTaken("msg://bob".into()))
        );
    }

    #[test]
    fn drop_rate_one_drops_everything_but_still_transcribes() {
        let mut rng = rng_from_seed(1);
        let mut net = Transport::new(0, 1.0);
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        for _ in 0..5 {
            net.send(0, addr(1), "msg://bob", vec![7], &mut rng).unwrap();
        }
        assert_eq!(net.drain_due(10).len(), 0);
        assert_eq!(net.transcript().len(), 5);
        assert!(net.transcript().iter().all(|r| r.dropped));
    }

    #[test]
    fn lossless_sends_never_touch_the_rng() {
        let mut rng_a = rng_from_seed(42);
        let mut rng_b = rng_from_seed(42);
        let mut net = Transport::new(0, 0.0);
        net.register_endpoint("msg://bob", addr(2)).unwrap();
        for _ in 0..20 {
            net.send(0, addr(1), "msg://bob", vec![1], &mut rng_a).unwrap();
        }
        use rand::RngCore;
        assert_eq!(rng_a.next_u64(), rng_b.next_u64());
    }

    /// What the wire carries is opaque: the transcript digest reveals
    /// nothing an eavesdropper could decrypt, and only the addressee's key
    /// opens the payload.
    #[test]
    fn transcript_payloads_stay_confidential()
    {
        let mut rng = rng_from_seed(9);
        let alice = SigningKeyPair::generate(&mut rng);
        let bob = SigningKeyPair::generate(&mut rng);
        let eve = SigningKeyPair::generate(&mut rng);
        let secret = b"the records themselves";
        let sealed = seal_message(&alice, &bob.public(), secret, &mut rng).unwrap();

        let mut net = Transport::new(0, 0.0);
        net.register_endpoint("msg://bob", bob.address()).unwrap();
        net.send(0, alice.address(), "msg://bob", sealed, &mut rng)
            .unwrap();

        let record = &net.transcript()[0];
        assert_eq!(record.digest.as_bytes().len(), 32);

        let delivered = net.drain_due(1);
        let sealed = &delivered[0].sealed;
        // The sealed bytes never contain the plaintext.
        assert!(!sealed
            .windows(secret.len())
            .any(|w| w == secret.as_slice()));
        assert!(open_message(&eve, sealed).is_err());
        let (payload, sender) = open_message(&bob, sealed).unwrap();
        assert_eq!(payload, secret);
        assert_eq!(sender, alice.public());
    }

    #[test]
    fn doc_store_overwrites_in_place() {
        let mut docs = DocStore::default();
        assert!(docs.fetch("doc://a").is_none());
        docs.publish(1, "doc://a", vec![1]);
        docs.publish(2, "doc://a", vec![2]);
        assert_eq!(docs.fetch("doc://a"), Some(&[2u8][..]));
        assert_eq!(docs.writes().len(), 2);
    }
}
