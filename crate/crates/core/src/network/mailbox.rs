use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::Exchange;

/// Something an agent can put on the wire. Its size is counted in shared
/// scalar components.
pub trait Payload: Clone {
    fn components(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MailboxEntry<P> {
    pub payload: P,
    /// Iteration of the delivery that wrote this entry; `None` for the value
    /// agreed on before the first iteration.
    pub received_at: Option<usize>,
}

/// Last-received value per `(receiver, sender)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Mailbox<P> {
    entries: BTreeMap<(usize, usize), MailboxEntry<P>>,
}

impl<P> Default for Mailbox<P> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<P: Payload> Mailbox<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a pre-agreed value without logging a message.
    pub fn seed(&mut self, receiver: usize, sender: usize, payload: P) {
        self.entries.insert(
            (receiver, sender),
            MailboxEntry {
                payload,
                received_at: None,
            },
        );
    }

    pub fn get(&self, receiver: usize, sender: usize) -> Option<&MailboxEntry<P>> {
        self.entries.get(&(receiver, sender))
    }

    /// Age of the entry at iteration `k`, counting the initial value as
    /// delivered at iteration 0.
    pub fn staleness(&self, receiver: usize, sender: usize, k: usize) -> Option<usize> {
        self.get(receiver, sender)
            .map(|e| k - e.received_at.unwrap_or(0).min(k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub sender: usize,
    pub receiver: usize,
    pub components: usize,
}

/// Every message sent, grouped by iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageLog {
    iterations: Vec<Vec<MessageRecord>>,
    total_messages: usize,
    total_components: usize,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, k: usize, record: MessageRecord) {
        if self.iterations.len() <= k {
            self.iterations.resize_with(k + 1, Vec::new);
        }
        self.total_messages += 1;
        self.total_components += record.components;
        self.iterations[k].push(record);
    }

    /// Makes sure iteration `k` has a (possibly empty) slot.
    pub fn open_iteration(&mut self, k: usize) {
        if self.iterations.len() <= k {
            self.iterations.resize_with(k + 1, Vec::new);
        }
    }

    pub fn iterations(&self) -> &[Vec<MessageRecord>] {
        &self.iterations
    }

    pub fn total_messages(&self) -> usize {
        self.total_messages
    }

    pub fn total_components(&self) -> usize {
        self.total_components
    }

    /// Copy of the log restricted to iterations `0..k`.
    pub fn truncated(&self, k: usize) -> MessageLog {
        let mut out = MessageLog::new();
        for (it, records) in self.iterations.iter().take(k).enumerate() {
            out.open_iteration(it);
            for &r in records {
                out.push(it, r);
            }
        }
        out
    }

    /// CSV with header `iter,sender,receiver,components`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "sender", "receiver", "components"])?;
        for (k, records) in self.iterations.iter().enumerate() {
            for r in records {
                w.write_record([
                    k.to_string(),
                    r.sender.to_string(),
                    r.receiver.to_string(),
                    r.components.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Delivers every exchange of iteration `k`: the receiver's entry for the
/// sender is overwritten with `payload_for(sender, receiver)`. Entries not
/// touched keep their previous value.
pub fn deliver<P, F>(
    k: usize,
    exchanges: &BTreeSet<Exchange>,
    mut payload_for: F,
    mailbox: &mut Mailbox<P>,
    log: &mut MessageLog,
) where
    P: Payload,
    F: FnMut(usize, usize) -> P,
{
    log.open_iteration(k);
    for &(sender, receiver) in exchanges {
        let payload = payload_for(sender, receiver);
        log.push(
            k,
            MessageRecord {
                sender,
                receiver,
                components: payload.components(),
            },
        );
        mailbox.entries.insert(
            (receiver, sender),
            MailboxEntry {
                payload,
                received_at: Some(k),
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub total_messages: usize,
    pub total_components: usize,
    /// `(messages, components)` per iteration.
    pub per_iteration: Vec<(usize, usize)>,
}

pub fn message_stats(log: &MessageLog) -> MessageStats {
    MessageStats {
        total_messages: log.total_messages(),
        total_components: log.total_components(),
        per_iteration: log
            .iterations()
            .iter()
            .map(|rs| (rs.len(), rs.iter().map(|r| r.components).sum()))
            .collect(),
    }
}
