//! Line/ring aggregation of the `Z`-update sums.
//!
//! Block 1 sends its contribution to block 2, every block adds its own and
//! forwards, and block N finalizes and broadcasts. The association order is
//! fixed to block index order, so the result is bit-identical to the direct
//! left-to-right sum regardless of thread scheduling.

use std::sync::mpsc;
use std::thread;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingError {
    #[error("ring protocol violation: {0}")]
    Protocol(String),
    #[error("contribution lengths or weights are inconsistent")]
    Shape,
}

/// Running `(sum of contributions, sum of weights)` carried along the ring.
#[derive(Clone, Debug, PartialEq)]
pub struct Partial {
    pub numerator: Vec<f64>,
    pub denominator: f64,
}

impl Partial {
    pub fn start(contribution: Vec<f64>, weight: f64) -> Self {
        Self {
            numerator: contribution,
            denominator: weight,
        }
    }

    pub fn absorb(&mut self, contribution: &[f64], weight: f64) {
        for (acc, c) in self.numerator.iter_mut().zip(contribution) {
            *acc += c;
        }
        self.denominator += weight;
    }

    /// Fold of one hop: start the sum at the first block, absorb afterwards.
    pub fn hop(prev: Option<Partial>, contribution: Vec<f64>, weight: f64) -> Partial {
        match prev {
            None => Partial::start(contribution, weight),
            Some(mut p) => {
                p.absorb(&contribution, weight);
                p
            }
        }
    }
}

/// A ring message. `k` and `from` let receivers detect lost, duplicated or
/// reordered traffic.
#[derive(Clone, Debug)]
pub struct Envelope<T> {
    pub k: usize,
    pub from: usize,
    pub payload: T,
}

pub(crate) fn expect<T>(
    rx: &mpsc::Receiver<Envelope<T>>,
    k: usize,
    from: usize,
    what: &str,
) -> Result<T, RingError> {
    let msg = rx
        .recv()
        .map_err(|_| RingError::Protocol(format!("{what} channel closed at iteration {k}")))?;
    if msg.k != k || msg.from != from {
        return Err(RingError::Protocol(format!(
            "{what}: expected message ({k}, from {from}), got ({}, from {})",
            msg.k, msg.from
        )));
    }
    Ok(msg.payload)
}

/// Result of a standalone ring pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RingOutcome {
    pub numerator: Vec<f64>,
    pub denominator: f64,
    /// Forward hops plus broadcast messages.
    pub messages: usize,
}

enum RingMsg {
    Forward(Partial),
    Final(Partial),
}

/// Runs one aggregation pass with one thread per block, communicating only
/// through channels. Every block must end up holding the same final sums.
pub fn ring_aggregate(contributions: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<RingOutcome, RingError> {
    let n = contributions.len();
    if n == 0 || weights.len() != n {
        return Err(RingError::Shape);
    }
    let width = contributions[0].len();
    if contributions.iter().any(|c| c.len() != width) {
        return Err(RingError::Shape);
    }

    let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Envelope<RingMsg>>()).unzip();

    let results: Vec<Result<(Partial, usize), RingError>> = thread::scope(|s| {
        let handles: Vec<_> = contributions
            .into_iter()
            .zip(weights)
            .zip(rxs)
            .enumerate()
            .map(|(i, ((contribution, weight), rx))| {
                let next = txs.get(i + 1).cloned();
                let everyone = if i + 1 == n { txs.clone() } else { Vec::new() };
                s.spawn(move || -> Result<(Partial, usize), RingError> {
                    let mut sent = 0;
                    let prev = if i == 0 {
                        None
                    } else {
                        match expect(&rx, 0, i - 1, "forward")? {
                            RingMsg::Forward(p) => Some(p),
                            RingMsg::Final(_) => {
                                return Err(RingError::Protocol("broadcast before forward".into()))
                            }
                        }
                    };
                    let partial = Partial::hop(prev, contribution, weight);
                    if let Some(next) = next {
                        next.send(Envelope {
                            k: 0,
                            from: i,
                            payload: RingMsg::Forward(partial),
                        })
                        .map_err(|_| RingError::Protocol("successor hung up".into()))?;
                        sent += 1;
                        match expect(&rx, 0, n - 1, "broadcast")? {
                            RingMsg::Final(p) => Ok((p, sent)),
                            RingMsg::Forward(_) => Err(RingError::Protocol("duplicate forward".into())),
                        }
                    } else {
                        for (j, tx) in everyone.iter().enumerate().take(n - 1) {
                            tx.send(Envelope {
                                k: 0,
                                from: i,
                                payload: RingMsg::Final(partial.clone()),
                            })
                            .map_err(|_| RingError::Protocol(format!("block {j} hung up")))?;
                            sent += 1;
                        }
                        Ok((partial, sent))
                    }
                })
            })
            .collect();
        drop(txs);
        handles
            .into_iter()
            .map(|h| h.join().expect("ring worker panicked"))
            .collect()
    });

    let mut messages = 0;
    let mut finals = Vec::with_capacity(n);
    for r in results {
        let (p, sent) = r?;
        messages += sent;
        finals.push(p);
    }
    if finals.iter().any(|p| p != &finals[n - 1]) {
        return Err(RingError::Protocol("blocks disagree on the final sums".into()));
    }
    let last = finals.pop().expect("at least one block");
    Ok(RingOutcome {
        numerator: last.numerator,
        denominator: last.denominator,
        messages,
    })
}
