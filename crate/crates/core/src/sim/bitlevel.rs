//! Literal execution of the delivery algorithms on finite chunks.
//!
//! Each active user caches an exact-size uniformly random subset of
//! `round(q * F/B)` bits of every requested chunk. A bit's signature is the
//! set of active users caching it; exclusive subfiles are the groups of bits
//! sharing a signature. Messages carry real XOR payloads and every requester
//! decodes its chunk from them plus its own cache.

use std::collections::HashMap;

use rand::seq::index::sample;

use crate::cache::CacheDistribution;
use crate::error::{Error, Result};
use crate::rate::{PartTwo, Scheme};

use super::process::UserSession;
use super::rng::{derive, substream, Stream};
use super::SlotDemand;

pub const MAX_BITLEVEL_USERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    /// Random linear combinations of one chunk.
    Coded { chunk: usize },
    /// Missing suffix of one chunk under prefix caching.
    Unicast { chunk: usize },
    /// Bits of `chunk` cached by no active user.
    Uncached { chunk: usize },
    /// XOR over a user subset; user `k` contributes `W_{d_k, users \ {k}}`.
    Xor { users: Vec<usize> },
    /// `W_{chunk,{user}} xor W_{chunk,{user+1}}`.
    Chain { chunk: usize, user: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub bits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitLevelOutcome {
    pub bits: u64,
    /// `bits / (F/B)`.
    pub normalized: f64,
    /// PART 2 variant executed by PCC.
    pub part_two: Option<PartTwo>,
    pub transcript: Vec<Message>,
}

struct Layout<'a> {
    /// Requested chunk of every user.
    chunks: Vec<usize>,
    /// Distinct requested chunks in order of first request.
    distinct: Vec<usize>,
    content: HashMap<usize, Vec<u8>>,
    /// Per chunk, the user-set signature of every bit.
    sig: HashMap<usize, Vec<u32>>,
    segments: HashMap<usize, HashMap<u32, Vec<u32>>>,
    empty: &'a [u32],
}

fn chunk_content(seed: u64, chunk: usize, bits: usize) -> Vec<u8> {
    (0..bits).map(|b| (derive(seed, Stream::Payload, chunk as u64, b as u64) & 1) as u8).collect()
}

fn cached_count(q: f64, chunk_bits: usize) -> usize {
    ((q * chunk_bits as f64).round() as usize).min(chunk_bits)
}

impl Layout<'_> {
    fn new(sessions: &[UserSession], chunks: Vec<usize>, q: &CacheDistribution, chunk_bits: usize, seed: u64) -> Self {
        let mut distinct = Vec::new();
        for &c in &chunks {
            if !distinct.contains(&c) {
                distinct.push(c);
            }
        }
        let mut content = HashMap::new();
        let mut sig = HashMap::new();
        let mut segments = HashMap::new();
        for &c in &distinct {
            content.insert(c, chunk_content(seed, c, chunk_bits));
            let amount = cached_count(q.fractions()[c], chunk_bits);
            let mut s = vec![0u32; chunk_bits];
            for (k, session) in sessions.iter().enumerate() {
                let mut rng = substream(seed, Stream::Cache, session.user_id, c as u64);
                for bit in sample(&mut rng, chunk_bits, amount).iter() {
                    s[bit] |= 1 << k;
                }
            }
            let mut segs: HashMap<u32, Vec<u32>> = HashMap::new();
            for (bit, &m) in s.iter().enumerate() {
                segs.entry(m).or_default().push(bit as u32);
            }
            sig.insert(c, s);
            segments.insert(c, segs);
        }
        Self { chunks, distinct, content, sig, segments, empty: &[] }
    }

    fn segment(&self, chunk: usize, mask: u32) -> &[u32] {
        self.segments[&chunk].get(&mask).map_or(self.empty, Vec::as_slice)
    }

    fn values(&self, chunk: usize, bits: &[u32]) -> Vec<u8> {
        let c = &self.content[&chunk];
        bits.iter().map(|&b| c[b as usize]).collect()
    }

    /// Value of a bit as read from user `k`'s cache.
    fn cached_bit(&self, k: usize, chunk: usize, bit: u32) -> Result<u8> {
        if self.sig[&chunk][bit as usize] >> k & 1 == 0 {
            return Err(Error::DecodeFailure(format!("user {k} needs bit {bit} of chunk {chunk} it does not cache")));
        }
        Ok(self.content[&chunk][bit as usize])
    }

    fn xor_len(&self, members: &[usize]) -> usize {
        let mask = members.iter().fold(0u32, |m, &k| m | 1 << k);
        members.iter().map(|&k| self.segment(self.chunks[k], mask & !(1 << k)).len()).max().unwrap_or(0)
    }

    fn xor_payload(&self, members: &[usize]) -> Vec<u8> {
        let mask = members.iter().fold(0u32, |m, &k| m | 1 << k);
        let mut out = vec![0u8; self.xor_len(members)];
        for &k in members {
            let c = self.chunks[k];
            for (t, v) in self.values(c, self.segment(c, mask & !(1 << k))).into_iter().enumerate() {
                out[t] ^= v;
            }
        }
        out
    }

    fn chain_len(&self, chunk: usize, user: usize) -> usize {
        self.segment(chunk, 1 << user).len().max(self.segment(chunk, 1 << (user + 1)).len())
    }

    fn chain_payload(&self, chunk: usize, user: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.chain_len(chunk, user)];
        for u in [user, user + 1] {
            for (t, v) in self.values(chunk, self.segment(chunk, 1 << u)).into_iter().enumerate() {
                out[t] ^= v;
            }
        }
        out
    }
}

fn subsets_of_size(users: usize, z: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(start: usize, users: usize, z: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if cur.len() == z {
            visit(cur);
            return;
        }
        for k in start..users {
            if users - k < z - cur.len() {
                break;
            }
            cur.push(k);
            rec(k + 1, users, z, cur, visit);
            cur.pop();
        }
    }
    rec(0, users, z, &mut Vec::with_capacity(z), &mut visit);
}

struct Sent {
    kind: MessageKind,
    payload: Vec<u8>,
}

fn decode_xor(layout: &Layout, k: usize, members: &[usize], payload: &[u8], recon: &mut [Option<u8>]) -> Result<()> {
    let mask = members.iter().fold(0u32, |m, &u| m | 1 << u);
    let mut buf = payload.to_vec();
    for &m in members.iter().filter(|&&m| m != k) {
        let c = layout.chunks[m];
        for (t, &bit) in layout.segment(c, mask & !(1 << m)).iter().enumerate() {
            buf[t] ^= layout.cached_bit(k, c, bit)?;
        }
    }
    let own = layout.chunks[k];
    for (t, &bit) in layout.segment(own, mask & !(1 << k)).iter().enumerate() {
        recon[bit as usize] = Some(buf[t]);
    }
    Ok(())
}

fn decode_chain(
    layout: &Layout,
    k: usize,
    users: usize,
    links: &HashMap<usize, &[u8]>,
    recon: &mut [Option<u8>],
) -> Result<()> {
    let c = layout.chunks[k];
    let mut known: Vec<Vec<u8>> = vec![Vec::new(); users];
    known[k] = layout.segment(c, 1 << k).iter().map(|&b| layout.cached_bit(k, c, b)).collect::<Result<_>>()?;
    let link = |u: usize| -> Result<&[u8]> {
        links.get(&u).copied().ok_or_else(|| Error::DecodeFailure(format!("chain link {u} of chunk {c} missing")))
    };
    let unravel = |msg: &[u8], from: &[u8], len: usize| -> Vec<u8> {
        (0..len).map(|t| msg[t] ^ from.get(t).copied().unwrap_or(0)).collect()
    };
    for u in (0..k).rev() {
        let len = layout.segment(c, 1 << u).len();
        known[u] = unravel(link(u)?, &known[u + 1], len);
    }
    for u in k..users - 1 {
        let len = layout.segment(c, 1 << (u + 1)).len();
        known[u + 1] = unravel(link(u)?, &known[u], len);
    }
    for (u, vals) in known.iter().enumerate() {
        for (t, &bit) in layout.segment(c, 1 << u).iter().enumerate() {
            recon[bit as usize] = Some(vals[t]);
        }
    }
    Ok(())
}

fn verify(layout: &Layout, k: usize, recon: &[Option<u8>]) -> Result<()> {
    let c = layout.chunks[k];
    let truth = &layout.content[&c];
    for (bit, (got, want)) in recon.iter().zip(truth).enumerate() {
        match got {
            Some(v) if v == want => {}
            Some(_) => {
                return Err(Error::DecodeFailure(format!("user {k} decoded bit {bit} of chunk {c} wrongly")));
            }
            None => return Err(Error::DecodeFailure(format!("user {k} is missing bit {bit} of chunk {c}"))),
        }
    }
    Ok(())
}

fn run_subset_xor(layout: &Layout, users: usize, sizes: impl Iterator<Item = usize>, out: &mut Vec<Sent>) {
    for z in sizes {
        subsets_of_size(users, z, |members| {
            out.push(Sent { kind: MessageKind::Xor { users: members.to_vec() }, payload: layout.xor_payload(members) });
        });
    }
}

fn check_sessions(demand: &SlotDemand, sessions: &[UserSession]) -> Result<Vec<usize>> {
    let chunks = demand.user_chunks();
    let b = demand.num_chunks();
    if sessions.len() != chunks.len() || sessions.iter().zip(&chunks).any(|(s, &c)| s.file * b + s.next_chunk != c) {
        return Err(Error::Domain("sessions do not match the demand".into()));
    }
    Ok(chunks)
}

/// Runs `scheme` on one demand with chunks of `chunk_bits` bits and checks
/// that every requester decodes its chunk.
///
/// `sessions` lists the active users in demand order; their ids key the
/// cache sampling so a user's cache is the same in every slot.
pub fn bitlevel_slot_delivery(
    demand: &SlotDemand,
    sessions: &[UserSession],
    q: &CacheDistribution,
    scheme: Scheme,
    part_two: PartTwo,
    chunk_bits: usize,
    seed: u64,
) -> Result<BitLevelOutcome> {
    let chunks = check_sessions(demand, sessions)?;
    let users = chunks.len();
    if users > MAX_BITLEVEL_USERS {
        return Err(Error::TooManyUsers { users, limit: MAX_BITLEVEL_USERS });
    }
    if chunk_bits == 0 {
        return Err(Error::Domain("chunk size must be positive".into()));
    }
    let finish = |transcript: Vec<Message>, part_two| {
        let bits: u64 = transcript.iter().map(|m| m.bits as u64).sum();
        BitLevelOutcome { bits, normalized: bits as f64 / chunk_bits as f64, part_two, transcript }
    };
    if users == 0 {
        return Ok(finish(Vec::new(), None));
    }

    if scheme == Scheme::Uncoded {
        let mut transcript = Vec::new();
        let mut distinct = Vec::new();
        for &c in &chunks {
            if !distinct.contains(&c) {
                distinct.push(c);
            }
        }
        for &c in &distinct {
            let content = chunk_content(seed, c, chunk_bits);
            let prefix = cached_count(q.fractions()[c], chunk_bits);
            let payload = &content[prefix..];
            for k in (0..users).filter(|&k| chunks[k] == c) {
                let mut recon: Vec<u8> = content[..prefix].to_vec();
                recon.extend_from_slice(payload);
                if recon != content {
                    return Err(Error::DecodeFailure(format!("user {k} failed on chunk {c}")));
                }
            }
            transcript.push(Message { kind: MessageKind::Unicast { chunk: c }, bits: payload.len() });
        }
        return Ok(finish(transcript, None));
    }

    let layout = Layout::new(sessions, chunks, q, chunk_bits, seed);

    if scheme == Scheme::Ran {
        // Random linear combinations decode once a requester holds as many
        // independent equations as it misses bits.
        let mut transcript = Vec::new();
        for &c in &layout.distinct {
            let missing: Vec<usize> = (0..users)
                .filter(|&k| layout.chunks[k] == c)
                .map(|k| layout.sig[&c].iter().filter(|&&m| m >> k & 1 == 0).count())
                .collect();
            let sent = missing.iter().copied().max().unwrap_or(0);
            if missing.iter().any(|&m| m > sent) {
                return Err(Error::DecodeFailure(format!("chunk {c} underdetermined")));
            }
            transcript.push(Message { kind: MessageKind::Coded { chunk: c }, bits: sent });
        }
        return Ok(finish(transcript, None));
    }

    let mut sent: Vec<Sent> = Vec::new();
    let mut executed = None;
    match scheme {
        Scheme::Man => run_subset_xor(&layout, users, 1..=users, &mut sent),
        Scheme::Pcc => {
            for &c in &layout.distinct {
                sent.push(Sent {
                    kind: MessageKind::Uncached { chunk: c },
                    payload: layout.values(c, layout.segment(c, 0)),
                });
            }
            let mut pairwise = 0usize;
            subsets_of_size(users, 2, |m| pairwise += layout.xor_len(m));
            let chain: usize = layout
                .distinct
                .iter()
                .map(|&c| (0..users.saturating_sub(1)).map(|u| layout.chain_len(c, u)).sum::<usize>())
                .sum();
            let choice = match part_two {
                PartTwo::Cheaper if chain < pairwise => PartTwo::Chain,
                PartTwo::Cheaper => PartTwo::Pairwise,
                other => other,
            };
            executed = Some(choice);
            match choice {
                PartTwo::Chain => {
                    for &c in &layout.distinct {
                        for u in 0..users.saturating_sub(1) {
                            sent.push(Sent {
                                kind: MessageKind::Chain { chunk: c, user: u },
                                payload: layout.chain_payload(c, u),
                            });
                        }
                    }
                }
                _ => run_subset_xor(&layout, users, 2..=2, &mut sent),
            }
            run_subset_xor(&layout, users, 3..=users, &mut sent);
        }
        Scheme::Ran | Scheme::Uncoded => unreachable!(),
    }

    for k in 0..users {
        let c = layout.chunks[k];
        let mut recon: Vec<Option<u8>> = layout.sig[&c]
            .iter()
            .enumerate()
            .map(|(bit, &m)| (m >> k & 1 == 1).then(|| layout.content[&c][bit]))
            .collect();
        let mut links: HashMap<usize, &[u8]> = HashMap::new();
        for s in &sent {
            match &s.kind {
                MessageKind::Xor { users: members } if members.contains(&k) => {
                    decode_xor(&layout, k, members, &s.payload, &mut recon)?;
                }
                MessageKind::Uncached { chunk } if *chunk == c => {
                    for (t, &bit) in layout.segment(c, 0).iter().enumerate() {
                        recon[bit as usize] = Some(s.payload[t]);
                    }
                }
                MessageKind::Chain { chunk, user } if *chunk == c => {
                    links.insert(*user, &s.payload);
                }
                _ => {}
            }
        }
        if executed == Some(PartTwo::Chain) {
            decode_chain(&layout, k, users, &links, &mut recon)?;
        }
        verify(&layout, k, &recon)?;
    }

    let transcript = sent.into_iter().map(|s| Message { bits: s.payload.len(), kind: s.kind }).collect();
    Ok(finish(transcript, executed))
}
