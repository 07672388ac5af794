//! Cause-effect pair corpora: validation, triplet conversion, leakage-safe
//! splitting, distractor pools and a synthetic generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalPair {
    pub id: String,
    pub cause_text: String,
    pub effect_text: String,
    /// Leakage group: pairs derived from one source record share it.
    pub group_id: String,
}

impl CausalPair {
    /// Pair whose group is its own id.
    pub fn new(id: impl Into<String>, cause: impl Into<String>, effect: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            group_id: id.clone(),
            id,
            cause_text: cause.into(),
            effect_text: effect.into(),
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group_id = group.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletRecord {
    pub id: String,
    pub cause: String,
    pub premise: String,
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<CausalPair>,
    pub validation: Vec<CausalPair>,
    pub test: Vec<CausalPair>,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[CausalPair]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub doc_id: String,
    pub text: String,
    /// Query id this document answers, if it is a gold document.
    pub gold_for: Option<String>,
}

fn check_text(id: &str, field: &'static str, text: &str) -> Result<()> {
    if normalize(text).is_empty() {
        return Err(Error::EmptyText {
            id: id.into(),
            field,
        });
    }
    Ok(())
}

/// Checks pair invariants: non-empty texts, unique ids.
pub fn validate_pairs(pairs: &[CausalPair]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in pairs {
        check_text(&p.id, "cause", &p.cause_text)?;
        check_text(&p.id, "effect", &p.effect_text)?;
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

pub fn validate_triplet(t: &TripletRecord) -> Result<()> {
    check_text(&t.id, "cause", &t.cause)?;
    check_text(&t.id, "premise", &t.premise)?;
    check_text(&t.id, "effect", &t.effect)
}

/// Each `<cause, premise, effect>` triplet becomes `(cause, premise)` and
/// `(premise, effect)`, both grouped under the triplet id.
pub fn triplets_to_pairs(triplets: &[TripletRecord]) -> Result<Vec<CausalPair>> {
    let mut out = Vec::with_capacity(triplets.len() * 2);
    for t in triplets {
        validate_triplet(t)?;
        out.push(
            CausalPair::new(format!("{}-cp", t.id), t.cause.clone(), t.premise.clone())
                .with_group(t.id.clone()),
        );
        out.push(
            CausalPair::new(format!("{}-pe", t.id), t.premise.clone(), t.effect.clone())
                .with_group(t.id.clone()),
        );
    }
    Ok(out)
}

/// Splits pairs by leakage group.
///
/// Groups (in first-appearance order) are shuffled with the seeded PRNG, then
/// each goes to the bucket with the largest deficit `ratio * filled_after - count`,
/// counting pairs. Ties prefer train, then validation, then test.
pub fn grouped_split(pairs: &[CausalPair], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("pairs"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidConfig(
            "split ratios must be finite and non-negative".into(),
        ));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig(
            "split ratios must sum to a positive value".into(),
        ));
    }
    let targets = ratios.map(|r| r / total);

    let mut order: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        members
            .entry(p.group_id.as_str())
            .or_insert_with(|| {
                order.push(p.group_id.as_str());
                Vec::new()
            })
            .push(i);
    }
    let buckets = targets.iter().filter(|t| **t > 0.0).count();
    if order.len() < buckets {
        return Err(Error::InsufficientGroups {
            groups: order.len(),
            buckets,
        });
    }
    order.shuffle(&mut stream_rng(seed, 0x5b1));

    let mut counts = [0usize; 3];
    let mut assigned = 0usize;
    let mut out: [Vec<CausalPair>; 3] = Default::default();
    for g in order {
        let idx = &members[g];
        let after = (assigned + idx.len()) as f64;
        let mut best = None;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in 0..3 {
            if targets[s] <= 0.0 {
                continue;
            }
            let deficit = targets[s] * after - counts[s] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = Some(s);
            }
        }
        let s = best.expect("at least one bucket has a positive ratio");
        counts[s] += idx.len();
        assigned += idx.len();
        out[s].extend(idx.iter().map(|&i| pairs[i].clone()));
    }
    let [train, validation, test] = out;
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

/// Gold entries plus `pool_size - gold.len()` distinct distractors sampled
/// without replacement (nested across pool sizes for a fixed seed), skipping sentences whose normalized text matches a gold
/// text (or an earlier distractor). The result order is a seeded shuffle.
///
/// Distractor ids are `d<source line index>`.
pub fn build_pool<S: AsRef<str>>(
    gold: &[PoolEntry],
    distractor_source: &[S],
    pool_size: usize,
    seed: u64,
) -> Result<Vec<PoolEntry>> {
    if pool_size < gold.len() {
        return Err(Error::InvalidConfig(format!(
            "pool size {pool_size} is smaller than the {} gold entries",
            gold.len()
        )));
    }
    let mut ids = BTreeSet::new();
    let mut seen_text = BTreeSet::new();
    for g in gold {
        if !ids.insert(g.doc_id.clone()) {
            return Err(Error::DuplicateId(g.doc_id.clone()));
        }
        seen_text.insert(normalize(&g.text));
    }
    let needed = pool_size - gold.len();
    let mut candidates = Vec::new();
    if needed > 0 {
        for (i, s) in distractor_source.iter().enumerate() {
            let norm = normalize(s.as_ref());
            if norm.is_empty() || !seen_text.insert(norm) {
                continue;
            }
            candidates.push(i);
        }
    }
    if candidates.len() < needed {
        return Err(Error::InsufficientDistractors {
            needed,
            available: candidates.len(),
            shortfall: needed - candidates.len(),
        });
    }
    // A prefix of one seeded permutation: with a fixed seed and source, a
    // larger pool always contains every distractor of a smaller one.
    let mut rng = stream_rng(seed, 0x9001);
    candidates.shuffle(&mut rng);
    let mut chosen = candidates[..needed].to_vec();
    chosen.sort_unstable();

    let mut pool = Vec::with_capacity(pool_size);
    pool.extend(gold.iter().cloned());
    for i in chosen {
        let doc_id = format!("d{i}");
        if !ids.insert(doc_id.clone()) {
            return Err(Error::DuplicateId(doc_id));
        }
        pool.push(PoolEntry {
            doc_id,
            text: String::from(distractor_source[i].as_ref()),
            gold_for: None,
        });
    }
    pool.shuffle(&mut rng);
    Ok(pool)
}

/// Which half of a pair a sentence plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Cause,
    Effect,
}

const SLOTS: usize = 4;
const CAUSE_ONSETS: &[u8] = b"bdgkpt";
const EFFECT_ONSETS: &[u8] = b"lmnrsvz";
const VOWELS: &[u8] = b"aeiou";

/// Generator of templated cause-effect sentences with lexically disjoint sides.
///
/// A sentence is four slot words. Each side's vocabulary is split evenly over
/// the slots; cause words use only the onsets `bdgkpt`, effect words only
/// `lmnrsvz`, so no token is shared across sides. Pairs map each cause slot
/// word to an effect slot word through a fixed seeded injection, giving a
/// bijection between cause templates and their effect templates.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    cause_words: [Vec<String>; SLOTS],
    effect_words: [Vec<String>; SLOTS],
    /// `mapping[s][i]`: effect word index for cause word `i` of slot `s`.
    mapping: [Vec<usize>; SLOTS],
    /// Per-slot word count usable by pairs.
    paired: usize,
    seed: u64,
}

fn pseudo_word(mut n: usize, onsets: &[u8]) -> String {
    let base = onsets.len() * VOWELS.len();
    let mut w = String::new();
    for _ in 0..2 {
        let syl = n % base;
        n /= base;
        w.push(onsets[syl / VOWELS.len()] as char);
        w.push(VOWELS[syl % VOWELS.len()] as char);
    }
    while n > 0 {
        let syl = n % base;
        n /= base;
        w.push(onsets[syl / VOWELS.len()] as char);
        w.push(VOWELS[syl % VOWELS.len()] as char);
    }
    w
}

impl SynthGenerator {
    pub fn new(cause_vocab: usize, effect_vocab: usize, seed: u64) -> Result<Self> {
        if cause_vocab < 8 || effect_vocab < 8 {
            return Err(Error::InvalidConfig(
                "synthetic vocabularies need at least 8 words per side".into(),
            ));
        }
        let cs = cause_vocab / SLOTS;
        let es = effect_vocab / SLOTS;
        let words = |per_slot: usize, onsets: &[u8]| -> [Vec<String>; SLOTS] {
            core::array::from_fn(|s| {
                (0..per_slot)
                    .map(|i| pseudo_word(s * per_slot + i, onsets))
                    .collect()
            })
        };
        let mut rng = stream_rng(seed, 0x5e7);
        let paired = cs.min(es);
        let mapping = core::array::from_fn(|_| {
            let mut perm: Vec<usize> = (0..es).collect();
            perm.shuffle(&mut rng);
            perm.truncate(paired);
            perm
        });
        Ok(Self {
            cause_words: words(cs, CAUSE_ONSETS),
            effect_words: words(es, EFFECT_ONSETS),
            mapping,
            paired,
            seed,
        })
    }

    /// Number of distinct pairs the generator can produce.
    pub fn capacity(&self) -> usize {
        self.paired.pow(SLOTS as u32)
    }

    fn words(&self, side: Side) -> &[Vec<String>; SLOTS] {
        match side {
            Side::Cause => &self.cause_words,
            Side::Effect => &self.effect_words,
        }
    }

    fn sentence(&self, side: Side, tuple: [usize; SLOTS]) -> String {
        let words = self.words(side);
        let mut s = String::new();
        for (slot, &w) in tuple.iter().enumerate() {
            if slot > 0 {
                s.push(' ');
            }
            s.push_str(&words[slot][w]);
        }
        s
    }

    fn decode(code: usize, radix: usize) -> [usize; SLOTS] {
        let mut c = code;
        core::array::from_fn(|_| {
            let d = c % radix;
            c /= radix;
            d
        })
    }

    fn effect_tuple(&self, cause: [usize; SLOTS]) -> [usize; SLOTS] {
        core::array::from_fn(|s| self.mapping[s][cause[s]])
    }

    /// `n` distinct pairs with ids `synth-00000`, ...; group = id.
    pub fn pairs(&self, n: usize) -> Result<Vec<CausalPair>> {
        if n == 0 {
            return Err(Error::EmptyInput("n_pairs"));
        }
        if n > self.capacity() {
            return Err(Error::InvalidConfig(format!(
                "{n} pairs requested but the vocabulary supports only {}",
                self.capacity()
            )));
        }
        let mut rng = stream_rng(self.seed, 0x9a1);
        Ok(index::sample(&mut rng, self.capacity(), n)
            .into_iter()
            .enumerate()
            .map(|(i, code)| {
                let cause = Self::decode(code, self.paired);
                CausalPair::new(
                    format!("synth-{i:05}"),
                    self.sentence(Side::Cause, cause),
                    self.sentence(Side::Effect, self.effect_tuple(cause)),
                )
            })
            .collect())
    }

    /// `n` distinct `side` sentences from templates not used by `exclude`
    /// (matched by normalized text), drawn with the `stream` PRNG stream.
    pub fn distractors(
        &self,
        side: Side,
        n: usize,
        exclude: &[CausalPair],
        stream: u64,
    ) -> Result<Vec<String>> {
        let per_slot = self.words(side)[0].len();
        let space = per_slot.pow(SLOTS as u32);
        let mut taken: BTreeSet<String> = exclude
            .iter()
            .map(|p| match side {
                Side::Cause => normalize(&p.cause_text),
                Side::Effect => normalize(&p.effect_text),
            })
            .collect();
        let free = space.saturating_sub(taken.len());
        if n > free {
            return Err(Error::InsufficientDistractors {
                needed: n,
                available: free,
                shortfall: n - free,
            });
        }
        let mut rng = stream_rng(self.seed, 0xd15_0000 + stream);
        let mut out = Vec::with_capacity(n);
        // Rejection sampling; callers keep `n` well below the free space.
        while out.len() < n {
            let code = rand::Rng::gen_range(&mut rng, 0..space);
            let s = self.sentence(side, Self::decode(code, per_slot));
            if taken.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Synthetic stand-in corpus: `n_pairs` templated pairs with disjoint
/// cause/effect vocabularies of sizes `vocab_split`.
pub fn synth_causal_dataset(
    n_pairs: usize,
    vocab_split: (usize, usize),
    seed: u64,
) -> Result<Vec<CausalPair>> {
    SynthGenerator::new(vocab_split.0, vocab_split.1, seed)?.pairs(n_pairs)
}
