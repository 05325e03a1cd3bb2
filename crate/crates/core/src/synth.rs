//! Templated subject–verb–object grammar for desk-scale experiments.
//!
//! Sentences are `det (adj) noun verb det (adj) noun (adverb) (prep det noun).`
//! with each slot drawn from a fixed word list under Zipf weights. The corpus
//! therefore has a known, bounded vocabulary and a controllable length range.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DETERMINERS: &[&str] = &["the", "a", "every", "some", "this", "that", "one", "no"];

const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "small", "large", "old", "young", "quiet", "loud", "happy", "sad", "brave", "clever",
    "lazy", "quick", "slow", "bright", "dark", "warm", "cold", "tall", "short", "heavy", "light", "gentle", "fierce",
    "proud", "shy", "calm", "wild", "rich", "poor", "strange", "famous", "tired", "hungry", "angry", "curious",
    "silent", "busy",
];

const NOUNS: &[&str] = &[
    "cat", "dog", "bird", "horse", "farmer", "teacher", "doctor", "child", "king", "queen", "sailor", "painter",
    "baker", "soldier", "student", "writer", "singer", "girl", "boy", "woman", "man", "wolf", "fox", "bear", "lion",
    "tiger", "rabbit", "mouse", "owl", "eagle", "fish", "frog", "snake", "goat", "sheep", "cow", "pig", "duck",
    "hunter", "pilot", "judge", "nurse", "chef", "clown", "monk", "poet", "thief", "guard", "merchant", "priest",
    "knight", "witch", "giant", "dwarf", "robot", "ghost", "pirate", "miner", "dancer", "tailor",
];

const VERBS: &[&str] = &[
    "sees", "likes", "finds", "follows", "helps", "watches", "chases", "meets", "calls", "greets", "carries", "pushes",
    "pulls", "feeds", "teaches", "paints", "visits", "catches", "hides", "admires", "fears", "trusts", "thanks",
    "warns", "blames", "wakes", "hears", "loves", "hates", "guides", "serves", "saves", "leaves", "tickles", "bites",
    "kicks", "hugs", "drives", "draws", "praises",
];

const ADVERBS: &[&str] = &[
    "quickly", "slowly", "quietly", "loudly", "happily", "sadly", "bravely", "gently", "eagerly", "calmly", "boldly",
    "rarely", "often", "always", "never", "proudly", "kindly", "warmly", "softly", "wisely", "firmly", "sweetly",
];

const PREPOSITIONS: &[&str] = &[
    "in", "near", "behind", "under", "beside", "across", "inside", "above", "beyond", "around",
];

const PLACES: &[&str] = &[
    "house", "garden", "forest", "river", "city", "village", "market", "castle", "school", "field", "lake", "mountain",
    "church", "bridge", "harbor", "tower", "valley", "desert", "island", "station", "temple", "meadow",
];

/// Number of distinct words the grammar can emit, punctuation excluded.
pub fn vocabulary_size() -> usize {
    let mut all: Vec<&str> = [DETERMINERS, ADJECTIVES, NOUNS, VERBS, ADVERBS, PREPOSITIONS, PLACES].concat();
    all.sort_unstable();
    all.dedup();
    all.len()
}

#[derive(Clone, Copy, Debug)]
pub struct GrammarOptions {
    pub p_adjective: f64,
    pub p_adverb: f64,
    pub p_prep_phrase: f64,
    /// Words in each slot list are drawn with probability proportional to
    /// `1 / rank^zipf_exponent`; 0 gives uniform choice.
    pub zipf_exponent: f64,
}

impl Default for GrammarOptions {
    fn default() -> Self {
        Self {
            p_adjective: 0.5,
            p_adverb: 0.3,
            p_prep_phrase: 0.3,
            zipf_exponent: 1.0,
        }
    }
}

struct Slot {
    words: &'static [&'static str],
    weights: WeightedIndex<f64>,
}

impl Slot {
    fn new(words: &'static [&'static str], exponent: f64) -> Self {
        let weights = (1..=words.len()).map(|r| (r as f64).powf(-exponent));
        Self {
            words,
            weights: WeightedIndex::new(weights).expect("non-empty word list"),
        }
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> &'static str {
        self.words[self.weights.sample(rng)]
    }
}

/// Sentence sampler built once per option set.
pub struct Grammar {
    opts: GrammarOptions,
    det: Slot,
    adj: Slot,
    noun: Slot,
    verb: Slot,
    adv: Slot,
    prep: Slot,
    place: Slot,
}

impl Grammar {
    pub fn new(opts: GrammarOptions) -> Self {
        let s = |w| Slot::new(w, opts.zipf_exponent);
        Self {
            det: s(DETERMINERS),
            adj: s(ADJECTIVES),
            noun: s(NOUNS),
            verb: s(VERBS),
            adv: s(ADVERBS),
            prep: s(PREPOSITIONS),
            place: s(PLACES),
            opts,
        }
    }

    fn noun_phrase<R: Rng>(&self, rng: &mut R, out: &mut Vec<&str>) {
        out.push(self.det.pick(rng));
        if rng.gen_bool(self.opts.p_adjective) {
            out.push(self.adj.pick(rng));
        }
        out.push(self.noun.pick(rng));
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> String {
        let mut w = Vec::with_capacity(12);
        self.noun_phrase(rng, &mut w);
        w.push(self.verb.pick(rng));
        self.noun_phrase(rng, &mut w);
        if rng.gen_bool(self.opts.p_adverb) {
            w.push(self.adv.pick(rng));
        }
        if rng.gen_bool(self.opts.p_prep_phrase) {
            w.push(self.prep.pick(rng));
            w.push(self.det.pick(rng));
            w.push(self.place.pick(rng));
        }
        let mut s = w.join(" ");
        s.push('.');
        s
    }
}

/// `n` sentences from a generator seeded with `seed`.
pub fn generate(n: usize, seed: u64, opts: &GrammarOptions) -> Vec<String> {
    let grammar = Grammar::new(*opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| grammar.sentence(&mut rng)).collect()
}
