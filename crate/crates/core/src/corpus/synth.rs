//! Template-grammar corpus with a known turn-taking rule: a speaker takes
//! the next turn as well exactly when their current turn contains the cue
//! word, which appears with probability 0.4.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Transcript, Utterance};

pub const CUE: &str = "moreover";
const CUE_PROB: f64 = 0.4;
const MIN_TURNS: usize = 4;
const MAX_TURNS: usize = 10;
const SPEAKERS: [&str; 2] = ["A", "B"];

const SUBJECTS: &[&str] = &[
    "i",
    "you",
    "we",
    "they",
    "my sister",
    "our team",
    "the teacher",
    "my neighbor",
];
const VERBS: &[&str] = &[
    "like", "need", "bought", "found", "visited", "painted", "cleaned", "ordered",
];
const OBJECTS: &[&str] = &[
    "the red car",
    "a new house",
    "some coffee",
    "the old park",
    "a small garden",
    "the blue kite",
    "fresh bread",
    "the big museum",
];
const TAILS: &[&str] = &[
    "yesterday",
    "last week",
    "every morning",
    "on sunday",
    "with friends",
    "for fun",
];
const QUESTIONS: &[&str] = &[
    "what do you think ?",
    "do you agree ?",
    "why is that ?",
    "how about you ?",
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn clause<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<String>) {
    let mut words = vec![pick(rng, SUBJECTS), pick(rng, VERBS), pick(rng, OBJECTS)];
    if rng.gen_bool(0.5) {
        words.push(pick(rng, TAILS));
    }
    out.extend(words.iter().flat_map(|w| w.split(' ')).map(str::to_string));
}

/// One templated utterance; `cue` controls whether it contains [`CUE`].
pub fn synthetic_utterance<R: Rng + ?Sized>(rng: &mut R, cue: bool) -> Vec<String> {
    let mut toks = Vec::new();
    if cue && rng.gen_bool(0.5) {
        toks.extend([CUE.to_string(), ",".to_string()]);
        clause(rng, &mut toks);
        toks.push(".".into());
    } else {
        clause(rng, &mut toks);
        if cue {
            toks.extend([",".to_string(), CUE.to_string()]);
            clause(rng, &mut toks);
        }
        toks.push(".".into());
    }
    if rng.gen_bool(0.3) {
        toks.extend(pick(rng, QUESTIONS).split(' ').map(str::to_string));
    }
    toks
}

fn dialogue<R: Rng + ?Sized>(rng: &mut R, id: String) -> Transcript {
    loop {
        let len = rng.gen_range(MIN_TURNS..=MAX_TURNS);
        let mut speaker = rng.gen_range(0..2);
        let mut turns = Vec::with_capacity(len);
        for _ in 0..len {
            let cue = rng.gen_bool(CUE_PROB);
            turns.push(Utterance::new(
                SPEAKERS[speaker],
                synthetic_utterance(rng, cue),
            ));
            if !cue {
                speaker = 1 - speaker;
            }
        }
        let t = Transcript {
            id: id.clone(),
            turns,
        };
        // A run of cues can leave one speaker alone; redraw to keep two.
        if t.speakers().len() == 2 {
            return t;
        }
    }
}

pub fn gen_synthetic<R: Rng + ?Sized>(n_dialogues: usize, rng: &mut R) -> Vec<Transcript> {
    (0..n_dialogues)
        .map(|i| dialogue(rng, format!("synth-{i:05}")))
        .collect()
}
