#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqa::corpus::{CandidatePool, Question, QuestionSet, RawCandidate};
use reqa::tokenize::{Tokenizer, Vocab};

pub const N_PAIRS: usize = 50;
const N_COMMON: usize = 20;

/// Lexically correlated toy corpus: question `i` and answer `i` share the
/// rare token `r{i}`; every other token is drawn from a small common pool.
pub struct Synthetic {
    pub pool: CandidatePool,
    pub questions: QuestionSet,
    pub tokenizer: Tokenizer,
}

fn common(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("c{}", rng.gen_range(0..N_COMMON))).collect()
}

pub fn synthetic_corpus(seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raws = Vec::new();
    let mut questions = Vec::new();
    for i in 0..N_PAIRS {
        let mut q = common(&mut rng, 3);
        q.push(format!("r{i}"));
        q.shuffle(&mut rng);
        let mut a = common(&mut rng, 4);
        a.push(format!("r{i}"));
        a.shuffle(&mut rng);
        let sentence = format!("{}.", a.join(" "));
        let context = format!("{} {}.", sentence, common(&mut rng, 5).join(" "));
        raws.push(RawCandidate {
            doc_id: format!("doc{i}"),
            sentence_index: 0,
            sentence,
            context,
            title: None,
        });
        questions.push(Question {
            qid: format!("q{i}"),
            text: format!("{}?", q.join(" ")),
            gold: [i as u32].into(),
        });
    }
    let pool = CandidatePool::assign_ids(raws).unwrap();
    let questions = QuestionSet::new(questions, &pool).unwrap();
    let mut vocab = vec!["[UNK]".to_string(), ".".into(), "?".into()];
    vocab.extend((0..N_PAIRS).map(|i| format!("r{i}")));
    vocab.extend((0..N_COMMON).map(|i| format!("c{i}")));
    let tokenizer = Tokenizer::wordpiece(Arc::new(Vocab::new(vocab, "[UNK]").unwrap()));
    Synthetic {
        pool,
        questions,
        tokenizer,
    }
}
