//! Planted-signal corpora.
//!
//! Each planted topic has a name, a small vocabulary, and one opinion token
//! per class. An article about topic `t` repeats the topic name, draws words
//! from `t`'s vocabulary and from a shared filler vocabulary, and carries
//! exactly one opinion token matching its class. Ratings follow the
//! three-point scale.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Article, BiasClass, Corpus, Scale};

pub const TOPICS: [(&str, [&str; 10]); 6] = [
    (
        "healthcare",
        ["insurance", "hospital", "medicaid", "premiums", "patients", "coverage", "doctors", "prescription", "clinics", "nurses"],
    ),
    (
        "immigration",
        ["border", "asylum", "migrants", "visa", "deportation", "citizenship", "refugees", "detention", "caravan", "daca"],
    ),
    (
        "climate",
        ["emissions", "carbon", "warming", "renewable", "coal", "drought", "wildfires", "solar", "methane", "glaciers"],
    ),
    (
        "guns",
        ["firearms", "shooting", "rifle", "background", "ammunition", "nra", "handgun", "permit", "magazine", "militia"],
    ),
    (
        "taxes",
        ["income", "irs", "deduction", "bracket", "revenue", "payroll", "estate", "loopholes", "corporate", "credits"],
    ),
    (
        "education",
        ["schools", "teachers", "tuition", "students", "charter", "curriculum", "loans", "vouchers", "campus", "classrooms"],
    ),
];

pub const FILLER: [&str; 24] = [
    "officials", "week", "report", "plan", "state", "federal", "lawmakers", "vote", "spokesman", "monday",
    "senate", "house", "proposal", "agency", "county", "critics", "supporters", "statement", "measure",
    "program", "public", "national", "policy", "bill",
];

/// Opinion token for a topic and class, e.g. `progressivehealthcare`.
pub fn opinion_token(topic: &str, class: BiasClass) -> String {
    let prefix = match class {
        BiasClass::Left => "progressive",
        BiasClass::Center => "moderate",
        BiasClass::Right => "conservative",
    };
    format!("{prefix}{topic}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub articles_per_topic: usize,
    /// Left / Center / Right shares per topic; must sum to `articles_per_topic`.
    pub class_counts: [usize; 3],
    pub topic_name_repeats: usize,
    pub vocab_words: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            articles_per_topic: 100,
            class_counts: [40, 20, 40],
            topic_name_repeats: 3,
            vocab_words: 12,
            filler_words: 12,
            seed: 2024,
        }
    }
}

/// Planted ground truth for one article.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedLabel {
    pub topic: usize,
    pub class: BiasClass,
}

/// Generates the corpus plus per-article ground truth (aligned by position).
/// Articles are interleaved across topics in a seeded order.
pub fn planted_corpus(config: &PlantedConfig) -> (Corpus, Vec<PlantedLabel>) {
    assert_eq!(config.class_counts.iter().sum::<usize>(), config.articles_per_topic);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    for (t, (name, vocab)) in TOPICS.iter().enumerate() {
        let classes = BiasClass::ALL
            .iter()
            .zip(config.class_counts)
            .flat_map(|(c, n)| std::iter::repeat_n(*c, n));
        for class in classes {
            let mut words: Vec<String> = Vec::new();
            words.extend(std::iter::repeat_n(name.to_string(), config.topic_name_repeats));
            for _ in 0..config.vocab_words {
                words.push(vocab.choose(&mut rng).unwrap().to_string());
            }
            for _ in 0..config.filler_words {
                words.push(FILLER.choose(&mut rng).unwrap().to_string());
            }
            words.push(opinion_token(name, class));
            words.shuffle(&mut rng);
            let rating = match class {
                BiasClass::Left => -1,
                BiasClass::Center => 0,
                BiasClass::Right => 1,
            };
            rows.push((words.join(" "), rating, PlantedLabel { topic: t, class }));
        }
    }
    rows.shuffle(&mut rng);
    let mut articles = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (i, (text, rating, label)) in rows.into_iter().enumerate() {
        articles.push(Article {
            id: format!("art{i:04}"),
            text,
            rating,
            source: Some(format!("outlet{}", (rating + 1) as usize)),
        });
        labels.push(label);
    }
    let corpus = Corpus::new(articles, Scale::ThreePoint).expect("generated corpus is valid");
    (corpus, labels)
}
