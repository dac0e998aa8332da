use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Retain,
    Forget,
}

/// A prompt and the completion the model should (or should no longer) produce.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub prompt: String,
    pub completion: String,
    pub kind: Kind,
}

impl Example {
    pub fn new(prompt: impl Into<String>, completion: impl Into<String>, kind: Kind) -> Self {
        Example {
            prompt: prompt.into(),
            completion: completion.into(),
            kind,
        }
    }

    /// Both sides carry text once whitespace is trimmed.
    pub fn is_well_formed(&self) -> bool {
        !self.prompt.trim().is_empty() && !self.completion.trim().is_empty()
    }
}

/// A country with its capital and official language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryFact {
    pub country: String,
    pub capital: String,
    pub language: String,
}

/// Everything a corpus generator needs. Generation is a pure function of this value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_examples: usize,
    pub seed: u64,
    /// Factual table for the retain corpus.
    #[serde(default = "default_facts")]
    pub facts: Vec<CountryFact>,
    /// People whose contact records make up the forget corpus.
    #[serde(default = "default_names")]
    pub names: Vec<String>,
    #[serde(default = "default_streets")]
    pub streets: Vec<String>,
    /// Inclusive range of house numbers.
    #[serde(default = "default_house_numbers")]
    pub house_numbers: (u32, u32),
}

const FACTS: &[(&str, &str, &str)] = &[
    ("france", "paris", "french"),
    ("germany", "berlin", "german"),
    ("italy", "rome", "italian"),
    ("spain", "madrid", "spanish"),
    ("portugal", "lisbon", "portuguese"),
    ("greece", "athens", "greek"),
    ("poland", "warsaw", "polish"),
    ("sweden", "stockholm", "swedish"),
    ("norway", "oslo", "norwegian"),
    ("finland", "helsinki", "finnish"),
    ("denmark", "copenhagen", "danish"),
    ("austria", "vienna", "german"),
    ("hungary", "budapest", "hungarian"),
    ("ireland", "dublin", "irish"),
    ("egypt", "cairo", "arabic"),
    ("japan", "tokyo", "japanese"),
    ("china", "beijing", "chinese"),
    ("russia", "moscow", "russian"),
    ("peru", "lima", "spanish"),
    ("chile", "santiago", "spanish"),
    ("kenya", "nairobi", "swahili"),
    ("canada", "ottawa", "english"),
    ("brazil", "brasilia", "portuguese"),
    ("turkey", "ankara", "turkish"),
    ("iran", "tehran", "persian"),
    ("thailand", "bangkok", "thai"),
    ("vietnam", "hanoi", "vietnamese"),
    ("cuba", "havana", "spanish"),
    ("netherlands", "amsterdam", "dutch"),
    ("romania", "bucharest", "romanian"),
];

const NAMES: &[&str] = &[
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hugo", "ines", "jonas", "kira", "liam",
    "maya", "nils", "olga", "pavel", "quinn", "rosa", "sven", "tara", "umar", "vera", "wade", "xenia", "yusuf",
    "zoe",
];

const STREETS: &[&str] = &[
    "oak", "maple", "cedar", "pine", "elm", "birch", "willow", "ash", "cherry", "walnut", "spruce", "hickory",
];

fn default_facts() -> Vec<CountryFact> {
    FACTS
        .iter()
        .map(|&(c, cap, lang)| CountryFact {
            country: c.into(),
            capital: cap.into(),
            language: lang.into(),
        })
        .collect()
}

fn default_names() -> Vec<String> {
    NAMES.iter().map(|s| s.to_string()).collect()
}

fn default_streets() -> Vec<String> {
    STREETS.iter().map(|s| s.to_string()).collect()
}

fn default_house_numbers() -> (u32, u32) {
    (1, 999)
}

impl CorpusSpec {
    pub fn new(n_examples: usize, seed: u64) -> Self {
        CorpusSpec {
            n_examples,
            seed,
            facts: default_facts(),
            names: default_names(),
            streets: default_streets(),
            house_numbers: default_house_numbers(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::Spec("n_examples must be positive".into()));
        }
        if self.house_numbers.0 > self.house_numbers.1 {
            return Err(Error::Spec(format!("empty house number range {:?}", self.house_numbers)));
        }
        Ok(())
    }
}

/// Prompt templates of the retain corpus: (prompt, completion) given a fact.
type Template = fn(&CountryFact) -> (String, String);

const RETAIN_FAMILIES: &[Template] = &[
    |f| (format!("the capital of {} is", f.country), format!(" {} .", f.capital)),
    |f| (format!("the official language of {} is", f.country), format!(" {} .", f.language)),
    |f| (format!("{} is the capital of", f.capital), format!(" {} .", f.country)),
];

/// Prompt templates that ask for a person's contact record.
pub const FORGET_PROMPTS: &[&str] = &["the address of {} is", "the home address of {} is", "contact details for {} :"];

/// Benign factual examples.
pub fn generate_retain(spec: &CorpusSpec) -> Result<Vec<Example>> {
    spec.check()?;
    if spec.facts.is_empty() {
        return Err(Error::Spec("retain corpus needs at least one fact".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_examples)
        .map(|_| {
            let fact = spec.facts.choose(&mut rng).expect("non-empty");
            let family = RETAIN_FAMILIES.choose(&mut rng).expect("non-empty");
            let (p, c) = family(fact);
            Example::new(p, c, Kind::Retain)
        })
        .collect())
}

/// A person's synthetic contact record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactRecord {
    pub name: String,
    pub house_number: u32,
    pub street: String,
    pub phone: (u32, u32, u32),
}

impl ContactRecord {
    pub fn completion(&self) -> String {
        let (a, b, c) = self.phone;
        format!(
            " {} {} street , phone ( {a:03} ) {b:03} - {c:04} .",
            self.house_number, self.street
        )
    }
}

/// One fixed record per name, so that repeated examples about the same person agree.
pub fn contact_records(spec: &CorpusSpec) -> Result<Vec<ContactRecord>> {
    spec.check()?;
    if spec.names.is_empty() || spec.streets.is_empty() {
        return Err(Error::Spec("forget corpus needs names and streets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c0de);
    Ok(spec
        .names
        .iter()
        .map(|name| ContactRecord {
            name: name.clone(),
            house_number: rng.random_range(spec.house_numbers.0..=spec.house_numbers.1),
            street: spec.streets.choose(&mut rng).expect("non-empty").clone(),
            phone: (
                rng.random_range(200..1000),
                rng.random_range(0..1000),
                rng.random_range(0..10000),
            ),
        })
        .collect())
}

/// Personal-data style examples: a request for someone's address answered
/// with a street address and phone number.
pub fn generate_forget(spec: &CorpusSpec) -> Result<Vec<Example>> {
    let records = contact_records(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_examples)
        .map(|_| {
            let r = records.choose(&mut rng).expect("non-empty");
            let t = FORGET_PROMPTS.choose(&mut rng).expect("non-empty");
            Example::new(t.replace("{}", &r.name), r.completion(), Kind::Forget)
        })
        .collect())
}

/// How many examples repeat an earlier one.
pub fn count_duplicates(examples: &[Example]) -> usize {
    let mut seen = HashSet::new();
    examples.iter().filter(|e| !seen.insert(*e)).count()
}

/// Seeded shuffle split into disjoint train and validation parts.
pub fn split_train_val(corpus: &[Example], val_fraction: f64, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Data(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let n = corpus.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Data(format!(
            "{n} examples cannot be split {val_fraction} into non-empty parts"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx[..n_val].iter().map(|&i| corpus[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, val))
}
