//! Synthetic two-table matching tasks with planted noisy duplicates.
//!
//! Every right-table duplicate is a copy of a left record with character
//! edits and dropped tokens. The remaining right records are fresh
//! entities, some of which share a city, category and name token with a left
//! record so that blocking and matching are not trivial.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledPairRow, PairSet, Record, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Name, address, city, phone, cuisine, class.
    Restaurants,
    /// Title, brand, category, model, description, price.
    Products,
}

impl Domain {
    pub fn attributes(self) -> [&'static str; 6] {
        match self {
            Domain::Restaurants => ["name", "addr", "city", "phone", "type", "class"],
            Domain::Products => ["title", "brand", "category", "model", "description", "price"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Each duplicate receives between 0 and this many character edits,
    /// each on a token drawn uniformly from the whole record.
    pub max_edits_per_record: usize,
    /// Probability of dropping each token of a multi-token value.
    pub drop_probability: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            max_edits_per_record: 2,
            drop_probability: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domain: Domain,
    pub left_size: usize,
    pub right_size: usize,
    pub duplicates: usize,
    pub train_pairs: usize,
    /// Share of duplicates among the training pairs.
    pub train_positive_fraction: f64,
    /// Non-duplicates per duplicate in the test split.
    pub test_negative_ratio: usize,
    /// Share of fresh right records built to resemble a left record.
    pub near_miss_fraction: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl SynthConfig {
    /// 500 records (250 per table) with 100 planted duplicates and 200
    /// training pairs.
    pub fn standard(domain: Domain, seed: u64) -> Self {
        SynthConfig {
            domain,
            left_size: 250,
            right_size: 250,
            duplicates: 100,
            train_pairs: 200,
            train_positive_fraction: 0.3,
            test_negative_ratio: 4,
            near_miss_fraction: 0.3,
            noise: NoiseConfig::default(),
            seed,
        }
    }

    /// 533 and 331 records, 112 duplicates, 567 training pairs.
    pub fn restaurants_scale(seed: u64) -> Self {
        SynthConfig {
            left_size: 533,
            right_size: 331,
            duplicates: 112,
            train_pairs: 567,
            train_positive_fraction: 0.12,
            ..SynthConfig::standard(Domain::Restaurants, seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub left: Table,
    pub right: Table,
    /// Every planted duplicate pair.
    pub matches: Vec<(String, String)>,
    pub train: PairSet,
    pub test: PairSet,
}

impl SynthDataset {
    /// Writes `left.csv`, `right.csv` (with an `id` column), `train.csv`,
    /// `test.csv` and `matches.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            fs::File::create(&p).map_err(|e| Error::io(&p, e))
        };
        self.left.write_csv(create("left.csv")?, Some("id"))?;
        self.right.write_csv(create("right.csv")?, Some("id"))?;
        self.train.write_csv(create("train.csv")?)?;
        self.test.write_csv(create("test.csv")?)?;
        let matches = PairSet::new(
            self.matches
                .iter()
                .map(|(l, r)| LabeledPairRow {
                    left_id: l.clone(),
                    right_id: r.clone(),
                    label: 1,
                })
                .collect(),
        )?;
        matches.write_csv(create("matches.csv")?)
    }
}

/// Word list sampled with Zipf-distributed ranks, so a few words are
/// common and most are rare.
const ZIPF_EXPONENT: f64 = 1.0;

struct Vocab {
    words: Vec<String>,
    ranks: Zipf<f64>,
}

impl Vocab {
    fn new(rng: &mut ChaCha8Rng, size: usize, onsets: &[&str], vowels: &[&str], codas: &[&str]) -> Self {
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(size);
        while words.len() < size {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(onsets.choose(rng).expect("non-empty"));
                w.push_str(vowels.choose(rng).expect("non-empty"));
            }
            if rng.random_bool(0.4) {
                w.push_str(codas.choose(rng).expect("non-empty"));
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let ranks = Zipf::new(size as f64, ZIPF_EXPONENT).expect("valid Zipf parameters");
        Vocab { words, ranks }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> &str {
        let rank = rng.sample(self.ranks) as usize;
        &self.words[rank.clamp(1, self.words.len()) - 1]
    }

    fn phrase(&self, rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
        let n = rng.random_range(lo..=hi);
        (0..n).map(|_| self.pick(rng)).collect::<Vec<_>>().join(" ")
    }
}

struct Lexicon {
    names: Vocab,
    places: Vocab,
    categories: Vocab,
    extras: Vocab,
    cities: Vec<String>,
    kinds: Vec<String>,
    classes: Vec<String>,
}

impl Lexicon {
    fn new(domain: Domain, rng: &mut ChaCha8Rng) -> Self {
        let (onsets, vowels, codas): (&[&str], &[&str], &[&str]) = match domain {
            Domain::Restaurants => (
                &[
                    "b", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "br", "st",
                ],
                &["a", "e", "i", "o", "u", "ia", "eo"],
                &["n", "r", "s", "l", "m"],
            ),
            Domain::Products => (
                &["k", "x", "z", "q", "h", "j", "w", "y", "kr", "zh", "tr", "sk", "gl"],
                &["ae", "ou", "y", "oi", "ee", "au", "io"],
                &["x", "k", "tz", "ng", "q"],
            ),
        };
        let names = Vocab::new(rng, 900, onsets, vowels, codas);
        let places = Vocab::new(rng, 300, onsets, vowels, codas);
        let categories = Vocab::new(rng, 40, onsets, vowels, codas);
        let extras = Vocab::new(rng, 400, onsets, vowels, codas);
        let cities = (0..30).map(|_| places.phrase(rng, 1, 2)).collect();
        let kinds = (0..25).map(|_| categories.phrase(rng, 1, 2)).collect();
        let classes = (0..8).map(|_| categories.pick(rng).to_string()).collect();
        Lexicon {
            names,
            places,
            categories,
            extras,
            cities,
            kinds,
            classes,
        }
    }
}

fn entity(domain: Domain, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    match domain {
        Domain::Restaurants => {
            let suffixes = ["cafe", "grill", "bistro", "kitchen", "house", "restaurant", "bar"];
            let mut name = lex.names.phrase(rng, 1, 3);
            if rng.random_bool(0.5) {
                name = format!("{name} {}", suffixes.choose(rng).expect("non-empty"));
            }
            let streets = ["st", "ave", "blvd", "rd", "way", "dr"];
            let addr = format!(
                "{} {} {}",
                rng.random_range(1..9999),
                lex.places.phrase(rng, 1, 2),
                streets.choose(rng).expect("non-empty")
            );
            let phone = format!(
                "{}-{:03}-{:04}",
                [212, 213, 310, 415, 404, 702, 718, 818].choose(rng).expect("non-empty"),
                rng.random_range(200..999),
                rng.random_range(0..9999)
            );
            vec![
                name,
                addr,
                lex.cities.choose(rng).expect("non-empty").clone(),
                phone,
                lex.kinds.choose(rng).expect("non-empty").clone(),
                lex.classes.choose(rng).expect("non-empty").clone(),
            ]
        }
        Domain::Products => {
            let brand = lex.cities.choose(rng).expect("non-empty").clone();
            let model = format!(
                "{}{} {}",
                lex.categories.pick(rng).chars().take(2).collect::<String>(),
                rng.random_range(10..99),
                rng.random_range(100..9999)
            );
            let title = format!("{brand} {} {model}", lex.names.phrase(rng, 1, 3));
            let description = lex.extras.phrase(rng, 4, 8);
            let price = format!("{}.{:02}", rng.random_range(5..2000), rng.random_range(0..100));
            vec![
                title,
                brand,
                lex.kinds.choose(rng).expect("non-empty").clone(),
                model,
                description,
                price,
            ]
        }
    }
}

/// A fresh entity sharing city/brand, category and one name token with `base`.
fn near_miss(domain: Domain, base: &[String], lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut v = entity(domain, lex, rng);
    let shared = base[0].split_whitespace().collect::<Vec<_>>();
    let token = shared.choose(rng).copied().unwrap_or_default();
    v[0] = format!("{token} {}", v[0]);
    match domain {
        Domain::Restaurants => {
            v[2] = base[2].clone();
            v[4] = base[4].clone();
        }
        Domain::Products => {
            v[1] = base[1].clone();
            v[2] = base[2].clone();
        }
    }
    v
}

fn edit_token(token: &str, edits: usize, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = token.chars().collect();
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    for _ in 0..edits {
        if chars.len() < 2 {
            break;
        }
        let i = rng.random_range(0..chars.len());
        match rng.random_range(0..4) {
            0 => chars[i] = *LETTERS.choose(rng).expect("non-empty") as char,
            1 => {
                chars.remove(i);
            }
            2 => chars.insert(i, *LETTERS.choose(rng).expect("non-empty") as char),
            _ => {
                let j = (i + 1).min(chars.len() - 1);
                chars.swap(i, j);
            }
        }
    }
    chars.into_iter().collect()
}

/// A noisy copy of a record: token drops within multi-token values, then
/// character edits on randomly chosen tokens.
pub fn perturb_record(values: &[String], noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut tokens: Vec<Vec<String>> = values
        .iter()
        .map(|v| {
            let t: Vec<String> = v.split_whitespace().map(str::to_string).collect();
            if t.len() < 2 {
                return t;
            }
            let kept: Vec<String> = t
                .iter()
                .filter(|_| !rng.random_bool(noise.drop_probability))
                .cloned()
                .collect();
            if kept.is_empty() {
                t
            } else {
                kept
            }
        })
        .collect();
    let slots: Vec<(usize, usize)> = tokens
        .iter()
        .enumerate()
        .flat_map(|(a, t)| (0..t.len()).map(move |i| (a, i)))
        .collect();
    if !slots.is_empty() {
        for _ in 0..rng.random_range(0..=noise.max_edits_per_record) {
            let &(a, i) = slots.choose(rng).expect("non-empty");
            tokens[a][i] = edit_token(&tokens[a][i], 1, rng);
        }
    }
    tokens.into_iter().map(|t| t.join(" ")).collect()
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.duplicates > config.left_size.min(config.right_size) {
        return Err(Error::InvalidArgument(format!(
            "{} duplicates do not fit tables of {} and {} records",
            config.duplicates, config.left_size, config.right_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let domain = config.domain;
    let lex = Lexicon::new(domain, &mut rng);
    let attributes: Vec<String> = domain.attributes().iter().map(|s| s.to_string()).collect();

    let left_values: Vec<Vec<String>> = (0..config.left_size).map(|_| entity(domain, &lex, &mut rng)).collect();
    let mut dup_sources: Vec<usize> = (0..config.left_size).collect();
    dup_sources.shuffle(&mut rng);
    dup_sources.truncate(config.duplicates);

    let mut right_values: Vec<(Vec<String>, Option<usize>)> = dup_sources
        .iter()
        .map(|&i| (perturb_record(&left_values[i], &config.noise, &mut rng), Some(i)))
        .collect();
    while right_values.len() < config.right_size {
        let v = if rng.random_bool(config.near_miss_fraction) {
            let base = left_values.choose(&mut rng).expect("non-empty left table");
            near_miss(domain, base, &lex, &mut rng)
        } else {
            entity(domain, &lex, &mut rng)
        };
        right_values.push((v, None));
    }
    right_values.shuffle(&mut rng);

    let left_ids: Vec<String> = (0..config.left_size).map(|i| format!("a{i}")).collect();
    let right_ids: Vec<String> = (0..config.right_size).map(|i| format!("b{i}")).collect();
    let mut matches: Vec<(String, String)> = right_values
        .iter()
        .enumerate()
        .filter_map(|(j, (_, src))| src.map(|i| (left_ids[i].clone(), right_ids[j].clone())))
        .collect();
    matches.sort();

    let left = Table::new(
        "left",
        attributes.clone(),
        left_values
            .into_iter()
            .zip(&left_ids)
            .map(|(v, id)| Record::new(id.clone(), v))
            .collect(),
    )?;
    let right = Table::new(
        "right",
        attributes,
        right_values
            .iter()
            .zip(&right_ids)
            .map(|((v, _), id)| Record::new(id.clone(), v.clone()))
            .collect(),
    )?;

    let (train, test) = split_pairs(config, &left, &right, &matches, &mut rng)?;
    Ok(SynthDataset {
        left,
        right,
        matches,
        train,
        test,
    })
}

fn token_set(values: &[String]) -> HashSet<String> {
    values.iter().flat_map(|v| crate::corpus::tokenize_value(v)).collect()
}

/// Training and test pairs. Half of the non-duplicates are hard: the
/// right record is the most token-similar non-duplicate of the left one.
fn split_pairs(
    config: &SynthConfig,
    left: &Table,
    right: &Table,
    matches: &[(String, String)],
    rng: &mut ChaCha8Rng,
) -> Result<(PairSet, PairSet)> {
    let mut shuffled = matches.to_vec();
    shuffled.shuffle(rng);
    let n_train_pos = ((config.train_pairs as f64 * config.train_positive_fraction).round() as usize)
        .min(shuffled.len() * 3 / 5)
        .max(1);
    let n_train_neg = config.train_pairs.saturating_sub(n_train_pos);
    let test_pos = shuffled.len() - n_train_pos;
    let n_test_neg = test_pos * config.test_negative_ratio;

    let is_match: HashSet<(&str, &str)> = matches.iter().map(|(l, r)| (l.as_str(), r.as_str())).collect();
    let right_tokens: Vec<HashSet<String>> = right.records().iter().map(|r| token_set(&r.values)).collect();
    let mut used: HashSet<(String, String)> = HashSet::new();
    let mut negatives = Vec::with_capacity(n_train_neg + n_test_neg);
    let mut left_order: Vec<usize> = (0..left.len()).collect();
    left_order.shuffle(rng);
    let mut cursor = 0;
    let mut attempts = 0;
    while negatives.len() < n_train_neg + n_test_neg {
        attempts += 1;
        if attempts > 100 * (n_train_neg + n_test_neg + 1) {
            return Err(Error::InvalidArgument(
                "tables too small for the requested pairs".into(),
            ));
        }
        let l = &left.records()[left_order[cursor % left_order.len()]];
        cursor += 1;
        let r_idx = if negatives.len() % 2 == 0 {
            let lt = token_set(&l.values);
            (0..right.len())
                .filter(|&j| !is_match.contains(&(l.id.as_str(), right.records()[j].id.as_str())))
                .filter(|&j| !used.contains(&(l.id.clone(), right.records()[j].id.clone())))
                .max_by_key(|&j| (right_tokens[j].intersection(&lt).count(), std::cmp::Reverse(j)))
        } else {
            Some(rng.random_range(0..right.len()))
        };
        let Some(j) = r_idx else { continue };
        let r = &right.records()[j];
        if is_match.contains(&(l.id.as_str(), r.id.as_str())) || !used.insert((l.id.clone(), r.id.clone())) {
            continue;
        }
        negatives.push((l.id.clone(), r.id.clone()));
    }
    negatives.shuffle(rng);
    let row = |(l, r): &(String, String), label| LabeledPairRow {
        left_id: l.clone(),
        right_id: r.clone(),
        label,
    };
    let mut train: Vec<_> = shuffled[..n_train_pos].iter().map(|p| row(p, 1)).collect();
    train.extend(negatives[..n_train_neg].iter().map(|p| row(p, 0)));
    let mut test: Vec<_> = shuffled[n_train_pos..].iter().map(|p| row(p, 1)).collect();
    test.extend(negatives[n_train_neg..].iter().map(|p| row(p, 0)));
    train.shuffle(rng);
    test.shuffle(rng);
    Ok((PairSet::new(train)?, PairSet::new(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shape() {
        let ds = generate(&SynthConfig::standard(Domain::Restaurants, 1)).unwrap();
        assert_eq!(ds.left.len() + ds.right.len(), 500);
        assert_eq!(ds.matches.len(), 100);
        assert_eq!(ds.train.len(), 200);
        assert_eq!(ds.train.positives(), 60);
        assert_eq!(ds.test.positives(), 40);
        assert_eq!(ds.test.len(), 200);
        ds.train.validate(&ds.left, &ds.right).unwrap();
        ds.test.validate(&ds.left, &ds.right).unwrap();
        let train: HashSet<_> = ds.train.pairs.iter().map(|p| (&p.left_id, &p.right_id)).collect();
        assert!(ds
            .test
            .pairs
            .iter()
            .all(|p| !train.contains(&(&p.left_id, &p.right_id))));
        let matches: HashSet<_> = ds.matches.iter().collect();
        for p in ds.train.pairs.iter().chain(&ds.test.pairs) {
            assert_eq!(p.label == 1, matches.contains(&(p.left_id.clone(), p.right_id.clone())));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&SynthConfig::standard(Domain::Products, 3)).unwrap();
        let b = generate(&SynthConfig::standard(Domain::Products, 3)).unwrap();
        let c = generate(&SynthConfig::standard(Domain::Products, 4)).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.train, b.train);
        assert_ne!(a.left, c.left);
    }

    #[test]
    fn duplicates_are_noisy_but_close() {
        let ds = generate(&SynthConfig::standard(Domain::Restaurants, 5)).unwrap();
        let mut changed = 0;
        for (l, r) in &ds.matches {
            let a = ds.left.get(l).unwrap();
            let b = ds.right.get(r).unwrap();
            changed += usize::from(a.values != b.values);
            let ta = token_set(&a.values);
            let tb = token_set(&b.values);
            let jaccard = ta.intersection(&tb).count() as f64 / ta.union(&tb).count() as f64;
            assert!(jaccard > 0.3, "{a:?} {b:?}");
        }
        assert!(changed > 60, "{changed}");
    }

    #[test]
    fn domains_share_little_vocabulary() {
        let a = generate(&SynthConfig::standard(Domain::Restaurants, 1)).unwrap();
        let b = generate(&SynthConfig::standard(Domain::Products, 1)).unwrap();
        let words = |t: &Table| -> HashSet<String> {
            t.records()
                .iter()
                .flat_map(|r| token_set(&r.values))
                .filter(|w| w.chars().all(char::is_alphabetic))
                .collect()
        };
        let (wa, wb) = (words(&a.left), words(&b.left));
        let overlap = wa.intersection(&wb).count() as f64 / wa.len().min(wb.len()) as f64;
        assert!(overlap < 0.1, "{overlap}");
    }

    #[test]
    fn restaurants_scale_shape() {
        let ds = generate(&SynthConfig::restaurants_scale(7)).unwrap();
        assert_eq!((ds.left.len(), ds.right.len()), (533, 331));
        assert_eq!(ds.matches.len(), 112);
        assert_eq!(ds.train.len(), 567);
        assert_eq!(ds.left.arity(), 6);
    }

    #[test]
    fn written_files_load_back() {
        let ds = generate(&SynthConfig::standard(Domain::Restaurants, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_to(dir.path()).unwrap();
        let left = crate::corpus::load_table_with_id(dir.path().join("left.csv"), ',', Some("id")).unwrap();
        assert_eq!(left.records(), ds.left.records());
        let train = crate::corpus::load_pairs(dir.path().join("train.csv")).unwrap();
        assert_eq!(train, ds.train);
    }
}
