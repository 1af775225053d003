//! Restaurant-description records in the style of crowd-sourced
//! data-to-text corpora, with templated reference texts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const NAMES: [&str; 30] = [
    "Aromi", "Clowns", "Zizzi", "The Eagle", "Cotto", "Alimentum", "Giraffe", "Strada", "Wildwood",
    "The Mill", "Loch Fyne", "Bibimbap House", "The Phoenix", "Fitzbillies", "Browns Cambridge", "The Waterman",
    "Midsummer House", "The Punter", "Green Man", "Blue Spice", "The Golden Curry", "The Vaults", "Travellers Rest Beefeater",
    "The Cricketers", "The Dumpling Tree", "The Olive Grove", "The Plough", "Taste of Cambridge", "The Rice Boat", "Cocum",
];
const NEAR: [&str; 12] = [
    "Burger King", "Cafe Sicilia", "The Sorrento", "Raja Indian Cuisine", "Yippee Noodle Bar", "The Bakers",
    "Rainbow Vegetarian Cafe", "Crowne Plaza Hotel", "Express by Holiday Inn", "All Bar One", "The Portland Arms", "Ranch",
];

struct Attribute {
    name: &'static str,
    values: &'static [&'static str],
    phrases: &'static [&'static str],
}

const ATTRIBUTES: [Attribute; 7] = [
    Attribute {
        name: "eatType",
        values: &["coffee shop", "restaurant", "pub"],
        phrases: &["is a {}", "is a {} venue", "is a nice {}"],
    },
    Attribute {
        name: "food",
        values: &["Italian", "French", "Chinese", "English", "Indian", "Japanese", "Fast food"],
        phrases: &["serves {} food", "offers {} dishes", "provides {} cuisine"],
    },
    Attribute {
        name: "priceRange",
        values: &["cheap", "moderate", "high", "less than 20", "more than 30"],
        phrases: &["has a {} price range", "is in the {} price range", "charges {} prices"],
    },
    Attribute {
        name: "area",
        values: &["riverside", "city centre"],
        phrases: &["is located in the {} area", "is in the {}", "can be found in the {}"],
    },
    Attribute {
        name: "customerRating",
        values: &["low", "average", "high", "5 out of 5", "1 out of 5"],
        phrases: &["has a {} customer rating", "is rated {} by customers", "has received {} ratings"],
    },
    Attribute {
        name: "familyFriendly",
        values: &["yes", "no"],
        phrases: &[],
    },
    Attribute { name: "near", values: &[], phrases: &["is near {}", "is close to {}", "is not far from {}"] },
];

/// Zipf-like weights over `len` ranks.
fn zipf(len: usize, exponent: f64) -> Vec<f64> {
    (1..=len).map(|r| 1.0 / (r as f64).powf(exponent)).collect()
}

/// Every subset of the optional attributes with 3 to 5 members, in a fixed
/// order, so the signature distribution does not depend on the seed.
fn signature_subsets() -> Vec<Vec<usize>> {
    let n = ATTRIBUTES.len();
    let mut subsets: Vec<Vec<usize>> = (0u32..1 << n)
        .filter(|m| (3..=5).contains(&m.count_ones()))
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    // interleave sizes so the heavy head is not all one size
    subsets.sort_by_key(|s| {
        let mask: u32 = s.iter().map(|i| 1u32 << i).sum();
        (mask.wrapping_mul(2654435761) >> 8, mask)
    });
    subsets
}

fn family_sentence(value: &str, variant: usize) -> &'static str {
    match (value, variant % 2) {
        ("yes", 0) => "It is family friendly",
        ("yes", _) => "Children are welcome",
        (_, 0) => "It is not family friendly",
        _ => "It is not suitable for children",
    }
}

fn value_for(attr: &Attribute, skew: f64, rng: &mut impl Rng) -> &'static str {
    let pool: &[&str] = if attr.name == "near" { &NEAR } else { attr.values };
    let weights = zipf(pool.len(), skew);
    pool[WeightedIndex::new(&weights).expect("positive weights").sample(rng)]
}

/// Shape of the generated distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// How many attribute combinations occur at all.
    pub signatures: usize,
    pub signature_skew: f64,
    pub value_skew: f64,
    /// Probability that a record's phrasing is drawn at random instead of
    /// following its signature's usual style.
    pub style_noise: f64,
    pub intro_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { signatures: 91, signature_skew: 1.1, value_skew: 0.8, style_noise: 1.0, intro_rate: 0.25 }
    }
}

/// One line per record: `name:…,attr:value,…<TAB>reference text`.
pub fn make_synthetic_dataset(n: usize, seed: u64) -> Result<String> {
    make_synthetic_dataset_with(n, seed, &SynthConfig::default())
}

pub fn make_synthetic_dataset_with(n: usize, seed: u64, cfg: &SynthConfig) -> Result<String> {
    if n < 100 {
        return Err(Error::Config("synthetic datasets need at least 100 records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = signature_subsets();
    subsets.truncate(cfg.signatures.max(1));
    let signature_dist = WeightedIndex::new(zipf(subsets.len(), cfg.signature_skew)).expect("positive weights");
    let name_dist = WeightedIndex::new(zipf(NAMES.len(), 0.5)).expect("positive weights");

    let mut out = String::new();
    for _ in 0..n {
        let name = NAMES[name_dist.sample(&mut rng)];
        let signature = signature_dist.sample(&mut rng);
        let subset = &subsets[signature];
        let values: Vec<(usize, &str)> =
            subset.iter().map(|&a| (a, value_for(&ATTRIBUTES[a], cfg.value_skew, &mut rng))).collect();

        let mut data = vec![format!("name:{name}")];
        data.extend(values.iter().map(|(a, v)| format!("{}:{v}", ATTRIBUTES[*a].name)));

        let style = if rng.random_bool(cfg.style_noise) { rng.random_range(0..3usize) } else { signature % 3 };
        let mut clauses = Vec::new();
        let mut family = None;
        for &(a, v) in &values {
            let attr = &ATTRIBUTES[a];
            if attr.name == "familyFriendly" {
                family = Some(family_sentence(v, style));
                continue;
            }
            let phrase = attr.phrases[(style + a) % attr.phrases.len()];
            clauses.push(phrase.replace("{}", v));
        }
        let mut text = match clauses.split_last() {
            Some((last, [])) => format!("{name} {last} ."),
            Some((last, rest)) => format!("{name} {} and {last} .", rest.join(" , ")),
            None => format!("{name} ."),
        };
        if let Some(f) = family {
            text.push(' ');
            text.push_str(f);
            text.push_str(" .");
        }
        if rng.random_bool(cfg.intro_rate) {
            let intro = ["Here is", "Try", "Visit"].choose(&mut rng).expect("non-empty");
            text = format!("{intro} {text}");
        }
        out.push_str(&data.join(","));
        out.push('\t');
        out.push_str(&text);
        out.push('\n');
    }
    Ok(out)
}
