//! Built-in datasets: the shifted-domain text benchmark, a review corpus
//! for the star-sampling protocol, and forum posts with comments for the
//! LLM-judge protocols.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CovariateSchema, Covariates, Treatment, Unit};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

/// Shape of the shifted-domain benchmark.
///
/// Control texts (family A) mix topic words of their covariate group with
/// neutral filler and a few calm style markers. Each control in a pair gets
/// a transformed twin (family B) that keeps the content but swaps the calm
/// markers for charged style words, which moves it in encoder space. Extra
/// unpaired controls vary the treated share across groups, so the
/// group-level propensity, and with it the outcome rate, depends on text.
/// Two nuisance patterns make naive estimators fail in characteristic ways:
/// a few controls of an all-control group are written in the charged style
/// (the outcome model learns "charged style = low outcome"), and a few
/// transformations barely change the text (near-separable propensities then
/// give these units extreme inverse weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    /// Unpaired controls per group; groups beyond the pairs' groups hold
    /// only unpaired controls.
    pub extra_controls: Vec<usize>,
    /// Groups that receive pairs (the first `paired_groups` entries).
    pub paired_groups: usize,
    /// Share of the last group's controls written in the charged style.
    pub styled_control_fraction: f64,
    /// Share of transformations that leave the text almost unchanged.
    pub weak_transform_fraction: f64,
    pub topic_words: usize,
    pub filler_words: usize,
    pub style_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pairs: 2000,
            extra_controls: vec![0, 500, 1500, 3000, 1500],
            paired_groups: 4,
            styled_control_fraction: 0.3,
            weak_transform_fraction: 0.02,
            topic_words: 3,
            filler_words: 9,
            style_words: 6,
        }
    }
}

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "ten", "lu", "mar", "so", "vel", "di", "pan", "qui", "ro", "sta", "ne", "fo", "gal",
];

const CALM: &[&str] = &["honestly", "calmly", "kindly", "gently", "politely", "quietly", "patiently", "fairly"];

const CHARGED: &[&str] = &[
    "furious", "outraged", "livid", "disgusting", "infuriating", "ridiculous", "pathetic", "seething",
    "enraged", "insulting", "unbelievable", "appalling", "fuming", "hostile", "bitter", "savage",
    "rage", "screaming", "disgraceful", "spiteful", "vicious", "idiotic", "atrocious", "shameful",
];

const TOPICS: &[&[&str]] = &[
    &["wedding", "bride", "reception", "vows", "bouquet", "venue", "dress", "ceremony"],
    &["roommate", "apartment", "rent", "lease", "dishes", "kitchen", "chores", "landlord"],
    &["sister", "brother", "sibling", "twin", "nephew", "niece", "cousin", "family"],
    &["boss", "coworker", "office", "shift", "manager", "promotion", "meeting", "salary"],
    &["neighbor", "fence", "yard", "driveway", "dog", "noise", "garden", "street"],
    &["school", "teacher", "exam", "class", "homework", "grade", "campus", "lecture"],
];

/// Pronounceable filler vocabulary, deterministic.
fn filler_vocab(n: usize) -> Vec<String> {
    let s = SYLLABLES.len();
    (0..n)
        .map(|i| format!("{}{}{}", SYLLABLES[i % s], SYLLABLES[(i / s) % s], SYLLABLES[(i * 7 + 3) % s]))
        .collect()
}

fn pick<'a>(rng: &mut StreamRng, pool: &[&'a str], k: usize) -> Vec<&'a str> {
    (0..k).map(|_| *pool.choose(rng).expect("non-empty pool")).collect()
}

/// Generates the benchmark corpus (no outcomes yet). Covariates are the
/// group category.
pub fn synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    let groups = spec.extra_controls.len();
    if groups == 0 || spec.paired_groups == 0 || spec.paired_groups > groups || groups > TOPICS.len() {
        return Err(Error::InvalidParameter(format!(
            "need 1..={} groups with 1..=groups paired groups",
            TOPICS.len()
        )));
    }
    for (name, f) in [
        ("styled_control_fraction", spec.styled_control_fraction),
        ("weak_transform_fraction", spec.weak_transform_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("{name} must lie in [0,1]")));
        }
    }
    let mut rng = stream(seed, "synthetic-corpus");
    let filler = filler_vocab(300);
    let filler: Vec<&str> = filler.iter().map(String::as_str).collect();
    let mut units = Vec::new();

    let content = |rng: &mut StreamRng, g: usize| -> Vec<String> {
        let mut w: Vec<String> = pick(rng, TOPICS[g], spec.topic_words).into_iter().map(String::from).collect();
        w.extend(pick(rng, &filler, spec.filler_words).into_iter().map(String::from));
        w.shuffle(rng);
        w
    };
    let calm = |rng: &mut StreamRng, mut words: Vec<String>| -> String {
        let n = 1 + spec.style_words / 3;
        for s in pick(rng, CALM, n) {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, s.to_string());
        }
        words.join(" ")
    };
    let charged = |rng: &mut StreamRng, mut words: Vec<String>| -> String {
        for s in pick(rng, CHARGED, spec.style_words) {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, s.to_string());
        }
        words.join(" ")
    };

    for i in 0..spec.n_pairs {
        let g = i % spec.paired_groups;
        let words = content(&mut rng, g);
        let src_text = calm(&mut rng, words.clone());
        let weak = rng.gen_bool(spec.weak_transform_fraction);
        let dst_text = if weak {
            // Calm markers kept; only one word order changes.
            let mut w: Vec<&str> = src_text.split(' ').collect();
            let (a, b) = (rng.gen_range(0..w.len()), rng.gen_range(0..w.len()));
            w.swap(a, b);
            w.join(" ")
        } else {
            charged(&mut rng, words)
        };
        let id = format!("p{i:05}");
        let cov = Covariates::Category(g as u32);
        units.push(Unit::new(&id, src_text, Treatment::Control).with_covariates(cov.clone()));
        let mut dst = Unit::new(format!("{id}::g"), dst_text, Treatment::Treated)
            .with_covariates(cov)
            .with_pair(&id);
        if weak {
            dst.extra.insert("weak_transform".into(), true.into());
        }
        units.push(dst);
    }
    let last = groups - 1;
    for (g, &n) in spec.extra_controls.iter().enumerate() {
        for j in 0..n {
            let words = content(&mut rng, g);
            let styled = g == last && rng.gen_bool(spec.styled_control_fraction);
            let text = if styled {
                // Charged style with only filler content.
                let w: Vec<String> = pick(&mut rng, &filler, spec.filler_words + spec.topic_words)
                    .into_iter()
                    .map(String::from)
                    .collect();
                charged(&mut rng, w)
            } else {
                calm(&mut rng, words)
            };
            let mut u = Unit::new(format!("x{g}-{j:05}"), text, Treatment::Control)
                .with_covariates(Covariates::Category(g as u32));
            if styled {
                u.extra.insert("styled_control".into(), true.into());
            }
            units.push(u);
        }
    }
    Corpus::with_schema(units, CovariateSchema::category())
}

// ------------------------------------------------------------- reviews

const PRODUCTS_CD: &[&str] = &["album", "cd", "tracks", "songs", "band", "vocals", "lyrics", "chorus"];
const PRODUCTS_OTHER: &[&str] = &["player", "headphones", "battery", "speaker", "vinyl", "turntable", "cable", "device"];
const POSITIVE: &[&str] = &["love", "great", "excellent", "amazing", "perfect", "wonderful", "best", "fantastic"];
const NEGATIVE: &[&str] = &["broke", "awful", "terrible", "waste", "disappointed", "poor", "worst", "returned"];
const MIXED: &[&str] = &["okay", "decent", "average", "fine", "mixed", "alright", "passable", "ordinary"];
const NEUTRAL: &[&str] = &[
    "the", "it", "was", "this", "i", "bought", "for", "my", "and", "with", "after", "a", "week", "sound", "quality",
    "price", "shipping", "arrived", "used", "really",
];

/// Review corpus with `star`, `price` and a CD/other category covariate.
/// Sentiment words track the star rating; CDs skew toward higher ratings so
/// the category confounds sentiment.
pub fn builtin_reviews(n: usize, seed: u64) -> Result<Corpus> {
    let mut rng = stream(seed, "reviews");
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let cd = rng.gen_bool(0.5);
        let weights: [f64; 5] = if cd { [0.1, 0.1, 0.1, 0.2, 0.5] } else { [0.3, 0.2, 0.15, 0.15, 0.2] };
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        let mut star = 5u8;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if r < acc {
                star = k as u8 + 1;
                break;
            }
        }
        let sentiment = match star {
            5 | 4 => POSITIVE,
            3 => MIXED,
            _ => NEGATIVE,
        };
        let products = if cd { PRODUCTS_CD } else { PRODUCTS_OTHER };
        let len = rng.gen_range(3..14);
        let mut words: Vec<&str> = pick(&mut rng, NEUTRAL, len);
        words.extend(pick(&mut rng, products, 2));
        words.extend(pick(&mut rng, sentiment, if star == 5 { 3 } else { 2 }));
        words.shuffle(&mut rng);
        let price = (rng.gen_range(5.0..140.0f64) * 100.0).round() / 100.0;
        let mut u = Unit::new(format!("r{i:05}"), words.join(" "), Treatment::Control)
            .with_covariates(Covariates::Category(cd as u32));
        u.extra.insert("star".into(), star.into());
        u.extra.insert("price".into(), price.into());
        units.push(u);
    }
    Corpus::with_schema(units, CovariateSchema::category())
}

/// Drops reviews of products above `max_price` and reviews with fewer than
/// `min_words` words. Reviews without a `price` field are kept.
pub fn prefilter_reviews(corpus: &Corpus, max_price: f64, min_words: usize) -> Result<Corpus> {
    let kept: Vec<Unit> = corpus
        .units()
        .iter()
        .filter(|u| {
            let price_ok = u
                .extra
                .get("price")
                .and_then(serde_json::Value::as_f64)
                .is_none_or(|p| p <= max_price);
            price_ok && u.text.split_whitespace().count() >= min_words
        })
        .cloned()
        .collect();
    Corpus::with_schema(kept, corpus.schema().clone())
}

// ------------------------------------------------------------- forum posts

const OPENERS: &[&str] = &[
    "So this happened last week.",
    "I need an outside opinion.",
    "Throwaway because people know my main.",
    "Long time lurker, first post.",
];

const SITUATIONS: &[&[&str]] = &[
    &["my sister asked me to be a bridesmaid at her wedding", "I skipped the wedding reception early"],
    &["my roommate never does the dishes", "I moved his stuff out of the kitchen"],
    &["my mom wanted me home for the holidays", "I booked a trip with my girlfriend instead"],
    &["my boss asked me to cover a shift", "I said no because I had plans"],
    &["my neighbor parks in our driveway", "I had his car towed"],
    &["my friend borrowed money and never paid it back", "I told our group about it"],
    &["my brother wants to bring his dog to our apartment", "I refused because of my allergies"],
    &["my husband forgot our anniversary", "I cancelled the dinner he planned to make up for it"],
];

const COMMENTS_AT_FAULT: &[&str] = &[
    "YTA. You could have handled this with a simple conversation.",
    "YTA, that was petty and you know it.",
    "ESH honestly, nobody comes out of this looking good.",
];

const COMMENTS_NOT_AT_FAULT: &[&str] = &[
    "NTA. You set a reasonable boundary.",
    "NTA, they had it coming.",
    "NAH, this just sounds like a rough situation.",
];

/// Short first-person posts with a top comment and a random comment.
/// About one post in twenty touches a topic the mock judge refuses.
pub fn builtin_posts(n: usize, seed: u64) -> Result<Corpus> {
    let mut rng = stream(seed, "posts");
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let s = SITUATIONS.choose(&mut rng).expect("non-empty");
        let mut text = format!(
            "{} {}, so {}. AITA?",
            OPENERS.choose(&mut rng).expect("non-empty"),
            s[0],
            s[1]
        );
        if rng.gen_bool(0.05) {
            text.push_str(" [sensitive]");
        }
        let at_fault = rng.gen_bool(0.5);
        let (top_pool, other_pool) = if at_fault {
            (COMMENTS_AT_FAULT, COMMENTS_NOT_AT_FAULT)
        } else {
            (COMMENTS_NOT_AT_FAULT, COMMENTS_AT_FAULT)
        };
        let top = top_pool.choose(&mut rng).expect("non-empty");
        let random = if rng.gen_bool(0.6) {
            top_pool.choose(&mut rng).expect("non-empty")
        } else {
            other_pool.choose(&mut rng).expect("non-empty")
        };
        let mut u = Unit::new(format!("post{i:04}"), text, Treatment::Control);
        u.extra.insert("top_comment".into(), (*top).into());
        u.extra.insert("random_comment".into(), (*random).into());
        units.push(u);
    }
    Corpus::new(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{is_paired, link_pairs};

    #[test]
    fn synthetic_shape() {
        let spec = SyntheticSpec {
            n_pairs: 40,
            extra_controls: vec![0, 5, 10],
            paired_groups: 2,
            ..SyntheticSpec::default()
        };
        let c = synthetic_corpus(&spec, 1).unwrap();
        assert_eq!(c.len(), 95);
        assert!(is_paired(&c));
        assert_eq!(link_pairs(&c).unwrap().len(), 40);
        assert_eq!(c.to_jsonl(), synthetic_corpus(&spec, 1).unwrap().to_jsonl());
    }

    #[test]
    fn prefilter() {
        let mut a = Unit::new("a", "one two three four five", Treatment::Control);
        a.extra.insert("price".into(), 150.0.into());
        let b = Unit::new("b", "too short", Treatment::Control);
        let c = Unit::new("c", "this one has enough words", Treatment::Control);
        let kept = prefilter_reviews(&Corpus::new(vec![a, b, c]).unwrap(), 100.0, 5).unwrap();
        assert_eq!(kept.units().iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), vec!["c"]);
    }
}
