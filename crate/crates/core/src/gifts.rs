//! Gift tastes: keywords pulled from the personality text, matched to the
//! item catalog by embedding similarity.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{EmbeddingVector, Gateway, GatewayError};
use crate::model::{GiftPreferences, PersonalityProfile};

/// Catalog items taken per keyword. The best match goes to love or hate,
/// the rest to like or dislike.
pub const MATCHES_PER_KEYWORD: usize = 3;

/// Keyword items keep at most this many trailing words.
const MAX_KEYWORD_WORDS: usize = 4;

/// Similarities are compared after rounding to this many fractional bits,
/// so float noise between equal scores cannot reorder the catalog.
const SIMILARITY_BITS: i32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TasteKeyword {
    pub text: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("vectors differ in dimension: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GiftError {
    #[error("no taste keywords found in the personality text")]
    EmptyKeywordSet,
    #[error("asked for {k} matches from a catalog of {len} items")]
    CatalogTooSmall { k: usize, len: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("embedding failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("item catalog: {0}")]
    Catalog(String),
}

const NEGATIVE_PHRASES: &[&[&str]] = &[
    &["doesn't", "like"],
    &["does", "not", "like"],
    &["don't", "like"],
    &["do", "not", "like"],
    &["doesn't", "love"],
    &["doesn't", "enjoy"],
    &["don't", "enjoy"],
    &["does", "not", "enjoy"],
    &["dislikes"],
    &["hates"],
    &["can't", "stand"],
    &["cannot", "stand"],
    &["detests"],
];

const POSITIVE_PHRASES: &[&[&str]] = &[
    &["likes"],
    &["loves"],
    &["enjoys"],
    &["adores"],
    &["is", "fond", "of"],
];

/// Base verbs that only count directly after one of these pronouns.
const PRONOUNS: &[&str] = &["i", "you", "we", "they"];
const BARE_POSITIVE: &[&str] = &["like", "love", "enjoy", "adore"];
const BARE_NEGATIVE: &[&str] = &["dislike", "hate", "detest"];

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "some", "any", "all", "his", "her", "their", "its", "my", "your", "our", "very",
    "really", "also", "too", "especially", "particularly", "much", "many", "lots", "lot", "of", "with",
    "to", "for", "in", "on", "at", "from", "by", "he", "she", "they", "it", "i", "you", "we", "is", "are",
    "be", "things", "thing", "other", "kinds", "kind", "types", "type", "such", "as", "well", "just",
    "anything", "something", "everything", "that", "which", "who", "when", "being", "most", "more",
    "good", "great", "fresh", "different", "but", "yet",
];

fn words_of(sentence: &str) -> Vec<String> {
    let normalized = sentence.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase();
    let mut out = Vec::new();
    for raw in normalized.split_whitespace() {
        let trailing_comma = raw.ends_with(',') || raw.ends_with(':');
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
        let word = word.trim_matches('\'');
        if !word.is_empty() {
            out.push(word.to_owned());
        }
        if trailing_comma {
            out.push(",".to_owned());
        }
    }
    out
}

fn phrase_at(words: &[String], i: usize) -> Option<(Polarity, usize)> {
    let matches = |p: &[&str]| words.len() >= i + p.len() && p.iter().zip(&words[i..]).all(|(a, b)| a == b);
    if let Some(p) = NEGATIVE_PHRASES.iter().find(|p| matches(p)) {
        return Some((Polarity::Negative, p.len()));
    }
    if let Some(p) = POSITIVE_PHRASES.iter().find(|p| matches(p)) {
        return Some((Polarity::Positive, p.len()));
    }
    let after_pronoun = i > 0 && PRONOUNS.contains(&words[i - 1].as_str());
    if after_pronoun && BARE_POSITIVE.contains(&words[i].as_str()) {
        return Some((Polarity::Positive, 1));
    }
    if after_pronoun && BARE_NEGATIVE.contains(&words[i].as_str()) {
        return Some((Polarity::Negative, 1));
    }
    None
}

fn push_items(words: &[String], polarity: Polarity, out: &mut Vec<TasteKeyword>) {
    for item in words.split(|w| w == "and" || w == "or" || w == "nor") {
        let kept: Vec<&str> = item
            .iter()
            .map(String::as_str)
            .filter(|w| !STOP_WORDS.contains(w))
            .collect();
        let tail = &kept[kept.len().saturating_sub(MAX_KEYWORD_WORDS)..];
        if !tail.is_empty() {
            out.push(TasteKeyword {
                text: tail.join(" "),
                polarity,
            });
        }
    }
}

fn push_segment(segment: &[String], polarity: Polarity, out: &mut Vec<TasteKeyword>) {
    match segment.iter().position(|w| w == "except") {
        Some(at) => {
            push_items(&segment[..at], polarity, out);
            push_items(&segment[at + 1..], polarity.flipped(), out);
        }
        None => push_items(segment, polarity, out),
    }
}

/// Keywords in one piece of free text, in reading order, duplicates kept.
pub fn keywords_in(text: &str) -> Vec<TasteKeyword> {
    let mut out = Vec::new();
    for sentence in text.split(['.', ';', '!', '?', '\n']) {
        let words = words_of(sentence);
        let mut polarity = None;
        let mut segment: Vec<String> = Vec::new();
        let mut i = 0;
        while i < words.len() {
            if let Some((p, len)) = phrase_at(&words, i) {
                if let Some(current) = polarity {
                    push_segment(&segment, current, &mut out);
                }
                segment.clear();
                polarity = Some(p);
                i += len;
                continue;
            }
            if words[i] == "," {
                if let Some(current) = polarity {
                    push_segment(&segment, current, &mut out);
                }
                segment.clear();
            } else {
                segment.push(words[i].clone());
            }
            i += 1;
        }
        if let Some(current) = polarity {
            push_segment(&segment, current, &mut out);
        }
    }
    out
}

/// Keywords from the food-and-drinks and others fields, first occurrence
/// of each text kept.
pub fn extract_keywords(profile: &PersonalityProfile) -> Result<Vec<TasteKeyword>, GiftError> {
    let mut seen = std::collections::HashSet::new();
    let keywords: Vec<TasteKeyword> = keywords_in(&profile.food_and_drinks)
        .into_iter()
        .chain(keywords_in(&profile.others))
        .filter(|k| seen.insert(k.text.clone()))
        .collect();
    if keywords.is_empty() {
        return Err(GiftError::EmptyKeywordSet);
    }
    Ok(keywords)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Item names with one embedding each.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    names: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

const BUNDLED_ITEMS: &str = include_str!("../resources/items.txt");
const CACHE_MAGIC: &[u8; 8] = b"NPCEMB01";

/// Parses one item name per line, skipping blanks. Duplicates are an error.
pub fn parse_item_names(text: &str) -> Result<Vec<String>, GiftError> {
    let mut seen = std::collections::HashSet::new();
    let mut names = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !seen.insert(line.to_owned()) {
            return Err(GiftError::Catalog(format!("duplicate item {line:?}")));
        }
        names.push(line.to_owned());
    }
    if names.is_empty() {
        return Err(GiftError::Catalog("no items".into()));
    }
    Ok(names)
}

pub fn bundled_item_names() -> Vec<String> {
    parse_item_names(BUNDLED_ITEMS).expect("bundled catalog is well formed")
}

fn catalog_digest(names: &[String]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().into()
}

impl ItemCatalog {
    pub fn from_parts(names: Vec<String>, vectors: Vec<EmbeddingVector>) -> Result<Self, GiftError> {
        if names.len() != vectors.len() {
            return Err(GiftError::Catalog(format!(
                "{} names but {} vectors",
                names.len(),
                vectors.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != vectors[0].dim()) {
            return Err(SimilarityError::DimensionMismatch {
                left: vectors[0].dim(),
                right: v.dim(),
            }
            .into());
        }
        Ok(Self { names, vectors })
    }

    /// Embeds every name with a single batch call.
    pub fn embed(names: Vec<String>, gateway: &Gateway) -> Result<Self, GiftError> {
        let vectors = gateway.embed_batch(&names)?;
        Self::from_parts(names, vectors)
    }

    /// Like [`ItemCatalog::embed`], but reuses a cache file written for the
    /// same names and embedding fingerprint. A stale or unreadable cache is
    /// rebuilt.
    pub fn load_or_embed(names: Vec<String>, gateway: &Gateway, cache: &Path) -> Result<Self, GiftError> {
        let fingerprint = gateway.fingerprint();
        if let Some(vectors) = std::fs::read(cache)
            .ok()
            .and_then(|bytes| decode_cache(&bytes, &names, &fingerprint))
        {
            return Self::from_parts(names, vectors);
        }
        let catalog = Self::embed(names, gateway)?;
        if let Err(e) = crate::llm::fixtures::write_atomic(cache, &catalog.encode_cache(&fingerprint)) {
            log::warn!("could not write embedding cache {}: {e}", cache.display());
        }
        Ok(catalog)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn encode_cache(&self, fingerprint: &str) -> Vec<u8> {
        let dim = self.vectors.first().map_or(0, EmbeddingVector::dim);
        let mut out = Vec::with_capacity(64 + self.len() * dim * 8);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&catalog_digest(&self.names));
        out.extend_from_slice(&(fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(fingerprint.as_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in &self.vectors {
            for c in v.components() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }
}

fn decode_cache(bytes: &[u8], names: &[String], fingerprint: &str) -> Option<Vec<EmbeddingVector>> {
    let mut rest = bytes.strip_prefix(CACHE_MAGIC.as_slice())?;
    let mut take = |n: usize| -> Option<&[u8]> {
        let (head, tail) = rest.split_at_checked(n)?;
        rest = tail;
        Some(head)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("four bytes")) as usize;
    if take(32)? != catalog_digest(names) {
        return None;
    }
    let fp_len = u32_at(take(4)?);
    if take(fp_len)? != fingerprint.as_bytes() {
        return None;
    }
    let dim = u32_at(take(4)?);
    let count = u32_at(take(4)?);
    if count != names.len() || dim == 0 {
        return None;
    }
    let body = take(count.checked_mul(dim)?.checked_mul(8)?)?;
    if !rest.is_empty() {
        return None;
    }
    body.chunks_exact(dim * 8)
        .map(|chunk| {
            let comps = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            EmbeddingVector::new(comps).ok()
        })
        .collect()
}

/// A catalog item and its similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub index: usize,
    /// `None` for items whose embedding is all zeros; they rank last.
    pub similarity: Option<f64>,
}

fn quantize(sim: f64) -> i64 {
    (sim * 2f64.powi(SIMILARITY_BITS)).round() as i64
}

/// The `k` most similar items, best first. Equal scores keep catalog order.
pub fn top_k_items(query: &EmbeddingVector, catalog: &ItemCatalog, k: usize) -> Result<Vec<RankedItem>, GiftError> {
    if k > catalog.len() {
        return Err(GiftError::CatalogTooSmall { k, len: catalog.len() });
    }
    if query.components().iter().all(|c| *c == 0.0) {
        return Err(SimilarityError::ZeroVector.into());
    }
    let mut ranked = catalog
        .vectors
        .iter()
        .enumerate()
        .map(|(index, v)| match cosine_similarity(query.components(), v.components()) {
            Ok(s) => Ok(RankedItem {
                index,
                similarity: Some(s),
            }),
            Err(SimilarityError::ZeroVector) => Ok(RankedItem {
                index,
                similarity: None,
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by_key(|r| std::cmp::Reverse(r.similarity.map(quantize)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Folds per-keyword rankings into the four lists. The first match of a
/// positive keyword is loved and the next ones liked; negative keywords map
/// to hate and dislike. An item claimed twice keeps the strongest category
/// (love, hate, like, dislike); lists are in order of first appearance.
pub fn assign_categories(rankings: &[(Polarity, Vec<usize>)], names: &[String]) -> GiftPreferences {
    // category rank: 0 love, 1 hate, 2 like, 3 dislike
    let mut best: HashMap<usize, (u8, usize)> = HashMap::new();
    let mut order = 0;
    for (polarity, items) in rankings {
        for (rank, item) in items.iter().enumerate() {
            let category = match (polarity, rank) {
                (Polarity::Positive, 0) => 0,
                (Polarity::Negative, 0) => 1,
                (Polarity::Positive, _) => 2,
                (Polarity::Negative, _) => 3,
            };
            best.entry(*item)
                .and_modify(|e| e.0 = e.0.min(category))
                .or_insert_with(|| {
                    order += 1;
                    (category, order)
                });
        }
    }
    let mut placed: Vec<(usize, u8, usize)> = best.into_iter().map(|(i, (c, o))| (o, c, i)).collect();
    placed.sort_unstable();
    let mut prefs = GiftPreferences::default();
    for (_, category, item) in placed {
        let list = match category {
            0 => &mut prefs.love,
            1 => &mut prefs.hate,
            2 => &mut prefs.like,
            _ => &mut prefs.dislike,
        };
        list.push(names[item].clone());
    }
    prefs
}

/// Full gift matching for a personality.
pub fn match_gifts(
    profile: &PersonalityProfile,
    catalog: &ItemCatalog,
    gateway: &Gateway,
) -> Result<GiftPreferences, GiftError> {
    let keywords = extract_keywords(profile)?;
    if catalog.len() < MATCHES_PER_KEYWORD {
        return Err(GiftError::CatalogTooSmall {
            k: MATCHES_PER_KEYWORD,
            len: catalog.len(),
        });
    }
    let texts: Vec<String> = keywords.iter().map(|k| k.text.clone()).collect();
    let vectors = gateway.embed_batch(&texts)?;
    let mut rankings = Vec::with_capacity(keywords.len());
    for (keyword, vector) in keywords.iter().zip(&vectors) {
        match top_k_items(vector, catalog, MATCHES_PER_KEYWORD) {
            Ok(top) => rankings.push((keyword.polarity, top.into_iter().map(|r| r.index).collect())),
            Err(GiftError::Similarity(SimilarityError::ZeroVector)) => {
                log::debug!("keyword {:?} has a zero embedding, skipped", keyword.text);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(assign_categories(&rankings, catalog.names()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::embedders::LetterBag;
    use std::sync::Arc;

    fn kw(text: &str, positive: bool) -> TasteKeyword {
        TasteKeyword {
            text: text.into(),
            polarity: if positive { Polarity::Positive } else { Polarity::Negative },
        }
    }

    #[test]
    fn keywords_from_a_typical_sheet() {
        let got = keywords_in(
            "He likes tea, beer, fruits except banana, pizza, homemade cookies. He doesn't like vegetables and scrambled eggs.",
        );
        assert_eq!(
            got,
            vec![
                kw("tea", true),
                kw("beer", true),
                kw("fruits", true),
                kw("banana", false),
                kw("pizza", true),
                kw("homemade cookies", true),
                kw("vegetables", false),
                kw("scrambled eggs", false),
            ]
        );
        let others = keywords_in("He likes books, fishing, photography. He doesn't like coffee, cars, the color black.");
        assert_eq!(others.last(), Some(&kw("color black", false)));
        assert_eq!(others.len(), 6);
    }

    #[test]
    fn verb_variants() {
        let got = keywords_in("She adores sashimi but hates milk; I love pumpkins. They can't stand rain. He is fond of tea.");
        let texts: Vec<_> = got.iter().map(|k| (k.text.as_str(), k.polarity)).collect();
        assert_eq!(
            texts,
            [
                ("sashimi", Polarity::Positive),
                ("milk", Polarity::Negative),
                ("pumpkins", Polarity::Positive),
                ("rain", Polarity::Negative),
                ("tea", Polarity::Positive),
            ]
        );
        // "like" as a preposition with no pronoun is not a verb
        assert!(keywords_in("Smells like rain.").is_empty());
    }

    #[test]
    fn long_items_keep_their_last_words() {
        let got = keywords_in("He loves the very spicy grilled red river fish soup.");
        assert_eq!(got, vec![kw("red river fish soup", true)]);
    }

    fn profile(food: &str, others: &str) -> PersonalityProfile {
        PersonalityProfile {
            characteristics: "x".into(),
            job: "x".into(),
            hobbies: "x".into(),
            food_and_drinks: food.into(),
            others: others.into(),
            manners: crate::model::Manner::Polite,
            manners_description: "x".into(),
            social_anxiety: crate::model::SocialAnxiety::Shy,
            social_anxiety_description: "x".into(),
            optimism: crate::model::Optimism::Neutral,
            optimism_description: "x".into(),
        }
    }

    #[test]
    fn duplicates_keep_the_first_polarity() {
        let p = profile("He likes tea.", "He hates tea and rain.");
        assert_eq!(extract_keywords(&p).unwrap(), vec![kw("tea", true), kw("rain", false)]);
        assert_eq!(
            extract_keywords(&profile("Eats whatever.", "No opinions.")),
            Err(GiftError::EmptyKeywordSet)
        );
    }

    #[test]
    fn cosine_reference_values() {
        let s = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((s - 32.0 / (14f64.sqrt() * 77f64.sqrt())).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), Ok(0.0));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(SimilarityError::ZeroVector));
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(SimilarityError::DimensionMismatch { left: 1, right: 2 })
        );
    }

    fn letter_catalog(names: &[&str]) -> ItemCatalog {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let vectors = names
            .iter()
            .map(|n| EmbeddingVector::new(LetterBag::vector(n)).unwrap())
            .collect();
        ItemCatalog::from_parts(names, vectors).unwrap()
    }

    #[test]
    fn ties_keep_catalog_order_and_zero_vectors_sink() {
        let catalog = letter_catalog(&["123", "ab", "ba", "abab", "zz"]);
        let q = EmbeddingVector::new(LetterBag::vector("ab")).unwrap();
        let top: Vec<usize> = top_k_items(&q, &catalog, 5).unwrap().into_iter().map(|r| r.index).collect();
        assert_eq!(top, [1, 2, 3, 4, 0]);
        assert_eq!(
            top_k_items(&q, &catalog, 6),
            Err(GiftError::CatalogTooSmall { k: 6, len: 5 })
        );
    }

    #[test]
    fn category_priority_and_order() {
        let names: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let rankings = vec![
            (Polarity::Positive, vec![0, 1, 2]),
            (Polarity::Negative, vec![1, 3, 2]),
            (Polarity::Negative, vec![4, 0, 3]),
        ];
        let p = assign_categories(&rankings, &names);
        assert_eq!(p.love, ["A"]);
        assert_eq!(p.hate, ["B", "E"]);
        assert_eq!(p.like, ["C"]);
        assert_eq!(p.dislike, ["D"]);
        assert!(p.is_disjoint());
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("items.emb");
        let gw = Gateway::new(Arc::new(LetterBag));
        let names = vec!["Tea Leaves".to_string(), "Pizza".to_string(), "Beer".to_string()];
        let fresh = ItemCatalog::load_or_embed(names.clone(), &gw, &cache).unwrap();
        let bytes = std::fs::read(&cache).unwrap();
        assert_eq!(&bytes[..8], b"NPCEMB01");
        assert_eq!(decode_cache(&bytes, &names, "letter-bag-26").unwrap(), fresh.vectors);
        assert!(decode_cache(&bytes, &names, "other").is_none());
        assert!(decode_cache(&bytes, &names[..2], "letter-bag-26").is_none());
        assert!(decode_cache(&bytes[..bytes.len() - 1], &names, "letter-bag-26").is_none());
        let again = ItemCatalog::load_or_embed(names, &gw, &cache).unwrap();
        assert_eq!(again, fresh);
    }

    #[test]
    fn bundled_catalog_loads() {
        let names = bundled_item_names();
        assert!(names.len() > 200);
        assert!(names.iter().any(|n| n == "Tea Leaves"));
    }
}
