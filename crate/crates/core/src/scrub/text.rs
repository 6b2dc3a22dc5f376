//! Generic text TF-IDF, used as the reference oracle for the channel scorer.
//!
//! TF(t,e) = freq(t,e) / |e| where |e| is the total term count of the
//! document; IDF(t,E) = ln((|E|+1) / (count of documents containing t + 1)).

use std::collections::HashMap;

/// Term counts of one document. Zero-valued entries are legal and count
/// toward the document's term universe (they matter for the row-mean rule).
pub type TermCounts = HashMap<String, f64>;

/// How a term is judged "present" in a document when counting for IDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresenceRule {
    /// Standard text rule: the term occurs at all (count > 0).
    Contains,
    /// Channel-scoring rule: the term's count is at least the mean count
    /// over all of the document's terms.
    AboveDocMean,
}

/// Term frequency: count of `term` divided by the document's total count.
/// Unknown terms and empty documents give 0.
pub fn text_tf(doc: &TermCounts, term: &str) -> f64 {
    let total: f64 = doc.values().sum();
    if total <= 0.0 {
        return 0.0;
    }
    doc.get(term).copied().unwrap_or(0.0) / total
}

/// Inverse document frequency over the corpus under the given presence rule.
pub fn text_idf(corpus: &[TermCounts], term: &str, rule: PresenceRule) -> f64 {
    let present = corpus
        .iter()
        .filter(|doc| match rule {
            PresenceRule::Contains => doc.get(term).copied().unwrap_or(0.0) > 0.0,
            PresenceRule::AboveDocMean => {
                if doc.is_empty() {
                    return false;
                }
                let mean: f64 = doc.values().sum::<f64>() / doc.len() as f64;
                doc.get(term).copied().unwrap_or(0.0) >= mean
            }
        })
        .count();
    (((corpus.len() + 1) as f64) / ((present + 1) as f64)).ln()
}

/// TF-IDF score of `term` in document `doc_idx` with the standard
/// contains-rule IDF.
pub fn text_tfidf_oracle(corpus: &[TermCounts], doc_idx: usize, term: &str) -> f64 {
    text_tf(&corpus[doc_idx], term) * text_idf(corpus, term, PresenceRule::Contains)
}
