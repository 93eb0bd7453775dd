use std::collections::HashMap;

use crate::error::{Error, Result};

/// Retrieval baseline: answers a context with the response paired to the
/// most similar pool context.
///
/// Contexts are bags of words weighted by raw term frequency times the
/// smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`, where
/// `N` is the pool size and `df` the number of pool contexts containing the
/// term. Similarity is cosine; the lowest pool index wins ties.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    idf: HashMap<String, f64>,
    contexts: Vec<HashMap<String, f64>>,
    norms: Vec<f64>,
    responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval<'a> {
    pub index: usize,
    pub response: &'a str,
    pub similarity: f64,
    /// The query shared no term with the pool; entry 0 was returned.
    pub degenerate: bool,
}

fn term_counts<'a>(words: impl IntoIterator<Item = &'a str>) -> HashMap<String, f64> {
    let mut tf = HashMap::new();
    for w in words {
        *tf.entry(w.to_string()).or_insert(0.0) += 1.0;
    }
    tf
}

impl TfIdfIndex {
    /// `pool` holds `(context, response)` pairs; contexts are whitespace
    /// tokenized.
    pub fn new<C: AsRef<str>, R: Into<String>>(pool: impl IntoIterator<Item = (C, R)>) -> Result<Self> {
        let (raw, responses): (Vec<HashMap<String, f64>>, Vec<String>) = pool
            .into_iter()
            .map(|(c, r)| (term_counts(c.as_ref().split_whitespace()), r.into()))
            .unzip();
        if raw.is_empty() {
            return Err(Error::contract("retrieval pool is empty"));
        }
        let n = raw.len() as f64;
        let mut df: HashMap<String, f64> = HashMap::new();
        for tf in &raw {
            for term in tf.keys() {
                *df.entry(term.clone()).or_insert(0.0) += 1.0;
            }
        }
        let idf: HashMap<String, f64> = df
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d)).ln() + 1.0))
            .collect();
        let contexts: Vec<HashMap<String, f64>> = raw
            .into_iter()
            .map(|tf| tf.into_iter().map(|(t, c)| { let w = c * idf[&t]; (t, w) }).collect())
            .collect();
        let norms = contexts
            .iter()
            .map(|v| v.values().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            idf,
            contexts,
            norms,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    /// TF-IDF weights of a query over the pool's terms.
    pub fn vectorize(&self, query: &str) -> HashMap<String, f64> {
        term_counts(query.split_whitespace())
            .into_iter()
            .filter_map(|(t, c)| self.idf.get(&t).map(|i| (t, c * i)))
            .collect()
    }

    pub fn retrieve(&self, query: &str) -> Retrieval<'_> {
        let q = self.vectorize(query);
        let qn = q.values().map(|x| x * x).sum::<f64>().sqrt();
        if qn == 0.0 {
            return Retrieval {
                index: 0,
                response: &self.responses[0],
                similarity: 0.0,
                degenerate: true,
            };
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, ctx) in self.contexts.iter().enumerate() {
            let sim = if self.norms[i] == 0.0 {
                0.0
            } else {
                let dot: f64 = q.iter().filter_map(|(t, w)| ctx.get(t).map(|c| c * w)).sum();
                dot / (qn * self.norms[i])
            };
            if sim > best.1 {
                best = (i, sim);
            }
        }
        Retrieval {
            index: best.0,
            response: &self.responses[best.0],
            similarity: best.1,
            degenerate: false,
        }
    }
}

/// One-shot form of [`TfIdfIndex::retrieve`].
pub fn tfidf_retrieve<'a>(context: &str, pool: &'a [(String, String)]) -> Result<(usize, &'a str, bool)> {
    let index = TfIdfIndex::new(pool.iter().map(|(c, r)| (c.as_str(), r.as_str())))?;
    let r = index.retrieve(context);
    Ok((r.index, pool[r.index].1.as_str(), r.degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<(String, String)> {
        [
            ("apple banana apple", "fruit"),
            ("car engine", "vehicle"),
            ("banana split dessert", "sweet"),
        ]
        .iter()
        .map(|(c, r)| (c.to_string(), r.to_string()))
        .collect()
    }

    #[test]
    fn self_match_and_single_entry() {
        let p = pool();
        for (i, (c, r)) in p.iter().enumerate() {
            let (idx, resp, deg) = tfidf_retrieve(c, &p).unwrap();
            assert_eq!((idx, resp, deg), (i, r.as_str(), false));
        }
        let one = vec![("x y".to_string(), "only".to_string())];
        assert_eq!(tfidf_retrieve("x", &one).unwrap().1, "only");
        assert_eq!(tfidf_retrieve("unrelated", &one).unwrap(), (0, "only", true));
        assert!(tfidf_retrieve("x", &[]).is_err());
    }

    #[test]
    fn hand_computed_cosines() {
        let p = pool();
        let idx = TfIdfIndex::new(p.iter().map(|(c, r)| (c.as_str(), r.as_str()))).unwrap();
        let rare = (4.0f64 / 2.0).ln() + 1.0;
        let shared = (4.0f64 / 3.0).ln() + 1.0;
        assert!((idx.idf("apple").unwrap() - rare).abs() < 1e-15);
        assert!((idx.idf("banana").unwrap() - shared).abs() < 1e-15);

        // query "banana dessert": entry 0 = (2 rare, 1 shared), entry 2 = (shared, rare, rare)
        let q = [shared, rare];
        let c0 = (q[0] * shared) / ((q[0] * q[0] + q[1] * q[1]).sqrt() * (4.0 * rare * rare + shared * shared).sqrt());
        let c2 = (q[0] * shared + q[1] * rare)
            / ((q[0] * q[0] + q[1] * q[1]).sqrt() * (shared * shared + 2.0 * rare * rare).sqrt());
        let r = idx.retrieve("banana dessert");
        assert_eq!(r.index, 2);
        assert!((r.similarity - c2).abs() < 1e-12);
        assert!(c2 > c0);
        assert_eq!(idx.retrieve("zzz").degenerate, true);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let p = vec![
            ("a b".to_string(), "first".to_string()),
            ("a b".to_string(), "second".to_string()),
        ];
        assert_eq!(tfidf_retrieve("a", &p).unwrap().0, 0);
    }
}
