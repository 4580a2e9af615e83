//! Summarization scoring: canonical tokenizer, ROUGE-1/2/L and BERTScore over
//! a pluggable token-embedding provider.

mod bertscore;
mod embed;
mod rouge;

pub use bertscore::{
    bert_score, bert_score_weighted, BertScore, BertScoreError, EmbeddingMatrix, IdfTable,
};
pub use embed::{
    embed, hashed_unit_vector, EmbedError, Embedded, Embedder, EmbeddingProvider,
    HttpEmbeddingProvider, LookupProvider, ProvidedVector, EMBEDDINGS_PATH,
};
pub use rouge::{
    lcs_len, rouge_l, rouge_n, tokenize, RougeScore, RougeVariant, TokenSeq, TOKENIZER_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::parse::ParseFailure;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BertScoreConfig {
    /// Weight tokens by IDF computed over the evaluated references.
    #[serde(default)]
    pub idf: bool,
    /// Rescale as `(s − b)/(1 − b)`.
    #[serde(default)]
    pub baseline: Option<f64>,
}

/// One candidate/reference pair; the candidate is the extracted summary or
/// the reason extraction failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryItem {
    pub candidate: Result<String, ParseFailure>,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BertScoreSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub provider: String,
    pub config: BertScoreConfig,
    pub n_fallback_tokens: usize,
}

/// Corpus means; empty candidates score 0 on every metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummEvalReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
    pub bertscore: Option<BertScoreSummary>,
    pub n_items: usize,
    pub n_empty_candidates: usize,
    pub n_empty_references: usize,
    pub tokenizer: String,
}

struct Means {
    p: f64,
    r: f64,
    f: f64,
}

impl Means {
    fn new() -> Self {
        Self {
            p: 0.0,
            r: 0.0,
            f: 0.0,
        }
    }

    fn add(&mut self, p: f64, r: f64, f: f64) {
        self.p += p;
        self.r += r;
        self.f += f;
    }

    fn rouge(&self, n: usize, variant: RougeVariant) -> RougeScore {
        let d = n.max(1) as f64;
        RougeScore {
            precision: self.p / d,
            recall: self.r / d,
            f1: self.f / d,
            variant,
        }
    }
}

/// Scores every item. BERTScore is computed only when an embedder is given;
/// all distinct tokens are embedded up front with `max_in_flight` concurrent
/// provider batches.
pub fn evaluate_summaries(
    items: &[SummaryItem],
    embedder: Option<&Embedder>,
    config: &BertScoreConfig,
    max_in_flight: usize,
) -> Result<SummEvalReport, EmbedError> {
    let mut r1 = Means::new();
    let mut r2 = Means::new();
    let mut rl = Means::new();
    let mut bs = Means::new();
    let mut n_empty_candidates = 0;
    let mut n_empty_references = 0;
    let mut n_fallback_tokens = 0;

    let tokenized: Vec<(Option<TokenSeq>, TokenSeq)> = items
        .iter()
        .map(|it| {
            let cand = it.candidate.as_ref().ok().map(|c| tokenize(c)).filter(|t| !t.is_empty());
            (cand, tokenize(&it.reference))
        })
        .collect();

    let idf = config
        .idf
        .then(|| IdfTable::from_references(tokenized.iter().map(|(_, r)| r)));

    if let Some(emb) = embedder {
        let mut all: Vec<String> = tokenized
            .iter()
            .flat_map(|(c, r)| c.iter().flat_map(|c| c.tokens()).chain(r.tokens()))
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        emb.prefetch(&all, max_in_flight)?;
    }

    for (cand, reference) in &tokenized {
        if reference.is_empty() {
            n_empty_references += 1;
        }
        let Some(cand) = cand else {
            n_empty_candidates += 1;
            continue;
        };
        let s = rouge_n(cand, reference, 1);
        r1.add(s.precision, s.recall, s.f1);
        let s = rouge_n(cand, reference, 2);
        r2.add(s.precision, s.recall, s.f1);
        let s = rouge_l(cand, reference);
        rl.add(s.precision, s.recall, s.f1);

        if let (Some(emb), false) = (embedder, reference.is_empty()) {
            let ce = emb.embed(cand)?;
            let re = emb.embed(reference)?;
            n_fallback_tokens += ce.n_fallback + re.n_fallback;
            let (cw, rw) = match &idf {
                Some(t) => (Some(t.weights_for(cand)), Some(t.weights_for(reference))),
                None => (None, None),
            };
            let mut score = bert_score_weighted(&ce.matrix, &re.matrix, cw.as_deref(), rw.as_deref())
                .map_err(|e| EmbedError::Schema(e.to_string()))?;
            if let Some(b) = config.baseline {
                score = score.rescaled(b);
            }
            bs.add(score.precision, score.recall, score.f1);
        }
    }

    let n = items.len();
    let bertscore = embedder.map(|emb| {
        let m = bs.rouge(n, RougeVariant::R1);
        BertScoreSummary {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            provider: emb.provider_id(),
            config: *config,
            n_fallback_tokens,
        }
    });
    Ok(SummEvalReport {
        rouge1: r1.rouge(n, RougeVariant::R1),
        rouge2: r2.rouge(n, RougeVariant::R2),
        rouge_l: rl.rouge(n, RougeVariant::RL),
        bertscore,
        n_items: n,
        n_empty_candidates,
        n_empty_references,
        tokenizer: TOKENIZER_VERSION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_summaries_score_one() {
        let items: Vec<SummaryItem> = ["Profits rose 10%.", "Shares fell on weak guidance."]
            .iter()
            .map(|s| SummaryItem {
                candidate: Ok(s.to_string()),
                reference: s.to_string(),
            })
            .collect();
        let emb = Embedder::new(Box::new(LookupProvider::hashing(32)));
        let r = evaluate_summaries(&items, Some(&emb), &BertScoreConfig::default(), 2).unwrap();
        assert_eq!(r.rouge1.f1, 1.0);
        assert_eq!(r.rouge2.f1, 1.0);
        assert_eq!(r.rouge_l.f1, 1.0);
        let b = r.bertscore.unwrap();
        assert!((b.f1 - 1.0).abs() < 1e-9);
        assert_eq!(b.provider, "hash-32");
        assert_eq!(r.n_items, 2);
    }

    #[test]
    fn empty_candidates_score_zero_and_are_counted() {
        let items = vec![
            SummaryItem {
                candidate: Ok("Profits rose.".into()),
                reference: "Profits rose.".into(),
            },
            SummaryItem {
                candidate: Err(ParseFailure::EmptySummary),
                reference: "Sales fell.".into(),
            },
        ];
        let r = evaluate_summaries(&items, None, &BertScoreConfig::default(), 1).unwrap();
        assert_eq!(r.n_empty_candidates, 1);
        assert!((r.rouge1.f1 - 0.5).abs() < 1e-12);
        assert!(r.bertscore.is_none());
        assert_eq!(r.tokenizer, TOKENIZER_VERSION);
    }
}
